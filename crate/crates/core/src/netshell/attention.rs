use crate::error::{Error, Result};
use crate::nn::Matrix;

use super::weights::WeightStore;

/// Projections of one scaled dot-product attention layer (each `d x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttnWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl AttnWeights {
    pub fn identity(d: usize) -> Self {
        AttnWeights {
            wq: Matrix::identity(d),
            wk: Matrix::identity(d),
            wv: Matrix::identity(d),
            wo: Matrix::identity(d),
        }
    }

    pub fn seeded(d: usize, seed: u64) -> Self {
        AttnWeights {
            wq: Matrix::seeded(d, d, seed),
            wk: Matrix::seeded(d, d, seed + 1),
            wv: Matrix::seeded(d, d, seed + 2),
            wo: Matrix::seeded(d, d, seed + 3),
        }
    }

    pub fn width(&self) -> usize {
        self.wq.rows
    }

    fn validate(&self) -> Result<()> {
        let d = self.width();
        for (name, m) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)] {
            if m.rows != d || m.cols != self.wq.cols {
                return Err(Error::shape(format!("{name} is {}x{}, expected {d}x{}", m.rows, m.cols, self.wq.cols)));
            }
        }
        if self.wo.rows != self.wv.cols {
            return Err(Error::shape("wo rows must match the value projection width"));
        }
        Ok(())
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        store.put_matrix(&format!("{prefix}.wq"), &self.wq)?;
        store.put_matrix(&format!("{prefix}.wk"), &self.wk)?;
        store.put_matrix(&format!("{prefix}.wv"), &self.wv)?;
        store.put_matrix(&format!("{prefix}.wo"), &self.wo)
    }

    pub fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let w = AttnWeights {
            wq: store.matrix(&format!("{prefix}.wq"))?,
            wk: store.matrix(&format!("{prefix}.wk"))?,
            wv: store.matrix(&format!("{prefix}.wv"))?,
            wo: store.matrix(&format!("{prefix}.wo"))?,
        };
        w.validate()?;
        Ok(w)
    }
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for row in out.data.chunks_mut(m.cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn transpose(m: &Matrix) -> Matrix {
    let mut t = Matrix::zeros(m.cols, m.rows);
    for r in 0..m.rows {
        for c in 0..m.cols {
            t.data[c * m.rows + r] = m.get(r, c);
        }
    }
    t
}

/// Output rows and the softmax weight matrix (`n_q x n_k`).
pub fn attention_with_scores(q: &Matrix, k: &Matrix, v: &Matrix, w: &AttnWeights) -> Result<(Matrix, Matrix)> {
    w.validate()?;
    let d = w.width();
    for (name, m) in [("queries", q), ("keys", k), ("values", v)] {
        if m.cols != d {
            return Err(Error::shape(format!("{name} have width {}, weights expect {d}", m.cols)));
        }
    }
    if k.rows != v.rows {
        return Err(Error::shape(format!("{} keys but {} values", k.rows, v.rows)));
    }
    if k.rows == 0 {
        return Err(Error::shape("attention needs at least one key"));
    }
    let qp = q.matmul(&w.wq)?;
    let kp = k.matmul(&w.wk)?;
    let vp = v.matmul(&w.wv)?;
    let scale = 1.0 / (w.wq.cols as f64).sqrt();
    let mut logits = qp.matmul(&transpose(&kp))?;
    logits.data.iter_mut().for_each(|x| *x *= scale);
    let scores = softmax_rows(&logits);
    let out = scores.matmul(&vp)?.matmul(&w.wo)?;
    Ok((out, scores))
}

/// `softmax((Q Wq)(K Wk)^T / sqrt(d)) (V Wv) Wo`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, w: &AttnWeights) -> Result<Matrix> {
    attention_with_scores(q, k, v, w).map(|(o, _)| o)
}

/// Two-layer ReLU perceptron applied per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        Mlp {
            w1: Matrix::zeros(d, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, d),
            b2: vec![0.0; d],
        }
    }

    pub fn seeded(d: usize, hidden: usize, seed: u64) -> Self {
        Mlp {
            w1: Matrix::seeded(d, hidden, seed),
            b1: vec![0.0; hidden],
            w2: Matrix::seeded(hidden, d, seed + 1),
            b2: vec![0.0; d],
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.matmul(&self.w1)?.add_row(&self.b1)?;
        h.data.iter_mut().for_each(|v| *v = v.max(0.0));
        h.matmul(&self.w2)?.add_row(&self.b2)
    }
}

/// Self-attention layers over the head query, cross-attention to the body
/// tokens, then the MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct RsemWeights {
    pub self_layers: Vec<AttnWeights>,
    pub cross: AttnWeights,
    pub mlp: Mlp,
    /// Add each sub-layer's input back to its output.
    pub residual: bool,
}

impl RsemWeights {
    pub fn seeded(d: usize, layers: usize, seed: u64) -> Self {
        RsemWeights {
            self_layers: (0..layers).map(|i| AttnWeights::seeded(d, seed + 10 * i as u64)).collect(),
            cross: AttnWeights::seeded(d, seed + 1000),
            mlp: Mlp::seeded(d, 2 * d, seed + 2000),
            residual: true,
        }
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        for (i, l) in self.self_layers.iter().enumerate() {
            l.save(store, &format!("{prefix}.self.{i}"))?;
        }
        self.cross.save(store, &format!("{prefix}.cross"))?;
        store.put_matrix(&format!("{prefix}.mlp.w1"), &self.mlp.w1)?;
        store.insert(format!("{prefix}.mlp.b1"), vec![self.mlp.b1.len()], self.mlp.b1.clone())?;
        store.put_matrix(&format!("{prefix}.mlp.w2"), &self.mlp.w2)?;
        store.insert(format!("{prefix}.mlp.b2"), vec![self.mlp.b2.len()], self.mlp.b2.clone())?;
        store.insert(format!("{prefix}.residual"), vec![1], vec![f64::from(u8::from(self.residual))])
    }

    pub fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let mut self_layers = Vec::new();
        while store.get(&format!("{prefix}.self.{}.wq", self_layers.len())).is_ok() {
            self_layers.push(AttnWeights::load(store, &format!("{prefix}.self.{}", self_layers.len()))?);
        }
        let mlp = Mlp {
            w1: store.matrix(&format!("{prefix}.mlp.w1"))?,
            b1: store.vector(&format!("{prefix}.mlp.b1"))?,
            w2: store.matrix(&format!("{prefix}.mlp.w2"))?,
            b2: store.vector(&format!("{prefix}.mlp.b2"))?,
        };
        Ok(RsemWeights {
            self_layers,
            cross: AttnWeights::load(store, &format!("{prefix}.cross"))?,
            mlp,
            residual: store.vector(&format!("{prefix}.residual"))?.first() == Some(&1.0),
        })
    }
}

/// `Q' = MLP(CAttn(SAttn(Q), [K, V]))` with keys and values both taken from
/// the body tokens.
pub fn rsem_block(head: &Matrix, body: &Matrix, w: &RsemWeights) -> Result<Matrix> {
    let mut q = head.clone();
    for layer in &w.self_layers {
        let a = attention(&q, &q, &q, layer)?;
        q = if w.residual { q.add(&a)? } else { a };
    }
    let c = attention(&q, body, body, &w.cross)?;
    q = if w.residual { q.add(&c)? } else { c };
    let m = w.mlp.forward(&q)?;
    if w.residual {
        q.add(&m)
    } else {
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(n: usize, d: usize, seed: u64) -> Matrix {
        let mut m = Matrix::seeded(n, d, seed);
        m.data.iter_mut().for_each(|v| *v *= 4.0);
        m
    }

    #[test]
    fn single_key_passes_value_through() {
        let w = AttnWeights::seeded(4, 3);
        let q = tokens(3, 4, 1);
        let kv = tokens(1, 4, 2);
        let out = attention(&q, &kv, &kv, &w).unwrap();
        let expect = kv.matmul(&w.wv).unwrap().matmul(&w.wo).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert!((out.get(r, c) - expect.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturated_one_hot_selects_value_row() {
        let d = 4;
        let mut k = Matrix::zeros(d, d);
        for i in 0..d {
            k.data[i * d + i] = 100.0;
        }
        let v = tokens(d, d, 7);
        let q = Matrix::from_rows(&[vec![0.0, 0.0, 100.0, 0.0]]).unwrap();
        let out = attention(&q, &k, &v, &AttnWeights::identity(d)).unwrap();
        for c in 0..d {
            assert!((out.get(0, c) - v.get(2, c)).abs() < 1e-9);
        }
    }

    #[test]
    fn width_mismatch_errors() {
        let w = AttnWeights::seeded(4, 0);
        assert!(attention(&tokens(2, 3, 0), &tokens(2, 4, 0), &tokens(2, 4, 0), &w).is_err());
        assert!(attention(&tokens(2, 4, 0), &tokens(2, 4, 0), &tokens(3, 4, 0), &w).is_err());
    }

    #[test]
    fn zero_mlp_without_residual_is_zero() {
        let d = 6;
        let w = RsemWeights {
            self_layers: vec![AttnWeights::seeded(d, 1)],
            cross: AttnWeights::seeded(d, 2),
            mlp: Mlp::zeros(d, 12),
            residual: false,
        };
        let out = rsem_block(&tokens(2, d, 3), &tokens(5, d, 4), &w).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weights_round_trip_through_store() {
        let w = RsemWeights::seeded(8, 2, 5);
        let mut store = WeightStore::new();
        w.save(&mut store, "rsem").unwrap();
        let back = RsemWeights::load(&WeightStore::from_bytes(&store.to_bytes()).unwrap(), "rsem").unwrap();
        assert_eq!(back.self_layers.len(), 2);
        assert!(back.residual);
        assert!(back.cross.wq.max_abs_diff(&w.cross.wq) < 1e-6);
    }
}

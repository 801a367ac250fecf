//! Small dense building blocks shared by the encoders and network skeletons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;

/// Square-kernel 2D convolution, stride 1, zero padding `kernel / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    /// `out x in x k x k`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Conv2d {
            out_channels,
            in_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn from_parts(out_channels: usize, in_channels: usize, kernel: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::shape(format!("kernel size {kernel} must be odd")));
        }
        if weight.len() != out_channels * in_channels * kernel * kernel || bias.len() != out_channels {
            return Err(Error::shape(format!(
                "conv {out_channels}x{in_channels}x{kernel}x{kernel} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Conv2d {
            out_channels,
            in_channels,
            kernel,
            weight,
            bias,
        })
    }

    /// Uniform `[-b, b]` init with `b = 1 / sqrt(fan_in)`.
    pub fn seeded(out_channels: usize, in_channels: usize, kernel: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        let mut c = Conv2d::zeros(out_channels, in_channels, kernel);
        c.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        c.bias.iter_mut().for_each(|b| *b = rng.random_range(-bound..bound));
        c
    }

    pub fn weight_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    pub fn set_weight(&mut self, o: usize, i: usize, ky: usize, kx: usize, v: f64) {
        let k = self.kernel;
        self.weight[((o * self.in_channels + i) * k + ky) * k + kx] = v;
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let (h, w) = (input.height(), input.width());
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let plane = h * w;
        let mut out = FeatureMap::zeros(self.out_channels, h, w);
        crate::par::for_each_chunk_mut(out.data_mut(), plane, |o, dst| {
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let src = input.channel(i);
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    for kx in 0..k {
                        let wv = self.weight_at(o, i, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        let dx = kx as isize - pad;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        if x0 >= x1 {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                            let drow = &mut dst[y * w..(y + 1) * w];
                            for x in x0..x1 {
                                drow[x] += wv * srow[(x as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        });
        Ok(out)
    }
}

pub fn relu(map: &FeatureMap) -> FeatureMap {
    let mut m = map.clone();
    m.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    m
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// 2x2 average pooling; odd trailing rows/columns are dropped.
pub fn avg_pool2(map: &FeatureMap) -> Result<FeatureMap> {
    let (c, h, w) = map.shape();
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("cannot pool a {h}x{w} map")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureMap::zeros(c, oh, ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let s = map.get(ch, 2 * y, 2 * x)
                    + map.get(ch, 2 * y, 2 * x + 1)
                    + map.get(ch, 2 * y + 1, 2 * x)
                    + map.get(ch, 2 * y + 1, 2 * x + 1);
                out.set(ch, y, x, 0.25 * s);
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(map: &FeatureMap) -> FeatureMap {
    let (c, h, w) = map.shape();
    let mut out = FeatureMap::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..2 * w {
                out.set(ch, y, x, map.get(ch, y / 2, x / 2));
            }
        }
    }
    out
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn seeded(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (rows as f64).sqrt();
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::shape("matrix sum of different shapes"));
        }
        Ok(Matrix {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// Adds `bias` to every row.
    pub fn add_row(&self, bias: &[f64]) -> Result<Matrix> {
        if bias.len() != self.cols {
            return Err(Error::shape("bias width mismatch"));
        }
        let mut m = self.clone();
        for r in m.data.chunks_mut(self.cols) {
            r.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
        }
        Ok(m)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_copies_channel() {
        let mut conv = Conv2d::zeros(1, 2, 3);
        conv.set_weight(0, 1, 1, 1, 1.0);
        let input = FeatureMap::from_vec(2, 2, 3, (0..12).map(|v| v as f64).collect()).unwrap();
        let out = conv.forward(&input).unwrap();
        assert_eq!(out.channel(0), input.channel(1));
    }

    #[test]
    fn shifted_tap_uses_zero_padding() {
        let mut conv = Conv2d::zeros(1, 1, 3);
        // output(y, x) = input(y, x + 1)
        conv.set_weight(0, 0, 1, 2, 1.0);
        let input = FeatureMap::from_vec(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(conv.forward(&input).unwrap().data(), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let m = FeatureMap::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool2(&m).unwrap().data(), &[2.5]);
        let u = upsample2(&m);
        assert_eq!(u.shape(), (1, 4, 4));
        assert_eq!(u.get(0, 3, 3), 4.0);
    }

    #[test]
    fn matmul_shapes() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::identity(2);
        assert_eq!(a.matmul(&b).unwrap(), a);
        assert!(a.matmul(&Matrix::zeros(3, 1)).is_err());
    }
}

//! Geometry and image metrics: Chamfer distance, normal consistency,
//! F-score, PSNR and SSIM.

mod kdtree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::gaussian::Vec3;
use crate::mesh::TriMesh;

pub use kdtree::{brute_nearest, dist2, KdTree};

pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_TAU: f64 = 1.0;

fn require_points(points: &[Vec3], what: &str) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Empty(format!("{what} point set is empty")));
    }
    Ok(())
}

/// Distance from every query point to its nearest target point.
pub fn nearest_distances(queries: &[Vec3], targets: &[Vec3]) -> Result<Vec<f64>> {
    require_points(queries, "query")?;
    require_points(targets, "target")?;
    let tree = KdTree::new(targets);
    Ok(crate::par::map_slice(queries, |q| tree.nearest(q).expect("nonempty").1.sqrt()))
}

fn brute_distances(queries: &[Vec3], targets: &[Vec3]) -> Result<Vec<f64>> {
    require_points(queries, "query")?;
    require_points(targets, "target")?;
    Ok(queries.iter().map(|q| brute_nearest(targets, q).expect("nonempty").1.sqrt()).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(pred -> gt, gt -> pred)` mean nearest-neighbor distances.
pub fn chamfer(pred: &[Vec3], gt: &[Vec3]) -> Result<(f64, f64)> {
    Ok((mean(&nearest_distances(pred, gt)?), mean(&nearest_distances(gt, pred)?)))
}

/// Quadratic-time reference for [`chamfer`].
pub fn chamfer_brute(pred: &[Vec3], gt: &[Vec3]) -> Result<(f64, f64)> {
    Ok((mean(&brute_distances(pred, gt)?), mean(&brute_distances(gt, pred)?)))
}

/// Harmonic mean of the fractions of each set within `tau` of the other.
pub fn f_score(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let within = |d: &[f64]| d.iter().filter(|&&x| x < tau).count() as f64 / d.len() as f64;
    let precision = within(&nearest_distances(pred, gt)?);
    let recall = within(&nearest_distances(gt, pred)?);
    Ok(if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    })
}

/// Area-weighted surface samples and face normals of a mesh.
pub fn sample_mesh(mesh: &TriMesh, count: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    mesh.validate()?;
    if count == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(mesh.sample_surface(count, &mut rng)?.into_iter().unzip())
}

fn directional_nc(pa: &[Vec3], na: &[Vec3], pb: &[Vec3], nb: &[Vec3]) -> f64 {
    let tree = KdTree::new(pb);
    let dots = crate::par::map_range(pa.len(), |i| {
        let (j, _) = tree.nearest(&pa[i]).expect("nonempty");
        na[i].dot(&nb[j]).abs()
    });
    mean(&dots)
}

/// Mean `|n_a . n_b|` over nearest-neighbor matches in both directions.
pub fn normal_consistency(pred: &TriMesh, gt: &TriMesh, samples: usize, seed: u64) -> Result<f64> {
    let (pp, pn) = sample_mesh(pred, samples, seed)?;
    let (gp, gn) = sample_mesh(gt, samples, seed.wrapping_add(1))?;
    if pn.iter().chain(&gn).any(|n| n.norm_squared() == 0.0) {
        return Err(Error::invalid("degenerate mesh: sampled a face without a normal"));
    }
    Ok(0.5 * (directional_nc(&pp, &pn, &gp, &gn) + directional_nc(&gp, &gn, &pp, &pn)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeomReport {
    pub cd_p_to_s: f64,
    pub cd_s_to_p: f64,
    pub nc: f64,
    pub fscore: f64,
    pub tau: f64,
    pub samples: usize,
    pub units: String,
    /// Distances are point-to-point between surface samples.
    pub distance: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomOptions {
    pub samples: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for GeomOptions {
    fn default() -> Self {
        GeomOptions {
            samples: DEFAULT_SAMPLES,
            tau: DEFAULT_TAU,
            seed: 0,
        }
    }
}

pub fn evaluate_geometry(pred: &TriMesh, gt: &TriMesh, opts: &GeomOptions) -> Result<GeomReport> {
    let (pp, _) = sample_mesh(pred, opts.samples, opts.seed)?;
    let (gp, _) = sample_mesh(gt, opts.samples, opts.seed.wrapping_add(1))?;
    let (cd_p_to_s, cd_s_to_p) = chamfer(&pp, &gp)?;
    Ok(GeomReport {
        cd_p_to_s,
        cd_s_to_p,
        nc: normal_consistency(pred, gt, opts.samples, opts.seed)?,
        fscore: f_score(&pp, &gp, opts.tau)?,
        tau: opts.tau,
        samples: opts.samples,
        units: "cm".into(),
        distance: "point-to-point".into(),
    })
}

fn check_pair(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!("images {:?} and {:?} differ in shape", a.shape(), b.shape())));
    }
    if a.data().is_empty() {
        return Err(Error::Empty("image has no pixels".into()));
    }
    Ok(())
}

/// `10 log10(peak^2 / mse)`, capped at 99 dB when `mse < 1e-12`.
pub fn psnr(a: &FeatureMap, b: &FeatureMap, peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64;
    if mse < 1e-12 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM per channel, averaged over channels. Images smaller than
/// the window use the largest odd window that fits.
pub fn ssim(a: &FeatureMap, b: &FeatureMap, opts: &SsimOptions) -> Result<f64> {
    check_pair(a, b)?;
    let (c, h, w) = a.shape();
    let mut size = opts.window.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size, opts.sigma);
    let c1 = (opts.k1 * opts.peak).powi(2);
    let c2 = (opts.k2 * opts.peak).powi(2);
    let mut total = 0.0;
    for ch in 0..c {
        let (x, y) = (a.channel(ch), b.channel(ch));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(x, h, w, &k);
        let (my, _, _) = filter_valid(y, h, w, &k);
        let (sxx, _, _) = filter_valid(&xx, h, w, &k);
        let (syy, _, _) = filter_valid(&yy, h, w, &k);
        let (sxy, _, _) = filter_valid(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / c as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub view: String,
}

pub fn evaluate_image(pred: &FeatureMap, gt: &FeatureMap, view: &str) -> Result<ImageReport> {
    Ok(ImageReport {
        psnr_db: psnr(pred, gt, 1.0)?,
        ssim: ssim(pred, gt, &SsimOptions::default())?,
        view: view.into(),
    })
}

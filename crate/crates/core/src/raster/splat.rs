use crate::camera::OrthoCamera;
use crate::error::Result;
use crate::feature::FeatureMap;
use crate::gaussian::{GaussianSet, Vec3};

use super::{DepthMap, RenderMode, RenderOutput, SoftRenderConfig};

const COV_EPS: f64 = 1e-6;
const NORMAL_ALPHA_MIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplatStats {
    /// 2D covariances regularized with `eps * I`.
    pub clamped: usize,
    /// Gaussians outside `[near, far]` or below the alpha cutoff.
    pub culled: usize,
}

struct Splat {
    index: usize,
    depth: f64,
    u: f64,
    v: f64,
    /// inverse 2D covariance in pixel units: (a, b, c) for [[a, b], [b, c]]
    conic: (f64, f64, f64),
    opacity: f64,
    color: Vec3,
    bbox: (usize, usize, usize, usize),
}

pub fn render_gaussians(set: &GaussianSet, camera: &OrthoCamera, mode: RenderMode, config: &SoftRenderConfig) -> Result<RenderOutput> {
    render_gaussians_with_stats(set, camera, mode, config).map(|(r, _)| r)
}

/// Depth-sorted front-to-back alpha compositing of projected Gaussians.
///
/// Footprints use the upper-left 2x2 block of `R_cam Σ R_cam^T`. Sorting is
/// by depth, then input index, so the output does not depend on input order
/// when depths are distinct. Tiles are composited independently with the
/// same per-pixel order, so threading does not change a single bit.
pub fn render_gaussians_with_stats(
    set: &GaussianSet,
    camera: &OrthoCamera,
    mode: RenderMode,
    config: &SoftRenderConfig,
) -> Result<(RenderOutput, SplatStats)> {
    set.require_nonempty()?;
    set.validate()?;
    camera.validate()?;
    config.validate()?;
    let (h, w) = (camera.height, camera.width);
    let (sx, sy) = camera.pixel_scale();
    let rot = camera.rotation;
    let mut stats = SplatStats::default();

    let mut splats = Vec::with_capacity(set.len());
    for (index, g) in set.gaussians.iter().enumerate() {
        let pc = camera.to_camera(&g.center);
        let depth = -pc.z;
        if !(depth >= camera.near && depth <= camera.far) || g.opacity < config.alpha_cutoff {
            stats.culled += 1;
            continue;
        }
        let cov = rot * g.covariance() * rot.transpose();
        let (mut a, b, mut c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
        if !(a * c - b * b > 1e-18) {
            a += COV_EPS;
            c += COV_EPS;
            stats.clamped += 1;
        }
        // pixel space: u = sx * x, v = -sy * y
        let (pa, pb, pc2) = (sx * sx * a, -sx * sy * b, sy * sy * c);
        let det = pa * pc2 - pb * pb;
        let conic = (pc2 / det, -pb / det, pa / det);
        let mid = 0.5 * (pa + pc2);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let reach = (2.0 * (g.opacity / config.alpha_cutoff).ln()).max(0.0).sqrt() * lambda_max.sqrt();
        let (u, v) = camera.cam_to_image(&pc);
        let x0 = (u - reach - 0.5).floor().max(0.0);
        let y0 = (v - reach - 0.5).floor().max(0.0);
        let x1 = (u + reach - 0.5).ceil().min(w as f64 - 1.0);
        let y1 = (v + reach - 0.5).ceil().min(h as f64 - 1.0);
        if x1 < x0 || y1 < y0 {
            stats.culled += 1;
            continue;
        }
        let color = match mode {
            RenderMode::Color => g.color,
            RenderMode::Normal => rot * (g.color * 2.0 - Vec3::repeat(1.0)),
        };
        splats.push(Splat {
            index,
            depth,
            u,
            v,
            conic,
            opacity: g.opacity,
            color,
            bbox: (x0 as usize, y0 as usize, x1 as usize, y1 as usize),
        });
    }
    splats.sort_by(|p, q| p.depth.total_cmp(&q.depth).then(p.index.cmp(&q.index)));

    let ts = config.tile_size;
    let (tiles_x, tiles_y) = (w.div_ceil(ts), h.div_ceil(ts));
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let (x0, y0, x1, y1) = s.bbox;
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let cutoff = config.alpha_cutoff;
    let tiles = crate::par::map_range(tiles_x * tiles_y, |t| {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let (px0, py0) = (tx * ts, ty * ts);
        let (px1, py1) = ((px0 + ts).min(w), (py0 + ts).min(h));
        let mut out = Vec::with_capacity((px1 - px0) * (py1 - py0));
        for py in py0..py1 {
            for px in px0..px1 {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let mut transmit = 1.0;
                let mut wsum = 0.0;
                let mut col = Vec3::zeros();
                let mut dsum = 0.0;
                for &k in &bins[t] {
                    let s = &splats[k as usize];
                    let (dx, dy) = (cx - s.u, cy - s.v);
                    let power = -0.5 * (s.conic.0 * dx * dx + 2.0 * s.conic.1 * dx * dy + s.conic.2 * dy * dy);
                    let a = s.opacity * power.exp();
                    if a < cutoff {
                        continue;
                    }
                    let weight = a * transmit;
                    col += s.color * weight;
                    wsum += weight;
                    dsum += weight * s.depth;
                    transmit *= 1.0 - a;
                    if transmit == 0.0 {
                        break;
                    }
                }
                out.push((col, wsum, dsum));
            }
        }
        out
    });

    let mut image = FeatureMap::zeros(3, h, w);
    let mut alpha = FeatureMap::zeros(1, h, w);
    let mut depth = DepthMap::empty(h, w);
    for (t, tile) in tiles.into_iter().enumerate() {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let (px0, py0) = (tx * ts, ty * ts);
        let tw = (px0 + ts).min(w) - px0;
        for (i, (col, wsum, dsum)) in tile.into_iter().enumerate() {
            let (py, px) = (py0 + i / tw, px0 + i % tw);
            alpha.set(0, py, px, wsum.min(1.0));
            if wsum > 0.0 {
                depth.data[py * w + px] = dsum / wsum;
            }
            let rgb = match mode {
                RenderMode::Color => col,
                RenderMode::Normal => {
                    if config.renormalize_normals {
                        if wsum > NORMAL_ALPHA_MIN && col.norm() > 0.0 {
                            (col.normalize() + Vec3::repeat(1.0)) * 0.5
                        } else {
                            Vec3::zeros()
                        }
                    } else {
                        (col + Vec3::repeat(wsum)) * 0.5
                    }
                }
            };
            for c in 0..3 {
                image.set(c, py, px, rgb[c].clamp(0.0, 1.0));
            }
        }
    }
    Ok((RenderOutput { image, alpha, depth }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{make_camera_rig, Rig};
    use crate::gaussian::{quaternion_to_rotmat, Gaussian};
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn front(size: usize) -> OrthoCamera {
        make_camera_rig(Rig::Front3, size, 1.0).unwrap().remove(0)
    }

    #[test]
    fn single_gaussian_peaks_at_center_and_falls_off() {
        let set = GaussianSet::new(vec![Gaussian::isotropic(Vec3::zeros(), 0.2, 1.0, Vec3::repeat(1.0)).unwrap()]);
        let cam = front(33);
        let out = render_gaussians(&set, &cam, RenderMode::Color, &SoftRenderConfig::default()).unwrap();
        let a = |y: usize, x: usize| out.alpha.get(0, y, x);
        let max = out.alpha.data().iter().copied().fold(0.0, f64::max);
        assert_eq!(a(16, 16), max);
        // ring sweep: mean alpha per integer radius never increases
        let mut rings = vec![(0.0, 0usize); 24];
        for y in 0..33 {
            for x in 0..33 {
                let r = (((y as f64 - 16.0).powi(2) + (x as f64 - 16.0).powi(2)).sqrt()).round() as usize;
                if r < rings.len() {
                    rings[r].0 += a(y, x);
                    rings[r].1 += 1;
                }
            }
        }
        let means: Vec<f64> = rings.iter().map(|(s, n)| s / *n as f64).collect();
        for k in 1..means.len() {
            assert!(means[k] <= means[k - 1] + 1e-15, "ring {k}: {} > {}", means[k], means[k - 1]);
        }
    }

    #[test]
    fn empty_region_is_zero_with_infinite_depth() {
        let set = GaussianSet::new(vec![Gaussian::isotropic(Vec3::new(0.8, 0.8, 0.0), 0.02, 1.0, Vec3::repeat(1.0)).unwrap()]);
        let out = render_gaussians(&set, &front(16), RenderMode::Color, &SoftRenderConfig::default()).unwrap();
        assert_eq!(out.alpha.get(0, 15, 0), 0.0);
        assert_eq!(out.image.pixel(15, 0), vec![0.0; 3]);
        assert!(out.depth.get(15, 0).is_infinite());
    }

    #[test]
    fn opaque_front_gaussian_hides_back() {
        let front_g = Gaussian::isotropic(Vec3::new(0.0, 0.0, 0.5), 0.3, 1.0, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let back_g = Gaussian::isotropic(Vec3::new(0.0, 0.0, -0.5), 0.3, 1.0, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let set = GaussianSet::new(vec![back_g, front_g]);
        let cam = front(31);
        let out = render_gaussians(&set, &cam, RenderMode::Color, &SoftRenderConfig::default()).unwrap();
        let px = out.image.pixel(15, 15);
        assert!((px[0] - 1.0).abs() < 1e-4 && px[1].abs() < 1e-4 && px[2].abs() < 1e-4, "{px:?}");
    }

    fn random_set(n: usize, seed: u64) -> GaussianSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GaussianSet::new(
            (0..n)
                .map(|_| {
                    Gaussian::new(
                        Vec3::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)),
                        Vec3::new(rng.random_range(0.02..0.2), rng.random_range(0.02..0.2), rng.random_range(0.02..0.2)),
                        [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                        rng.random_range(0.1..1.0),
                        Vec3::new(rng.random(), rng.random(), rng.random()),
                    )
                    .unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn compositing_weights_bounded_by_one() {
        let set = random_set(200, 3);
        let out = render_gaussians(&set, &front(40), RenderMode::Color, &SoftRenderConfig::default()).unwrap();
        assert!(out.alpha.data().iter().all(|&a| (0.0..=1.0).contains(&a)));
        for (i, a) in out.alpha.data().iter().enumerate() {
            assert_eq!(*a > 0.0, out.depth.data[i].is_finite());
        }
    }

    #[test]
    fn permutation_invariant() {
        let set = random_set(150, 11);
        let mut shuffled = set.clone();
        shuffled.gaussians.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let cfg = SoftRenderConfig::default();
        let a = render_gaussians(&set, &front(32), RenderMode::Color, &cfg).unwrap();
        let b = render_gaussians(&shuffled, &front(32), RenderMode::Color, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tile_size_does_not_change_output() {
        let set = random_set(100, 12);
        let mut cfg = SoftRenderConfig::default();
        let a = render_gaussians(&set, &front(37), RenderMode::Normal, &cfg).unwrap();
        cfg.tile_size = 5;
        let b = render_gaussians(&set, &front(37), RenderMode::Normal, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rigid_rotation_of_scene_and_camera() {
        let rot = quaternion_to_rotmat(crate::gaussian::normalize_quat([0.3, -0.5, 0.7, 0.2]).unwrap()).unwrap();
        let cam = front(32);
        let cam2 = cam.rotated_with_scene(&rot);
        let cfg = SoftRenderConfig::default();
        let set = random_set(120, 21);
        let sphere = crate::shapes::sphere_gaussians(300, 0.7, 0.05, 0.8);
        for (set, mode) in [(set, RenderMode::Color), (sphere, RenderMode::Normal)] {
            let moved = GaussianSet::new(
                set.gaussians
                    .iter()
                    .map(|g| {
                        let mut m = g.rotated(&rot).unwrap();
                        if mode == RenderMode::Normal {
                            m.color = (rot * (g.color * 2.0 - Vec3::repeat(1.0)) + Vec3::repeat(1.0)) * 0.5;
                        }
                        m
                    })
                    .collect(),
            );
            let a = render_gaussians(&set, &cam, mode, &cfg).unwrap();
            let b = render_gaussians(&moved, &cam2, mode, &cfg).unwrap();
            assert!(a.image.max_abs_diff(&b.image) < 1e-5, "{mode:?}");
            assert!(a.alpha.max_abs_diff(&b.alpha) < 1e-5, "{mode:?}");
        }
    }

    #[test]
    fn normal_mode_outputs_camera_space_normals() {
        // world +x normal seen by the left camera (looking along -x) faces it: camera +z
        let g = Gaussian::isotropic(Vec3::zeros(), 0.3, 1.0, Vec3::new(1.0, 0.5, 0.5)).unwrap();
        let cams = make_camera_rig(Rig::Front3, 15, 1.0).unwrap();
        let out = render_gaussians(&GaussianSet::new(vec![g]), &cams[1], RenderMode::Normal, &SoftRenderConfig::default()).unwrap();
        let px = out.image.pixel(7, 7);
        assert!((px[0] - 0.5).abs() < 1e-12 && (px[1] - 0.5).abs() < 1e-12 && (px[2] - 1.0).abs() < 1e-12, "{px:?}");
    }

    #[test]
    fn flat_gaussian_is_clamped_not_nan() {
        // edge-on disc: zero extent along the view axis projects to a line
        let g = Gaussian::new(Vec3::zeros(), Vec3::new(1e-12, 0.2, 0.2), [1.0, 0.0, 0.0, 0.0], 1.0, Vec3::repeat(1.0)).unwrap();
        let cams = make_camera_rig(Rig::Front3, 16, 1.0).unwrap();
        let (out, stats) = render_gaussians_with_stats(&GaussianSet::new(vec![g]), &cams[0], RenderMode::Color, &SoftRenderConfig::default()).unwrap();
        assert_eq!(stats.clamped, 1);
        assert!(out.image.all_finite());
    }
}

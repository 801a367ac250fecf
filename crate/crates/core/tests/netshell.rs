use std::path::PathBuf;

use proptest::prelude::*;
use splatrecon::camera::{make_camera_rig, Rig};
use splatrecon::metrics::psnr;
use splatrecon::netshell::*;
use splatrecon::nn::{avg_pool2, relu, upsample2, Conv2d, Matrix};
use splatrecon::raster::{render_gaussians, RenderMode, SoftRenderConfig};
use splatrecon::FeatureMap;

fn features(c: usize, n: usize, seed: u64) -> FeatureMap {
    FeatureMap::from_vec(c, n, n, Matrix::seeded(1, c * n * n, seed).data).unwrap()
}

/// Plain single-branch U-Net written out block by block.
fn single_branch(input: &FeatureMap, down: &[Conv2d], mid: &Conv2d, up: &[Conv2d]) -> FeatureMap {
    let d1 = relu(&down[0].forward(input).unwrap());
    let d2 = relu(&down[1].forward(&avg_pool2(&d1).unwrap()).unwrap());
    let d3 = relu(&down[2].forward(&avg_pool2(&d2).unwrap()).unwrap());
    let d4 = relu(&down[3].forward(&avg_pool2(&d3).unwrap()).unwrap());
    let d5 = relu(&down[4].forward(&avg_pool2(&d4).unwrap()).unwrap());
    let m = relu(&mid.forward(&avg_pool2(&d5).unwrap()).unwrap());
    let step = |x: &FeatureMap, skip: &FeatureMap, conv: &Conv2d| {
        conv.forward(&FeatureMap::concat(&[&upsample2(x), skip]).unwrap()).unwrap()
    };
    let u1 = relu(&step(&m, &d5, &up[0]));
    let u2 = relu(&step(&u1, &d4, &up[1]));
    let u3 = relu(&step(&u2, &d3, &up[2]));
    let u4 = relu(&step(&u3, &d2, &up[3]));
    step(&u4, &d1, &up[4])
}

#[test]
fn zero_normal_branch_matches_single_branch() {
    let geo = features(9, 64, 1);
    let tex = features(8, 64, 2);
    let mut w = DualUNetWeights::seeded(17, DualUNetWeights::DEFAULT_CHANNELS, 7);
    w.normal = w.normal.zeroed();
    let out = dual_unet_forward(&geo, &tex, &w).unwrap();
    let input = FeatureMap::concat(&[&geo, &tex]).unwrap();
    let t = &w.texture;
    let oracle = single_branch(&input, &t.down, &t.mid, &t.up);
    assert!(out.texture.max_abs_diff(&oracle) < 1e-6);
    assert!(out.normal.data().iter().all(|&v| v == 0.0));
}

#[test]
fn texture_branch_sees_normal_branch_through_fusion() {
    let geo = features(3, 32, 1);
    let tex = features(2, 32, 2);
    let w = DualUNetWeights::seeded(5, [4, 4, 4, 4, 4], 3);
    let out = dual_unet_forward(&geo, &tex, &w).unwrap();
    let input = FeatureMap::concat(&[&geo, &tex]).unwrap();
    let t = &w.texture;
    let alone = single_branch(&input, &t.down, &t.mid, &t.up);
    assert!(out.texture.max_abs_diff(&alone) > 1e-6);
}

#[test]
fn attention_rows_sum_to_one() {
    let w = AttnWeights::seeded(8, 11);
    for scale in [1e-3, 1.0, 1e3] {
        let mut q = Matrix::seeded(5, 8, 1);
        q.data.iter_mut().for_each(|v| *v *= scale);
        let k = Matrix::seeded(7, 8, 2);
        let (_, scores) = attention_with_scores(&q, &k, &k, &w).unwrap();
        for r in 0..scores.rows {
            assert!((scores.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

fn permute_rows(m: &Matrix, order: &[usize]) -> Matrix {
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| m.row(i).to_vec()).collect();
    Matrix::from_rows(&rows).unwrap()
}

#[test]
fn rsem_body_shuffle_and_duplication() {
    let d = 16;
    let w = RsemWeights::seeded(d, 2, 4);
    let head = Matrix::seeded(3, d, 5);
    let body = Matrix::seeded(9, d, 6);
    let base = rsem_block(&head, &body, &w).unwrap();
    let shuffled = permute_rows(&body, &[4, 0, 8, 2, 7, 1, 5, 3, 6]);
    assert!(rsem_block(&head, &shuffled, &w).unwrap().max_abs_diff(&base) < 1e-12);
    let doubled = permute_rows(&body, &(0..18).map(|i| i % 9).collect::<Vec<_>>());
    assert!(rsem_block(&head, &doubled, &w).unwrap().max_abs_diff(&base) < 1e-6);
}

proptest! {
    #[test]
    fn softmax_rows_normalized(vals in proptest::collection::vec(-1e4f64..1e4, 12)) {
        let s = softmax_rows(&Matrix::from_vec(3, 4, vals).unwrap());
        for r in 0..3 {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_key_permutation(seed in 0u64..1000) {
        let w = AttnWeights::seeded(6, seed);
        let q = Matrix::seeded(2, 6, seed + 1);
        let k = Matrix::seeded(5, 6, seed + 2);
        let v = Matrix::seeded(5, 6, seed + 3);
        let order = [3, 1, 4, 0, 2];
        let a = attention(&q, &k, &v, &w).unwrap();
        let b = attention(&q, &permute_rows(&k, &order), &permute_rows(&v, &order), &w).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-6);
    }
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Disk of Gaussians on the front hemisphere of a radius-0.8 ball, colored by
/// position.
fn reference_map(size: usize) -> FeatureMap {
    let cam = &make_camera_rig(Rig::Front3, size, 1.0).unwrap()[0];
    let mut m = FeatureMap::zeros(14, size, size);
    let inv_softplus = |s: f64| (s.exp() - 1.0).ln();
    for y in 0..size {
        for x in 0..size {
            let (px, py) = cam.pixel_center_cam(y, x);
            let r2 = px * px + py * py;
            if r2 >= 0.64 {
                m.set(10, y, x, -20.0);
                continue;
            }
            m.set(0, y, x, 0.3 * (7.0 * px).sin());
            m.set(2, y, x, (-(0.64 - r2).sqrt()).atanh());
            m.set(3, y, x, inv_softplus(0.025));
            m.set(4, y, x, inv_softplus(0.02));
            m.set(5, y, x, inv_softplus(0.01));
            m.set(6, y, x, 0.2 * py);
            m.set(9, y, x, 0.4 * px);
            m.set(10, y, x, 1.5 + py);
            m.set(11, y, x, 3.0 * px);
            m.set(12, y, x, 3.0 * py);
            m.set(13, y, x, 2.0 - 4.0 * r2);
        }
    }
    m
}

fn render_map(map: &FeatureMap) -> FeatureMap {
    let cam = &make_camera_rig(Rig::Front3, map.width(), 1.0).unwrap()[0];
    let set = decode_gaussian_map(map, cam, &DecodeSpec::default()).unwrap();
    render_gaussians(&set, cam, RenderMode::Color, &SoftRenderConfig::default())
        .unwrap()
        .image
}

/// Rewrites the frozen fixture; run with `SPLATRECON_REGEN=1`.
#[test]
fn regenerate_decode_fixture() {
    if std::env::var_os("SPLATRECON_REGEN").is_none() {
        return;
    }
    let dir = fixture_dir();
    std::fs::create_dir_all(&dir).unwrap();
    let map = reference_map(64);
    map.save_tensor(&dir.join("decode_map.srtn")).unwrap();
    let stored = FeatureMap::load_tensor(&dir.join("decode_map.srtn")).unwrap();
    render_map(&stored).save_tensor(&dir.join("decode_render.srtn")).unwrap();
}

#[test]
fn decode_render_matches_frozen_fixture() {
    let dir = fixture_dir();
    let map = FeatureMap::load_tensor(&dir.join("decode_map.srtn")).unwrap();
    let reference = FeatureMap::load_tensor(&dir.join("decode_render.srtn")).unwrap();
    assert_eq!(map.shape(), (14, 64, 64));
    let db = psnr(&render_map(&map), &reference, 1.0).unwrap();
    assert!(db >= 40.0, "psnr {db}");
}

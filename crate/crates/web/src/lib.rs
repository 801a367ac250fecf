//! Browser bindings: splat rendering, remeshing and Fourier feature maps on
//! the built-in sphere fixtures. Images come back as RGBA bytes ready for
//! `ImageData`.

use splatrecon::camera::{make_camera_rig, OrthoCamera, Rig};
use splatrecon::fourier::{build_fourier_stack, densify_surface, fourier_expand, Interpolation};
use splatrecon::raster::{render_gaussians, render_mesh, RenderMode, SoftRenderConfig};
use splatrecon::remesh::{gaussian_targets, init_coarse_mesh, refine_mesh, RemeshConfig};
use splatrecon::shapes::{icosphere, sphere_gaussians};
use splatrecon::{FeatureMap, Vec3};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_js<T>(r: Result<T, String>) -> Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

fn orbit_camera(yaw_deg: f64, size: usize, extent: f64) -> Result<OrthoCamera, String> {
    let yaw = yaw_deg.to_radians();
    let eye = Vec3::new(yaw.sin(), 0.0, yaw.cos()) * (3.0 * extent);
    OrthoCamera::looking(eye, -eye, Vec3::y(), extent, size, 0.0, 6.0 * extent).map_err(js_err)
}

fn rgba(image: &FeatureMap, alpha: &FeatureMap) -> Vec<u8> {
    let (_, h, w) = image.shape();
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut out = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for x in 0..w {
            let a = alpha.get(0, y, x);
            for c in 0..3 {
                // composite over white so empty pixels read as background
                out.push(byte(image.get(c, y, x) + (1.0 - a)));
            }
            out.push(255);
        }
    }
    out
}

/// Renders `count` Gaussians on the unit sphere seen from azimuth `yaw_deg`.
#[wasm_bindgen]
pub fn render_splat(count: usize, sigma: f64, opacity: f64, yaw_deg: f64, size: usize, normal_mode: bool) -> Result<Vec<u8>, JsValue> {
    to_js(splat_pixels(count, sigma, opacity, yaw_deg, size, normal_mode))
}

fn splat_pixels(count: usize, sigma: f64, opacity: f64, yaw_deg: f64, size: usize, normal_mode: bool) -> Result<Vec<u8>, String> {
    let set = sphere_gaussians(count.max(1), 1.0, sigma, opacity);
    let cam = orbit_camera(yaw_deg, size, 1.4)?;
    let mode = if normal_mode { RenderMode::Normal } else { RenderMode::Color };
    let out = render_gaussians(&set, &cam, mode, &SoftRenderConfig::default()).map_err(js_err)?;
    Ok(rgba(&out.image, &out.alpha))
}

#[wasm_bindgen]
pub struct RemeshResult {
    coarse: Vec<u8>,
    refined: Vec<u8>,
    report: String,
}

#[wasm_bindgen]
impl RemeshResult {
    pub fn coarse_pixels(&self) -> Vec<u8> {
        self.coarse.clone()
    }

    pub fn refined_pixels(&self) -> Vec<u8> {
        self.refined.clone()
    }

    /// Loss summary as JSON.
    pub fn report(&self) -> String {
        self.report.clone()
    }
}

/// Extracts a coarse mesh from a sphere of Gaussians and refines it against
/// 8-view normal and mask renders; both meshes are rendered from `yaw_deg`.
#[wasm_bindgen]
pub fn remesh_sphere(iterations: usize, resolution: usize, lambda_lap: f64, yaw_deg: f64, size: usize) -> Result<RemeshResult, JsValue> {
    to_js(remesh_impl(iterations, resolution, lambda_lap, yaw_deg, size))
}

fn remesh_impl(iterations: usize, resolution: usize, lambda_lap: f64, yaw_deg: f64, size: usize) -> Result<RemeshResult, String> {
    let set = sphere_gaussians(800, 1.0, 0.06, 0.8);
    let cfg = RemeshConfig {
        views: make_camera_rig(Rig::Ring8, resolution, 1.3).map_err(js_err)?,
        iterations: iterations.max(1),
        grid_res: 24,
        lambda_lap,
        ..RemeshConfig::default()
    };
    cfg.validate().map_err(js_err)?;
    let coarse = init_coarse_mesh(&set, &cfg).map_err(js_err)?;
    let targets = gaussian_targets(&set, &cfg.views, &cfg.render).map_err(js_err)?;
    let (refined, report) = refine_mesh(&coarse, &targets, &cfg).map_err(js_err)?;
    let cam = orbit_camera(yaw_deg, size, 1.4)?;
    let draw = |m| {
        render_mesh(m, &cam, &SoftRenderConfig::default())
            .map(|o| rgba(&o.image, &o.alpha))
            .map_err(js_err)
    };
    let summary = serde_json::json!({
        "vertices": refined.vertex_count(),
        "faces": refined.face_count(),
        "initial": report.initial,
        "final": report.final_losses,
        "accepted": report.accepted,
        "rejected": report.rejected,
        "stop": report.stop,
    });
    Ok(RemeshResult {
        coarse: draw(&coarse)?,
        refined: draw(&refined)?,
        report: summary.to_string(),
    })
}

/// One channel of the front-view Fourier feature map of a sphere body,
/// mapped from [-1, 1] to gray; uncovered pixels stay white.
#[wasm_bindgen]
pub fn fourier_channel(order: usize, channel: usize, size: usize) -> Result<Vec<u8>, JsValue> {
    to_js(fourier_pixels(order, channel, size))
}

fn fourier_pixels(order: usize, channel: usize, size: usize) -> Result<Vec<u8>, String> {
    let body = icosphere(3, 1.0);
    let cloud = fourier_expand(&body.vertices, order).map_err(js_err)?;
    let dense = densify_surface(&body, cloud.features(), cloud.dim(), order, 20_000, 0, Interpolation::Barycentric).map_err(js_err)?;
    let cams = make_camera_rig(Rig::Front3, size, 1.25).map_err(js_err)?;
    let stack = build_fourier_stack(&dense, &cams).map_err(js_err)?;
    let map = &stack.maps[0];
    if channel >= map.channels() {
        return Err(js_err(format!("channel {channel} out of range (0..{})", map.channels())));
    }
    let mut out = Vec::with_capacity(4 * size * size);
    for y in 0..size {
        for x in 0..size {
            let covered = (0..map.channels()).any(|c| map.get(c, y, x) != 0.0);
            let g = if covered {
                ((map.get(channel, y, x) + 1.0) * 0.5 * 255.0).clamp(0.0, 255.0) as u8
            } else {
                255
            };
            out.extend_from_slice(&[g, g, g, 255]);
        }
    }
    Ok(out)
}

/// Feature width `3 (2q + 1)` for the given order.
#[wasm_bindgen]
pub fn feature_channels(order: usize) -> usize {
    splatrecon::fourier::feature_dim(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splat_pixels_have_rgba_layout() {
        let px = splat_pixels(200, 0.08, 0.8, 30.0, 16, true).unwrap();
        assert_eq!(px.len(), 4 * 16 * 16);
        assert!(px.chunks(4).all(|p| p[3] == 255));
        assert!(px.chunks(4).any(|p| p[..3] != [255, 255, 255]));
    }

    #[test]
    fn fourier_channel_covers_disk() {
        let px = fourier_pixels(2, 0, 24).unwrap();
        let white = px.chunks(4).filter(|p| p[0] == 255).count();
        assert!(white > 0 && white < 24 * 24);
        assert!(fourier_pixels(2, 99, 24).is_err());
    }

    #[test]
    fn remesh_runs_small() {
        let r = remesh_impl(5, 32, 1.0, 0.0, 24).unwrap();
        assert_eq!(r.refined_pixels().len(), 4 * 24 * 24);
        let v: serde_json::Value = serde_json::from_str(&r.report()).unwrap();
        assert!(v["final"]["total"].as_f64().unwrap() <= v["initial"]["total"].as_f64().unwrap());
    }
}

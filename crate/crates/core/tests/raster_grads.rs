use splatrecon::camera::{make_camera_rig, OrthoCamera, Rig};
use splatrecon::gaussian::{quaternion_to_rotmat, Vec3};
use splatrecon::mesh::TriMesh;
use splatrecon::raster::{render_mesh, MeshGrads, MeshTopology, SoftRenderConfig};
use splatrecon::shapes::{icosphere, uv_sphere};
use splatrecon::FeatureMap;

struct Case {
    mesh: TriMesh,
    topo: MeshTopology,
    cam: OrthoCamera,
    cfg: SoftRenderConfig,
    normal: FeatureMap,
    mask: FeatureMap,
}

impl Case {
    fn new() -> Self {
        let rot = quaternion_to_rotmat([0.95, 0.1, 0.2, 0.05_f64].map(|v| v / (0.95f64 * 0.95 + 0.01 + 0.04 + 0.0025).sqrt())).unwrap();
        let mesh = uv_sphere(4, 6, 0.62).transformed(&rot, &Vec3::new(0.05, -0.03, 0.0));
        assert_eq!(mesh.vertices.len(), 20);
        let cam = make_camera_rig(Rig::Front3, 32, 1.0).unwrap().remove(0);
        let cfg = SoftRenderConfig { sigma_edge: 1.5, ..Default::default() };
        let target = render_mesh(&icosphere(3, 0.7), &cam, &cfg).unwrap();
        Case {
            topo: MeshTopology::new(&mesh),
            mesh,
            cam,
            cfg,
            normal: target.image,
            mask: target.alpha,
        }
    }

    fn eval(&self, mesh: &TriMesh) -> MeshGrads {
        self.topo.render_with_grads(mesh, &self.cam, &self.cfg, &self.normal, &self.mask).unwrap()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    let case = Case::new();
    let base = case.eval(&case.mesh);
    assert!(base.loss_normal > 1e-4 && base.loss_mask > 1e-4);
    let h = 1e-4;
    let (mut checked, mut worst_n, mut worst_m) = (0, 0.0f64, 0.0f64);
    let scale_n = base.grad_normal.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let scale_m = base.grad_mask.iter().map(|g| g.amax()).fold(0.0, f64::max);
    for v in 0..case.mesh.vertices.len() {
        for k in 0..3 {
            let mut plus = case.mesh.clone();
            plus.vertices[v][k] += h;
            let mut minus = case.mesh.clone();
            minus.vertices[v][k] -= h;
            let (p, m) = (case.eval(&plus), case.eval(&minus));
            let same = |g: &MeshGrads| g.render.assignment == base.render.assignment && g.counted == base.counted;
            if !same(&p) || !same(&m) {
                continue;
            }
            checked += 1;
            let fd_n = (p.loss_normal - m.loss_normal) / (2.0 * h);
            let fd_m = (p.loss_mask - m.loss_mask) / (2.0 * h);
            let (an, am) = (base.grad_normal[v][k], base.grad_mask[v][k]);
            if an.abs().max(fd_n.abs()) > 1e-6 * scale_n {
                worst_n = worst_n.max(rel_err(an, fd_n));
            }
            if am.abs().max(fd_m.abs()) > 1e-6 * scale_m {
                worst_m = worst_m.max(rel_err(am, fd_m));
            }
        }
    }
    println!("checked {checked} coords, worst rel err normal {worst_n:e} mask {worst_m:e}");
    assert!(checked >= 40, "only {checked} coordinates free of visibility flips");
    assert!(worst_n < 1e-3 && worst_m < 1e-3);
}

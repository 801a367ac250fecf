//! Geometric core of a monocular human reconstruction pipeline.
//!
//! * [`fourier`]: Fourier expansion of body points, triangle densification,
//!   three-view projection into feature stacks and Plücker camera maps.
//! * [`raster`]: software Gaussian-splat renderer and a soft mesh rasterizer
//!   with analytic vertex gradients.
//! * [`remesh`]: coarse mesh extraction from a Gaussian density field and
//!   refinement against rendered normal/mask targets with a Laplacian term.
//! * [`netshell`]: weight-loadable toy skeletons of the learned components.
//! * [`metrics`]: Chamfer distance, normal consistency, F-score, PSNR, SSIM.

pub mod camera;
pub mod error;
pub mod feature;
pub mod fourier;
pub mod gaussian;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod netshell;
pub mod nn;
pub mod par;
pub mod ply;
pub mod raster;
pub mod remesh;
pub mod shapes;

pub use camera::{make_camera_rig, OrthoCamera, Rig};
pub use error::{Error, Result};
pub use feature::{FeatureMap, Tensor};
pub use gaussian::{Gaussian, GaussianSet, Mat3, Vec3};
pub use mesh::TriMesh;

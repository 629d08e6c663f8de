//! Linear blendshape head model with an articulated jaw, weak-perspective
//! camera fitting and per-frame parameter fitting.

mod camera;
mod fit;
mod mesh;
mod rig;

pub use camera::{fit_camera, project, reprojection_sse, CameraParams};
pub use fit::{fit_parameters, moving_average, FitConfig, FitResult, FitStatus};
pub use mesh::{export_mesh_sequence, read_obj_vertices, write_params_csv};
pub use rig::{evaluate_rig, BlendshapeRig, FaceParams};

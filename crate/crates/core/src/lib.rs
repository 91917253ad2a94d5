//! Extrinsic calibration refinement for RGB-D multi-camera rigs.
//!
//! Camera poses are refined by minimizing a weighted sum of a 3D alignment
//! cost (corresponding depth points transformed into the world frame) and a
//! 2D reprojection cost (bundle adjustment over color features). Under
//! isotropic Gaussian measurement noise the maximum-likelihood weight is
//! `w = 2σ²₃D / σ²₂D`; when the noise levels are unknown they are estimated
//! from the residuals, alternating with pose refinement.
//!
//! Modules:
//! - [`geometry`]: poses, rotations, pinhole projection.
//! - [`scene`]: synthetic rigs and noisy measurement generation.
//! - [`init`]: DLT pose initialization.
//! - [`costs`]: residuals and the BA, ICP, joint and BAICP+ objectives.
//! - [`solver`]: Levenberg–Marquardt refinement.
//! - [`autoweight`]: joint estimation of noise variances and poses.
//! - [`eval`]: error metrics, boxplot statistics and the experiment runner.
//! - [`io`]: dataset, configuration and results file formats.

pub mod autoweight;
pub mod costs;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod init;
pub mod io;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, Pose, Rotation, Vector2, Vector3};
pub use scene::{Dataset, Preset, SceneConfig};

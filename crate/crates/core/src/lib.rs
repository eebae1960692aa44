//! Desk-scale laboratory for view-consistent video diffusion training.
//!
//! The crate trains a small camera-conditioned video denoiser on procedurally
//! generated multi-view scenes with exact per-pixel 3D ground truth, adds a
//! ranking-based view-consistency loss on intermediate denoiser features, and
//! ships the evaluation stack (correspondence recall, ground-truth reprojection
//! error, PSNR/SSIM, correlation statistics) needed to measure whether the
//! auxiliary loss makes generated videos more 3D-consistent.

pub mod autodiff;
pub mod consistency;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod rng;
pub mod scenegen;
pub mod train;

pub use geometry::{CameraIntrinsics, PointMap, SE3Pose, Vec3};
pub use scenegen::{CameraFrame, VideoSample};


//! Rolling-shutter-aware 3D reconstruction toolkit.
//!
//! The crate synthesizes rolling-shutter image datasets from procedural
//! scenes along continuous camera trajectories, and recovers both the scene
//! (an explicit voxel radiance field) and the per-row camera trajectory from
//! those images by joint gradient-based optimization. Row poses come from
//! linear twist interpolation between two learnable endpoint poses per frame;
//! training adds a trajectory smoothness regularizer and a PP-ratio
//! multi-sampling scheme that lets nearby row poses reuse a pixel's color.

pub mod camera;
pub mod config;
pub mod error;
pub mod field;
pub mod io;
pub mod math;
pub mod metrics;
pub mod multisample;
pub mod optim;
pub mod render;
pub mod rng;
pub mod se3;
pub mod trainer;

pub use error::{Error, Result};
pub use field::{AnalyticScene, Field, GridGradient, RadianceGrid};
pub use io::Image;
pub use math::{Aabb, Mat3, Vec3};
pub use render::{Intrinsics, Ray, RenderOptions, RenderResult};
pub use se3::{exp, log, FramePoseParams, Pose, Twist};

//! Dense omnidirectional mapping for a wide-baseline rig of four fisheye cameras.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`geometry`]: fisheye lens model, rig extrinsics, the equirectangular
//!   sphere grid and SE(3) utilities.
//! * [`sweep`]: spherical-sweep stereo producing 360° inverse-depth maps.
//! * [`odometry`]: depth-integrated rig odometry (RANSAC, pose-only and local BA).
//! * [`loop_closing`]: loop candidate search, circular-shift verification and
//!   pose-graph optimization.
//! * [`tsdf`] and [`mesh`]: volumetric fusion and marching-cubes extraction.
//! * [`eval`]: depth-index error, completeness/accuracy and trajectory metrics.
//! * [`io`]: PFM, TUM and track file formats.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod loop_closing;
pub mod mesh;
pub mod odometry;
pub mod sweep;
pub mod tsdf;

pub use error::{Error, Result};
pub use geometry::{DepthMap, FisheyeCamera, Rig, Se3, SphereGrid, NUM_CAMERAS};

//! Noise-aware processing of structured-light depth maps.
//!
//! The depth error of a structured-light stereo camera grows with the square of
//! depth. The modules here model that error and use it in three places:
//!
//! * [`denoise`]: bilateral filtering whose range kernel scales with `Z^2`,
//! * [`tsdf`]: volumetric scan merging with inverse-variance (`1/Z^4`) weights,
//! * [`planes`]: plane extraction in disparity space, where noise is depth independent.
//!
//! [`depth_image`] provides rasters, pinhole geometry and a ray-cast synthetic sensor
//! that serves as ground truth, and [`io`] the on-disk formats.

pub mod denoise;
pub mod depth_image;
pub mod io;
pub mod noise_model;
pub mod planes;
pub mod tsdf;

pub use depth_image::{DepthMap, DisparityMap, PointCloud, Pose};
pub use noise_model::{CameraModel, NoiseParams, ResolutionAnalysis};

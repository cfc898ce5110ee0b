//! Depth and disparity rasters, pinhole projection geometry and the synthetic
//! sensor used as ground truth by the rest of the crate.

mod scene;

pub use scene::{synth_scene, Aabb, LabelMap, Surface, SynthOptions, SynthScene};

use nalgebra::{Matrix3, Matrix3x4, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise_model::{CameraModel, ModelError};

/// Tolerance on `RᵀR = I` and `det R = 1` for a pose rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("raster of {width}x{height} needs {expected} samples, got {got}")]
    DimensionMismatch {
        width: usize,
        height: usize,
        expected: usize,
        got: usize,
    },
    #[error("valid pixel ({x}, {y}) has non-positive value {value}")]
    InvalidSample { x: usize, y: usize, value: f64 },
    #[error("point lies at or behind the camera plane (camera-frame depth {0})")]
    BehindCamera(f64),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("degenerate surface {index}: {reason}")]
    DegenerateSurface { index: usize, reason: String },
    #[error("scene has no surfaces")]
    EmptyScene,
    #[error(transparent)]
    Model(#[from] ModelError),
}

macro_rules! masked_raster {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            width: usize,
            height: usize,
            values: Vec<f64>,
            valid: Vec<bool>,
        }

        impl $name {
            /// An all-invalid raster.
            pub fn new(width: usize, height: usize) -> Self {
                Self {
                    width,
                    height,
                    values: vec![0.0; width * height],
                    valid: vec![false; width * height],
                }
            }

            #[doc = concat!("Builds a raster from row-major ", $what, " values; non-positive or non-finite samples become invalid.")]
            pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
                check_len(width, height, values.len())?;
                let valid: Vec<bool> = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
                let values = values
                    .into_iter()
                    .zip(&valid)
                    .map(|(v, ok)| if *ok { v } else { 0.0 })
                    .collect();
                Ok(Self { width, height, values, valid })
            }

            /// Builds a raster from values and an explicit mask. Invalid pixels are reset to the 0 sentinel.
            pub fn from_parts(
                width: usize,
                height: usize,
                mut values: Vec<f64>,
                valid: Vec<bool>,
            ) -> Result<Self, GeometryError> {
                check_len(width, height, values.len())?;
                check_len(width, height, valid.len())?;
                for (i, (v, ok)) in values.iter_mut().zip(&valid).enumerate() {
                    if *ok {
                        if !(v.is_finite() && *v > 0.0) {
                            return Err(GeometryError::InvalidSample { x: i % width, y: i / width, value: *v });
                        }
                    } else {
                        *v = 0.0;
                    }
                }
                Ok(Self { width, height, values, valid })
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            #[inline]
            pub fn index(&self, x: usize, y: usize) -> usize {
                y * self.width + x
            }

            #[inline]
            pub fn get(&self, x: usize, y: usize) -> Option<f64> {
                let i = self.index(x, y);
                self.valid[i].then(|| self.values[i])
            }

            /// Sets a pixel; `None`, non-positive and non-finite values mark it invalid.
            pub fn set(&mut self, x: usize, y: usize, value: Option<f64>) {
                let i = self.index(x, y);
                match value {
                    Some(v) if v.is_finite() && v > 0.0 => {
                        self.values[i] = v;
                        self.valid[i] = true;
                    }
                    _ => {
                        self.values[i] = 0.0;
                        self.valid[i] = false;
                    }
                }
            }

            /// Row-major samples; invalid pixels hold 0.
            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn valid_mask(&self) -> &[bool] {
                &self.valid
            }

            pub fn is_valid(&self, x: usize, y: usize) -> bool {
                self.valid[self.index(x, y)]
            }

            pub fn valid_count(&self) -> usize {
                self.valid.iter().filter(|v| **v).count()
            }

            /// `(x, y, value)` for every valid pixel in row-major order.
            pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
                let w = self.width;
                self.values
                    .iter()
                    .zip(&self.valid)
                    .enumerate()
                    .filter(|(_, (_, ok))| **ok)
                    .map(move |(i, (v, _))| (i % w, i / w, *v))
            }
        }
    };
}

masked_raster!(
    /// Row-major depth raster in millimetres with a validity mask. Invalid pixels carry 0.
    DepthMap,
    "depth (mm)"
);

masked_raster!(
    /// Row-major disparity raster in pixels with a validity mask.
    DisparityMap,
    "disparity (px)"
);

fn check_len(width: usize, height: usize, got: usize) -> Result<(), GeometryError> {
    let expected = width * height;
    if expected != got {
        return Err(GeometryError::DimensionMismatch {
            width,
            height,
            expected,
            got,
        });
    }
    Ok(())
}

/// 3D points in millimetres, optionally tagged with the pixel they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub pixels: Option<Vec<(usize, usize)>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `X -> R X + T` to every point.
    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform(p)).collect(),
            pixels: self.pixels.clone(),
        }
    }
}

/// Rigid world-to-camera transform: a world point `P` sits at `R P + T` in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 12]", into = "[f64; 12]")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::InvalidPose("non-finite entry".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        if ortho > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!(
                "RᵀR deviates from I by {ortho:e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!("det R = {det}")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Parses a row-major 3x4 `[R | T]` matrix.
    pub fn from_row_major(m: &[f64; 12]) -> Result<Self, GeometryError> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Camera center in world coordinates, `-Rᵀ T`.
    pub fn camera_center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Projection matrix `M = K [R | T]`.
    pub fn projection_matrix(&self, cam: &CameraModel) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        intrinsic_matrix(cam) * rt
    }
}

impl TryFrom<[f64; 12]> for Pose {
    type Error = GeometryError;

    fn try_from(m: [f64; 12]) -> Result<Self, Self::Error> {
        Pose::from_row_major(&m)
    }
}

impl From<Pose> for [f64; 12] {
    fn from(p: Pose) -> Self {
        p.to_row_major()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Upper-triangular calibration matrix `K` with `K(3,3) = 1`.
pub fn intrinsic_matrix(cam: &CameraModel) -> Matrix3<f64> {
    Matrix3::new(
        cam.focal, 0.0, cam.cx, 0.0, cam.focal, cam.cy, 0.0, 0.0, 1.0,
    )
}

/// A projected point: sub-pixel image position and camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

/// Lifts pixel `(x, y)` with depth `z` to `((x-u)Z/f, (y-v)Z/f, Z)`.
#[inline]
pub fn backproject_pixel(x: f64, y: f64, z: f64, cam: &CameraModel) -> Point3<f64> {
    Point3::new(
        (x - cam.cx) * z / cam.focal,
        (y - cam.cy) * z / cam.focal,
        z,
    )
}

pub fn backproject(map: &DepthMap, cam: &CameraModel) -> PointCloud {
    let (points, pixels) = map
        .iter_valid()
        .map(|(x, y, z)| (backproject_pixel(x as f64, y as f64, z, cam), (x, y)))
        .unzip();
    PointCloud {
        points,
        pixels: Some(pixels),
    }
}

/// Projects a world point into the camera at `pose`.
pub fn project(
    p: &Point3<f64>,
    pose: &Pose,
    cam: &CameraModel,
) -> Result<Projection, GeometryError> {
    let pc = pose.transform(p);
    if !(pc.z > 0.0) {
        return Err(GeometryError::BehindCamera(pc.z));
    }
    Ok(Projection {
        x: cam.focal * pc.x / pc.z + cam.cx,
        y: cam.focal * pc.y / pc.z + cam.cy,
        depth: pc.z,
    })
}

/// Per-pixel `fB / Z`, keeping the validity mask.
pub fn depth_map_to_disparity_map(map: &DepthMap, cam: &CameraModel) -> DisparityMap {
    let fb = cam.fb();
    let values = map
        .values()
        .par_iter()
        .zip(map.valid_mask())
        .map(|(z, ok)| if *ok { fb / z } else { 0.0 })
        .collect();
    DisparityMap::from_parts(map.width(), map.height(), values, map.valid_mask().to_vec())
        .expect("fB/Z of a positive depth is positive")
}

/// Per-pixel `fB / D`, keeping the validity mask.
pub fn disparity_map_to_depth_map(map: &DisparityMap, cam: &CameraModel) -> DepthMap {
    let fb = cam.fb();
    let values = map
        .values()
        .par_iter()
        .zip(map.valid_mask())
        .map(|(d, ok)| if *ok { fb / d } else { 0.0 })
        .collect();
    DepthMap::from_parts(map.width(), map.height(), values, map.valid_mask().to_vec())
        .expect("fB/D of a positive disparity is positive")
}

//! Plane extraction in disparity space.
//!
//! A world plane `aX + bY + cZ + 1 = 0` seen by a pinhole stereo camera has a disparity
//! image that is exactly affine in the pixel coordinates:
//!
//! ```text
//! D(x, y) = αx + βy + γ,   α = -aB,  β = -bB,  γ = -B(cf - au - bv)
//! ```
//!
//! Disparity noise does not depend on depth, so a single fixed threshold on the
//! Laplacian-of-Gaussian response separates planar from non-planar pixels at every
//! distance, and a single fixed residual threshold decides plane membership. Pixel
//! coordinates are `(x, y) = (column, row)` of pixel centers.

mod baseline;
mod fit;
mod log;
mod refine;
mod rotation;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth_image::GeometryError;
use crate::noise_model::{CameraModel, ModelError};

pub use baseline::{fixed_threshold_baseline, BaselineReport};
pub use fit::fit_plane_disparity;
pub use log::{log_kernel, log_response, segment_planar, LogResponse};
pub use refine::{extract_planes, refine_segmentation, PlaneSegmentation};
pub use rotation::{rotation_angle, rotation_from_matched_planes};

#[derive(Debug, Error, PartialEq)]
pub enum PlaneError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate support: {0}")]
    Degenerate(String),
    #[error("underdetermined: {0}")]
    Underdetermined(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Plane extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaneParams {
    /// LoG scale in pixels.
    pub sigma: f64,
    /// Fixed threshold on `|LoG response|` (px of disparity per px^2).
    pub tau: f64,
    /// Smallest connected component kept as a plane candidate.
    pub min_area: usize,
    /// Disparity residual bound for plane membership; `None` = three disparity steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_threshold: Option<f64>,
    /// Maximum angle between normals of planes that may merge.
    pub merge_angle_deg: f64,
    pub max_iterations: usize,
}

impl Default for PlaneParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            tau: 0.02,
            min_area: 100,
            residual_threshold: None,
            merge_angle_deg: 2.0,
            max_iterations: 50,
        }
    }
}

impl PlaneParams {
    pub fn residual_threshold(&self, cam: &CameraModel) -> f64 {
        self.residual_threshold.unwrap_or(3.0 * cam.disparity_step)
    }

    pub fn validate(&self) -> Result<(), PlaneError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sigma) {
            return Err(PlaneError::InvalidParameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !positive(self.tau) {
            return Err(PlaneError::InvalidParameter(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if let Some(t) = self.residual_threshold {
            if !positive(t) {
                return Err(PlaneError::InvalidParameter(format!(
                    "residual threshold must be > 0, got {t}"
                )));
            }
        }
        if !(self.merge_angle_deg.is_finite() && self.merge_angle_deg >= 0.0) {
            return Err(PlaneError::InvalidParameter(
                "merge angle must be >= 0".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(PlaneError::InvalidParameter(
                "max_iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A plane in both parameterizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    /// `(α, β, γ)` with `D(x, y) = αx + βy + γ`.
    pub affine: [f64; 3],
    /// `(a, b, c)` with `aX + bY + cZ + 1 = 0`, camera frame.
    pub world: [f64; 3],
    /// Number of pixels assigned to the plane.
    pub support: usize,
}

impl PlaneModel {
    pub fn from_affine(
        affine: [f64; 3],
        support: usize,
        cam: &CameraModel,
    ) -> Result<Self, PlaneError> {
        Ok(Self {
            affine,
            world: disparity_plane_to_world(affine, cam)?,
            support,
        })
    }

    pub fn from_world(
        world: [f64; 3],
        support: usize,
        cam: &CameraModel,
    ) -> Result<Self, PlaneError> {
        Ok(Self {
            affine: world_to_affine(world, cam)?,
            world,
            support,
        })
    }

    #[inline]
    pub fn disparity_at(&self, x: f64, y: f64) -> f64 {
        let [al, be, ga] = self.affine;
        al * x + be * y + ga
    }

    /// Unit normal of the world plane, pointing toward the camera side.
    pub fn unit_normal(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::from(self.world).normalize()
    }
}

/// `(a, b, c) -> (α, β, γ)`.
pub fn world_to_affine(world: [f64; 3], cam: &CameraModel) -> Result<[f64; 3], PlaneError> {
    cam.validate()?;
    let [a, b, c] = world;
    let bl = cam.baseline;
    let out = [
        -a * bl,
        -b * bl,
        -bl * (c * cam.focal - a * cam.cx - b * cam.cy),
    ];
    if out.iter().any(|v| !v.is_finite()) {
        return Err(PlaneError::InvalidParameter(
            "non-finite plane coefficients".into(),
        ));
    }
    Ok(out)
}

/// `(α, β, γ) -> (a, b, c)`; fails when the disparity plane is identically zero
/// (a plane at infinity has no world form).
pub fn disparity_plane_to_world(
    affine: [f64; 3],
    cam: &CameraModel,
) -> Result<[f64; 3], PlaneError> {
    cam.validate()?;
    let [al, be, ga] = affine;
    let bl = cam.baseline;
    let a = -al / bl;
    let b = -be / bl;
    let c = (-ga / bl + a * cam.cx + b * cam.cy) / cam.focal;
    let out = [a, b, c];
    if out.iter().any(|v| !v.is_finite()) || out.iter().all(|v| *v == 0.0) {
        return Err(PlaneError::Degenerate(
            "disparity plane has no finite world form".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth_image::{backproject_pixel, synth_scene, Surface, SynthOptions};
    use crate::Pose;

    #[test]
    fn fronto_parallel_forms() {
        let cam = CameraModel::kinect(640, 480);
        let affine = world_to_affine([0.0, 0.0, -0.001], &cam).unwrap();
        assert!(affine[0].abs() < 1e-15 && affine[1].abs() < 1e-15);
        assert!((affine[2] - 587.0 * 75.0 / 1000.0).abs() < 1e-12);
        let world = disparity_plane_to_world([0.0, 0.0, 44.025], &cam).unwrap();
        assert!((world[2] + 0.001).abs() < 1e-15);
    }

    #[test]
    fn round_trip_is_identity() {
        let cam = CameraModel::kinect(640, 480);
        let world = [0.0003, -0.0007, -0.0011];
        let back = disparity_plane_to_world(world_to_affine(world, &cam).unwrap(), &cam).unwrap();
        for i in 0..3 {
            assert!((back[i] - world[i]).abs() <= 1e-12 * world[i].abs().max(1e-3));
        }
        assert!(disparity_plane_to_world([0.0; 3], &cam).is_err());
    }

    #[test]
    fn floor_like_plane_points_satisfy_world_equation() {
        // Floor 800 mm below a camera pitched down by 20° (y points down in the image).
        let cam = CameraModel::kinect(160, 120);
        let t = 20f64.to_radians();
        let world = [0.0, -t.cos() / 800.0, -t.sin() / 800.0];
        let floor = Surface::Plane {
            coeffs: world,
            bounds: None,
        };
        let scan = synth_scene(
            &[floor],
            &cam,
            &Pose::identity(),
            160,
            120,
            &SynthOptions::quantized(),
        )
        .unwrap();
        let dmap = crate::depth_image::depth_map_to_disparity_map(&scan.depth, &cam);
        let pts: Vec<_> = dmap
            .iter_valid()
            .map(|(x, y, d)| (x as f64, y as f64, d))
            .collect();
        assert!(pts.len() > 1000);
        let affine = fit_plane_disparity(&pts).unwrap();
        let est = disparity_plane_to_world(affine, &cam).unwrap();
        for (x, y, z) in scan.depth.iter_valid() {
            let p = backproject_pixel(x as f64, y as f64, z, &cam);
            let e = nalgebra::Vector3::from(est);
            // Point-to-plane distance stays below the local depth quantization step.
            let dist = (e.dot(&p.coords) + 1.0).abs() / e.norm();
            let step = z * z / cam.fb() * cam.disparity_step + cam.depth_step;
            assert!(dist < step, "{dist} at z = {z}");
        }
    }
}

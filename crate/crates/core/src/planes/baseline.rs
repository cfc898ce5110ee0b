//! The fixed metric-threshold plane test that disparity-space extraction replaces:
//! a 3D point belongs to a plane when its point-to-plane distance is at most `T` mm.
//! Because depth noise grows as `Z^2`, no single `T` works at all depths.

use nalgebra::Vector3;
use serde::Serialize;

use super::PlaneError;
use crate::depth_image::{backproject_pixel, DepthMap, LabelMap};
use crate::noise_model::CameraModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReport {
    pub threshold_mm: f64,
    /// Per plane: fraction of its pixels within `T` of it.
    pub recall: Vec<f64>,
    /// Per plane: fraction of its pixels also within `T` of another plane.
    pub ambiguous: Vec<f64>,
    /// Per plane: fraction of its pixels accepted by it and by no other plane.
    pub accuracy: Vec<f64>,
}

/// Runs the fixed-threshold test of every valid pixel against `oracle` planes
/// (`aX + bY + cZ + 1 = 0`, camera frame). `truth` holds the index of each pixel's
/// true plane; pixels with other labels are ignored.
pub fn fixed_threshold_baseline(
    depth: &DepthMap,
    truth: &LabelMap,
    oracle: &[[f64; 3]],
    cam: &CameraModel,
    threshold_mm: f64,
) -> Result<BaselineReport, PlaneError> {
    if !(threshold_mm.is_finite() && threshold_mm > 0.0) {
        return Err(PlaneError::InvalidParameter(format!(
            "threshold must be > 0, got {threshold_mm}"
        )));
    }
    if truth.width != depth.width() || truth.height != depth.height() {
        return Err(PlaneError::InvalidParameter(
            "label map and depth map differ in size".into(),
        ));
    }
    let normals: Vec<Vector3<f64>> = oracle.iter().map(|n| Vector3::from(*n)).collect();
    let k = oracle.len();
    let (mut total, mut hit, mut amb, mut ok) = (
        vec![0usize; k],
        vec![0usize; k],
        vec![0usize; k],
        vec![0usize; k],
    );
    for (x, y, z) in depth.iter_valid() {
        let Some(label) = truth.get(x, y).map(usize::from).filter(|l| *l < k) else {
            continue;
        };
        let p = backproject_pixel(x as f64, y as f64, z, cam).coords;
        let accepted: Vec<bool> = normals
            .iter()
            .map(|n| (n.dot(&p) + 1.0).abs() / n.norm() <= threshold_mm)
            .collect();
        let others = accepted.iter().enumerate().any(|(j, a)| *a && j != label);
        total[label] += 1;
        if accepted[label] {
            hit[label] += 1;
            if others {
                amb[label] += 1;
            } else {
                ok[label] += 1;
            }
        }
    }
    let frac = |v: &[usize]| {
        v.iter()
            .zip(&total)
            .map(|(a, t)| if *t == 0 { 0.0 } else { *a as f64 / *t as f64 })
            .collect()
    };
    Ok(BaselineReport {
        threshold_mm,
        recall: frac(&hit),
        ambiguous: frac(&amb),
        accuracy: frac(&ok),
    })
}

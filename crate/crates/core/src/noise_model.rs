//! Closed-form noise model of a structured-light stereo depth camera.
//!
//! Depth is recovered from disparity as `Z = fB / D`. Disparity is estimated on a
//! finite sub-pixel grid, so its error has a depth-independent spread, and the
//! induced depth error grows with `Z^2 / (fB)`. This module holds the camera
//! constants, the forward/inverse conversions, the quantizer used by the
//! synthetic sensor and the unique-depth resolution analysis.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Focal length of the Kinect IR camera in pixels.
pub const KINECT_FOCAL_PX: f64 = 587.0;
/// Projector to camera baseline of the Kinect in millimetres.
pub const KINECT_BASELINE_MM: f64 = 75.0;
/// Sub-pixel disparity resolution of the Kinect.
pub const KINECT_DISPARITY_STEP: f64 = 0.125;
/// Output depth quantization of the Kinect in millimetres.
pub const KINECT_DEPTH_STEP_MM: f64 = 1.0;

/// Gap histogram bin width used when looking for the modal disparity gap.
const GAP_BIN_PX: f64 = 1e-4;
/// Largest disparity shift from depth rounding tolerated by the sub-pixel estimate.
pub const MAX_ROUNDING_JITTER_PX: f64 = 0.01;
/// Relative tolerance for snapping an estimated step onto `1/n`.
const UNIT_FRACTION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("depth must be positive and finite, got {0}")]
    NonPositiveDepth(f64),
    #[error("disparity must be positive and finite, got {0}")]
    NonPositiveDisparity(f64),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),
    #[error("depth range [{0}, {1}] is empty or non-positive")]
    InvalidRange(f64, f64),
    #[error("not enough distinct values for analysis: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

/// Pinhole IR camera paired with a projector at baseline `baseline`.
///
/// `cx`/`cy` use the pixel-center convention: pixel `(x, y)` samples the ray
/// through `((x - cx) / f, (y - cy) / f, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub focal: f64,
    /// Baseline in millimetres.
    pub baseline: f64,
    pub cx: f64,
    pub cy: f64,
    /// Disparity quantization in pixels.
    pub disparity_step: f64,
    /// Output depth quantization in millimetres.
    pub depth_step: f64,
}

impl CameraModel {
    pub fn new(
        focal: f64,
        baseline: f64,
        cx: f64,
        cy: f64,
        disparity_step: f64,
        depth_step: f64,
    ) -> Result<Self, ModelError> {
        let cam = Self {
            focal,
            baseline,
            cx,
            cy,
            disparity_step,
            depth_step,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Kinect constants with the principal point at the image center.
    pub fn kinect(width: usize, height: usize) -> Self {
        Self {
            focal: KINECT_FOCAL_PX,
            baseline: KINECT_BASELINE_MM,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            disparity_step: KINECT_DISPARITY_STEP,
            depth_step: KINECT_DEPTH_STEP_MM,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.focal) {
            return Err(ModelError::InvalidCamera(format!(
                "focal length {} must be > 0",
                self.focal
            )));
        }
        if !positive(self.baseline) {
            return Err(ModelError::InvalidCamera(format!(
                "baseline {} must be > 0",
                self.baseline
            )));
        }
        if !positive(self.disparity_step) {
            return Err(ModelError::InvalidCamera(format!(
                "disparity step {} must be > 0",
                self.disparity_step
            )));
        }
        if !positive(self.depth_step) {
            return Err(ModelError::InvalidCamera(format!(
                "depth step {} must be > 0",
                self.depth_step
            )));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(ModelError::InvalidCamera(
                "principal point must be finite".into(),
            ));
        }
        if !positive(self.fb()) {
            return Err(ModelError::InvalidCamera("f*B overflows".into()));
        }
        Ok(())
    }

    /// The product `f * B` in mm·px.
    #[inline]
    pub fn fb(&self) -> f64 {
        self.focal * self.baseline
    }

    pub fn depth_to_disparity(&self, z: f64) -> Result<f64, ModelError> {
        check_depth(z)?;
        Ok(self.fb() / z)
    }

    pub fn disparity_to_depth(&self, d: f64) -> Result<f64, ModelError> {
        if !(d.is_finite() && d > 0.0) {
            return Err(ModelError::NonPositiveDisparity(d));
        }
        Ok(self.fb() / d)
    }

    /// Derivative `dZ/dD = -Z^2 / (fB)`: depth change per pixel of disparity error.
    pub fn depth_sensitivity(&self, z: f64) -> Result<f64, ModelError> {
        check_depth(z)?;
        Ok(-z * z / self.fb())
    }

    /// Rounds a disparity to the nearest multiple of `disparity_step`, ties away from zero.
    #[inline]
    pub fn quantize_disparity(&self, d: f64) -> f64 {
        (d / self.disparity_step).round() * self.disparity_step
    }

    /// Rounds a depth to the nearest multiple of `depth_step`, ties away from zero.
    #[inline]
    pub fn quantize_depth(&self, z: f64) -> f64 {
        (z / self.depth_step).round() * self.depth_step
    }

    /// Sensor quantizer: depth -> disparity -> disparity grid -> depth -> depth grid.
    ///
    /// Returns `None` when the disparity rounds to zero (no return from the sensor).
    pub fn quantize(&self, z: f64) -> Result<Option<f64>, ModelError> {
        let d = self.quantize_disparity(self.depth_to_disparity(z)?);
        self.quantize_from_disparity(d)
    }

    /// Second half of [`CameraModel::quantize`] for a disparity already perturbed by noise.
    pub fn quantize_from_disparity(&self, d: f64) -> Result<Option<f64>, ModelError> {
        let dq = self.quantize_disparity(d);
        if dq <= 0.0 {
            return Ok(None);
        }
        let z = self.quantize_depth(self.fb() / dq);
        Ok((z > 0.0).then_some(z))
    }

    /// Default range coefficient: one disparity step propagated through the sensitivity,
    /// `k = disparity_step / (fB)`.
    pub fn default_noise(&self) -> NoiseParams {
        NoiseParams {
            k: self.disparity_step / self.fb(),
        }
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::kinect(640, 480)
    }
}

fn check_depth(z: f64) -> Result<(), ModelError> {
    if z.is_finite() && z > 0.0 {
        Ok(())
    } else {
        Err(ModelError::NonPositiveDepth(z))
    }
}

/// Depth noise scale, `sigma(Z) = k Z^2` with `k` in mm^-1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub k: f64,
}

impl NoiseParams {
    pub fn new(k: f64) -> Result<Self, ModelError> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(ModelError::InvalidNoise(format!("k must be >= 0, got {k}")));
        }
        Ok(Self { k })
    }

    pub fn depth_sigma(&self, z: f64) -> Result<f64, ModelError> {
        check_depth(z)?;
        Ok(self.k * z * z)
    }
}

/// Inverse-variance fusion weight for a depth observation, `1 / Z^4`.
pub fn fusion_weight(z: f64) -> Result<f64, ModelError> {
    check_depth(z)?;
    let z2 = z * z;
    Ok(1.0 / (z2 * z2))
}

/// Unique-depth resolution analysis of a set of depth observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionAnalysis {
    /// Strictly increasing unique depths (mm).
    pub unique_depths: Vec<f64>,
    /// `unique_depths[k] - unique_depths[k-1]`.
    pub delta_z: Vec<f64>,
    /// Slope of `ln(ΔZ)` against `ln(Z)`.
    pub slope: f64,
    pub intercept: f64,
}

impl ResolutionAnalysis {
    /// `(Z, ΔZ)` pairs as used by the fit: each gap is paired with its lower depth.
    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.unique_depths
            .iter()
            .copied()
            .zip(self.delta_z.iter().copied())
    }
}

/// Runs every integer-millimetre depth in `[z_min, z_max]` through the sensor quantizer
/// and analyses the surviving unique depths.
pub fn simulate_quantized_depths(
    z_min: f64,
    z_max: f64,
    cam: &CameraModel,
) -> Result<ResolutionAnalysis, ModelError> {
    cam.validate()?;
    if !(z_min.is_finite() && z_max.is_finite() && z_min > 0.0 && z_min < z_max) {
        return Err(ModelError::InvalidRange(z_min, z_max));
    }
    let lo = z_min.ceil() as i64;
    let hi = z_max.floor() as i64;
    let mut depths = Vec::with_capacity((hi - lo + 1).max(0) as usize);
    for z in lo..=hi {
        if let Some(q) = cam.quantize(z as f64)? {
            depths.push(q);
        }
    }
    analyze_depth_resolution(depths)
}

/// Sorts and deduplicates the depths, forms consecutive gaps and fits
/// `ln ΔZ = slope * ln Z + intercept` by ordinary least squares.
pub fn analyze_depth_resolution<I>(depths: I) -> Result<ResolutionAnalysis, ModelError>
where
    I: IntoIterator<Item = f64>,
{
    let mut unique: Vec<f64> = depths
        .into_iter()
        .filter(|z| z.is_finite() && *z > 0.0)
        .collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    if unique.len() < 3 {
        return Err(ModelError::InsufficientData {
            needed: 3,
            got: unique.len(),
        });
    }
    let delta_z: Vec<f64> = unique.windows(2).map(|w| w[1] - w[0]).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = unique
        .iter()
        .zip(&delta_z)
        .filter(|(_, dz)| **dz > 0.0)
        .map(|(z, dz)| (z.ln(), dz.ln()))
        .unzip();
    let (slope, intercept) = fit_line(&xs, &ys).ok_or(ModelError::InsufficientData {
        needed: 2,
        got: xs.len(),
    })?;
    Ok(ResolutionAnalysis {
        unique_depths: unique,
        delta_z,
        slope,
        intercept,
    })
}

/// Ordinary least squares line through `(x, y)`; `None` when `x` has no spread.
pub(crate) fn fit_line(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= f64::EPSILON * n as f64 * mx.abs().max(1.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Estimates the sub-pixel disparity step from a set of disparity observations.
///
/// The unique disparities are sorted; the modal gap between neighbours (binned at
/// 1e-4 px) identifies the step. The estimate is refined by averaging every gap that
/// spans exactly one step, and snapped onto `1/n` when it lies within 2% of one,
/// since the depth rounding of the sensor output leaves millipixel jitter on the
/// recovered disparities.
pub fn estimate_disparity_step<I>(disparities: I) -> Result<f64, ModelError>
where
    I: IntoIterator<Item = f64>,
{
    let mut unique: Vec<f64> = disparities
        .into_iter()
        .filter(|d| d.is_finite() && *d > 0.0)
        .collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    if unique.len() < 10 {
        return Err(ModelError::InsufficientData {
            needed: 10,
            got: unique.len(),
        });
    }
    let gaps: Vec<f64> = unique.windows(2).map(|w| w[1] - w[0]).collect();

    let mut histogram: HashMap<i64, usize> = HashMap::new();
    for g in &gaps {
        *histogram
            .entry((g / GAP_BIN_PX).round() as i64)
            .or_default() += 1;
    }
    let (mode_bin, _) = histogram
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .expect("at least nine gaps");
    let coarse = {
        let in_bin: Vec<f64> = gaps
            .iter()
            .copied()
            .filter(|g| (g / GAP_BIN_PX).round() as i64 == *mode_bin)
            .collect();
        in_bin.iter().sum::<f64>() / in_bin.len() as f64
    };
    if coarse <= 0.0 {
        return Err(ModelError::InsufficientData { needed: 10, got: 0 });
    }

    let single: Vec<f64> = gaps
        .iter()
        .copied()
        .filter(|g| ((g / coarse) - 1.0).abs() < 0.25)
        .collect();
    let refined = single.iter().sum::<f64>() / single.len() as f64;

    let n = (1.0 / refined).round();
    if n >= 1.0 && (n * refined - 1.0).abs() <= UNIT_FRACTION_TOLERANCE {
        Ok(1.0 / n)
    } else {
        Ok(refined)
    }
}

/// Sub-pixel disparity step of the sensor that produced `map`, recovered from the
/// distinct disparities `fB / Z` of its valid pixels.
///
/// Rounding depth to `depth_step` moves a recovered disparity by up to
/// `D^2 depth_step / (2 fB)`, which near the camera is comparable to the step itself.
/// When enough pixels lie in the low-disparity band where that jitter is below
/// [`MAX_ROUNDING_JITTER_PX`], only those are used.
pub fn estimate_subpixel_resolution(
    map: &crate::DepthMap,
    cam: &CameraModel,
) -> Result<f64, ModelError> {
    cam.validate()?;
    let fb = cam.fb();
    let all: Vec<f64> = map.iter_valid().map(|(_, _, z)| fb / z).collect();
    let d_max = (2.0 * MAX_ROUNDING_JITTER_PX * fb / cam.depth_step.max(f64::MIN_POSITIVE)).sqrt();
    let far: Vec<f64> = all.iter().copied().filter(|d| *d <= d_max).collect();
    match estimate_disparity_step(far) {
        Ok(step) => Ok(step),
        Err(_) => estimate_disparity_step(all),
    }
}

/// Counts the distinct quantized disparity levels inside each unit interval `[n, n+1)`.
///
/// Disparities are snapped to the nearest multiple of `step` before counting so that
/// jitter from depth rounding does not split a level.
pub fn disparity_levels_per_unit<I>(disparities: I, step: f64) -> BTreeMap<i64, usize>
where
    I: IntoIterator<Item = f64>,
{
    let mut levels: Vec<i64> = disparities
        .into_iter()
        .filter(|d| d.is_finite() && *d > 0.0)
        .map(|d| (d / step).round() as i64)
        .collect();
    levels.sort_unstable();
    levels.dedup();
    let mut counts = BTreeMap::new();
    for level in levels {
        let unit = (level as f64 * step).floor() as i64;
        *counts.entry(unit).or_insert(0) += 1;
    }
    counts
}

//! Gaussian, bilateral and depth-adaptive bilateral smoothing of depth maps.
//!
//! All three filters share one kernel loop: a square `(2r+1)^2` window, weights
//! renormalized over the valid neighbours, invalid centers left invalid. The
//! adaptive variant sets the range deviation at each center pixel to `k Z(p)^2`,
//! following the quadratic growth of depth noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth_image::DepthMap;
use crate::noise_model::CameraModel;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

/// Range (depth-difference) kernel of a bilateral filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeKernel {
    /// Fixed deviation in mm.
    Fixed { sigma_d: f64 },
    /// `sigma_d(p) = k Z(p)^2`, `k` in mm^-1.
    Adaptive { k: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Spatial deviation in pixels.
    pub sigma_s: f64,
    /// Window half-width in pixels.
    pub radius: usize,
    pub range: Option<RangeKernel>,
}

/// `ceil(3 sigma_s)`, at least 1.
pub fn default_radius(sigma_s: f64) -> usize {
    ((3.0 * sigma_s).ceil() as usize).max(1)
}

/// Three disparity steps propagated through the depth sensitivity: `3 step / (fB)`.
pub fn default_adaptive_k(cam: &CameraModel) -> f64 {
    3.0 * cam.disparity_step / cam.fb()
}

impl FilterConfig {
    pub fn gaussian(sigma_s: f64) -> Self {
        Self {
            sigma_s,
            radius: default_radius(sigma_s),
            range: None,
        }
    }

    pub fn bilateral(sigma_s: f64, sigma_d: f64) -> Self {
        Self {
            range: Some(RangeKernel::Fixed { sigma_d }),
            ..Self::gaussian(sigma_s)
        }
    }

    pub fn adaptive(sigma_s: f64, k: f64) -> Self {
        Self {
            range: Some(RangeKernel::Adaptive { k }),
            ..Self::gaussian(sigma_s)
        }
    }

    /// Demo defaults: `sigma_s = 3` px and [`default_adaptive_k`].
    pub fn adaptive_default(cam: &CameraModel) -> Self {
        Self::adaptive(3.0, default_adaptive_k(cam))
    }

    pub fn with_radius(mut self, radius: usize) -> Self {
        self.radius = radius;
        self
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.sigma_s.is_finite() && self.sigma_s > 0.0) {
            return Err(FilterError::InvalidConfig(format!(
                "sigma_s must be > 0, got {}",
                self.sigma_s
            )));
        }
        if self.radius < 1 {
            return Err(FilterError::InvalidConfig("radius must be >= 1".into()));
        }
        match self.range {
            Some(RangeKernel::Fixed { sigma_d }) if !(sigma_d.is_finite() && sigma_d > 0.0) => Err(
                FilterError::InvalidConfig(format!("sigma_d must be > 0, got {sigma_d}")),
            ),
            Some(RangeKernel::Adaptive { k }) if !(k.is_finite() && k > 0.0) => Err(
                FilterError::InvalidConfig(format!("k must be > 0, got {k}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Spatial-only weighted mean over the valid pixels of each window.
pub fn gaussian_filter(map: &DepthMap, cfg: &FilterConfig) -> Result<DepthMap, FilterError> {
    cfg.validate()?;
    Ok(run(map, cfg.sigma_s, cfg.radius, |_| None))
}

/// Bilateral filter with a fixed range deviation; `cfg.range` must be [`RangeKernel::Fixed`].
pub fn bilateral_filter(map: &DepthMap, cfg: &FilterConfig) -> Result<DepthMap, FilterError> {
    cfg.validate()?;
    let Some(RangeKernel::Fixed { sigma_d }) = cfg.range else {
        return Err(FilterError::InvalidConfig(
            "bilateral filter needs a fixed sigma_d".into(),
        ));
    };
    Ok(run(map, cfg.sigma_s, cfg.radius, |_| Some(sigma_d)))
}

/// Bilateral filter with `sigma_d(p) = k Z(p)^2` taken from the input center value;
/// `cfg.range` must be [`RangeKernel::Adaptive`].
pub fn adaptive_bilateral_filter(
    map: &DepthMap,
    cfg: &FilterConfig,
) -> Result<DepthMap, FilterError> {
    cfg.validate()?;
    let Some(RangeKernel::Adaptive { k }) = cfg.range else {
        return Err(FilterError::InvalidConfig("adaptive filter needs k".into()));
    };
    Ok(run(map, cfg.sigma_s, cfg.radius, |z| Some(k * z * z)))
}

/// Dispatches on `cfg.range`: none -> Gaussian, fixed -> bilateral, adaptive -> adaptive.
pub fn apply(map: &DepthMap, cfg: &FilterConfig) -> Result<DepthMap, FilterError> {
    match cfg.range {
        None => gaussian_filter(map, cfg),
        Some(RangeKernel::Fixed { .. }) => bilateral_filter(map, cfg),
        Some(RangeKernel::Adaptive { .. }) => adaptive_bilateral_filter(map, cfg),
    }
}

/// Per-pixel adaptive range deviation `k Z(p)^2`; 0 at invalid pixels.
pub fn adaptive_sigma_map(map: &DepthMap, k: f64) -> Vec<f64> {
    map.values()
        .iter()
        .zip(map.valid_mask())
        .map(|(z, ok)| if *ok { k * z * z } else { 0.0 })
        .collect()
}

fn run(
    map: &DepthMap,
    sigma_s: f64,
    radius: usize,
    range_sigma: impl Fn(f64) -> Option<f64> + Sync,
) -> DepthMap {
    let (w, h) = (map.width(), map.height());
    let r = radius as isize;
    let side = 2 * radius + 1;
    let inv_2ss = 1.0 / (2.0 * sigma_s * sigma_s);
    let spatial: Vec<f64> = (0..side * side)
        .map(|i| {
            let dx = (i % side) as f64 - radius as f64;
            let dy = (i / side) as f64 - radius as f64;
            (-(dx * dx + dy * dy) * inv_2ss).exp()
        })
        .collect();
    let z = map.values();
    let valid = map.valid_mask();

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(y, row)| {
            for (x, slot) in row.iter_mut().enumerate() {
                let c = y * w + x;
                if !valid[c] {
                    continue;
                }
                let zc = z[c];
                let inv_2sd = range_sigma(zc).map(|s| 1.0 / (2.0 * s * s));
                let (mut num, mut den) = (0.0, 0.0);
                let y0 = (y as isize - r).max(0) as usize;
                let y1 = ((y as isize + r) as usize).min(h - 1);
                let x0 = (x as isize - r).max(0) as usize;
                let x1 = ((x as isize + r) as usize).min(w - 1);
                for qy in y0..=y1 {
                    let krow = (qy + radius - y) * side;
                    for qx in x0..=x1 {
                        let q = qy * w + qx;
                        if !valid[q] {
                            continue;
                        }
                        let dz = z[q] - zc;
                        let mut wt = spatial[krow + qx + radius - x];
                        if let Some(s) = inv_2sd {
                            wt *= (-(dz * dz) * s).exp();
                        }
                        num += wt * dz;
                        den += wt;
                    }
                }
                // Offsets from the center keep constant windows exact; the center always
                // contributes weight 1, so `den >= 1`.
                *slot = zc + num / den;
            }
        });
    DepthMap::from_parts(w, h, out, valid.to_vec()).expect("convex combination of positive depths")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(w: usize, h: usize, z: f64) -> DepthMap {
        DepthMap::from_values(w, h, vec![z; w * h]).unwrap()
    }

    /// Direct 1-D convolution oracle for a map that is constant along y.
    fn oracle_row(
        profile: &[f64],
        sigma_s: f64,
        radius: usize,
        sigma_d: Option<f64>,
        rows: usize,
        y: usize,
    ) -> Vec<f64> {
        let n = profile.len() as isize;
        let r = radius as isize;
        (0..n)
            .map(|x| {
                let (mut num, mut den) = (0.0, 0.0);
                for dy in -r..=r {
                    let qy = y as isize + dy;
                    if qy < 0 || qy >= rows as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let qx = x + dx;
                        if qx < 0 || qx >= n {
                            continue;
                        }
                        let zq = profile[qx as usize];
                        let mut wt =
                            (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_s * sigma_s)).exp();
                        if let Some(sd) = sigma_d {
                            let dz = zq - profile[x as usize];
                            wt *= (-(dz * dz) / (2.0 * sd * sd)).exp();
                        }
                        num += wt * zq;
                        den += wt;
                    }
                }
                num / den
            })
            .collect()
    }

    fn step_map(w: usize, h: usize, edge: usize, lo: f64, hi: f64) -> (DepthMap, Vec<f64>) {
        let profile: Vec<f64> = (0..w).map(|x| if x < edge { lo } else { hi }).collect();
        let values = (0..h).flat_map(|_| profile.iter().copied()).collect();
        (DepthMap::from_values(w, h, values).unwrap(), profile)
    }

    #[test]
    fn identity_on_constant_maps() {
        let m = constant(20, 15, 1234.0);
        for cfg in [
            FilterConfig::gaussian(2.0),
            FilterConfig::bilateral(2.0, 5.0),
            FilterConfig::adaptive(2.0, 1e-5),
        ] {
            let out = apply(&m, &cfg).unwrap();
            for (a, b) in out.values().iter().zip(m.values()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn impulse_is_attenuated_by_center_weight_share() {
        let mut m = constant(21, 21, 1000.0);
        m.set(10, 10, Some(1010.0));
        let cfg = FilterConfig::gaussian(1.5);
        let out = gaussian_filter(&m, &cfg).unwrap();
        let r = cfg.radius as i32;
        let total: f64 = (-r..=r)
            .flat_map(|dy| {
                (-r..=r).map(move |dx| (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp())
            })
            .sum();
        let expected = 1000.0 + 10.0 / total;
        assert!((out.get(10, 10).unwrap() - expected).abs() < 1e-9);
        assert!(1.0 / total < 1.0);
    }

    #[test]
    fn gaussian_blurs_a_step_edge() {
        let (m, profile) = step_map(40, 12, 20, 600.0, 1500.0);
        let cfg = FilterConfig::gaussian(2.0);
        let out = gaussian_filter(&m, &cfg).unwrap();
        let oracle = oracle_row(&profile, 2.0, cfg.radius, None, 12, 6);
        for (x, want) in oracle.iter().enumerate() {
            assert!((out.get(x, 6).unwrap() - want).abs() < 1e-9);
        }
        // Intermediate values appear only within the radius of the edge.
        for x in 0..40 {
            let v = out.get(x, 6).unwrap();
            let intermediate = v > 600.0 + 1e-6 && v < 1500.0 - 1e-6;
            // The window straddles the edge iff x - r <= 19 and x + r >= 20.
            let near_edge = x + cfg.radius >= 20 && x <= 19 + cfg.radius;
            assert_eq!(intermediate, near_edge, "x = {x}");
        }
    }

    #[test]
    fn bilateral_preserves_large_step() {
        let sigma_d = 10.0;
        let jump = 10.0 * sigma_d;
        let (m, profile) = step_map(40, 12, 20, 1000.0, 1000.0 + jump);
        let cfg = FilterConfig::bilateral(2.0, sigma_d);
        let out = bilateral_filter(&m, &cfg).unwrap();
        let oracle = oracle_row(&profile, 2.0, cfg.radius, Some(sigma_d), 12, 6);
        for x in 0..40 {
            let v = out.get(x, 6).unwrap();
            assert!((v - oracle[x]).abs() < 1e-9);
            let plateau = profile[x];
            assert!((v - plateau).abs() <= 0.01 * jump);
        }
    }

    #[test]
    fn huge_range_sigma_reduces_to_gaussian() {
        let (m, _) = step_map(30, 10, 13, 700.0, 900.0);
        let g = gaussian_filter(&m, &FilterConfig::gaussian(2.0)).unwrap();
        let b = bilateral_filter(&m, &FilterConfig::bilateral(2.0, 1e12)).unwrap();
        for (a, b) in g.values().iter().zip(b.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_pixels_stay_invalid_and_are_excluded() {
        let mut m = constant(9, 9, 1000.0);
        m.set(4, 4, None);
        m.set(5, 4, Some(1100.0));
        let out = gaussian_filter(&m, &FilterConfig::gaussian(1.0)).unwrap();
        assert_eq!(out.valid_mask(), m.valid_mask());
        assert_eq!(out.get(4, 4), None);
        let far = constant(9, 9, 1000.0);
        let mut holes = far.clone();
        holes.set(0, 0, None);
        let out = gaussian_filter(&holes, &FilterConfig::gaussian(1.0)).unwrap();
        assert!((out.get(1, 1).unwrap() - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let m = constant(4, 4, 1000.0);
        assert!(adaptive_bilateral_filter(&m, &FilterConfig::adaptive(2.0, 0.0)).is_err());
        assert!(bilateral_filter(&m, &FilterConfig::adaptive(2.0, 1e-6)).is_err());
        assert!(adaptive_bilateral_filter(&m, &FilterConfig::bilateral(2.0, 3.0)).is_err());
        assert!(gaussian_filter(&m, &FilterConfig::gaussian(0.0)).is_err());
        assert!(gaussian_filter(&m, &FilterConfig::gaussian(1.0).with_radius(0)).is_err());
        assert_eq!(default_radius(3.0), 9);
        assert_eq!(default_radius(0.1), 1);
    }

    #[test]
    fn adaptive_equals_bilateral_on_equal_depths() {
        let mut m = constant(15, 15, 1200.0);
        m.set(3, 3, None);
        let k = 2e-6;
        let a = adaptive_bilateral_filter(&m, &FilterConfig::adaptive(2.0, k)).unwrap();
        let b = bilateral_filter(&m, &FilterConfig::bilateral(2.0, k * 1200.0 * 1200.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adaptive_sigma_scales_quadratically() {
        let m = DepthMap::from_values(3, 1, vec![500.0, 1000.0, 0.0]).unwrap();
        let lambda = 1.7;
        let scaled =
            DepthMap::from_values(3, 1, vec![500.0 * lambda, 1000.0 * lambda, 0.0]).unwrap();
        let k = 3e-6;
        let s = adaptive_sigma_map(&m, k);
        let t = adaptive_sigma_map(&scaled, k);
        for i in 0..2 {
            assert!((t[i] / s[i] - lambda * lambda).abs() < 1e-12);
        }
        assert_eq!(t[2], 0.0);
    }

    #[test]
    fn constant_windows_are_reproduced_exactly() {
        let map = constant(9, 7, 1234.0);
        let cam = CameraModel::kinect(9, 7);
        for cfg in [
            FilterConfig::gaussian(2.0),
            FilterConfig::bilateral(1.5, 3.0),
            FilterConfig::adaptive_default(&cam),
        ] {
            assert_eq!(apply(&map, &cfg).unwrap(), map);
        }
    }
}

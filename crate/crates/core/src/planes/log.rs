use std::collections::VecDeque;

use rayon::prelude::*;

use super::PlaneError;
use crate::depth_image::DisparityMap;

/// Laplacian-of-Gaussian kernel of radius `ceil(3 sigma)`, row-major, shifted to zero sum
/// so constant and affine signals map to zero.
pub fn log_kernel(sigma: f64) -> Result<(usize, Vec<f64>), PlaneError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(PlaneError::InvalidParameter(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    let r = (3.0 * sigma).ceil() as usize;
    let side = 2 * r + 1;
    let s2 = sigma * sigma;
    let mut k: Vec<f64> = (0..side * side)
        .map(|i| {
            let x = (i % side) as f64 - r as f64;
            let y = (i / side) as f64 - r as f64;
            let q = (x * x + y * y) / (2.0 * s2);
            -(1.0 - q) * (-q).exp() / (std::f64::consts::PI * s2 * s2)
        })
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    Ok((r, k))
}

/// LoG response; `None` where the kernel support leaves the image or touches an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LogResponse {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Option<f64>>,
}

impl LogResponse {
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.values[y * self.width + x]
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn log_response(dmap: &DisparityMap, sigma: f64) -> Result<LogResponse, PlaneError> {
    let (r, kernel) = log_kernel(sigma)?;
    let (w, h) = (dmap.width(), dmap.height());
    let side = 2 * r + 1;
    // Summed-area table of invalid pixels for the support test.
    let mut bad = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let here = u32::from(!dmap.is_valid(x, y));
            bad[(y + 1) * (w + 1) + x + 1] =
                here + bad[y * (w + 1) + x + 1] + bad[(y + 1) * (w + 1) + x] - bad[y * (w + 1) + x];
        }
    }
    let d = dmap.values();
    let values = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if x < r || y < r || x + r >= w || y + r >= h {
                return None;
            }
            let (x0, y0, x1, y1) = (x - r, y - r, x + r + 1, y + r + 1);
            let invalid = bad[y1 * (w + 1) + x1] + bad[y0 * (w + 1) + x0]
                - bad[y0 * (w + 1) + x1]
                - bad[y1 * (w + 1) + x0];
            if invalid > 0 {
                return None;
            }
            let mut acc = 0.0;
            for ky in 0..side {
                let row = &d[(y0 + ky) * w + x0..(y0 + ky) * w + x0 + side];
                let krow = &kernel[ky * side..(ky + 1) * side];
                acc += row.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
            }
            Some(acc)
        })
        .collect();
    Ok(LogResponse {
        width: w,
        height: h,
        values,
    })
}

/// Candidate planar regions: pixels with `|LoG| <= tau`, grouped into 4-connected
/// components of at least `min_area` pixels. Regions are lists of linear pixel indices,
/// ordered by their first pixel in raster order.
pub fn segment_planar(
    dmap: &DisparityMap,
    sigma: f64,
    tau: f64,
    min_area: usize,
) -> Result<Vec<Vec<usize>>, PlaneError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(PlaneError::InvalidParameter(format!(
            "tau must be > 0, got {tau}"
        )));
    }
    let resp = log_response(dmap, sigma)?;
    let (w, h) = (resp.width, resp.height);
    let planar: Vec<bool> = resp
        .values
        .iter()
        .map(|v| v.is_some_and(|r| r.abs() <= tau))
        .collect();
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !planar[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut region = Vec::new();
        while let Some(p) = queue.pop_front() {
            region.push(p);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if planar[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        if region.len() >= min_area {
            region.sort_unstable();
            regions.push(region);
        }
    }
    Ok(regions)
}

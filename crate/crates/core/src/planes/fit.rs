use super::PlaneError;

/// Huber tuning constant (95% efficiency under Gaussian noise).
const HUBER_K: f64 = 1.345;
/// MAD to standard deviation for Gaussian data.
const MAD_TO_SIGMA: f64 = 1.4826;
/// Lower bound on the Huber threshold so exact data does not divide by zero.
const MIN_HUBER_THRESHOLD: f64 = 1e-9;
const MAX_IRLS_ITERATIONS: usize = 20;
const IRLS_TOLERANCE: f64 = 1e-9;

/// Robust affine fit `D ≈ αx + βy + γ` to `(x, y, D)` samples.
///
/// Ordinary least squares, then Huber-weighted IRLS with threshold
/// `1.345 · 1.4826 · MAD(residuals)` until no coefficient moves by more than `1e-9`
/// or 20 reweighting rounds have run.
pub fn fit_plane_disparity(pixels: &[(f64, f64, f64)]) -> Result<[f64; 3], PlaneError> {
    if pixels.len() < 3 {
        return Err(PlaneError::Degenerate(format!(
            "need at least 3 pixels, got {}",
            pixels.len()
        )));
    }
    let mut weights = vec![1.0; pixels.len()];
    let mut coeffs = weighted_fit(pixels, &weights)?;
    let mut residuals = vec![0.0; pixels.len()];
    for _ in 0..MAX_IRLS_ITERATIONS {
        for (r, (x, y, d)) in residuals.iter_mut().zip(pixels) {
            *r = d - (coeffs[0] * x + coeffs[1] * y + coeffs[2]);
        }
        let c = (HUBER_K * MAD_TO_SIGMA * mad(&residuals)).max(MIN_HUBER_THRESHOLD);
        for (w, r) in weights.iter_mut().zip(&residuals) {
            *w = if r.abs() <= c { 1.0 } else { c / r.abs() };
        }
        let next = weighted_fit(pixels, &weights)?;
        let change = (0..3)
            .map(|i| (next[i] - coeffs[i]).abs())
            .fold(0.0, f64::max);
        coeffs = next;
        if change < IRLS_TOLERANCE {
            break;
        }
    }
    Ok(coeffs)
}

/// Weighted least squares on centered coordinates.
fn weighted_fit(pixels: &[(f64, f64, f64)], weights: &[f64]) -> Result<[f64; 3], PlaneError> {
    let sw: f64 = weights.iter().sum();
    let (mut mx, mut my, mut md) = (0.0, 0.0, 0.0);
    for ((x, y, d), w) in pixels.iter().zip(weights) {
        mx += w * x;
        my += w * y;
        md += w * d;
    }
    mx /= sw;
    my /= sw;
    md /= sw;
    let (mut sxx, mut sxy, mut syy, mut sxd, mut syd) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((x, y, d), w) in pixels.iter().zip(weights) {
        let (dx, dy, dd) = (x - mx, y - my, d - md);
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
        sxd += w * dx * dd;
        syd += w * dy * dd;
    }
    let det = sxx * syy - sxy * sxy;
    if !(det > 1e-12 * sxx * syy) || !(sxx > 0.0 && syy > 0.0) {
        return Err(PlaneError::Degenerate(
            "support pixels are collinear".into(),
        ));
    }
    let al = (sxd * syy - syd * sxy) / det;
    let be = (syd * sxx - sxd * sxy) / det;
    Ok([al, be, md - al * mx - be * my])
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Median absolute deviation from the median.
fn mad(residuals: &[f64]) -> f64 {
    let mut v = residuals.to_vec();
    let m = median(&mut v);
    v.iter_mut().for_each(|r| *r = (*r - m).abs());
    median(&mut v)
}

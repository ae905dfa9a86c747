/// Vectors with L2 norm at or below this are treated as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Projects `v` onto the unit sphere.
///
/// A degenerate input (norm `<= NORM_EPS`) maps to the first basis vector
/// and logs a warning.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let (out, degenerate) = l2_normalize_checked(v);
    if degenerate {
        log::warn!("degenerate feature of dimension {} normalized to e1", v.len());
    }
    out
}

/// Like [`l2_normalize`] but reports degeneracy instead of logging.
pub fn l2_normalize_checked(v: &[f64]) -> (Vec<f64>, bool) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= NORM_EPS || !norm.is_finite() {
        let mut e1 = vec![0.0; v.len()];
        if let Some(first) = e1.first_mut() {
            *first = 1.0;
        }
        return (e1, true);
    }
    (v.iter().map(|x| x / norm).collect(), false)
}

/// Pulls a gradient on `l2_normalize(raw)` back onto `raw`:
/// `(g - f (f . g)) / |raw|`. The degenerate branch is constant, so its
/// gradient is zero.
pub fn l2_normalize_backward(raw: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= NORM_EPS || !norm.is_finite() {
        return vec![0.0; raw.len()];
    }
    let dot: f64 = raw.iter().zip(grad_out).map(|(r, g)| r * g).sum::<f64>() / norm;
    raw.iter()
        .zip(grad_out)
        .map(|(r, g)| (g - (r / norm) * dot) / norm)
        .collect()
}

use crate::error::{Error, Result};

use super::GrayImage;

/// Floor applied to S0 before dividing, so dead pixels do not abort a run.
pub const DEFAULT_DOLP_EPS: f64 = 1e-6;

/// Degree of linear polarization, `sqrt(s1² + s2²) / max(s0, eps)` per pixel.
///
/// With `eps = 0` a non-positive S0 is reported as [`Error::DivisionByZero`].
pub fn compute_dolp(s0: &GrayImage, s1: &GrayImage, s2: &GrayImage, eps: f64) -> Result<GrayImage> {
    s0.check_same_dims(s1, "S0 vs S1")?;
    s0.check_same_dims(s2, "S0 vs S2")?;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("DoLP eps must be >= 0, got {eps}")));
    }
    let (h, w) = s0.dims();
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let denom = s0.get(u, v).max(eps);
            if denom <= 0.0 {
                return Err(Error::DivisionByZero { u, v });
            }
            let (a, b) = (s1.get(u, v), s2.get(u, v));
            out.push((a * a + b * b).sqrt() / denom);
        }
    }
    GrayImage::new(h, w, out)
}

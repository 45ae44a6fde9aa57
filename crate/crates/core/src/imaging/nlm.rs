//! Non-local means filtering, used as photometric normalization when
//! augmenting thermal training data.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Filtering strength `h` in unit-intensity scale.
    pub strength: f64,
}

impl Default for NlmParams {
    fn default() -> Self {
        Self {
            patch_radius: 3,
            search_radius: 10,
            strength: 0.12,
        }
    }
}

impl NlmParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 1 || self.search_radius < 1 {
            return Err(Error::InvalidParameter(format!(
                "NLM radii must be >= 1, got patch {} search {}",
                self.patch_radius, self.search_radius
            )));
        }
        if !(self.strength > 0.0) || !self.strength.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "NLM strength must be > 0, got {}",
                self.strength
            )));
        }
        Ok(())
    }
}

/// Non-local means filter.
///
/// Each output pixel averages the pixels of its search window (clipped to the
/// image) with weights `exp(-d²/h²)`, where `d²` is the mean squared difference
/// between replicate-padded patches centred on the two pixels.
pub fn nlm_filter(img: &GrayImage, params: &NlmParams) -> Result<GrayImage> {
    params.validate()?;
    let (h, w) = img.dims();
    let pr = params.patch_radius as isize;
    let sr = params.search_radius as isize;
    let inv_h2 = 1.0 / (params.strength * params.strength);
    let patch_len = ((2 * pr + 1) * (2 * pr + 1)) as f64;

    // Replicate-padded copy so patch reads need no bounds logic.
    let pad = pr as usize;
    let pw = w + 2 * pad;
    let padded: Vec<f64> = (0..h + 2 * pad)
        .flat_map(|pu| (0..pw).map(move |pv| img.get_clamped(pu as isize - pr, pv as isize - pr)))
        .collect();

    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|u| {
            let mut row = Vec::with_capacity(w);
            for v in 0..w {
                let centre = img.get(u, v);
                let (mut lo, mut hi) = (centre, centre);
                let mut acc = 0.0;
                let mut norm = 0.0;
                let u0 = (u as isize - sr).max(0) as usize;
                let u1 = (u as isize + sr).min(h as isize - 1) as usize;
                let v0 = (v as isize - sr).max(0) as usize;
                let v1 = (v as isize + sr).min(w as isize - 1) as usize;
                for qu in u0..=u1 {
                    for qv in v0..=v1 {
                        let mut d2 = 0.0;
                        for du in 0..=2 * pad {
                            let a = &padded[(u + du) * pw + v..(u + du) * pw + v + 2 * pad + 1];
                            let b = &padded[(qu + du) * pw + qv..(qu + du) * pw + qv + 2 * pad + 1];
                            for (x, y) in a.iter().zip(b) {
                                let d = x - y;
                                d2 += d * d;
                            }
                        }
                        let wgt = (-(d2 / patch_len) * inv_h2).exp();
                        let q = img.get(qu, qv);
                        lo = lo.min(q);
                        hi = hi.max(q);
                        // Offsets from the centre keep flat windows exactly flat.
                        acc += wgt * (q - centre);
                        norm += wgt;
                    }
                }
                // The centre pixel always has weight 1, so norm >= 1. The clamp
                // only absorbs rounding; the weighted mean lies in [lo, hi].
                row.push((centre + acc / norm).clamp(lo, hi));
            }
            row
        })
        .collect();

    GrayImage::new(h, w, rows.concat())
}

//! Image data model, file I/O, polarimetric derivation, NLM normalization
//! and region geometry.

mod image;
pub mod io;
pub mod nlm;
pub mod polar;
pub mod region;

pub use self::image::{Channel, GrayImage, ThermalStack};
pub use io::{load_image, save_image, BitDepth};
pub use nlm::{nlm_filter, NlmParams};
pub use polar::{compute_dolp, DEFAULT_DOLP_EPS};
pub use region::{build_weight_fields, crop_region, paste_region, BBox, Region, RegionSet, GLOBAL_REGION_ID};

use crate::error::{Error, Result};

/// Ordered facial landmark coordinates `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<(f64, f64)>,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("landmark set is empty".into()));
        }
        if points.iter().any(|(u, v)| !u.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite landmark".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

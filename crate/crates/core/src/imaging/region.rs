//! Region geometry and per-pixel gradient blending weights.

use crate::error::{Error, Result};

use super::GrayImage;

pub const GLOBAL_REGION_ID: &str = "global";

/// Axis-aligned box: `x` is the left column, `y` the top row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height)
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.y && u < self.y + self.h && v >= self.x && v < self.x + self.w
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    fn check_inside(&self, height: usize, width: usize) -> Result<()> {
        if self.fits(height, width) {
            Ok(())
        } else {
            Err(Error::OutOfBounds(format!(
                "box [x={} y={} w={} h={}] outside {height}x{width} image",
                self.x, self.y, self.w, self.h
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub bbox: BBox,
    /// Share of the blended gradient taken by this region inside its box.
    pub local_weight: f64,
}

impl Region {
    pub fn new(id: impl Into<String>, bbox: BBox, local_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&local_weight) {
            return Err(Error::InvalidParameter(format!(
                "local weight must lie in [0, 1], got {local_weight}"
            )));
        }
        Ok(Self {
            id: id.into(),
            bbox,
            local_weight,
        })
    }

    pub fn global(height: usize, width: usize) -> Self {
        Self {
            id: GLOBAL_REGION_ID.to_string(),
            bbox: BBox::full(height, width),
            local_weight: 1.0,
        }
    }
}

/// Copies the pixels of `bbox` out of `img` without resampling.
pub fn crop_region(img: &GrayImage, bbox: &BBox) -> Result<GrayImage> {
    bbox.check_inside(img.height(), img.width())?;
    let mut data = Vec::with_capacity(bbox.area());
    for u in bbox.y..bbox.y + bbox.h {
        let row = &img.as_slice()[u * img.width() + bbox.x..u * img.width() + bbox.x + bbox.w];
        data.extend_from_slice(row);
    }
    GrayImage::new(bbox.h, bbox.w, data)
}

/// Writes `patch` into `dst` with its top-left corner at the box origin.
pub fn paste_region(dst: &mut GrayImage, patch: &GrayImage, bbox: &BBox) -> Result<()> {
    bbox.check_inside(dst.height(), dst.width())?;
    if patch.dims() != (bbox.h, bbox.w) {
        return Err(Error::DimensionMismatch(format!(
            "patch {}x{} does not match box {}x{}",
            patch.height(),
            patch.width(),
            bbox.h,
            bbox.w
        )));
    }
    let width = dst.width();
    for (pu, u) in (bbox.y..bbox.y + bbox.h).enumerate() {
        let src = &patch.as_slice()[pu * bbox.w..(pu + 1) * bbox.w];
        dst.as_mut_slice()[u * width + bbox.x..u * width + bbox.x + bbox.w].copy_from_slice(src);
    }
    Ok(())
}

/// Global region plus non-overlapping local regions with their per-pixel
/// blending weight fields. Fields are ordered global first, then locals.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    height: usize,
    width: usize,
    global: Region,
    locals: Vec<Region>,
    fields: Vec<Vec<f64>>,
}

impl RegionSet {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn global(&self) -> &Region {
        &self.global
    }

    pub fn locals(&self) -> &[Region] {
        &self.locals
    }

    /// Number of regions including the global one.
    pub fn len(&self) -> usize {
        1 + self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Region `i`, with 0 the global region.
    pub fn region(&self, i: usize) -> &Region {
        if i == 0 {
            &self.global
        } else {
            &self.locals[i - 1]
        }
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        std::iter::once(&self.global).chain(self.locals.iter())
    }

    /// Row-major weight field of region `i`.
    pub fn field(&self, i: usize) -> &[f64] {
        &self.fields[i]
    }

    pub fn weight(&self, i: usize, u: usize, v: usize) -> f64 {
        self.fields[i][u * self.width + v]
    }

    /// Mean of region `i`'s weight field over its own box.
    pub fn mean_weight(&self, i: usize) -> f64 {
        let b = self.region(i).bbox;
        let mut sum = 0.0;
        for u in b.y..b.y + b.h {
            for v in b.x..b.x + b.w {
                sum += self.weight(i, u, v);
            }
        }
        sum / b.area() as f64
    }
}

/// Builds the per-pixel blending fields: a local region's field equals its
/// `local_weight` inside its box and 0 elsewhere; the global field takes the
/// remainder so the weights sum to one at every pixel.
pub fn build_weight_fields(height: usize, width: usize, locals: Vec<Region>) -> Result<RegionSet> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter("image dimensions must be positive".into()));
    }
    for (i, r) in locals.iter().enumerate() {
        r.bbox.check_inside(height, width)?;
        if !(0.0..=1.0).contains(&r.local_weight) {
            return Err(Error::InvalidParameter(format!(
                "region {} local weight {} outside [0, 1]",
                r.id, r.local_weight
            )));
        }
        if r.id == GLOBAL_REGION_ID {
            return Err(Error::InvalidParameter(format!(
                "'{GLOBAL_REGION_ID}' is reserved for the full-image region"
            )));
        }
        for other in &locals[..i] {
            if other.id == r.id {
                return Err(Error::InvalidParameter(format!("duplicate region id {}", r.id)));
            }
            if other.bbox.intersects(&r.bbox) {
                return Err(Error::OverlappingRegions(other.id.clone(), r.id.clone()));
            }
        }
    }

    let n = height * width;
    let mut fields = vec![vec![1.0; n]];
    for r in &locals {
        let mut f = vec![0.0; n];
        let b = r.bbox;
        for u in b.y..b.y + b.h {
            for v in b.x..b.x + b.w {
                f[u * width + v] = r.local_weight;
                fields[0][u * width + v] = 1.0 - r.local_weight;
            }
        }
        fields.push(f);
    }

    Ok(RegionSet {
        height,
        width,
        global: Region::global(height, width),
        locals,
        fields,
    })
}

/// Face regions for registered 250-row by 200-column images: both eyes and
/// the nose-mouth area, with the standard blending weights.
pub fn default_face_regions() -> Vec<Region> {
    vec![
        Region {
            id: "right-eye".into(),
            bbox: BBox::new(30, 89, 64, 34),
            local_weight: 0.95,
        },
        Region {
            id: "left-eye".into(),
            bbox: BBox::new(106, 89, 64, 34),
            local_weight: 0.95,
        },
        Region {
            id: "nose-mouth".into(),
            bbox: BBox::new(70, 125, 65, 85),
            local_weight: 0.75,
        },
    ]
}

pub const DEFAULT_FACE_HEIGHT: usize = 250;
pub const DEFAULT_FACE_WIDTH: usize = 200;

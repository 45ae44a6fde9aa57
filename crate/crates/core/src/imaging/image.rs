use crate::error::{Error, Result};

use super::polar::{compute_dolp, DEFAULT_DOLP_EPS};

/// Single-channel raster of real intensities, row-major, indexed `(u, v)`
/// with `u` the row and `v` the column.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite intensity at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    /// Constant image. Panics on zero dimensions.
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for u in 0..height {
            for v in 0..width {
                data.push(f(u, v));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u * self.width + v]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[u * self.width + v] = value;
    }

    /// Pixel access with coordinates clamped to the image (replicate boundary).
    #[inline]
    pub fn get_clamped(&self, u: isize, v: isize) -> f64 {
        let u = u.clamp(0, self.height as isize - 1) as usize;
        let v = v.clamp(0, self.width as isize - 1) as usize;
        self.get(u, v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn clamped_unit(&self) -> Self {
        self.map(|x| x.clamp(0.0, 1.0))
    }

    pub(crate) fn check_same_dims(&self, other: &GrayImage, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Polarimetric channel identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    S0,
    S1,
    S2,
    Dolp,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::S0 => "S0",
            Channel::S1 => "S1",
            Channel::S2 => "S2",
            Channel::Dolp => "DoLP",
        }
    }
}

/// Multi-channel thermal input built from Stokes images and derived DoLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalStack {
    channels: Vec<Channel>,
    planes: Vec<GrayImage>,
}

impl ThermalStack {
    /// Builds a stack from explicit planes. If DoLP is given together with all
    /// three Stokes planes it must agree with [`compute_dolp`] (default eps).
    pub fn new(planes: Vec<(Channel, GrayImage)>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::InvalidParameter("thermal stack has no channels".into()));
        }
        let dims = planes[0].1.dims();
        for (i, (c, p)) in planes.iter().enumerate() {
            if p.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "channel {} is {}x{}, expected {}x{}",
                    c.name(),
                    p.height(),
                    p.width(),
                    dims.0,
                    dims.1
                )));
            }
            if planes[..i].iter().any(|(o, _)| o == c) {
                return Err(Error::InvalidParameter(format!("duplicate channel {}", c.name())));
            }
        }
        let (channels, planes): (Vec<_>, Vec<_>) = planes.into_iter().unzip();
        let stack = Self { channels, planes };
        if let (Some(d), Some(s0), Some(s1), Some(s2)) = (
            stack.plane(Channel::Dolp),
            stack.plane(Channel::S0),
            stack.plane(Channel::S1),
            stack.plane(Channel::S2),
        ) {
            let expected = compute_dolp(s0, s1, s2, DEFAULT_DOLP_EPS)?;
            let consistent = expected
                .as_slice()
                .iter()
                .zip(d.as_slice())
                .all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + a.abs()));
            if !consistent {
                return Err(Error::InvalidParameter(
                    "DoLP plane disagrees with the Stokes planes".into(),
                ));
            }
        }
        Ok(stack)
    }

    /// Conventional thermal input: S0 only.
    pub fn conventional(s0: GrayImage) -> Self {
        Self {
            channels: vec![Channel::S0],
            planes: vec![s0],
        }
    }

    /// S0 plus DoLP derived from the three Stokes planes.
    pub fn polarimetric(s0: GrayImage, s1: &GrayImage, s2: &GrayImage, eps: f64) -> Result<Self> {
        let dolp = compute_dolp(&s0, s1, s2, eps)?;
        Ok(Self {
            channels: vec![Channel::S0, Channel::Dolp],
            planes: vec![s0, dolp],
        })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn planes(&self) -> &[GrayImage] {
        &self.planes
    }

    pub fn plane(&self, c: Channel) -> Option<&GrayImage> {
        self.channels.iter().position(|&x| x == c).map(|i| &self.planes[i])
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    /// Applies `f` to the selected channels, leaving the others untouched.
    pub fn try_map_channels(
        &self,
        select: impl Fn(Channel) -> bool,
        f: impl Fn(&GrayImage) -> Result<GrayImage>,
    ) -> Result<Self> {
        let planes = self
            .channels
            .iter()
            .zip(&self.planes)
            .map(|(&c, p)| if select(c) { f(p) } else { Ok(p.clone()) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            channels: self.channels.clone(),
            planes,
        })
    }
}

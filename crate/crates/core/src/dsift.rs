//! Dense SIFT as a fixed, fully convolutional feature network with an exact
//! vector-Jacobian backward pass.
//!
//! Pipeline per image:
//! 1. centred-difference gradients with replicate boundary;
//! 2. each pixel's gradient magnitude split between the two nearest of
//!    `num_orientations` orientation bins by linear angular interpolation;
//! 3. bilinear (triangular kernel) pooling of every orientation plane into a
//!    `grid x grid` cell layout, one descriptor per `stride` pixels, each
//!    descriptor seeing only its own `grid * cell_size` square patch;
//! 4. L2 normalization, smooth clamping of each component at
//!    `clamp_threshold`, then L2 renormalization.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsiftConfig {
    pub num_orientations: usize,
    pub cell_size: usize,
    pub grid: usize,
    pub stride: usize,
    pub clamp_threshold: f64,
    pub norm_eps: f64,
    pub smooth_sharpness: f64,
}

impl Default for DsiftConfig {
    fn default() -> Self {
        Self {
            num_orientations: 8,
            cell_size: 4,
            grid: 4,
            stride: 4,
            clamp_threshold: 0.2,
            norm_eps: 1e-8,
            smooth_sharpness: 50.0,
        }
    }
}

impl DsiftConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.num_orientations < 2 {
            return bad(format!("num_orientations must be >= 2, got {}", self.num_orientations));
        }
        if self.cell_size < 1 || self.grid < 1 || self.stride < 1 {
            return bad("cell_size, grid and stride must be >= 1".into());
        }
        if !(self.clamp_threshold > 0.0 && self.clamp_threshold <= 1.0) {
            return bad(format!(
                "clamp_threshold must be in (0, 1], got {}",
                self.clamp_threshold
            ));
        }
        if !(self.norm_eps > 0.0) {
            return bad(format!("norm_eps must be > 0, got {}", self.norm_eps));
        }
        if !(self.smooth_sharpness > 0.0) || !self.smooth_sharpness.is_finite() {
            return bad(format!("smooth_sharpness must be > 0, got {}", self.smooth_sharpness));
        }
        Ok(())
    }

    /// Side length in pixels of the square patch one descriptor covers.
    pub fn patch_size(&self) -> usize {
        self.grid * self.cell_size
    }

    /// Descriptor length `grid² * num_orientations`.
    pub fn depth(&self) -> usize {
        self.grid * self.grid * self.num_orientations
    }

    /// Descriptor grid size for an `h x w` input (valid placement, no padding).
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let p = self.patch_size();
        if h < p || w < p {
            return Err(Error::ImageTooSmall {
                height: h,
                width: w,
                needed: p,
            });
        }
        Ok(((h - p) / self.stride + 1, (w - p) / self.stride + 1))
    }

    /// Smooth clamp at `t`: `x - sp(x - t) + sp(-t)` with the softplus
    /// `sp(z) = ln(1 + exp(k z)) / k` and `k = smooth_sharpness / t`. Close to
    /// `min(x, t)`, exactly 0 at 0, and differentiable everywhere.
    #[inline]
    fn soft_clamp(&self, x: f64) -> f64 {
        let t = self.clamp_threshold;
        let k = self.smooth_sharpness / t;
        x - softplus(x - t, k) + softplus(-t, k)
    }

    #[inline]
    fn soft_clamp_deriv(&self, x: f64) -> f64 {
        let t = self.clamp_threshold;
        let k = self.smooth_sharpness / t;
        1.0 - sigmoid(k * (x - t))
    }
}

#[inline]
fn softplus(z: f64, k: f64) -> f64 {
    let kz = k * z;
    if kz > 0.0 {
        z + (-kz).exp().ln_1p() / k
    } else {
        kz.exp().ln_1p() / k
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Dense `height x width x depth` descriptor grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * depth {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width}x{depth} feature map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            depth,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, depth: usize) -> Self {
        Self {
            height,
            width,
            depth,
            data: vec![0.0; height * width * depth],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.depth)
    }

    /// Number of spatial locations.
    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn descriptor(&self, r: usize, c: usize) -> &[f64] {
        let i = (r * self.width + c) * self.depth;
        &self.data[i..i + self.depth]
    }

    pub fn descriptor_mut(&mut self, r: usize, c: usize) -> &mut [f64] {
        let i = (r * self.width + c) * self.depth;
        &mut self.data[i..i + self.depth]
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

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            data: self.data.iter().map(|x| x * k).collect(),
            ..self.clone()
        }
    }

    /// Stacks maps with equal spatial size along the depth axis.
    pub fn concat_depth(maps: &[FeatureMap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidParameter("no feature maps to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        if maps.iter().any(|m| m.height != h || m.width != w) {
            return Err(Error::DimensionMismatch("feature maps differ in spatial size".into()));
        }
        let depth: usize = maps.iter().map(|m| m.depth).sum();
        let mut data = Vec::with_capacity(h * w * depth);
        for loc in 0..h * w {
            for m in maps {
                data.extend_from_slice(&m.data[loc * m.depth..(loc + 1) * m.depth]);
            }
        }
        Self::new(h, w, depth, data)
    }

    pub fn check_shape(&self, other: &FeatureMap, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.height, self.width, self.depth], &self.data).expect("shape matches data")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.dims[..] {
            [h, w, d] => Self::new(h, w, d, t.to_f64()),
            _ => Err(Error::DimensionMismatch(format!(
                "feature map tensor must have rank 3, got {:?}",
                t.dims
            ))),
        }
    }
}

/// Non-zero taps of the triangular pooling kernel: for each cell index, the
/// list of `(offset within patch, weight)`.
fn pooling_taps(cfg: &DsiftConfig) -> Vec<Vec<(usize, f64)>> {
    let cell = cfg.cell_size as f64;
    (0..cfg.grid)
        .map(|a| {
            let centre = a as f64 * cell + (cell - 1.0) / 2.0;
            (0..cfg.patch_size())
                .filter_map(|d| {
                    let wgt = 1.0 - (d as f64 - centre).abs() / cell;
                    (wgt > 0.0).then_some((d, wgt))
                })
                .collect()
        })
        .collect()
}

/// Forward intermediates retained for the backward pass.
pub(crate) struct DsiftTape {
    cfg: DsiftConfig,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    mag: Vec<f64>,
    bin: Vec<usize>,
    frac: Vec<f64>,
    /// Pooled, unnormalized descriptors.
    raw: Vec<f64>,
    /// Clamped descriptors before renormalization.
    clamped: Vec<f64>,
    features: FeatureMap,
}

impl DsiftTape {
    pub(crate) fn forward(img: &GrayImage, cfg: &DsiftConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = img.dims();
        let (out_h, out_w) = cfg.output_dims(h, w)?;
        let n = h * w;
        let no = cfg.num_orientations;
        let depth = cfg.depth();

        // 1. gradients
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        for u in 0..h {
            let (up, dn) = (u.saturating_sub(1), (u + 1).min(h - 1));
            for v in 0..w {
                let (lf, rt) = (v.saturating_sub(1), (v + 1).min(w - 1));
                gx[u * w + v] = 0.5 * (img.get(u, rt) - img.get(u, lf));
                gy[u * w + v] = 0.5 * (img.get(dn, v) - img.get(up, v));
            }
        }

        // 2. soft orientation assignment
        let bins_per_radian = no as f64 / (2.0 * PI);
        let mut mag = vec![0.0; n];
        let mut bin = vec![0usize; n];
        let mut frac = vec![0.0; n];
        let mut planes = vec![0.0; no * n];
        for p in 0..n {
            let m = gx[p].hypot(gy[p]);
            mag[p] = m;
            if m == 0.0 {
                continue;
            }
            let mut pos = gy[p].atan2(gx[p]) * bins_per_radian;
            if pos < 0.0 {
                pos += no as f64;
            }
            let k = pos.floor();
            let f = pos - k;
            let k0 = (k as usize) % no;
            bin[p] = k0;
            frac[p] = f;
            planes[k0 * n + p] += m * (1.0 - f);
            planes[((k0 + 1) % no) * n + p] += m * f;
        }

        // 3. separable triangular pooling
        let taps = pooling_taps(cfg);
        let grid = cfg.grid;
        // rowpool[((o * h + u) * out_w + j) * grid + b]
        let mut rowpool = vec![0.0; no * h * out_w * grid];
        for o in 0..no {
            let plane = &planes[o * n..(o + 1) * n];
            for u in 0..h {
                let row = &plane[u * w..(u + 1) * w];
                for j in 0..out_w {
                    let c0 = j * cfg.stride;
                    for (b, tb) in taps.iter().enumerate() {
                        let s: f64 = tb.iter().map(|&(dv, wt)| wt * row[c0 + dv]).sum();
                        rowpool[((o * h + u) * out_w + j) * grid + b] = s;
                    }
                }
            }
        }
        let mut raw = vec![0.0; out_h * out_w * depth];
        for i in 0..out_h {
            let r0 = i * cfg.stride;
            for j in 0..out_w {
                let desc = &mut raw[(i * out_w + j) * depth..(i * out_w + j + 1) * depth];
                for (a, ta) in taps.iter().enumerate() {
                    for b in 0..grid {
                        for o in 0..no {
                            let s: f64 = ta
                                .iter()
                                .map(|&(du, wt)| wt * rowpool[((o * h + r0 + du) * out_w + j) * grid + b])
                                .sum();
                            desc[(a * grid + b) * no + o] = s;
                        }
                    }
                }
            }
        }

        // 4. normalize, clamp, renormalize
        let mut clamped = vec![0.0; raw.len()];
        let mut out = vec![0.0; raw.len()];
        for loc in 0..out_h * out_w {
            let range = loc * depth..(loc + 1) * depth;
            let d = &raw[range.clone()];
            let n1 = norm(d) + cfg.norm_eps;
            let z = &mut clamped[range.clone()];
            for (zk, &dk) in z.iter_mut().zip(d) {
                *zk = cfg.soft_clamp(dk / n1);
            }
            let n2 = norm(z) + cfg.norm_eps;
            for (ok, &zk) in out[range].iter_mut().zip(z.iter()) {
                *ok = zk / n2;
            }
        }

        Ok(Self {
            cfg: *cfg,
            h,
            w,
            out_h,
            out_w,
            gx,
            gy,
            mag,
            bin,
            frac,
            raw,
            clamped,
            features: FeatureMap::new(out_h, out_w, depth, out)?,
        })
    }

    pub(crate) fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub(crate) fn into_features(self) -> FeatureMap {
        self.features
    }

    /// Vector-Jacobian product: gradient with respect to the input image of
    /// `<upstream, features>`.
    pub(crate) fn backward(&self, upstream: &FeatureMap) -> Result<GrayImage> {
        self.features.check_shape(upstream, "dsift upstream gradient")?;
        let cfg = &self.cfg;
        let (h, w) = (self.h, self.w);
        let n = h * w;
        let no = cfg.num_orientations;
        let depth = cfg.depth();
        let grid = cfg.grid;

        // 4. normalization stage
        let mut draw = vec![0.0; self.raw.len()];
        for loc in 0..self.out_h * self.out_w {
            let range = loc * depth..(loc + 1) * depth;
            let g = &upstream.as_slice()[range.clone()];
            let z = &self.clamped[range.clone()];
            let d = &self.raw[range.clone()];

            let zn = norm(z);
            let n2 = zn + cfg.norm_eps;
            let gz_dot: f64 = g.iter().zip(z).map(|(a, b)| a * b).sum();
            let coef2 = if zn > 0.0 { gz_dot / (zn * n2 * n2) } else { 0.0 };

            let dn = norm(d);
            let n1 = dn + cfg.norm_eps;
            // dy_k = dz_k * clamp'(y_k)
            let dy: Vec<f64> = (0..depth)
                .map(|k| (g[k] / n2 - z[k] * coef2) * cfg.soft_clamp_deriv(d[k] / n1))
                .collect();
            let yd_dot: f64 = dy.iter().zip(d).map(|(a, b)| a * b).sum();
            let coef1 = if dn > 0.0 { yd_dot / (dn * n1 * n1) } else { 0.0 };
            for (k, out) in draw[range].iter_mut().enumerate() {
                *out = dy[k] / n1 - d[k] * coef1;
            }
        }

        // 3. pooling transpose
        let taps = pooling_taps(cfg);
        let mut drowpool = vec![0.0; no * h * self.out_w * grid];
        for i in 0..self.out_h {
            let r0 = i * cfg.stride;
            for j in 0..self.out_w {
                let desc = &draw[(i * self.out_w + j) * depth..(i * self.out_w + j + 1) * depth];
                for (a, ta) in taps.iter().enumerate() {
                    for b in 0..grid {
                        for o in 0..no {
                            let g = desc[(a * grid + b) * no + o];
                            for &(du, wt) in ta {
                                drowpool[((o * h + r0 + du) * self.out_w + j) * grid + b] += wt * g;
                            }
                        }
                    }
                }
            }
        }
        let mut dplanes = vec![0.0; no * n];
        for o in 0..no {
            for u in 0..h {
                for j in 0..self.out_w {
                    let c0 = j * cfg.stride;
                    for (b, tb) in taps.iter().enumerate() {
                        let g = drowpool[((o * h + u) * self.out_w + j) * grid + b];
                        for &(dv, wt) in tb {
                            dplanes[o * n + u * w + c0 + dv] += wt * g;
                        }
                    }
                }
            }
        }

        // 2. orientation assignment
        let bins_per_radian = no as f64 / (2.0 * PI);
        let mut dgx = vec![0.0; n];
        let mut dgy = vec![0.0; n];
        for p in 0..n {
            let m = self.mag[p];
            if m == 0.0 {
                continue;
            }
            let k0 = self.bin[p];
            let k1 = (k0 + 1) % no;
            let f = self.frac[p];
            let g0 = dplanes[k0 * n + p];
            let g1 = dplanes[k1 * n + p];
            let dm = g0 * (1.0 - f) + g1 * f;
            let dtheta = m * (g1 - g0) * bins_per_radian;
            let (x, y) = (self.gx[p], self.gy[p]);
            let m2 = m * m;
            dgx[p] = dm * x / m - dtheta * y / m2;
            dgy[p] = dm * y / m + dtheta * x / m2;
        }

        // 1. centred differences
        let mut dimg = vec![0.0; n];
        for u in 0..h {
            let (up, dn) = (u.saturating_sub(1), (u + 1).min(h - 1));
            for v in 0..w {
                let (lf, rt) = (v.saturating_sub(1), (v + 1).min(w - 1));
                let p = u * w + v;
                let a = 0.5 * dgx[p];
                dimg[u * w + rt] += a;
                dimg[u * w + lf] -= a;
                let b = 0.5 * dgy[p];
                dimg[dn * w + v] += b;
                dimg[up * w + v] -= b;
            }
        }
        GrayImage::new(h, w, dimg)
    }
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Dense SIFT feature map of `img`.
pub fn dsift_forward(img: &GrayImage, cfg: &DsiftConfig) -> Result<FeatureMap> {
    DsiftTape::forward(img, cfg).map(DsiftTape::into_features)
}

/// Gradient of `<upstream, dsift_forward(img)>` with respect to `img`.
pub fn dsift_backward(img: &GrayImage, cfg: &DsiftConfig, upstream: &FeatureMap) -> Result<GrayImage> {
    DsiftTape::forward(img, cfg)?.backward(upstream)
}

/// Features of every plane of a multi-channel input, stacked along depth.
pub fn dsift_stack(planes: &[GrayImage], cfg: &DsiftConfig) -> Result<FeatureMap> {
    let maps = planes
        .iter()
        .map(|p| dsift_forward(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    FeatureMap::concat_depth(&maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn constant_image_gives_zero_descriptors() {
        let f = dsift_forward(&GrayImage::filled(20, 24, 0.4), &DsiftConfig::default()).unwrap();
        assert!(f.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn output_shape() {
        let f = dsift_forward(&GrayImage::zeros(32, 32), &DsiftConfig::default()).unwrap();
        assert_eq!(f.shape(), (5, 5, 128));
        let f = dsift_forward(&GrayImage::zeros(34, 64), &DsiftConfig::default()).unwrap();
        assert_eq!(f.shape(), (5, 13, 128));
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            dsift_forward(&GrayImage::zeros(15, 40), &DsiftConfig::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn pooling_weights_sum_to_one_in_the_interior() {
        let taps = pooling_taps(&DsiftConfig::default());
        let mut total = [0.0; 16];
        for t in &taps {
            for &(d, w) in t {
                total[d] += w;
            }
        }
        for (d, &t) in total.iter().enumerate() {
            if (2..14).contains(&d) {
                assert!((t - 1.0).abs() < 1e-12);
            } else {
                assert!(t < 1.0);
            }
        }
    }

    #[test]
    fn descriptor_norms_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = DsiftConfig::default();
        for _ in 0..5 {
            let img = random_image(&mut rng, 24, 28);
            let f = dsift_forward(&img, &cfg).unwrap();
            for r in 0..f.height() {
                for c in 0..f.width() {
                    assert!(norm(f.descriptor(r, c)) <= 1.0 + 1e-6);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 20, 20);
        let cfg = DsiftConfig::default();
        let (h, w) = cfg.output_dims(20, 20).unwrap();
        let g = dsift_backward(&img, &cfg, &FeatureMap::zeros(h, w, cfg.depth())).unwrap();
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 20, 20);
        let cfg = DsiftConfig::default();
        let (h, w) = cfg.output_dims(20, 20).unwrap();
        let up = FeatureMap::new(h, w, 128, (0..h * w * 128).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let g1 = dsift_backward(&img, &cfg, &up).unwrap();
        let g2 = dsift_backward(&img, &cfg, &up.scaled(2.0)).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn upstream_shape_checked() {
        let img = GrayImage::zeros(20, 20);
        let cfg = DsiftConfig::default();
        assert!(matches!(
            dsift_backward(&img, &cfg, &FeatureMap::zeros(1, 1, 128)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn config_validation() {
        let d = DsiftConfig::default();
        for bad in [
            DsiftConfig {
                num_orientations: 1,
                ..d
            },
            DsiftConfig {
                clamp_threshold: 0.0,
                ..d
            },
            DsiftConfig { norm_eps: 0.0, ..d },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn concat_depth_interleaves_per_location() {
        let a = FeatureMap::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let b = FeatureMap::new(1, 2, 2, vec![10.0, 11.0, 20.0, 21.0]).unwrap();
        let c = FeatureMap::concat_depth(&[a, b]).unwrap();
        assert_eq!(c.shape(), (1, 2, 3));
        assert_eq!(c.as_slice(), &[1.0, 10.0, 11.0, 2.0, 20.0, 21.0]);
    }
}

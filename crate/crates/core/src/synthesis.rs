//! Multi-region feature inversion: regularizers, regional and combined
//! objectives, and momentum gradient descent.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::crossmap::{crossmap_forward, CrossMap};
use crate::dsift::{dsift_stack, DsiftConfig, DsiftTape, FeatureMap};
use crate::error::{Error, Result};
use crate::imaging::io::atomic_write;
use crate::imaging::{crop_region, BBox, GrayImage, RegionSet, ThermalStack};

/// Starting image of the descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Zeros,
    /// Every pixel 0.5.
    Mean,
    /// Uniform in [0.45, 0.55] from the given seed.
    Noise(u64),
}

impl InitMode {
    pub fn image(self, height: usize, width: usize) -> GrayImage {
        match self {
            InitMode::Zeros => GrayImage::zeros(height, width),
            InitMode::Mean => GrayImage::filled(height, width, 0.5),
            InitMode::Noise(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                GrayImage::from_fn(height, width, |_, _| rng.gen_range(0.45..=0.55))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    /// Weight of the alpha-norm penalty.
    pub lambda_alpha: f64,
    /// Weight of the total-variation penalty.
    pub lambda_tv: f64,
    pub alpha: f64,
    pub tv_beta: f64,
    pub momentum: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub init_mode: InitMode,
    pub tv_eps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            lambda_alpha: 1e-4,
            lambda_tv: 1e-4,
            alpha: 6.0,
            tv_beta: 2.0,
            momentum: 0.9,
            learning_rate: 0.004,
            iterations: 400,
            // A flat start has zero feature gradient and never moves.
            init_mode: InitMode::Noise(0),
            tv_eps: 1e-8,
        }
    }
}

impl SynthConfig {
    /// Sets both regularizer weights to `lambda`.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda_alpha = lambda;
        self.lambda_tv = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} out of range: {v}")));
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum);
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate", self.learning_rate);
        }
        if !(self.alpha >= 1.0) || !self.alpha.is_finite() {
            return bad("alpha", self.alpha);
        }
        if !(self.tv_beta >= 1.0) || !self.tv_beta.is_finite() {
            return bad("tv_beta", self.tv_beta);
        }
        if !(self.tv_eps > 0.0) || !self.tv_eps.is_finite() {
            return bad("tv_eps", self.tv_eps);
        }
        for (what, v) in [("lambda_alpha", self.lambda_alpha), ("lambda_tv", self.lambda_tv)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(what, v);
            }
        }
        Ok(())
    }
}

/// `sum |x|^alpha` and its gradient.
pub fn reg_alpha(x: &GrayImage, alpha: f64) -> Result<(f64, GrayImage)> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be >= 1, got {alpha}")));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(x.as_slice().len());
    for &p in x.as_slice() {
        let a = p.abs();
        value += a.powf(alpha);
        grad.push(if p == 0.0 {
            0.0
        } else {
            alpha * p.signum() * a.powf(alpha - 1.0)
        });
    }
    Ok((value, GrayImage::new(x.height(), x.width(), grad)?))
}

/// Smoothed total variation `sum (dx² + dy² + eps)^(beta/2)` over forward
/// differences, with zero difference past the last row and column.
pub fn reg_tv(x: &GrayImage, tv_beta: f64, tv_eps: f64) -> Result<(f64, GrayImage)> {
    if !(tv_beta >= 1.0) || !tv_beta.is_finite() {
        return Err(Error::InvalidParameter(format!("tv_beta must be >= 1, got {tv_beta}")));
    }
    if !(tv_eps >= 0.0) || !tv_eps.is_finite() {
        return Err(Error::InvalidParameter(format!("tv_eps must be >= 0, got {tv_eps}")));
    }
    let (h, w) = x.dims();
    let p = x.as_slice();
    let mut grad = vec![0.0; h * w];
    let mut value = 0.0;
    for u in 0..h {
        for v in 0..w {
            let i = u * w + v;
            let dx = if v + 1 < w { p[i + 1] - p[i] } else { 0.0 };
            let dy = if u + 1 < h { p[i + w] - p[i] } else { 0.0 };
            let s = dx * dx + dy * dy + tv_eps;
            if s == 0.0 {
                continue;
            }
            value += s.powf(tv_beta / 2.0);
            let c = tv_beta * s.powf(tv_beta / 2.0 - 1.0);
            grad[i] -= c * (dx + dy);
            if v + 1 < w {
                grad[i + 1] += c * dx;
            }
            if u + 1 < h {
                grad[i + w] += c * dy;
            }
        }
    }
    Ok((value, GrayImage::new(h, w, grad)?))
}

/// Feature loss `||g(x) - target||²` plus the weighted regularizers, with its
/// gradient, for a whole image.
fn crop_objective(
    x: &GrayImage,
    target: &FeatureMap,
    dsift: &DsiftConfig,
    cfg: &SynthConfig,
) -> Result<(f64, GrayImage)> {
    let tape = DsiftTape::forward(x, dsift)?;
    let feats = tape.features();
    feats.check_shape(target, "region target")?;
    let mut diff = feats.clone();
    let mut loss = 0.0;
    for (d, t) in diff.as_mut_slice().iter_mut().zip(target.as_slice()) {
        *d -= t;
        loss += *d * *d;
        *d *= 2.0;
    }
    let mut grad = tape.backward(&diff)?;
    let (ra, ga) = reg_alpha(x, cfg.alpha)?;
    let (rt, gt) = reg_tv(x, cfg.tv_beta, cfg.tv_eps)?;
    for ((g, a), t) in grad.as_mut_slice().iter_mut().zip(ga.as_slice()).zip(gt.as_slice()) {
        *g += cfg.lambda_alpha * a + cfg.lambda_tv * t;
    }
    Ok((loss + cfg.lambda_alpha * ra + cfg.lambda_tv * rt, grad))
}

/// Regional objective on the crop of `x` under `bbox`. The gradient is
/// returned at full image size and is zero outside the box.
pub fn region_objective(
    x: &GrayImage,
    bbox: &BBox,
    target: &FeatureMap,
    dsift: &DsiftConfig,
    cfg: &SynthConfig,
) -> Result<(f64, GrayImage)> {
    let crop = crop_region(x, bbox)?;
    let (value, g) = crop_objective(&crop, target, dsift, cfg)?;
    let mut full = GrayImage::zeros(x.height(), x.width());
    crate::imaging::paste_region(&mut full, &g, bbox)?;
    Ok((value, full))
}

/// Single-region objective on the whole image, the form the multi-region
/// objective reduces to with only a global region.
pub fn inversion_objective(
    x: &GrayImage,
    target: &FeatureMap,
    dsift: &DsiftConfig,
    cfg: &SynthConfig,
) -> Result<(f64, GrayImage)> {
    crop_objective(x, target, dsift, cfg)
}

/// Per-region feature transform: identity for pure inversion, or a trained
/// cross-spectrum map.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionMapping {
    Identity,
    Learned(Box<CrossMap>),
}

impl RegionMapping {
    pub fn apply(&self, f: &FeatureMap) -> Result<FeatureMap> {
        match self {
            RegionMapping::Identity => Ok(f.clone()),
            RegionMapping::Learned(m) => crossmap_forward(m, f),
        }
    }
}

/// Everything the combined objective needs: regions with their weight fields
/// and one precomputed target per region (global first).
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub regions: RegionSet,
    pub targets: Vec<FeatureMap>,
    pub dsift: DsiftConfig,
    pub synth: SynthConfig,
}

impl ObjectiveSpec {
    /// Computes each region's target `h_i(g(t_i))` from the thermal crop.
    /// `maps` is ordered like the regions, global first.
    pub fn from_thermal(
        thermal: &ThermalStack,
        regions: RegionSet,
        maps: &[RegionMapping],
        dsift: DsiftConfig,
        synth: SynthConfig,
    ) -> Result<Self> {
        if thermal.dims() != regions.dims() {
            return Err(Error::DimensionMismatch(format!(
                "thermal input {:?} does not match region layout {:?}",
                thermal.dims(),
                regions.dims()
            )));
        }
        if maps.len() != regions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} region maps for {} regions",
                maps.len(),
                regions.len()
            )));
        }
        let mut targets = Vec::with_capacity(maps.len());
        for (region, map) in regions.regions().zip(maps) {
            if let RegionMapping::Learned(m) = map {
                if m.region_id() != region.id {
                    return Err(Error::InvalidParameter(format!(
                        "map for region '{}' supplied for region '{}'",
                        m.region_id(),
                        region.id
                    )));
                }
            }
            let crops = thermal
                .planes()
                .iter()
                .map(|p| crop_region(p, &region.bbox))
                .collect::<Result<Vec<_>>>()?;
            targets.push(map.apply(&dsift_stack(&crops, &dsift)?)?);
        }
        let spec = Self {
            regions,
            targets,
            dsift,
            synth,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.dsift.validate()?;
        self.synth.validate()?;
        if self.targets.len() != self.regions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for {} regions",
                self.targets.len(),
                self.regions.len()
            )));
        }
        for (region, t) in self.regions.regions().zip(&self.targets) {
            let (oh, ow) = self.dsift.output_dims(region.bbox.h, region.bbox.w)?;
            if t.shape() != (oh, ow, self.dsift.depth()) {
                return Err(Error::DimensionMismatch(format!(
                    "target for region '{}' is {:?}, expected {:?}",
                    region.id,
                    t.shape(),
                    (oh, ow, self.dsift.depth())
                )));
            }
        }
        Ok(())
    }
}

/// Value of the combined objective together with its parts.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    /// `sum_i mean_weight_i * J_i`, used for monitoring.
    pub value: f64,
    /// Per-pixel blend `sum_i w_i(u, v) * grad J_i(u, v)`.
    pub grad: GrayImage,
    /// `J_i` for each region, global first.
    pub region_values: Vec<f64>,
}

/// Combined multi-region objective and its blended gradient.
pub fn total_objective(x: &GrayImage, spec: &ObjectiveSpec) -> Result<ObjectiveEval> {
    if x.dims() != spec.regions.dims() {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} does not match region layout {:?}",
            x.dims(),
            spec.regions.dims()
        )));
    }
    let parts = (0..spec.regions.len())
        .into_par_iter()
        .map(|i| {
            let r = spec.regions.region(i);
            region_objective(x, &r.bbox, &spec.targets[i], &spec.dsift, &spec.synth)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grad = vec![0.0; x.as_slice().len()];
    let mut value = 0.0;
    let mut region_values = Vec::with_capacity(parts.len());
    for (i, (j_i, g_i)) in parts.iter().enumerate() {
        value += spec.regions.mean_weight(i) * j_i;
        region_values.push(*j_i);
        for ((acc, w), g) in grad.iter_mut().zip(spec.regions.field(i)).zip(g_i.as_slice()) {
            *acc += w * g;
        }
    }
    Ok(ObjectiveEval {
        value,
        grad: GrayImage::new(x.height(), x.width(), grad)?,
        region_values,
    })
}

/// Objective history of one synthesis run. Entry `j` is evaluated at the
/// iterate `x^j`, so a run of `n` iterations records `n + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisTrace {
    pub region_ids: Vec<String>,
    pub objective: Vec<f64>,
    pub region_values: Vec<Vec<f64>>,
}

impl SynthesisTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,J");
        for id in &self.region_ids {
            let _ = write!(out, ",J_{id}");
        }
        out.push('\n');
        for (j, (v, parts)) in self.objective.iter().zip(&self.region_values).enumerate() {
            let _ = write!(out, "{j},{v:e}");
            for p in parts {
                let _ = write!(out, ",{p:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path, self.to_csv().as_bytes())
    }
}

/// Momentum descent `v <- mu v - eta grad J(x)`, `x <- x + v`, from the
/// configured initialization.
pub fn synthesize(spec: &ObjectiveSpec) -> Result<(GrayImage, SynthesisTrace)> {
    let (h, w) = spec.regions.dims();
    synthesize_from(spec, spec.synth.init_mode.image(h, w))
}

/// As [`synthesize`], starting from an explicit image.
pub fn synthesize_from(spec: &ObjectiveSpec, init: GrayImage) -> Result<(GrayImage, SynthesisTrace)> {
    spec.validate()?;
    let cfg = &spec.synth;
    let mut x = init;
    let mut v = vec![0.0; x.as_slice().len()];
    let mut trace = SynthesisTrace {
        region_ids: spec.regions.regions().map(|r| r.id.clone()).collect(),
        objective: Vec::with_capacity(cfg.iterations + 1),
        region_values: Vec::with_capacity(cfg.iterations + 1),
    };
    for iteration in 0..=cfg.iterations {
        if x.as_slice().iter().any(|p| !p.is_finite()) {
            return Err(Error::DivergedObjective { iteration });
        }
        let eval = match total_objective(&x, spec) {
            Ok(e) => e,
            // The spec is already validated, so this can only be an
            // intermediate value that overflowed.
            Err(Error::InvalidParameter(_)) => return Err(Error::DivergedObjective { iteration }),
            Err(e) => return Err(e),
        };
        if !eval.value.is_finite() {
            return Err(Error::DivergedObjective { iteration });
        }
        log::debug!("synthesis iteration {iteration}: J = {:.6e}", eval.value);
        trace.objective.push(eval.value);
        trace.region_values.push(eval.region_values);
        if iteration == cfg.iterations {
            break;
        }
        for ((xi, vi), gi) in x.as_mut_slice().iter_mut().zip(&mut v).zip(eval.grad.as_slice()) {
            *vi = cfg.momentum * *vi - cfg.learning_rate * gi;
            *xi += *vi;
        }
    }
    Ok((x, trace))
}

//! Region-specific cross-spectrum regressors: a per-location MLP (a stack of
//! 1x1 convolutions) from thermal descriptors to visible descriptors.

use std::io::{BufRead, Read};
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsift::FeatureMap;
use crate::error::{Error, Result};
use crate::imaging::io::atomic_write;
use crate::tensor::Tensor;

pub const HIDDEN_UNITS: usize = 200;
const MODEL_MAGIC: &str = "XSYNTH-CROSSMAP";
const MODEL_VERSION: u32 = 1;
const TENSOR_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

/// Two tanh hidden layers of [`HIDDEN_UNITS`] units and a linear output layer.
/// Weight matrices are stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMap {
    region_id: String,
    weights: [Array2<f64>; 3],
    biases: [Array1<f64>; 3],
}

/// Parameter gradients, laid out like [`CrossMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMapGrads {
    pub weights: [Array2<f64>; 3],
    pub biases: [Array1<f64>; 3],
}

fn check_region_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '=') {
        return Err(Error::InvalidParameter(format!("invalid region id '{id}'")));
    }
    Ok(())
}

/// Rounds to the nearest single-precision value so the model file is exact.
fn to_f32_grid(a: f64) -> f64 {
    a as f32 as f64
}

impl CrossMap {
    /// Builds a map from explicit parameters, checking the layer layout.
    pub fn from_parts(
        region_id: impl Into<String>,
        weights: [Array2<f64>; 3],
        biases: [Array1<f64>; 3],
    ) -> Result<Self> {
        let region_id = region_id.into();
        check_region_id(&region_id)?;
        let d_in = weights[0].ncols();
        let d_out = weights[2].nrows();
        if d_in == 0 || d_out == 0 {
            return Err(Error::InvalidParameter("crossmap dimensions must be >= 1".into()));
        }
        let dims = [d_in, HIDDEN_UNITS, HIDDEN_UNITS, d_out];
        for l in 0..3 {
            if weights[l].dim() != (dims[l + 1], dims[l]) || biases[l].len() != dims[l + 1] {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} must be {}x{} with {} biases, got {:?} and {}",
                    l + 1,
                    dims[l + 1],
                    dims[l],
                    dims[l + 1],
                    weights[l].dim(),
                    biases[l].len()
                )));
            }
        }
        let all_finite = weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && biases.iter().all(|b| b.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::InvalidParameter("non-finite crossmap parameter".into()));
        }
        Ok(Self {
            region_id,
            weights,
            biases,
        })
    }

    pub fn region_id(&self) -> &str {
        &self.region_id
    }

    pub fn d_in(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weights[2].nrows()
    }

    pub fn layer_dims(&self) -> [usize; 4] {
        [self.d_in(), HIDDEN_UNITS, HIDDEN_UNITS, self.d_out()]
    }

    pub fn weights(&self) -> &[Array2<f64>; 3] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>; 3] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>; 3] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>; 3] {
        &mut self.biases
    }

    /// Applies the MLP to every row of `x` (`n x d_in`), returning the two
    /// hidden activations and the output.
    fn forward_rows(&self, x: &Array2<f64>) -> [Array2<f64>; 3] {
        let mut h1 = x.dot(&self.weights[0].t()) + &self.biases[0];
        h1.mapv_inplace(f64::tanh);
        let mut h2 = h1.dot(&self.weights[1].t()) + &self.biases[1];
        h2.mapv_inplace(f64::tanh);
        let out = h2.dot(&self.weights[2].t()) + &self.biases[2];
        [h1, h2, out]
    }

    /// Gradients of `<g, forward(x)>` for row-batched input and upstream.
    fn backward_rows(&self, x: &Array2<f64>, acts: &[Array2<f64>; 3], g: &Array2<f64>) -> (CrossMapGrads, Array2<f64>) {
        let [h1, h2, _] = acts;
        let dw3 = g.t().dot(h2);
        let db3 = g.sum_axis(Axis(0));
        let mut da2 = g.dot(&self.weights[2]);
        da2.zip_mut_with(h2, |d, &h| *d *= 1.0 - h * h);
        let dw2 = da2.t().dot(h1);
        let db2 = da2.sum_axis(Axis(0));
        let mut da1 = da2.dot(&self.weights[1]);
        da1.zip_mut_with(h1, |d, &h| *d *= 1.0 - h * h);
        let dw1 = da1.t().dot(x);
        let db1 = da1.sum_axis(Axis(0));
        let dx = da1.dot(&self.weights[0]);
        (
            CrossMapGrads {
                weights: [dw1, dw2, dw3],
                biases: [db1, db2, db3],
            },
            dx,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.layer_dims();
        let mut out = format!(
            "{MODEL_MAGIC} {MODEL_VERSION}\nregion_id={}\ndims={},{},{},{}\ntensors={}\n\n",
            self.region_id,
            dims[0],
            dims[1],
            dims[2],
            dims[3],
            TENSOR_NAMES.join(",")
        )
        .into_bytes();
        for l in 0..3 {
            let w = &self.weights[l];
            let wt = Tensor::from_f64(vec![w.nrows(), w.ncols()], &w.iter().copied().collect::<Vec<_>>())
                .expect("shape matches data");
            out.extend(wt.to_bytes());
            let b = &self.biases[l];
            let bt = Tensor::from_f64(vec![b.len()], &b.to_vec()).expect("shape matches data");
            out.extend(bt.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = bytes;
        let mut header = Vec::new();
        loop {
            let mut line = String::new();
            let n = reader
                .read_line(&mut line)
                .map_err(|_| Error::CorruptFile("crossmap header is not text".into()))?;
            if n == 0 {
                return Err(Error::CorruptFile("truncated crossmap header".into()));
            }
            let line = line.trim_end_matches('\n');
            if line.is_empty() {
                break;
            }
            header.push(line.to_string());
        }
        let first = header.first().map(String::as_str).unwrap_or("");
        if first != format!("{MODEL_MAGIC} {MODEL_VERSION}") {
            return Err(Error::FormatVersionMismatch(format!(
                "expected '{MODEL_MAGIC} {MODEL_VERSION}', found '{first}'"
            )));
        }
        let field = |key: &str| {
            header
                .iter()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::CorruptFile(format!("crossmap header lacks '{key}'")))
        };
        let region_id = field("region_id")?.to_string();
        let dims: Vec<usize> = field("dims")?
            .split(',')
            .map(|d| {
                d.parse()
                    .map_err(|_| Error::CorruptFile(format!("bad dims entry '{d}'")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 4 || dims[1] != HIDDEN_UNITS || dims[2] != HIDDEN_UNITS {
            return Err(Error::FormatVersionMismatch(format!("unsupported layer dims {dims:?}")));
        }
        if field("tensors")? != TENSOR_NAMES.join(",") {
            return Err(Error::FormatVersionMismatch("unexpected tensor index".into()));
        }

        let mut read_tensor = |expect: &[usize]| -> Result<Vec<f64>> {
            let t = Tensor::read_from(&mut reader)?;
            if t.dims != expect {
                return Err(Error::CorruptFile(format!(
                    "tensor dims {:?}, expected {expect:?}",
                    t.dims
                )));
            }
            Ok(t.to_f64())
        };
        let mut ws = Vec::new();
        let mut bs = Vec::new();
        for l in 0..3 {
            let w = read_tensor(&[dims[l + 1], dims[l]])?;
            ws.push(Array2::from_shape_vec((dims[l + 1], dims[l]), w).expect("checked dims"));
            bs.push(Array1::from_vec(read_tensor(&[dims[l + 1]])?));
        }
        let mut rest = Vec::new();
        reader.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::CorruptFile("trailing bytes after crossmap tensors".into()));
        }
        let [w1, w2, w3]: [Array2<f64>; 3] = ws.try_into().expect("three layers");
        let [b1, b2, b3]: [Array1<f64>; 3] = bs.try_into().expect("three layers");
        Self::from_parts(region_id, [w1, w2, w3], [b1, b2, b3])
    }
}

/// Uniform `[-scale/sqrt(fan_in), scale/sqrt(fan_in)]` weights, zero biases.
pub fn init_crossmap(region_id: &str, d_in: usize, d_out: usize, seed: u64, scale: f64) -> Result<CrossMap> {
    if d_in == 0 || d_out == 0 {
        return Err(Error::InvalidParameter("crossmap dimensions must be >= 1".into()));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!("init scale must be >= 0, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [d_in, HIDDEN_UNITS, HIDDEN_UNITS, d_out];
    let mut layer = |l: usize| {
        let bound = scale / (dims[l] as f64).sqrt();
        Array2::from_shape_simple_fn((dims[l + 1], dims[l]), || {
            if bound > 0.0 {
                to_f32_grid(rng.gen_range(-bound..=bound))
            } else {
                0.0
            }
        })
    };
    let weights = [layer(0), layer(1), layer(2)];
    let biases = [
        Array1::zeros(HIDDEN_UNITS),
        Array1::zeros(HIDDEN_UNITS),
        Array1::zeros(d_out),
    ];
    CrossMap::from_parts(region_id, weights, biases)
}

fn feature_rows(f: &FeatureMap) -> Array2<f64> {
    Array2::from_shape_vec((f.locations(), f.depth()), f.as_slice().to_vec()).expect("shape matches data")
}

fn check_input(m: &CrossMap, f: &FeatureMap) -> Result<()> {
    if f.depth() != m.d_in() {
        return Err(Error::DimensionMismatch(format!(
            "feature depth {} does not match crossmap input {}",
            f.depth(),
            m.d_in()
        )));
    }
    Ok(())
}

/// Applies the map independently at every spatial location.
pub fn crossmap_forward(m: &CrossMap, f: &FeatureMap) -> Result<FeatureMap> {
    check_input(m, f)?;
    let [_, _, out] = m.forward_rows(&feature_rows(f));
    FeatureMap::new(f.height(), f.width(), m.d_out(), out.into_raw_vec_and_offset().0)
}

/// Parameter and input gradients of `<upstream, crossmap_forward(m, f)>`.
pub fn crossmap_backward(m: &CrossMap, f: &FeatureMap, upstream: &FeatureMap) -> Result<(CrossMapGrads, FeatureMap)> {
    check_input(m, f)?;
    if upstream.shape() != (f.height(), f.width(), m.d_out()) {
        return Err(Error::DimensionMismatch(format!(
            "upstream {:?} does not match output {:?}",
            upstream.shape(),
            (f.height(), f.width(), m.d_out())
        )));
    }
    let x = feature_rows(f);
    let acts = m.forward_rows(&x);
    let (grads, dx) = m.backward_rows(&x, &acts, &feature_rows(upstream));
    let dx = FeatureMap::new(f.height(), f.width(), m.d_in(), dx.into_raw_vec_and_offset().0)?;
    Ok((grads, dx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 256,
            seed: 0,
            weight_init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::InvalidParameter("epochs and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Thermal/visible feature maps of one image crop, tagged with its region.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub region_id: String,
    pub thermal: FeatureMap,
    pub visible: FeatureMap,
}

/// Mini-batch SGD on the mean per-location squared error
/// `||y - h(z)||²` over every location of every pair.
///
/// Returns the trained map and the mean loss of each epoch, accumulated over
/// the epoch's batches before their updates.
pub fn train_crossmap(pairs: &[TrainingPair], cfg: &TrainConfig) -> Result<(CrossMap, Vec<f64>)> {
    cfg.validate()?;
    let first = pairs.first().ok_or(Error::EmptyTrainingSet)?;
    let (d_in, d_out) = (first.thermal.depth(), first.visible.depth());
    for p in pairs {
        if p.region_id != first.region_id {
            return Err(Error::MixedRegions(first.region_id.clone(), p.region_id.clone()));
        }
        if p.thermal.depth() != d_in || p.visible.depth() != d_out {
            return Err(Error::DimensionMismatch(
                "training pairs differ in feature depth".into(),
            ));
        }
        if (p.thermal.height(), p.thermal.width()) != (p.visible.height(), p.visible.width()) {
            return Err(Error::DimensionMismatch(
                "thermal and visible feature maps differ in spatial size".into(),
            ));
        }
    }
    let n: usize = pairs.iter().map(|p| p.thermal.locations()).sum();
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let mut z = Array2::<f64>::zeros((n, d_in));
    let mut y = Array2::<f64>::zeros((n, d_out));
    let mut row = 0;
    for p in pairs {
        let k = p.thermal.locations();
        z.slice_mut(s![row..row + k, ..]).assign(&feature_rows(&p.thermal));
        y.slice_mut(s![row..row + k, ..]).assign(&feature_rows(&p.visible));
        row += k;
    }

    let mut model = init_crossmap(&first.region_id, d_in, d_out, cfg.seed, cfg.weight_init_scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = z.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let acts = model.forward_rows(&xb);
            let diff = &acts[2] - &yb;
            total += diff.iter().map(|d| d * d).sum::<f64>();
            let g = diff * (2.0 / batch.len() as f64);
            let (grads, _) = model.backward_rows(&xb, &acts, &g);
            for l in 0..3 {
                model.weights[l].scaled_add(-cfg.learning_rate, &grads.weights[l]);
                model.biases[l].scaled_add(-cfg.learning_rate, &grads.biases[l]);
            }
        }
        let loss = total / n as f64;
        if !loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        log::debug!("crossmap {} epoch {epoch}: loss {loss:.6e}", first.region_id);
        history.push(loss);
    }
    for l in 0..3 {
        model.weights[l].mapv_inplace(to_f32_grid);
        model.biases[l].mapv_inplace(to_f32_grid);
    }
    if model.weights.iter().any(|w| w.iter().any(|x| !x.is_finite())) {
        return Err(Error::DivergedLoss { epoch: cfg.epochs });
    }
    Ok((model, history))
}

pub fn save_crossmap(m: &CrossMap, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &m.to_bytes())
}

pub fn load_crossmap(path: impl AsRef<Path>) -> Result<CrossMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    CrossMap::from_bytes(&bytes)
}

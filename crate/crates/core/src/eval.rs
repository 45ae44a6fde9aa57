//! Evaluation harness: embeddings, cosine scores, ROC/AUC/EER, SSIM and
//! landmark error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::dsift::{dsift_forward, DsiftConfig};
use crate::error::{Error, Result};
use crate::imaging::io::atomic_write;
use crate::imaging::{crop_region, BBox, GrayImage, LandmarkSet};
use crate::tensor::Tensor;

/// Precomputed vectors keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "embedding table needs non-empty vectors".into(),
            ));
        }
        let mut ids = Vec::with_capacity(entries.len());
        let mut vectors = HashMap::with_capacity(entries.len());
        for (id, v) in entries {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "embedding '{id}' has {} entries, expected {dim}",
                    v.len()
                )));
            }
            if id.is_empty() || id.contains(['\n', '\r']) {
                return Err(Error::InvalidParameter(format!("invalid embedding id {id:?}")));
            }
            if vectors.insert(id.clone(), v).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate embedding id '{id}'")));
            }
            ids.push(id);
        }
        Ok(Self { ids, dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    /// Path of the id index written next to the tensor file.
    pub fn index_path(tensor_path: &Path) -> PathBuf {
        let mut p = tensor_path.as_os_str().to_owned();
        p.push(".ids");
        PathBuf::from(p)
    }

    /// Writes the `N x D` tensor to `path` and one id per line to
    /// `<path>.ids`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let flat: Vec<f64> = self
            .ids
            .iter()
            .flat_map(|id| self.vectors[id].iter().copied())
            .collect();
        let t = Tensor::from_f64(vec![self.ids.len(), self.dim], &flat)?;
        atomic_write(path, &t.to_bytes())?;
        let mut index = self.ids.join("\n");
        index.push('\n');
        atomic_write(Self::index_path(path), index.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let read = |p: &Path| {
            std::fs::read(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::FileNotFound(p.to_path_buf()),
                _ => Error::Io(e),
            })
        };
        let bytes = read(path)?;
        let t = Tensor::read_from(&mut bytes.as_slice())?;
        if t.dims.len() != 2 {
            return Err(Error::CorruptFile(format!(
                "embedding tensor has rank {}",
                t.dims.len()
            )));
        }
        let index = String::from_utf8(read(&Self::index_path(path))?)
            .map_err(|_| Error::CorruptFile("embedding index is not UTF-8".into()))?;
        let ids: Vec<String> = index.lines().filter(|l| !l.is_empty()).map(str::to_string).collect();
        if ids.len() != t.dims[0] {
            return Err(Error::CountMismatch(ids.len(), t.dims[0]));
        }
        let data = t.to_f64();
        let d = t.dims[1];
        Self::new(
            ids.into_iter()
                .enumerate()
                .map(|(i, id)| (id, data[i * d..(i + 1) * d].to_vec()))
                .collect(),
        )
    }
}

/// Where verification vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    /// Flattened dense SIFT of the (optionally cropped) image, L2-normalized.
    DsiftPooled { dsift: DsiftConfig, crop: Option<BBox> },
    /// Vectors from an external model, looked up by image id.
    External(EmbeddingTable),
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        EmbeddingSource::DsiftPooled {
            dsift: DsiftConfig::default(),
            crop: None,
        }
    }
}

/// Embedding of the image known as `id`.
pub fn embed(img: &GrayImage, id: &str, src: &EmbeddingSource) -> Result<Vec<f64>> {
    match src {
        EmbeddingSource::DsiftPooled { dsift, crop } => {
            let f = match crop {
                Some(b) => dsift_forward(&crop_region(img, b)?, dsift)?,
                None => dsift_forward(img, dsift)?,
            };
            let norm = f.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroFeatureVector);
            }
            Ok(f.as_slice().iter().map(|x| x / norm).collect())
        }
        EmbeddingSource::External(table) => Ok(table.get(id)?.to_vec()),
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Pairs scoring at or above this value are accepted.
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocReport {
    /// Ordered by decreasing threshold, starting at `+inf`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub eer: f64,
}

/// ROC curve over all distinct thresholds, rank-statistic AUC (ties count
/// one half) and the equal error rate, interpolated linearly between the two
/// operating points that bracket FPR = FNR.
pub fn roc_auc_eer(scores: &ScoreSet) -> Result<RocReport> {
    let (g, im) = (&scores.genuine, &scores.impostor);
    if g.is_empty() || im.is_empty() {
        return Err(Error::EmptyScores);
    }
    if g.iter().chain(im).any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("non-finite score".into()));
    }
    let mut all: Vec<(f64, bool)> = g
        .iter()
        .map(|&s| (s, true))
        .chain(im.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (ng, ni) = (g.len() as f64, im.len() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    // Walk tie groups from the highest score down. Each genuine score in a
    // group beats every impostor below the group and ties those inside it.
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut wins = 0.0;
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        let (mut gk, mut ik) = (0usize, 0usize);
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                gk += 1;
            } else {
                ik += 1;
            }
            i += 1;
        }
        let impostors_below = im.len() - fp - ik;
        wins += gk as f64 * (impostors_below as f64 + 0.5 * ik as f64);
        tp += gk;
        fp += ik;
        points.push(RocPoint {
            threshold: s,
            tpr: tp as f64 / ng,
            fpr: fp as f64 / ni,
        });
    }
    let auc = wins / (ng * ni);

    let diff = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    let k = points
        .iter()
        .position(|p| diff(p) >= 0.0)
        .expect("last point has FPR = 1");
    let eer = if diff(&points[k]) == 0.0 {
        points[k].fpr
    } else {
        let (a, b) = (&points[k - 1], &points[k]);
        let (da, db) = (diff(a), diff(b));
        let t = -da / (db - da);
        a.fpr + t * (b.fpr - a.fpr)
    };
    Ok(RocReport { points, auc, eer })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

/// Mean SSIM over windows centred on every pixel, with uniform weighting
/// and replicate boundary. Each window's index is capped at 1.
pub fn ssim(a: &GrayImage, b: &GrayImage, p: &SsimParams) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "ssim of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if p.window < 3 || p.window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "ssim window must be odd and >= 3, got {}",
            p.window
        )));
    }
    if !(p.dynamic_range > 0.0) || p.k1 < 0.0 || p.k2 < 0.0 {
        return Err(Error::InvalidParameter("ssim constants must be non-negative".into()));
    }
    let (h, w) = a.dims();
    let r = (p.window / 2) as isize;
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let n = (p.window * p.window) as f64;
    let mut total = 0.0;
    for u in 0..h as isize {
        for v in 0..w as isize {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for du in -r..=r {
                for dv in -r..=r {
                    let x = a.get_clamped(u + du, v + dv);
                    let y = b.get_clamped(u + du, v + dv);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s.min(1.0);
        }
    }
    Ok(total / (h * w) as f64)
}

/// Mean Euclidean distance between corresponding landmarks.
pub fn landmark_error(detected: &LandmarkSet, truth: &LandmarkSet) -> Result<f64> {
    if detected.len() != truth.len() {
        return Err(Error::CountMismatch(detected.len(), truth.len()));
    }
    let sum: f64 = detected
        .points()
        .iter()
        .zip(truth.points())
        .map(|(p, q)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
        .sum();
    Ok(sum / detected.len() as f64)
}

/// One image's embedding with its image id and subject label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub image_id: String,
    pub subject: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub probe_id: String,
    pub gallery_id: String,
    pub score: f64,
    pub genuine: bool,
}

/// Scores every probe against every gallery entry, probe-major.
pub fn build_score_matrix(gallery: &[LabeledEmbedding], probes: &[LabeledEmbedding]) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::with_capacity(gallery.len() * probes.len());
    for p in probes {
        for g in gallery {
            out.push(ScoreRecord {
                probe_id: p.image_id.clone(),
                gallery_id: g.image_id.clone(),
                score: cosine_similarity(&p.vector, &g.vector)?,
                genuine: p.subject == g.subject,
            });
        }
    }
    if !out.iter().any(|r| r.genuine) {
        return Err(Error::NoGenuinePairs);
    }
    Ok(out)
}

/// Splits scored pairs into genuine and impostor lists.
pub fn score_set(records: &[ScoreRecord]) -> ScoreSet {
    let mut s = ScoreSet::default();
    for r in records {
        if r.genuine {
            s.genuine.push(r.score);
        } else {
            s.impostor.push(r.score);
        }
    }
    s
}

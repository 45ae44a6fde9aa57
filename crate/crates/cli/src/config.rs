//! Flat `key = value` pipeline configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use xsynth_core::crossmap::TrainConfig;
use xsynth_core::dsift::DsiftConfig;
use xsynth_core::eval::SsimParams;
use xsynth_core::imaging::{BBox, BitDepth, NlmParams, DEFAULT_DOLP_EPS};
use xsynth_core::synthesis::{InitMode, SynthConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// S0 only.
    Thermal,
    /// S0 and DoLP.
    Polarimetric,
}

/// Which thermal planes the NLM augmentation filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlmChannels {
    S0,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionsSource {
    /// The three standard face boxes, for 250x200 images.
    Default,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingChoice {
    Dsift,
    External(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub regions: RegionsSource,
    pub mode: Mode,
    pub seed: u64,
    pub dsift: DsiftConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub nlm_enabled: bool,
    pub nlm: NlmParams,
    pub nlm_channels: NlmChannels,
    pub dolp_eps: f64,
    pub eval_crop: Option<BBox>,
    pub eval_embedding: EmbeddingChoice,
    pub ssim: SsimParams,
    pub output_depth: BitDepth,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            regions: RegionsSource::Default,
            mode: Mode::Thermal,
            seed: 0,
            dsift: DsiftConfig::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            nlm_enabled: true,
            nlm: NlmParams::default(),
            nlm_channels: NlmChannels::All,
            dolp_eps: DEFAULT_DOLP_EPS,
            eval_crop: None,
            eval_embedding: EmbeddingChoice::Dsift,
            ssim: SsimParams::default(),
            output_depth: BitDepth::Eight,
            workers: 1,
        }
    }
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Config(format!("invalid value '{value}' for '{key}'"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl PipelineConfig {
    /// Parses config text. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(CliError::Config(format!("key '{k}' given twice")));
            }
        }

        let mut cfg = Self::default();
        // The combined weight first, so the specific ones can override it.
        if let Some(v) = entries.get("synth.lambda") {
            cfg.synth = cfg.synth.with_lambda(num("synth.lambda", v)?);
        }
        for (k, v) in &entries {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "regions" => {
                    cfg.regions = if v == "default" {
                        RegionsSource::Default
                    } else {
                        RegionsSource::File(base_dir.join(v))
                    }
                }
                "mode" => {
                    cfg.mode = match v {
                        "thermal" => Mode::Thermal,
                        "polarimetric" => Mode::Polarimetric,
                        _ => return Err(bad(k, v)),
                    }
                }
                "seed" => cfg.seed = num(k, v)?,
                "dsift.num_orientations" => cfg.dsift.num_orientations = num(k, v)?,
                "dsift.cell_size" => cfg.dsift.cell_size = num(k, v)?,
                "dsift.grid" => cfg.dsift.grid = num(k, v)?,
                "dsift.stride" => cfg.dsift.stride = num(k, v)?,
                "dsift.clamp_threshold" => cfg.dsift.clamp_threshold = num(k, v)?,
                "dsift.norm_eps" => cfg.dsift.norm_eps = num(k, v)?,
                "dsift.smooth_sharpness" => cfg.dsift.smooth_sharpness = num(k, v)?,
                "synth.lambda" => {}
                "synth.lambda_alpha" => cfg.synth.lambda_alpha = num(k, v)?,
                "synth.lambda_tv" => cfg.synth.lambda_tv = num(k, v)?,
                "synth.alpha" => cfg.synth.alpha = num(k, v)?,
                "synth.tv_beta" => cfg.synth.tv_beta = num(k, v)?,
                "synth.tv_eps" => cfg.synth.tv_eps = num(k, v)?,
                "synth.momentum" => cfg.synth.momentum = num(k, v)?,
                "synth.learning_rate" => cfg.synth.learning_rate = num(k, v)?,
                "synth.iterations" => cfg.synth.iterations = num(k, v)?,
                "synth.init" => {
                    cfg.synth.init_mode = match v {
                        "zeros" => InitMode::Zeros,
                        "mean" => InitMode::Mean,
                        // Seeded from the config seed below.
                        "noise" => InitMode::Noise(0),
                        _ => return Err(bad(k, v)),
                    }
                }
                "train.learning_rate" => cfg.train.learning_rate = num(k, v)?,
                "train.epochs" => cfg.train.epochs = num(k, v)?,
                "train.batch_size" => cfg.train.batch_size = num(k, v)?,
                "train.weight_init_scale" => cfg.train.weight_init_scale = num(k, v)?,
                "nlm.enabled" => cfg.nlm_enabled = boolean(k, v)?,
                "nlm.patch_radius" => cfg.nlm.patch_radius = num(k, v)?,
                "nlm.search_radius" => cfg.nlm.search_radius = num(k, v)?,
                "nlm.strength" => cfg.nlm.strength = num(k, v)?,
                "nlm.channels" => {
                    cfg.nlm_channels = match v {
                        "s0" => NlmChannels::S0,
                        "all" => NlmChannels::All,
                        _ => return Err(bad(k, v)),
                    }
                }
                "dolp.eps" => cfg.dolp_eps = num(k, v)?,
                "eval.crop" => {
                    cfg.eval_crop = if v == "full" {
                        None
                    } else {
                        let n: Vec<usize> = v.split_whitespace().map(|s| num(k, s)).collect::<Result<_>>()?;
                        if n.len() != 4 {
                            return Err(bad(k, v));
                        }
                        Some(BBox::new(n[0], n[1], n[2], n[3]))
                    }
                }
                "eval.embedding" => {
                    cfg.eval_embedding = if v == "dsift" {
                        EmbeddingChoice::Dsift
                    } else {
                        EmbeddingChoice::External(base_dir.join(v))
                    }
                }
                "eval.ssim_window" => cfg.ssim.window = num(k, v)?,
                "output_depth" => cfg.output_depth = BitDepth::from_bits(num(k, v)?).map_err(|_| bad(k, v))?,
                "workers" => cfg.workers = num(k, v)?,
                _ => return Err(CliError::Config(format!("unknown key '{k}'"))),
            }
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Routes the single seed into every random component.
    pub fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        if let InitMode::Noise(_) = self.synth.init_mode {
            self.synth.init_mode = InitMode::Noise(self.seed);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: xsynth_core::Error| CliError::Config(e.to_string());
        self.dsift.validate().map_err(cfg_err)?;
        self.synth.validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        self.nlm.validate().map_err(cfg_err)?;
        if self.dolp_eps.is_nan() || self.dolp_eps <= 0.0 {
            return Err(CliError::Config(format!("dolp.eps must be > 0, got {}", self.dolp_eps)));
        }
        if self.ssim.window < 3 || self.ssim.window.is_multiple_of(2) {
            return Err(CliError::Config("eval.ssim_window must be odd and >= 3".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be >= 1".into()));
        }
        Ok(())
    }
}

//! Dataset manifest: one CSV row per captured image set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use xsynth_core::imaging::{load_image, GrayImage, ThermalStack};

use crate::config::{Mode, PipelineConfig};
use crate::error::{CliError, Result};

pub const HEADER: [&str; 8] = [
    "subject_id",
    "condition",
    "split",
    "visible",
    "s0",
    "s1",
    "s2",
    "landmarks",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub subject_id: String,
    pub condition: String,
    pub split: Split,
    pub visible: PathBuf,
    pub s0: PathBuf,
    pub s1: Option<PathBuf>,
    pub s2: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
}

impl Entry {
    /// `<subject>_<condition>`, the stem of every per-image artifact.
    pub fn image_id(&self) -> String {
        format!("{}_{}", self.subject_id, self.condition)
    }

    pub fn load_visible(&self) -> Result<GrayImage> {
        Ok(load_image(&self.visible)?)
    }

    /// Thermal planes for the configured mode: S0, or S0 and DoLP.
    pub fn load_thermal(&self, cfg: &PipelineConfig) -> Result<ThermalStack> {
        let s0 = load_image(&self.s0)?;
        match cfg.mode {
            Mode::Thermal => Ok(ThermalStack::conventional(s0)),
            Mode::Polarimetric => {
                let (Some(p1), Some(p2)) = (&self.s1, &self.s2) else {
                    return Err(CliError::Data(format!("{} lacks S1/S2", self.image_id())));
                };
                let s1 = load_image(p1)?;
                let s2 = load_image(p2)?;
                // Stored Stokes planes are offset to [0, 1]; undo that.
                let s1 = s1.map(|x| 2.0 * x - 1.0);
                let s2 = s2.map(|x| 2.0 * x - 1.0);
                Ok(ThermalStack::polarimetric(s0, &s1, &s2, cfg.dolp_eps)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn load(path: &Path, mode: Mode) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != HEADER {
            return Err(CliError::Data(format!(
                "manifest header must be '{}'",
                HEADER.join(",")
            )));
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let field = |k: usize| rec.get(k).unwrap_or("").to_string();
            let path_of = |k: usize| -> Result<Option<PathBuf>> {
                let v = field(k);
                if v.is_empty() {
                    return Ok(None);
                }
                let p = base.join(&v);
                if !p.exists() {
                    return Err(CliError::Data(format!("row {row}: file not found: {}", p.display())));
                }
                Ok(Some(p))
            };
            let required = |k: usize| -> Result<PathBuf> {
                path_of(k)?.ok_or_else(|| CliError::Data(format!("row {row}: missing '{}' path", HEADER[k])))
            };
            let split = match field(2).as_str() {
                "train" => Split::Train,
                "eval" => Split::Eval,
                other => return Err(CliError::Data(format!("row {row}: unknown split '{other}'"))),
            };
            let entry = Entry {
                subject_id: field(0),
                condition: field(1),
                split,
                visible: required(3)?,
                s0: required(4)?,
                s1: path_of(5)?,
                s2: path_of(6)?,
                landmarks: path_of(7)?,
            };
            for (what, v) in [("subject_id", &entry.subject_id), ("condition", &entry.condition)] {
                if v.is_empty() || v.contains(|c: char| c == '/' || c == '\\' || c.is_whitespace()) {
                    return Err(CliError::Data(format!("row {row}: invalid {what} '{v}'")));
                }
            }
            if mode == Mode::Polarimetric && (entry.s1.is_none() || entry.s2.is_none()) {
                return Err(CliError::Data(format!(
                    "row {row}: polarimetric mode needs s1 and s2 paths"
                )));
            }
            entries.push(entry);
        }
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut splits: BTreeMap<&str, Split> = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if let Some(prev) = splits.insert(&e.subject_id, e.split) {
                if prev != e.split {
                    return Err(CliError::Data(format!(
                        "subject '{}' appears in both splits",
                        e.subject_id
                    )));
                }
            }
            if !ids.insert(e.image_id()) {
                return Err(CliError::Data(format!("duplicate entry '{}'", e.image_id())));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&Entry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

//! The train, synthesize and evaluate commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use xsynth_core::crossmap::{load_crossmap, save_crossmap, train_crossmap, CrossMap, TrainConfig, TrainingPair};
use xsynth_core::dsift::{dsift_forward, dsift_stack};
use xsynth_core::eval::{
    build_score_matrix, embed, landmark_error, roc_auc_eer, score_set, ssim, EmbeddingSource, EmbeddingTable,
    LabeledEmbedding, RocReport, ScoreRecord,
};
use xsynth_core::imaging::io::{atomic_write, load_landmarks, load_regions};
use xsynth_core::imaging::region::{default_face_regions, DEFAULT_FACE_HEIGHT, DEFAULT_FACE_WIDTH};
use xsynth_core::imaging::{
    build_weight_fields, crop_region, load_image, nlm_filter, save_image, BBox, Channel, GrayImage, RegionSet,
    ThermalStack,
};
use xsynth_core::synthesis::{synthesize, ObjectiveSpec, RegionMapping};

use crate::config::{EmbeddingChoice, NlmChannels, PipelineConfig, RegionsSource};
use crate::error::{CliError, Result};
use crate::manifest::{Entry, Manifest, Split};

/// Runs `f` on a pool with the configured worker count.
fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

pub fn region_set(cfg: &PipelineConfig, height: usize, width: usize) -> Result<RegionSet> {
    let locals = match &cfg.regions {
        RegionsSource::Default => {
            if (height, width) != (DEFAULT_FACE_HEIGHT, DEFAULT_FACE_WIDTH) {
                return Err(CliError::Config(format!(
                    "default regions need {DEFAULT_FACE_HEIGHT}x{DEFAULT_FACE_WIDTH} images, data is {height}x{width}; \
                     give a regions file"
                )));
            }
            default_face_regions()
        }
        RegionsSource::File(p) => {
            let file = load_regions(p).map_err(|e| CliError::Config(format!("regions file {}: {e}", p.display())))?;
            if let Some(g) = file.global {
                if g != BBox::full(height, width) {
                    return Err(CliError::Config("global region must cover the whole image".into()));
                }
            }
            file.locals
        }
    };
    build_weight_fields(height, width, locals).map_err(|e| CliError::Config(e.to_string()))
}

/// Loads every entry's images, checking they share one size.
fn load_pairs(entries: &[&Entry], cfg: &PipelineConfig) -> Result<Vec<(ThermalStack, GrayImage)>> {
    let pairs = entries
        .par_iter()
        .map(|e| Ok((e.load_thermal(cfg)?, e.load_visible()?)))
        .collect::<Result<Vec<_>>>()?;
    let dims = pairs[0].1.dims();
    for ((t, v), e) in pairs.iter().zip(entries) {
        if t.dims() != dims || v.dims() != dims {
            return Err(CliError::Data(format!(
                "{}: image sizes differ from the first entry's {}x{}",
                e.image_id(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok(pairs)
}

fn nlm_augment(t: &ThermalStack, cfg: &PipelineConfig) -> Result<ThermalStack> {
    let select = |c: Channel| cfg.nlm_channels == NlmChannels::All || c == Channel::S0;
    Ok(t.try_map_channels(select, |p| nlm_filter(p, &cfg.nlm))?)
}

pub fn model_path(models: &Path, region_id: &str) -> PathBuf {
    models.join(format!("{region_id}.xmap"))
}

pub fn cmd_train(manifest: &Path, cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let manifest = Manifest::load(manifest, cfg.mode)?;
    let entries = manifest.split(Split::Train);
    if entries.is_empty() {
        return Err(CliError::Data("manifest has no training entries".into()));
    }
    create_dir(out)?;
    with_pool(cfg.workers, || {
        let pairs = load_pairs(&entries, cfg)?;
        let (h, w) = pairs[0].1.dims();
        let regions = region_set(cfg, h, w)?;

        // Raw thermal plus its NLM-normalized copy, both paired with the
        // same visible image.
        let mut samples: Vec<(ThermalStack, &GrayImage)> = Vec::new();
        let filtered = if cfg.nlm_enabled {
            pairs
                .par_iter()
                .map(|(t, _)| nlm_augment(t, cfg))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        for (t, v) in &pairs {
            samples.push((t.clone(), v));
        }
        for (t, (_, v)) in filtered.into_iter().zip(&pairs) {
            samples.push((t, v));
        }
        info!("training on {} thermal/visible pairs", samples.len());

        let jobs: Vec<(usize, String, BBox)> = regions
            .regions()
            .enumerate()
            .map(|(i, r)| (i, r.id.clone(), r.bbox))
            .collect();
        let trained = jobs
            .par_iter()
            .map(|(i, id, bbox)| {
                let tagged = samples
                    .iter()
                    .map(|(t, v)| {
                        let crops = t
                            .planes()
                            .iter()
                            .map(|p| crop_region(p, bbox))
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok(TrainingPair {
                            region_id: id.clone(),
                            thermal: dsift_stack(&crops, &cfg.dsift)?,
                            visible: dsift_forward(&crop_region(v, bbox)?, &cfg.dsift)?,
                        })
                    })
                    .collect::<Result<Vec<_>, xsynth_core::Error>>()?;
                let tc = TrainConfig {
                    seed: cfg.train.seed.wrapping_add(*i as u64),
                    ..cfg.train
                };
                let (model, history) = train_crossmap(&tagged, &tc)?;
                info!(
                    "region {id}: loss {:.4e} -> {:.4e}",
                    history[0],
                    history[history.len() - 1]
                );
                Ok((model, history))
            })
            .collect::<Result<Vec<_>>>()?;

        for (model, history) in &trained {
            save_crossmap(model, model_path(out, model.region_id()))?;
            let mut csv = String::from("epoch,loss\n");
            for (e, l) in history.iter().enumerate() {
                let _ = writeln!(csv, "{e},{l:e}");
            }
            atomic_write(out.join(format!("{}_loss.csv", model.region_id())), csv.as_bytes())?;
        }
        Ok(())
    })?
}

fn load_models(models: &Path, regions: &RegionSet, d_in: usize, d_out: usize) -> Result<Vec<RegionMapping>> {
    regions
        .regions()
        .map(|r| {
            let path = model_path(models, &r.id);
            if !path.exists() {
                return Err(CliError::MissingArtifact(path));
            }
            let m: CrossMap = load_crossmap(&path)?;
            if m.region_id() != r.id || m.d_in() != d_in || m.d_out() != d_out {
                return Err(CliError::Data(format!(
                    "{}: model is for region '{}' with {}->{} features, expected '{}' with {d_in}->{d_out}",
                    path.display(),
                    m.region_id(),
                    m.d_in(),
                    m.d_out(),
                    r.id
                )));
            }
            Ok(RegionMapping::Learned(Box::new(m)))
        })
        .collect()
}

pub fn synth_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}_synth.png"))
}

pub fn cmd_synthesize(manifest: &Path, cfg: &PipelineConfig, models: &Path, out: &Path) -> Result<()> {
    let manifest = Manifest::load(manifest, cfg.mode)?;
    let entries = manifest.split(Split::Eval);
    if entries.is_empty() {
        return Err(CliError::Data("manifest has no eval entries".into()));
    }
    create_dir(out)?;
    with_pool(cfg.workers, || {
        let first = entries[0].load_thermal(cfg)?;
        let (h, w) = first.dims();
        let regions = region_set(cfg, h, w)?;
        let depth = cfg.dsift.depth();
        let maps = load_models(models, &regions, depth * first.len(), depth)?;
        entries
            .par_iter()
            .map(|e| {
                let t = e.load_thermal(cfg)?;
                if t.dims() != (h, w) {
                    return Err(CliError::Data(format!(
                        "{}: thermal size differs from the first entry",
                        e.image_id()
                    )));
                }
                let spec = ObjectiveSpec::from_thermal(&t, regions.clone(), &maps, cfg.dsift, cfg.synth)?;
                let (x, trace) = synthesize(&spec)?;
                info!(
                    "{}: J {:.4e} -> {:.4e}",
                    e.image_id(),
                    trace.objective[0],
                    trace.objective[trace.objective.len() - 1]
                );
                save_image(&x.clamped_unit(), synth_path(out, &e.image_id()), cfg.output_depth)?;
                trace.save_csv(out.join(format!("{}_trace.csv", e.image_id())))?;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    })?
}

/// Detected landmarks for a synthesized image, written by an external
/// detector next to the image.
pub fn detected_landmarks_path(synth_dir: &Path, image_id: &str) -> PathBuf {
    synth_dir.join(format!("{image_id}_synth.landmarks.txt"))
}

fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["probe_id", "gallery_id", "score", "genuine"])?;
    for r in records {
        w.write_record([
            r.probe_id.as_str(),
            r.gallery_id.as_str(),
            &r.score.to_string(),
            if r.genuine { "1" } else { "0" },
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(atomic_write(path, &bytes)?)
}

fn write_roc(path: &Path, roc: &RocReport) -> Result<()> {
    let mut s = String::from("threshold,tpr,fpr\n");
    for p in &roc.points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.tpr, p.fpr);
    }
    Ok(atomic_write(path, s.as_bytes())?)
}

pub fn cmd_evaluate(manifest: &Path, cfg: &PipelineConfig, synth_dir: &Path, out: &Path) -> Result<()> {
    let manifest = Manifest::load(manifest, cfg.mode)?;
    let entries = manifest.split(Split::Eval);
    if entries.is_empty() {
        return Err(CliError::Data("manifest has no eval entries".into()));
    }
    let subjects: std::collections::BTreeSet<&str> = entries.iter().map(|e| e.subject_id.as_str()).collect();
    if subjects.len() < 2 {
        return Err(CliError::Data(
            "evaluation needs at least two eval subjects for impostor pairs".into(),
        ));
    }
    for e in &entries {
        let p = synth_path(synth_dir, &e.image_id());
        if !p.exists() {
            return Err(CliError::MissingArtifact(p));
        }
    }
    create_dir(out)?;
    let src = match &cfg.eval_embedding {
        EmbeddingChoice::Dsift => EmbeddingSource::DsiftPooled {
            dsift: cfg.dsift,
            crop: cfg.eval_crop,
        },
        EmbeddingChoice::External(p) => EmbeddingSource::External(
            EmbeddingTable::load(p).map_err(|e| CliError::Config(format!("embedding file {}: {e}", p.display())))?,
        ),
    };

    struct Row {
        gallery: LabeledEmbedding,
        probe: LabeledEmbedding,
        raw: LabeledEmbedding,
        ssim: f64,
        landmark_error: Option<f64>,
    }
    let rows = with_pool(cfg.workers, || {
        entries
            .par_iter()
            .map(|e| {
                let id = e.image_id();
                let visible = e.load_visible()?;
                let synth = load_image(synth_path(synth_dir, &id))?;
                let s0 = load_image(&e.s0)?;
                let labeled = |img: &GrayImage, kind: &str| -> Result<LabeledEmbedding> {
                    let image_id = format!("{id}_{kind}");
                    Ok(LabeledEmbedding {
                        vector: embed(img, &image_id, &src)?,
                        image_id,
                        subject: e.subject_id.clone(),
                    })
                };
                let detected = detected_landmarks_path(synth_dir, &id);
                let lm = match (&e.landmarks, detected.exists()) {
                    (Some(truth), true) => Some(landmark_error(&load_landmarks(&detected)?, &load_landmarks(truth)?)?),
                    _ => None,
                };
                Ok(Row {
                    gallery: labeled(&visible, "visible")?,
                    probe: labeled(&synth, "synth")?,
                    raw: labeled(&s0, "s0")?,
                    ssim: ssim(&synth, &visible, &cfg.ssim)?,
                    landmark_error: lm,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let gallery: Vec<_> = rows.iter().map(|r| r.gallery.clone()).collect();
    let probes: Vec<_> = rows.iter().map(|r| r.probe.clone()).collect();
    let raw: Vec<_> = rows.iter().map(|r| r.raw.clone()).collect();
    let synth_records = build_score_matrix(&gallery, &probes)?;
    let raw_records = build_score_matrix(&gallery, &raw)?;
    let synth_roc = roc_auc_eer(&score_set(&synth_records))?;
    let raw_roc = roc_auc_eer(&score_set(&raw_records))?;
    write_scores(&out.join("scores.csv"), &synth_records)?;
    write_scores(&out.join("scores_raw.csv"), &raw_records)?;
    write_roc(&out.join("roc.csv"), &synth_roc)?;
    write_roc(&out.join("roc_raw.csv"), &raw_roc)?;

    let mut ssim_csv = String::from("image_id,ssim\n");
    for (e, r) in entries.iter().zip(&rows) {
        let _ = writeln!(ssim_csv, "{},{}", e.image_id(), r.ssim);
    }
    atomic_write(out.join("ssim.csv"), ssim_csv.as_bytes())?;

    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64;
    let lms: Vec<f64> = rows.iter().filter_map(|r| r.landmark_error).collect();
    let mut report = String::new();
    let _ = writeln!(report, "images = {}", rows.len());
    let _ = writeln!(report, "genuine_pairs = {}", synth_roc_count(&synth_records, true));
    let _ = writeln!(report, "impostor_pairs = {}", synth_roc_count(&synth_records, false));
    let _ = writeln!(report, "auc = {}", synth_roc.auc);
    let _ = writeln!(report, "eer = {}", synth_roc.eer);
    let _ = writeln!(report, "baseline_auc = {}", raw_roc.auc);
    let _ = writeln!(report, "baseline_eer = {}", raw_roc.eer);
    let _ = writeln!(report, "mean_ssim = {mean_ssim}");
    if lms.is_empty() {
        let _ = writeln!(report, "landmark_error = n/a");
    } else {
        let _ = writeln!(
            report,
            "landmark_error = {}",
            lms.iter().sum::<f64>() / lms.len() as f64
        );
    }
    let _ = writeln!(report, "landmark_images = {}", lms.len());
    atomic_write(out.join("report.txt"), report.as_bytes())?;
    info!(
        "AUC {:.4} (raw thermal {:.4}), EER {:.4}, mean SSIM {mean_ssim:.4}",
        synth_roc.auc, raw_roc.auc, synth_roc.eer
    );
    Ok(())
}

fn synth_roc_count(records: &[ScoreRecord], genuine: bool) -> usize {
    records.iter().filter(|r| r.genuine == genuine).count()
}

//! Synthetic paired-band face corpus so the pipeline can run without a
//! restricted dataset.
//!
//! Each subject gets a procedural face (head outline, hair, brows, eyes, nose
//! and mouth with subject-specific geometry and tone). The thermal band is a
//! blurred, contrast-inverted, gamma-warped view of the same geometry, and the
//! Stokes planes carry edge-aligned polarization.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xsynth_core::imaging::io::{atomic_write, format_landmarks, format_regions};
use xsynth_core::imaging::{save_image, BBox, BitDepth, GrayImage, LandmarkSet, Region};

use crate::error::{CliError, Result};

pub const DEMO_HEIGHT: usize = 125;
pub const DEMO_WIDTH: usize = 100;
pub const CONDITIONS: [&str; 2] = ["baseline", "expression"];

/// The standard face boxes at half scale.
pub fn demo_regions() -> Vec<Region> {
    vec![
        Region::new("right-eye", BBox::new(15, 44, 32, 17), 0.95).expect("valid weight"),
        Region::new("left-eye", BBox::new(53, 44, 32, 17), 0.95).expect("valid weight"),
        Region::new("nose-mouth", BBox::new(35, 62, 32, 42), 0.75).expect("valid weight"),
    ]
}

#[derive(Debug, Clone)]
struct Face {
    center: (f64, f64),
    axes: (f64, f64),
    skin: f64,
    background: f64,
    hair: f64,
    hairline: f64,
    eye_row: f64,
    eye_offset: f64,
    eye_axes: (f64, f64),
    iris: f64,
    brow_gap: f64,
    brow_width: f64,
    brow_tone: f64,
    nose_len: f64,
    nose_width: f64,
    mouth_row: f64,
    mouth_half: f64,
    lip: f64,
    marks: Vec<(f64, f64, f64, f64)>,
}

impl Face {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let marks = (0..rng.gen_range(2..5))
            .map(|_| {
                (
                    rng.gen_range(30.0..100.0),
                    rng.gen_range(22.0..78.0),
                    rng.gen_range(1.5..4.0),
                    rng.gen_range(-0.25..0.2),
                )
            })
            .collect();
        Self {
            center: (62.0 + rng.gen_range(-2.0..2.0), 50.0 + rng.gen_range(-1.5..1.5)),
            axes: (rng.gen_range(46.0..56.0), rng.gen_range(33.0..41.0)),
            skin: rng.gen_range(0.5..0.8),
            background: rng.gen_range(0.1..0.35),
            hair: rng.gen_range(0.03..0.45),
            hairline: rng.gen_range(16.0..30.0),
            eye_row: 52.0 + rng.gen_range(-2.0..2.0),
            eye_offset: 19.0 + rng.gen_range(-2.5..2.5),
            eye_axes: (rng.gen_range(2.5..4.5), rng.gen_range(5.5..9.0)),
            iris: rng.gen_range(0.02..0.3),
            brow_gap: rng.gen_range(5.0..9.0),
            brow_width: rng.gen_range(1.0..2.8),
            brow_tone: rng.gen_range(0.05..0.4),
            nose_len: rng.gen_range(14.0..22.0),
            nose_width: rng.gen_range(3.0..6.5),
            mouth_row: 93.0 + rng.gen_range(-3.0..3.0),
            mouth_half: rng.gen_range(7.0..13.0),
            lip: rng.gen_range(0.15..0.45),
            marks,
        }
    }

    /// Right eye, left eye, nose tip, mouth corners as (row, col).
    fn landmarks(&self, smile: f64) -> Vec<(f64, f64)> {
        let (cu, cv) = self.center;
        let mh = self.mouth_half * (1.0 + 0.35 * smile);
        vec![
            (self.eye_row, cv - self.eye_offset),
            (self.eye_row, cv + self.eye_offset),
            (self.eye_row + self.nose_len + 8.0, cv),
            (self.mouth_row, cv - mh),
            (self.mouth_row, cv + mh),
        ]
        .into_iter()
        .map(|(u, v)| (u + (cu - 62.0), v))
        .collect()
    }
}

/// Smooth indicator: 1 inside, 0 outside, over a band of `soft` pixels.
fn soft_step(d: f64, soft: f64) -> f64 {
    0.5 * (1.0 - (d / soft).tanh())
}

/// Visible intensity plus a warmth map (0 cold hair/background, 1 skin).
fn render(face: &Face, smile: f64, rng: &mut ChaCha8Rng) -> (GrayImage, GrayImage) {
    let (cu, cv) = face.center;
    let du = cu - 62.0;
    let eye_axes = (face.eye_axes.0 * (1.0 - 0.3 * smile), face.eye_axes.1);
    let mouth_half = face.mouth_half * (1.0 + 0.35 * smile);
    let shade = rng.gen_range(-0.04..0.04);
    let mut warmth = Vec::with_capacity(DEMO_HEIGHT * DEMO_WIDTH);
    let vis = GrayImage::from_fn(DEMO_HEIGHT, DEMO_WIDTH, |u, v| {
        let (uf, vf) = (u as f64, v as f64);
        let r = (((uf - cu) / face.axes.0).powi(2) + ((vf - cv) / face.axes.1).powi(2)).sqrt();
        let head = soft_step((r - 1.0) * face.axes.1, 1.0);
        let hair = head * soft_step(uf - face.hairline - 0.02 * (vf - cv).powi(2), 1.5);
        let mut x = face.background + (face.skin - face.background) * head;
        x += (face.hair - x) * hair;
        // Side lighting that differs per capture.
        x += shade * (vf - cv) / 50.0 * head;
        let mut heat = head * (1.0 - hair);

        for side in [-1.0, 1.0] {
            let ev = cv + side * face.eye_offset;
            let eu = face.eye_row + du;
            let e = ((uf - eu) / eye_axes.0).powi(2) + ((vf - ev) / eye_axes.1).powi(2);
            let eye = soft_step(e - 1.0, 0.3);
            let iris = soft_step(((uf - eu).powi(2) + (vf - ev).powi(2)).sqrt() - eye_axes.0 * 0.9, 0.6);
            x += (0.9 - x) * eye;
            x += (face.iris - x) * eye * iris;
            heat += 0.4 * eye;
            let bu = eu - face.brow_gap;
            let brow = soft_step((uf - bu + 0.01 * (vf - ev).powi(2)).abs() - face.brow_width, 0.6)
                * soft_step((vf - ev).abs() - eye_axes.1 * 1.3, 1.0);
            x += (face.brow_tone - x) * brow;
        }

        let nu0 = face.eye_row + du + 4.0;
        let nu1 = nu0 + face.nose_len;
        if uf > nu0 && uf < nu1 + 4.0 {
            let t = ((uf - nu0) / face.nose_len).min(1.0);
            let ridge = soft_step((vf - cv - face.nose_width * t).abs() - 0.8, 0.5);
            x -= 0.12 * ridge * t;
        }
        for side in [-1.0, 1.0] {
            let d = ((uf - nu1).powi(2) + (vf - cv - side * face.nose_width * 0.8).powi(2)).sqrt();
            x -= 0.25 * soft_step(d - 1.6, 0.5);
        }
        heat -= 0.25 * soft_step(((uf - nu1 + 2.0).powi(2) + (vf - cv).powi(2)).sqrt() - 4.0, 2.0) * head;

        let mu = face.mouth_row + du + 2.0 * smile * (1.0 - ((vf - cv) / mouth_half).powi(2)).max(0.0);
        let mouth = soft_step((uf - mu).abs() - 1.5 - 0.5 * smile, 0.6) * soft_step((vf - cv).abs() - mouth_half, 0.8);
        x += (face.lip - x) * mouth;
        heat += 0.35 * mouth;

        for &(mu, mv, rad, tone) in &face.marks {
            let d = ((uf - mu - du).powi(2) + (vf - mv).powi(2)).sqrt();
            x += tone * soft_step(d - rad, 0.8) * head;
        }
        warmth.push(heat.clamp(0.0, 1.4));
        (x + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0)
    });
    (
        vis,
        GrayImage::new(DEMO_HEIGHT, DEMO_WIDTH, warmth).expect("finite warmth"),
    )
}

fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|x| x / sum).collect();
    let (h, w) = img.dims();
    let rows = GrayImage::from_fn(h, w, |u, v| {
        (-r..=r)
            .map(|i| k[(i + r) as usize] * img.get_clamped(u as isize, v as isize + i))
            .sum()
    });
    GrayImage::from_fn(h, w, |u, v| {
        (-r..=r)
            .map(|i| k[(i + r) as usize] * rows.get_clamped(u as isize + i, v as isize))
            .sum()
    })
}

/// Thermal S0 from warmth and the inverted, blurred, gamma-warped visible.
fn thermal(vis: &GrayImage, warmth: &GrayImage, rng: &mut ChaCha8Rng) -> GrayImage {
    let vb = gaussian_blur(vis, 1.2);
    let hb = gaussian_blur(warmth, 2.0);
    GrayImage::from_fn(DEMO_HEIGHT, DEMO_WIDTH, |u, v| {
        let inv = (1.0 - vb.get(u, v)).clamp(0.0, 1.0).powf(1.7);
        (0.12 + 0.5 * hb.get(u, v) + 0.3 * inv + rng.gen_range(-0.015..0.015)).clamp(0.0, 1.0)
    })
}

/// Stokes S1, S2 with a degree of polarization that rises at warmth edges
/// and an angle following the edge normal.
fn stokes(s0: &GrayImage, warmth: &GrayImage) -> (GrayImage, GrayImage) {
    let hb = gaussian_blur(warmth, 1.5);
    let mut s1 = Vec::with_capacity(s0.as_slice().len());
    let mut s2 = Vec::with_capacity(s0.as_slice().len());
    for u in 0..DEMO_HEIGHT {
        for v in 0..DEMO_WIDTH {
            let (ui, vi) = (u as isize, v as isize);
            let gx = (hb.get_clamped(ui, vi + 1) - hb.get_clamped(ui, vi - 1)) / 2.0;
            let gy = (hb.get_clamped(ui + 1, vi) - hb.get_clamped(ui - 1, vi)) / 2.0;
            let p = (2.0 * (gx * gx + gy * gy).sqrt()).min(0.35) + 0.02;
            let phi = gy.atan2(gx) + PI / 2.0;
            let i0 = s0.get(u, v);
            s1.push(i0 * p * (2.0 * phi).cos());
            s2.push(i0 * p * (2.0 * phi).sin());
        }
    }
    (
        GrayImage::new(DEMO_HEIGHT, DEMO_WIDTH, s1).expect("finite"),
        GrayImage::new(DEMO_HEIGHT, DEMO_WIDTH, s2).expect("finite"),
    )
}

pub const DEMO_CONFIG: &str = "\
# Demo pipeline configuration: small images, short training.
regions = regions.txt
mode = thermal
train.epochs = 40
train.batch_size = 64
train.learning_rate = 0.02
synth.iterations = 300
nlm.patch_radius = 2
nlm.search_radius = 5
output_depth = 8
";

/// Writes images, `manifest.csv`, `regions.txt` and `config.txt` under `out`.
/// The first half of the subjects form the training split.
pub fn make_demo_data(out: &Path, seed: u64, subjects: usize) -> Result<()> {
    if subjects < 2 {
        return Err(CliError::Config("demo data needs at least 2 subjects".into()));
    }
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| CliError::Data(format!("cannot create {}: {e}", images.display())))?;
    let mut manifest = String::from("subject_id,condition,split,visible,s0,s1,s2,landmarks\n");
    let n_train = subjects / 2;
    for s in 0..subjects {
        let sid = format!("s{:02}", s + 1);
        let split = if s < n_train { "train" } else { "eval" };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(s as u64));
        let face = Face::random(&mut rng);
        for (c, cond) in CONDITIONS.iter().enumerate() {
            let smile = c as f64;
            let (vis, warmth) = render(&face, smile, &mut rng);
            let s0 = thermal(&vis, &warmth, &mut rng);
            let (s1, s2) = stokes(&s0, &warmth);
            let stem = format!("{sid}_{cond}");
            let rel = |kind: &str, ext: &str| format!("images/{stem}_{kind}.{ext}");
            save_image(&vis, out.join(rel("visible", "png")), BitDepth::Sixteen)?;
            save_image(&s0, out.join(rel("s0", "png")), BitDepth::Sixteen)?;
            // Signed Stokes planes are stored as (S + 1) / 2.
            save_image(
                &s1.map(|x| (x + 1.0) / 2.0),
                out.join(rel("s1", "png")),
                BitDepth::Sixteen,
            )?;
            save_image(
                &s2.map(|x| (x + 1.0) / 2.0),
                out.join(rel("s2", "png")),
                BitDepth::Sixteen,
            )?;
            let lm = LandmarkSet::new(face.landmarks(smile))?;
            atomic_write(out.join(rel("landmarks", "txt")), format_landmarks(&lm).as_bytes())?;
            let _ = writeln!(
                manifest,
                "{sid},{cond},{split},{},{},{},{},{}",
                rel("visible", "png"),
                rel("s0", "png"),
                rel("s1", "png"),
                rel("s2", "png"),
                rel("landmarks", "txt")
            );
        }
    }
    atomic_write(out.join("manifest.csv"), manifest.as_bytes())?;
    atomic_write(
        out.join("regions.txt"),
        format_regions(DEMO_HEIGHT, DEMO_WIDTH, &demo_regions()).as_bytes(),
    )?;
    atomic_write(
        out.join("config.txt"),
        format!("{DEMO_CONFIG}seed = {seed}\n").as_bytes(),
    )?;
    Ok(())
}

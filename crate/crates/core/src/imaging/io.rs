//! Image, region and landmark file I/O.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

use super::region::{BBox, Region, GLOBAL_REGION_ID};
use super::{GrayImage, LandmarkSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_code(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            _ => Err(Error::InvalidParameter(format!(
                "bit depth must be 8 or 16, got {bits}"
            ))),
        }
    }
}

/// Loads an 8- or 16-bit grayscale PGM (P5) or PNG, scaling codes to [0, 1].
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::FileNotFound(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    let corrupt = |reason: String| Error::CorruptImage {
        path: path.to_path_buf(),
        reason,
    };
    let format = image::guess_format(&bytes).map_err(|_| Error::UnsupportedFormat(path.display().to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(Error::UnsupportedFormat(format!("{format:?} ({})", path.display())));
    }
    if format == ImageFormat::Pnm && !bytes.starts_with(b"P5") {
        return Err(Error::UnsupportedFormat(format!(
            "only binary PGM (P5) is supported ({})",
            path.display()
        )));
    }
    let decoded = image::load_from_memory_with_format(&bytes, format).map_err(|e| corrupt(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|c| c as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|c| c as f64 / 65535.0).collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{:?} is not single-channel grayscale ({})",
                other.color(),
                path.display()
            )))
        }
    };
    GrayImage::new(h, w, data).map_err(|e| corrupt(e.to_string()))
}

/// Quantizes one intensity: clamp to [0, 1], scale, round half away from zero.
pub fn quantize(value: f64, depth: BitDepth) -> u16 {
    (value.clamp(0.0, 1.0) * depth.max_code() as f64).round() as u16
}

/// Encodes the image; the container is chosen from the extension
/// (`.pgm` gives binary PGM, anything else PNG).
pub fn encode_image(img: &GrayImage, path: &Path, depth: BitDepth) -> Result<Vec<u8>> {
    let (h, w) = img.dims();
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let mut out = Vec::new();
    if is_pgm {
        write!(out, "P5\n{w} {h}\n{}\n", depth.max_code())?;
        for &x in img.as_slice() {
            let q = quantize(x, depth);
            match depth {
                BitDepth::Eight => out.push(q as u8),
                BitDepth::Sixteen => out.extend_from_slice(&q.to_be_bytes()),
            }
        }
        return Ok(out);
    }
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    let res = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.as_slice().iter().map(|&x| quantize(x, depth) as u8).collect();
            encoder.write_image(&raw, w as u32, h as u32, ColorType::L8.into())
        }
        BitDepth::Sixteen => {
            // The encoder takes native-endian samples.
            let raw: Vec<u8> = img
                .as_slice()
                .iter()
                .flat_map(|&x| quantize(x, depth).to_ne_bytes())
                .collect();
            encoder.write_image(&raw, w as u32, h as u32, ColorType::L16.into())
        }
    };
    res.map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(out)
}

/// Saves the image, clamping intensities to [0, 1].
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(img, path, depth)?;
    atomic_write(path, &bytes)
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::FileNotFound(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parsed region file. A `global` line, if present, must span the full image
/// and is checked when the region set is built.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFile {
    pub global: Option<BBox>,
    pub locals: Vec<Region>,
}

/// Parses `id x y w h local_weight` lines; `#` starts a comment line.
pub fn parse_regions(text: &str) -> Result<RegionFile> {
    let mut global = None;
    let mut locals = Vec::new();
    for (n, line) in content_lines(text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!(
                "region line {n}: expected 'id x y w h local_weight', got '{line}'"
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("region line {n}: bad integer '{s}'")))
        };
        let bbox = BBox::new(num(fields[1])?, num(fields[2])?, num(fields[3])?, num(fields[4])?);
        let weight: f64 = fields[5]
            .parse()
            .map_err(|_| Error::Parse(format!("region line {n}: bad weight '{}'", fields[5])))?;
        if fields[0] == GLOBAL_REGION_ID {
            if global.replace(bbox).is_some() {
                return Err(Error::Parse(format!("region line {n}: duplicate global region")));
            }
        } else {
            locals.push(Region::new(fields[0], bbox, weight)?);
        }
    }
    Ok(RegionFile { global, locals })
}

pub fn load_regions(path: impl AsRef<Path>) -> Result<RegionFile> {
    parse_regions(&read_text(path.as_ref())?)
}

pub fn format_regions(height: usize, width: usize, locals: &[Region]) -> String {
    let mut s = String::from("# id x y w h local_weight\n");
    s.push_str(&format!("{GLOBAL_REGION_ID} 0 0 {width} {height} 1\n"));
    for r in locals {
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            r.id, r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.local_weight
        ));
    }
    s
}

/// Parses one `u v` pair per line.
pub fn parse_landmarks(text: &str) -> Result<LandmarkSet> {
    let mut points = Vec::new();
    for (n, line) in content_lines(text) {
        let mut it = line.split_whitespace().map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("landmark line {n}: bad number '{s}'")))
        });
        match (it.next(), it.next(), it.next()) {
            (Some(u), Some(v), None) => points.push((u?, v?)),
            _ => return Err(Error::Parse(format!("landmark line {n}: expected 'u v', got '{line}'"))),
        }
    }
    LandmarkSet::new(points)
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    parse_landmarks(&read_text(path.as_ref())?)
}

pub fn format_landmarks(set: &LandmarkSet) -> String {
    set.points().iter().map(|(u, v)| format!("{u} {v}\n")).collect()
}

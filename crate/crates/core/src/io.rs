//! On-disk formats: a JSON manifest plus headerless little-endian planes for
//! stacks, binary PGM (P5) for label masks, and JSON for reports.
//!
//! Manifest example:
//!
//! ```json
//! {
//!   "version": 1,
//!   "dims": [512, 512],
//!   "bands": 3,
//!   "frames": [
//!     {"id": "2015-10-01", "timestamp": "2015-10-01T02:30:00Z",
//!      "planes": ["f0_b0.raw", "f0_b1.raw", "f0_b2.raw"]}
//!   ],
//!   "pixel_format": "u16le",
//!   "peak": 1023.0,
//!   "band_names": ["blue", "green", "red"]
//! }
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{Label, LabelMask};
use crate::stack::{FrameInfo, ImageStack, PixelFormat, StackMeta};
use crate::tensor::{BandTensor, Dims};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub planes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub version: u32,
    pub dims: [usize; 2],
    pub bands: usize,
    pub frames: Vec<ManifestFrame>,
    /// Kept as a string so an unknown format gets its own diagnostic.
    pub pixel_format: String,
    pub peak: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_names: Option<Vec<String>>,
}

fn parse_format(s: &str, path: &Path) -> Result<PixelFormat> {
    match s {
        "f32le" => Ok(PixelFormat::F32Le),
        "u16le" => Ok(PixelFormat::U16Le),
        "u8" => Ok(PixelFormat::U8),
        other => Err(Error::UnknownPixelFormat {
            path: path.to_path_buf(),
            format: other.to_string(),
        }),
    }
}

fn format_name(f: PixelFormat) -> &'static str {
    match f {
        PixelFormat::F32Le => "f32le",
        PixelFormat::U16Le => "u16le",
        PixelFormat::U8 => "u8",
    }
}

pub fn read_manifest(path: &Path) -> Result<StackManifest> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Manifest {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a stack, normalising samples by the manifest peak. Relative plane
/// paths resolve against the manifest's directory.
pub fn read_stack(manifest_path: &Path) -> Result<ImageStack> {
    let man = read_manifest(manifest_path)?;
    let format = parse_format(&man.pixel_format, manifest_path)?;
    let [m, n] = man.dims;
    let t = man.frames.len();
    if m == 0 || n == 0 || t == 0 || man.bands == 0 {
        return Err(Error::invalid(format!(
            "{}: dims, bands and frames must be nonzero",
            manifest_path.display()
        )));
    }
    if !(man.peak.is_finite() && man.peak > 0.0) {
        return Err(Error::invalid(format!("{}: peak must be positive", manifest_path.display())));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let dims = Dims::new(m, n, t);
    let plane = m * n;
    let mut bands = vec![vec![0.0; dims.len()]; man.bands];
    for (k, frame) in man.frames.iter().enumerate() {
        if frame.planes.len() != man.bands {
            return Err(Error::invalid(format!(
                "{}: frame `{}` lists {} planes, expected {}",
                manifest_path.display(),
                frame.id,
                frame.planes.len(),
                man.bands
            )));
        }
        for (b, name) in frame.planes.iter().enumerate() {
            let path = base.join(name);
            let samples = read_plane(&path, format, plane)?;
            let dst = &mut bands[b][k * plane..(k + 1) * plane];
            for (d, s) in dst.iter_mut().zip(samples) {
                *d = s / man.peak;
            }
        }
    }
    let bands = bands
        .into_iter()
        .map(|data| BandTensor::from_vec(dims, data))
        .collect::<Result<Vec<_>>>()?;
    let meta = StackMeta {
        frames: man
            .frames
            .iter()
            .map(|f| FrameInfo {
                id: f.id.clone(),
                timestamp: f.timestamp.clone(),
            })
            .collect(),
        pixel_format: format,
        peak: man.peak,
        band_names: man.band_names,
    };
    ImageStack::new(bands, meta)
}

fn read_plane(path: &Path, format: PixelFormat, samples: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => Error::io(path, e),
    })?;
    let expected = samples * format.sample_bytes();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let values: Vec<f64> = match format {
        PixelFormat::F32Le => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        PixelFormat::U16Le => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        PixelFormat::U8 => bytes.iter().map(|&b| b as f64).collect(),
    };
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} sample {pos}", path.display())));
    }
    Ok(values)
}

/// Converts one normalised value to its on-disk sample.
pub fn encode_sample(value: f64, peak: f64, format: PixelFormat) -> Vec<u8> {
    let raw = value * peak;
    match format {
        PixelFormat::F32Le => (raw as f32).to_le_bytes().to_vec(),
        PixelFormat::U16Le => (quantize(raw, u16::MAX as f64) as u16).to_le_bytes().to_vec(),
        PixelFormat::U8 => vec![quantize(raw, u8::MAX as f64) as u8],
    }
}

fn quantize(raw: f64, max: f64) -> f64 {
    let v = if raw.is_nan() { 0.0 } else { raw };
    v.clamp(0.0, max).round_ties_even()
}

fn plane_name(frame: usize, band: usize) -> String {
    format!("f{frame:03}_b{band:02}.raw")
}

/// Writes the stack into `out_dir` (created if needed) in its recorded
/// pixel format and returns the manifest path.
pub fn write_stack(stack: &ImageStack, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dims = stack.dims();
    let meta = &stack.meta;
    let mut frames = Vec::with_capacity(dims.t);
    for k in 0..dims.t {
        let mut planes = Vec::with_capacity(stack.num_bands());
        for b in 0..stack.num_bands() {
            let name = plane_name(k, b);
            let mut bytes = Vec::with_capacity(dims.plane_len() * meta.pixel_format.sample_bytes());
            for &v in stack.plane(b, k) {
                bytes.extend(encode_sample(v, meta.peak, meta.pixel_format));
            }
            let path = out_dir.join(&name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            planes.push(name);
        }
        frames.push(ManifestFrame {
            id: meta.frames[k].id.clone(),
            timestamp: meta.frames[k].timestamp.clone(),
            planes,
        });
    }
    let manifest = StackManifest {
        version: MANIFEST_VERSION,
        dims: [dims.m, dims.n],
        bands: stack.num_bands(),
        frames,
        pixel_format: format_name(meta.pixel_format).to_string(),
        peak: meta.peak,
        band_names: meta.band_names.clone(),
    };
    let path = out_dir.join(MANIFEST_NAME);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(mask: &LabelMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(mask.rows() * mask.cols() + 16);
    write!(out, "P5\n{} {}\n255\n", mask.cols(), mask.rows()).expect("write to vec");
    out.extend(mask.labels().iter().map(|l| l.code()));
    out
}

pub fn write_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path, frame_index: usize) -> Result<LabelMask> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => Error::io(path, e),
    })?;
    decode_pgm(&bytes, frame_index).map_err(|reason| Error::Pgm {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode_pgm(bytes: &[u8], frame_index: usize) -> std::result::Result<LabelMask, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("expected P5 magic, found `{}`", fields[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field `{s}`"));
    let (cols, rows, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(format!("expected maxval 255, found {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != rows * cols {
        return Err(format!("expected {} raster bytes, found {}", rows * cols, data.len()));
    }
    let labels = data
        .iter()
        .enumerate()
        .map(|(i, &b)| Label::from_code(b).ok_or_else(|| format!("invalid label value {b} at pixel {i}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    LabelMask::from_labels(frame_index, rows, cols, labels).map_err(|e| e.to_string())
}

/// File name used for the mask of frame `k` inside a mask directory.
pub fn mask_file_name(frame: usize) -> String {
    format!("frame{frame:03}.pgm")
}

pub fn write_masks(masks: &[LabelMask], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for m in masks {
        write_mask(m, &dir.join(mask_file_name(m.frame_index)))?;
    }
    Ok(())
}

pub fn read_masks(dir: &Path, frames: usize) -> Result<Vec<LabelMask>> {
    (0..frames)
        .map(|k| read_mask(&dir.join(mask_file_name(k)), k))
        .collect()
}

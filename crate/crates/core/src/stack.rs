use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BandTensor, Dims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PixelFormat {
    #[default]
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "u16le")]
    U16Le,
    #[serde(rename = "u8")]
    U8,
}

impl PixelFormat {
    pub fn sample_bytes(self) -> usize {
        match self {
            PixelFormat::F32Le => 4,
            PixelFormat::U16Le => 2,
            PixelFormat::U8 => 1,
        }
    }

    /// Largest representable sample for integer formats.
    pub fn max_value(self) -> Option<f64> {
        match self {
            PixelFormat::F32Le => None,
            PixelFormat::U16Le => Some(u16::MAX as f64),
            PixelFormat::U8 => Some(u8::MAX as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Acquisition metadata carried alongside the pixel data.
#[derive(Debug, Clone, PartialEq)]
pub struct StackMeta {
    pub frames: Vec<FrameInfo>,
    pub pixel_format: PixelFormat,
    /// Sample value that maps to 1.0 after normalisation.
    pub peak: f64,
    pub band_names: Option<Vec<String>>,
}

impl StackMeta {
    pub fn indexed(frames: usize, peak: f64) -> Self {
        StackMeta {
            frames: (0..frames)
                .map(|k| FrameInfo {
                    id: format!("frame{k:03}"),
                    timestamp: None,
                })
                .collect(),
            pixel_format: PixelFormat::F32Le,
            peak,
            band_names: None,
        }
    }

    /// Temporal position of each frame: seconds since the first timestamp
    /// when every frame carries a parseable one, otherwise the frame index.
    pub fn frame_positions(&self) -> Vec<f64> {
        let parsed: Option<Vec<f64>> = self
            .frames
            .iter()
            .map(|f| f.timestamp.as_deref().and_then(parse_timestamp))
            .collect();
        match parsed {
            Some(secs) if !secs.is_empty() => secs,
            _ => (0..self.frames.len()).map(|k| k as f64).collect(),
        }
    }
}

fn parse_timestamp(s: &str) -> Option<f64> {
    use chrono::{DateTime, NaiveDate, NaiveDateTime};
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp() as f64 + t.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(t.and_utc().timestamp() as f64);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp() as f64)
}

/// `t` frames × `b` bands of `m × n` planes, held as one [`BandTensor`] per
/// band with values normalised to `[0, 1]` by the peak.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    bands: Vec<BandTensor>,
    pub meta: StackMeta,
}

impl ImageStack {
    pub fn new(bands: Vec<BandTensor>, meta: StackMeta) -> Result<Self> {
        let first = bands.first().ok_or_else(|| Error::invalid("stack needs at least one band"))?;
        let dims = first.dims();
        if let Some(b) = bands.iter().find(|b| b.dims() != dims) {
            return Err(Error::dims(dims, b.dims()));
        }
        if meta.frames.len() != dims.t {
            return Err(Error::dims(format!("{} frames", dims.t), format!("{} frame entries", meta.frames.len())));
        }
        if !(meta.peak.is_finite() && meta.peak > 0.0) {
            return Err(Error::invalid(format!("peak must be positive, got {}", meta.peak)));
        }
        Ok(ImageStack { bands, meta })
    }

    pub fn dims(&self) -> Dims {
        self.bands[0].dims()
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn num_frames(&self) -> usize {
        self.dims().t
    }

    pub fn bands(&self) -> &[BandTensor] {
        &self.bands
    }

    pub fn band(&self, b: usize) -> &BandTensor {
        &self.bands[b]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut BandTensor {
        &mut self.bands[b]
    }

    pub fn plane(&self, band: usize, frame: usize) -> &[f64] {
        self.bands[band].slice(frame)
    }

    pub fn plane_mut(&mut self, band: usize, frame: usize) -> &mut [f64] {
        self.bands[band].slice_mut(frame)
    }

    /// Same metadata, new pixel data.
    pub fn with_bands(&self, bands: Vec<BandTensor>) -> Result<Self> {
        ImageStack::new(bands, self.meta.clone())
    }

    pub fn same_shape(&self, other: &ImageStack) -> Result<()> {
        if self.dims() != other.dims() || self.num_bands() != other.num_bands() {
            return Err(Error::dims(
                (self.dims(), self.num_bands()),
                (other.dims(), other.num_bands()),
            ));
        }
        Ok(())
    }
}

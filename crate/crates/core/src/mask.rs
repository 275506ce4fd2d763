//! Per-frame Clear/Cloud/Shadow label masks extracted by thresholding the
//! cloud element, with optional small-region removal and dilation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::BandTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    #[default]
    Clear,
    Cloud,
    Shadow,
}

impl Label {
    /// Grey level used in PGM masks.
    pub fn code(self) -> u8 {
        match self {
            Label::Clear => 0,
            Label::Shadow => 128,
            Label::Cloud => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Clear),
            128 => Some(Label::Shadow),
            255 => Some(Label::Cloud),
            _ => None,
        }
    }

    pub fn is_clear(self) -> bool {
        self == Label::Clear
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub frame_index: usize,
    rows: usize,
    cols: usize,
    labels: Vec<Label>,
}

impl LabelMask {
    pub fn clear(frame_index: usize, rows: usize, cols: usize) -> Self {
        Self::filled(frame_index, rows, cols, Label::Clear)
    }

    pub fn filled(frame_index: usize, rows: usize, cols: usize, label: Label) -> Self {
        LabelMask {
            frame_index,
            rows,
            cols,
            labels: vec![label; rows * cols],
        }
    }

    pub fn from_labels(frame_index: usize, rows: usize, cols: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::dims(rows * cols, labels.len()));
        }
        Ok(LabelMask {
            frame_index,
            rows,
            cols,
            labels,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Label {
        self.labels[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, label: Label) {
        self.labels[r * self.cols + c] = label;
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn is_all_clear(&self) -> bool {
        self.labels.iter().all(|l| l.is_clear())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandFusion {
    /// Threshold each band and take the union.
    #[default]
    Any,
    /// Threshold the band mean.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub tau_cloud: f64,
    pub tau_shadow: f64,
    pub band_fusion: BandFusion,
    /// Connected regions smaller than this many pixels are relabelled Clear.
    pub min_region_px: usize,
    pub dilation_radius_px: usize,
    /// When set, the cloud threshold becomes this percentile (0–100) of the
    /// positive fused cloud values in each frame.
    pub auto_percentile: Option<f64>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            tau_cloud: 0.15,
            tau_shadow: -0.15,
            band_fusion: BandFusion::Any,
            min_region_px: 8,
            dilation_radius_px: 1,
            auto_percentile: None,
        }
    }
}

impl ThresholdConfig {
    /// Thresholding only, no cleanup.
    pub fn bare(tau_cloud: f64, tau_shadow: f64) -> Self {
        ThresholdConfig {
            tau_cloud,
            tau_shadow,
            min_region_px: 0,
            dilation_radius_px: 0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_shadow < self.tau_cloud) {
            return Err(Error::invalid(format!(
                "tau_shadow ({}) must be below tau_cloud ({})",
                self.tau_shadow, self.tau_cloud
            )));
        }
        if let Some(p) = self.auto_percentile {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::invalid(format!("auto_percentile {p} outside [0, 100]")));
            }
        }
        Ok(())
    }
}

/// Labels every frame of the stack from the per-band cloud elements.
pub fn build_masks(cloud_bands: &[BandTensor], cfg: &ThresholdConfig) -> Result<Vec<LabelMask>> {
    cfg.validate()?;
    let first = cloud_bands
        .first()
        .ok_or_else(|| Error::invalid("no bands to threshold"))?;
    let dims = first.dims();
    if let Some(bad) = cloud_bands.iter().find(|b| b.dims() != dims) {
        return Err(Error::dims(dims, bad.dims()));
    }
    Ok(par::map_range(dims.t, |k| {
        let planes: Vec<&[f64]> = cloud_bands.iter().map(|b| b.slice(k)).collect();
        let mut mask = threshold_frame(k, dims.m, dims.n, &planes, cfg);
        cleanup(&mut mask, cfg.min_region_px, cfg.dilation_radius_px);
        mask
    }))
}

fn threshold_frame(frame: usize, rows: usize, cols: usize, planes: &[&[f64]], cfg: &ThresholdConfig) -> LabelMask {
    let tau_cloud = match cfg.auto_percentile {
        Some(p) => {
            let positive: Vec<f64> = (0..rows * cols)
                .map(|q| fused_max(planes, q, cfg.band_fusion))
                .filter(|&v| v > 0.0)
                .collect();
            percentile(positive, p).map_or(cfg.tau_cloud, |t| t.max(cfg.tau_shadow))
        }
        None => cfg.tau_cloud,
    };
    let labels = (0..rows * cols)
        .map(|q| {
            let (hi, lo) = match cfg.band_fusion {
                BandFusion::Any => (fused_max(planes, q, BandFusion::Any), planes.iter().map(|p| p[q]).fold(f64::INFINITY, f64::min)),
                BandFusion::Mean => {
                    let m = fused_max(planes, q, BandFusion::Mean);
                    (m, m)
                }
            };
            if hi > tau_cloud {
                Label::Cloud
            } else if lo < cfg.tau_shadow {
                Label::Shadow
            } else {
                Label::Clear
            }
        })
        .collect();
    LabelMask {
        frame_index: frame,
        rows,
        cols,
        labels,
    }
}

fn fused_max(planes: &[&[f64]], q: usize, fusion: BandFusion) -> f64 {
    match fusion {
        BandFusion::Any => planes.iter().map(|p| p[q]).fold(f64::NEG_INFINITY, f64::max),
        BandFusion::Mean => planes.iter().map(|p| p[q]).sum::<f64>() / planes.len() as f64,
    }
}

/// Nearest-rank percentile, `None` for an empty sample.
fn percentile(mut values: Vec<f64>, p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * values.len() as f64).ceil() as usize;
    Some(values[rank.clamp(1, values.len()) - 1])
}

/// Small-region removal followed by dilation.
pub fn cleanup(mask: &mut LabelMask, min_region_px: usize, dilation_radius_px: usize) {
    remove_small_regions(mask, min_region_px);
    dilate(mask, dilation_radius_px);
}

/// Relabels as Clear every 4-connected same-label Cloud or Shadow region
/// with fewer than `min_px` pixels.
pub fn remove_small_regions(mask: &mut LabelMask, min_px: usize) {
    if min_px <= 1 {
        return;
    }
    for label in [Label::Cloud, Label::Shadow] {
        let comps = components(mask.rows, mask.cols, |q| mask.labels[q] == label);
        for comp in comps.iter().filter(|c| c.len() < min_px) {
            for &q in comp {
                mask.labels[q] = Label::Clear;
            }
        }
    }
}

/// Grows Cloud and Shadow regions by `radius` 4-neighbour steps. Cloud wins
/// where both reach the same pixel; Shadow only grows into Clear pixels.
pub fn dilate(mask: &mut LabelMask, radius: usize) {
    if radius == 0 {
        return;
    }
    let cloud = grow(mask, Label::Cloud, radius);
    let shadow = grow(mask, Label::Shadow, radius);
    for q in 0..mask.labels.len() {
        if cloud[q] {
            mask.labels[q] = Label::Cloud;
        } else if shadow[q] {
            mask.labels[q] = Label::Shadow;
        }
    }
}

fn grow(mask: &LabelMask, label: Label, radius: usize) -> Vec<bool> {
    let (rows, cols) = (mask.rows, mask.cols);
    let mut dist = vec![usize::MAX; rows * cols];
    let mut queue = VecDeque::new();
    for (q, l) in mask.labels.iter().enumerate() {
        if *l == label {
            dist[q] = 0;
            queue.push_back(q);
        }
    }
    while let Some(q) = queue.pop_front() {
        if dist[q] == radius {
            continue;
        }
        for nb in neighbours4(q, rows, cols) {
            if dist[nb] == usize::MAX {
                dist[nb] = dist[q] + 1;
                queue.push_back(nb);
            }
        }
    }
    dist.into_iter().map(|d| d != usize::MAX).collect()
}

/// In-bounds 4-neighbours of flat index `q`.
pub(crate) fn neighbours4(q: usize, rows: usize, cols: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (q / cols, q % cols);
    let up = (r > 0).then(|| q - cols);
    let down = (r + 1 < rows).then(|| q + cols);
    let left = (c > 0).then(|| q - 1);
    let right = (c + 1 < cols).then(|| q + 1);
    [up, down, left, right].into_iter().flatten()
}

/// 4-connected components of the pixels selected by `inside`, each as a
/// sorted list of flat indices, ordered by their first pixel.
pub fn components(rows: usize, cols: usize, inside: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; rows * cols];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..rows * cols {
        if seen[start] || !inside(start) {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(q) = queue.pop_front() {
            comp.push(q);
            for nb in neighbours4(q, rows, cols) {
                if !seen[nb] && inside(nb) {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Fractions of Cloud and Shadow pixels.
pub fn coverage(mask: &LabelMask) -> (f64, f64) {
    let total = (mask.rows * mask.cols).max(1) as f64;
    (
        mask.count(Label::Cloud) as f64 / total,
        mask.count(Label::Shadow) as f64 / total,
    )
}

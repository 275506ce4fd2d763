//! Synthetic thick-cloud contamination for building test stacks with known
//! ground truth.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{neighbours4, Label, LabelMask};
use crate::par;
use crate::stack::ImageStack;
use crate::tensor::BandTensor;

/// Cloud coverages (fractions) of the standard sensitivity sweep.
pub const PRESET_COVERAGES: [f64; 5] = [0.0134, 0.0392, 0.1035, 0.1974, 0.3484];

/// Largest allowed gap between requested and achieved coverage.
pub const COVERAGE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeConfig {
    /// Number of Gaussian blobs summed into the random field. The first
    /// blob has unit amplitude, the others 0.3–0.7.
    pub blobs: usize,
    /// Blob widths as fractions of the shorter image side.
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Shadow cast at this (row, col) displacement from the cloud.
    pub shadow_offset: Option<(isize, isize)>,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            blobs: 6,
            sigma_min: 0.05,
            sigma_max: 0.15,
            shadow_offset: None,
        }
    }
}

/// Grows a single cloud of exactly `round(target · rows · cols)` pixels
/// over a seeded sum of Gaussian blobs.
pub fn generate_mask(
    frame_index: usize,
    rows: usize,
    cols: usize,
    target_coverage: f64,
    seed: u64,
    shape: &ShapeConfig,
) -> Result<LabelMask> {
    if !(target_coverage > 0.0 && target_coverage < 1.0) {
        return Err(Error::invalid(format!("coverage {target_coverage} must lie in (0, 1)")));
    }
    let total = rows * cols;
    let want = (target_coverage * total as f64).round() as usize;
    if want == 0 || want >= total || (want as f64 / total as f64 - target_coverage).abs() > COVERAGE_TOLERANCE {
        return Err(Error::invalid(format!(
            "coverage {target_coverage} is not reachable on a {rows}x{cols} image"
        )));
    }
    if shape.blobs == 0 || !(shape.sigma_min > 0.0 && shape.sigma_max >= shape.sigma_min) {
        return Err(Error::invalid("shape config needs blobs > 0 and 0 < sigma_min <= sigma_max"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rows.min(cols) as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..shape.blobs)
        .map(|b| {
            let r = rng.random_range(0.0..rows as f64);
            let c = rng.random_range(0.0..cols as f64);
            let s = side * rng.random_range(shape.sigma_min..=shape.sigma_max);
            let a = if b == 0 { 1.0 } else { rng.random_range(0.3..0.7) };
            (r, c, s, a)
        })
        .collect();
    let field: Vec<f64> = (0..total)
        .map(|q| {
            let (r, c) = ((q / cols) as f64, (q % cols) as f64);
            blobs
                .iter()
                .map(|&(br, bc, s, a)| a * (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    // Best-first growth from the field maximum: the cloud is one connected
    // body of exactly `want` pixels. Field values are positive, so their bit
    // patterns order like the values.
    let seed_px = (0..total).max_by(|&a, &b| field[a].total_cmp(&field[b]).then(b.cmp(&a))).unwrap_or(0);
    let mut queued = vec![false; total];
    let mut heap = BinaryHeap::new();
    heap.push((field[seed_px].to_bits(), Reverse(seed_px)));
    queued[seed_px] = true;
    let mut order = Vec::with_capacity(want);
    while let Some((_, Reverse(q))) = heap.pop() {
        order.push(q);
        if order.len() == want {
            break;
        }
        for nb in neighbours4(q, rows, cols) {
            if !queued[nb] {
                queued[nb] = true;
                heap.push((field[nb].to_bits(), Reverse(nb)));
            }
        }
    }
    let mut mask = LabelMask::clear(frame_index, rows, cols);
    for &q in &order {
        mask.set(q / cols, q % cols, Label::Cloud);
    }
    if let Some((dr, dc)) = shape.shadow_offset {
        for &q in &order {
            let r = (q / cols) as isize + dr;
            let c = (q % cols) as isize + dc;
            if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && mask.get(r as usize, c as usize) == Label::Clear {
                mask.set(r as usize, c as usize, Label::Shadow);
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContaminationConfig {
    /// Cloud brightness as a fraction of peak.
    pub cloud_level: f64,
    /// Half-width of the uniform texture added to cloud pixels.
    pub texture_amplitude: f64,
    pub shadow_factor: f64,
    pub seed: u64,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        ContaminationConfig {
            cloud_level: 0.95,
            texture_amplitude: 0.02,
            shadow_factor: 0.4,
            seed: 0,
        }
    }
}

fn texture_seed(seed: u64, frame: usize, band: usize) -> u64 {
    seed ^ ((frame as u64) << 32 | band as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Paints clouds and shadows onto a clean stack. Clear pixels are copied
/// unchanged; cloud values are clamped to `[0, 1]`.
pub fn apply_contamination(clean: &ImageStack, masks: &[LabelMask], cfg: &ContaminationConfig) -> Result<ImageStack> {
    let dims = clean.dims();
    crate::compositor::check_masks(masks, dims.t, dims.m, dims.n)?;
    let bands = par::map_range(clean.num_bands(), |b| {
        let mut out: BandTensor = clean.band(b).clone();
        for (k, mask) in masks.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(texture_seed(cfg.seed, k, b));
            let plane = out.slice_mut(k);
            for (q, label) in mask.labels().iter().enumerate() {
                match label {
                    Label::Clear => {}
                    Label::Cloud => {
                        let tex = if cfg.texture_amplitude > 0.0 {
                            rng.random_range(-cfg.texture_amplitude..=cfg.texture_amplitude)
                        } else {
                            0.0
                        };
                        plane[q] = (cfg.cloud_level + tex).clamp(0.0, 1.0);
                    }
                    Label::Shadow => plane[q] *= cfg.shadow_factor,
                }
            }
        }
        out
    });
    clean.with_bands(bands)
}

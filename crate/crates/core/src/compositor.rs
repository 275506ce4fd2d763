//! Clean-area substitution and reference-frame selection.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::LabelMask;
use crate::par;
use crate::poisson::{extract_regions, Region};
use crate::stack::ImageStack;
use crate::tensor::BandTensor;

/// Keeps `original` wherever the frame's mask is Clear and takes the
/// preliminary recovery everywhere else.
pub fn substitute_clean(original: &ImageStack, preliminary: &[BandTensor], masks: &[LabelMask]) -> Result<ImageStack> {
    let dims = original.dims();
    if preliminary.len() != original.num_bands() {
        return Err(Error::dims(
            format!("{} bands", original.num_bands()),
            format!("{} bands", preliminary.len()),
        ));
    }
    if let Some(b) = preliminary.iter().find(|b| b.dims() != dims) {
        return Err(Error::dims(dims, b.dims()));
    }
    check_masks(masks, dims.t, dims.m, dims.n)?;
    let plane = dims.plane_len();
    let bands = original
        .bands()
        .iter()
        .zip(preliminary)
        .map(|(orig, pre)| {
            let mut out = orig.clone();
            for (k, mask) in masks.iter().enumerate() {
                let dst = &mut out.as_mut_slice()[k * plane..(k + 1) * plane];
                let src = pre.slice(k);
                for (q, label) in mask.labels().iter().enumerate() {
                    if !label.is_clear() {
                        dst[q] = src[q];
                    }
                }
            }
            out
        })
        .collect();
    original.with_bands(bands)
}

pub(crate) fn check_masks(masks: &[LabelMask], frames: usize, rows: usize, cols: usize) -> Result<()> {
    if masks.len() != frames {
        return Err(Error::dims(format!("{frames} masks"), format!("{} masks", masks.len())));
    }
    if let Some(m) = masks.iter().find(|m| m.rows() != rows || m.cols() != cols) {
        return Err(Error::dims((rows, cols), (m.rows(), m.cols())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceChoice {
    pub frame: usize,
    /// The reference is not Clear over the whole region.
    pub partial: bool,
    /// Fraction of the region that is Clear in the reference.
    pub clear_fraction: f64,
}

/// Picks the temporally closest frame that is Clear over all of `region`
/// (flat pixel indices), preferring the earlier frame on ties. Without such
/// a frame, falls back to the one with the largest Clear share of the
/// region and flags it partial; returns `None` when no other frame has any
/// Clear pixel there.
pub fn select_reference(
    masks: &[LabelMask],
    target: usize,
    region: &[usize],
    positions: &[f64],
) -> Result<Option<ReferenceChoice>> {
    if region.is_empty() {
        return Err(Error::invalid("reference selection needs a nonempty region"));
    }
    if target >= masks.len() {
        return Err(Error::invalid(format!("target frame {target} out of range")));
    }
    if positions.len() != masks.len() {
        return Err(Error::dims(masks.len(), positions.len()));
    }
    let distance = |k: usize| (positions[k] - positions[target]).abs();
    let mut best: Option<(usize, f64)> = None;
    for (k, mask) in masks.iter().enumerate() {
        if k == target {
            continue;
        }
        let clear = region.iter().filter(|&&q| mask.labels()[q].is_clear()).count();
        let frac = clear as f64 / region.len() as f64;
        if clear == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((b, bf)) => {
                let full = clear == region.len();
                let best_full = bf == 1.0;
                match (full, best_full) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => distance(k) < distance(b),
                    (false, false) => frac > bf || (frac == bf && distance(k) < distance(b)),
                }
            }
        };
        if better {
            best = Some((k, frac));
        }
    }
    Ok(best.map(|(frame, clear_fraction)| ReferenceChoice {
        frame,
        partial: clear_fraction < 1.0,
        clear_fraction,
    }))
}

/// One recovery region and its chosen reference.
#[derive(Debug, Clone)]
pub struct RegionPlan {
    pub region: Region,
    pub reference: Option<ReferenceChoice>,
}

/// Extracts the regions of every frame and selects a reference for each.
pub fn plan_references(masks: &[LabelMask], positions: &[f64]) -> Result<Vec<RegionPlan>> {
    let per_frame = par::map(masks, |mask| -> Result<Vec<RegionPlan>> {
        extract_regions(mask)
            .into_iter()
            .map(|region| {
                let reference = select_reference(masks, mask.frame_index, &region.flat_pixels(), positions)?;
                Ok(RegionPlan { region, reference })
            })
            .collect()
    });
    let mut out = Vec::new();
    for plans in per_frame {
        out.extend(plans?);
    }
    Ok(out)
}

//! End-to-end removal: per-band decomposition, mask extraction,
//! clean-area substitution, then detail cloning.

use std::fmt::Write;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compositor::{plan_references, substitute_clean};
use crate::error::{Error, Result};
use crate::io::{write_json, write_masks, write_stack};
use crate::mask::{build_masks, coverage, LabelMask, ThresholdConfig};
use crate::par;
use crate::poisson::{reconstruct_details, CloningReport, PoissonConfig};
use crate::solver::{solve, Decomposition, IterationRecord, SolverParams};
use crate::stack::ImageStack;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoveConfig {
    pub solver: SolverParams,
    pub thresholds: ThresholdConfig,
    pub poisson: PoissonConfig,
    /// Stop after substitution and return the preliminary (TOS) result.
    pub skip_cloning: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BandSummary {
    pub band: usize,
    pub converged: bool,
    pub iters_used: usize,
    #[serde(skip)]
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct RemoveOutput {
    pub restored: ImageStack,
    /// Decomposition plus substitution, before cloning.
    pub preliminary: ImageStack,
    pub masks: Vec<LabelMask>,
    pub bands: Vec<BandSummary>,
    pub cloning: Option<CloningReport>,
}

impl RemoveOutput {
    pub fn all_converged(&self) -> bool {
        self.bands.iter().all(|b| b.converged)
    }
}

/// Decomposes every band independently.
pub fn decompose(stack: &ImageStack, params: &SolverParams) -> Result<Vec<Decomposition>> {
    par::map(stack.bands(), |band| solve(band, params))
        .into_iter()
        .collect()
}

/// Runs the full pipeline. With `masks_in`, thresholding is skipped and the
/// given masks define the recovery regions.
pub fn run_remove(stack: &ImageStack, cfg: &RemoveConfig, masks_in: Option<Vec<LabelMask>>) -> Result<RemoveOutput> {
    if stack.num_frames() < 2 {
        return Err(Error::invalid("at least two frames are needed for temporal recovery"));
    }
    cfg.solver.validate()?;
    if masks_in.is_none() {
        cfg.thresholds.validate()?;
    }
    let decomps = decompose(stack, &cfg.solver)?;
    let masks = match masks_in {
        Some(m) => {
            let dims = stack.dims();
            crate::compositor::check_masks(&m, dims.t, dims.m, dims.n)?;
            m
        }
        None => {
            let clouds: Vec<_> = decomps.iter().map(|d| d.cloud.clone()).collect();
            build_masks(&clouds, &cfg.thresholds)?
        }
    };
    let clean: Vec<_> = decomps.iter().map(|d| d.clean.clone()).collect();
    let preliminary = substitute_clean(stack, &clean, &masks)?;
    let bands = decomps
        .into_iter()
        .enumerate()
        .map(|(band, d)| BandSummary {
            band,
            converged: d.converged,
            iters_used: d.iters_used,
            history: d.history,
        })
        .collect();
    let (restored, cloning) = if cfg.skip_cloning {
        (preliminary.clone(), None)
    } else {
        let plans = plan_references(&masks, &stack.meta.frame_positions())?;
        let (out, report) = reconstruct_details(&preliminary, &plans, &masks, &cfg.poisson)?;
        (out, Some(report))
    };
    Ok(RemoveOutput {
        restored,
        preliminary,
        masks,
        bands,
        cloning,
    })
}

/// Per-iteration residual log, one row per band and iteration.
pub fn convergence_csv(bands: &[BandSummary]) -> String {
    let mut out = String::from("band,iter,mu,rel_change,r_group,r_dx,r_dy,r_dt\n");
    for b in bands {
        for (i, rec) in b.history.iter().enumerate() {
            let [r1, r2, r3, r4] = rec.residuals;
            writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
                b.band,
                i + 1,
                rec.mu,
                rec.rel_change,
                r1,
                r2,
                r3,
                r4
            )
            .expect("write to string");
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameCoverage {
    pub frame: usize,
    pub cloud: f64,
    pub shadow: f64,
}

/// Run summary written next to the restored stack.
#[derive(Debug, Clone, Serialize)]
pub struct RemoveReport {
    pub converged: bool,
    pub bands: Vec<BandSummary>,
    pub coverage: Vec<FrameCoverage>,
    pub cloning: Option<CloningReport>,
}

impl RemoveReport {
    pub fn new(out: &RemoveOutput) -> Self {
        RemoveReport {
            converged: out.all_converged(),
            bands: out.bands.clone(),
            coverage: out
                .masks
                .iter()
                .map(|m| {
                    let (cloud, shadow) = coverage(m);
                    FrameCoverage {
                        frame: m.frame_index,
                        cloud,
                        shadow,
                    }
                })
                .collect(),
            cloning: out.cloning.clone(),
        }
    }
}

/// Writes `restored/`, `masks/`, `convergence.csv`, `config.json` and
/// `report.json` under `out_dir`. Nothing time- or host-dependent is
/// recorded, so equal runs give equal bytes.
pub fn write_remove_outputs(out: &RemoveOutput, cfg: &RemoveConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_stack(&out.restored, &out_dir.join("restored"))?;
    write_masks(&out.masks, &out_dir.join("masks"))?;
    let csv = out_dir.join("convergence.csv");
    fs::write(&csv, convergence_csv(&out.bands)).map_err(|e| Error::io(&csv, e))?;
    write_json(&out_dir.join("config.json"), cfg)?;
    write_json(&out_dir.join("report.json"), &RemoveReport::new(out))
}

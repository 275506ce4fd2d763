//! Gradient-domain detail reconstruction. Inside a recovery region `Ω` the
//! restored values `f` solve the discrete Poisson equation
//!
//! ```text
//! |N_p| f(p) − Σ_{q ∈ N_p ∩ Ω} f(q) = Σ_{q ∈ N_p ∩ ∂Ω} f*(q) + Σ_{q ∈ N_p} w_pq
//! ```
//!
//! with Dirichlet values `f*` taken from the target frame on `∂Ω` and the
//! guidance `w_pq = g(p) − g(q)` taken from the reference frame `g`. `N_p`
//! only contains in-image neighbours, which makes image edges zero-flux.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::compositor::RegionPlan;
use crate::error::{Error, Result};
use crate::mask::{components, neighbours4, LabelMask};
use crate::par;
use crate::stack::ImageStack;

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub frame: usize,
    /// Image size the coordinates refer to.
    pub rows: usize,
    pub cols: usize,
    /// Interior pixels `Ω` as (row, col), row-major sorted.
    pub pixels: Vec<(usize, usize)>,
    /// In-image pixels outside `Ω` that are 4-adjacent to it (`∂Ω`).
    pub boundary: Vec<(usize, usize)>,
    /// `Ω` pixels on the image edge, whose missing neighbours are treated
    /// as zero-flux.
    pub open_boundary: Vec<(usize, usize)>,
}

impl Region {
    /// Builds a region from flat pixel indices, deriving its boundary.
    pub fn from_flat(frame: usize, rows: usize, cols: usize, mut flat: Vec<usize>) -> Self {
        flat.sort_unstable();
        flat.dedup();
        let inside: HashSet<usize> = flat.iter().copied().collect();
        let mut boundary: Vec<usize> = flat
            .iter()
            .flat_map(|&q| neighbours4(q, rows, cols))
            .filter(|q| !inside.contains(q))
            .collect();
        boundary.sort_unstable();
        boundary.dedup();
        let coord = |q: usize| (q / cols, q % cols);
        let open_boundary = flat
            .iter()
            .map(|&q| coord(q))
            .filter(|&(r, c)| r == 0 || c == 0 || r + 1 == rows || c + 1 == cols)
            .collect();
        Region {
            frame,
            rows,
            cols,
            pixels: flat.iter().map(|&q| coord(q)).collect(),
            boundary: boundary.into_iter().map(coord).collect(),
            open_boundary,
        }
    }

    pub fn flat_pixels(&self) -> Vec<usize> {
        self.pixels.iter().map(|&(r, c)| r * self.cols + c).collect()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// 4-connected components of the non-Clear pixels of `mask`.
pub fn extract_regions(mask: &LabelMask) -> Vec<Region> {
    let (rows, cols) = (mask.rows(), mask.cols());
    components(rows, cols, |q| !mask.labels()[q].is_clear())
        .into_iter()
        .map(|flat| Region::from_flat(mask.frame_index, rows, cols, flat))
        .collect()
}

/// Forward-difference gradients of the reference over the bounding box of
/// `Ω ∪ ∂Ω`. At the last column (row) `wx` (`wy`) is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceField {
    origin: (usize, usize),
    height: usize,
    width: usize,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
}

impl GuidanceField {
    /// Gradient pair at image coordinate `(r, c)`, which must lie in the box.
    pub fn at(&self, r: usize, c: usize) -> (f64, f64) {
        let i = (r - self.origin.0) * self.width + (c - self.origin.1);
        (self.wx[i], self.wy[i])
    }

    pub fn zeros_like(&self) -> GuidanceField {
        GuidanceField {
            wx: vec![0.0; self.wx.len()],
            wy: vec![0.0; self.wy.len()],
            ..self.clone()
        }
    }
}

pub fn guidance_field(reference: &[f64], rows: usize, cols: usize, region: &Region) -> Result<GuidanceField> {
    if reference.len() != rows * cols || region.rows != rows || region.cols != cols {
        return Err(Error::dims((rows, cols), (region.rows, region.cols)));
    }
    let all = region.pixels.iter().chain(&region.boundary);
    let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
    for &(r, c) in all {
        r0 = r0.min(r);
        c0 = c0.min(c);
        r1 = r1.max(r);
        c1 = c1.max(c);
    }
    if region.pixels.is_empty() {
        return Ok(GuidanceField {
            origin: (0, 0),
            height: 0,
            width: 0,
            wx: Vec::new(),
            wy: Vec::new(),
        });
    }
    let (height, width) = (r1 - r0 + 1, c1 - c0 + 1);
    let mut wx = Vec::with_capacity(height * width);
    let mut wy = Vec::with_capacity(height * width);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let here = reference[r * cols + c];
            wx.push(if c + 1 < cols { reference[r * cols + c + 1] - here } else { 0.0 });
            wy.push(if r + 1 < rows { reference[(r + 1) * cols + c] - here } else { 0.0 });
        }
    }
    if wx.iter().chain(&wy).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("guidance field".into()));
    }
    Ok(GuidanceField {
        origin: (r0, c0),
        height,
        width,
        wx,
        wy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoissonMethod {
    /// Dense direct solve for small regions, Gauss-Seidel otherwise.
    #[default]
    Auto,
    GaussSeidel,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoissonConfig {
    /// Target for the max-norm equation residual.
    pub tol: f64,
    pub method: PoissonMethod,
    /// Largest region solved densely under `Auto`.
    pub direct_max_px: usize,
    pub sweeps_per_px: usize,
    pub max_sweeps: usize,
    /// Over-relaxation factor for the red-black sweeps; 1 is plain Gauss-Seidel.
    pub relaxation: f64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        PoissonConfig {
            tol: 1e-6,
            method: PoissonMethod::Auto,
            direct_max_px: 256,
            sweeps_per_px: 10,
            max_sweeps: 50_000,
            relaxation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloneResult {
    /// Solution on `Ω`, parallel to `Region::pixels`.
    pub values: Vec<f64>,
    pub converged: bool,
    pub residual_inf: f64,
    pub sweeps: usize,
    pub method: PoissonMethod,
}

/// The assembled linear system over `Ω`.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    diag: Vec<f64>,
    neighbours: Vec<Vec<usize>>,
    rhs: Vec<f64>,
    parity: Vec<bool>,
}

impl PoissonSystem {
    pub fn assemble(plane: &[f64], region: &Region, w: &GuidanceField) -> Result<Self> {
        let (rows, cols) = (region.rows, region.cols);
        if plane.len() != rows * cols {
            return Err(Error::dims(rows * cols, plane.len()));
        }
        let mut local = vec![usize::MAX; rows * cols];
        for (i, &(r, c)) in region.pixels.iter().enumerate() {
            local[r * cols + c] = i;
        }
        let n = region.pixels.len();
        let mut diag = vec![0.0; n];
        let mut neighbours = vec![Vec::with_capacity(4); n];
        let mut rhs = vec![0.0; n];
        let mut parity = vec![false; n];
        for (i, &(r, c)) in region.pixels.iter().enumerate() {
            parity[i] = (r + c) % 2 == 1;
            let (wx_p, wy_p) = w.at(r, c);
            let mut edges: [Option<(usize, f64)>; 4] = [None; 4];
            if c + 1 < cols {
                edges[0] = Some((r * cols + c + 1, -wx_p));
            }
            if c > 0 {
                edges[1] = Some((r * cols + c - 1, w.at(r, c - 1).0));
            }
            if r + 1 < rows {
                edges[2] = Some(((r + 1) * cols + c, -wy_p));
            }
            if r > 0 {
                edges[3] = Some(((r - 1) * cols + c, w.at(r - 1, c).1));
            }
            for (q, wpq) in edges.into_iter().flatten() {
                diag[i] += 1.0;
                rhs[i] += wpq;
                match local[q] {
                    usize::MAX => rhs[i] += plane[q],
                    j => neighbours[i].push(j),
                }
            }
        }
        Ok(PoissonSystem {
            diag,
            neighbours,
            rhs,
            parity,
        })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn residual_inf(&self, f: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| {
                let s: f64 = self.neighbours[i].iter().map(|&j| f[j]).sum();
                (self.rhs[i] + s - self.diag[i] * f[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Dense matrix and right-hand side, for small regions.
    pub fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.diag[i];
            for &j in &self.neighbours[i] {
                a[(i, j)] -= 1.0;
            }
        }
        (a, DVector::from_column_slice(&self.rhs))
    }

    pub fn solve_direct(&self) -> Option<Vec<f64>> {
        let (a, b) = self.dense();
        let chol = a.cholesky()?;
        Some(chol.solve(&b).as_slice().to_vec())
    }

    /// Red-black relaxation from `f` until `‖r‖∞ < tol` or `max_sweeps`.
    /// Returns (sweeps, final residual).
    pub fn solve_gauss_seidel(&self, f: &mut [f64], tol: f64, max_sweeps: usize, relaxation: f64) -> (usize, f64) {
        let mut res = self.residual_inf(f);
        let mut sweeps = 0;
        while res >= tol && sweeps < max_sweeps {
            for colour in [false, true] {
                for i in 0..self.len() {
                    if self.parity[i] != colour {
                        continue;
                    }
                    let s: f64 = self.neighbours[i].iter().map(|&j| f[j]).sum();
                    let gs = (self.rhs[i] + s) / self.diag[i];
                    f[i] += relaxation * (gs - f[i]);
                }
            }
            sweeps += 1;
            res = self.residual_inf(f);
        }
        (sweeps, res)
    }
}

/// Solves the cloning equation on one region of one plane. `plane` supplies
/// the Dirichlet values on `∂Ω` and the initial guess on `Ω`.
pub fn clone_region(plane: &[f64], region: &Region, w: &GuidanceField, cfg: &PoissonConfig) -> Result<CloneResult> {
    if region.boundary.is_empty() {
        return Err(Error::invalid(format!(
            "region of {} pixels in frame {} has no boundary values",
            region.len(),
            region.frame
        )));
    }
    let sys = PoissonSystem::assemble(plane, region, w)?;
    let cols = region.cols;
    let use_direct = match cfg.method {
        PoissonMethod::Direct => true,
        PoissonMethod::GaussSeidel => false,
        PoissonMethod::Auto => sys.len() <= cfg.direct_max_px,
    };
    if use_direct {
        if let Some(values) = sys.solve_direct() {
            let residual_inf = sys.residual_inf(&values);
            return Ok(CloneResult {
                values,
                converged: residual_inf < cfg.tol,
                residual_inf,
                sweeps: 0,
                method: PoissonMethod::Direct,
            });
        }
    }
    let mut values: Vec<f64> = region.pixels.iter().map(|&(r, c)| plane[r * cols + c]).collect();
    let max_sweeps = (cfg.sweeps_per_px * sys.len()).clamp(1, cfg.max_sweeps.max(1));
    let (sweeps, residual_inf) = sys.solve_gauss_seidel(&mut values, cfg.tol, max_sweeps, cfg.relaxation);
    if residual_inf >= cfg.tol {
        log::warn!(
            "poisson solve on frame {} ({} px) stopped after {sweeps} sweeps, residual {residual_inf:.3e}",
            region.frame,
            region.len()
        );
    }
    Ok(CloneResult {
        values,
        converged: residual_inf < cfg.tol,
        residual_inf,
        sweeps,
        method: PoissonMethod::GaussSeidel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandOutcome {
    pub converged: bool,
    pub residual_inf: f64,
    pub sweeps: usize,
    pub method: PoissonMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionOutcome {
    pub frame: usize,
    pub pixels: usize,
    pub reference: Option<usize>,
    pub partial: bool,
    /// Pixels left at their input values because the reference is not
    /// Clear there.
    pub uncovered_px: usize,
    pub skipped: bool,
    pub bands: Vec<BandOutcome>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CloningReport {
    pub regions: Vec<RegionOutcome>,
}

impl CloningReport {
    pub fn all_converged(&self) -> bool {
        self.regions
            .iter()
            .all(|r| r.bands.iter().all(|b| b.converged))
    }
}

/// Clones reference detail into every planned region of `tos`. Only `Ω`
/// pixels are written; everything else is returned unchanged.
pub fn reconstruct_details(
    tos: &ImageStack,
    plans: &[RegionPlan],
    masks: &[LabelMask],
    cfg: &PoissonConfig,
) -> Result<(ImageStack, CloningReport)> {
    let dims = tos.dims();
    crate::compositor::check_masks(masks, dims.t, dims.m, dims.n)?;
    let (rows, cols) = (dims.m, dims.n);
    // the part of each region the reference can guide
    let solvable: Vec<Option<Region>> = plans
        .iter()
        .map(|plan| {
            let choice = plan.reference?;
            if plan.region.frame >= dims.t || choice.frame >= dims.t {
                return None;
            }
            if !choice.partial {
                return Some(plan.region.clone());
            }
            let ref_mask = &masks[choice.frame];
            let covered: Vec<usize> = plan
                .region
                .flat_pixels()
                .into_iter()
                .filter(|&q| ref_mask.labels()[q].is_clear())
                .collect();
            Some(Region::from_flat(plan.region.frame, rows, cols, covered))
        })
        .collect();

    let bands = tos.num_bands();
    let tasks: Vec<(usize, usize)> = (0..plans.len())
        .filter(|&p| solvable[p].as_ref().is_some_and(|r| !r.is_empty() && !r.boundary.is_empty()))
        .flat_map(|p| (0..bands).map(move |b| (p, b)))
        .collect();
    let solved = par::map(&tasks, |&(p, b)| -> Result<CloneResult> {
        let region = solvable[p].as_ref().expect("filtered above");
        let reference = plans[p].reference.expect("filtered above").frame;
        let w = guidance_field(tos.plane(b, reference), rows, cols, region)?;
        clone_region(tos.plane(b, region.frame), region, &w, cfg)
    });

    let mut out = tos.clone();
    let mut report = CloningReport::default();
    let mut outcomes: Vec<RegionOutcome> = plans
        .iter()
        .zip(&solvable)
        .map(|(plan, sub)| {
            let solved_px = sub.as_ref().map_or(0, Region::len);
            let skipped = sub.as_ref().is_none_or(|r| r.is_empty() || r.boundary.is_empty());
            if skipped {
                log::warn!(
                    "frame {}: region of {} px left at preliminary values (no usable reference)",
                    plan.region.frame,
                    plan.region.len()
                );
            }
            RegionOutcome {
                frame: plan.region.frame,
                pixels: plan.region.len(),
                reference: plan.reference.map(|r| r.frame),
                partial: plan.reference.is_some_and(|r| r.partial),
                uncovered_px: plan.region.len() - if skipped { 0 } else { solved_px },
                skipped,
                bands: Vec::new(),
            }
        })
        .collect();
    for (&(p, b), res) in tasks.iter().zip(solved) {
        let res = res?;
        let region = solvable[p].as_ref().expect("filtered above");
        let dst = out.plane_mut(b, region.frame);
        for (&(r, c), v) in region.pixels.iter().zip(&res.values) {
            dst[r * cols + c] = *v;
        }
        outcomes[p].bands.push(BandOutcome {
            converged: res.converged,
            residual_inf: res.residual_inf,
            sweeps: res.sweeps,
            method: res.method,
        });
    }
    report.regions = outcomes;
    Ok((out, report))
}

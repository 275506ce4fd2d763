//! ADMM solver for the sparsity- and smoothness-regularised decomposition
//! `D = B + C` of one band:
//!
//! ```text
//! min λ1‖∇x C‖₁ + λ2‖∇y C‖₁ + λ3‖∇z B‖₁ + λ4‖C‖₂,₁   s.t. D = B + C, B ≥ 0
//! ```
//!
//! Auxiliaries `A = C`, `H = ∇x C`, `V = ∇y C`, `T = ∇z (D − C)` split the
//! problem so every block update is closed form: group shrinkage for `A`,
//! a Fourier-diagonal linear solve for `C`, and scalar soft thresholding for
//! `H`, `V`, `T`.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    fold_mode1, grad, grad_adjoint, spectral_symbol, unfold_mode1, Axis, BandTensor, Dims, Fft3,
};

/// Which slices of the mode-1 unfolding form the groups of the `ℓ2,1` norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group per unfolding column, i.e. one image column of one frame.
    #[default]
    Columns,
    /// One group per unfolding row, i.e. one image row across all frames.
    Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Weight on horizontal smoothness of the cloud element.
    pub lambda1: f64,
    /// Weight on vertical smoothness of the cloud element.
    pub lambda2: f64,
    /// Weight on temporal smoothness of the clean element.
    pub lambda3: f64,
    /// Group sparsity weight; `None` resolves to `0.1·√max(m, n)`.
    pub lambda4: Option<f64>,
    pub mu: f64,
    /// Multiplicative growth of `mu` per iteration; 1 keeps it fixed.
    pub rho: f64,
    pub mu_max: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Project `C ← min(C, D)` after the last iteration so that `B ≥ 0`.
    pub enforce_bound: bool,
    pub grouping: Grouping,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            lambda1: 0.01,
            lambda2: 0.01,
            lambda3: 1.0,
            lambda4: None,
            mu: 1.0,
            rho: 1.1,
            mu_max: 1e6,
            max_iters: 200,
            tol: 1e-5,
            enforce_bound: true,
            grouping: Grouping::Columns,
        }
    }
}

impl SolverParams {
    pub fn lambda4_for(&self, dims: Dims) -> f64 {
        self.lambda4
            .unwrap_or_else(|| 0.1 * (dims.m.max(dims.n) as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4.unwrap_or(0.0)];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid(format!(
                "lambda weights must be finite and nonnegative, got {lambdas:?}"
            )));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.rho.is_finite() && self.rho >= 1.0) || !(self.mu_max >= self.mu) {
            return Err(Error::invalid("rho must be >= 1 and mu_max >= mu"));
        }
        Ok(())
    }
}

/// Constraint residual norms after one iteration, in constraint order
/// `A − C`, `H − ∇xC`, `V − ∇yC`, `T − ∇z(D − C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub residuals: [f64; 4],
    /// `‖C_new − C_old‖ / max(‖D‖, ε)`
    pub rel_change: f64,
    pub mu: f64,
}

impl IterationRecord {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub cloud: BandTensor,
    pub group_aux: BandTensor,
    pub dx_aux: BandTensor,
    pub dy_aux: BandTensor,
    pub dt_aux: BandTensor,
    pub dual_group: BandTensor,
    pub dual_dx: BandTensor,
    pub dual_dy: BandTensor,
    pub dual_dt: BandTensor,
    pub mu: f64,
    pub iter: usize,
    pub history: Vec<IterationRecord>,
}

impl SolverState {
    pub fn zeros(dims: Dims, mu: f64) -> Self {
        let z = BandTensor::zeros(dims);
        SolverState {
            cloud: z.clone(),
            group_aux: z.clone(),
            dx_aux: z.clone(),
            dy_aux: z.clone(),
            dt_aux: z.clone(),
            dual_group: z.clone(),
            dual_dx: z.clone(),
            dual_dy: z.clone(),
            dual_dt: z,
            mu,
            iter: 0,
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Clean element, always computed as `D − C`.
    pub clean: BandTensor,
    /// Cloud-and-shadow element.
    pub cloud: BandTensor,
    pub converged: bool,
    pub iters_used: usize,
    pub history: Vec<IterationRecord>,
}

/// `sign(x)·max(|x| − ω, 0)`
#[inline]
pub fn soft_threshold_scalar(x: f64, omega: f64) -> f64 {
    let mag = x.abs() - omega;
    if mag > 0.0 {
        mag.copysign(x)
    } else {
        0.0
    }
}

pub fn soft_threshold(x: &BandTensor, omega: f64) -> BandTensor {
    x.map(move |v| soft_threshold_scalar(v, omega))
}

/// Group shrinkage of one vector in place: scales `g` by
/// `max(‖g‖ − ω, 0)/‖g‖`, zeroing it when `‖g‖ = 0`.
pub fn shrink_group(g: &mut [f64], omega: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if norm > 0.0 {
        (norm - omega).max(0.0) / norm
    } else {
        0.0
    };
    for v in g.iter_mut() {
        *v *= scale;
    }
}

/// `A = prox_{(λ4/μ)‖·‖₂,₁}(C − Y1/μ)` over the mode-1 unfolding groups.
pub fn update_a(
    cloud: &BandTensor,
    dual_group: &BandTensor,
    mu: f64,
    lambda4: f64,
    grouping: Grouping,
) -> BandTensor {
    let dims = cloud.dims();
    let r = cloud.zip_with(dual_group, |c, y| c - y / mu);
    let mut unf = unfold_mode1(&r);
    let omega = lambda4 / mu;
    let (rows, cols) = (unf.rows(), unf.cols());
    match grouping {
        Grouping::Rows => {
            for row in unf.as_mut_slice().chunks_mut(cols) {
                shrink_group(row, omega);
            }
        }
        Grouping::Columns => {
            let mut col = vec![0.0; rows];
            for c in 0..cols {
                for (r, v) in col.iter_mut().enumerate() {
                    *v = unf.get(r, c);
                }
                shrink_group(&mut col, omega);
                for (r, v) in col.iter().enumerate() {
                    unf.set(r, c, *v);
                }
            }
        }
    }
    fold_mode1(&unf, dims).expect("unfolding built from the same dims")
}

/// Pre-planned solver for the C-update normal equation
/// `μ(I + ∇xᵀ∇x + ∇yᵀ∇y + ∇zᵀ∇z) C = L1`, diagonal in the 3-D Fourier basis
/// under periodic differences.
#[derive(Debug, Clone)]
pub struct NormalEquation {
    fft: Fft3,
    /// Symbol for `μ = 1`; scaled by the current `μ` at solve time.
    unit_symbol: BandTensor,
}

impl NormalEquation {
    pub fn new(dims: Dims) -> Self {
        NormalEquation {
            fft: Fft3::new(dims),
            unit_symbol: spectral_symbol(dims, 1.0).expect("unit mu is valid"),
        }
    }

    pub fn dims(&self) -> Dims {
        self.fft.dims()
    }

    /// Solves `μ(I + Σ ∇ᵀ∇) C = rhs`.
    pub fn solve(&self, rhs: &BandTensor, mu: f64) -> BandTensor {
        let mut buf = self.fft.forward_real(rhs);
        for (v, s) in buf.iter_mut().zip(self.unit_symbol.as_slice()) {
            *v /= mu * s;
        }
        self.fft.inverse(&mut buf);
        BandTensor::from_raw(rhs.dims(), buf.iter().map(|c: &Complex64| c.re).collect())
    }
}

/// Right-hand side of the C-update normal equation:
/// `μA + Y1 + ∇xᵀ(μH + Y2) + ∇yᵀ(μV + Y3) + ∇zᵀ(μ∇zD − μT − Y4)`.
pub fn c_update_rhs(state: &SolverState, d: &BandTensor, mu: f64) -> BandTensor {
    let mut rhs = state.group_aux.zip_with(&state.dual_group, |a, y| mu * a + y);
    let hx = state.dx_aux.zip_with(&state.dual_dx, |h, y| mu * h + y);
    rhs.axpy(1.0, &grad_adjoint(&hx, Axis::X));
    let vy = state.dy_aux.zip_with(&state.dual_dy, |v, y| mu * v + y);
    rhs.axpy(1.0, &grad_adjoint(&vy, Axis::Y));
    let dz = grad(d, Axis::Z);
    let tz = dz
        .zip_with(&state.dt_aux, |g, t| mu * (g - t))
        .zip_with(&state.dual_dt, |v, y| v - y);
    rhs.axpy(1.0, &grad_adjoint(&tz, Axis::Z));
    rhs
}

/// Applies `μ(I + ∇xᵀ∇x + ∇yᵀ∇y + ∇zᵀ∇z)` directly in the spatial domain.
pub fn apply_normal_operator(c: &BandTensor, mu: f64) -> BandTensor {
    let mut out = c.clone();
    for axis in Axis::ALL {
        out.axpy(1.0, &grad_adjoint(&grad(c, axis), axis));
    }
    out.scale(mu)
}

pub fn update_c(state: &SolverState, d: &BandTensor, eq: &NormalEquation) -> BandTensor {
    let rhs = c_update_rhs(state, d, state.mu);
    eq.solve(&rhs, state.mu)
}

/// Soft-thresholded updates of the three gradient auxiliaries.
#[allow(clippy::too_many_arguments)]
pub fn update_hvt(
    cloud: &BandTensor,
    d: &BandTensor,
    dual_dx: &BandTensor,
    dual_dy: &BandTensor,
    dual_dt: &BandTensor,
    mu: f64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> (BandTensor, BandTensor, BandTensor) {
    let shrink = |g: BandTensor, y: &BandTensor, lambda: f64| {
        let w = lambda / mu;
        g.zip_with(y, move |g, y| soft_threshold_scalar(g - y / mu, w))
    };
    let h = shrink(grad(cloud, Axis::X), dual_dx, lambda1);
    let v = shrink(grad(cloud, Axis::Y), dual_dy, lambda2);
    let t = shrink(grad(&(d - cloud), Axis::Z), dual_dt, lambda3);
    (h, v, t)
}

/// Dual ascent on all four multipliers; returns the constraint residual
/// norms that drove the step.
pub fn update_multipliers(state: &mut SolverState, d: &BandTensor) -> [f64; 4] {
    let mu = state.mu;
    let r1 = &state.group_aux - &state.cloud;
    let r2 = &state.dx_aux - &grad(&state.cloud, Axis::X);
    let r3 = &state.dy_aux - &grad(&state.cloud, Axis::Y);
    let r4 = &state.dt_aux - &grad(&(d - &state.cloud), Axis::Z);
    state.dual_group.axpy(mu, &r1);
    state.dual_dx.axpy(mu, &r2);
    state.dual_dy.axpy(mu, &r3);
    state.dual_dt.axpy(mu, &r4);
    [r1.norm(), r2.norm(), r3.norm(), r4.norm()]
}

const NORM_FLOOR: f64 = 1e-12;

/// Runs one ADMM iteration in block order A, C, (H, V, T), multipliers.
pub fn step(
    state: &mut SolverState,
    d: &BandTensor,
    params: &SolverParams,
    lambda4: f64,
    eq: &NormalEquation,
) -> IterationRecord {
    let scale = d.norm().max(NORM_FLOOR);
    let mu = state.mu;
    state.group_aux = update_a(&state.cloud, &state.dual_group, mu, lambda4, params.grouping);
    let new_c = update_c(state, d, eq);
    let rel_change = new_c.distance(&state.cloud) / scale;
    state.cloud = new_c;
    let (h, v, t) = update_hvt(
        &state.cloud,
        d,
        &state.dual_dx,
        &state.dual_dy,
        &state.dual_dt,
        mu,
        params.lambda1,
        params.lambda2,
        params.lambda3,
    );
    state.dx_aux = h;
    state.dy_aux = v;
    state.dt_aux = t;
    let residuals = update_multipliers(state, d);
    let record = IterationRecord {
        residuals,
        rel_change,
        mu,
    };
    state.iter += 1;
    state.history.push(record);
    state.mu = (state.mu * params.rho).min(params.mu_max);
    record
}

/// Decomposes one band. Stops once both the relative change of `C` and every
/// constraint residual fall below `tol` (relative to `‖D‖`), or after
/// `max_iters` iterations with `converged = false`.
pub fn solve(d: &BandTensor, params: &SolverParams) -> Result<Decomposition> {
    params.validate()?;
    if !d.is_finite() {
        return Err(Error::NonFinite("solver input".into()));
    }
    let dims = d.dims();
    let lambda4 = params.lambda4_for(dims);
    let eq = NormalEquation::new(dims);
    let mut state = SolverState::zeros(dims, params.mu);
    let scale = d.norm().max(NORM_FLOOR);
    let mut converged = false;
    while state.iter < params.max_iters {
        let rec = step(&mut state, d, params, lambda4, &eq);
        if rec.rel_change < params.tol && rec.max_residual() < params.tol * scale {
            converged = true;
            break;
        }
    }
    let mut cloud = state.cloud;
    if params.enforce_bound {
        cloud = cloud.zip_with(d, f64::min);
    }
    let clean = d - &cloud;
    Ok(Decomposition {
        clean,
        cloud,
        converged,
        iters_used: state.iter,
        history: state.history,
    })
}

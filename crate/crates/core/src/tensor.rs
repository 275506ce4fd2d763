//! Dense single-band `m × n × t` tensors and the linear operators the solver
//! is built from: circular forward differences, their adjoints, the mode-1
//! unfolding and the Fourier symbol of the C-update normal equation.
//!
//! Storage is slice-major: entry `(i, j, k)` (row, column, time) lives at
//! `k·m·n + i·n + j`, so every temporal slice is a contiguous row-major plane.

use std::f64::consts::PI;
use std::ops::{Add, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::par;

/// Tensor dimensions: rows `m`, columns `n`, frames `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub t: usize,
}

impl Dims {
    pub fn new(m: usize, n: usize, t: usize) -> Self {
        Dims { m, n, t }
    }

    pub fn len(&self) -> usize {
        self.m * self.n * self.t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.m * self.n
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        k * self.m * self.n + i * self.n + j
    }

    pub fn axis_len(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.n,
            Axis::Y => self.m,
            Axis::Z => self.t,
        }
    }

    /// Distance in the flat storage between neighbours along `axis`.
    pub fn stride(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => 1,
            Axis::Y => self.n,
            Axis::Z => self.m * self.n,
        }
    }
}

/// Difference directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Horizontal, along columns `j`.
    X,
    /// Vertical, along rows `i`.
    Y,
    /// Temporal, along frames `k`.
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandTensor {
    dims: Dims,
    data: Vec<f64>,
}

impl BandTensor {
    pub fn zeros(dims: Dims) -> Self {
        BandTensor {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    /// Builds a tensor from slice-major data, rejecting empty dims, a length
    /// mismatch or non-finite entries.
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if dims.m == 0 || dims.n == 0 || dims.t == 0 {
            return Err(Error::invalid(format!("tensor dims must be positive, got {dims:?}")));
        }
        if data.len() != dims.len() {
            return Err(Error::dims(dims.len(), data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {pos}")));
        }
        Ok(BandTensor { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for k in 0..dims.t {
            for i in 0..dims.m {
                for j in 0..dims.n {
                    data.push(f(i, j, k));
                }
            }
        }
        BandTensor { dims, data }
    }

    /// Used internally where the length is known to match.
    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        BandTensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.dims.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.dims.index(i, j, k);
        self.data[idx] = v;
    }

    /// Row-major `m × n` plane of frame `k`.
    pub fn slice(&self, k: usize) -> &[f64] {
        let p = self.dims.plane_len();
        &self.data[k * p..(k + 1) * p]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let p = self.dims.plane_len();
        &mut self.data[k * p..(k + 1) * p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &BandTensor) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync + Send) -> BandTensor {
        BandTensor::from_raw(self.dims, par::zip_map(&self.data, &self.data, |x, _| f(x)))
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_with(&self, other: &BandTensor, f: impl Fn(f64, f64) -> f64 + Sync + Send) -> BandTensor {
        assert_eq!(self.dims, other.dims, "tensor shapes differ");
        BandTensor::from_raw(self.dims, par::zip_map(&self.data, &other.data, f))
    }

    pub fn scale(&self, s: f64) -> BandTensor {
        self.map(move |x| s * x)
    }

    /// `self += s · other`
    pub fn axpy(&mut self, s: f64, other: &BandTensor) {
        assert_eq!(self.dims, other.dims, "tensor shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn distance(&self, other: &BandTensor) -> f64 {
        assert_eq!(self.dims, other.dims, "tensor shapes differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Add for &BandTensor {
    type Output = BandTensor;
    fn add(self, rhs: &BandTensor) -> BandTensor {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &BandTensor {
    type Output = BandTensor;
    fn sub(self, rhs: &BandTensor) -> BandTensor {
        self.zip_with(rhs, |a, b| a - b)
    }
}

/// Forward difference with periodic wrap: `out[p] = T[p+1 mod len] − T[p]`.
pub fn grad(t: &BandTensor, axis: Axis) -> BandTensor {
    shifted_difference(t, axis, Shift::Forward)
}

/// Adjoint of [`grad`]: `out[p] = T[p−1 mod len] − T[p]`.
pub fn grad_adjoint(t: &BandTensor, axis: Axis) -> BandTensor {
    shifted_difference(t, axis, Shift::Backward)
}

#[derive(Clone, Copy)]
enum Shift {
    Forward,
    Backward,
}

fn shifted_difference(t: &BandTensor, axis: Axis, shift: Shift) -> BandTensor {
    let dims = t.dims;
    let len = dims.axis_len(axis);
    if len == 1 {
        return BandTensor::zeros(dims);
    }
    let src = &t.data;
    let mut out = vec![0.0; dims.len()];
    let plane = dims.plane_len();
    let (m, n) = (dims.m, dims.n);
    let step = |p: usize| match shift {
        Shift::Forward => (p + 1) % len,
        Shift::Backward => (p + len - 1) % len,
    };
    par::for_each_chunk_mut(&mut out, plane, |k, dst| {
        let base = k * plane;
        match axis {
            Axis::X => {
                for i in 0..m {
                    let row = base + i * n;
                    for j in 0..n {
                        dst[i * n + j] = src[row + step(j)] - src[row + j];
                    }
                }
            }
            Axis::Y => {
                for i in 0..m {
                    let other = base + step(i) * n;
                    let here = base + i * n;
                    for j in 0..n {
                        dst[i * n + j] = src[other + j] - src[here + j];
                    }
                }
            }
            Axis::Z => {
                let other = step(k) * plane;
                for q in 0..plane {
                    dst[q] = src[other + q] - src[base + q];
                }
            }
        }
    });
    BandTensor::from_raw(dims, out)
}

/// Mode-1 unfolding: an `m × (n·t)` matrix whose column `c = k·n + j` is the
/// fibre `T[·, j, k]`. Stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode1Unfolding {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mode1Unfolding {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dims(rows * cols, data.len()));
        }
        Ok(Mode1Unfolding { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

pub fn unfold_mode1(t: &BandTensor) -> Mode1Unfolding {
    let Dims { m, n, t: frames } = t.dims;
    let cols = n * frames;
    let mut data = vec![0.0; m * cols];
    for k in 0..frames {
        for i in 0..m {
            for j in 0..n {
                data[i * cols + k * n + j] = t.get(i, j, k);
            }
        }
    }
    Mode1Unfolding { rows: m, cols, data }
}

pub fn fold_mode1(u: &Mode1Unfolding, dims: Dims) -> Result<BandTensor> {
    if u.rows != dims.m || u.cols != dims.n * dims.t {
        return Err(Error::dims(
            (dims.m, dims.n * dims.t),
            (u.rows, u.cols),
        ));
    }
    let cols = u.cols;
    Ok(BandTensor::from_fn(dims, |i, j, k| u.data[i * cols + k * dims.n + j]))
}

/// `2 − 2cos(2πf/len)` for each frequency `f` along one axis: the eigenvalues
/// of `gradᵀ∘grad` in the Fourier basis.
pub fn axis_eigenvalues(len: usize) -> Vec<f64> {
    (0..len)
        .map(|f| 2.0 - 2.0 * (2.0 * PI * f as f64 / len as f64).cos())
        .collect()
}

/// Per-axis part of the spectral symbol, laid out like a tensor.
pub fn axis_symbol(dims: Dims, axis: Axis) -> BandTensor {
    let ev = axis_eigenvalues(dims.axis_len(axis));
    BandTensor::from_fn(dims, |i, j, k| match axis {
        Axis::X => ev[j],
        Axis::Y => ev[i],
        Axis::Z => ev[k],
    })
}

/// Fourier eigenvalues of `μ(I + ∇xᵀ∇x + ∇yᵀ∇y + ∇zᵀ∇z)`. Every entry is at
/// least `μ`.
pub fn spectral_symbol(dims: Dims, mu: f64) -> Result<BandTensor> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::invalid(format!("mu must be positive and finite, got {mu}")));
    }
    if dims.is_empty() {
        return Err(Error::invalid("empty dims"));
    }
    let ex = axis_eigenvalues(dims.n);
    let ey = axis_eigenvalues(dims.m);
    let ez = axis_eigenvalues(dims.t);
    Ok(BandTensor::from_fn(dims, |i, j, k| mu * (1.0 + ex[j] + ey[i] + ez[k])))
}

/// Planned 3-D discrete Fourier transform over a fixed shape.
#[derive(Clone)]
pub struct Fft3 {
    dims: Dims,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("dims", &self.dims).finish()
    }
}

impl Fft3 {
    pub fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        let lens = [dims.n, dims.m, dims.t];
        let forward = lens.map(|l| planner.plan_fft_forward(l));
        let inverse = lens.map(|l| planner.plan_fft_inverse(l));
        Fft3 {
            dims,
            forward,
            inverse,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        for (ax, axis) in Axis::ALL.iter().enumerate() {
            transform_axis(buf, self.dims, *axis, &self.forward[ax]);
        }
    }

    /// Inverse transform including the `1/N` normalisation.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        for (ax, axis) in Axis::ALL.iter().enumerate() {
            transform_axis(buf, self.dims, *axis, &self.inverse[ax]);
        }
        let scale = 1.0 / self.dims.len() as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, t: &BandTensor) -> Vec<Complex64> {
        assert_eq!(t.dims, self.dims);
        let mut buf: Vec<Complex64> = t.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

const LINES_PER_TASK: usize = 64;

fn transform_axis(buf: &mut [Complex64], dims: Dims, axis: Axis, fft: &Arc<dyn Fft<f64>>) {
    let len = dims.axis_len(axis);
    if len <= 1 {
        return;
    }
    let total = dims.len();
    let chunk = len * LINES_PER_TASK;
    if axis == Axis::X {
        par::for_each_chunk_mut(buf, chunk, |_, lines| fft.process(lines));
        return;
    }
    // Gather strided lines into contiguous storage, transform, scatter back.
    let stride = dims.stride(axis);
    let n_lines = total / len;
    let line_start = |l: usize| match axis {
        // line l = k·n + j, running over rows i
        Axis::Y => (l / dims.n) * dims.plane_len() + l % dims.n,
        // line l = i·n + j, running over frames k
        _ => l,
    };
    let mut scratch = vec![Complex64::new(0.0, 0.0); total];
    for l in 0..n_lines {
        let s = line_start(l);
        for p in 0..len {
            scratch[l * len + p] = buf[s + p * stride];
        }
    }
    par::for_each_chunk_mut(&mut scratch, chunk, |_, lines| fft.process(lines));
    for l in 0..n_lines {
        let s = line_start(l);
        for p in 0..len {
            buf[s + p * stride] = scratch[l * len + p];
        }
    }
}

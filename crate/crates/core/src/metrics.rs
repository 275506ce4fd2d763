//! Image quality indices: PSNR, SSIM, histogram cross-entropy, figure
//! definition (mean RMS gradient), standard deviation and information
//! entropy.
//!
//! Cross-entropy is the KL divergence between 256-bin intensity histograms
//! (reference against test, natural log). Figure definition is the mean over
//! pixels with both forward neighbours of `sqrt((Δx² + Δy²)/2)`.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mask::LabelMask;
use crate::par;
use crate::stack::ImageStack;

pub const HISTOGRAM_BINS: usize = 256;
pub const CE_SMOOTHING: f64 = 1e-12;

fn check_same(a: &ImageStack, b: &ImageStack) -> Result<()> {
    a.same_shape(b)
}

/// Per-frame boolean scope (true = repaired) from label masks.
fn scope_flags(masks: &[LabelMask], frames: usize, rows: usize, cols: usize) -> Result<Vec<Vec<bool>>> {
    crate::compositor::check_masks(masks, frames, rows, cols)?;
    Ok(masks
        .iter()
        .map(|m| m.labels().iter().map(|l| !l.is_clear()).collect())
        .collect())
}

/// `10·log10(peak² / mse)`, `+∞` when `mse == 0`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR over all bands and frames, or only over the non-Clear pixels of
/// `scope` when given.
pub fn psnr(reference: &ImageStack, test: &ImageStack, peak: f64, scope: Option<&[LabelMask]>) -> Result<f64> {
    check_same(reference, test)?;
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    let dims = reference.dims();
    let flags = scope.map(|m| scope_flags(m, dims.t, dims.m, dims.n)).transpose()?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for b in 0..reference.num_bands() {
        for k in 0..dims.t {
            let (x, y) = (reference.plane(b, k), test.plane(b, k));
            for q in 0..dims.plane_len() {
                if flags.as_ref().is_none_or(|f| f[k][q]) {
                    let d = x[q] - y[q];
                    sum += d * d;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("PSNR scope is empty"));
    }
    Ok(psnr_from_mse(sum / count as f64, peak))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub peak: f64,
    pub k1: f64,
    pub k2: f64,
}

impl SsimConfig {
    pub fn with_peak(peak: f64) -> Self {
        SsimConfig {
            peak,
            ..Default::default()
        }
    }

    /// Normalised 1-D Gaussian taps; their outer product is the 2-D window.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.peak).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.peak).powi(2)
    }
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            peak: 1.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Valid-mode separable filtering of a row-major plane.
fn filter_valid(plane: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let (orows, ocols) = (rows - w + 1, cols - w + 1);
    let mut horiz = vec![0.0; rows * ocols];
    for r in 0..rows {
        for c in 0..ocols {
            let src = &plane[r * cols + c..r * cols + c + w];
            horiz[r * ocols + c] = src.iter().zip(taps).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; orows * ocols];
    for r in 0..orows {
        for c in 0..ocols {
            out[r * ocols + c] = (0..w).map(|u| horiz[(r + u) * ocols + c] * taps[u]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained Gaussian windows of one plane.
pub fn ssim_plane(x: &[f64], y: &[f64], rows: usize, cols: usize, cfg: &SsimConfig) -> Result<f64> {
    if x.len() != rows * cols || y.len() != rows * cols {
        return Err(Error::dims(rows * cols, (x.len(), y.len())));
    }
    if rows < cfg.window || cols < cfg.window {
        return Err(Error::invalid(format!(
            "{rows}x{cols} plane is smaller than the {} px SSIM window",
            cfg.window
        )));
    }
    let taps = cfg.taps();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(y).map(|(&a, &b)| f(a, b)).collect() };
    let mx = filter_valid(x, rows, cols, &taps);
    let my = filter_valid(y, rows, cols, &taps);
    let mxx = filter_valid(&prod(|a, _| a * a), rows, cols, &taps);
    let myy = filter_valid(&prod(|_, b| b * b), rows, cols, &taps);
    let mxy = filter_valid(&prod(|a, b| a * b), rows, cols, &taps);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Mean of the per-plane SSIM over every band and frame.
pub fn ssim(reference: &ImageStack, test: &ImageStack, cfg: &SsimConfig) -> Result<f64> {
    check_same(reference, test)?;
    let dims = reference.dims();
    let planes: Vec<(usize, usize)> = (0..reference.num_bands())
        .flat_map(|b| (0..dims.t).map(move |k| (b, k)))
        .collect();
    let scores = par::map(&planes, |&(b, k)| {
        ssim_plane(reference.plane(b, k), test.plane(b, k), dims.m, dims.n, cfg)
    });
    let mut sum = 0.0;
    for s in scores {
        sum += s?;
    }
    Ok(sum / planes.len() as f64)
}

/// Counts of values in `HISTOGRAM_BINS` equal bins over `[0, peak]`;
/// values outside the range land in the end bins.
pub fn histogram<'a>(values: impl IntoIterator<Item = &'a f64>, peak: f64) -> Vec<u64> {
    let mut h = vec![0u64; HISTOGRAM_BINS];
    for &v in values {
        let bin = (v / peak * HISTOGRAM_BINS as f64).floor();
        let bin = if bin.is_nan() { 0.0 } else { bin.clamp(0.0, (HISTOGRAM_BINS - 1) as f64) };
        h[bin as usize] += 1;
    }
    h
}

fn normalise(h: &[u64]) -> Vec<f64> {
    let total: u64 = h.iter().sum();
    h.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

/// `Σ p·ln(p / (q + ε))` over bins with `p > 0`, clamped at zero.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> f64 {
    if p == q {
        return 0.0;
    }
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / (qi + eps)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// KL divergence of the test histogram from the reference histogram, pooled
/// over all bands and frames.
pub fn cross_entropy(reference: &ImageStack, test: &ImageStack, peak: f64) -> Result<f64> {
    check_same(reference, test)?;
    let p = normalise(&histogram(reference.bands().iter().flat_map(|b| b.as_slice()), peak));
    let q = normalise(&histogram(test.bands().iter().flat_map(|b| b.as_slice()), peak));
    Ok(kl_divergence(&p, &q, CE_SMOOTHING))
}

/// (sum, count) of the RMS forward gradient over pixels with a right and a
/// lower neighbour, optionally restricted to `scope`.
fn gradient_sum(plane: &[f64], rows: usize, cols: usize, scope: Option<&[bool]>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols.saturating_sub(1) {
            let q = r * cols + c;
            if scope.is_some_and(|s| !s[q]) {
                continue;
            }
            let dx = plane[q + 1] - plane[q];
            let dy = plane[q + cols] - plane[q];
            sum += ((dx * dx + dy * dy) / 2.0).sqrt();
            count += 1;
        }
    }
    (sum, count)
}

pub fn figure_definition(plane: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if rows < 2 || cols < 2 || plane.len() != rows * cols {
        return Err(Error::invalid(format!("figure definition needs a >=2x2 plane, got {rows}x{cols}")));
    }
    let (s, n) = gradient_sum(plane, rows, cols, None);
    Ok(s / n as f64)
}

/// Figure definition pooled over all planes, optionally within `scope`.
pub fn figure_definition_stack(stack: &ImageStack, scope: Option<&[LabelMask]>) -> Result<f64> {
    let dims = stack.dims();
    if dims.m < 2 || dims.n < 2 {
        return Err(Error::invalid("figure definition needs at least 2x2 planes"));
    }
    let flags = scope.map(|m| scope_flags(m, dims.t, dims.m, dims.n)).transpose()?;
    let (mut sum, mut count) = (0.0, 0);
    for b in 0..stack.num_bands() {
        for k in 0..dims.t {
            let (s, n) = gradient_sum(stack.plane(b, k), dims.m, dims.n, flags.as_ref().map(|f| f[k].as_slice()));
            sum += s;
            count += n;
        }
    }
    if count == 0 {
        return Err(Error::invalid("figure definition scope is empty"));
    }
    Ok(sum / count as f64)
}

/// Population standard deviation and Shannon entropy (bits, 256 bins over
/// `[0, peak]`) of a sample.
pub fn sd_ie(values: &[f64], peak: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("SD/IE scope is empty"));
    }
    let n = values.len() as f64;
    let constant = values.iter().all(|&v| v == values[0]);
    let mean = values.iter().sum::<f64>() / n;
    let sd = if constant {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    let ie = normalise(&histogram(values, peak))
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>();
    Ok((sd, ie.max(0.0)))
}

/// Pixels of `plane` where `scope` is set.
pub fn scoped_values(plane: &[f64], scope: &[bool]) -> Vec<f64> {
    plane.iter().zip(scope).filter(|(_, &s)| s).map(|(&v, _)| v).collect()
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WholeImageMetrics {
    /// `"inf"` in JSON for identical inputs.
    #[serde(serialize_with = "serialize_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub ce: f64,
    pub fd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepairedAreaMetrics {
    #[serde(serialize_with = "serialize_db")]
    pub psnr_db: f64,
    pub sd: f64,
    pub fd: f64,
    pub ie_bits: f64,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub peak: f64,
    pub whole_image: WholeImageMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repaired_area: Option<RepairedAreaMetrics>,
}

/// Computes the full report. `peak` is the largest value on the scale the
/// stacks are expressed in (1 for normalised stacks).
pub fn evaluate(reference: &ImageStack, test: &ImageStack, scope: Option<&[LabelMask]>, peak: f64) -> Result<MetricReport> {
    check_same(reference, test)?;
    let whole = WholeImageMetrics {
        psnr_db: psnr(reference, test, peak, None)?,
        ssim: ssim(reference, test, &SsimConfig::with_peak(peak))?,
        ce: cross_entropy(reference, test, peak)?,
        fd: figure_definition_stack(test, None)?,
    };
    let repaired = match scope {
        None => None,
        Some(masks) => {
            let dims = test.dims();
            let flags = scope_flags(masks, dims.t, dims.m, dims.n)?;
            let mut values = Vec::new();
            for b in 0..test.num_bands() {
                for (k, f) in flags.iter().enumerate() {
                    values.extend(scoped_values(test.plane(b, k), f));
                }
            }
            let (sd, ie_bits) = sd_ie(&values, peak)?;
            Some(RepairedAreaMetrics {
                psnr_db: psnr(reference, test, peak, Some(masks))?,
                sd,
                fd: figure_definition_stack(test, Some(masks))?,
                ie_bits,
                pixels: values.len() / test.num_bands(),
            })
        }
    };
    Ok(MetricReport {
        peak,
        whole_image: whole,
        repaired_area: repaired,
    })
}

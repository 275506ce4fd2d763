// Independent reference implementations used as test oracles. Nothing in
// here calls into the library's numerical kernels.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tssto_core::poisson::Region;
use tssto_core::{BandTensor, Dims};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(dims: Dims, seed: u64, amp: f64) -> BandTensor {
    let mut r = rng(seed);
    BandTensor::from_fn(dims, |_, _, _| r.random_range(-amp..amp))
}

/// Minimises a convex 1-D function by coarse-to-fine grid search around
/// `start`, ending with step `fine`.
pub fn grid_argmin(f: impl Fn(f64) -> f64, start: f64, radius: f64, fine: f64) -> f64 {
    let mut best = start;
    let mut step = radius / 50.0;
    loop {
        let lo = best - 50.0 * step;
        let mut best_val = f64::INFINITY;
        let mut arg = best;
        for i in 0..=100 {
            let y = lo + i as f64 * step;
            let v = f(y);
            if v < best_val {
                best_val = v;
                arg = y;
            }
        }
        best = arg;
        if step <= fine {
            return best;
        }
        step = (step / 10.0).max(fine);
    }
}

/// Same as `grid_argmin` but restricted to `y >= 0`.
pub fn grid_argmin_nonneg(f: impl Fn(f64) -> f64, start: f64, radius: f64, fine: f64) -> f64 {
    grid_argmin(|y| if y < 0.0 { f64::INFINITY } else { f(y) }, start.max(0.0), radius, fine).max(0.0)
}

/// Dense matrix of the circular forward difference along one axis, acting
/// on vectors laid out as `k·m·n + i·n + j`. `axis`: 0 = columns, 1 = rows,
/// 2 = time.
pub fn difference_matrix(dims: Dims, axis: usize) -> DMatrix<f64> {
    let (m, n, t) = (dims.m, dims.n, dims.t);
    let len = m * n * t;
    let idx = |i: usize, j: usize, k: usize| k * m * n + i * n + j;
    let mut g = DMatrix::zeros(len, len);
    for k in 0..t {
        for i in 0..m {
            for j in 0..n {
                let p = idx(i, j, k);
                let q = match axis {
                    0 => idx(i, (j + 1) % n, k),
                    1 => idx((i + 1) % m, j, k),
                    _ => idx(i, j, (k + 1) % t),
                };
                g[(p, q)] += 1.0;
                g[(p, p)] -= 1.0;
            }
        }
    }
    g
}

/// Circular forward difference by explicit index arithmetic.
pub fn direct_grad(x: &BandTensor, axis: usize) -> BandTensor {
    let d = x.dims();
    BandTensor::from_fn(d, |i, j, k| {
        let next = match axis {
            0 => x.get(i, (j + 1) % d.n, k),
            1 => x.get((i + 1) % d.m, j, k),
            _ => x.get(i, j, (k + 1) % d.t),
        };
        next - x.get(i, j, k)
    })
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
    num / den
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Gaussian-windowed SSIM evaluated window by window with an explicit 2-D
/// kernel.
pub fn naive_ssim(x: &[f64], y: &[f64], rows: usize, cols: usize, win: usize, sigma: f64, peak: f64) -> f64 {
    let c = (win as f64 - 1.0) / 2.0;
    let mut kernel = vec![0.0; win * win];
    for a in 0..win {
        for b in 0..win {
            let d2 = (a as f64 - c).powi(2) + (b as f64 - c).powi(2);
            kernel[a * win + b] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut acc = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=rows - win {
        for c0 in 0..=cols - win {
            let at = |img: &[f64], a: usize, b: usize| img[(r0 + a) * cols + c0 + b];
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..win {
                for b in 0..win {
                    let w = kernel[a * win + b];
                    mx += w * at(x, a, b);
                    my += w * at(y, a, b);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..win {
                for b in 0..win {
                    let w = kernel[a * win + b];
                    let (dx, dy) = (at(x, a, b) - mx, at(y, a, b) - my);
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cxy += w * dx * dy;
                }
            }
            acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            windows += 1;
        }
    }
    acc / windows as f64
}

/// Random connected region grown from a seed pixel, at most `size` pixels.
pub fn random_region(rows: usize, cols: usize, seed: u64, size: usize, touch_edge: bool) -> Region {
    let mut r = rng(seed);
    let start = if touch_edge {
        (0, r.random_range(0..cols))
    } else {
        (r.random_range(3..rows - 3), r.random_range(3..cols - 3))
    };
    let mut inside = vec![start.0 * cols + start.1];
    while inside.len() < size {
        let q = inside[r.random_range(0..inside.len())];
        let (row, col) = (q / cols, q % cols);
        let cand = match r.random_range(0..4) {
            0 if row > 0 => q - cols,
            1 if row + 1 < rows => q + cols,
            2 if col > 0 => q - 1,
            3 if col + 1 < cols => q + 1,
            _ => continue,
        };
        if !inside.contains(&cand) {
            inside.push(cand);
        }
    }
    Region::from_flat(0, rows, cols, inside)
}

/// Harmonic interpolation by a dense solve of the discrete Laplace equation
/// with in-image 4-neighbourhoods.
pub fn dense_harmonic(plane: &[f64], rows: usize, cols: usize, region: &Region) -> Vec<f64> {
    let idx: Vec<usize> = region.pixels.iter().map(|&(r, c)| r * cols + c).collect();
    let local = |q: usize| idx.iter().position(|&p| p == q);
    let n = idx.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for (i, &p) in idx.iter().enumerate() {
        let (r, c) = (p / cols, p % cols);
        let mut nbrs = Vec::new();
        if r > 0 {
            nbrs.push(p - cols);
        }
        if r + 1 < rows {
            nbrs.push(p + cols);
        }
        if c > 0 {
            nbrs.push(p - 1);
        }
        if c + 1 < cols {
            nbrs.push(p + 1);
        }
        a[(i, i)] = nbrs.len() as f64;
        for q in nbrs {
            match local(q) {
                Some(j) => a[(i, j)] -= 1.0,
                None => b[i] += plane[q],
            }
        }
    }
    a.lu().solve(&b).unwrap().as_slice().to_vec()
}


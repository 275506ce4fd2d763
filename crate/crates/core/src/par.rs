//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch onto rayon; without
//! it they run the same closures sequentially. All helpers preserve output
//! order, and none of them reduces floating point values across threads, so
//! results are bit-identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Elements below this count are processed sequentially even when the
/// `parallel` feature is on.
pub const MIN_PARALLEL_LEN: usize = 1 << 14;

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Calls `f(chunk_index, chunk)` for each `chunk`-sized piece of `data`.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if data.len() < MIN_PARALLEL_LEN {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Elementwise `out[i] = f(a[i], b[i])`.
#[cfg(feature = "parallel")]
pub fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    if a.len() < MIN_PARALLEL_LEN {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    } else {
        a.par_iter().zip(b.par_iter()).map(|(&x, &y)| f(x, y)).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Runs `f` on a dedicated pool with `threads` workers (sequentially when
/// the `parallel` feature is off).
#[cfg(feature = "parallel")]
pub fn install<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn install<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Sizes the global worker pool. Only the first call has an effect.
pub fn configure_global_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

//! Data-parallel helpers. With the `parallel` feature the loops run on the
//! rayon pool, otherwise sequentially. Every helper returns results in index
//! order or aggregates with integer addition, so output never depends on the
//! scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f).collect()`, possibly in parallel.
pub(crate) fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Applies `f` to fixed-size index chunks and returns the per-chunk results
/// in chunk order.
pub(crate) fn map_chunks<R, F>(n: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    map_indices(n_chunks, |c| f(c * chunk..((c + 1) * chunk).min(n)))
}

/// Sums integer histograms of width `width` produced by `f(i, &mut hist)`
/// over `0..n`.
pub(crate) fn sum_histograms<F>(n: usize, width: usize, f: F) -> Vec<u64>
where
    F: Fn(usize, &mut [u64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n)
            .into_par_iter()
            .fold(
                || vec![0u64; width],
                |mut acc, i| {
                    f(i, &mut acc);
                    acc
                },
            )
            .reduce(
                || vec![0u64; width],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            )
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut acc = vec![0u64; width];
        for i in 0..n {
            f(i, &mut acc);
        }
        acc
    }
}

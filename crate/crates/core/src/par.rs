//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run on the calling thread. Every helper preserves input order in its
//! output, so reductions performed afterwards are independent of the number
//! of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();

    #[cfg(not(feature = "parallel"))]
    return 1;
}

/// `(0..len).map(f).collect()`, evaluated in parallel when enabled.
pub fn map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return (0..len).into_par_iter().map(f).collect();

    #[cfg(not(feature = "parallel"))]
    return (0..len).map(f).collect();
}

/// `items.iter().map(f).collect()`, evaluated in parallel when enabled.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().map(f).collect();

    #[cfg(not(feature = "parallel"))]
    return items.iter().map(f).collect();
}

/// Splits `total` work items into fixed-size chunks and maps each chunk
/// `(chunk_index, start, len)`. Chunk boundaries depend only on `chunk`,
/// never on the thread count.
pub fn map_chunks<R, F>(total: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, usize, usize) -> R + Send + Sync,
{
    let chunk = chunk.max(1);
    let count = total.div_ceil(chunk);
    map_range(count, |i| {
        let start = i * chunk;
        let len = chunk.min(total - start);
        f(i, start, len)
    })
}

//! Data-parallel helpers. With the `rayon` feature these fan out over the
//! global thread pool; without it they run the same closures sequentially.
//! Every helper preserves input order in its output, so results never depend
//! on scheduling.

#[cfg(feature = "rayon")]
use rayon::prelude::*;

/// Order-preserving map over a slice.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "rayon")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "rayon"))]
    {
        items.iter().map(f).collect()
    }
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "rayon")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "rayon"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible order-preserving map; the first error by index wins.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

/// Runs `f(index, chunk)` over consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "rayon")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "rayon"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "rayon")
}

/// Runs `f(index, chunk, aux)` over `chunk`-sized pieces of `data`, each
/// paired with the matching element of `aux`.
pub fn for_each_chunk_zip<T, A, F>(data: &mut [T], chunk: usize, aux: &mut [A], f: F)
where
    T: Send,
    A: Send,
    F: Fn(usize, &mut [T], &mut A) + Sync + Send,
{
    #[cfg(feature = "rayon")]
    {
        data.par_chunks_mut(chunk)
            .zip(aux.par_iter_mut())
            .enumerate()
            .for_each(|(i, (c, a))| f(i, c, a));
    }
    #[cfg(not(feature = "rayon"))]
    {
        data.chunks_mut(chunk)
            .zip(aux.iter_mut())
            .enumerate()
            .for_each(|(i, (c, a))| f(i, c, a));
    }
}

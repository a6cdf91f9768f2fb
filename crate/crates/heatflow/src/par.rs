// SPDX-License-Identifier: Apache-2.0

//! Data-parallel helpers. With the `rayon` feature the work is spread over the
//! rayon pool; without it everything runs on the calling thread. Results are
//! always returned in input order so downstream reductions are deterministic.

/// Map `f` over `items`, collecting in order. Parallel when the `rayon` feature is on.
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "rayon")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "rayon"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential counterpart of [`map_collect`], always available.
pub fn map_collect_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Same as [`map_collect`] but over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "rayon")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "rayon"))]
    {
        (0..n).map(f).collect()
    }
}

/// Install a global pool with `threads` workers. No-op without the `rayon` feature.
pub fn configure_threads(threads: usize) {
    #[cfg(feature = "rayon")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    #[cfg(not(feature = "rayon"))]
    {
        let _ = threads;
    }
}

/// Run `f` inside a private pool of `threads` workers. Without the `rayon`
/// feature `f` runs on the calling thread.
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "rayon")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "rayon"))]
    {
        let _ = threads;
        f()
    }
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "rayon")
}

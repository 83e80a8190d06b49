//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel map here collects results in index order, so callers that
//! reduce the returned vector sequentially get bitwise-identical output no
//! matter how many worker threads ran the map.

/// How independent work items (trials, grid points, samples) are scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Execution {
    /// Rayon's global pool. Falls back to sequential without the `parallel` feature.
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..len`, returning results in index order.
pub(crate) fn map_indexed<T, F>(len: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Like [`map_indexed`] but hands each worker a scratch value built by `init`.
///
/// `f` must not let scratch contents leak into its result; scratch is reused
/// across an arbitrary, scheduling-dependent subset of indices.
pub(crate) fn map_indexed_with<S, T, I, F>(len: usize, exec: Execution, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        // Few, large chunks: each split rebuilds the scratch value.
        let min_len = (len / (rayon::current_num_threads() * 4)).max(1);
        return (0..len)
            .into_par_iter()
            .with_min_len(min_len)
            .map_init(&init, |s, i| f(s, i))
            .collect();
    }
    let _ = exec;
    let mut scratch = init();
    (0..len).map(|i| f(&mut scratch, i)).collect()
}

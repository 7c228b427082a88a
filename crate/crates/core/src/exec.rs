//! Order-preserving map over independent jobs: a rayon pool with the
//! `parallel` feature, a plain loop without it.

/// Maps `f` over `items`, keeping the input order in the output.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seq_map(items, f)
    }
}

/// The sequential reference for [`par_map`].
pub fn seq_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Whether [`par_map`] runs on a thread pool in this build.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

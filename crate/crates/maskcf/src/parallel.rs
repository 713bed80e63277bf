//! Execution-mode switch between rayon-backed and sequential inner loops.
//!
//! Every data-parallel loop in the crate writes disjoint output slots, so
//! both modes produce bit-identical results; the switch exists so callers
//! (and the criterion benches) can compare the two paths directly.

/// How data-parallel loops are executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Rayon work-stealing pool. Falls back to sequential when the crate
    /// is built without the `parallel` feature.
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Applies `body` to each chunk of `data` of length `chunk`, in parallel
/// when requested. Chunks are disjoint, so scheduling cannot affect the
/// result.
pub(crate) fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, mode: ExecMode, body: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(chunk > 0);
    match mode {
        ExecMode::Sequential => {
            for (i, c) in data.chunks_mut(chunk).enumerate() {
                body(i, c);
            }
        }
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                data.par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(i, c)| body(i, c));
            }
            #[cfg(not(feature = "parallel"))]
            {
                for (i, c) in data.chunks_mut(chunk).enumerate() {
                    body(i, c);
                }
            }
        }
    }
}

/// Maps `f` over `items`, preserving order.
pub(crate) fn map_collect<T, U, F>(items: Vec<T>, mode: ExecMode, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    match mode {
        ExecMode::Sequential => items.into_iter().map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                items.into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.into_iter().map(f).collect()
            }
        }
    }
}

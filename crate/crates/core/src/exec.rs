//! Execution mode for data-parallel loops.
//!
//! Every parallel helper collects results in index order, so the output of a
//! computation is bit-identical between [`ExecMode::Sequential`] and
//! [`ExecMode::Parallel`].

use serde::{Deserialize, Serialize};

/// Shorter loops run sequentially even in parallel mode.
pub const PAR_MIN_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when this mode actually dispatches to rayon.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode.is_parallel() && n >= PAR_MIN_LEN {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Maps `f` over mutable items of a slice.
pub fn for_each_mut<T, F>(mode: ExecMode, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode.is_parallel() {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
            return;
        }
    }
    let _ = mode;
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

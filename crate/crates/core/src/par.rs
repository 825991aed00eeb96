//! Index-parallel map with a sequential fallback.
//!
//! Results always come back in index order, so any reduction done by the
//! caller over the returned vector is independent of how many worker threads
//! ran. Without the `parallel` feature every [`Exec`] runs sequentially.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

pub fn map_indexed<T, F>(exec: Exec, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}

/// Number of worker threads `Exec::Parallel` would use right now.
pub fn current_workers(exec: Exec) -> usize {
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => rayon::current_num_threads(),
        _ => 1,
    }
}

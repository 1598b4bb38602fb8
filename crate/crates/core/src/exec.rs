//! Execution policy for the batch loops (record parsing, per-owner profiling,
//! per-target prediction).
//!
//! With the `parallel` feature the `Parallel` policy runs on rayon; without
//! it every policy degrades to a plain sequential loop. Output order always
//! matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Data-parallel over the global pool, or over a dedicated pool of
    /// `threads` workers when given (this also bounds in-flight work).
    #[default]
    Parallel,
    Bounded(usize),
}

impl Exec {
    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Exec::Sequential | Exec::Bounded(0 | 1))
    }

    /// Maximum number of closures that may run at once under this policy.
    pub fn max_concurrency(&self) -> usize {
        match self {
            _ if !self.is_parallel() => 1,
            Exec::Bounded(n) => *n,
            _ => {
                #[cfg(feature = "parallel")]
                {
                    rayon::current_num_threads()
                }
                #[cfg(not(feature = "parallel"))]
                {
                    1
                }
            }
        }
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if !self.is_parallel() {
            return items.iter().map(f).collect();
        }
        #[cfg(feature = "parallel")]
        {
            match self {
                Exec::Bounded(n) => match rayon::ThreadPoolBuilder::new().num_threads(*n).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                    Err(e) => {
                        log::warn!("falling back to sequential execution: {e}");
                        items.iter().map(f).collect()
                    }
                },
                _ => items.par_iter().map(f).collect(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            items.iter().map(f).collect()
        }
    }
}

//! Execution environment abstraction.
//!
//! The core crate never spawns threads or reads clocks. Anything that can be
//! parallelized is expressed as an index-ordered map through [`Runtime`];
//! the std companion crate provides a thread-pool implementation. Because
//! outputs are collected in index order and reductions run in that order,
//! results are identical for every thread count.

use alloc::vec::Vec;

pub trait Runtime: Sync {
    /// Evaluates `f(0), f(1), .., f(n-1)`, possibly in parallel, and returns
    /// the results in index order.
    fn par_map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;

    /// Milliseconds of wall clock, for log records. The no_std default has no
    /// clock and reports 0.
    fn now_millis(&self) -> u64 {
        0
    }
}

/// Serial runtime; the only one available without std.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingleThread;

impl Runtime for SingleThread {
    fn par_map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_order() {
        let rt = SingleThread;
        let got = rt.par_map(5, &|i| i * i);
        assert_eq!(got, vec![0, 1, 4, 9, 16]);
    }
}

//! Thread-pool runtime for the core crate's `par_map`.
//!
//! Work splits into contiguous index chunks, one scoped thread per chunk,
//! and results land in pre-assigned slots, so output order (and therefore
//! every downstream reduction) is identical for any thread count.

use hitmat_core::Runtime;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Copy)]
pub struct Threads {
    n: usize,
}

impl Threads {
    pub fn new(n: usize) -> Self {
        Threads { n: n.max(1) }
    }

    /// One thread per available core.
    pub fn auto() -> Self {
        let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        Threads::new(n)
    }

    pub fn count(&self) -> usize {
        self.n
    }
}

impl Runtime for Threads {
    fn par_map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        if self.n <= 1 || n <= 1 {
            return (0..n).map(f).collect();
        }
        let per = n.div_ceil(self.n);
        let mut slots: Vec<Option<T>> = Vec::with_capacity(n);
        slots.resize_with(n, || None);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (ci, chunk) in slots.chunks_mut(per).enumerate() {
                let start = ci * per;
                handles.push(scope.spawn(move || {
                    for (j, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(f(start + j));
                    }
                }));
            }
            for h in handles {
                h.join().expect("worker thread panicked");
            }
        });
        slots.into_iter().map(|s| s.expect("slot filled")).collect()
    }

    fn now_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

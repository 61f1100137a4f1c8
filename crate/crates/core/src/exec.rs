//! Pluggable data-parallel execution.
//!
//! Every parallel loop in the crate writes disjoint chunks of an output buffer,
//! so results are bitwise independent of the executor and its worker count.

/// Runs `task(offset, chunk)` over consecutive chunks of an output buffer.
pub trait Executor: Sync {
    /// `offset` is the index of `chunk[0]` within `out`.
    fn fill(&self, out: &mut [f64], chunk_len: usize, task: &(dyn Fn(usize, &mut [f64]) + Sync));
}

/// Single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn fill(&self, out: &mut [f64], chunk_len: usize, task: &(dyn Fn(usize, &mut [f64]) + Sync)) {
        let chunk_len = chunk_len.max(1);
        for (k, chunk) in out.chunks_mut(chunk_len).enumerate() {
            task(k * chunk_len, chunk);
        }
    }
}

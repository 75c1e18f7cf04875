//! Test support: deterministic data, random graphs, and independent
//! reference implementations.
//!
//! Everything here recomputes expected results from first principles, one
//! element or point at a time, without touching the engine's run algebra,
//! scheduler or storage. Differential tests therefore compare two genuinely
//! independent answers. The module is public because the bench command and
//! the acceptance suite build on it.

mod frames;
mod graphgen;
mod harness;
mod oracle;
mod reference;

pub use frames::{FrameIter, FramePattern};
pub use graphgen::{random_graph, random_points, GeneratedGraph, GraphGenConfig};
pub use harness::{snapshot_table, stage_generated_job, verify_job_output, JobFixture};
pub use oracle::{is_closed, naive_closure, walk_decode_frames, NaiveClosure};
pub use reference::dense_reference;

use std::collections::VecDeque;

use crate::graph::{OpKind, Warmup};
use crate::kernels::{Batch, Kernel, KernelDef, Registry};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Order-sensitive 64-bit digest of a point index and its field payloads.
pub fn digest64(point: usize, fields: &[&[u8]]) -> u64 {
    let mut h = fnv(FNV_OFFSET, &(point as u64).to_le_bytes());
    h = fnv(h, &(fields.len() as u64).to_le_bytes());
    for f in fields {
        h = fnv(h, &(f.len() as u64).to_le_bytes());
        h = fnv(h, f);
    }
    h
}

// Map/stencil test kernel: 8-byte digest of the point and all fields. With
// the point mixed in, equal payloads at different points still yield
// distinct outputs, so misrouted elements are caught even on constant input.
struct Digest64;

impl Kernel for Digest64 {
    fn invoke(&mut self, batch: &Batch<'_>, out: &mut Vec<Vec<u8>>) -> Result<(), String> {
        for (i, &p) in batch.points.iter().enumerate() {
            let fields: Vec<&[u8]> = batch.fields.iter().map(|f| f[i]).collect();
            out.push(digest64(p, &fields).to_le_bytes().to_vec());
        }
        Ok(())
    }
}

// Bounded-state test kernel: digest of the retained window, evicted by point
// distance so skipped points cannot smuggle state past the warmup bound.
struct WindowDigest {
    w: usize,
    window: VecDeque<(usize, u64)>,
}

impl Kernel for WindowDigest {
    fn reset(&mut self) {
        self.window.clear();
    }

    fn invoke(&mut self, batch: &Batch<'_>, out: &mut Vec<Vec<u8>>) -> Result<(), String> {
        for (i, &p) in batch.points.iter().enumerate() {
            while self.window.front().is_some_and(|&(q, _)| q + self.w < p) {
                self.window.pop_front();
            }
            let fields: Vec<&[u8]> = batch.fields.iter().map(|f| f[i]).collect();
            self.window.push_back((p, digest64(p, &fields)));
            let mut h = FNV_OFFSET;
            for &(_, d) in &self.window {
                h = fnv(h, &d.to_le_bytes());
            }
            out.push(h.to_le_bytes().to_vec());
        }
        Ok(())
    }
}

// Infinite-warmup test kernel: running digest of everything seen since the
// last reset.
struct PrefixDigest {
    h: u64,
}

impl Kernel for PrefixDigest {
    fn reset(&mut self) {
        self.h = FNV_OFFSET;
    }

    fn invoke(&mut self, batch: &Batch<'_>, out: &mut Vec<Vec<u8>>) -> Result<(), String> {
        for (i, &p) in batch.points.iter().enumerate() {
            let fields: Vec<&[u8]> = batch.fields.iter().map(|f| f[i]).collect();
            self.h = fnv(self.h, &digest64(p, &fields).to_le_bytes());
            out.push(self.h.to_le_bytes().to_vec());
        }
        Ok(())
    }
}

/// The built-in registry plus the digest kernels generated graphs use:
/// `digest64`, `digest64_fill` (fill-accepting), `window_digest` and
/// `prefix_digest`.
pub fn test_registry() -> Registry {
    let mut r = Registry::builtin();
    r.register("digest64", KernelDef::new(|_| Ok(Box::new(Digest64))));
    r.register(
        "digest64_fill",
        KernelDef::new(|_| Ok(Box::new(Digest64))).with_fill(),
    );
    r.register(
        "window_digest",
        KernelDef::new(|op| match op.kind {
            OpKind::BoundedState(Warmup::Bounded(w)) => Ok(Box::new(WindowDigest {
                w,
                window: VecDeque::new(),
            }) as Box<dyn Kernel>),
            _ => Err("window_digest requires bounded_state with a bounded warmup".into()),
        }),
    );
    r.register(
        "prefix_digest",
        KernelDef::new(|op| match op.kind {
            OpKind::BoundedState(Warmup::Infinite) => {
                Ok(Box::new(PrefixDigest { h: FNV_OFFSET }) as Box<dyn Kernel>)
            }
            _ => Err("prefix_digest requires bounded_state with infinite warmup".into()),
        }),
    );
    r
}

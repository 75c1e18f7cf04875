//! A dataflow engine for sparse analysis of compressed frame sequences.
//!
//! Computations are expressed as graphs of sequence operations (map, sample,
//! space, stencil, bounded-state, slice) over stored columns. Because no op
//! changes sequence length in data-dependent ways, the engine derives the
//! exact per-element dependency closure of any requested output rows, decodes
//! only the frames that closure touches, and executes work packets on a pool
//! of workers with pipelined IO, retries and elastic scale-out.

pub mod error;
pub mod exec;
pub mod graph;
pub mod kernels;
pub mod liveness;
pub mod store;
pub mod testkit;

pub use error::{Error, Result};

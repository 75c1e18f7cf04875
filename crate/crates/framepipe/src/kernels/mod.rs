//! Kernel trait and registry.
//!
//! A kernel is the user-supplied compute attached to a map, stencil or
//! bounded-state op. Kernels receive batches in field-major layout: one
//! payload array per field, where fields are ordered input-slot-major, then
//! stencil offset within each slot. A plain one-input map has a single field.
//!
//! Contract for correct sparse execution:
//! * deterministic: identical inputs produce identical bytes,
//! * batch-invariant: one batch of `n` points equals `n` single-point calls,
//! * bounded-state kernels may retain state but output `i` must depend only
//!   on the inputs at `i-W..=i` within the current slice. Batch points are
//!   absolute sequence indices so retained state can be evicted by point
//!   distance; [`Kernel::reset`] clears the state and is called at packet and
//!   slice starts.

mod builtin;

pub use builtin::NumFormat;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::OpDecl;

/// One dense batch of invocation points with field-major payloads.
pub struct Batch<'a> {
    /// Sequence indices being processed, ascending.
    pub points: &'a [usize],
    /// `fields[f][i]` is field `f` of batch item `i`.
    pub fields: &'a [Vec<&'a [u8]>],
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// User compute invoked by the engine. See the module docs for the contract.
pub trait Kernel: Send {
    /// Drops retained state. Called at packet and slice starts for
    /// bounded-state ops; a no-op for stateless kernels.
    fn reset(&mut self) {}

    /// Processes a batch, appending exactly one output payload per point.
    fn invoke(
        &mut self,
        batch: &Batch<'_>,
        out: &mut Vec<Vec<u8>>,
    ) -> std::result::Result<(), String>;
}

type Factory = Arc<dyn Fn(&OpDecl) -> std::result::Result<Box<dyn Kernel>, String> + Send + Sync>;

/// Registry entry: how to build a kernel and how it treats fill elements.
#[derive(Clone)]
pub struct KernelDef {
    factory: Factory,
    /// When false (the default), the engine never invokes the kernel on a
    /// point whose inputs contain fill; it emits fill downstream instead.
    accepts_fill: bool,
}

impl KernelDef {
    pub fn new(
        factory: impl Fn(&OpDecl) -> std::result::Result<Box<dyn Kernel>, String>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        KernelDef {
            factory: Arc::new(factory),
            accepts_fill: false,
        }
    }

    /// Opt in to receiving fill elements (empty payloads) as regular input.
    pub fn with_fill(mut self) -> Self {
        self.accepts_fill = true;
        self
    }
}

/// Maps kernel ids to definitions. Cheap to clone and share across workers.
#[derive(Clone, Default)]
pub struct Registry {
    defs: HashMap<String, KernelDef>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    /// The built-in kernel set: `byte_histogram`, `frame_delta_sum`,
    /// `sliding_mean`, `threshold_detector`, `decimate`.
    pub fn builtin() -> Self {
        let mut r = Registry::default();
        builtin::install(&mut r);
        r
    }

    pub fn register(&mut self, id: impl Into<String>, def: KernelDef) {
        self.defs.insert(id.into(), def);
    }

    pub fn contains(&self, id: &str) -> bool {
        self.defs.contains_key(id)
    }

    pub fn accepts_fill(&self, id: &str) -> bool {
        self.defs.get(id).is_some_and(|d| d.accepts_fill)
    }

    /// Builds a fresh kernel instance for an op.
    pub fn instantiate(&self, op: &OpDecl) -> Result<Box<dyn Kernel>> {
        let binding = op.kernel.as_ref().ok_or_else(|| Error::Kernel {
            kernel: "<none>".into(),
            reason: format!("op `{}` has no kernel binding", op.name),
        })?;
        let def = self.defs.get(&binding.id).ok_or_else(|| Error::Kernel {
            kernel: binding.id.clone(),
            reason: format!("unknown kernel id (op `{}`)", op.name),
        })?;
        (def.factory)(op).map_err(|reason| Error::Kernel {
            kernel: binding.id.clone(),
            reason,
        })
    }
}

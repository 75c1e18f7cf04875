//! Structural graph validation and compilation.
//!
//! [`validate_graph`] collects every violation instead of stopping at the
//! first, so a bad spec can be fixed in one pass. [`compile`] resolves names
//! to indices and fixes a deterministic topological order for execution.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use super::{GraphSpec, OpKind, Partitioner};

/// One structural problem found in a [`GraphSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("duplicate producer name `{0}`")]
    DuplicateName(String),
    #[error("op `{op}`: kind `{kind}` takes exactly 1 input, declared arity {arity}")]
    SystemOpArity {
        op: String,
        kind: &'static str,
        arity: usize,
    },
    #[error("op `{0}`: arity must be >= 1")]
    ZeroArity(String),
    #[error("op `{op}`: kind `{kind}` requires a kernel")]
    MissingKernel { op: String, kind: &'static str },
    #[error("op `{op}`: kind `{kind}` does not take a kernel")]
    UnexpectedKernel { op: String, kind: &'static str },
    #[error("op `{op}`: {reason}")]
    BadParams { op: String, reason: String },
    #[error("edge `{from}` -> `{to}`: unknown producer `{from}`")]
    UnknownProducer { from: String, to: String },
    #[error("edge `{from}` -> `{to}`: `{to}` is not an op")]
    UnknownConsumer { from: String, to: String },
    #[error("edge into `{op}` slot {slot}: op has arity {arity}")]
    SlotOutOfRange {
        op: String,
        slot: usize,
        arity: usize,
    },
    #[error("op `{op}` slot {slot} is bound more than once")]
    InputBoundTwice { op: String, slot: usize },
    #[error("op `{op}` slot {slot} is not bound")]
    UnboundInput { op: String, slot: usize },
    #[error("graph has no outputs")]
    NoOutputs,
    #[error("output column `{column}`: unknown producer `{from}`")]
    UnknownOutputProducer { from: String, column: String },
    #[error("output column `{0}` is declared more than once")]
    DuplicateOutputColumn(String),
    #[error("cycle through ops: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("op `{0}` is not reachable from any source")]
    UnreachableFromSources(String),
    #[error("op `{0}` does not feed any output")]
    CannotReachOutput(String),
    #[error("source `{0}` is never consumed")]
    UnusedSource(String),
}

/// All violations found in one validation pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// A sequence producer: an external source or an op's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProducerId {
    Source(usize),
    Op(usize),
}

/// A validated graph with names resolved and a fixed execution order.
#[derive(Debug, Clone)]
pub struct CompiledGraph {
    pub spec: GraphSpec,
    /// Per op: the producer bound to each input slot.
    pub op_inputs: Vec<Vec<ProducerId>>,
    /// Op indices in deterministic topological order.
    pub topo: Vec<usize>,
    /// Per producer (see [`CompiledGraph::producer_index`]): consuming
    /// `(op, slot)` pairs.
    pub consumers: Vec<Vec<(usize, usize)>>,
    /// Producer feeding each entry of `spec.outputs`.
    pub output_producers: Vec<ProducerId>,
}

impl CompiledGraph {
    /// Dense index for a producer: sources first, then ops.
    pub fn producer_index(&self, p: ProducerId) -> usize {
        match p {
            ProducerId::Source(i) => i,
            ProducerId::Op(i) => self.spec.sources.len() + i,
        }
    }

    pub fn producer_count(&self) -> usize {
        self.spec.sources.len() + self.spec.ops.len()
    }

    pub fn producer_name(&self, p: ProducerId) -> &str {
        match p {
            ProducerId::Source(i) => &self.spec.sources[i].name,
            ProducerId::Op(i) => &self.spec.ops[i].name,
        }
    }

    /// Producer for a dense index (inverse of [`Self::producer_index`]).
    pub fn producer_at(&self, idx: usize) -> ProducerId {
        if idx < self.spec.sources.len() {
            ProducerId::Source(idx)
        } else {
            ProducerId::Op(idx - self.spec.sources.len())
        }
    }

    /// Total CPU cores one instance of this graph occupies.
    pub fn cpu_cores(&self) -> usize {
        self.spec
            .ops
            .iter()
            .filter_map(|op| op.kernel.as_ref())
            .map(|k| k.cpu_cores)
            .sum()
    }
}

fn check_kind_params(op: &super::OpDecl, report: &mut Vec<Violation>) {
    let bad = |reason: String| Violation::BadParams {
        op: op.name.clone(),
        reason,
    };
    match &op.kind {
        OpKind::Sample(s) => {
            if let Err(e) = s.check_params() {
                report.push(bad(e));
            }
        }
        OpKind::Space { strategy, .. } => {
            if let Err(e) = strategy.check_params() {
                report.push(bad(e));
            }
        }
        OpKind::Stencil(offsets) => {
            if offsets.is_empty() {
                report.push(bad("stencil offsets must be non-empty".into()));
            } else if !offsets.windows(2).all(|w| w[0] < w[1]) {
                report.push(bad("stencil offsets must be strictly increasing".into()));
            }
        }
        OpKind::Slice(Partitioner::FixedLen(len)) => {
            if *len == 0 {
                report.push(bad("slice length must be >= 1".into()));
            }
        }
        OpKind::Slice(Partitioner::Boundaries(starts)) => {
            if starts.first() != Some(&0) {
                report.push(bad("slice boundaries must start at 0".into()));
            } else if !starts.windows(2).all(|w| w[0] < w[1]) {
                report.push(bad("slice boundaries must be strictly increasing".into()));
            }
        }
        OpKind::Map | OpKind::BoundedState(_) | OpKind::Unslice => {}
    }
    if let Some(k) = &op.kernel {
        if k.batch == 0 {
            report.push(bad("kernel batch must be >= 1".into()));
        }
        if k.cpu_cores == 0 {
            report.push(bad("kernel cpu_cores must be >= 1".into()));
        }
    }
}

/// Checks a graph and reports every structural violation found.
pub fn validate_graph(spec: &GraphSpec) -> ValidationReport {
    let mut v = Vec::new();

    // Producer namespace: sources and ops share it.
    let mut names: HashMap<&str, ProducerId> = HashMap::new();
    for (i, s) in spec.sources.iter().enumerate() {
        if names.insert(&s.name, ProducerId::Source(i)).is_some() {
            v.push(Violation::DuplicateName(s.name.clone()));
        }
    }
    for (i, op) in spec.ops.iter().enumerate() {
        if names.insert(&op.name, ProducerId::Op(i)).is_some() {
            v.push(Violation::DuplicateName(op.name.clone()));
        }
    }

    for op in &spec.ops {
        if op.arity == 0 {
            v.push(Violation::ZeroArity(op.name.clone()));
        }
        if !op.kind.needs_kernel() && op.arity != 1 {
            v.push(Violation::SystemOpArity {
                op: op.name.clone(),
                kind: op.kind.label(),
                arity: op.arity,
            });
        }
        match (op.kind.needs_kernel(), op.kernel.is_some()) {
            (true, false) => v.push(Violation::MissingKernel {
                op: op.name.clone(),
                kind: op.kind.label(),
            }),
            (false, true) => v.push(Violation::UnexpectedKernel {
                op: op.name.clone(),
                kind: op.kind.label(),
            }),
            _ => {}
        }
        check_kind_params(op, &mut v);
    }

    // Edge resolution and slot coverage.
    let mut bound: HashMap<(usize, usize), usize> = HashMap::new();
    let mut source_used = vec![false; spec.sources.len()];
    for e in &spec.edges {
        let from = names.get(e.from.as_str()).copied();
        let to = match names.get(e.to.as_str()) {
            Some(ProducerId::Op(i)) => Some(*i),
            _ => None,
        };
        if from.is_none() {
            v.push(Violation::UnknownProducer {
                from: e.from.clone(),
                to: e.to.clone(),
            });
        } else if let Some(ProducerId::Source(s)) = from {
            source_used[s] = true;
        }
        let Some(op_idx) = to else {
            v.push(Violation::UnknownConsumer {
                from: e.from.clone(),
                to: e.to.clone(),
            });
            continue;
        };
        let op = &spec.ops[op_idx];
        if e.slot >= op.arity {
            v.push(Violation::SlotOutOfRange {
                op: op.name.clone(),
                slot: e.slot,
                arity: op.arity,
            });
            continue;
        }
        if *bound
            .entry((op_idx, e.slot))
            .and_modify(|c| *c += 1)
            .or_insert(1)
            == 2
        {
            v.push(Violation::InputBoundTwice {
                op: op.name.clone(),
                slot: e.slot,
            });
        }
    }
    for (i, op) in spec.ops.iter().enumerate() {
        for slot in 0..op.arity {
            if !bound.contains_key(&(i, slot)) {
                v.push(Violation::UnboundInput {
                    op: op.name.clone(),
                    slot,
                });
            }
        }
    }

    if spec.outputs.is_empty() {
        v.push(Violation::NoOutputs);
    }
    let mut out_columns = BTreeSet::new();
    for o in &spec.outputs {
        if !names.contains_key(o.from.as_str()) {
            v.push(Violation::UnknownOutputProducer {
                from: o.from.clone(),
                column: o.column.clone(),
            });
        }
        if !out_columns.insert(&o.column) {
            v.push(Violation::DuplicateOutputColumn(o.column.clone()));
        }
    }

    // Cycle detection over op-to-op edges (Kahn). Runs on whatever resolved;
    // name errors above already cover the rest.
    let mut indegree = vec![0usize; spec.ops.len()];
    let mut fan_out: Vec<Vec<usize>> = vec![Vec::new(); spec.ops.len()];
    for e in &spec.edges {
        if let (Some(ProducerId::Op(a)), Some(ProducerId::Op(b))) = (
            names.get(e.from.as_str()).copied(),
            names.get(e.to.as_str()).copied(),
        ) {
            fan_out[a].push(b);
            indegree[b] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..spec.ops.len()).filter(|&i| indegree[i] == 0).collect();
    let mut seen = 0;
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        seen += 1;
        for &j in &fan_out[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if seen != spec.ops.len() {
        let cyclic: Vec<String> = indegree
            .iter()
            .enumerate()
            .filter(|&(_, d)| *d > 0)
            .map(|(i, _)| spec.ops[i].name.clone())
            .collect();
        v.push(Violation::Cycle(cyclic));
    } else {
        // Reachability only makes sense on an acyclic graph.
        let mut from_source = vec![false; spec.ops.len()];
        let mut frontier: Vec<usize> = Vec::new();
        for e in &spec.edges {
            if let (Some(ProducerId::Source(_)), Some(ProducerId::Op(b))) = (
                names.get(e.from.as_str()).copied(),
                names.get(e.to.as_str()).copied(),
            ) {
                if !from_source[b] {
                    from_source[b] = true;
                    frontier.push(b);
                }
            }
        }
        while let Some(i) = frontier.pop() {
            for &j in &fan_out[i] {
                if !from_source[j] {
                    from_source[j] = true;
                    frontier.push(j);
                }
            }
        }
        let mut to_output = vec![false; spec.ops.len()];
        let mut frontier: Vec<usize> = Vec::new();
        for o in &spec.outputs {
            if let Some(ProducerId::Op(i)) = names.get(o.from.as_str()).copied() {
                if !to_output[i] {
                    to_output[i] = true;
                    frontier.push(i);
                }
            }
        }
        let mut fan_in: Vec<Vec<usize>> = vec![Vec::new(); spec.ops.len()];
        for (a, outs) in fan_out.iter().enumerate() {
            for &b in outs {
                fan_in[b].push(a);
            }
        }
        while let Some(i) = frontier.pop() {
            for &j in &fan_in[i] {
                if !to_output[j] {
                    to_output[j] = true;
                    frontier.push(j);
                }
            }
        }
        for (i, op) in spec.ops.iter().enumerate() {
            if !from_source[i] {
                v.push(Violation::UnreachableFromSources(op.name.clone()));
            }
            if !to_output[i] {
                v.push(Violation::CannotReachOutput(op.name.clone()));
            }
        }
    }

    for o in &spec.outputs {
        if let Some(ProducerId::Source(s)) = names.get(o.from.as_str()) {
            source_used[*s] = true;
        }
    }
    for (i, used) in source_used.iter().enumerate() {
        if !used {
            v.push(Violation::UnusedSource(spec.sources[i].name.clone()));
        }
    }

    ValidationReport { violations: v }
}

/// Validates and resolves a graph into executable form.
pub fn compile(spec: &GraphSpec) -> Result<CompiledGraph, ValidationReport> {
    let report = validate_graph(spec);
    if !report.is_ok() {
        return Err(report);
    }

    let mut names: HashMap<&str, ProducerId> = HashMap::new();
    for (i, s) in spec.sources.iter().enumerate() {
        names.insert(&s.name, ProducerId::Source(i));
    }
    for (i, op) in spec.ops.iter().enumerate() {
        names.insert(&op.name, ProducerId::Op(i));
    }

    let mut op_inputs: Vec<Vec<Option<ProducerId>>> =
        spec.ops.iter().map(|op| vec![None; op.arity]).collect();
    for e in &spec.edges {
        let from = names[e.from.as_str()];
        if let ProducerId::Op(to) = names[e.to.as_str()] {
            op_inputs[to][e.slot] = Some(from);
        }
    }
    let op_inputs: Vec<Vec<ProducerId>> = op_inputs
        .into_iter()
        .map(|slots| slots.into_iter().map(|s| s.expect("validated")).collect())
        .collect();

    // Deterministic Kahn order: lowest ready op index first.
    let mut indegree = vec![0usize; spec.ops.len()];
    let mut fan_out: Vec<Vec<usize>> = vec![Vec::new(); spec.ops.len()];
    for (to, inputs) in op_inputs.iter().enumerate() {
        for p in inputs {
            if let ProducerId::Op(from) = p {
                fan_out[*from].push(to);
                indegree[to] += 1;
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..spec.ops.len()).filter(|&i| indegree[i] == 0).collect();
    let mut topo = Vec::with_capacity(spec.ops.len());
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        topo.push(i);
        for &j in &fan_out[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(j);
            }
        }
    }
    debug_assert_eq!(topo.len(), spec.ops.len());

    let producer_count = spec.sources.len() + spec.ops.len();
    let mut consumers: Vec<Vec<(usize, usize)>> = vec![Vec::new(); producer_count];
    let pidx = |p: ProducerId| match p {
        ProducerId::Source(i) => i,
        ProducerId::Op(i) => spec.sources.len() + i,
    };
    for (to, inputs) in op_inputs.iter().enumerate() {
        for (slot, p) in inputs.iter().enumerate() {
            consumers[pidx(*p)].push((to, slot));
        }
    }

    let output_producers = spec
        .outputs
        .iter()
        .map(|o| names[o.from.as_str()])
        .collect();

    Ok(CompiledGraph {
        spec: spec.clone(),
        op_inputs,
        topo,
        consumers,
        output_producers,
    })
}

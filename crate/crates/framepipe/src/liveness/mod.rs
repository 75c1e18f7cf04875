//! Per-element dependency analysis.
//!
//! Given the output rows a job asks for, [`back_propagate`] walks the graph
//! in reverse topological order and derives, for every producer, the exact
//! set of elements that must be delivered, and for every op the exact set of
//! points it must process. Nothing else is decoded or computed.
//!
//! Window and state dependencies clamp at slice edges (repeat-edge); strict
//! mode turns clamping into an error instead.

mod set;

pub use set::RequiredSet;

use crate::error::{Error, Result};
use crate::graph::{CompiledGraph, OpDecl, OpKind, SampleStrategy, SequenceDomain, Warmup};

/// Knobs that change how dependencies are derived.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalysisOptions {
    /// Error on window/state accesses outside slice bounds instead of
    /// clamping to the nearest valid element.
    pub strict_bounds: bool,
}

/// What one op demands of its inputs to produce a downstream set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpstreamNeeds {
    /// Points the op itself must process. For bounded-state ops this is the
    /// downstream set extended backwards by the warmup window; processing a
    /// warmup-only point produces an output that is discarded.
    pub invocations: RequiredSet,
    /// Elements required on every input slot.
    pub inputs: RequiredSet,
}

// Contiguous rank range [lo, hi) of selected indices falling in [a, b).
fn ranks_in_interval(strategy: &SampleStrategy, a: usize, b: usize) -> (usize, usize) {
    let count_below = |x: usize| -> usize {
        match strategy {
            SampleStrategy::Stride(s) => x.div_ceil(*s),
            SampleStrategy::Range { start, end, step } => {
                let x = x.min(*end);
                if x <= *start {
                    0
                } else {
                    (x - start).div_ceil(*step)
                }
            }
            SampleStrategy::Gather(idx) => idx.partition_point(|&i| i < x),
        }
    };
    (count_below(a), count_below(b))
}

// Selected indices for the rank run [a, b), as a set.
fn image_of_ranks(strategy: &SampleStrategy, a: usize, b: usize) -> RequiredSet {
    if a >= b {
        return RequiredSet::empty();
    }
    let step = match strategy {
        SampleStrategy::Stride(s) => *s,
        SampleStrategy::Range { step, .. } => *step,
        SampleStrategy::Gather(idx) => {
            return RequiredSet::from_points(idx[a..b].iter().copied());
        }
    };
    if step == 1 {
        RequiredSet::interval(strategy.select(a), strategy.select(b - 1) + 1)
    } else {
        RequiredSet::from_points((a..b).map(|j| strategy.select(j)))
    }
}

fn stencil_upstream(
    op_name: &str,
    offsets: &[i64],
    domain: &SequenceDomain,
    downstream: &RequiredSet,
    opts: &AnalysisOptions,
) -> Result<RequiredSet> {
    let mut pieces: Vec<(usize, usize)> = Vec::new();
    for (s, e) in domain.slices() {
        let part = downstream.clamp_to(s, e);
        if part.is_empty() {
            continue;
        }
        for &off in offsets {
            for &(a, b) in part.runs() {
                let (lo, hi) = (a as i64 + off, (b - 1) as i64 + off);
                if opts.strict_bounds && (lo < s as i64 || hi >= e as i64) {
                    return Err(Error::StrictBounds(format!(
                        "op `{op_name}`: offset {off} reaches outside slice [{s},{e}) \
                         for required elements [{a},{b})"
                    )));
                }
                let lo = lo.clamp(s as i64, (e - 1) as i64) as usize;
                let hi = hi.clamp(s as i64, (e - 1) as i64) as usize;
                pieces.push((lo, hi + 1));
            }
        }
    }
    Ok(RequiredSet::from_intervals(pieces))
}

fn bounded_state_upstream(
    warmup: Warmup,
    domain: &SequenceDomain,
    downstream: &RequiredSet,
) -> RequiredSet {
    let mut pieces: Vec<(usize, usize)> = Vec::new();
    for (s, e) in domain.slices() {
        let part = downstream.clamp_to(s, e);
        match warmup {
            Warmup::Bounded(w) => {
                for &(a, b) in part.runs() {
                    pieces.push((a.saturating_sub(w).max(s), b));
                }
            }
            Warmup::Infinite => {
                if let Some(last) = part.last() {
                    pieces.push((s, last + 1));
                }
            }
        }
    }
    RequiredSet::from_intervals(pieces)
}

/// Derives what `op` needs from its inputs to deliver `downstream`.
///
/// `input_domain` is the domain of the op's inputs; for length-preserving
/// kinds it equals the output domain.
pub fn required_upstream(
    op: &OpDecl,
    input_domain: &SequenceDomain,
    downstream: &RequiredSet,
    opts: &AnalysisOptions,
) -> Result<UpstreamNeeds> {
    let needs = match &op.kind {
        OpKind::Map | OpKind::Slice(_) | OpKind::Unslice => UpstreamNeeds {
            invocations: downstream.clone(),
            inputs: downstream.clone(),
        },
        OpKind::Sample(strategy) => {
            let mut inputs = RequiredSet::empty();
            for &(a, b) in downstream.runs() {
                inputs = inputs.union(&image_of_ranks(strategy, a, b));
            }
            UpstreamNeeds {
                invocations: downstream.clone(),
                inputs,
            }
        }
        OpKind::Space { strategy, .. } => {
            // Only selected positions map back; fill positions need nothing.
            let pieces = downstream
                .runs()
                .iter()
                .map(|&(a, b)| ranks_in_interval(strategy, a, b));
            UpstreamNeeds {
                invocations: downstream.clone(),
                inputs: RequiredSet::from_intervals(pieces),
            }
        }
        OpKind::Stencil(offsets) => {
            let inputs = stencil_upstream(&op.name, offsets, input_domain, downstream, opts)?;
            UpstreamNeeds {
                invocations: downstream.clone(),
                inputs,
            }
        }
        OpKind::BoundedState(warmup) => {
            let invocations = bounded_state_upstream(*warmup, input_domain, downstream);
            UpstreamNeeds {
                inputs: invocations.clone(),
                invocations,
            }
        }
    };
    Ok(needs)
}

/// Full dependency closure of one requested output set.
#[derive(Debug, Clone)]
pub struct Analysis {
    /// Per producer (dense index): elements that must be delivered.
    pub needs: Vec<RequiredSet>,
    /// Per op: points the op must process (includes warmup-only points).
    pub invocations: Vec<RequiredSet>,
}

impl Analysis {
    /// Elements a kernel-backed op processes, summed over the graph.
    pub fn computed_elements(&self, g: &CompiledGraph) -> u64 {
        g.spec
            .ops
            .iter()
            .enumerate()
            .filter(|(_, op)| op.kind.needs_kernel())
            .map(|(i, _)| self.invocations[i].len() as u64)
            .sum()
    }
}

/// Propagates a requested output set backwards through the whole graph.
///
/// `domains` comes from [`crate::graph::infer_domains`]; `requested` must lie
/// within every output producer's domain.
pub fn back_propagate(
    g: &CompiledGraph,
    domains: &[SequenceDomain],
    requested: &RequiredSet,
    opts: &AnalysisOptions,
) -> Result<Analysis> {
    let mut needs: Vec<RequiredSet> = vec![RequiredSet::empty(); g.producer_count()];
    let mut invocations: Vec<RequiredSet> = vec![RequiredSet::empty(); g.spec.ops.len()];

    for p in &g.output_producers {
        let idx = g.producer_index(*p);
        debug_assert!(
            requested.last().is_none_or(|l| l < domains[idx].len()),
            "requested set exceeds output domain"
        );
        needs[idx] = needs[idx].union(requested);
    }

    for &op_idx in g.topo.iter().rev() {
        let op = &g.spec.ops[op_idx];
        let out_need = needs[g.producer_index(crate::graph::ProducerId::Op(op_idx))].clone();
        let input_domain = &domains[g.producer_index(g.op_inputs[op_idx][0])];
        let up = required_upstream(op, input_domain, &out_need, opts)?;
        invocations[op_idx] = up.invocations;
        for p in &g.op_inputs[op_idx] {
            let idx = g.producer_index(*p);
            needs[idx] = needs[idx].union(&up.inputs);
        }
    }

    Ok(Analysis { needs, invocations })
}

/// Packs points into dense delivery batches of at most `batch` elements,
/// preserving order. Gaps in the underlying domain do not split a batch.
pub fn coalesce_batches(points: &RequiredSet, batch: usize) -> Vec<Vec<usize>> {
    assert!(batch >= 1, "batch must be >= 1");
    let mut out: Vec<Vec<usize>> = Vec::new();
    for p in points.points() {
        match out.last_mut() {
            Some(b) if b.len() < batch => b.push(p),
            _ => out.push(vec![p]),
        }
    }
    out
}

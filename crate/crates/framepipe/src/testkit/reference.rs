//! Dense single-threaded reference evaluation.
//!
//! Computes every element of every producer in topological order, invoking
//! kernels one point at a time and resetting state only at slice starts. No
//! dependency analysis, batching, packetization or scheduling is involved,
//! so sparse execution can be checked against it bit for bit.

use crate::error::{Error, Result};
use crate::graph::{CompiledGraph, Element, OpDecl, OpKind, ProducerId, SequenceDomain};
use crate::kernels::{Batch, Registry};
use crate::liveness::AnalysisOptions;

/// Evaluates every producer densely. Returns one full sequence per producer,
/// indexed like [`CompiledGraph::producer_index`].
pub fn dense_reference(
    g: &CompiledGraph,
    domains: &[SequenceDomain],
    registry: &Registry,
    sources: &[Vec<Element>],
    opts: &AnalysisOptions,
) -> Result<Vec<Vec<Element>>> {
    if sources.len() != g.spec.sources.len() {
        return Err(Error::Domain(format!(
            "expected {} source sequences, got {}",
            g.spec.sources.len(),
            sources.len()
        )));
    }
    let mut seqs: Vec<Vec<Element>> = Vec::with_capacity(g.producer_count());
    for (i, src) in sources.iter().enumerate() {
        if src.len() != domains[i].len() {
            return Err(Error::Domain(format!(
                "source `{}` has {} elements but its domain has length {}",
                g.spec.sources[i].name,
                src.len(),
                domains[i].len()
            )));
        }
        seqs.push(src.clone());
    }
    seqs.resize(g.producer_count(), Vec::new());

    for &op_idx in &g.topo {
        let op = &g.spec.ops[op_idx];
        let input_domain = domains[g.producer_index(g.op_inputs[op_idx][0])].clone();
        let inputs: Vec<Vec<Element>> = g.op_inputs[op_idx]
            .iter()
            .map(|p| seqs[g.producer_index(*p)].clone())
            .collect();
        seqs[g.producer_index(ProducerId::Op(op_idx))] =
            eval_op(op, &input_domain, &inputs, registry, opts)?;
    }
    Ok(seqs)
}

fn eval_op(
    op: &OpDecl,
    input_domain: &SequenceDomain,
    inputs: &[Vec<Element>],
    registry: &Registry,
    opts: &AnalysisOptions,
) -> Result<Vec<Element>> {
    match &op.kind {
        OpKind::Sample(strategy) => Ok((0..strategy.selected_count(input_domain.len()))
            .map(|j| inputs[0][strategy.select(j)].clone())
            .collect()),
        OpKind::Space { strategy, len } => Ok((0..*len)
            .map(|i| match strategy.position_of(i) {
                Some(j) => inputs[0][j].clone(),
                None => Element::fill(),
            })
            .collect()),
        OpKind::Slice(_) | OpKind::Unslice => Ok(inputs[0].clone()),
        OpKind::Map | OpKind::Stencil(_) | OpKind::BoundedState(_) => {
            run_kernel_op(op, input_domain, inputs, registry, opts)
        }
    }
}

fn run_kernel_op(
    op: &OpDecl,
    input_domain: &SequenceDomain,
    inputs: &[Vec<Element>],
    registry: &Registry,
    opts: &AnalysisOptions,
) -> Result<Vec<Element>> {
    let binding = op.kernel.as_ref().expect("kernel ops carry a binding");
    let accepts_fill = registry.accepts_fill(&binding.id);
    let offsets: &[i64] = match &op.kind {
        OpKind::Stencil(o) => o,
        _ => &[0],
    };
    let mut kernel = registry.instantiate(op)?;
    let mut out = Vec::with_capacity(input_domain.len());
    for (s, e) in input_domain.slices() {
        kernel.reset();
        for p in s..e {
            let mut any_fill = false;
            let mut fields: Vec<Vec<&[u8]>> = Vec::with_capacity(inputs.len() * offsets.len());
            for input in inputs {
                for &off in offsets {
                    let q = p as i64 + off;
                    if opts.strict_bounds && (q < s as i64 || q >= e as i64) {
                        return Err(Error::StrictBounds(format!(
                            "op `{}`: offset {off} reaches outside slice [{s},{e}) at point {p}",
                            op.name
                        )));
                    }
                    let el = &input[q.clamp(s as i64, (e - 1) as i64) as usize];
                    any_fill |= el.is_fill();
                    fields.push(vec![el.payload()]);
                }
            }
            // Kernels that opt out of fill never see the point; the fill
            // propagates instead.
            if any_fill && !accepts_fill {
                out.push(Element::fill());
                continue;
            }
            let mut produced = Vec::with_capacity(1);
            kernel
                .invoke(
                    &Batch {
                        points: &[p],
                        fields: &fields,
                    },
                    &mut produced,
                )
                .map_err(|reason| Error::Kernel {
                    kernel: binding.id.clone(),
                    reason,
                })?;
            if produced.len() != 1 {
                return Err(Error::Kernel {
                    kernel: binding.id.clone(),
                    reason: format!("produced {} outputs for 1 point", produced.len()),
                });
            }
            out.push(Element::new(produced.pop().unwrap()));
        }
    }
    Ok(out)
}

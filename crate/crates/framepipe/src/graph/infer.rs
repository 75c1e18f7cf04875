//! Sequence domain inference.
//!
//! Walks a compiled graph in topological order and derives the length and
//! slice structure of every producer's output before anything runs. All
//! length changes are declared by op kinds, so inference is total on valid
//! graphs; the only failures are incompatibilities with the actual input
//! lengths (mismatched multi-input lengths, out-of-range strategies).

use super::{CompiledGraph, OpKind, Partitioner, ProducerId, SequenceDomain};
use crate::error::{Error, Result};

/// Infers the output domain of every producer (indexed per
/// [`CompiledGraph::producer_index`]) from the source domains.
pub fn infer_domains(
    g: &CompiledGraph,
    source_domains: &[SequenceDomain],
) -> Result<Vec<SequenceDomain>> {
    if source_domains.len() != g.spec.sources.len() {
        return Err(Error::Domain(format!(
            "expected {} source domains, got {}",
            g.spec.sources.len(),
            source_domains.len()
        )));
    }
    let mut domains: Vec<Option<SequenceDomain>> = vec![None; g.producer_count()];
    for (i, d) in source_domains.iter().enumerate() {
        domains[i] = Some(d.clone());
    }

    for &op_idx in &g.topo {
        let op = &g.spec.ops[op_idx];
        let inputs: Vec<&SequenceDomain> = g.op_inputs[op_idx]
            .iter()
            .map(|p| domains[g.producer_index(*p)].as_ref().expect("topo order"))
            .collect();
        let fail = |reason: String| Error::Domain(format!("op `{}`: {reason}", op.name));

        let out = match &op.kind {
            OpKind::Map | OpKind::Stencil(_) | OpKind::BoundedState(_) => {
                let first = inputs[0];
                for (slot, d) in inputs.iter().enumerate().skip(1) {
                    if d.len() != first.len() {
                        return Err(fail(format!(
                            "input lengths differ (slot 0 has {}, slot {slot} has {})",
                            first.len(),
                            d.len()
                        )));
                    }
                    if d.slice_starts() != first.slice_starts() {
                        return Err(fail(format!(
                            "input slice boundaries differ between slot 0 and slot {slot}"
                        )));
                    }
                }
                first.clone()
            }
            OpKind::Sample(strategy) => {
                let d = inputs[0];
                if d.is_sliced() {
                    return Err(fail(
                        "cannot sample a sliced sequence; unslice first".into(),
                    ));
                }
                strategy.check_bounds(d.len()).map_err(&fail)?;
                SequenceDomain::new(strategy.selected_count(d.len()))
            }
            OpKind::Space { strategy, len } => {
                let d = inputs[0];
                if d.is_sliced() {
                    return Err(fail("cannot space a sliced sequence; unslice first".into()));
                }
                strategy.check_bounds(*len).map_err(&fail)?;
                let selected = strategy.selected_count(*len);
                if selected != d.len() {
                    return Err(fail(format!(
                        "strategy selects {selected} of {len} positions but input has length {}",
                        d.len()
                    )));
                }
                SequenceDomain::new(*len)
            }
            OpKind::Slice(partitioner) => {
                let d = inputs[0];
                if d.is_sliced() {
                    return Err(fail("sequence is already sliced".into()));
                }
                if d.is_empty() {
                    return Err(fail("cannot slice an empty sequence".into()));
                }
                let starts = match partitioner {
                    Partitioner::FixedLen(k) => (0..d.len()).step_by(*k).collect(),
                    Partitioner::Boundaries(starts) => starts.clone(),
                };
                SequenceDomain::sliced(d.len(), starts).map_err(&fail)?
            }
            OpKind::Unslice => {
                let d = inputs[0];
                if !d.is_sliced() {
                    return Err(fail("sequence is not sliced".into()));
                }
                d.unsliced()
            }
        };
        domains[g.producer_index(ProducerId::Op(op_idx))] = Some(out);
    }

    Ok(domains
        .into_iter()
        .map(|d| d.expect("all inferred"))
        .collect())
}

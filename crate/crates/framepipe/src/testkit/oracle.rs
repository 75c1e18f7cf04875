//! Scalar dependency oracles.
//!
//! [`naive_closure`] recomputes the dependency closure one output point at a
//! time with the per-kind rules written as plain arithmetic on `BTreeSet`s,
//! entirely independent of the engine's run-based set algebra.
//! [`walk_decode_frames`] does the same for decode planning: walk every
//! required frame from its keyframe and union the walks.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::{CompiledGraph, OpDecl, OpKind, ProducerId, SequenceDomain, Warmup};
use crate::liveness::AnalysisOptions;

/// Closure of a request, as plain point sets.
#[derive(Debug, Clone)]
pub struct NaiveClosure {
    /// Per producer (dense index): elements that must be delivered.
    pub needs: Vec<BTreeSet<usize>>,
    /// Per op: points it must process, warmup included.
    pub invocations: Vec<BTreeSet<usize>>,
}

fn point_needs(
    op: &OpDecl,
    input_domain: &SequenceDomain,
    p: usize,
    opts: &AnalysisOptions,
    inv: &mut BTreeSet<usize>,
    inp: &mut BTreeSet<usize>,
) -> Result<()> {
    match &op.kind {
        OpKind::Map | OpKind::Slice(_) | OpKind::Unslice => {
            inv.insert(p);
            inp.insert(p);
        }
        OpKind::Sample(strategy) => {
            inv.insert(p);
            inp.insert(strategy.select(p));
        }
        OpKind::Space { strategy, .. } => {
            inv.insert(p);
            if let Some(j) = strategy.position_of(p) {
                inp.insert(j);
            }
        }
        OpKind::Stencil(offsets) => {
            inv.insert(p);
            let (s, e) = input_domain.slice_bounds(p);
            for &off in offsets {
                let q = p as i64 + off;
                if opts.strict_bounds && (q < s as i64 || q >= e as i64) {
                    return Err(Error::StrictBounds(format!(
                        "op `{}`: offset {off} reaches outside slice [{s},{e}) at point {p}",
                        op.name
                    )));
                }
                inp.insert(q.clamp(s as i64, e as i64 - 1) as usize);
            }
        }
        OpKind::BoundedState(warmup) => {
            let (s, _) = input_domain.slice_bounds(p);
            let lo = match warmup {
                Warmup::Bounded(w) => p.saturating_sub(*w).max(s),
                Warmup::Infinite => s,
            };
            for q in lo..=p {
                inv.insert(q);
                inp.insert(q);
            }
        }
    }
    Ok(())
}

/// Dependency closure of `requested`, built one point at a time.
pub fn naive_closure(
    g: &CompiledGraph,
    domains: &[SequenceDomain],
    requested: &BTreeSet<usize>,
    opts: &AnalysisOptions,
) -> Result<NaiveClosure> {
    let mut needs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); g.producer_count()];
    let mut invocations: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); g.spec.ops.len()];
    for p in &g.output_producers {
        needs[g.producer_index(*p)].extend(requested);
    }
    for &op_idx in g.topo.iter().rev() {
        let op = &g.spec.ops[op_idx];
        let delivered = needs[g.producer_index(ProducerId::Op(op_idx))].clone();
        let input_domain = &domains[g.producer_index(g.op_inputs[op_idx][0])];
        let mut inv = BTreeSet::new();
        let mut inp = BTreeSet::new();
        for &p in &delivered {
            point_needs(op, input_domain, p, opts, &mut inv, &mut inp)?;
        }
        invocations[op_idx] = inv;
        for producer in &g.op_inputs[op_idx] {
            needs[g.producer_index(*producer)].extend(&inp);
        }
    }
    Ok(NaiveClosure { needs, invocations })
}

/// True when the sets cover every per-point dependency of `requested`.
///
/// On sets from [`naive_closure`] this holds, and removing any single member
/// flips it to false: every member is demanded by an output or a consumer.
pub fn is_closed(
    g: &CompiledGraph,
    domains: &[SequenceDomain],
    requested: &BTreeSet<usize>,
    needs: &[BTreeSet<usize>],
    invocations: &[BTreeSet<usize>],
) -> bool {
    for p in &g.output_producers {
        if !requested.is_subset(&needs[g.producer_index(*p)]) {
            return false;
        }
    }
    for (op_idx, op) in g.spec.ops.iter().enumerate() {
        let delivered = &needs[g.producer_index(ProducerId::Op(op_idx))];
        let input_domain = &domains[g.producer_index(g.op_inputs[op_idx][0])];
        for &p in delivered {
            let mut inv = BTreeSet::new();
            let mut inp = BTreeSet::new();
            if point_needs(
                op,
                input_domain,
                p,
                &AnalysisOptions::default(),
                &mut inv,
                &mut inp,
            )
            .is_err()
            {
                return false;
            }
            if !inv.is_subset(&invocations[op_idx]) {
                return false;
            }
            for producer in &g.op_inputs[op_idx] {
                if !inp.is_subset(&needs[g.producer_index(*producer)]) {
                    return false;
                }
            }
        }
    }
    true
}

/// Frames a naive per-row decoder touches: for every required frame, walk
/// forward from its governing keyframe, then union the walks.
pub fn walk_decode_frames(keyframes: &[usize], required: &[usize]) -> BTreeSet<usize> {
    let mut touched = BTreeSet::new();
    for &f in required {
        let i = keyframes.partition_point(|&k| k <= f);
        assert!(i > 0, "no keyframe at or before frame {f}");
        touched.extend(keyframes[i - 1]..=f);
    }
    touched
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{
        compile, infer_domains, EdgeDecl, GraphSpec, KernelBinding, OutputDecl, SourceDecl,
    };

    fn state_graph(warmup: Warmup) -> CompiledGraph {
        let spec = GraphSpec {
            sources: vec![SourceDecl {
                name: "src".into(),
                element_size: None,
            }],
            ops: vec![OpDecl {
                name: "w".into(),
                kind: OpKind::BoundedState(warmup),
                arity: 1,
                element_size: None,
                kernel: Some(KernelBinding {
                    id: "window_digest".into(),
                    params: serde_json::Value::Null,
                    batch: 1,
                    cpu_cores: 1,
                }),
            }],
            edges: vec![EdgeDecl {
                from: "src".into(),
                to: "w".into(),
                slot: 0,
            }],
            outputs: vec![OutputDecl {
                from: "w".into(),
                column: "out".into(),
            }],
        };
        compile(&spec).unwrap()
    }

    #[test]
    fn scalar_warmup_matches_pinned_interval() {
        let g = state_graph(Warmup::Bounded(2));
        let domains = infer_domains(&g, &[SequenceDomain::new(100)]).unwrap();
        let requested: BTreeSet<usize> = (48..99).collect();
        let c = naive_closure(&g, &domains, &requested, &AnalysisOptions::default()).unwrap();
        assert_eq!(c.invocations[0], (46..99).collect());
        assert_eq!(c.needs[0], (46..99).collect());
    }

    #[test]
    fn removal_breaks_closure() {
        let g = state_graph(Warmup::Bounded(3));
        let domains = infer_domains(&g, &[SequenceDomain::new(50)]).unwrap();
        let requested: BTreeSet<usize> = [10, 30].into_iter().collect();
        let c = naive_closure(&g, &domains, &requested, &AnalysisOptions::default()).unwrap();
        assert!(is_closed(
            &g,
            &domains,
            &requested,
            &c.needs,
            &c.invocations
        ));
        for victim_producer in 0..g.producer_count() {
            for &p in &c.needs[victim_producer].clone() {
                let mut maimed = c.needs.clone();
                maimed[victim_producer].remove(&p);
                assert!(
                    !is_closed(&g, &domains, &requested, &maimed, &c.invocations),
                    "dropping {p} from producer {victim_producer} went unnoticed"
                );
            }
        }
        for &p in &c.invocations[0].clone() {
            let mut maimed = c.invocations.clone();
            maimed[0].remove(&p);
            assert!(!is_closed(&g, &domains, &requested, &c.needs, &maimed));
        }
    }

    #[test]
    fn walk_oracle_matches_pinned_decode_scenario() {
        let touched = walk_decode_frames(&[0, 120, 310], &[130, 134, 192, 311]);
        assert_eq!(touched.len(), 75);
        assert_eq!(*touched.first().unwrap(), 120);
        assert_eq!(*touched.last().unwrap(), 311);
        assert!(!touched.contains(&193));
        assert!(!touched.contains(&309));
        assert!(touched.contains(&192) && touched.contains(&310));
    }
}

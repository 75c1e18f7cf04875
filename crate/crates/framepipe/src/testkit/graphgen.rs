//! Random valid graph generation for property tests.
//!
//! Graphs grow as a chain from one source. Two-input joins consume the chain
//! head together with an earlier equal-domain producer (or the head twice),
//! so multi-consumer unions and arity above 1 get exercised while validity
//! (reachability, bound slots, equal input domains) holds by construction.

use rand::seq::index::sample as index_sample;
use rand::Rng;

use crate::graph::{
    EdgeDecl, GraphSpec, KernelBinding, OpDecl, OpKind, OutputDecl, Partitioner, PointsSpec,
    SampleStrategy, SequenceDomain, SourceDecl, Warmup,
};

/// Bounds on generated graphs.
#[derive(Debug, Clone)]
pub struct GraphGenConfig {
    /// Upper bound on op count; each graph draws a target in `1..=max_ops`.
    pub max_ops: usize,
    pub min_source_len: usize,
    pub max_source_len: usize,
    /// Allow bounded-state ops (stateful kernels).
    pub allow_state: bool,
    /// Allow slice/unslice ops.
    pub allow_slices: bool,
}

impl Default for GraphGenConfig {
    fn default() -> Self {
        GraphGenConfig {
            max_ops: 6,
            min_source_len: 8,
            max_source_len: 200,
            allow_state: true,
            allow_slices: true,
        }
    }
}

/// A generated graph plus the facts tests need about it.
#[derive(Debug, Clone)]
pub struct GeneratedGraph {
    pub spec: GraphSpec,
    /// Length of the single source sequence.
    pub source_len: usize,
    /// Common length of every declared output.
    pub output_len: usize,
}

#[derive(Clone, Copy)]
enum Choice {
    Map,
    Join,
    Stencil,
    State,
    Sample,
    Space,
    Slice,
    Unslice,
}

fn edge(from: &str, to: &str, slot: usize) -> EdgeDecl {
    EdgeDecl {
        from: from.into(),
        to: to.into(),
        slot,
    }
}

fn binding<R: Rng>(rng: &mut R, id: &str) -> KernelBinding {
    KernelBinding {
        id: id.into(),
        params: serde_json::Value::Null,
        batch: rng.random_range(1..=7),
        cpu_cores: 1,
    }
}

// digest64, sometimes the fill-accepting variant so fill elements reach a
// kernel instead of always short-circuiting.
fn digest_binding<R: Rng>(rng: &mut R) -> KernelBinding {
    let id = if rng.random_range(0..4) == 0 {
        "digest64_fill"
    } else {
        "digest64"
    };
    binding(rng, id)
}

/// Generates one valid graph with kernels from
/// [`test_registry`](crate::testkit::test_registry).
pub fn random_graph<R: Rng>(rng: &mut R, cfg: &GraphGenConfig) -> GeneratedGraph {
    assert!(cfg.min_source_len >= 1 && cfg.min_source_len <= cfg.max_source_len);
    assert!(cfg.max_ops >= 1);
    let source_len = rng.random_range(cfg.min_source_len..=cfg.max_source_len);

    let mut ops: Vec<OpDecl> = Vec::new();
    let mut edges: Vec<EdgeDecl> = Vec::new();
    // Every producer built so far with its domain; the head is the chain end.
    let mut history: Vec<(String, SequenceDomain)> =
        vec![("src".into(), SequenceDomain::new(source_len))];
    let mut head = 0usize;

    let target_ops = rng.random_range(1..=cfg.max_ops);
    while ops.len() < target_ops {
        let (head_name, head_dom) = history[head].clone();
        let n = head_dom.len();

        let mut choices = vec![Choice::Map, Choice::Join, Choice::Stencil];
        if cfg.allow_state {
            choices.push(Choice::State);
        }
        if head_dom.is_sliced() {
            // Bias back toward unsliced so sample/space stay reachable.
            choices.extend([Choice::Unslice, Choice::Unslice]);
        } else {
            choices.push(Choice::Sample);
            if n <= 4 * cfg.max_source_len {
                choices.push(Choice::Space);
            }
            if cfg.allow_slices {
                choices.push(Choice::Slice);
            }
        }

        let name = format!("op{}", ops.len());
        let (decl, extra_edge, out_dom) = match choices[rng.random_range(0..choices.len())] {
            Choice::Map => (
                OpDecl {
                    name: name.clone(),
                    kind: OpKind::Map,
                    arity: 1,
                    element_size: Some(8),
                    kernel: Some(digest_binding(rng)),
                },
                None,
                head_dom.clone(),
            ),
            Choice::Join => {
                let partners: Vec<usize> = history
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, d))| *d == head_dom)
                    .map(|(i, _)| i)
                    .collect();
                let partner = partners[rng.random_range(0..partners.len())];
                (
                    OpDecl {
                        name: name.clone(),
                        kind: OpKind::Map,
                        arity: 2,
                        element_size: Some(8),
                        kernel: Some(digest_binding(rng)),
                    },
                    Some(edge(&history[partner].0, &name, 1)),
                    head_dom.clone(),
                )
            }
            Choice::Stencil => {
                let k = rng.random_range(1..=3);
                let mut offsets: Vec<i64> = index_sample(rng, 7, k)
                    .into_iter()
                    .map(|i| i as i64 - 3)
                    .collect();
                offsets.sort_unstable();
                (
                    OpDecl {
                        name: name.clone(),
                        kind: OpKind::Stencil(offsets),
                        arity: 1,
                        element_size: Some(8),
                        kernel: Some(digest_binding(rng)),
                    },
                    None,
                    head_dom.clone(),
                )
            }
            Choice::State => {
                let (warmup, id) = if rng.random_range(0..5) == 0 {
                    (Warmup::Infinite, "prefix_digest")
                } else {
                    (Warmup::Bounded(rng.random_range(0..=4)), "window_digest")
                };
                (
                    OpDecl {
                        name: name.clone(),
                        kind: OpKind::BoundedState(warmup),
                        arity: 1,
                        element_size: Some(8),
                        kernel: Some(binding(rng, id)),
                    },
                    None,
                    head_dom.clone(),
                )
            }
            Choice::Sample => {
                let strategy = match rng.random_range(0..3) {
                    0 => SampleStrategy::Stride(rng.random_range(1..=4)),
                    1 => {
                        let start = rng.random_range(0..n);
                        let end = rng.random_range(start + 1..=n);
                        SampleStrategy::Range {
                            start,
                            end,
                            step: rng.random_range(1..=3),
                        }
                    }
                    _ => {
                        let m = rng.random_range(1..=n.min(12));
                        let mut idx = index_sample(rng, n, m).into_vec();
                        idx.sort_unstable();
                        SampleStrategy::Gather(idx)
                    }
                };
                let out = SequenceDomain::new(strategy.selected_count(n));
                (
                    OpDecl {
                        name: name.clone(),
                        kind: OpKind::Sample(strategy),
                        arity: 1,
                        element_size: None,
                        kernel: None,
                    },
                    None,
                    out,
                )
            }
            Choice::Space => {
                let (strategy, m) = if rng.random_bool(0.5) {
                    let s = rng.random_range(2..=4);
                    let m = rng.random_range((n - 1) * s + 1..=n * s);
                    (SampleStrategy::Stride(s), m)
                } else {
                    let m = n + rng.random_range(1..=20);
                    let mut idx = index_sample(rng, m, n).into_vec();
                    idx.sort_unstable();
                    (SampleStrategy::Gather(idx), m)
                };
                debug_assert_eq!(strategy.selected_count(m), n);
                (
                    OpDecl {
                        name: name.clone(),
                        kind: OpKind::Space { strategy, len: m },
                        arity: 1,
                        element_size: None,
                        kernel: None,
                    },
                    None,
                    SequenceDomain::new(m),
                )
            }
            Choice::Slice => {
                let partitioner = if rng.random_bool(0.5) {
                    Partitioner::FixedLen(rng.random_range(1..=n))
                } else {
                    let extra = rng.random_range(0..=3.min(n - 1));
                    let mut starts = vec![0];
                    starts.extend(index_sample(rng, n - 1, extra).into_iter().map(|i| i + 1));
                    starts.sort_unstable();
                    Partitioner::Boundaries(starts)
                };
                let starts = match &partitioner {
                    Partitioner::FixedLen(k) => (0..n).step_by(*k).collect(),
                    Partitioner::Boundaries(s) => s.clone(),
                };
                (
                    OpDecl {
                        name: name.clone(),
                        kind: OpKind::Slice(partitioner),
                        arity: 1,
                        element_size: None,
                        kernel: None,
                    },
                    None,
                    SequenceDomain::sliced(n, starts).expect("generated boundaries are valid"),
                )
            }
            Choice::Unslice => (
                OpDecl {
                    name: name.clone(),
                    kind: OpKind::Unslice,
                    arity: 1,
                    element_size: None,
                    kernel: None,
                },
                None,
                head_dom.unsliced(),
            ),
        };

        edges.push(edge(&head_name, &name, 0));
        if let Some(e) = extra_edge {
            edges.push(e);
        }
        ops.push(decl);
        history.push((name, out_dom));
        head = history.len() - 1;
    }

    let (final_name, final_dom) = history[head].clone();
    let mut outputs = vec![OutputDecl {
        from: final_name.clone(),
        column: "out0".into(),
    }];
    // Extra outputs from equal-length producers; every output column of a
    // job lands in one table, so lengths must agree.
    let candidates: Vec<&str> = history[..history.len() - 1]
        .iter()
        .filter(|(nm, d)| d.len() == final_dom.len() && *nm != final_name)
        .map(|(nm, _)| nm.as_str())
        .collect();
    if !candidates.is_empty() && rng.random_bool(0.5) {
        let take = rng.random_range(1..=candidates.len().min(2));
        for (k, i) in index_sample(rng, candidates.len(), take)
            .into_iter()
            .enumerate()
        {
            outputs.push(OutputDecl {
                from: candidates[i].into(),
                column: format!("out{}", k + 1),
            });
        }
    }

    GeneratedGraph {
        spec: GraphSpec {
            sources: vec![SourceDecl {
                name: "src".into(),
                element_size: None,
            }],
            ops,
            edges,
            outputs,
        },
        source_len,
        output_len: final_dom.len(),
    }
}

/// A random row request that is valid and non-empty for output length `n`.
pub fn random_points<R: Rng>(rng: &mut R, n: usize) -> PointsSpec {
    assert!(n >= 1);
    match rng.random_range(0..4) {
        0 => PointsSpec::All,
        1 => PointsSpec::Stride(rng.random_range(1..=5)),
        2 => {
            let start = rng.random_range(0..n);
            let end = rng.random_range(start + 1..=n);
            PointsSpec::Range { start, end }
        }
        _ => {
            let m = rng.random_range(1..=n.min(16));
            let mut idx = index_sample(rng, n, m).into_vec();
            idx.sort_unstable();
            PointsSpec::Gather(idx)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{compile, infer_domains};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_graphs_compile_and_infer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6e6);
        for round in 0..300 {
            let gg = random_graph(&mut rng, &GraphGenConfig::default());
            let g = compile(&gg.spec)
                .unwrap_or_else(|r| panic!("round {round}: invalid graph\n{r}\n{:#?}", gg.spec));
            let domains = infer_domains(&g, &[SequenceDomain::new(gg.source_len)])
                .unwrap_or_else(|e| panic!("round {round}: {e}"));
            for p in &g.output_producers {
                assert_eq!(domains[g.producer_index(*p)].len(), gg.output_len);
            }
            assert!(gg.output_len >= 1);
        }
    }

    #[test]
    fn generated_points_resolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let n = rng.random_range(1..=50);
            let pts = random_points(&mut rng, n);
            let set = pts.resolve(n).unwrap();
            assert!(!set.is_empty());
            assert!(set.last().unwrap() < n);
        }
    }

    #[test]
    fn generator_covers_every_op_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let gg = random_graph(&mut rng, &GraphGenConfig::default());
            for op in &gg.spec.ops {
                seen.insert(op.kind.label());
            }
        }
        for kind in [
            "map",
            "sample",
            "space",
            "stencil",
            "bounded_state",
            "slice",
            "unslice",
        ] {
            assert!(seen.contains(kind), "never generated {kind}");
        }
    }
}

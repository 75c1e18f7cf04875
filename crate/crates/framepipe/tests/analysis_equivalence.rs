//! Differential tests: run-based dependency analysis against the scalar
//! per-point oracle, over randomly generated graphs.

use std::collections::BTreeSet;

use framepipe::graph::{compile, infer_domains, SequenceDomain};
use framepipe::liveness::{back_propagate, AnalysisOptions, RequiredSet};
use framepipe::testkit::{is_closed, naive_closure, random_graph, random_points, GraphGenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn as_set(rs: &RequiredSet) -> BTreeSet<usize> {
    rs.points().collect()
}

#[test]
fn back_propagation_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11ce);
    let cfg = GraphGenConfig::default();
    for round in 0..300 {
        let gg = random_graph(&mut rng, &cfg);
        let g = compile(&gg.spec).expect("generated graphs are valid");
        let domains = infer_domains(&g, &[SequenceDomain::new(gg.source_len)]).unwrap();
        let requested = random_points(&mut rng, gg.output_len)
            .resolve(gg.output_len)
            .unwrap();
        let opts = AnalysisOptions::default();

        let analysis = back_propagate(&g, &domains, &requested, &opts).unwrap();
        let oracle = naive_closure(&g, &domains, &as_set(&requested), &opts).unwrap();

        for i in 0..g.producer_count() {
            assert_eq!(
                as_set(&analysis.needs[i]),
                oracle.needs[i],
                "round {round}: needs diverge at producer {i}\n{:#?}",
                gg.spec
            );
        }
        for i in 0..g.spec.ops.len() {
            assert_eq!(
                as_set(&analysis.invocations[i]),
                oracle.invocations[i],
                "round {round}: invocations diverge at op {i}\n{:#?}",
                gg.spec
            );
        }
        let total: usize = oracle
            .invocations
            .iter()
            .zip(&g.spec.ops)
            .filter(|(_, op)| op.kind.needs_kernel())
            .map(|(inv, _)| inv.len())
            .sum();
        assert_eq!(analysis.computed_elements(&g), total as u64);
    }
}

#[test]
fn derived_closures_are_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x71e7);
    let cfg = GraphGenConfig::default();
    for _ in 0..40 {
        let gg = random_graph(&mut rng, &cfg);
        let g = compile(&gg.spec).unwrap();
        let domains = infer_domains(&g, &[SequenceDomain::new(gg.source_len)]).unwrap();
        let requested = random_points(&mut rng, gg.output_len)
            .resolve(gg.output_len)
            .unwrap();
        let analysis =
            back_propagate(&g, &domains, &requested, &AnalysisOptions::default()).unwrap();

        let needs: Vec<BTreeSet<usize>> = analysis.needs.iter().map(as_set).collect();
        let invocations: Vec<BTreeSet<usize>> = analysis.invocations.iter().map(as_set).collect();
        let req = as_set(&requested);
        assert!(is_closed(&g, &domains, &req, &needs, &invocations));

        // Tightness: deleting any single element breaks coverage.
        use rand::Rng;
        for _ in 0..10 {
            let producer = rng.random_range(0..needs.len());
            if needs[producer].is_empty() {
                continue;
            }
            let victim = *needs[producer]
                .iter()
                .nth(rng.random_range(0..needs[producer].len()))
                .unwrap();
            let mut maimed = needs.clone();
            maimed[producer].remove(&victim);
            assert!(
                !is_closed(&g, &domains, &req, &maimed, &invocations),
                "dropping element {victim} of producer {producer} went unnoticed\n{:#?}",
                gg.spec
            );
        }
    }
}

#[test]
fn strict_bounds_agreement_between_analysis_and_oracle() {
    // Both sides must reject exactly the same jobs under strict bounds.
    let mut rng = ChaCha8Rng::seed_from_u64(0x57a1c7);
    let cfg = GraphGenConfig::default();
    let opts = AnalysisOptions {
        strict_bounds: true,
    };
    let mut rejected = 0;
    for _ in 0..200 {
        let gg = random_graph(&mut rng, &cfg);
        let g = compile(&gg.spec).unwrap();
        let domains = infer_domains(&g, &[SequenceDomain::new(gg.source_len)]).unwrap();
        let requested = random_points(&mut rng, gg.output_len)
            .resolve(gg.output_len)
            .unwrap();
        let a = back_propagate(&g, &domains, &requested, &opts);
        let b = naive_closure(&g, &domains, &as_set(&requested), &opts);
        assert_eq!(a.is_err(), b.is_err());
        if a.is_err() {
            rejected += 1;
        }
    }
    assert!(rejected > 0, "no strict-bounds rejections were exercised");
}

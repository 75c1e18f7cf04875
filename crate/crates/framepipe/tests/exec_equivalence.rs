//! Executed jobs must match the dense reference exactly, whatever the
//! worker count, packet sizing, pipelining, or fault pattern.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use framepipe::error::Error;
use framepipe::exec::{run_job, run_jobs, ChaosKill, ExecOptions, MachineResources};
use framepipe::graph::{
    ColumnRef, EdgeDecl, GraphSpec, JobOptions, JobSpec, KernelBinding, OpDecl, OpKind, OutputDecl,
    PointsSpec, SourceDecl, Warmup,
};
use framepipe::store::{KeyframePolicy, Store};
use framepipe::testkit::{
    random_graph, snapshot_table, stage_generated_job, test_registry, verify_job_output,
    FramePattern, GraphGenConfig,
};

fn machine() -> MachineResources {
    MachineResources { cores: 2 }
}

fn random_opts<R: Rng>(rng: &mut R) -> ExecOptions {
    ExecOptions {
        workers: Some(rng.random_range(1..=3)),
        work_packet_size: rng.random_range(1..=40),
        io_packet_size: rng.random_range(1..=64),
        pipeline: rng.random_bool(0.5),
        ..ExecOptions::default()
    }
}

#[test]
fn random_jobs_match_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_ec01);
    let registry = test_registry();
    let cfg = GraphGenConfig {
        max_ops: 5,
        min_source_len: 8,
        max_source_len: 120,
        allow_state: true,
        allow_slices: true,
    };
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path()).unwrap();
    for i in 0..40 {
        let gen = random_graph(&mut rng, &cfg);
        let fixture = stage_generated_job(&store, &format!("g{i}"), &mut rng, &gen).unwrap();
        let opts = random_opts(&mut rng);
        let report = run_job(&store, &registry, &fixture.job, &machine(), &opts)
            .unwrap_or_else(|e| panic!("graph {i}: run failed: {e}\n{}", fixture.job.to_json()));
        if let Err(msg) = verify_job_output(&store, &fixture) {
            panic!("graph {i}: {msg}\n{}", fixture.job.to_json());
        }
        let jr = &report.jobs[0];
        // Packet boundaries can only add work (state warmup, shared stencil
        // neighbours recomputed per packet), never remove any.
        assert!(
            jr.elements_computed >= jr.planned_elements,
            "graph {i}: packetized work cannot undercut the closure"
        );
        assert!(
            jr.elements_discarded_warmup <= jr.elements_computed,
            "graph {i}"
        );
        assert_eq!(jr.rows_written as usize, fixture.requested.len());
    }
}

fn window_job(store_table: &str, out_table: &str, w: usize, batch: usize) -> JobSpec {
    let graph = GraphSpec {
        sources: vec![SourceDecl {
            name: "src".into(),
            element_size: None,
        }],
        ops: vec![OpDecl {
            name: "win".into(),
            kind: OpKind::BoundedState(Warmup::Bounded(w)),
            arity: 1,
            element_size: Some(8),
            kernel: Some(KernelBinding {
                id: "window_digest".into(),
                params: serde_json::Value::Null,
                batch,
                cpu_cores: 1,
            }),
        }],
        edges: vec![EdgeDecl {
            from: "src".into(),
            to: "win".into(),
            slot: 0,
        }],
        outputs: vec![OutputDecl {
            from: "win".into(),
            column: "d".into(),
        }],
    };
    JobSpec {
        graph,
        inputs: BTreeMap::from([(
            "src".to_string(),
            ColumnRef {
                table: store_table.into(),
                column: "v".into(),
            },
        )]),
        output: out_table.into(),
        points: PointsSpec::All,
        options: JobOptions::default(),
    }
}

#[test]
fn packet_boundaries_only_add_discarded_warmup() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path()).unwrap();
    let registry = test_registry();
    let n = 100;
    let w = 4;
    store
        .ingest_frames(
            "in",
            "v",
            KeyframePolicy::Interval(7),
            FramePattern::Noise { seed: 5 }.frames(n, 16),
        )
        .unwrap();

    let mut baseline = None;
    for packet_size in [7usize, 25, 100] {
        let job = window_job("in", "out", w, 3);
        let opts = ExecOptions {
            workers: Some(2),
            work_packet_size: packet_size,
            ..ExecOptions::default()
        };
        let report = run_job(&store, &registry, &job, &machine(), &opts).unwrap();
        let jr = &report.jobs[0];

        // Every packet boundary rewinds state by at most the warmup width.
        let expected_warmup: u64 = (0..n)
            .step_by(packet_size)
            .skip(1)
            .map(|p| p.min(w) as u64)
            .sum();
        assert_eq!(
            jr.elements_discarded_warmup, expected_warmup,
            "size {packet_size}"
        );
        assert_eq!(jr.elements_computed, n as u64 + expected_warmup);

        let snap = snapshot_table(&store, "out").unwrap();
        match &baseline {
            None => baseline = Some(snap),
            Some(b) => assert_eq!(b, &snap, "packet size {packet_size} changed the output"),
        }
    }
}

#[test]
fn killed_worker_changes_nothing_but_retry_count() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path()).unwrap();
    let registry = test_registry();
    store
        .ingest_frames(
            "in",
            "v",
            KeyframePolicy::Interval(16),
            FramePattern::Drift { seed: 8, flips: 3 }.frames(200, 12),
        )
        .unwrap();

    let serial = ExecOptions {
        workers: Some(1),
        work_packet_size: 16,
        ..ExecOptions::default()
    };
    let job = window_job("in", "out", 3, 4);
    run_job(&store, &registry, &job, &machine(), &serial).unwrap();
    let expected = snapshot_table(&store, "out").unwrap();

    let chaotic = ExecOptions {
        workers: Some(4),
        work_packet_size: 16,
        chaos_kill: Some(ChaosKill {
            worker: 1,
            after_commits: 1,
        }),
        ..ExecOptions::default()
    };
    let report = run_job(&store, &registry, &job, &machine(), &chaotic).unwrap();
    assert!(
        report.retries >= 1,
        "the killed worker's packet must requeue"
    );
    assert_eq!(snapshot_table(&store, "out").unwrap(), expected);
}

#[test]
fn worker_added_mid_run_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path()).unwrap();
    let registry = test_registry();
    store
        .ingest_frames(
            "in",
            "v",
            KeyframePolicy::Interval(8),
            FramePattern::Noise { seed: 2 }.frames(800, 32),
        )
        .unwrap();
    let job = window_job("in", "out", 2, 5);

    let serial = ExecOptions {
        workers: Some(1),
        work_packet_size: 10,
        ..ExecOptions::default()
    };
    run_job(&store, &registry, &job, &machine(), &serial).unwrap();
    let expected = snapshot_table(&store, "out").unwrap();

    // 80 packets, growth at 30%: plenty of commits land after the threshold
    // for the supervisor (woken per commit) to react mid-run.
    let elastic = ExecOptions {
        workers: Some(2),
        work_packet_size: 10,
        add_worker_at: Some(0.3),
        ..ExecOptions::default()
    };
    let report = run_job(&store, &registry, &job, &machine(), &elastic).unwrap();
    assert_eq!(report.workers_started, 3);
    assert_eq!(snapshot_table(&store, "out").unwrap(), expected);
}

#[test]
fn reading_never_computed_rows_exhausts_retries() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path()).unwrap();
    let registry = test_registry();
    store
        .ingest_frames(
            "in",
            "v",
            KeyframePolicy::Interval(4),
            FramePattern::Ramp.frames(20, 4),
        )
        .unwrap();

    // First job writes only even rows of `sparse`.
    let mut first = window_job("in", "sparse", 0, 1);
    first.graph.outputs[0].column = "v".into();
    first.points = PointsSpec::Stride(2);
    run_job(
        &store,
        &registry,
        &first,
        &machine(),
        &ExecOptions::default(),
    )
    .unwrap();

    // Second job asks for every row of `sparse`, including the holes.
    let second = window_job("sparse", "out", 0, 1);
    let err = run_job(
        &store,
        &registry,
        &second,
        &machine(),
        &ExecOptions::default(),
    )
    .expect_err("absent input rows cannot be computed");
    match err {
        Error::RetriesExhausted { attempts, .. } => assert_eq!(attempts, 4),
        other => panic!("expected retry exhaustion, got {other}"),
    }
}

#[test]
fn one_pool_runs_many_jobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc0);
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path()).unwrap();
    let registry = test_registry();
    let cfg = GraphGenConfig {
        max_ops: 4,
        min_source_len: 10,
        max_source_len: 80,
        allow_state: true,
        allow_slices: false,
    };
    let fixtures: Vec<_> = (0..3)
        .map(|i| {
            let gen = random_graph(&mut rng, &cfg);
            stage_generated_job(&store, &format!("m{i}"), &mut rng, &gen).unwrap()
        })
        .collect();
    let jobs: Vec<JobSpec> = fixtures.iter().map(|f| f.job.clone()).collect();
    let opts = ExecOptions {
        workers: Some(3),
        work_packet_size: 9,
        ..ExecOptions::default()
    };
    let report = run_jobs(&store, &registry, &jobs, &machine(), &opts).unwrap();
    assert_eq!(report.jobs.len(), 3);
    for fixture in &fixtures {
        verify_job_output(&store, fixture).unwrap();
    }
}

#[test]
fn planning_rejects_bad_bindings_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path()).unwrap();
    let registry = test_registry();
    store
        .ingest_frames(
            "in",
            "v",
            KeyframePolicy::Interval(4),
            FramePattern::Ramp.frames(10, 4),
        )
        .unwrap();

    let mut job = window_job("in", "out", 2, 1);
    job.graph.ops[0].kernel.as_mut().unwrap().id = "nope".into();
    let err = run_job(&store, &registry, &job, &machine(), &ExecOptions::default())
        .err()
        .unwrap();
    assert!(err.is_validation(), "{err}");
    assert!(err.to_string().contains("unknown kernel"), "{err}");

    let mut job = window_job("in", "out", 2, 1);
    job.inputs.clear();
    let err = run_job(&store, &registry, &job, &machine(), &ExecOptions::default())
        .err()
        .unwrap();
    assert!(err.to_string().contains("no input binding"), "{err}");

    let mut job = window_job("in", "out", 2, 1);
    job.inputs.get_mut("src").unwrap().column = "missing".into();
    let err = run_job(&store, &registry, &job, &machine(), &ExecOptions::default())
        .err()
        .unwrap();
    assert!(err.to_string().contains("no column"), "{err}");
}

#[test]
fn outputs_of_different_lengths_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path()).unwrap();
    let registry = test_registry();
    store
        .ingest_frames(
            "in",
            "v",
            KeyframePolicy::Interval(4),
            FramePattern::Ramp.frames(12, 4),
        )
        .unwrap();

    // `src` (12 rows) and a stride-2 sample (6 rows) into one table.
    let mut job = window_job("in", "out", 1, 1);
    job.graph.ops.push(OpDecl {
        name: "half".into(),
        kind: OpKind::Sample(framepipe::graph::SampleStrategy::Stride(2)),
        arity: 1,
        element_size: None,
        kernel: None,
    });
    job.graph.edges.push(EdgeDecl {
        from: "src".into(),
        to: "half".into(),
        slot: 0,
    });
    job.graph.outputs.push(OutputDecl {
        from: "half".into(),
        column: "h".into(),
    });
    let err = run_job(&store, &registry, &job, &machine(), &ExecOptions::default())
        .err()
        .unwrap();
    assert!(err.to_string().contains("disagree on length"), "{err}");
}

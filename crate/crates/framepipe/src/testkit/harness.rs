//! Staging generated graphs into a real store and checking executed output
//! against the dense reference, element for element.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::Result;
use crate::graph::{
    compile, infer_domains, ColumnRef, Element, JobOptions, JobSpec, SequenceDomain,
};
use crate::liveness::{AnalysisOptions, RequiredSet};
use crate::store::{KeyframePolicy, Store};

use super::{dense_reference, random_points, test_registry, FramePattern, GeneratedGraph};

/// A staged job: stored inputs, a runnable spec, and the exact expectation.
pub struct JobFixture {
    pub job: JobSpec,
    /// Per output column: the producing op's full dense sequence.
    pub expected: Vec<Vec<Element>>,
    /// The rows the job asks for; all other rows must stay unwritten.
    pub requested: RequiredSet,
}

/// Ingests random source data for `gen` under `<tag>-in`, picks a random
/// requested-row pattern, and computes the expected output densely.
pub fn stage_generated_job<R: Rng>(
    store: &Store,
    tag: &str,
    rng: &mut R,
    gen: &GeneratedGraph,
) -> Result<JobFixture> {
    let frame_size = rng.random_range(1..=48);
    let pattern = match rng.random_range(0..3) {
        0 => FramePattern::Ramp,
        1 => FramePattern::Noise { seed: rng.random() },
        _ => FramePattern::Drift {
            seed: rng.random(),
            flips: rng.random_range(1..=4),
        },
    };
    let sources = pattern.elements(gen.source_len, frame_size);
    let policy = if rng.random_bool(0.3) {
        KeyframePolicy::Forced(
            (0..gen.source_len)
                .filter(|_| rng.random_bool(0.1))
                .collect(),
        )
    } else {
        KeyframePolicy::Interval(rng.random_range(1..=32))
    };
    let in_table = format!("{tag}-in");
    store.ingest_frames(&in_table, "v", policy, sources.iter().map(|e| e.payload()))?;

    let points = random_points(rng, gen.output_len);
    let requested = points.resolve(gen.output_len)?;

    let g = compile(&gen.spec).expect("generated graphs compile");
    let domains = infer_domains(&g, &[SequenceDomain::new(gen.source_len)])?;
    let dense = dense_reference(
        &g,
        &domains,
        &test_registry(),
        &[sources],
        &AnalysisOptions::default(),
    )?;
    let expected = g
        .output_producers
        .iter()
        .map(|p| dense[g.producer_index(*p)].clone())
        .collect();

    let mut inputs = BTreeMap::new();
    inputs.insert(
        "src".to_string(),
        ColumnRef {
            table: in_table,
            column: "v".into(),
        },
    );
    Ok(JobFixture {
        job: JobSpec {
            graph: gen.spec.clone(),
            inputs,
            output: format!("{tag}-out"),
            points,
            options: JobOptions::default(),
        },
        expected,
        requested,
    })
}

/// Compares a finished job's output table against the fixture: requested
/// rows match the dense reference bit for bit, everything else is absent.
pub fn verify_job_output(store: &Store, fixture: &JobFixture) -> std::result::Result<(), String> {
    for (ci, out) in fixture.job.graph.outputs.iter().enumerate() {
        let mut reader = store
            .reader(&fixture.job.output, &out.column)
            .map_err(|e| e.to_string())?;
        let expected = &fixture.expected[ci];
        if reader.rows() != expected.len() {
            return Err(format!(
                "column `{}`: table has {} rows, expected {}",
                out.column,
                reader.rows(),
                expected.len()
            ));
        }
        for (row, want) in expected.iter().enumerate() {
            let got = reader.get(row).map_err(|e| e.to_string())?;
            if fixture.requested.contains(row) {
                let el = got.ok_or_else(|| {
                    format!("column `{}` row {row}: absent, expected data", out.column)
                })?;
                if el.is_fill() != want.is_fill() || el.payload() != want.payload() {
                    return Err(format!(
                        "column `{}` row {row}: got {:?} fill={}, want {:?} fill={}",
                        out.column,
                        &el.payload()[..el.payload().len().min(12)],
                        el.is_fill(),
                        &want.payload()[..want.payload().len().min(12)],
                        want.is_fill()
                    ));
                }
            } else if got.is_some() {
                return Err(format!(
                    "column `{}` row {row}: written although not requested",
                    out.column
                ));
            }
        }
    }
    Ok(())
}

/// One snapshotted row: `None` for absent, else the fill flag and payload.
pub type SnapshotRow = Option<(bool, Vec<u8>)>;

/// Reads every present row of a table into memory for byte-level comparison
/// between runs; fill and absent rows are encoded distinctly.
pub fn snapshot_table(store: &Store, table: &str) -> Result<Vec<(String, Vec<SnapshotRow>)>> {
    let manifest = store.manifest(table)?;
    let mut out = Vec::new();
    for col in &manifest.columns {
        let mut reader = store.reader(table, &col.name)?;
        let mut rows = Vec::with_capacity(manifest.rows);
        for row in 0..manifest.rows {
            rows.push(
                reader
                    .get(row)?
                    .map(|el| (el.is_fill(), el.payload().to_vec())),
            );
        }
        out.push((col.name.clone(), rows));
    }
    Ok(out)
}

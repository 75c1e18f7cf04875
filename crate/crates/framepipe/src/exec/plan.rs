//! Job planning: binding a graph to stored columns, inferring domains,
//! resolving the requested rows, and splitting them into work packets.

use crate::error::{Error, Result};
use crate::graph::{
    compile, infer_domains, ColumnRef, CompiledGraph, JobSpec, ProducerId, SequenceDomain,
};
use crate::kernels::Registry;
use crate::liveness::{back_propagate, Analysis, AnalysisOptions, RequiredSet};
use crate::store::Store;

/// A job validated against a store and ready to execute.
#[derive(Debug)]
pub struct JobPlan {
    pub g: CompiledGraph,
    pub domains: Vec<SequenceDomain>,
    /// Stored column bound to each graph source, in source order.
    pub source_refs: Vec<ColumnRef>,
    pub output_table: String,
    /// Output column names with advertised element sizes, in output order.
    pub output_columns: Vec<(String, Option<usize>)>,
    pub output_rows: usize,
    /// Requested output rows.
    pub requested: RequiredSet,
    /// `requested` split into packets of at most the configured size.
    pub packets: Vec<RequiredSet>,
    pub opts: AnalysisOptions,
    /// Dependency closure of the whole request, before packetization.
    pub analysis: Analysis,
}

/// Splits points into consecutive chunks of at most `size` points each.
pub fn partition_points(points: &RequiredSet, size: usize) -> Vec<RequiredSet> {
    assert!(size >= 1, "packet size must be >= 1");
    let mut out = Vec::new();
    let mut chunk = Vec::with_capacity(size.min(points.len()));
    for p in points.points() {
        chunk.push(p);
        if chunk.len() == size {
            out.push(RequiredSet::from_points(chunk.drain(..)));
        }
    }
    if !chunk.is_empty() {
        out.push(RequiredSet::from_points(chunk));
    }
    out
}

/// Validates a job spec against the store and produces an execution plan.
/// Every error a run could hit deterministically (bad graph, unknown kernel,
/// missing column, length mismatch, strict bounds) surfaces here.
pub fn plan_job(
    store: &Store,
    registry: &Registry,
    spec: &JobSpec,
    work_packet_size: usize,
) -> Result<JobPlan> {
    let g = compile(&spec.graph).map_err(Error::InvalidGraph)?;

    for op in &g.spec.ops {
        if let Some(binding) = &op.kernel {
            if !registry.contains(&binding.id) {
                return Err(Error::InvalidJob(format!(
                    "op `{}` binds unknown kernel `{}`",
                    op.name, binding.id
                )));
            }
            // Construct once now so bad parameters fail before work starts.
            registry.instantiate(op)?;
        }
    }

    let mut source_refs = Vec::with_capacity(g.spec.sources.len());
    for source in &g.spec.sources {
        let cref = spec.inputs.get(&source.name).ok_or_else(|| {
            Error::InvalidJob(format!("source `{}` has no input binding", source.name))
        })?;
        source_refs.push(cref.clone());
    }
    for name in spec.inputs.keys() {
        if !g.spec.sources.iter().any(|s| &s.name == name) {
            return Err(Error::InvalidJob(format!(
                "input binding `{name}` matches no source"
            )));
        }
    }

    let mut source_domains = Vec::with_capacity(source_refs.len());
    for (source, cref) in g.spec.sources.iter().zip(&source_refs) {
        let manifest = store.manifest(&cref.table).map_err(|e| {
            Error::InvalidJob(format!("source `{}` binds {cref}: {e}", source.name))
        })?;
        let meta = manifest.column(&cref.column).ok_or_else(|| {
            Error::InvalidJob(format!(
                "table `{}` has no column `{}`",
                cref.table, cref.column
            ))
        })?;
        if let (Some(want), Some(have)) = (source.element_size, meta.element_size) {
            if want != have {
                return Err(Error::InvalidJob(format!(
                    "source `{}` expects {want}-byte elements but {cref} stores {have}-byte ones",
                    source.name
                )));
            }
        }
        source_domains.push(SequenceDomain::new(manifest.rows));
    }
    let domains = infer_domains(&g, &source_domains)?;

    // Every output column lands in one table, so they must agree on length.
    let lens: Vec<usize> = g
        .output_producers
        .iter()
        .map(|p| domains[g.producer_index(*p)].len())
        .collect();
    let output_rows = lens[0];
    if lens.iter().any(|&l| l != output_rows) {
        let detail: Vec<String> = g
            .spec
            .outputs
            .iter()
            .zip(&lens)
            .map(|(o, l)| format!("{}={l}", o.column))
            .collect();
        return Err(Error::InvalidJob(format!(
            "output columns disagree on length: {}",
            detail.join(", ")
        )));
    }

    let output_columns = g
        .spec
        .outputs
        .iter()
        .zip(&g.output_producers)
        .map(|(o, p)| {
            let size = match *p {
                ProducerId::Source(i) => g.spec.sources[i].element_size,
                ProducerId::Op(i) => g.spec.ops[i].element_size,
            };
            (o.column.clone(), size)
        })
        .collect();

    let requested = spec.points.resolve(output_rows)?;
    if requested.is_empty() {
        return Err(Error::InvalidJob("job requests no output rows".into()));
    }

    let opts = AnalysisOptions {
        strict_bounds: spec.options.strict_bounds,
    };
    let analysis = back_propagate(&g, &domains, &requested, &opts)?;
    let packets = partition_points(&requested, work_packet_size);

    Ok(JobPlan {
        g,
        domains,
        source_refs,
        output_table: spec.output.clone(),
        output_columns,
        output_rows,
        requested,
        packets,
        opts,
        analysis,
    })
}

/// Dependency closure of one packet's output rows.
#[derive(Debug)]
pub struct PacketPlan {
    /// The output rows this packet owns.
    pub points: RequiredSet,
    /// Per producer: elements that must be materialized.
    pub needs: Vec<RequiredSet>,
    /// Per op: points to process, including warmup-only ones.
    pub invocations: Vec<RequiredSet>,
}

pub fn packet_plan(job: &JobPlan, packet: usize) -> Result<PacketPlan> {
    let points = job.packets[packet].clone();
    let a = back_propagate(&job.g, &job.domains, &points, &job.opts)?;
    Ok(PacketPlan {
        points,
        needs: a.needs,
        invocations: a.invocations,
    })
}

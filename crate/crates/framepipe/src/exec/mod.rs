//! Parallel job execution over a store.
//!
//! A run plans each job (bind, infer, close over dependencies, packetize),
//! then a worker pool drains the shared packet queue. Results commit per
//! packet and assemble into output tables deterministically: the bytes
//! written depend only on the jobs and the stored inputs, never on worker
//! count, scheduling order, packet sizing, pipelining, or mid-run faults.

mod packet;
mod plan;
mod pool;

pub use plan::{packet_plan, partition_points, plan_job, JobPlan, PacketPlan};

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::graph::JobSpec;
use crate::kernels::Registry;
use crate::store::{ReadCounters, Store};

use pool::{supervise, worker_loop, Dispatcher, JobRuntime, RunCtx};

/// Kills one worker right before it starts its next packet once it has
/// committed `after_commits`; held packets go back to the queue. For
/// fault-tolerance testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChaosKill {
    pub worker: usize,
    pub after_commits: usize,
}

/// Engine-level knobs. None of these change what a job computes.
#[derive(Debug, Clone)]
pub struct ExecOptions {
    /// Worker count; when unset, as many instances as the machine fits.
    pub workers: Option<usize>,
    /// Output rows per work packet.
    pub work_packet_size: usize,
    /// Rows per storage read call while loading a packet.
    pub io_packet_size: usize,
    /// Load the next packet while the current one computes.
    pub pipeline: bool,
    /// Times one packet may fail before the run aborts.
    pub max_retries: usize,
    pub chaos_kill: Option<ChaosKill>,
    /// Spawn one extra worker once this fraction of packets has committed.
    pub add_worker_at: Option<f64>,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            workers: None,
            work_packet_size: 128,
            io_packet_size: 1024,
            pipeline: true,
            max_retries: 3,
            chaos_kill: None,
            add_worker_at: None,
        }
    }
}

/// What the host machine offers.
#[derive(Debug, Clone, Copy)]
pub struct MachineResources {
    pub cores: usize,
}

impl MachineResources {
    pub fn detect() -> Self {
        MachineResources {
            cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// How many instances of a graph a machine fits, given the cores one
/// instance occupies. Always at least one.
pub fn plan_instances(machine_cores: usize, graph_cores: usize) -> usize {
    (machine_cores / graph_cores.max(1)).max(1)
}

/// Per-job outcome.
#[derive(Debug, Clone)]
pub struct JobReport {
    pub output_table: String,
    pub rows: usize,
    /// Rows actually written (the requested ones).
    pub rows_written: usize,
    pub packets: usize,
    /// Kernel-op elements processed at runtime, including warmup repeats
    /// caused by packet boundaries.
    pub elements_computed: u64,
    /// Elements produced solely to warm state up and then dropped.
    pub elements_discarded_warmup: u64,
    /// Kernel-op elements the whole-request closure contains; what a single
    /// packet covering the full request would compute.
    pub planned_elements: u64,
    pub output_bytes: u64,
}

/// Whole-run outcome.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub jobs: Vec<JobReport>,
    pub wall: Duration,
    pub workers_started: usize,
    /// Peak concurrently-busy workers times the widest graph's core count.
    pub peak_cores: usize,
    pub packets: usize,
    pub retries: u64,
    /// Loads issued while their worker was still executing a packet.
    pub overlapped_loads: u64,
    pub read: ReadCounters,
}

pub fn run_job(
    store: &Store,
    registry: &Registry,
    spec: &JobSpec,
    machine: &MachineResources,
    opts: &ExecOptions,
) -> Result<RunReport> {
    run_jobs(store, registry, std::slice::from_ref(spec), machine, opts)
}

/// Plans and runs a batch of jobs on one worker pool.
pub fn run_jobs(
    store: &Store,
    registry: &Registry,
    specs: &[JobSpec],
    machine: &MachineResources,
    opts: &ExecOptions,
) -> Result<RunReport> {
    if specs.is_empty() {
        return Err(Error::InvalidJob("no jobs to run".into()));
    }
    let started = Instant::now();

    let mut jobs = Vec::with_capacity(specs.len());
    let mut seen = BTreeSet::new();
    for spec in specs {
        let plan = plan_job(store, registry, spec, opts.work_packet_size)?;
        if !seen.insert(plan.output_table.clone()) {
            return Err(Error::InvalidJob(format!(
                "two jobs write output table `{}`",
                plan.output_table
            )));
        }
        let writer = store.output_table(
            &plan.output_table,
            plan.output_columns.clone(),
            plan.output_rows,
        )?;
        jobs.push(JobRuntime {
            plan,
            writer,
            computed: AtomicU64::new(0),
            discarded: AtomicU64::new(0),
        });
    }

    let graph_cores = jobs.iter().map(|j| j.plan.g.cpu_cores()).max().unwrap_or(1);
    let workers = opts
        .workers
        .unwrap_or_else(|| plan_instances(machine.cores, graph_cores))
        .max(1);

    let queue: BTreeSet<(usize, usize)> = jobs
        .iter()
        .enumerate()
        .flat_map(|(j, jr)| (0..jr.plan.packets.len()).map(move |p| (j, p)))
        .collect();
    let total_packets = queue.len();

    let ctx = RunCtx {
        jobs,
        dispatcher: Dispatcher::new(queue, opts.max_retries),
        plans: Mutex::new(HashMap::new()),
        registry: registry.clone(),
        store: store.clone(),
        opts: opts.clone(),
        read_totals: Mutex::new(ReadCounters::default()),
        overlapped_loads: AtomicU64::new(0),
        busy: AtomicUsize::new(0),
        peak_busy: AtomicUsize::new(0),
        live_workers: AtomicUsize::new(0),
    };

    let workers_started = std::thread::scope(|s| {
        for w in 0..workers {
            ctx.live_workers.fetch_add(1, Ordering::SeqCst);
            let ctx = &ctx;
            s.spawn(move || worker_loop(ctx, w));
        }
        supervise(&ctx, s, workers)
    });

    if let Some(fatal) = ctx.dispatcher.state.lock().unwrap().fatal.take() {
        return Err(fatal);
    }

    let retries = ctx.dispatcher.state.lock().unwrap().total_retries;
    let mut reports = Vec::with_capacity(ctx.jobs.len());
    for jr in ctx.jobs {
        let packets = jr.plan.packets.len();
        let planned = jr.plan.analysis.computed_elements(&jr.plan.g);
        let table = jr.plan.output_table.clone();
        let stats = jr.writer.finalize()?;
        reports.push(JobReport {
            output_table: table,
            rows: stats.rows,
            rows_written: stats.rows_written,
            packets,
            elements_computed: jr.computed.into_inner(),
            elements_discarded_warmup: jr.discarded.into_inner(),
            planned_elements: planned,
            output_bytes: stats.data_bytes,
        });
    }

    Ok(RunReport {
        jobs: reports,
        wall: started.elapsed(),
        workers_started,
        peak_cores: ctx.peak_busy.into_inner() * graph_cores,
        packets: total_packets,
        retries,
        overlapped_loads: ctx.overlapped_loads.into_inner(),
        read: ctx.read_totals.into_inner().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_divide_machine_cores() {
        assert_eq!(plan_instances(8, 4), 2);
        assert_eq!(plan_instances(8, 3), 2);
        assert_eq!(plan_instances(2, 4), 1);
        assert_eq!(plan_instances(16, 0), 16);
    }
}

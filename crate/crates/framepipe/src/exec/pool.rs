//! The worker pool.
//!
//! A shared dispatcher hands out `(job, packet)` pairs lowest-index first.
//! Each worker runs a private loader thread so the next packet's input rows
//! stream in while the current packet computes. A packet that fails (or
//! whose worker dies) goes back to the queue and is retried elsewhere; the
//! output writer ignores duplicate commits, so the first result wins and the
//! final table is byte-identical however work was shuffled.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::sync_channel;
use std::sync::{Arc, Condvar, Mutex};

use crate::error::{Error, Result};
use crate::kernels::Registry;
use crate::store::{OutputTableWriter, ReadCounters, Store};

use super::packet::{execute_packet, Loader};
use super::plan::{packet_plan, JobPlan, PacketPlan};
use super::ExecOptions;

pub(super) enum Pop {
    Packet(usize, usize),
    Shutdown,
}

pub(super) struct DispatchState {
    queue: BTreeSet<(usize, usize)>,
    in_flight: usize,
    retries: HashMap<(usize, usize), usize>,
    pub total_retries: u64,
    pub committed: usize,
    pub total: usize,
    pub fatal: Option<Error>,
}

impl DispatchState {
    fn finished(&self) -> bool {
        self.fatal.is_some() || (self.queue.is_empty() && self.in_flight == 0)
    }
}

pub(super) struct Dispatcher {
    pub state: Mutex<DispatchState>,
    cv: Condvar,
    max_retries: usize,
}

impl Dispatcher {
    pub fn new(queue: BTreeSet<(usize, usize)>, max_retries: usize) -> Self {
        let total = queue.len();
        Dispatcher {
            state: Mutex::new(DispatchState {
                queue,
                in_flight: 0,
                retries: HashMap::new(),
                total_retries: 0,
                committed: 0,
                total,
                fatal: None,
            }),
            cv: Condvar::new(),
            max_retries,
        }
    }

    /// Blocks until a packet is available or the run is over.
    pub fn pop(&self) -> Pop {
        let mut st = self.state.lock().unwrap();
        loop {
            if st.fatal.is_some() {
                return Pop::Shutdown;
            }
            if let Some(&key) = st.queue.iter().next() {
                st.queue.remove(&key);
                st.in_flight += 1;
                return Pop::Packet(key.0, key.1);
            }
            if st.in_flight == 0 {
                return Pop::Shutdown;
            }
            st = self.cv.wait(st).unwrap();
        }
    }

    /// Grabs a packet only if one is immediately available.
    pub fn try_pop(&self) -> Option<(usize, usize)> {
        let mut st = self.state.lock().unwrap();
        if st.fatal.is_some() {
            return None;
        }
        let key = *st.queue.iter().next()?;
        st.queue.remove(&key);
        st.in_flight += 1;
        Some(key)
    }

    pub fn commit(&self) {
        let mut st = self.state.lock().unwrap();
        st.in_flight -= 1;
        st.committed += 1;
        self.cv.notify_all();
    }

    /// Returns a popped packet to the queue, or aborts the run once its
    /// retry budget is spent.
    pub fn requeue(&self, job: usize, packet: usize, reason: String) {
        let mut st = self.state.lock().unwrap();
        st.in_flight -= 1;
        let tries = st.retries.entry((job, packet)).or_insert(0);
        *tries += 1;
        let tries = *tries;
        st.total_retries += 1;
        if tries > self.max_retries {
            if st.fatal.is_none() {
                st.fatal = Some(Error::RetriesExhausted {
                    job,
                    packet,
                    attempts: tries,
                    last: reason,
                });
            }
        } else {
            st.queue.insert((job, packet));
        }
        self.cv.notify_all();
    }
}

/// Runs on the pool's parent thread until all packets are settled: wakes on
/// every commit to grow the pool at the configured progress fraction, and
/// aborts the run if every worker exits while packets remain.
pub(super) fn supervise<'scope>(
    ctx: &'scope RunCtx,
    s: &'scope std::thread::Scope<'scope, '_>,
    initial_workers: usize,
) -> usize {
    let mut workers_started = initial_workers;
    let mut grown = ctx.opts.add_worker_at.is_none();
    let mut st = ctx.dispatcher.state.lock().unwrap();
    loop {
        if st.finished() {
            break;
        }
        if !grown {
            let frac = ctx.opts.add_worker_at.unwrap();
            if st.committed as f64 >= frac * st.total as f64 {
                ctx.live_workers.fetch_add(1, Ordering::SeqCst);
                let w = workers_started;
                s.spawn(move || worker_loop(ctx, w));
                workers_started += 1;
                grown = true;
                continue;
            }
        }
        if ctx.live_workers.load(Ordering::SeqCst) == 0 {
            if st.fatal.is_none() {
                st.fatal = Some(Error::Store(
                    "all workers exited with packets outstanding".into(),
                ));
            }
            break;
        }
        // Timed so a silently-exiting last worker is still noticed.
        let (guard, _) = ctx
            .dispatcher
            .cv
            .wait_timeout(st, std::time::Duration::from_millis(10))
            .unwrap();
        st = guard;
    }
    workers_started
}

/// One job's shared execution state.
pub(super) struct JobRuntime {
    pub plan: JobPlan,
    pub writer: OutputTableWriter,
    pub computed: AtomicU64,
    pub discarded: AtomicU64,
}

/// Everything a worker needs, shared by reference across the pool.
pub(super) struct RunCtx {
    pub jobs: Vec<JobRuntime>,
    pub dispatcher: Dispatcher,
    pub plans: Mutex<HashMap<(usize, usize), Arc<PacketPlan>>>,
    pub registry: Registry,
    pub store: Store,
    pub opts: ExecOptions,
    pub read_totals: Mutex<ReadCounters>,
    pub overlapped_loads: AtomicU64,
    pub busy: AtomicUsize,
    pub peak_busy: AtomicUsize,
    pub live_workers: AtomicUsize,
}

impl RunCtx {
    /// Packet plans are memoized so a retried packet reuses the original.
    fn plan_for(&self, job: usize, packet: usize) -> Result<Arc<PacketPlan>> {
        if let Some(plan) = self.plans.lock().unwrap().get(&(job, packet)) {
            return Ok(plan.clone());
        }
        let plan = Arc::new(packet_plan(&self.jobs[job].plan, packet)?);
        Ok(self
            .plans
            .lock()
            .unwrap()
            .entry((job, packet))
            .or_insert(plan)
            .clone())
    }
}

/// Decrements the live-worker gauge however the worker exits.
struct LiveGuard<'a>(&'a AtomicUsize);

impl Drop for LiveGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

/// The caller increments `live_workers` before spawning so the supervisor
/// never observes a worker as dead before it starts.
pub(super) fn worker_loop(ctx: &RunCtx, widx: usize) {
    let _live = LiveGuard(&ctx.live_workers);
    let die_after = ctx
        .opts
        .chaos_kill
        .as_ref()
        .filter(|c| c.worker == widx)
        .map(|c| c.after_commits);

    let (req_tx, req_rx) = sync_channel::<(usize, usize, Arc<PacketPlan>)>(1);
    let (res_tx, res_rx) = sync_channel(1);

    std::thread::scope(|s| {
        s.spawn(move || {
            let mut loader = Loader::new(ctx.store.clone(), ctx.opts.io_packet_size);
            while let Ok((job, packet, plan)) = req_rx.recv() {
                let outcome = loader.load(&ctx.jobs[job].plan, &plan).map(|(loaded, c)| {
                    ctx.read_totals.lock().unwrap().add(&c);
                    loaded
                });
                if res_tx.send((job, packet, plan, outcome)).is_err() {
                    break;
                }
            }
        });

        // The packet currently being loaded, if any.
        let mut in_loader: Option<(usize, usize)> = None;
        let mut commits_done = 0usize;

        loop {
            if die_after.is_some_and(|n| commits_done >= n) {
                if let Some((j, p)) = in_loader.take() {
                    ctx.dispatcher
                        .requeue(j, p, "worker killed (fault injection)".into());
                }
                break;
            }
            if in_loader.is_none() {
                match ctx.dispatcher.pop() {
                    Pop::Packet(j, p) => match ctx.plan_for(j, p) {
                        Ok(plan) => {
                            let _ = req_tx.send((j, p, plan));
                            in_loader = Some((j, p));
                        }
                        Err(e) => {
                            ctx.dispatcher.requeue(j, p, e.to_string());
                            continue;
                        }
                    },
                    Pop::Shutdown => break,
                }
            }
            let (job, packet) = in_loader.take().expect("a load is in flight");
            // Queue the next packet so its load overlaps this execution.
            if ctx.opts.pipeline {
                if let Some((j2, p2)) = ctx.dispatcher.try_pop() {
                    match ctx.plan_for(j2, p2) {
                        Ok(plan) => {
                            let _ = req_tx.send((j2, p2, plan));
                            in_loader = Some((j2, p2));
                            ctx.overlapped_loads.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(e) => ctx.dispatcher.requeue(j2, p2, e.to_string()),
                    }
                }
            }
            let (rj, rp, rplan, outcome) = res_rx.recv().expect("loader is alive");
            debug_assert_eq!((rj, rp), (job, packet));

            let busy = ctx.busy.fetch_add(1, Ordering::SeqCst) + 1;
            ctx.peak_busy.fetch_max(busy, Ordering::SeqCst);
            let jr = &ctx.jobs[rj];
            let result =
                outcome.and_then(|loaded| execute_packet(&jr.plan, &rplan, loaded, &ctx.registry));
            ctx.busy.fetch_sub(1, Ordering::SeqCst);

            match result {
                Ok((columns, counts)) => match jr.writer.commit_packet(rp, &columns) {
                    Ok(()) => {
                        jr.computed.fetch_add(counts.computed, Ordering::Relaxed);
                        jr.discarded
                            .fetch_add(counts.discarded_warmup, Ordering::Relaxed);
                        ctx.dispatcher.commit();
                        commits_done += 1;
                    }
                    Err(e) => ctx.dispatcher.requeue(rj, rp, e.to_string()),
                },
                Err(e) => ctx.dispatcher.requeue(rj, rp, e.to_string()),
            }
        }
        drop(req_tx);
        drop(res_rx);
    });
}

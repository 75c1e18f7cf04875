//! Per-packet work: loading the required input rows and evaluating the
//! graph over exactly the planned element sets.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Element, OpKind, ProducerId};
use crate::kernels::{Batch, Kernel, Registry};
use crate::liveness::RequiredSet;
use crate::store::{ColumnReader, ReadCounters, Store};

use super::plan::{partition_points, JobPlan, PacketPlan};

/// Loaded source rows, one sparse map per graph source.
pub(super) type Loaded = Vec<HashMap<usize, Element>>;

/// Requested rows per output column, in declaration order, rows ascending.
pub(super) type PacketRows = Vec<Vec<(usize, Element)>>;

#[derive(Debug, Default, Clone, Copy)]
pub(super) struct ExecCounts {
    pub computed: u64,
    pub discarded_warmup: u64,
}

/// Reads packet inputs, keeping columns open across packets.
pub(super) struct Loader {
    store: Store,
    io_chunk: usize,
    readers: HashMap<(String, String), ColumnReader>,
}

impl Loader {
    pub fn new(store: Store, io_chunk: usize) -> Self {
        Loader {
            store,
            io_chunk: io_chunk.max(1),
            readers: HashMap::new(),
        }
    }

    pub fn load(&mut self, job: &JobPlan, plan: &PacketPlan) -> Result<(Loaded, ReadCounters)> {
        let mut counters = ReadCounters::default();
        let mut loaded = Vec::with_capacity(job.source_refs.len());
        for (si, cref) in job.source_refs.iter().enumerate() {
            let need = &plan.needs[si];
            let mut map = HashMap::with_capacity(need.len());
            if !need.is_empty() {
                let key = (cref.table.clone(), cref.column.clone());
                let reader = match self.readers.entry(key) {
                    std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(self.store.reader(&cref.table, &cref.column)?)
                    }
                };
                for chunk in partition_points(need, self.io_chunk) {
                    reader.fetch(&chunk, |p, el| {
                        map.insert(p, el);
                    })?;
                }
                counters.add(&reader.take_counters());
            }
            loaded.push(map);
        }
        Ok((loaded, counters))
    }
}

fn planned(map: &HashMap<usize, Element>, p: usize, op: &str) -> Result<Element> {
    map.get(&p).cloned().ok_or_else(|| {
        Error::Store(format!(
            "internal: op `{op}` reads point {p} that was never planned"
        ))
    })
}

/// Evaluates one packet. Returns the requested rows per output column (in
/// output declaration order, rows ascending) and the work counters.
pub(super) fn execute_packet(
    job: &JobPlan,
    plan: &PacketPlan,
    loaded: Loaded,
    registry: &Registry,
) -> Result<(PacketRows, ExecCounts)> {
    let g = &job.g;
    let mut counts = ExecCounts::default();
    let mut storage = loaded;
    storage.resize(g.producer_count(), HashMap::new());

    for &op_idx in &g.topo {
        let op = &g.spec.ops[op_idx];
        let out_idx = g.producer_index(ProducerId::Op(op_idx));
        let need = &plan.needs[out_idx];
        let in_idx = g.producer_index(g.op_inputs[op_idx][0]);
        let produced: HashMap<usize, Element> = match &op.kind {
            OpKind::Sample(st) => need
                .points()
                .map(|j| Ok((j, planned(&storage[in_idx], st.select(j), &op.name)?)))
                .collect::<Result<_>>()?,
            OpKind::Space { strategy, .. } => need
                .points()
                .map(|i| {
                    let el = match strategy.position_of(i) {
                        Some(j) => planned(&storage[in_idx], j, &op.name)?,
                        None => Element::fill(),
                    };
                    Ok((i, el))
                })
                .collect::<Result<_>>()?,
            OpKind::Slice(_) | OpKind::Unslice => need
                .points()
                .map(|p| Ok((p, planned(&storage[in_idx], p, &op.name)?)))
                .collect::<Result<_>>()?,
            OpKind::Map | OpKind::Stencil(_) | OpKind::BoundedState(_) => {
                run_kernel_packet(job, plan, op_idx, &storage, registry, &mut counts)?
            }
        };
        storage[out_idx] = produced;
    }

    let mut columns = Vec::with_capacity(g.output_producers.len());
    for p in &g.output_producers {
        let seq = &storage[g.producer_index(*p)];
        let mut rows = Vec::with_capacity(plan.points.len());
        for point in plan.points.points() {
            rows.push((point, planned(seq, point, g.producer_name(*p))?));
        }
        columns.push(rows);
    }
    Ok((columns, counts))
}

fn run_kernel_packet(
    job: &JobPlan,
    plan: &PacketPlan,
    op_idx: usize,
    storage: &[HashMap<usize, Element>],
    registry: &Registry,
    counts: &mut ExecCounts,
) -> Result<HashMap<usize, Element>> {
    let g = &job.g;
    let op = &g.spec.ops[op_idx];
    let binding = op.kernel.as_ref().expect("kernel ops carry a binding");
    let accepts_fill = registry.accepts_fill(&binding.id);
    let offsets: &[i64] = match &op.kind {
        OpKind::Stencil(o) => o,
        _ => &[0],
    };
    let inputs: Vec<&HashMap<usize, Element>> = g.op_inputs[op_idx]
        .iter()
        .map(|p| &storage[g.producer_index(*p)])
        .collect();
    let domain = &job.domains[g.producer_index(g.op_inputs[op_idx][0])];
    let need = &plan.needs[g.producer_index(ProducerId::Op(op_idx))];
    let inv = &plan.invocations[op_idx];

    let mut kernel = registry.instantiate(op)?;
    let mut out = HashMap::with_capacity(need.len());
    let nfields = inputs.len() * offsets.len();
    let mut batch_points: Vec<usize> = Vec::with_capacity(binding.batch);
    let mut batch_fields: Vec<Vec<Element>> = vec![Vec::with_capacity(binding.batch); nfields];
    // Current slice; points are ascending so slices change monotonically.
    let (mut slice_start, mut slice_end) = (0usize, 0usize);

    for p in inv.points() {
        if p >= slice_end {
            // Batches never span slices and state never survives into one.
            flush_batch(
                kernel.as_mut(),
                &binding.id,
                &mut batch_points,
                &mut batch_fields,
                need,
                &mut out,
                counts,
            )?;
            kernel.reset();
            let (s, e) = domain.slice_bounds(p);
            slice_start = s;
            slice_end = e;
        }
        let mut any_fill = false;
        let mut row = Vec::with_capacity(nfields);
        for input in &inputs {
            for &off in offsets {
                let q = (p as i64 + off).clamp(slice_start as i64, slice_end as i64 - 1) as usize;
                let el = planned(input, q, &op.name)?;
                any_fill |= el.is_fill();
                row.push(el);
            }
        }
        counts.computed += 1;
        if any_fill && !accepts_fill {
            // The kernel never sees this point; fill propagates instead.
            if need.contains(p) {
                out.insert(p, Element::fill());
            } else {
                counts.discarded_warmup += 1;
            }
            continue;
        }
        batch_points.push(p);
        for (f, el) in row.into_iter().enumerate() {
            batch_fields[f].push(el);
        }
        if batch_points.len() == binding.batch {
            flush_batch(
                kernel.as_mut(),
                &binding.id,
                &mut batch_points,
                &mut batch_fields,
                need,
                &mut out,
                counts,
            )?;
        }
    }
    flush_batch(
        kernel.as_mut(),
        &binding.id,
        &mut batch_points,
        &mut batch_fields,
        need,
        &mut out,
        counts,
    )?;
    Ok(out)
}

fn flush_batch(
    kernel: &mut dyn Kernel,
    kernel_id: &str,
    points: &mut Vec<usize>,
    fields: &mut [Vec<Element>],
    need: &RequiredSet,
    out: &mut HashMap<usize, Element>,
    counts: &mut ExecCounts,
) -> Result<()> {
    if points.is_empty() {
        return Ok(());
    }
    let field_refs: Vec<Vec<&[u8]>> = fields
        .iter()
        .map(|col| col.iter().map(|e| e.payload()).collect())
        .collect();
    let mut produced = Vec::with_capacity(points.len());
    kernel
        .invoke(
            &Batch {
                points,
                fields: &field_refs,
            },
            &mut produced,
        )
        .map_err(|reason| Error::Kernel {
            kernel: kernel_id.to_string(),
            reason,
        })?;
    if produced.len() != points.len() {
        return Err(Error::Kernel {
            kernel: kernel_id.to_string(),
            reason: format!(
                "produced {} outputs for {} points",
                produced.len(),
                points.len()
            ),
        });
    }
    for (&p, bytes) in points.iter().zip(produced) {
        if need.contains(p) {
            out.insert(p, Element::new(bytes));
        } else {
            counts.discarded_warmup += 1;
        }
    }
    points.clear();
    for col in fields.iter_mut() {
        col.clear();
    }
    Ok(())
}

//! Computation graphs over frame sequences.
//!
//! A graph wires named sources (stored columns) through operations into named
//! output columns. Operations never change sequence length in data-dependent
//! ways, so the length of every intermediate sequence is known before any
//! element is computed:
//!
//! * `map` / `stencil` / `bounded_state` preserve length,
//! * `sample` shortens a sequence according to a [`SampleStrategy`],
//! * `space` is the exact inverse and re-expands with fill elements,
//! * `slice` / `unslice` attach and remove slice boundaries that stop
//!   stencil windows and kernel state from crossing them.

mod infer;
mod strategy;
mod validate;

pub use infer::infer_domains;
pub use strategy::SampleStrategy;
pub use validate::{
    compile, validate_graph, CompiledGraph, ProducerId, ValidationReport, Violation,
};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::liveness::RequiredSet;

/// One element of a sequence: an immutable payload plus a fill marker.
///
/// Fill elements are placeholders inserted by `space`; they carry no payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    payload: Arc<[u8]>,
    fill: bool,
}

impl Element {
    pub fn new(payload: impl Into<Arc<[u8]>>) -> Self {
        Element {
            payload: payload.into(),
            fill: false,
        }
    }

    /// The placeholder inserted at non-selected positions by `space`.
    pub fn fill() -> Self {
        Element {
            payload: Arc::from(Vec::new()),
            fill: true,
        }
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn is_fill(&self) -> bool {
        self.fill
    }
}

/// The shape of one sequence: its length and optional slice boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceDomain {
    len: usize,
    /// Sorted slice start indices; when present the first is always 0.
    slice_starts: Option<Vec<usize>>,
}

impl SequenceDomain {
    pub fn new(len: usize) -> Self {
        SequenceDomain {
            len,
            slice_starts: None,
        }
    }

    /// A sliced domain. `starts` must begin with 0, increase strictly, and
    /// stay below `len`.
    pub fn sliced(len: usize, starts: Vec<usize>) -> std::result::Result<Self, String> {
        if starts.first() != Some(&0) {
            return Err("slice boundaries must start at 0".into());
        }
        if !starts.windows(2).all(|w| w[0] < w[1]) {
            return Err("slice boundaries must be strictly increasing".into());
        }
        if *starts.last().unwrap() >= len {
            return Err(format!(
                "slice boundary {} out of range for length {len}",
                starts.last().unwrap()
            ));
        }
        Ok(SequenceDomain {
            len,
            slice_starts: Some(starts),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_sliced(&self) -> bool {
        self.slice_starts.is_some()
    }

    pub fn slice_starts(&self) -> Option<&[usize]> {
        self.slice_starts.as_deref()
    }

    /// The same domain with slice boundaries removed.
    pub fn unsliced(&self) -> Self {
        SequenceDomain::new(self.len)
    }

    /// Bounds `[start, end)` of the slice containing `p`. An unsliced domain
    /// behaves as one slice covering the whole sequence.
    pub fn slice_bounds(&self, p: usize) -> (usize, usize) {
        debug_assert!(p < self.len);
        match &self.slice_starts {
            None => (0, self.len),
            Some(starts) => {
                let i = match starts.binary_search(&p) {
                    Ok(i) => i,
                    Err(i) => i - 1,
                };
                let end = starts.get(i + 1).copied().unwrap_or(self.len);
                (starts[i], end)
            }
        }
    }

    /// All slices as `[start, end)` pairs.
    pub fn slices(&self) -> Vec<(usize, usize)> {
        match &self.slice_starts {
            None => {
                if self.len == 0 {
                    Vec::new()
                } else {
                    vec![(0, self.len)]
                }
            }
            Some(starts) => {
                let mut out = Vec::with_capacity(starts.len());
                for (i, &s) in starts.iter().enumerate() {
                    let end = starts.get(i + 1).copied().unwrap_or(self.len);
                    out.push((s, end));
                }
                out
            }
        }
    }
}

/// State retention bound of a `bounded_state` operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Warmup {
    /// Output `i` depends on at most the `w` elements before it.
    Bounded(usize),
    /// Output `i` may depend on the entire prefix of its slice.
    Infinite,
}

/// How `slice` splits a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Partitioner {
    /// Slices of `len` consecutive elements (the last may be shorter).
    FixedLen(usize),
    /// Explicit slice start indices; must begin with 0.
    Boundaries(Vec<usize>),
}

/// What an operation does to its input sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OpKind {
    Map,
    Sample(SampleStrategy),
    Space {
        strategy: SampleStrategy,
        /// Output length; the strategy must select exactly the input length
        /// out of it. Spacing cannot recover the original length from the
        /// strategy alone, so it is carried explicitly.
        len: usize,
    },
    /// Per-element window access at the given offsets (strictly increasing,
    /// non-empty). Windows clamp at slice edges.
    Stencil(Vec<i64>),
    BoundedState(Warmup),
    Slice(Partitioner),
    Unslice,
}

impl OpKind {
    /// Map, stencil and bounded-state ops run a kernel; the rest only
    /// rearrange elements.
    pub fn needs_kernel(&self) -> bool {
        matches!(
            self,
            OpKind::Map | OpKind::Stencil(_) | OpKind::BoundedState(_)
        )
    }

    pub fn label(&self) -> &'static str {
        match self {
            OpKind::Map => "map",
            OpKind::Sample(_) => "sample",
            OpKind::Space { .. } => "space",
            OpKind::Stencil(_) => "stencil",
            OpKind::BoundedState(_) => "bounded_state",
            OpKind::Slice(_) => "slice",
            OpKind::Unslice => "unslice",
        }
    }
}

fn one() -> usize {
    1
}

/// Kernel attachment for map/stencil/bounded-state ops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBinding {
    pub id: String,
    /// Kernel-specific configuration, passed through verbatim.
    #[serde(default)]
    pub params: serde_json::Value,
    /// Maximum elements per kernel invocation.
    #[serde(default = "one")]
    pub batch: usize,
    /// CPU cores one instance of this op occupies.
    #[serde(default = "one")]
    pub cpu_cores: usize,
}

/// One operation of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpDecl {
    pub name: String,
    pub kind: OpKind,
    /// Number of input sequences. Sample/space/slice/unslice take exactly 1.
    #[serde(default = "one")]
    pub arity: usize,
    /// Advertised output payload size in bytes, when fixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelBinding>,
}

/// A named external input slot, bound to a stored column per job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_size: Option<usize>,
}

/// Connects a producer (source or op) to one input slot of an op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDecl {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub slot: usize,
}

/// Routes a producer's sequence to a named output column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputDecl {
    pub from: String,
    pub column: String,
}

/// A dataflow graph: sources, operations, wiring and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub sources: Vec<SourceDecl>,
    #[serde(default)]
    pub ops: Vec<OpDecl>,
    #[serde(default)]
    pub edges: Vec<EdgeDecl>,
    pub outputs: Vec<OutputDecl>,
}

/// Which output rows a job asks for.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PointsSpec {
    #[default]
    All,
    Stride(usize),
    Range {
        start: usize,
        end: usize,
    },
    Gather(Vec<usize>),
}

impl PointsSpec {
    /// Materializes the request against an output domain of length `n`.
    pub fn resolve(&self, n: usize) -> Result<RequiredSet> {
        match self {
            PointsSpec::All => Ok(RequiredSet::all(n)),
            PointsSpec::Stride(s) => {
                if *s == 0 {
                    return Err(Error::InvalidJob("points stride must be >= 1".into()));
                }
                Ok(RequiredSet::from_points((0..n).step_by(*s)))
            }
            PointsSpec::Range { start, end } => {
                if start > end || *end > n {
                    return Err(Error::InvalidJob(format!(
                        "points range [{start},{end}) invalid for output length {n}"
                    )));
                }
                Ok(RequiredSet::interval(*start, *end))
            }
            PointsSpec::Gather(idx) => {
                if !idx.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::InvalidJob(
                        "points gather indices must be strictly increasing".into(),
                    ));
                }
                if let Some(&last) = idx.last() {
                    if last >= n {
                        return Err(Error::InvalidJob(format!(
                            "points gather index {last} out of range for output length {n}"
                        )));
                    }
                }
                Ok(RequiredSet::from_points(idx.iter().copied()))
            }
        }
    }
}

// The on-disk shape is `{"kind": "...", ...}` with exactly the fields the
// kind uses; anything else is rejected.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointsRaw {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    indices: Option<Vec<usize>>,
}

impl Serialize for PointsSpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut raw = PointsRaw {
            kind: String::new(),
            stride: None,
            start: None,
            end: None,
            indices: None,
        };
        match self {
            PointsSpec::All => raw.kind = "all".into(),
            PointsSpec::Stride(s) => {
                raw.kind = "stride".into();
                raw.stride = Some(*s);
            }
            PointsSpec::Range { start, end } => {
                raw.kind = "range".into();
                raw.start = Some(*start);
                raw.end = Some(*end);
            }
            PointsSpec::Gather(idx) => {
                raw.kind = "gather".into();
                raw.indices = Some(idx.clone());
            }
        }
        raw.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for PointsSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let raw = PointsRaw::deserialize(de)?;
        let extras = |fields: &[(&str, bool)]| -> std::result::Result<(), D::Error> {
            for (name, present) in fields {
                if *present {
                    return Err(DeError::custom(format!(
                        "points kind `{}` does not take field `{name}`",
                        raw.kind
                    )));
                }
            }
            Ok(())
        };
        let stride = raw.stride.is_some();
        let start = raw.start.is_some();
        let end = raw.end.is_some();
        let indices = raw.indices.is_some();
        match raw.kind.as_str() {
            "all" => {
                extras(&[
                    ("stride", stride),
                    ("start", start),
                    ("end", end),
                    ("indices", indices),
                ])?;
                Ok(PointsSpec::All)
            }
            "stride" => {
                extras(&[("start", start), ("end", end), ("indices", indices)])?;
                Ok(PointsSpec::Stride(raw.stride.ok_or_else(|| {
                    DeError::custom("points kind `stride` requires field `stride`")
                })?))
            }
            "range" => {
                extras(&[("stride", stride), ("indices", indices)])?;
                match (raw.start, raw.end) {
                    (Some(start), Some(end)) => Ok(PointsSpec::Range { start, end }),
                    _ => Err(DeError::custom(
                        "points kind `range` requires fields `start` and `end`",
                    )),
                }
            }
            "gather" => {
                extras(&[("stride", stride), ("start", start), ("end", end)])?;
                Ok(PointsSpec::Gather(raw.indices.ok_or_else(|| {
                    DeError::custom("points kind `gather` requires field `indices`")
                })?))
            }
            other => Err(DeError::custom(format!("unknown points kind `{other}`"))),
        }
    }
}

/// A stored column reference: `table` + `column`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

/// Job-level knobs that change analysis semantics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobOptions {
    /// Error on stencil/warmup accesses outside slice bounds instead of
    /// clamping to the nearest valid element.
    pub strict_bounds: bool,
}

/// A runnable unit: a graph, its input bindings, and the requested rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub graph: GraphSpec,
    /// Source name -> stored column.
    pub inputs: BTreeMap<String, ColumnRef>,
    /// Output table name.
    pub output: String,
    #[serde(default)]
    pub points: PointsSpec,
    #[serde(default)]
    pub options: JobOptions,
}

impl JobSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("job spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_slice_bounds() {
        let d = SequenceDomain::sliced(10, vec![0, 4, 7]).unwrap();
        assert_eq!(d.slice_bounds(0), (0, 4));
        assert_eq!(d.slice_bounds(3), (0, 4));
        assert_eq!(d.slice_bounds(4), (4, 7));
        assert_eq!(d.slice_bounds(9), (7, 10));
        assert_eq!(d.slices(), vec![(0, 4), (4, 7), (7, 10)]);
        let u = SequenceDomain::new(5);
        assert_eq!(u.slice_bounds(2), (0, 5));
        assert_eq!(u.slices(), vec![(0, 5)]);
    }

    #[test]
    fn domain_slice_validation() {
        assert!(SequenceDomain::sliced(10, vec![1, 5]).is_err());
        assert!(SequenceDomain::sliced(10, vec![0, 5, 5]).is_err());
        assert!(SequenceDomain::sliced(10, vec![0, 10]).is_err());
        assert!(SequenceDomain::sliced(0, vec![0]).is_err());
    }

    #[test]
    fn fill_elements_are_empty() {
        let f = Element::fill();
        assert!(f.is_fill());
        assert!(f.payload().is_empty());
        let e = Element::new(vec![1, 2, 3]);
        assert!(!e.is_fill());
        assert_eq!(e.payload(), &[1, 2, 3]);
    }

    #[test]
    fn points_spec_json_round_trip() {
        for (text, spec) in [
            (r#"{"kind":"all"}"#, PointsSpec::All),
            (r#"{"kind":"stride","stride":24}"#, PointsSpec::Stride(24)),
            (
                r#"{"kind":"range","start":5,"end":9}"#,
                PointsSpec::Range { start: 5, end: 9 },
            ),
            (
                r#"{"kind":"gather","indices":[1,4,6]}"#,
                PointsSpec::Gather(vec![1, 4, 6]),
            ),
        ] {
            let parsed: PointsSpec = serde_json::from_str(text).unwrap();
            assert_eq!(parsed, spec);
            let back: PointsSpec =
                serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn points_spec_rejects_malformed_requests() {
        for text in [
            r#"{"kind":"everything"}"#,
            r#"{"kind":"stride"}"#,
            r#"{"kind":"all","stride":2}"#,
            r#"{"kind":"range","start":0}"#,
            r#"{"kind":"gather","indices":[1],"end":4}"#,
            r#"{"kind":"all","unknown":true}"#,
        ] {
            assert!(
                serde_json::from_str::<PointsSpec>(text).is_err(),
                "accepted: {text}"
            );
        }
    }

    #[test]
    fn points_resolution_bounds() {
        assert_eq!(
            PointsSpec::Stride(10).resolve(25).unwrap(),
            RequiredSet::from_points([0, 10, 20])
        );
        assert_eq!(PointsSpec::All.resolve(4).unwrap(), RequiredSet::all(4));
        assert!(PointsSpec::Range { start: 0, end: 5 }.resolve(4).is_err());
        assert!(PointsSpec::Gather(vec![3, 3]).resolve(10).is_err());
        assert!(PointsSpec::Gather(vec![10]).resolve(10).is_err());
        assert!(PointsSpec::Stride(0).resolve(10).is_err());
    }

    #[test]
    fn job_spec_rejects_unknown_fields() {
        let text = r#"{
            "graph": {"sources":[{"name":"in"}],"outputs":[{"from":"in","column":"out"}]},
            "inputs": {"in": {"table":"t","column":"c"}},
            "output": "dst",
            "frobnicate": 1
        }"#;
        let err = JobSpec::from_json(text).unwrap_err();
        assert!(err.to_string().contains("frobnicate"), "{err}");
    }

    #[test]
    fn op_kind_json_shapes() {
        let op: OpDecl =
            serde_json::from_str(r#"{"name":"s","kind":{"sample":{"stride":10}}}"#).unwrap();
        assert_eq!(op.kind, OpKind::Sample(SampleStrategy::Stride(10)));
        assert_eq!(op.arity, 1);

        let op: OpDecl = serde_json::from_str(
            r#"{"name":"w","kind":{"bounded_state":{"bounded":2}},
                "kernel":{"id":"sliding_mean"}}"#,
        )
        .unwrap();
        assert_eq!(op.kind, OpKind::BoundedState(Warmup::Bounded(2)));
        assert_eq!(op.kernel.as_ref().unwrap().batch, 1);

        let op: OpDecl = serde_json::from_str(
            r#"{"name":"sp","kind":{"space":{"strategy":{"stride":10},"len":18000}}}"#,
        )
        .unwrap();
        assert!(matches!(op.kind, OpKind::Space { len: 18000, .. }));

        let op: OpDecl =
            serde_json::from_str(r#"{"name":"sl","kind":{"slice":{"fixed_len":100}}}"#).unwrap();
        assert_eq!(op.kind, OpKind::Slice(Partitioner::FixedLen(100)));

        let op: OpDecl = serde_json::from_str(r#"{"name":"u","kind":"unslice"}"#).unwrap();
        assert_eq!(op.kind, OpKind::Unslice);

        assert!(serde_json::from_str::<OpDecl>(r#"{"name":"x","kind":"map","stride":3}"#).is_err());
    }
}

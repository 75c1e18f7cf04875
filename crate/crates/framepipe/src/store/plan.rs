//! Decode planning: turn a sparse frame request into sequential decode runs.
//!
//! Delta frames decode only after their predecessor, so reading frame `f`
//! means decoding forward from the last keyframe at or before `f`. The
//! planner walks the request in order, extending the current run while the
//! next frame's keyframe falls inside (or immediately after) what will
//! already be decoded, and seeking otherwise. The decoded set equals the
//! union of per-frame keyframe walks, so no plan decodes less.

use crate::liveness::RequiredSet;

/// Read accounting, summed across spans and columns.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ReadCounters {
    /// Frames run through the decoder, wanted or not.
    pub frames_decoded: u64,
    /// Rows actually handed to the caller.
    pub frames_emitted: u64,
    /// Record bytes consumed, headers included.
    pub bytes_read: u64,
}

impl ReadCounters {
    pub fn add(&mut self, other: &ReadCounters) {
        self.frames_decoded += other.frames_decoded;
        self.frames_emitted += other.frames_emitted;
        self.bytes_read += other.bytes_read;
    }
}

/// One sequential decode run: seek to `start` (always a keyframe) and decode
/// every frame in `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeSpan {
    pub start: usize,
    pub end: usize,
}

/// A full plan for one request against one frame column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodePlan {
    /// Disjoint, ascending, non-adjacent spans.
    pub spans: Vec<DecodeSpan>,
    /// Frames to hand to the caller; a subset of the spans.
    pub emit: RequiredSet,
}

impl DecodePlan {
    pub fn frames_decoded(&self) -> u64 {
        self.spans.iter().map(|s| (s.end - s.start) as u64).sum()
    }

    pub fn frames_emitted(&self) -> u64 {
        self.emit.len() as u64
    }
}

/// Plans the decode of `required` given the column's keyframe positions
/// (ascending, starting with 0).
///
/// Seeks only when the governing keyframe lies strictly past the end of the
/// current run; a keyframe exactly at the end continues sequentially, which
/// costs the same frames without a seek.
pub fn plan_decode(keyframes: &[usize], required: &RequiredSet) -> DecodePlan {
    debug_assert!(keyframes.is_empty() || keyframes[0] == 0);
    let mut spans: Vec<DecodeSpan> = Vec::new();
    for f in required.points() {
        let i = keyframes.partition_point(|&k| k <= f);
        debug_assert!(i > 0, "frame 0 is always a keyframe");
        let k = keyframes[i - 1];
        match spans.last_mut() {
            // `required` ascends, so f + 1 only ever grows the span.
            Some(s) if k <= s.end => s.end = f + 1,
            _ => spans.push(DecodeSpan {
                start: k,
                end: f + 1,
            }),
        }
    }
    DecodePlan {
        spans,
        emit: required.clone(),
    }
}

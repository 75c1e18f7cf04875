//! Run-length encoded sets of sequence indices.
//!
//! A [`RequiredSet`] stores which elements of a sequence are needed as sorted,
//! disjoint, non-adjacent half-open intervals. Dense ranges cost one run;
//! scattered gather patterns degrade to one run per point.

use serde::{Deserialize, Serialize};

/// A set of sequence indices, canonically encoded as sorted disjoint runs.
///
/// Runs are half-open `[start, end)`, non-empty, and separated by at least one
/// missing index, so equal sets always compare equal structurally.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RequiredSet {
    runs: Vec<(usize, usize)>,
}

impl RequiredSet {
    /// The empty set.
    pub fn empty() -> Self {
        RequiredSet { runs: Vec::new() }
    }

    /// The single interval `[start, end)`; empty when `start >= end`.
    pub fn interval(start: usize, end: usize) -> Self {
        if start >= end {
            return Self::empty();
        }
        RequiredSet {
            runs: vec![(start, end)],
        }
    }

    /// Every index of a length-`len` sequence.
    pub fn all(len: usize) -> Self {
        Self::interval(0, len)
    }

    /// Builds a set from arbitrary points (unsorted, duplicates allowed).
    pub fn from_points<I: IntoIterator<Item = usize>>(points: I) -> Self {
        let mut pts: Vec<usize> = points.into_iter().collect();
        pts.sort_unstable();
        pts.dedup();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for p in pts {
            match runs.last_mut() {
                Some((_, end)) if *end == p => *end += 1,
                _ => runs.push((p, p + 1)),
            }
        }
        RequiredSet { runs }
    }

    /// Builds a set from arbitrary intervals, normalizing overlap/adjacency.
    pub fn from_intervals<I: IntoIterator<Item = (usize, usize)>>(intervals: I) -> Self {
        let mut ivs: Vec<(usize, usize)> = intervals.into_iter().filter(|(s, e)| s < e).collect();
        ivs.sort_unstable();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for (s, e) in ivs {
            match runs.last_mut() {
                Some((_, end)) if *end >= s => *end = (*end).max(e),
                _ => runs.push((s, e)),
            }
        }
        RequiredSet { runs }
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Number of indices in the set.
    pub fn len(&self) -> usize {
        self.runs.iter().map(|(s, e)| e - s).sum()
    }

    /// Number of runs in the encoding.
    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    pub fn contains(&self, p: usize) -> bool {
        self.runs
            .binary_search_by(|&(s, e)| {
                if p < s {
                    std::cmp::Ordering::Greater
                } else if p >= e {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .is_ok()
    }

    pub fn first(&self) -> Option<usize> {
        self.runs.first().map(|&(s, _)| s)
    }

    pub fn last(&self) -> Option<usize> {
        self.runs.last().map(|&(_, e)| e - 1)
    }

    /// The runs as sorted disjoint `[start, end)` pairs.
    pub fn runs(&self) -> &[(usize, usize)] {
        &self.runs
    }

    /// Iterates all indices in ascending order.
    pub fn points(&self) -> impl Iterator<Item = usize> + '_ {
        self.runs.iter().flat_map(|&(s, e)| s..e)
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::from_intervals(self.runs.iter().chain(other.runs.iter()).copied())
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let mut runs = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.runs.len() && j < other.runs.len() {
            let (a, b) = self.runs[i];
            let (c, d) = other.runs[j];
            let (s, e) = (a.max(c), b.min(d));
            if s < e {
                runs.push((s, e));
            }
            if b <= d {
                i += 1;
            } else {
                j += 1;
            }
        }
        RequiredSet { runs }
    }

    /// Restricts the set to `[start, end)`.
    pub fn clamp_to(&self, start: usize, end: usize) -> Self {
        self.intersect(&Self::interval(start, end))
    }

    /// Shifts every index by `delta`, dropping indices that fall below zero.
    pub fn translate(&self, delta: i64) -> Self {
        let runs = self
            .runs
            .iter()
            .filter_map(|&(s, e)| {
                let (s, e) = (s as i64 + delta, e as i64 + delta);
                if e <= 0 {
                    None
                } else {
                    Some((s.max(0) as usize, e as usize))
                }
            })
            .collect();
        // Translation preserves order, disjointness and gaps.
        RequiredSet { runs }
    }

    /// True when every index of `self` is in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.intersect(other) == *self
    }

    /// Formats as a compact interval list, e.g. `[0,4) [10,11)`.
    pub fn display(&self) -> String {
        if self.runs.is_empty() {
            return "(empty)".to_string();
        }
        self.runs
            .iter()
            .map(|(s, e)| format!("[{s},{e})"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl FromIterator<usize> for RequiredSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::from_points(iter)
    }
}

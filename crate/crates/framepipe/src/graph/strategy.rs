//! Index arithmetic for sampling and spacing.
//!
//! A strategy selects a subset of the indices of a length-`n` sequence.
//! Sampling keeps exactly the selected indices (re-numbered densely);
//! spacing is its inverse and re-expands a dense sequence onto the selected
//! positions of a longer one, with fill everywhere else.

use serde::{Deserialize, Serialize};

/// How a sample or space operation picks indices out of a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleStrategy {
    /// Every `stride`-th index starting at 0.
    Stride(usize),
    /// Indices `start, start+step, ...` strictly below `end`.
    Range {
        start: usize,
        end: usize,
        step: usize,
    },
    /// An explicit, strictly increasing index list.
    Gather(Vec<usize>),
}

impl SampleStrategy {
    /// Structural validity, independent of any sequence length.
    pub fn check_params(&self) -> Result<(), String> {
        match self {
            SampleStrategy::Stride(s) => {
                if *s == 0 {
                    return Err("stride must be >= 1".into());
                }
            }
            SampleStrategy::Range { start, end, step } => {
                if *step == 0 {
                    return Err("range step must be >= 1".into());
                }
                if start > end {
                    return Err(format!("range start {start} exceeds end {end}"));
                }
            }
            SampleStrategy::Gather(idx) => {
                if !idx.windows(2).all(|w| w[0] < w[1]) {
                    return Err("gather indices must be strictly increasing".into());
                }
            }
        }
        Ok(())
    }

    /// Checks that every selected index lies inside a length-`n` sequence.
    pub fn check_bounds(&self, n: usize) -> Result<(), String> {
        match self {
            SampleStrategy::Stride(_) => Ok(()),
            SampleStrategy::Range { end, start, .. } => {
                if *end > n && *start < *end {
                    Err(format!("range end {end} exceeds sequence length {n}"))
                } else {
                    Ok(())
                }
            }
            SampleStrategy::Gather(idx) => match idx.last() {
                Some(&last) if last >= n => {
                    Err(format!("gather index {last} out of range for length {n}"))
                }
                _ => Ok(()),
            },
        }
    }

    /// Number of indices selected from a length-`n` sequence.
    pub fn selected_count(&self, n: usize) -> usize {
        match self {
            SampleStrategy::Stride(s) => n.div_ceil(*s),
            SampleStrategy::Range { start, end, step } => {
                let end = (*end).min(n);
                if *start >= end {
                    0
                } else {
                    (end - start).div_ceil(*step)
                }
            }
            SampleStrategy::Gather(idx) => idx.len(),
        }
    }

    /// The `j`-th selected index (caller keeps `j < selected_count`).
    pub fn select(&self, j: usize) -> usize {
        match self {
            SampleStrategy::Stride(s) => j * s,
            SampleStrategy::Range { start, step, .. } => start + j * step,
            SampleStrategy::Gather(idx) => idx[j],
        }
    }

    /// The dense rank of index `i` if it is selected.
    pub fn position_of(&self, i: usize) -> Option<usize> {
        match self {
            SampleStrategy::Stride(s) => i.is_multiple_of(*s).then(|| i / s),
            SampleStrategy::Range { start, end, step } => {
                if i < *start || i >= *end || !(i - start).is_multiple_of(*step) {
                    None
                } else {
                    Some((i - start) / step)
                }
            }
            SampleStrategy::Gather(idx) => idx.binary_search(&i).ok(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stride_selection() {
        let s = SampleStrategy::Stride(30);
        assert_eq!(s.selected_count(1800), 60);
        assert_eq!(s.select(0), 0);
        assert_eq!(s.select(59), 1770);
        assert_eq!(s.position_of(1770), Some(59));
        assert_eq!(s.position_of(1771), None);
        // Last partial stride still selects its leading index.
        assert_eq!(s.selected_count(1801), 61);
    }

    #[test]
    fn range_selection() {
        let s = SampleStrategy::Range {
            start: 10,
            end: 20,
            step: 3,
        };
        assert_eq!(s.selected_count(100), 4); // 10, 13, 16, 19
        assert_eq!(s.select(3), 19);
        assert_eq!(s.position_of(16), Some(2));
        assert_eq!(s.position_of(11), None);
        assert_eq!(s.position_of(20), None);
    }

    #[test]
    fn gather_selection() {
        let s = SampleStrategy::Gather(vec![4, 7, 99]);
        assert_eq!(s.selected_count(100), 3);
        assert_eq!(s.select(1), 7);
        assert_eq!(s.position_of(99), Some(2));
        assert_eq!(s.position_of(5), None);
        assert!(s.check_bounds(100).is_ok());
        assert!(s.check_bounds(99).is_err());
    }

    #[test]
    fn param_checks_reject_degenerate_inputs() {
        assert!(SampleStrategy::Stride(0).check_params().is_err());
        assert!(SampleStrategy::Range {
            start: 5,
            end: 4,
            step: 1
        }
        .check_params()
        .is_err());
        assert!(SampleStrategy::Range {
            start: 0,
            end: 4,
            step: 0
        }
        .check_params()
        .is_err());
        assert!(SampleStrategy::Gather(vec![3, 3]).check_params().is_err());
        assert!(SampleStrategy::Gather(vec![]).check_params().is_ok());
    }

    #[test]
    fn strategy_json_shape() {
        let s: SampleStrategy = serde_json::from_str(r#"{"stride":24}"#).unwrap();
        assert_eq!(s, SampleStrategy::Stride(24));
        let s: SampleStrategy =
            serde_json::from_str(r#"{"range":{"start":0,"end":9,"step":2}}"#).unwrap();
        assert_eq!(s.selected_count(100), 5);
        assert!(serde_json::from_str::<SampleStrategy>(
            r#"{"range":{"start":0,"end":9,"step":2,"bogus":1}}"#
        )
        .is_err());
    }

    fn strategies() -> impl Strategy<Value = SampleStrategy> {
        prop_oneof![
            (1usize..40).prop_map(SampleStrategy::Stride),
            (0usize..50, 0usize..60, 1usize..10).prop_filter_map("start<=end", |(a, b, st)| {
                (a <= b).then_some(SampleStrategy::Range {
                    start: a,
                    end: b,
                    step: st,
                })
            }),
            proptest::collection::btree_set(0usize..60, 0..20)
                .prop_map(|s| SampleStrategy::Gather(s.into_iter().collect())),
        ]
    }

    proptest! {
        // select/position_of/selected_count all agree with brute-force
        // enumeration of the selected index set.
        #[test]
        fn agrees_with_enumeration(s in strategies(), n in 0usize..120) {
            prop_assume!(s.check_params().is_ok());
            prop_assume!(s.check_bounds(n).is_ok());
            let enumerated: Vec<usize> =
                (0..n).filter(|&i| s.position_of(i).is_some()).collect();
            prop_assert_eq!(s.selected_count(n), enumerated.len());
            for (j, &i) in enumerated.iter().enumerate() {
                prop_assert_eq!(s.select(j), i);
                prop_assert_eq!(s.position_of(i), Some(j));
            }
        }
    }
}

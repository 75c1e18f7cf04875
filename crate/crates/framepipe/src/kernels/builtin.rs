//! Built-in kernels.

use std::collections::VecDeque;

use serde::Deserialize;

use super::{Batch, Kernel, KernelDef, Registry};
use crate::graph::{OpDecl, OpKind, Warmup};

/// Interpretation of fixed-width little-endian numeric payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumFormat {
    U8,
    U16,
    U32,
    #[default]
    U64,
    F64,
}

impl NumFormat {
    pub fn width(self) -> usize {
        match self {
            NumFormat::U8 => 1,
            NumFormat::U16 => 2,
            NumFormat::U32 => 4,
            NumFormat::U64 | NumFormat::F64 => 8,
        }
    }

    pub fn parse(self, bytes: &[u8]) -> Result<f64, String> {
        if bytes.len() != self.width() {
            return Err(format!(
                "expected {}-byte numeric payload, got {} bytes",
                self.width(),
                bytes.len()
            ));
        }
        Ok(match self {
            NumFormat::U8 => bytes[0] as f64,
            NumFormat::U16 => u16::from_le_bytes(bytes.try_into().unwrap()) as f64,
            NumFormat::U32 => u32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            NumFormat::U64 => u64::from_le_bytes(bytes.try_into().unwrap()) as f64,
            NumFormat::F64 => f64::from_le_bytes(bytes.try_into().unwrap()),
        })
    }
}

fn parse_params<T: serde::de::DeserializeOwned + Default>(op: &OpDecl) -> Result<T, String> {
    let params = &op.kernel.as_ref().expect("kernel op").params;
    if params.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(params.clone()).map_err(|e| format!("bad params: {e}"))
}

fn single_field<'a>(batch: &'a Batch<'_>, i: usize) -> Result<&'a [u8], String> {
    if batch.fields.len() != 1 {
        return Err(format!("expected 1 field, got {}", batch.fields.len()));
    }
    Ok(batch.fields[0][i])
}

/// 256-bin byte histogram of the payload; output is 256 u64 counters
/// (little-endian), which always sum to the payload length.
struct ByteHistogram;

impl Kernel for ByteHistogram {
    fn invoke(&mut self, batch: &Batch<'_>, out: &mut Vec<Vec<u8>>) -> Result<(), String> {
        for i in 0..batch.len() {
            let payload = single_field(batch, i)?;
            let mut bins = [0u64; 256];
            for &b in payload {
                bins[b as usize] += 1;
            }
            let mut buf = Vec::with_capacity(256 * 8);
            for c in bins {
                buf.extend_from_slice(&c.to_le_bytes());
            }
            out.push(buf);
        }
        Ok(())
    }
}

/// Sum of per-byte wraparound distances `min(d, 256-d)` between two equal-size
/// payloads; output is one u64 (little-endian).
struct FrameDeltaSum;

impl Kernel for FrameDeltaSum {
    fn invoke(&mut self, batch: &Batch<'_>, out: &mut Vec<Vec<u8>>) -> Result<(), String> {
        if batch.fields.len() != 2 {
            return Err(format!("expected 2 fields, got {}", batch.fields.len()));
        }
        for i in 0..batch.len() {
            let (a, b) = (batch.fields[0][i], batch.fields[1][i]);
            if a.len() != b.len() {
                return Err(format!(
                    "payload sizes differ: {} vs {} bytes",
                    a.len(),
                    b.len()
                ));
            }
            let sum: u64 = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x.wrapping_sub(y) as u16;
                    d.min(256 - d) as u64
                })
                .sum();
            out.push(sum.to_le_bytes().to_vec());
        }
        Ok(())
    }
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SlidingMeanParams {
    input: NumFormat,
}

/// Mean over the values seen at points `i-W ..= i`, where `W` is the op's
/// declared warmup bound; output is one f64 (little-endian). Over a gap-free
/// stream this is the mean of the last `min(i+1, W+1)` values.
///
/// The window evicts by point distance rather than by count, so output `i`
/// never depends on anything older than `i-W`, and it is re-summed in arrival
/// order on every invocation. Both together make results bit-stable under any
/// packetization and under fill gaps.
struct SlidingMean {
    fmt: NumFormat,
    w: usize,
    window: VecDeque<(usize, f64)>,
}

impl Kernel for SlidingMean {
    fn reset(&mut self) {
        self.window.clear();
    }

    fn invoke(&mut self, batch: &Batch<'_>, out: &mut Vec<Vec<u8>>) -> Result<(), String> {
        for i in 0..batch.len() {
            let p = batch.points[i];
            let v = self.fmt.parse(single_field(batch, i)?)?;
            while self.window.front().is_some_and(|&(q, _)| q + self.w < p) {
                self.window.pop_front();
            }
            self.window.push_back((p, v));
            let mean = self.window.iter().map(|&(_, v)| v).sum::<f64>() / self.window.len() as f64;
            out.push(mean.to_le_bytes().to_vec());
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdParams {
    tau: f64,
    #[serde(default)]
    input: NumFormat,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams {
            tau: 0.0,
            input: NumFormat::default(),
        }
    }
}

/// Emits one byte per element: 1 when the numeric input exceeds `tau`.
struct ThresholdDetector {
    tau: f64,
    fmt: NumFormat,
}

impl Kernel for ThresholdDetector {
    fn invoke(&mut self, batch: &Batch<'_>, out: &mut Vec<Vec<u8>>) -> Result<(), String> {
        for i in 0..batch.len() {
            let v = self.fmt.parse(single_field(batch, i)?)?;
            out.push(vec![u8::from(v > self.tau)]);
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecimateParams {
    k: usize,
}

impl Default for DecimateParams {
    fn default() -> Self {
        DecimateParams { k: 1 }
    }
}

/// Keeps the first `floor(len/k)` of every `k`-th byte.
struct Decimate {
    k: usize,
}

impl Kernel for Decimate {
    fn invoke(&mut self, batch: &Batch<'_>, out: &mut Vec<Vec<u8>>) -> Result<(), String> {
        for i in 0..batch.len() {
            let payload = single_field(batch, i)?;
            let take = payload.len() / self.k;
            out.push(payload.iter().copied().step_by(self.k).take(take).collect());
        }
        Ok(())
    }
}

pub(super) fn install(r: &mut Registry) {
    r.register(
        "byte_histogram",
        KernelDef::new(|op| {
            parse_params::<NoParams>(op)?;
            Ok(Box::new(ByteHistogram))
        }),
    );
    r.register(
        "frame_delta_sum",
        KernelDef::new(|op| {
            parse_params::<NoParams>(op)?;
            Ok(Box::new(FrameDeltaSum))
        }),
    );
    r.register(
        "sliding_mean",
        KernelDef::new(|op| {
            let p: SlidingMeanParams = parse_params(op)?;
            let w = match op.kind {
                OpKind::BoundedState(Warmup::Bounded(w)) => w,
                _ => {
                    return Err(
                        "sliding_mean requires a bounded_state op with bounded warmup".into(),
                    )
                }
            };
            Ok(Box::new(SlidingMean {
                fmt: p.input,
                w,
                window: VecDeque::new(),
            }))
        }),
    );
    r.register(
        "threshold_detector",
        KernelDef::new(|op| {
            let p: ThresholdParams = parse_params(op)?;
            Ok(Box::new(ThresholdDetector {
                tau: p.tau,
                fmt: p.input,
            }))
        }),
    );
    r.register(
        "decimate",
        KernelDef::new(|op| {
            let p: DecimateParams = parse_params(op)?;
            if p.k == 0 {
                return Err("decimate step k must be >= 1".into());
            }
            Ok(Box::new(Decimate { k: p.k }))
        }),
    );
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::KernelBinding;
    use rand::{Rng, SeedableRng};

    fn op_with(kind: OpKind, id: &str, params: serde_json::Value) -> OpDecl {
        OpDecl {
            name: "t".into(),
            kind,
            arity: 1,
            element_size: None,
            kernel: Some(KernelBinding {
                id: id.into(),
                params,
                batch: 8,
                cpu_cores: 1,
            }),
        }
    }

    fn run_one(k: &mut dyn Kernel, fields: Vec<Vec<&[u8]>>) -> Vec<Vec<u8>> {
        let points: Vec<usize> = (0..fields[0].len()).collect();
        let batch = Batch {
            points: &points,
            fields: &fields,
        };
        let mut out = Vec::new();
        k.invoke(&batch, &mut out).unwrap();
        out
    }

    fn builtin(kind: OpKind, id: &str, params: serde_json::Value) -> Box<dyn Kernel> {
        Registry::builtin()
            .instantiate(&op_with(kind, id, params))
            .unwrap()
    }

    #[test]
    fn histogram_counts_sum_to_payload_length() {
        let mut k = builtin(OpKind::Map, "byte_histogram", serde_json::Value::Null);
        let payload = [0u8, 0, 1, 255];
        let out = run_one(k.as_mut(), vec![vec![&payload]]);
        assert_eq!(out[0].len(), 2048);
        let bin = |b: usize| u64::from_le_bytes(out[0][b * 8..b * 8 + 8].try_into().unwrap());
        assert_eq!(bin(0), 2);
        assert_eq!(bin(1), 1);
        assert_eq!(bin(255), 1);
        assert_eq!((0..256).map(bin).sum::<u64>(), payload.len() as u64);
    }

    #[test]
    fn delta_sum_uses_wraparound_distance() {
        let mut k = builtin(
            OpKind::Stencil(vec![0, 1]),
            "frame_delta_sum",
            serde_json::Value::Null,
        );
        let mut sum = |a: &[u8], b: &[u8]| {
            let out = run_one(k.as_mut(), vec![vec![a], vec![b]]);
            u64::from_le_bytes(out[0][..8].try_into().unwrap())
        };
        assert_eq!(sum(&[10], &[250]), 16);
        assert_eq!(sum(&[250], &[10]), 16); // symmetric
        assert_eq!(sum(&[7, 7], &[7, 7]), 0);
        // A frame vs itself shifted by +1 (mod 256) scores 1 per byte.
        let f: Vec<u8> = (0..64).map(|j| (j * 37 % 256) as u8).collect();
        let g: Vec<u8> = f.iter().map(|b| b.wrapping_add(1)).collect();
        assert_eq!(sum(&f, &g), 64);
    }

    #[test]
    fn delta_sum_rejects_size_mismatch() {
        let mut k = builtin(OpKind::Map, "frame_delta_sum", serde_json::Value::Null);
        let fields: Vec<Vec<&[u8]>> = vec![vec![&[1, 2]], vec![&[1]]];
        let batch = Batch {
            points: &[0],
            fields: &fields,
        };
        assert!(k.invoke(&batch, &mut Vec::new()).is_err());
    }

    #[test]
    fn sliding_mean_averages_last_w_plus_one() {
        let mut k = builtin(
            OpKind::BoundedState(Warmup::Bounded(2)),
            "sliding_mean",
            serde_json::json!({"input": "f64"}),
        );
        let vals: Vec<[u8; 8]> = [1.0f64, 2.0, 3.0, 4.0]
            .iter()
            .map(|v| v.to_le_bytes())
            .collect();
        let fields: Vec<Vec<&[u8]>> = vec![vals.iter().map(|v| &v[..]).collect()];
        let out = run_one(k.as_mut(), fields);
        let means: Vec<f64> = out
            .iter()
            .map(|o| f64::from_le_bytes(o[..8].try_into().unwrap()))
            .collect();
        assert_eq!(means, vec![1.0, 1.5, 2.0, 3.0]);

        // reset drops history
        k.reset();
        let v = 10.0f64.to_le_bytes();
        let out = run_one(k.as_mut(), vec![vec![&v[..]]]);
        assert_eq!(f64::from_le_bytes(out[0][..8].try_into().unwrap()), 10.0);
    }

    #[test]
    fn sliding_mean_requires_bounded_state_kind() {
        let err = Registry::builtin()
            .instantiate(&op_with(
                OpKind::Map,
                "sliding_mean",
                serde_json::Value::Null,
            ))
            .err()
            .unwrap();
        assert!(err.to_string().contains("bounded_state"), "{err}");
    }

    #[test]
    fn threshold_compares_numeric_value() {
        let mut k = builtin(
            OpKind::Map,
            "threshold_detector",
            serde_json::json!({"tau": 5.0, "input": "u64"}),
        );
        let five = 5u64.to_le_bytes();
        let six = 6u64.to_le_bytes();
        let out = run_one(k.as_mut(), vec![vec![&five[..], &six[..]]]);
        assert_eq!(out, vec![vec![0], vec![1]]);

        let mut k = builtin(
            OpKind::Map,
            "threshold_detector",
            serde_json::json!({"tau": 0.5, "input": "u8"}),
        );
        let out = run_one(k.as_mut(), vec![vec![&[0u8][..], &[1u8][..]]]);
        assert_eq!(out, vec![vec![0], vec![1]]);
    }

    #[test]
    fn decimate_keeps_floor_len_over_k_bytes() {
        let mut k = builtin(OpKind::Map, "decimate", serde_json::json!({"k": 3}));
        let payload: Vec<u8> = (0..10).collect();
        let out = run_one(k.as_mut(), vec![vec![&payload]]);
        assert_eq!(out[0], vec![0, 3, 6]); // floor(10/3) = 3 bytes

        let mut k = builtin(OpKind::Map, "decimate", serde_json::json!({"k": 1}));
        let out = run_one(k.as_mut(), vec![vec![&payload]]);
        assert_eq!(out[0], payload); // identity

        let mut k = builtin(OpKind::Map, "decimate", serde_json::json!({"k": 10}));
        let out = run_one(k.as_mut(), vec![vec![&payload]]);
        assert_eq!(out[0], vec![0]);

        let mut k = builtin(OpKind::Map, "decimate", serde_json::json!({"k": 11}));
        let out = run_one(k.as_mut(), vec![vec![&payload]]);
        assert!(out[0].is_empty());
    }

    #[test]
    fn decimate_rejects_zero_step() {
        let err = Registry::builtin()
            .instantiate(&op_with(
                OpKind::Map,
                "decimate",
                serde_json::json!({"k": 0}),
            ))
            .err()
            .unwrap();
        assert!(err.to_string().contains(">= 1"), "{err}");
    }

    #[test]
    fn registry_rejects_unknown_ids_and_bad_params() {
        let r = Registry::builtin();
        assert!(r
            .instantiate(&op_with(
                OpKind::Map,
                "no_such_kernel",
                serde_json::Value::Null
            ))
            .is_err());
        assert!(r
            .instantiate(&op_with(
                OpKind::Map,
                "byte_histogram",
                serde_json::json!({"unexpected": 1})
            ))
            .is_err());
    }

    // One batch of n points must equal n single-point invocations, including
    // for the stateful kernel.
    #[test]
    fn batched_equals_elementwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let payloads: Vec<Vec<u8>> = (0..16)
            .map(|_| (0..8).map(|_| rng.random::<u8>()).collect())
            .collect();
        let cases: Vec<(OpKind, &str, serde_json::Value)> = vec![
            (OpKind::Map, "byte_histogram", serde_json::Value::Null),
            (
                OpKind::BoundedState(Warmup::Bounded(3)),
                "sliding_mean",
                serde_json::json!({"input": "u64"}),
            ),
            (
                OpKind::Map,
                "threshold_detector",
                serde_json::json!({"tau": 1e18, "input": "u64"}),
            ),
            (OpKind::Map, "decimate", serde_json::json!({"k": 2})),
        ];
        for (kind, id, params) in cases {
            let mut whole = builtin(kind.clone(), id, params.clone());
            let fields: Vec<Vec<&[u8]>> = vec![payloads.iter().map(|p| p.as_slice()).collect()];
            let batched = run_one(whole.as_mut(), fields);

            let mut single = builtin(kind, id, params);
            let mut one_by_one = Vec::new();
            for (i, p) in payloads.iter().enumerate() {
                let fields: Vec<Vec<&[u8]>> = vec![vec![p.as_slice()]];
                let batch = Batch {
                    points: &[i],
                    fields: &fields,
                };
                single.invoke(&batch, &mut one_by_one).unwrap();
            }
            assert_eq!(batched, one_by_one, "kernel {id}");
        }
    }
}

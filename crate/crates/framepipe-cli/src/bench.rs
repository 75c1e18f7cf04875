//! Decode-cost benchmark over canned access patterns.
//!
//! The primary quantities are the deterministic work counters (frames
//! decoded, frames emitted, bytes read); wall time is printed for
//! orientation but varies with hardware. One CSV row per (pattern, column),
//! where the `K` field identifies the column's keyframe spacing.

use std::time::Instant;

use clap::Args;
use framepipe::liveness::RequiredSet;
use framepipe::store::{ColumnKind, Store};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{AppError, AppResult};

const DEFAULT_PATTERNS: [&str; 5] = ["stride-1", "stride-24", "gather", "range", "keyframe"];

#[derive(Args)]
pub struct BenchArgs {
    /// Table to read.
    #[arg(long)]
    pub table: String,

    /// Frame columns to measure (default: every frame column of the table).
    #[arg(long, value_name = "NAME", value_delimiter = ',')]
    pub columns: Vec<String>,

    /// Access patterns: stride-N, gather (0.25% random rows), range
    /// (blocks of 2000 per 20000), keyframe (keyframe rows only).
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PATTERNS.map(String::from))]
    pub patterns: Vec<String>,

    /// Seed for the gather pattern's row choice.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Rows a named pattern reads from a column of `rows` rows.
fn pattern_rows(
    name: &str,
    rows: usize,
    keyframes: &[usize],
    seed: u64,
) -> AppResult<RequiredSet> {
    if let Some(s) = name.strip_prefix("stride-") {
        let stride: usize = s
            .parse()
            .ok()
            .filter(|&s| s > 0)
            .ok_or_else(|| AppError::Usage(format!("bad pattern `{name}`")))?;
        return Ok(RequiredSet::from_points((0..rows).step_by(stride)));
    }
    match name {
        "gather" => {
            let k = (rows / 400).clamp(1, rows.max(1));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(RequiredSet::from_points(
                rand::seq::index::sample(&mut rng, rows, k.min(rows)),
            ))
        }
        "range" => Ok(RequiredSet::from_intervals(
            (0..rows).step_by(20_000).map(|b| (b, rows.min(b + 2000))),
        )),
        "keyframe" => Ok(RequiredSet::from_points(keyframes.iter().copied())),
        other => Err(AppError::Usage(format!(
            "unknown pattern `{other}`: expected stride-N, gather, range or keyframe"
        ))),
    }
}

/// Keyframe spacing when it is uniform, the row count for a single-keyframe
/// column, and 0 for irregular layouts.
fn uniform_interval(keyframes: &[usize], rows: usize) -> usize {
    match keyframes {
        [] | [_] => rows,
        ks => {
            let d = ks[1] - ks[0];
            if ks.windows(2).all(|w| w[1] - w[0] == d) {
                d
            } else {
                0
            }
        }
    }
}

pub fn cmd_bench(store: &Store, a: &BenchArgs) -> AppResult<()> {
    let manifest = store.manifest(&a.table)?;
    let columns: Vec<String> = if a.columns.is_empty() {
        manifest
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Frame)
            .map(|c| c.name.clone())
            .collect()
    } else {
        a.columns.clone()
    };
    if columns.is_empty() {
        return Err(AppError::Usage(format!(
            "table `{}` has no frame columns to bench",
            a.table
        )));
    }

    println!("pattern,K,frames_decoded,frames_emitted,bytes_read,ms");
    for column in &columns {
        let mut reader = store.reader(&a.table, column)?;
        let keyframes = reader
            .keyframe_positions()
            .ok_or_else(|| {
                AppError::Usage(format!("column `{column}` is not a frame column"))
            })?
            .to_vec();
        let k = uniform_interval(&keyframes, reader.rows());
        for pattern in &a.patterns {
            let rows = pattern_rows(pattern, reader.rows(), &keyframes, a.seed)?;
            reader.take_counters();
            let t0 = Instant::now();
            reader.fetch(&rows, |_, _| {})?;
            let ms = t0.elapsed().as_millis();
            let c = reader.take_counters();
            println!(
                "{pattern},{k},{},{},{},{ms}",
                c.frames_decoded, c.frames_emitted, c.bytes_read
            );
        }
    }
    Ok(())
}

//! `framepipe`: columnar frame store plus dataflow job runner.
//!
//! Subcommands: `ingest` (file or synthetic pattern into a frame column),
//! `run` (execute job specs on a shared worker pool), `export` (raw payload
//! dump with a length sidecar), `inspect` (tables, manifests, sizes), and
//! `bench` (decode-cost CSV for canned access patterns).
//!
//! Exit codes: 0 success, 1 bad input (flags, specs, bindings), 2 runtime
//! failure (I/O, corrupt data, exhausted retries).

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use framepipe::exec::{run_jobs, ChaosKill, ExecOptions, MachineResources, RunReport};
use framepipe::graph::JobSpec;
use framepipe::kernels::Registry;
use framepipe::liveness::RequiredSet;
use framepipe::store::{ColumnKind, KeyframePolicy, Store};
use framepipe::testkit::FramePattern;

mod bench;

/// CLI failure: either bad user input or a library error, which keeps its
/// own validation/runtime split.
pub enum AppError {
    Usage(String),
    Lib(framepipe::Error),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Lib(e) if e.is_validation() => 1,
            AppError::Lib(_) => 2,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(msg) => f.write_str(msg),
            AppError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<framepipe::Error> for AppError {
    fn from(e: framepipe::Error) -> Self {
        AppError::Lib(e)
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Lib(framepipe::Error::Io(e))
    }
}

#[derive(Parser)]
#[command(name = "framepipe", version, about = "Columnar frame store and dataflow job runner")]
struct Cli {
    /// Store root directory.
    #[arg(long, env = "FRAMEPIPE_STORE", value_name = "DIR", global = true)]
    store: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a frame column from a raw file or a synthetic pattern.
    Ingest(IngestArgs),
    /// Execute job spec files, all sharing one worker pool.
    Run(RunArgs),
    /// Dump a column's payloads plus a sidecar of per-row lengths.
    Export(ExportArgs),
    /// List tables, or show one table's manifest, keyframes and disk use.
    Inspect(InspectArgs),
    /// Measure decode cost of access patterns; prints CSV to stdout.
    Bench(bench::BenchArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Raw input file, split into fixed-size frames.
    #[arg(value_name = "FILE", required_unless_present = "pattern", conflicts_with = "pattern")]
    file: Option<PathBuf>,

    /// Synthetic source instead of a file: `ramp`, `constant:V`,
    /// `noise:SEED`, or `drift:SEED:FLIPS`.
    #[arg(long, value_name = "PATTERN", requires = "count")]
    pattern: Option<String>,

    /// Frames to generate (pattern mode only).
    #[arg(long, value_name = "N", requires = "pattern")]
    count: Option<usize>,

    /// Bytes per frame.
    #[arg(long, value_name = "BYTES")]
    frame_size: usize,

    /// Keyframe every K frames.
    #[arg(long, short = 'k', value_name = "K", default_value_t = 30)]
    keyframe_interval: usize,

    #[arg(long)]
    table: String,

    #[arg(long)]
    column: String,
}

#[derive(Args)]
struct RunArgs {
    /// Job spec files (JSON).
    #[arg(value_name = "JOB", required = true)]
    jobs: Vec<PathBuf>,

    /// Worker threads (default: machine cores / widest graph's cores).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,

    /// Output rows per work packet.
    #[arg(long, value_name = "N")]
    packet_size: Option<usize>,

    /// Source rows per read request.
    #[arg(long, value_name = "N")]
    io_packet_size: Option<usize>,

    /// Load packet inputs in lockstep with execution instead of overlapping
    /// the next packet's reads.
    #[arg(long)]
    no_pipeline: bool,

    /// Attempts allowed per packet before the run fails.
    #[arg(long, value_name = "N")]
    max_retries: Option<usize>,

    /// Fault injection: kill worker W after its Nth packet commit.
    #[arg(long, value_name = "W:N")]
    chaos: Option<String>,

    /// Elasticity drill: add one worker once this fraction of packets
    /// has committed.
    #[arg(long, value_name = "FRAC")]
    add_worker_at: Option<f64>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    table: String,

    #[arg(long)]
    column: String,

    /// Output file for concatenated payloads; row lengths go to `<OUT>.lens`.
    #[arg(long, value_name = "OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Table to describe; omit to list all tables.
    #[arg(value_name = "TABLE")]
    table: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> AppResult<()> {
    let root = cli.store.ok_or_else(|| {
        AppError::Usage("no store directory: pass --store or set FRAMEPIPE_STORE".into())
    })?;
    match cli.cmd {
        // Ingest bootstraps the store; everything else requires one.
        Cmd::Ingest(a) => cmd_ingest(&Store::create(root)?, &a),
        Cmd::Run(a) => cmd_run(&Store::open(root)?, &a),
        Cmd::Export(a) => cmd_export(&Store::open(root)?, &a),
        Cmd::Inspect(a) => cmd_inspect(&Store::open(root)?, &a),
        Cmd::Bench(a) => bench::cmd_bench(&Store::open(root)?, &a),
    }
}

fn parse_pattern(s: &str) -> AppResult<FramePattern> {
    let bad = || {
        AppError::Usage(format!(
            "bad pattern `{s}`: expected ramp, constant:V, noise:SEED or drift:SEED:FLIPS"
        ))
    };
    let mut parts = s.split(':');
    let head = parts.next().unwrap_or_default();
    let args: Vec<&str> = parts.collect();
    match (head, args.as_slice()) {
        ("ramp", []) => Ok(FramePattern::Ramp),
        ("constant", [v]) => Ok(FramePattern::Constant(v.parse().map_err(|_| bad())?)),
        ("noise", [seed]) => Ok(FramePattern::Noise {
            seed: seed.parse().map_err(|_| bad())?,
        }),
        ("drift", [seed, flips]) => Ok(FramePattern::Drift {
            seed: seed.parse().map_err(|_| bad())?,
            flips: flips.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

fn cmd_ingest(store: &Store, a: &IngestArgs) -> AppResult<()> {
    if a.frame_size == 0 {
        return Err(AppError::Usage("--frame-size must be >= 1".into()));
    }
    if a.keyframe_interval == 0 {
        return Err(AppError::Usage("--keyframe-interval must be >= 1".into()));
    }
    // Replace an existing column of the same name, so re-running the same
    // ingest converges on identical files instead of failing.
    if let Ok(m) = store.manifest(&a.table) {
        if m.column(&a.column).is_some() {
            store.remove_column(&a.table, &a.column)?;
        }
    }
    let policy = KeyframePolicy::Interval(a.keyframe_interval);
    let report = match (&a.file, &a.pattern) {
        (Some(path), None) => {
            let bytes = fs::read(path)?;
            if !bytes.len().is_multiple_of(a.frame_size) {
                return Err(AppError::Usage(format!(
                    "{} is {} bytes, not a multiple of frame size {}",
                    path.display(),
                    bytes.len(),
                    a.frame_size
                )));
            }
            store.ingest_frames(&a.table, &a.column, policy, bytes.chunks(a.frame_size))?
        }
        (None, Some(pattern)) => {
            let pattern = parse_pattern(pattern)?;
            let count = a.count.expect("clap ties --count to --pattern");
            store.ingest_frames(&a.table, &a.column, policy, pattern.frames(count, a.frame_size))?
        }
        _ => unreachable!("clap enforces file xor pattern"),
    };
    println!(
        "ingested {}.{}: rows={} keyframes={} data_bytes={}",
        a.table, a.column, report.rows, report.keyframes, report.data_bytes
    );
    Ok(())
}

fn parse_chaos(s: &str) -> AppResult<ChaosKill> {
    let parts: Vec<&str> = s.split(':').collect();
    let parsed = match parts.as_slice() {
        [w, n] => w.parse().ok().zip(n.parse().ok()),
        _ => None,
    };
    match parsed {
        Some((worker, after_commits)) => Ok(ChaosKill {
            worker,
            after_commits,
        }),
        None => Err(AppError::Usage(format!(
            "bad --chaos `{s}`: expected WORKER:AFTER_COMMITS, e.g. 1:3"
        ))),
    }
}

fn cmd_run(store: &Store, a: &RunArgs) -> AppResult<()> {
    let mut specs = Vec::with_capacity(a.jobs.len());
    for path in &a.jobs {
        let text = fs::read_to_string(path)?;
        let spec = JobSpec::from_json(&text)
            .map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
        specs.push(spec);
    }

    let mut opts = ExecOptions {
        workers: a.workers,
        ..ExecOptions::default()
    };
    if let Some(n) = a.packet_size {
        if n == 0 {
            return Err(AppError::Usage("--packet-size must be >= 1".into()));
        }
        opts.work_packet_size = n;
    }
    if let Some(n) = a.io_packet_size {
        if n == 0 {
            return Err(AppError::Usage("--io-packet-size must be >= 1".into()));
        }
        opts.io_packet_size = n;
    }
    opts.pipeline = !a.no_pipeline;
    if let Some(n) = a.max_retries {
        opts.max_retries = n;
    }
    if let Some(s) = &a.chaos {
        opts.chaos_kill = Some(parse_chaos(s)?);
    }
    if let Some(frac) = a.add_worker_at {
        if !(0.0..=1.0).contains(&frac) {
            return Err(AppError::Usage("--add-worker-at must be in [0, 1]".into()));
        }
        opts.add_worker_at = Some(frac);
    }

    let report = run_jobs(
        store,
        &Registry::builtin(),
        &specs,
        &MachineResources::detect(),
        &opts,
    )?;
    print_run_report(&report);
    Ok(())
}

fn print_run_report(r: &RunReport) {
    for (i, j) in r.jobs.iter().enumerate() {
        println!(
            "job {i}: output={} rows={} written={} packets={} computed={} \
             discarded_warmup={} planned={} output_bytes={}",
            j.output_table,
            j.rows,
            j.rows_written,
            j.packets,
            j.elements_computed,
            j.elements_discarded_warmup,
            j.planned_elements,
            j.output_bytes
        );
    }
    println!(
        "run: wall_ms={} workers_started={} peak_cores={} packets={} retries={} \
         overlapped_loads={}",
        r.wall.as_millis(),
        r.workers_started,
        r.peak_cores,
        r.packets,
        r.retries,
        r.overlapped_loads
    );
    println!(
        "read: frames_decoded={} frames_emitted={} bytes_read={}",
        r.read.frames_decoded, r.read.frames_emitted, r.read.bytes_read
    );
}

fn cmd_export(store: &Store, a: &ExportArgs) -> AppResult<()> {
    let mut reader = store.reader(&a.table, &a.column)?;
    let mut data = BufWriter::new(File::create(&a.out)?);
    let mut lens_name = a.out.clone().into_os_string();
    lens_name.push(".lens");
    let mut lens = BufWriter::new(File::create(PathBuf::from(lens_name))?);

    let rows = reader.rows();
    let mut present = 0usize;
    let mut bytes = 0u64;
    match reader.kind() {
        ColumnKind::Frame => {
            // One sequential pass; every row exists in a frame column.
            let mut werr: Option<std::io::Error> = None;
            reader.fetch(&RequiredSet::all(rows), |_, el| {
                if werr.is_some() {
                    return;
                }
                let res = data
                    .write_all(el.payload())
                    .and_then(|()| writeln!(lens, "{}", el.payload().len()));
                match res {
                    Ok(()) => {
                        present += 1;
                        bytes += el.payload().len() as u64;
                    }
                    Err(e) => werr = Some(e),
                }
            })?;
            if let Some(e) = werr {
                return Err(e.into());
            }
        }
        ColumnKind::Blob => {
            for row in 0..rows {
                match reader.get(row)? {
                    None => writeln!(lens, "absent")?,
                    Some(el) if el.is_fill() => {
                        data.write_all(el.payload())?;
                        writeln!(lens, "fill {}", el.payload().len())?;
                        present += 1;
                        bytes += el.payload().len() as u64;
                    }
                    Some(el) => {
                        data.write_all(el.payload())?;
                        writeln!(lens, "{}", el.payload().len())?;
                        present += 1;
                        bytes += el.payload().len() as u64;
                    }
                }
            }
        }
    }
    data.flush()?;
    lens.flush()?;
    println!(
        "exported {}.{}: rows={rows} present={present} payload_bytes={bytes}",
        a.table, a.column
    );
    Ok(())
}

/// Total size of a column's files (`<column>.<suffix>`) in a table dir.
fn column_disk_bytes(table_dir: &Path, column: &str) -> std::io::Result<u64> {
    let prefix = format!("{column}.");
    let mut total = 0;
    for entry in fs::read_dir(table_dir)? {
        let entry = entry?;
        if entry.file_name().to_string_lossy().starts_with(&prefix) {
            total += entry.metadata()?.len();
        }
    }
    Ok(total)
}

fn cmd_inspect(store: &Store, a: &InspectArgs) -> AppResult<()> {
    let Some(table) = &a.table else {
        for name in store.tables()? {
            let m = store.manifest(&name)?;
            println!("{name}: rows={} columns={}", m.rows, m.columns.len());
        }
        return Ok(());
    };
    let m = store.manifest(table)?;
    println!("table {}: rows={}", m.name, m.rows);
    let table_dir = store.root().join("tables").join(table);
    for col in &m.columns {
        let reader = store.reader(table, &col.name)?;
        let size = match col.element_size {
            Some(s) => s.to_string(),
            None => "varied".into(),
        };
        let disk = column_disk_bytes(&table_dir, &col.name)?;
        match reader.keyframe_positions() {
            Some(kf) => println!(
                "column {}: kind=frame element_size={size} keyframes={} disk_bytes={disk}",
                col.name,
                kf.len()
            ),
            None => println!(
                "column {}: kind=blob element_size={size} disk_bytes={disk}",
                col.name
            ),
        }
    }
    Ok(())
}

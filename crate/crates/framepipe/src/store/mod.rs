//! On-disk store: tables of columns under a single root directory.
//!
//! Layout: `<root>/tables/<table>/manifest.json` plus per-column files (see
//! `column`), and `<root>/tmp` for in-flight output spools. Frame columns
//! hold compressed sequences and are read through decode plans; blob columns
//! hold independently addressable rows and back job outputs.

mod codec;
mod column;
mod manifest;
mod output;
mod plan;

pub use codec::{
    rle_decode, rle_encode, FrameDecoder, FrameEncoder, DELTA_FLAG, KEYFRAME_FLAG, RECORD_HEADER,
};
pub use column::{
    BlobColumnReader, BlobColumnStats, BlobColumnWriter, BlobRow, FrameColumnReader,
    FrameColumnStats, FrameColumnWriter, KeyframePolicy, BLOB_ABSENT, BLOB_FILL,
};
pub use manifest::{ColumnKind, ColumnMeta, Manifest};
pub use output::{OutputStats, OutputTableWriter};
pub use plan::{plan_decode, DecodePlan, DecodeSpan, ReadCounters};

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::Element;
use crate::liveness::RequiredSet;

/// Totals for one ingested column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestReport {
    pub rows: usize,
    pub keyframes: usize,
    pub data_bytes: u64,
}

/// A store root. Cheap to clone paths from; all state lives on disk.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn check_name(what: &str, name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::Store(format!(
            "invalid {what} name `{name}`: use letters, digits, `_`, `-`"
        )))
    }
}

impl Store {
    /// Creates the directory layout (idempotent) and opens the store.
    pub fn create(root: impl Into<PathBuf>) -> Result<Store> {
        let root = root.into();
        fs::create_dir_all(root.join("tables"))?;
        fs::create_dir_all(root.join("tmp"))?;
        Ok(Store { root })
    }

    /// Opens an existing store; fails if `root` was never created.
    pub fn open(root: impl Into<PathBuf>) -> Result<Store> {
        let root = root.into();
        if !root.join("tables").is_dir() {
            return Err(Error::Store(format!(
                "`{}` is not a store (missing tables/)",
                root.display()
            )));
        }
        fs::create_dir_all(root.join("tmp"))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn table_dir(&self, table: &str) -> PathBuf {
        self.root.join("tables").join(table)
    }

    /// Sorted names of all tables with a manifest.
    pub fn tables(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("tables"))? {
            let entry = entry?;
            if entry.path().join("manifest.json").is_file() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn manifest(&self, table: &str) -> Result<Manifest> {
        check_name("table", table)?;
        Manifest::load(&self.table_dir(table))
    }

    /// Returns the table directory after checking the column can be added:
    /// names are valid and the column does not already exist. The second
    /// value is the table's current row count, if it already has columns.
    fn prepare_column(&self, table: &str, column: &str) -> Result<(PathBuf, Option<usize>)> {
        check_name("table", table)?;
        check_name("column", column)?;
        let dir = self.table_dir(table);
        let existing = if dir.join("manifest.json").is_file() {
            let m = Manifest::load(&dir)?;
            if m.column(column).is_some() {
                return Err(Error::Store(format!(
                    "column `{column}` already exists in table `{table}`"
                )));
            }
            Some(m.rows)
        } else {
            None
        };
        fs::create_dir_all(&dir)?;
        Ok((dir, existing))
    }

    fn commit_column(
        &self,
        table: &str,
        column: &str,
        kind: ColumnKind,
        rows: usize,
        element_size: Option<usize>,
        existing_rows: Option<usize>,
    ) -> Result<()> {
        if let Some(expected) = existing_rows {
            if expected != rows {
                return Err(Error::Store(format!(
                    "column `{column}` has {rows} rows but table `{table}` has {expected}"
                )));
            }
        }
        let dir = self.table_dir(table);
        let mut m = if existing_rows.is_some() {
            Manifest::load(&dir)?
        } else {
            Manifest {
                name: table.to_string(),
                rows,
                columns: Vec::new(),
            }
        };
        m.columns.push(ColumnMeta {
            name: column.to_string(),
            kind,
            element_size,
        });
        m.save(&dir)
    }

    /// Writes a new frame column from an ordered frame stream.
    pub fn ingest_frames<I>(
        &self,
        table: &str,
        column: &str,
        policy: KeyframePolicy,
        frames: I,
    ) -> Result<IngestReport>
    where
        I: IntoIterator,
        I::Item: AsRef<[u8]>,
    {
        let (dir, existing_rows) = self.prepare_column(table, column)?;
        let mut w = FrameColumnWriter::create(&dir, column, policy)?;
        let mut size = None;
        let mut uniform = true;
        for frame in frames {
            let frame = frame.as_ref();
            match size {
                None => size = Some(frame.len()),
                Some(s) if s != frame.len() => uniform = false,
                _ => {}
            }
            w.push(frame)?;
        }
        let stats = w.finish()?;
        self.commit_column(
            table,
            column,
            ColumnKind::Frame,
            stats.rows,
            if uniform { size } else { None },
            existing_rows,
        )?;
        Ok(IngestReport {
            rows: stats.rows,
            keyframes: stats.keyframes,
            data_bytes: stats.data_bytes,
        })
    }

    /// Decodes every `stride`-th frame of an existing column and writes the
    /// result as a new frame column under a fresh keyframe policy. Returns
    /// the ingest totals and the read cost of the decode pass.
    pub fn reencode(
        &self,
        src_table: &str,
        src_column: &str,
        dst_table: &str,
        dst_column: &str,
        stride: usize,
        policy: KeyframePolicy,
    ) -> Result<(IngestReport, ReadCounters)> {
        if stride == 0 {
            return Err(Error::Store("stride must be >= 1".into()));
        }
        let mut src = self.reader(src_table, src_column)?;
        let required = RequiredSet::from_points((0..src.rows()).step_by(stride));
        let (dir, existing_rows) = self.prepare_column(dst_table, dst_column)?;
        let mut w = FrameColumnWriter::create(&dir, dst_column, policy)?;
        let mut size = None;
        let mut uniform = true;
        let mut write_err: Option<Error> = None;
        src.fetch(&required, |_, el| {
            if write_err.is_some() {
                return;
            }
            let frame = el.payload();
            match size {
                None => size = Some(frame.len()),
                Some(s) if s != frame.len() => uniform = false,
                _ => {}
            }
            if let Err(e) = w.push(frame) {
                write_err = Some(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(e);
        }
        let stats = w.finish()?;
        self.commit_column(
            dst_table,
            dst_column,
            ColumnKind::Frame,
            stats.rows,
            if uniform { size } else { None },
            existing_rows,
        )?;
        Ok((
            IngestReport {
                rows: stats.rows,
                keyframes: stats.keyframes,
                data_bytes: stats.data_bytes,
            },
            src.counters(),
        ))
    }

    /// Opens one column for reading, dispatching on its manifest kind.
    pub fn reader(&self, table: &str, column: &str) -> Result<ColumnReader> {
        check_name("table", table)?;
        check_name("column", column)?;
        let dir = self.table_dir(table);
        let m = Manifest::load(&dir)?;
        let meta = m
            .column(column)
            .ok_or_else(|| Error::Store(format!("table `{table}` has no column `{column}`")))?;
        let inner = match meta.kind {
            ColumnKind::Frame => ReaderInner::Frame(FrameColumnReader::open(&dir, column, m.rows)?),
            ColumnKind::Blob => ReaderInner::Blob(BlobColumnReader::open(&dir, column)?),
        };
        Ok(ColumnReader {
            label: format!("{table}.{column}"),
            rows: m.rows,
            element_size: meta.element_size,
            inner,
        })
    }

    /// Removes one column's files and manifest entry. Dropping the last
    /// column removes the table itself. The manifest is rewritten before the
    /// data files disappear, so a crash in between leaves only orphan files,
    /// never a manifest pointing at nothing.
    pub fn remove_column(&self, table: &str, column: &str) -> Result<()> {
        check_name("table", table)?;
        check_name("column", column)?;
        let dir = self.table_dir(table);
        let mut m = Manifest::load(&dir)?;
        let pos = m
            .columns
            .iter()
            .position(|c| c.name == column)
            .ok_or_else(|| Error::Store(format!("table `{table}` has no column `{column}`")))?;
        let kind = m.columns.remove(pos).kind;
        if m.columns.is_empty() {
            fs::remove_dir_all(&dir)?;
            return Ok(());
        }
        m.save(&dir)?;
        let suffixes: [&str; 2] = match kind {
            ColumnKind::Frame => ["frames", "kidx"],
            ColumnKind::Blob => ["blob", "bidx"],
        };
        for s in suffixes {
            fs::remove_file(dir.join(format!("{column}.{s}")))?;
        }
        Ok(())
    }

    /// Starts a new output table, replacing any existing one of that name.
    pub fn output_table(
        &self,
        table: &str,
        columns: Vec<(String, Option<usize>)>,
        rows: usize,
    ) -> Result<OutputTableWriter> {
        check_name("table", table)?;
        if columns.is_empty() {
            return Err(Error::Store(format!(
                "output table `{table}` has no columns"
            )));
        }
        for (name, _) in &columns {
            check_name("column", name)?;
        }
        let mut names: Vec<&str> = columns.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Store(format!(
                "output table `{table}` repeats a column name"
            )));
        }
        OutputTableWriter::new(&self.root, table, columns, rows)
    }
}

enum ReaderInner {
    Frame(FrameColumnReader),
    Blob(BlobColumnReader),
}

/// Uniform read interface over frame and blob columns.
pub struct ColumnReader {
    label: String,
    rows: usize,
    element_size: Option<usize>,
    inner: ReaderInner,
}

impl ColumnReader {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn element_size(&self) -> Option<usize> {
        self.element_size
    }

    pub fn kind(&self) -> ColumnKind {
        match self.inner {
            ReaderInner::Frame(_) => ColumnKind::Frame,
            ReaderInner::Blob(_) => ColumnKind::Blob,
        }
    }

    /// Keyframe positions for frame columns, `None` for blob columns.
    pub fn keyframe_positions(&self) -> Option<&[usize]> {
        match &self.inner {
            ReaderInner::Frame(r) => Some(r.keyframe_positions()),
            ReaderInner::Blob(_) => None,
        }
    }

    /// Reads exactly the required rows in ascending order. Absent rows in a
    /// blob column are an error: the caller asked for data that was never
    /// computed.
    pub fn fetch(
        &mut self,
        required: &RequiredSet,
        mut sink: impl FnMut(usize, Element),
    ) -> Result<()> {
        match &mut self.inner {
            ReaderInner::Frame(r) => {
                let plan = r.plan(required)?;
                r.read_plan(&plan, sink)
            }
            ReaderInner::Blob(r) => {
                for row in required.points() {
                    match r.get(row)? {
                        Some(el) => sink(row, el),
                        None => {
                            return Err(Error::Store(format!(
                                "row {row} of {} was never computed",
                                self.label
                            )))
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Fetches a single row; `None` marks a never-computed blob row.
    pub fn get(&mut self, row: usize) -> Result<Option<Element>> {
        match &mut self.inner {
            ReaderInner::Frame(r) => {
                let plan = r.plan(&RequiredSet::interval(row, row + 1))?;
                let mut out = None;
                r.read_plan(&plan, |_, el| out = Some(el))?;
                Ok(out)
            }
            ReaderInner::Blob(r) => r.get(row),
        }
    }

    pub fn counters(&self) -> ReadCounters {
        match &self.inner {
            ReaderInner::Frame(r) => r.counters(),
            ReaderInner::Blob(r) => r.counters(),
        }
    }

    /// Returns the counters accumulated so far and resets them.
    pub fn take_counters(&mut self) -> ReadCounters {
        match &mut self.inner {
            ReaderInner::Frame(r) => r.take_counters(),
            ReaderInner::Blob(r) => r.take_counters(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::FramePattern;

    #[test]
    fn ingest_then_read_back_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let frames: Vec<Vec<u8>> = FramePattern::Drift { seed: 9, flips: 2 }
            .frames(60, 32)
            .collect();
        let report = store
            .ingest_frames(
                "clips",
                "video",
                KeyframePolicy::Interval(16),
                frames.iter(),
            )
            .unwrap();
        assert_eq!(report.rows, 60);
        assert_eq!(report.keyframes, 4);

        let m = store.manifest("clips").unwrap();
        assert_eq!(m.rows, 60);
        assert_eq!(m.column("video").unwrap().element_size, Some(32));

        let mut r = store.reader("clips", "video").unwrap();
        assert_eq!(r.kind(), ColumnKind::Frame);
        let mut got = Vec::new();
        r.fetch(&RequiredSet::from_points([0, 31, 59]), |f, el| {
            got.push((f, el.payload().to_vec()))
        })
        .unwrap();
        assert_eq!(got[1], (31, frames[31].clone()));
        assert_eq!(store.tables().unwrap(), vec!["clips".to_string()]);
    }

    #[test]
    fn second_column_must_match_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let pat = FramePattern::Constant(3);
        store
            .ingest_frames("t", "a", KeyframePolicy::Interval(8), pat.frames(10, 4))
            .unwrap();
        let err = store
            .ingest_frames("t", "b", KeyframePolicy::Interval(8), pat.frames(11, 4))
            .err()
            .unwrap();
        assert!(err.to_string().contains("11 rows"), "{err}");
        // Same name twice is also rejected.
        assert!(store
            .ingest_frames("t", "a", KeyframePolicy::Interval(8), pat.frames(10, 4))
            .is_err());
    }

    #[test]
    fn remove_column_allows_deterministic_replacement() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let pat = FramePattern::Drift { seed: 4, flips: 3 };
        store
            .ingest_frames("t", "a", KeyframePolicy::Interval(8), pat.frames(30, 16))
            .unwrap();
        store
            .ingest_frames("t", "b", KeyframePolicy::Interval(8), pat.frames(30, 16))
            .unwrap();
        let bytes_of = |c: &str| {
            std::fs::read(dir.path().join("tables/t").join(format!("{c}.frames"))).unwrap()
        };
        let before = bytes_of("a");

        store.remove_column("t", "a").unwrap();
        assert!(store.reader("t", "a").is_err());
        assert!(store.reader("t", "b").is_ok(), "sibling column survives");
        store
            .ingest_frames("t", "a", KeyframePolicy::Interval(8), pat.frames(30, 16))
            .unwrap();
        assert_eq!(
            bytes_of("a"),
            before,
            "re-ingest reproduces identical bytes"
        );

        // Dropping the last column drops the table.
        store.remove_column("t", "a").unwrap();
        store.remove_column("t", "b").unwrap();
        assert!(store.tables().unwrap().is_empty());
        assert!(store.remove_column("t", "b").is_err());
    }

    #[test]
    fn name_validation_guards_paths() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let frames = FramePattern::Ramp.frames(1, 1);
        let err = store
            .ingest_frames("../evil", "a", KeyframePolicy::Interval(1), frames)
            .err()
            .unwrap();
        assert!(err.to_string().contains("invalid table name"));
        assert!(store.reader("t", "a/b").is_err());
    }

    #[test]
    fn reencoded_column_reads_exactly_what_it_stores() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let frames: Vec<Vec<u8>> = FramePattern::Drift { seed: 1, flips: 4 }
            .frames(97, 24)
            .collect();
        store
            .ingest_frames("t", "full", KeyframePolicy::Interval(20), frames.iter())
            .unwrap();
        let (report, cost) = store
            .reencode("t", "full", "t24", "v", 10, KeyframePolicy::Interval(4))
            .unwrap();
        assert_eq!(report.rows, 10);
        assert_eq!(cost.frames_emitted, 10);
        // Sparse stride over interval-20 keyframes decodes whole walks.
        assert!(cost.frames_decoded > cost.frames_emitted);

        let mut r = store.reader("t24", "v").unwrap();
        assert_eq!(r.rows(), 10);
        let mut got = Vec::new();
        r.fetch(&RequiredSet::all(10), |i, el| {
            got.push((i, el.payload().to_vec()))
        })
        .unwrap();
        for (i, frame) in &got {
            assert_eq!(frame, &frames[i * 10]);
        }
        // Reading everything back costs exactly one decode per stored frame.
        let c = r.counters();
        assert_eq!(c.frames_decoded, 10);
        assert_eq!(c.frames_emitted, 10);
    }

    #[test]
    fn open_rejects_non_store_directories() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Store::open(dir.path()).is_err());
        Store::create(dir.path()).unwrap();
        assert!(Store::open(dir.path()).is_ok());
    }
}

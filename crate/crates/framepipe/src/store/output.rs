//! Deterministic output tables built from unordered packet results.
//!
//! Workers finish packets in whatever order scheduling produces, but packets
//! partition the requested rows in ascending order, so folding packet
//! results in packet-index order always yields the same table. A packet that
//! arrives while it is the next one in order is folded into the column files
//! immediately, on the committing thread, so the table encode overlaps
//! packet execution instead of stalling the end of the run. Packets that
//! arrive early are spooled to disk (results can be large) and folded once
//! the gap before them closes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::graph::Element;

use super::column::{BlobColumnWriter, BlobRow};
use super::manifest::{ColumnKind, ColumnMeta, Manifest};

/// Totals for a finalized output table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputStats {
    pub rows: usize,
    /// Rows that received a value or fill, per column (max across columns;
    /// job execution writes every column in lockstep so they agree).
    pub rows_written: usize,
    pub data_bytes: u64,
}

/// Collects per-packet results and writes the table once all are in.
///
/// `commit_packet` may be called from many threads; the first commit for a
/// packet index wins, so a retried packet after a worker death is a no-op
/// if the original commit landed.
pub struct OutputTableWriter {
    table: String,
    table_dir: PathBuf,
    spool_dir: PathBuf,
    columns: Vec<(String, Option<usize>)>,
    rows: usize,
    state: Mutex<WriterState>,
}

struct WriterState {
    /// Packet index -> pending spool path. `None` marks a packet already
    /// folded into the column files; entries persist so a retried packet
    /// stays a no-op.
    committed: BTreeMap<usize, Option<PathBuf>>,
    /// Every packet below this is folded.
    next_packet: usize,
    writers: Vec<BlobColumnWriter>,
    next_row: Vec<usize>,
    written: Vec<usize>,
    /// First folding error; folding stops and finalize reports it.
    failed: Option<Error>,
}

impl OutputTableWriter {
    /// Prepares a table directory (replacing any existing table of the same
    /// name) and a spool area under `<root>/tmp`.
    pub(super) fn new(
        root: &Path,
        table: &str,
        columns: Vec<(String, Option<usize>)>,
        rows: usize,
    ) -> Result<Self> {
        let table_dir = root.join("tables").join(table);
        if table_dir.exists() {
            fs::remove_dir_all(&table_dir)?;
        }
        fs::create_dir_all(&table_dir)?;
        let nonce = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_nanos();
        let spool_dir = root.join("tmp").join(format!("{table}-{nonce}"));
        fs::create_dir_all(&spool_dir)?;
        let mut writers = Vec::with_capacity(columns.len());
        for (name, _) in &columns {
            writers.push(BlobColumnWriter::create(&table_dir, name)?);
        }
        let ncols = columns.len();
        Ok(OutputTableWriter {
            table: table.to_string(),
            table_dir,
            spool_dir,
            columns,
            rows,
            state: Mutex::new(WriterState {
                committed: BTreeMap::new(),
                next_packet: 0,
                writers,
                next_row: vec![0; ncols],
                written: vec![0; ncols],
                failed: None,
            }),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn packets_committed(&self) -> usize {
        self.state.lock().unwrap().committed.len()
    }

    /// Records one packet's results, one `(row, element)` list per output
    /// column in declaration order. Rows must be ascending within a packet.
    pub fn commit_packet(&self, packet: usize, columns: &[Vec<(usize, Element)>]) -> Result<()> {
        if columns.len() != self.columns.len() {
            return Err(Error::Store(format!(
                "packet {packet} carries {} columns, table `{}` has {}",
                columns.len(),
                self.table,
                self.columns.len()
            )));
        }
        {
            let mut st = self.state.lock().unwrap();
            if st.committed.contains_key(&packet) {
                return Ok(());
            }
            if packet == st.next_packet && st.failed.is_none() {
                st.committed.insert(packet, None);
                st.next_packet = packet + 1;
                if let Err(e) = self.fold_memory(&mut st, packet, columns) {
                    st.failed = Some(e);
                } else {
                    self.drain_prefix(&mut st);
                }
                return Ok(());
            }
        }
        // Ahead of a gap: spool to disk, folded once the gap closes.
        let path = self.spool_dir.join(format!("packet-{packet}.spool"));
        let tmp = self.spool_dir.join(format!("packet-{packet}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for rows in columns {
                w.write_all(&(rows.len() as u64).to_le_bytes())?;
                for (row, el) in rows {
                    w.write_all(&(*row as u64).to_le_bytes())?;
                    w.write_all(&[el.is_fill() as u8])?;
                    w.write_all(&(el.payload().len() as u32).to_le_bytes())?;
                    w.write_all(el.payload())?;
                }
            }
            w.flush()?;
        }
        fs::rename(&tmp, &path)?;
        let mut st = self.state.lock().unwrap();
        if st.committed.insert(packet, Some(path)).is_some() {
            return Ok(());
        }
        self.drain_prefix(&mut st);
        Ok(())
    }

    /// Folds a packet's in-memory rows into the column files.
    fn fold_memory(
        &self,
        st: &mut WriterState,
        packet: usize,
        columns: &[Vec<(usize, Element)>],
    ) -> Result<()> {
        for (ci, rows) in columns.iter().enumerate() {
            for (row, el) in rows {
                Self::push_row(
                    &self.table,
                    self.rows,
                    st,
                    packet,
                    ci,
                    *row,
                    el.is_fill(),
                    el.payload(),
                )?;
            }
        }
        Ok(())
    }

    /// Folds one spooled packet into the column files.
    fn fold_spool(
        table: &str,
        total_rows: usize,
        st: &mut WriterState,
        packet: usize,
        path: &Path,
    ) -> Result<()> {
        let mut r = BufReader::new(File::open(path)?);
        for ci in 0..st.writers.len() {
            let count = read_u64(&mut r)? as usize;
            for _ in 0..count {
                let row = read_u64(&mut r)? as usize;
                let mut small = [0u8; 5];
                r.read_exact(&mut small)?;
                let fill = small[0] != 0;
                let len = u32::from_le_bytes(small[1..].try_into().unwrap()) as usize;
                let mut payload = vec![0u8; len];
                r.read_exact(&mut payload)?;
                Self::push_row(table, total_rows, st, packet, ci, row, fill, &payload)?;
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn push_row(
        table: &str,
        total_rows: usize,
        st: &mut WriterState,
        packet: usize,
        ci: usize,
        row: usize,
        fill: bool,
        payload: &[u8],
    ) -> Result<()> {
        if row < st.next_row[ci] || row >= total_rows {
            return Err(Error::Store(format!(
                "packet {packet} emits row {row} out of order for table `{table}`"
            )));
        }
        while st.next_row[ci] < row {
            st.writers[ci].push(BlobRow::Absent)?;
            st.next_row[ci] += 1;
        }
        if fill {
            st.writers[ci].push(BlobRow::Fill)?;
        } else {
            st.writers[ci].push(BlobRow::Value(payload))?;
        }
        st.next_row[ci] += 1;
        st.written[ci] += 1;
        Ok(())
    }

    /// Folds spooled packets for as long as the next one in order is
    /// present, deleting each drained spool.
    fn drain_prefix(&self, st: &mut WriterState) {
        while st.failed.is_none() {
            let packet = st.next_packet;
            let Some(entry) = st.committed.get(&packet) else {
                break;
            };
            if let Some(path) = entry.clone() {
                match Self::fold_spool(&self.table, self.rows, st, packet, &path) {
                    Ok(()) => {
                        fs::remove_file(&path).ok();
                        st.committed.insert(packet, None);
                    }
                    Err(e) => {
                        st.failed = Some(e);
                        break;
                    }
                }
            }
            st.next_packet = packet + 1;
        }
    }

    /// Folds whatever is still spooled (in packet order, gaps allowed),
    /// fills never-computed rows as absent, and writes the manifest.
    pub fn finalize(self) -> Result<OutputStats> {
        let mut st = self.state.into_inner().unwrap();
        if let Some(e) = st.failed {
            return Err(e);
        }
        let rest: Vec<(usize, PathBuf)> = st
            .committed
            .range(st.next_packet..)
            .filter_map(|(p, path)| path.clone().map(|path| (*p, path)))
            .collect();
        for (packet, path) in rest {
            Self::fold_spool(&self.table, self.rows, &mut st, packet, &path)?;
        }
        let mut data_bytes = 0;
        let mut metas = Vec::with_capacity(self.columns.len());
        let rows_written = st.written.into_iter().max().unwrap_or(0);
        for ((name, element_size), (mut w, filled)) in self
            .columns
            .into_iter()
            .zip(st.writers.into_iter().zip(st.next_row))
        {
            for _ in filled..self.rows {
                w.push(BlobRow::Absent)?;
            }
            let stats = w.finish()?;
            data_bytes += stats.data_bytes;
            metas.push(ColumnMeta {
                name,
                kind: ColumnKind::Blob,
                element_size,
            });
        }
        Manifest {
            name: self.table.clone(),
            rows: self.rows,
            columns: metas,
        }
        .save(&self.table_dir)?;
        fs::remove_dir_all(&self.spool_dir).ok();
        Ok(OutputStats {
            rows: self.rows,
            rows_written,
            data_bytes,
        })
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Store;

    fn element(tag: u8) -> Element {
        Element::new(vec![tag; 3])
    }

    #[test]
    fn out_of_order_commits_produce_ascending_rows() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let w = store
            .output_table("out", vec![("a".into(), Some(3))], 10)
            .unwrap();
        // Rows 0..10 split as packets [0,4), [4,8), [8,10); committed 2,0,1.
        w.commit_packet(2, &[vec![(8, element(8)), (9, element(9))]])
            .unwrap();
        w.commit_packet(
            0,
            &[vec![(0, element(0)), (2, Element::fill()), (3, element(3))]],
        )
        .unwrap();
        w.commit_packet(1, &[(4..8).map(|r| (r, element(r as u8))).collect()])
            .unwrap();
        let stats = w.finalize().unwrap();
        assert_eq!(stats.rows, 10);
        assert_eq!(stats.rows_written, 9);

        let mut r = store.reader("out", "a").unwrap();
        assert_eq!(r.rows(), 10);
        assert!(r.get(1).unwrap().is_none(), "uncommitted row is absent");
        assert!(r.get(2).unwrap().unwrap().is_fill());
        for row in [0usize, 3, 4, 5, 6, 7, 8, 9] {
            assert_eq!(r.get(row).unwrap().unwrap().payload(), &[row as u8; 3]);
        }
    }

    #[test]
    fn duplicate_commits_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let w = store
            .output_table("out", vec![("a".into(), None)], 2)
            .unwrap();
        w.commit_packet(0, &[vec![(0, element(1)), (1, element(2))]])
            .unwrap();
        // A retry of the same packet (e.g. after a worker death mid-flight).
        w.commit_packet(0, &[vec![(0, element(9)), (1, element(9))]])
            .unwrap();
        assert_eq!(w.packets_committed(), 1);
        w.finalize().unwrap();
        let mut r = store.reader("out", "a").unwrap();
        assert_eq!(r.get(0).unwrap().unwrap().payload(), &[1, 1, 1]);
    }

    #[test]
    fn replaces_existing_table_and_cleans_spools() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        for round in [3u8, 7] {
            let w = store
                .output_table("out", vec![("a".into(), None)], 1)
                .unwrap();
            w.commit_packet(0, &[vec![(0, element(round))]]).unwrap();
            w.finalize().unwrap();
        }
        let mut r = store.reader("out", "a").unwrap();
        assert_eq!(r.get(0).unwrap().unwrap().payload(), &[7, 7, 7]);
        let leftovers: Vec<_> = fs::read_dir(dir.path().join("tmp")).unwrap().collect();
        assert!(leftovers.is_empty(), "spool directories were not removed");
    }

    #[test]
    fn misordered_rows_within_a_packet_fail() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let w = store
            .output_table("out", vec![("a".into(), None)], 5)
            .unwrap();
        w.commit_packet(0, &[vec![(3, element(1))]]).unwrap();
        w.commit_packet(1, &[vec![(2, element(1))]]).unwrap();
        assert!(w.finalize().is_err());
    }
}

//! Column files.
//!
//! A frame column is `<name>.frames` (keyframe/delta records) plus
//! `<name>.kidx` (16-byte entries: frame index u64 LE, byte offset u64 LE,
//! one per keyframe, ascending, starting at frame 0). Reads seek to a
//! keyframe and decode forward.
//!
//! A blob column is `<name>.blob` (u32 LE length-prefixed rows, present rows
//! only) plus `<name>.bidx` (16 bytes per row: offset u64 LE, length u32 LE,
//! flags u32 LE). Reads are random access through the index.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Element;
use crate::liveness::RequiredSet;

use super::codec::{FrameDecoder, FrameEncoder, KEYFRAME_FLAG, RECORD_HEADER};
use super::plan::{plan_decode, DecodePlan, ReadCounters};

/// Row flag: the element is a fill placeholder.
pub const BLOB_FILL: u32 = 1;
/// Row flag: the row was never computed.
pub const BLOB_ABSENT: u32 = 2;

// Guards against reading a bogus length field as an allocation size.
const MAX_PAYLOAD: usize = 1 << 30;

/// When a frame column inserts keyframes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyframePolicy {
    /// A keyframe every `k` frames (`k >= 1`; 1 means every frame).
    Interval(usize),
    /// Keyframes exactly at these frame indices; 0 is always one.
    Forced(Vec<usize>),
}

impl KeyframePolicy {
    fn check(&self) -> Result<()> {
        match self {
            KeyframePolicy::Interval(0) => {
                Err(Error::Store("keyframe interval must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    fn wants(&self, frame: usize) -> bool {
        frame == 0
            || match self {
                KeyframePolicy::Interval(k) => frame.is_multiple_of(*k),
                KeyframePolicy::Forced(at) => at.contains(&frame),
            }
    }
}

/// Totals returned when a frame column is finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameColumnStats {
    pub rows: usize,
    pub keyframes: usize,
    pub data_bytes: u64,
}

/// Appends frames to a new frame column.
pub struct FrameColumnWriter {
    data: BufWriter<File>,
    kidx: BufWriter<File>,
    enc: FrameEncoder,
    policy: KeyframePolicy,
    next: usize,
    offset: u64,
    keyframes: usize,
}

impl FrameColumnWriter {
    pub fn create(dir: &Path, column: &str, policy: KeyframePolicy) -> Result<Self> {
        policy.check()?;
        let data =
            BufWriter::with_capacity(1 << 20, File::create(dir.join(format!("{column}.frames")))?);
        let kidx = BufWriter::new(File::create(dir.join(format!("{column}.kidx")))?);
        Ok(FrameColumnWriter {
            data,
            kidx,
            enc: FrameEncoder::new(),
            policy,
            next: 0,
            offset: 0,
            keyframes: 0,
        })
    }

    pub fn push(&mut self, frame: &[u8]) -> Result<()> {
        let (record, is_keyframe) = self.enc.encode(frame, self.policy.wants(self.next));
        if is_keyframe {
            self.kidx.write_all(&(self.next as u64).to_le_bytes())?;
            self.kidx.write_all(&self.offset.to_le_bytes())?;
            self.keyframes += 1;
        }
        self.data.write_all(&record)?;
        self.offset += record.len() as u64;
        self.next += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.next
    }

    pub fn finish(mut self) -> Result<FrameColumnStats> {
        self.data.flush()?;
        self.kidx.flush()?;
        Ok(FrameColumnStats {
            rows: self.next,
            keyframes: self.keyframes,
            data_bytes: self.offset,
        })
    }
}

/// Reads sparse frame sets through decode plans.
pub struct FrameColumnReader {
    data: BufReader<File>,
    kf_pos: Vec<usize>,
    kf_off: Vec<u64>,
    rows: usize,
    pos: u64,
    counters: ReadCounters,
    buf: Vec<u8>,
}

fn read_record(data: &mut BufReader<File>, buf: &mut Vec<u8>, pos: u64) -> Result<u8> {
    let mut header = [0u8; RECORD_HEADER];
    data.read_exact(&mut header).map_err(|e| Error::Corrupt {
        offset: pos,
        reason: format!("truncated record header: {e}"),
    })?;
    let len = u32::from_le_bytes(header[1..5].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Corrupt {
            offset: pos,
            reason: format!("implausible payload length {len}"),
        });
    }
    buf.clear();
    buf.resize(len, 0);
    data.read_exact(buf).map_err(|e| Error::Corrupt {
        offset: pos,
        reason: format!("truncated record payload: {e}"),
    })?;
    Ok(header[0])
}

impl FrameColumnReader {
    /// `rows` comes from the table manifest; the data file itself is not
    /// scanned at open.
    pub fn open(dir: &Path, column: &str, rows: usize) -> Result<Self> {
        let kidx_path = dir.join(format!("{column}.kidx"));
        let raw = fs::read(&kidx_path)
            .map_err(|e| Error::Store(format!("cannot read {}: {e}", kidx_path.display())))?;
        if raw.len() % 16 != 0 {
            return Err(Error::Corrupt {
                offset: raw.len() as u64,
                reason: "keyframe index is not a whole number of entries".into(),
            });
        }
        let mut kf_pos = Vec::with_capacity(raw.len() / 16);
        let mut kf_off = Vec::with_capacity(raw.len() / 16);
        for entry in raw.chunks_exact(16) {
            kf_pos.push(u64::from_le_bytes(entry[..8].try_into().unwrap()) as usize);
            kf_off.push(u64::from_le_bytes(entry[8..].try_into().unwrap()));
        }
        if rows > 0 && kf_pos.first() != Some(&0) {
            return Err(Error::Corrupt {
                offset: 0,
                reason: "keyframe index does not start at frame 0".into(),
            });
        }
        if !kf_pos.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Corrupt {
                offset: 0,
                reason: "keyframe index is not ascending".into(),
            });
        }
        let data =
            BufReader::with_capacity(1 << 20, File::open(dir.join(format!("{column}.frames")))?);
        Ok(FrameColumnReader {
            data,
            kf_pos,
            kf_off,
            rows,
            pos: 0,
            counters: ReadCounters::default(),
            buf: Vec::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn keyframe_positions(&self) -> &[usize] {
        &self.kf_pos
    }

    /// Plans a sparse read; fails if the request exceeds the column.
    pub fn plan(&self, required: &RequiredSet) -> Result<DecodePlan> {
        if let Some(last) = required.last() {
            if last >= self.rows {
                return Err(Error::Store(format!(
                    "frame {last} requested but column has {} rows",
                    self.rows
                )));
            }
        }
        Ok(plan_decode(&self.kf_pos, required))
    }

    /// Executes a plan, handing emitted frames to `sink` in ascending order.
    pub fn read_plan(
        &mut self,
        plan: &DecodePlan,
        mut sink: impl FnMut(usize, Element),
    ) -> Result<()> {
        for span in &plan.spans {
            let ki = self
                .kf_pos
                .binary_search(&span.start)
                .map_err(|_| Error::Corrupt {
                    offset: 0,
                    reason: format!("plan span starts at non-keyframe {}", span.start),
                })?;
            self.data.seek(SeekFrom::Start(self.kf_off[ki]))?;
            self.pos = self.kf_off[ki];
            let mut dec = FrameDecoder::new();
            for f in span.start..span.end {
                let flag = read_record(&mut self.data, &mut self.buf, self.pos)?;
                if f == span.start && flag != KEYFRAME_FLAG {
                    return Err(Error::Corrupt {
                        offset: self.pos,
                        reason: format!("frame {f} indexed as keyframe but is not one"),
                    });
                }
                let record_bytes = (RECORD_HEADER + self.buf.len()) as u64;
                let frame = dec
                    .decode(flag, &self.buf)
                    .map_err(|reason| Error::Corrupt {
                        offset: self.pos,
                        reason,
                    })?;
                self.pos += record_bytes;
                self.counters.frames_decoded += 1;
                self.counters.bytes_read += record_bytes;
                if plan.emit.contains(f) {
                    self.counters.frames_emitted += 1;
                    sink(f, Element::new(frame.to_vec()));
                }
            }
        }
        Ok(())
    }

    pub fn counters(&self) -> ReadCounters {
        self.counters
    }

    /// Returns the counters accumulated so far and resets them.
    pub fn take_counters(&mut self) -> ReadCounters {
        std::mem::take(&mut self.counters)
    }
}

/// One row appended to a blob column.
pub enum BlobRow<'a> {
    Value(&'a [u8]),
    Fill,
    Absent,
}

/// Totals returned when a blob column is finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobColumnStats {
    pub rows: usize,
    pub present: usize,
    pub data_bytes: u64,
}

/// Appends rows to a new blob column.
pub struct BlobColumnWriter {
    data: BufWriter<File>,
    bidx: BufWriter<File>,
    offset: u64,
    rows: usize,
    present: usize,
}

impl BlobColumnWriter {
    pub fn create(dir: &Path, column: &str) -> Result<Self> {
        let data =
            BufWriter::with_capacity(1 << 20, File::create(dir.join(format!("{column}.blob")))?);
        let bidx = BufWriter::new(File::create(dir.join(format!("{column}.bidx")))?);
        Ok(BlobColumnWriter {
            data,
            bidx,
            offset: 0,
            rows: 0,
            present: 0,
        })
    }

    pub fn push(&mut self, row: BlobRow<'_>) -> Result<()> {
        let (flags, payload): (u32, &[u8]) = match row {
            BlobRow::Value(b) => (0, b),
            BlobRow::Fill => (BLOB_FILL, &[]),
            BlobRow::Absent => (BLOB_ABSENT, &[]),
        };
        let len = payload.len() as u32;
        self.bidx.write_all(&self.offset.to_le_bytes())?;
        self.bidx.write_all(&len.to_le_bytes())?;
        self.bidx.write_all(&flags.to_le_bytes())?;
        if flags & BLOB_ABSENT == 0 {
            self.data.write_all(&len.to_le_bytes())?;
            self.data.write_all(payload)?;
            self.offset += 4 + payload.len() as u64;
            self.present += 1;
        }
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn finish(mut self) -> Result<BlobColumnStats> {
        self.data.flush()?;
        self.bidx.flush()?;
        Ok(BlobColumnStats {
            rows: self.rows,
            present: self.present,
            data_bytes: self.offset,
        })
    }
}

/// Random-access reads over a blob column.
pub struct BlobColumnReader {
    data: BufReader<File>,
    index: Vec<(u64, u32, u32)>,
    pos: u64,
    counters: ReadCounters,
}

impl BlobColumnReader {
    pub fn open(dir: &Path, column: &str) -> Result<Self> {
        let bidx_path = dir.join(format!("{column}.bidx"));
        let raw = fs::read(&bidx_path)
            .map_err(|e| Error::Store(format!("cannot read {}: {e}", bidx_path.display())))?;
        if raw.len() % 16 != 0 {
            return Err(Error::Corrupt {
                offset: raw.len() as u64,
                reason: "blob index is not a whole number of entries".into(),
            });
        }
        let index = raw
            .chunks_exact(16)
            .map(|e| {
                (
                    u64::from_le_bytes(e[..8].try_into().unwrap()),
                    u32::from_le_bytes(e[8..12].try_into().unwrap()),
                    u32::from_le_bytes(e[12..].try_into().unwrap()),
                )
            })
            .collect();
        let data =
            BufReader::with_capacity(1 << 20, File::open(dir.join(format!("{column}.blob")))?);
        Ok(BlobColumnReader {
            data,
            index,
            pos: 0,
            counters: ReadCounters::default(),
        })
    }

    pub fn rows(&self) -> usize {
        self.index.len()
    }

    /// Fetches one row; `None` means it was never computed.
    pub fn get(&mut self, row: usize) -> Result<Option<Element>> {
        let &(offset, len, flags) = self.index.get(row).ok_or_else(|| {
            Error::Store(format!(
                "row {row} requested but column has {} rows",
                self.index.len()
            ))
        })?;
        if flags & BLOB_ABSENT != 0 {
            return Ok(None);
        }
        if flags & BLOB_FILL != 0 {
            self.counters.frames_emitted += 1;
            return Ok(Some(Element::fill()));
        }
        // Relative seek keeps the buffer when rows are read in file order.
        let delta = offset as i64 - self.pos as i64;
        if delta != 0 {
            self.data.seek_relative(delta)?;
            self.pos = offset;
        }
        let mut prefix = [0u8; 4];
        self.data
            .read_exact(&mut prefix)
            .map_err(|e| Error::Corrupt {
                offset,
                reason: format!("truncated row header: {e}"),
            })?;
        let stored = u32::from_le_bytes(prefix);
        if stored != len {
            return Err(Error::Corrupt {
                offset,
                reason: format!("row length {stored} disagrees with index entry {len}"),
            });
        }
        let mut payload = vec![0u8; len as usize];
        self.data
            .read_exact(&mut payload)
            .map_err(|e| Error::Corrupt {
                offset,
                reason: format!("truncated row payload: {e}"),
            })?;
        self.pos = offset + 4 + len as u64;
        self.counters.frames_emitted += 1;
        self.counters.bytes_read += 4 + len as u64;
        Ok(Some(Element::new(payload)))
    }

    /// Whether the row exists without reading its payload.
    pub fn is_absent(&self, row: usize) -> Option<bool> {
        self.index
            .get(row)
            .map(|&(_, _, flags)| flags & BLOB_ABSENT != 0)
    }

    pub fn counters(&self) -> ReadCounters {
        self.counters
    }

    /// Returns the counters accumulated so far and resets them.
    pub fn take_counters(&mut self) -> ReadCounters {
        std::mem::take(&mut self.counters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::FramePattern;

    fn write_frames(
        dir: &Path,
        column: &str,
        frames: &[Vec<u8>],
        policy: KeyframePolicy,
    ) -> FrameColumnStats {
        let mut w = FrameColumnWriter::create(dir, column, policy).unwrap();
        for f in frames {
            w.push(f).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn frame_column_round_trips_sparse_reads() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Vec<u8>> = FramePattern::Drift { seed: 4, flips: 3 }
            .frames(100, 40)
            .collect();
        let stats = write_frames(dir.path(), "v", &frames, KeyframePolicy::Interval(10));
        assert_eq!(stats.rows, 100);
        assert_eq!(stats.keyframes, 10);

        let mut r = FrameColumnReader::open(dir.path(), "v", 100).unwrap();
        assert_eq!(
            r.keyframe_positions(),
            (0..100).step_by(10).collect::<Vec<_>>()
        );
        let required = RequiredSet::from_points([0, 7, 33, 34, 99]);
        let plan = r.plan(&required).unwrap();
        let mut got = Vec::new();
        r.read_plan(&plan, |f, el| got.push((f, el))).unwrap();
        assert_eq!(got.len(), 5);
        for (f, el) in &got {
            assert_eq!(el.payload(), &frames[*f], "frame {f}");
        }
        let c = r.counters();
        // Walks: [0,7], [30,34], [90,99] = 8 + 5 + 10.
        assert_eq!(c.frames_decoded, 23);
        assert_eq!(c.frames_emitted, 5);
        assert!(c.bytes_read > 0);
    }

    #[test]
    fn forced_keyframes_and_full_scan() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Vec<u8>> = FramePattern::Ramp.frames(20, 16).collect();
        let stats = write_frames(
            dir.path(),
            "v",
            &frames,
            KeyframePolicy::Forced(vec![13, 5]),
        );
        assert_eq!(stats.keyframes, 3); // 0, 5, 13

        let mut r = FrameColumnReader::open(dir.path(), "v", 20).unwrap();
        assert_eq!(r.keyframe_positions(), &[0, 5, 13]);
        let plan = r.plan(&RequiredSet::all(20)).unwrap();
        assert_eq!(plan.spans.len(), 1);
        let mut got = Vec::new();
        r.read_plan(&plan, |f, el| got.push((f, el.payload().to_vec())))
            .unwrap();
        let expect: Vec<(usize, Vec<u8>)> = frames.iter().cloned().enumerate().collect();
        assert_eq!(got, expect);
        assert_eq!(r.counters().frames_decoded, 20);
        assert_eq!(r.counters().frames_emitted, 20);
    }

    #[test]
    fn rejects_out_of_range_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Vec<u8>> = FramePattern::Noise { seed: 1 }.frames(10, 8).collect();
        write_frames(dir.path(), "v", &frames, KeyframePolicy::Interval(4));

        let r = FrameColumnReader::open(dir.path(), "v", 10).unwrap();
        assert!(r.plan(&RequiredSet::from_points([10])).is_err());

        // Flip the flag byte of the first record.
        let data_path = dir.path().join("v.frames");
        let mut bytes = fs::read(&data_path).unwrap();
        bytes[0] = b'X';
        fs::write(&data_path, &bytes).unwrap();
        let mut r = FrameColumnReader::open(dir.path(), "v", 10).unwrap();
        let plan = r.plan(&RequiredSet::from_points([1])).unwrap();
        let err = r.read_plan(&plan, |_, _| {}).err().unwrap();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");

        // Truncate mid-record.
        fs::write(&data_path, &bytes[..3]).unwrap();
        let mut r = FrameColumnReader::open(dir.path(), "v", 10).unwrap();
        let plan = r.plan(&RequiredSet::from_points([0])).unwrap();
        assert!(r.read_plan(&plan, |_, _| {}).is_err());
    }

    #[test]
    fn blob_column_round_trips_all_row_states() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = BlobColumnWriter::create(dir.path(), "out").unwrap();
        w.push(BlobRow::Value(&[1, 2, 3])).unwrap();
        w.push(BlobRow::Fill).unwrap();
        w.push(BlobRow::Absent).unwrap();
        w.push(BlobRow::Value(&[])).unwrap();
        let stats = w.finish().unwrap();
        assert_eq!(stats.rows, 4);
        assert_eq!(stats.present, 3);
        // One 7-byte value record plus two zero-payload records.
        assert_eq!(stats.data_bytes, 7 + 4 + 4);

        let mut r = BlobColumnReader::open(dir.path(), "out").unwrap();
        assert_eq!(r.rows(), 4);
        let v = r.get(0).unwrap().unwrap();
        assert_eq!(v.payload(), &[1, 2, 3]);
        assert!(!v.is_fill());
        let f = r.get(1).unwrap().unwrap();
        assert!(f.is_fill());
        assert!(r.get(2).unwrap().is_none());
        assert_eq!(r.is_absent(2), Some(true));
        let e = r.get(3).unwrap().unwrap();
        assert!(e.payload().is_empty() && !e.is_fill());
        assert!(r.get(4).is_err());
        // Out-of-order access still works via the index.
        assert_eq!(r.get(0).unwrap().unwrap().payload(), &[1, 2, 3]);
        // Emitted: rows 0, 1, 3, and the re-read of 0; absent rows are not.
        assert_eq!(r.counters().frames_emitted, 4);
    }

    #[test]
    fn zero_interval_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(FrameColumnWriter::create(dir.path(), "v", KeyframePolicy::Interval(0)).is_err());
    }
}

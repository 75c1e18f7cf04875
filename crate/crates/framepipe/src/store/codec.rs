//! Frame codec: run-length payloads with keyframe/delta records.
//!
//! A record is a flag byte (`K` keyframe, `D` delta), a little-endian u32
//! payload length, and the payload. Keyframe payloads are the run-length
//! encoding of the raw frame; delta payloads run-length encode the byte-wise
//! difference `(cur - prev) mod 256`. Deltas can only be decoded after the
//! previous frame, which is what makes decode order matter and sparse reads
//! interesting.

pub const KEYFRAME_FLAG: u8 = b'K';
pub const DELTA_FLAG: u8 = b'D';

/// Record header size: flag byte plus payload length.
pub const RECORD_HEADER: usize = 5;

/// Run-length encodes to (count, value) byte pairs; runs longer than 255
/// split.
pub fn rle_encode(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let v = bytes[i];
        let mut run = 1usize;
        while i + run < bytes.len() && bytes[i + run] == v && run < 255 {
            run += 1;
        }
        out.push(run as u8);
        out.push(v);
        i += run;
    }
    out
}

/// Inverse of [`rle_encode`]; appends to `out`.
pub fn rle_decode(encoded: &[u8], out: &mut Vec<u8>) -> Result<(), String> {
    if !encoded.len().is_multiple_of(2) {
        return Err("run-length payload has odd length".into());
    }
    for pair in encoded.chunks_exact(2) {
        let (count, value) = (pair[0], pair[1]);
        if count == 0 {
            return Err("run length 0".into());
        }
        out.resize(out.len() + count as usize, value);
    }
    Ok(())
}

fn push_record(out: &mut Vec<u8>, flag: u8, payload: &[u8]) {
    out.push(flag);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

/// Stateful frame encoder. Emits complete records.
#[derive(Default)]
pub struct FrameEncoder {
    prev: Option<Vec<u8>>,
}

impl FrameEncoder {
    pub fn new() -> Self {
        FrameEncoder::default()
    }

    /// Encodes the next frame, honoring `want_keyframe`. A frame whose size
    /// differs from its predecessor is forced to a keyframe, since deltas
    /// are defined byte-wise. Returns the record and whether it actually is
    /// a keyframe.
    pub fn encode(&mut self, frame: &[u8], want_keyframe: bool) -> (Vec<u8>, bool) {
        let as_keyframe = want_keyframe
            || match &self.prev {
                None => true,
                Some(p) => p.len() != frame.len(),
            };
        let mut record = Vec::with_capacity(RECORD_HEADER + frame.len());
        if as_keyframe {
            push_record(&mut record, KEYFRAME_FLAG, &rle_encode(frame));
        } else {
            let prev = self.prev.as_ref().expect("delta always has a predecessor");
            let diff: Vec<u8> = frame
                .iter()
                .zip(prev)
                .map(|(c, p)| c.wrapping_sub(*p))
                .collect();
            push_record(&mut record, DELTA_FLAG, &rle_encode(&diff));
        }
        self.prev = Some(frame.to_vec());
        (record, as_keyframe)
    }
}

/// Stateful frame decoder. Must start each decode run at a keyframe.
#[derive(Default)]
pub struct FrameDecoder {
    prev: Vec<u8>,
    started: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    /// Decodes one record body; the returned slice is the full frame and
    /// stays valid until the next call.
    pub fn decode(&mut self, flag: u8, payload: &[u8]) -> Result<&[u8], String> {
        match flag {
            KEYFRAME_FLAG => {
                self.prev.clear();
                rle_decode(payload, &mut self.prev)?;
                self.started = true;
            }
            DELTA_FLAG => {
                if !self.started {
                    return Err("delta record before any keyframe".into());
                }
                let mut diff = Vec::with_capacity(self.prev.len());
                rle_decode(payload, &mut diff)?;
                if diff.len() != self.prev.len() {
                    return Err(format!(
                        "delta length {} does not match previous frame length {}",
                        diff.len(),
                        self.prev.len()
                    ));
                }
                for (p, d) in self.prev.iter_mut().zip(&diff) {
                    *p = p.wrapping_add(*d);
                }
            }
            other => return Err(format!("unknown record flag 0x{other:02x}")),
        }
        Ok(&self.prev)
    }
}

//! Deterministic synthetic frame streams.
//!
//! Each pattern yields the same bytes for the same (pattern, index, size),
//! so fixtures can be regenerated anywhere instead of being stored. The
//! patterns compress very differently under delta encoding, which codec and
//! bench tests rely on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Element;

/// A deterministic frame generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FramePattern {
    /// Byte `j` of frame `f` is `(f + j) % 256`: no runs inside a frame,
    /// while consecutive frames differ by exactly +1 everywhere.
    Ramp,
    /// Every byte of every frame is the given value.
    Constant(u8),
    /// Independent random bytes per frame.
    Noise { seed: u64 },
    /// Frame 0 is random; each later frame rewrites `flips` random bytes of
    /// its predecessor.
    Drift { seed: u64, flips: usize },
}

impl FramePattern {
    /// Iterator over the first `count` frames of `size` bytes each.
    pub fn frames(self, count: usize, size: usize) -> FrameIter {
        FrameIter {
            pattern: self,
            size,
            count,
            next: 0,
            prev: Vec::new(),
        }
    }

    /// The first `count` frames as ready-made sequence elements.
    pub fn elements(self, count: usize, size: usize) -> Vec<Element> {
        self.frames(count, size).map(Element::new).collect()
    }
}

/// Iterator returned by [`FramePattern::frames`].
pub struct FrameIter {
    pattern: FramePattern,
    size: usize,
    count: usize,
    next: usize,
    prev: Vec<u8>,
}

fn frame_rng(seed: u64, f: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (f as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

impl Iterator for FrameIter {
    type Item = Vec<u8>;

    fn next(&mut self) -> Option<Vec<u8>> {
        if self.next >= self.count {
            return None;
        }
        let f = self.next;
        self.next += 1;
        let frame = match self.pattern {
            FramePattern::Ramp => (0..self.size).map(|j| ((f + j) % 256) as u8).collect(),
            FramePattern::Constant(v) => vec![v; self.size],
            FramePattern::Noise { seed } => {
                let mut rng = frame_rng(seed, f);
                let mut buf = vec![0u8; self.size];
                rng.fill(&mut buf[..]);
                buf
            }
            FramePattern::Drift { seed, flips } => {
                let mut rng = frame_rng(seed, f);
                if f == 0 {
                    let mut buf = vec![0u8; self.size];
                    rng.fill(&mut buf[..]);
                    buf
                } else {
                    let mut buf = std::mem::take(&mut self.prev);
                    for _ in 0..flips.min(self.size) {
                        let at = rng.random_range(0..self.size);
                        buf[at] = rng.random();
                    }
                    buf
                }
            }
        };
        if matches!(self.pattern, FramePattern::Drift { .. }) {
            self.prev = frame.clone();
        }
        Some(frame)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

//! Episode replay with fixed-length windows inside single episodes.

use std::collections::VecDeque;

use rand::Rng;
use slotrl_tensor::{Scalar, Tensor};

use crate::env::{Action, Episode, ACTION_DIM};
use crate::error::{argument, Result};
use crate::image::{frames_to_tensor, Frame};

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

/// Window location: episode position in the buffer and first step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowIndex {
    pub episode: usize,
    pub start: usize,
}

/// A batch of windows. `frames[t]` is `[B, H, W, 3]`.
#[derive(Clone, Debug)]
pub struct Batch<F: Scalar> {
    pub frames: Vec<Tensor<F>>,
    /// `[B, L, A]`
    pub actions: Tensor<F>,
    /// `[B, L]`
    pub rewards: Tensor<F>,
    pub index: Vec<WindowIndex>,
}

impl<F: Scalar> Batch<F> {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.frames.len()
    }

    /// All frames stacked as `[B, L, H, W, 3]`.
    pub fn frame_tensor(&self) -> Tensor<F> {
        Tensor::stack(&self.frames, 1)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Adds an episode, evicting the oldest when full.
    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn num_windows(&self, len: usize) -> usize {
        self.episodes
            .iter()
            .map(|e| (e.len() + 1).saturating_sub(len))
            .sum()
    }

    /// Uniform draw over all windows of `len` consecutive steps.
    pub fn sample_index<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<WindowIndex> {
        let total = self.num_windows(len);
        if total == 0 {
            return Err(argument(format!("no stored episode holds a window of {len} steps")));
        }
        let mut k = rng.random_range(0..total);
        for (i, e) in self.episodes.iter().enumerate() {
            let n = (e.len() + 1).saturating_sub(len);
            if k < n {
                return Ok(WindowIndex { episode: i, start: k });
            }
            k -= n;
        }
        unreachable!("window count is consistent")
    }

    pub fn sample<F: Scalar, R: Rng + ?Sized>(&self, batch: usize, len: usize, rng: &mut R) -> Result<Batch<F>> {
        let index: Vec<WindowIndex> = (0..batch)
            .map(|_| self.sample_index(len, rng))
            .collect::<Result<_>>()?;
        self.gather(&index, len)
    }

    pub fn gather<F: Scalar>(&self, index: &[WindowIndex], len: usize) -> Result<Batch<F>> {
        let b = index.len();
        let mut frames = Vec::with_capacity(len);
        for t in 0..len {
            let step: Vec<&Frame> = index
                .iter()
                .map(|w| &self.episodes[w.episode].frames[w.start + t])
                .collect();
            frames.push(frames_to_tensor(&step)?);
        }
        let mut actions = Vec::with_capacity(b * len * ACTION_DIM);
        let mut rewards = Vec::with_capacity(b * len);
        for w in index {
            let e = &self.episodes[w.episode];
            for t in w.start..w.start + len {
                actions.extend(e.actions[t].0.map(F::of));
                rewards.push(F::of(e.rewards[t]));
            }
        }
        Ok(Batch {
            frames,
            actions: Tensor::from_vec(actions, &[b, len, ACTION_DIM]),
            rewards: Tensor::from_vec(rewards, &[b, len]),
            index: index.to_vec(),
        })
    }
}

const REPLAY_MAGIC: &[u8; 8] = b"SLOTRPL\0";

impl ReplayBuffer {
    /// Compact binary form: per episode the frame count, raw RGB frames,
    /// actions and rewards as `f64`, and the success flag.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = REPLAY_MAGIC.to_vec();
        out.extend((self.capacity as u64).to_le_bytes());
        out.extend((self.episodes.len() as u64).to_le_bytes());
        for e in &self.episodes {
            out.extend((e.len() as u64).to_le_bytes());
            out.extend((e.frames.first().map_or(0, Frame::size) as u64).to_le_bytes());
            for f in &e.frames {
                out.extend_from_slice(f.raw());
            }
            for a in &e.actions {
                a.0.iter().for_each(|v| out.extend(v.to_le_bytes()));
            }
            e.rewards.iter().for_each(|v| out.extend(v.to_le_bytes()));
            out.push(u8::from(e.success));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, at: 0 };
        if r.take(8)? != REPLAY_MAGIC {
            return Err(argument("not a replay archive"));
        }
        let capacity = r.u64()? as usize;
        let count = r.u64()? as usize;
        let mut buffer = ReplayBuffer::new(capacity);
        for _ in 0..count {
            let len = r.u64()? as usize;
            let size = r.u64()? as usize;
            let frames = (0..len)
                .map(|_| Frame::from_raw(size, r.take(size * size * 3)?.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let actions = (0..len)
                .map(|_| {
                    let mut a = [0.0; ACTION_DIM];
                    for v in &mut a {
                        *v = r.f64()?;
                    }
                    Ok(Action(a))
                })
                .collect::<Result<Vec<_>>>()?;
            let rewards = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let success = r.take(1)?[0] != 0;
            buffer.push(Episode {
                frames,
                actions,
                rewards,
                success,
            });
        }
        if r.at != bytes.len() {
            return Err(argument("trailing bytes after replay archive"));
        }
        Ok(buffer)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| argument("truncated replay archive"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

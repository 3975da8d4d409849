//! Windowed spatio-temporal attention over the previous `d` frames.
//!
//! Each query position attends to the `λ × λ` neighborhood around the same
//! position in every buffered frame, with scaled dot-product weights.
//! Windows are clipped at grid borders.

use std::collections::VecDeque;

use crate::error::{ensure, Result};
use crate::featex::FeatureGrid;
use crate::numkernel::{dot, softmax_in_place};
use crate::Real;

#[derive(Debug, Clone)]
struct Entry {
    key: FeatureGrid,
    value: FeatureGrid,
    frame: usize,
}

/// The last `d` frames' key and value grids, newest first.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    capacity: usize,
    value_channels: usize,
    entries: VecDeque<Entry>,
    evicted: usize,
}

impl RingBuffer {
    pub fn new(capacity: usize, value_channels: usize) -> Result<Self> {
        ensure!(capacity >= 1, "ring buffer capacity must be at least 1");
        ensure!(value_channels >= 1, "value grids need at least one channel");
        Ok(Self {
            capacity,
            value_channels,
            entries: VecDeque::with_capacity(capacity + 1),
            evicted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn value_channels(&self) -> usize {
        self.value_channels
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total entries dropped for exceeding capacity.
    pub fn evicted(&self) -> usize {
        self.evicted
    }

    /// Buffered frame indices, newest first.
    pub fn frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.frame)
    }

    pub fn push(&mut self, key: FeatureGrid, value: FeatureGrid, frame: usize) -> Result<()> {
        ensure!(
            (key.height(), key.width()) == (value.height(), value.width()),
            "key grid {}x{} and value grid {}x{} differ",
            key.height(),
            key.width(),
            value.height(),
            value.width()
        );
        ensure!(
            value.channels() == self.value_channels,
            "value grid has {} channels, buffer holds {}",
            value.channels(),
            self.value_channels
        );
        if let Some(newest) = self.entries.front() {
            ensure!(
                key.dims() == newest.key.dims(),
                "key grid {:?} differs from buffered {:?}",
                key.dims(),
                newest.key.dims()
            );
            ensure!(
                frame > newest.frame,
                "frame {frame} pushed after frame {}",
                newest.frame
            );
        }
        self.entries.push_front(Entry { key, value, frame });
        if self.entries.len() > self.capacity {
            self.entries.pop_back();
            self.evicted += 1;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalAttention {
    pub grid: FeatureGrid,
    /// Set when the buffer was empty and `grid` is all zeros.
    pub cold_start: bool,
}

/// `L^p = softmax(Q^p · Kᵀ / β) V` over the clipped `λ × λ` windows around
/// `p` in every buffered frame.
pub fn local_attention(q: &FeatureGrid, rb: &RingBuffer, lambda: usize, beta: Real) -> Result<LocalAttention> {
    ensure!(lambda % 2 == 1, "window size must be odd, got {lambda}");
    ensure!(beta > 0.0 && beta.is_finite(), "beta must be positive, got {beta}");
    let (h, w) = (q.height(), q.width());
    let Some(first) = rb.entries.front() else {
        return Ok(LocalAttention {
            grid: FeatureGrid::zeros(h, w, rb.value_channels),
            cold_start: true,
        });
    };
    ensure!(
        first.key.dims() == q.dims(),
        "query grid {:?} differs from buffered keys {:?}",
        q.dims(),
        first.key.dims()
    );
    let r = lambda / 2;
    let cv = rb.value_channels;
    let mut out = Vec::with_capacity(h * w * cv);
    let mut logits = Vec::with_capacity(rb.len() * lambda * lambda);
    let mut acc = vec![0.0; cv];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let qp = q.at(y, x);
            logits.clear();
            for e in &rb.entries {
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        logits.push(dot(qp, e.key.at(yy, xx)) / beta);
                    }
                }
            }
            softmax_in_place(&mut logits);
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut weights = logits.iter();
            for e in &rb.entries {
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        let wt = *weights.next().unwrap();
                        if wt == 0.0 {
                            continue;
                        }
                        for (a, &v) in acc.iter_mut().zip(e.value.at(yy, xx)) {
                            *a += wt * v;
                        }
                    }
                }
            }
            out.extend_from_slice(&acc);
        }
    }
    Ok(LocalAttention {
        grid: FeatureGrid::new(h, w, cv, out)?,
        cold_start: false,
    })
}

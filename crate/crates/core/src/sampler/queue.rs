use std::collections::VecDeque;

use crate::error::{invalid, Result};
use crate::schedule::TimestepGrid;

/// One queued frame latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub latent: Vec<f64>,
    /// Position on the inference grid; the timestep is `grid.tau(position)`.
    pub position: usize,
    /// Frame serial number, which keys the frame's random streams.
    pub serial: u64,
}

/// FIFO buffer of frame latents with non-decreasing noise levels from head to
/// tail. Tracks how many latents it holds at once.
#[derive(Debug, Clone, Default)]
pub struct DiagonalQueue {
    slots: VecDeque<Slot>,
    dummy_prefix: usize,
    peak: usize,
}

/// Borrowed view of the queue as denoiser inputs.
#[derive(Debug, Clone)]
pub struct QueueSnapshot<'a> {
    pub latents: Vec<&'a [f64]>,
    pub positions: Vec<usize>,
    pub serials: Vec<u64>,
}

impl DiagonalQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of leading context-only slots (lookahead mode).
    pub fn dummy_prefix(&self) -> usize {
        self.dummy_prefix
    }

    pub fn body_len(&self) -> usize {
        self.slots.len() - self.dummy_prefix
    }

    /// Largest number of latents held at any moment.
    pub fn peak_live(&self) -> usize {
        self.peak
    }

    pub fn enqueue(&mut self, slot: Slot) {
        self.slots.push_back(slot);
        self.peak = self.peak.max(self.slots.len());
    }

    pub fn dequeue(&mut self) -> Option<Slot> {
        self.slots.pop_front()
    }

    /// Prepends `count` copies of the head slot as context-only dummies.
    pub fn add_dummy_prefix(&mut self, count: usize) -> Result<()> {
        let head = self
            .slots
            .front()
            .cloned()
            .ok_or_else(|| invalid("cannot copy the head of an empty queue"))?;
        for _ in 0..count {
            self.slots.push_front(head.clone());
        }
        self.dummy_prefix += count;
        self.peak = self.peak.max(self.slots.len());
        Ok(())
    }

    pub fn slot(&self, i: usize) -> &Slot {
        &self.slots[i]
    }

    pub fn slot_mut(&mut self, i: usize) -> &mut Slot {
        &mut self.slots[i]
    }

    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.slots.iter()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.position).collect()
    }

    pub fn timesteps(&self, grid: &TimestepGrid) -> Vec<usize> {
        self.slots.iter().map(|s| grid.tau(s.position)).collect()
    }

    /// Grid positions never decrease from head to tail.
    pub fn is_monotone(&self) -> bool {
        self.slots
            .iter()
            .zip(self.slots.iter().skip(1))
            .all(|(a, b)| a.position <= b.position)
    }

    pub fn snapshot(&self) -> QueueSnapshot<'_> {
        QueueSnapshot {
            latents: self.slots.iter().map(|s| s.latent.as_slice()).collect(),
            positions: self.positions(),
            serials: self.slots.iter().map(|s| s.serial).collect(),
        }
    }
}

//! Deterministic execution of the denoising blocks of one FIFO iteration.
//!
//! Blocks read a frozen snapshot of the queue and return the new latents of
//! the slots they own; the caller scatters them after every block finished.
//! Because each frame's DDIM noise is keyed by its serial and grid position,
//! results are bitwise independent of the worker count.

use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::sampler::{ddim_step, QueueSnapshot, StepContext};
use crate::schedule::Level;

/// A denoiser window over queue slots and the slots it writes back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub id: usize,
    pub slots: Range<usize>,
    pub update: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPlan {
    pub blocks: Vec<Block>,
}

impl BlockPlan {
    /// `n` disjoint windows of `f` slots, each fully updated.
    pub fn partitioned(f: usize, n: usize) -> Self {
        let blocks = (0..n)
            .map(|k| Block {
                id: k,
                slots: k * f..(k + 1) * f,
                update: k * f..(k + 1) * f,
            })
            .collect();
        BlockPlan { blocks }
    }

    /// `2n` windows of `f` slots at stride `f / 2`, each updating its second half.
    pub fn lookahead(f: usize, n: usize) -> Self {
        let half = f / 2;
        let blocks = (0..2 * n)
            .map(|k| Block {
                id: k,
                slots: k * half..k * half + f,
                update: k * half + half..k * half + f,
            })
            .collect();
        BlockPlan { blocks }
    }

    /// All updated slots in block order.
    pub fn updated_slots(&self) -> Vec<usize> {
        self.blocks.iter().flat_map(|b| b.update.clone()).collect()
    }

    /// Checks that every update range lies inside its window and inside the
    /// queue, and that no slot is written by two blocks.
    pub fn validate(&self, queue_len: usize) -> Result<()> {
        let mut owner = vec![None; queue_len];
        for b in &self.blocks {
            if b.slots.end > queue_len
                || b.update.start < b.slots.start
                || b.update.end > b.slots.end
            {
                return Err(invalid(format!(
                    "block {} does not fit a queue of {queue_len}",
                    b.id
                )));
            }
            for u in b.update.clone() {
                if let Some(other) = owner[u].replace(b.id) {
                    return Err(invalid(format!(
                        "slot {u} written by blocks {other} and {}",
                        b.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// New latent for one queue slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotUpdate {
    pub slot: usize,
    pub latent: Vec<f64>,
}

/// Denoises one window of the snapshot and steps its updated slots one grid
/// position down.
pub fn denoise_block(
    block: &Block,
    snap: &QueueSnapshot,
    ctx: &StepContext,
) -> Result<Vec<SlotUpdate>> {
    let window = block.slots.clone();
    let frames = &snap.latents[window.clone()];
    let levels: Vec<Level> = snap.positions[window.clone()]
        .iter()
        .map(|&p| {
            if p == 0 || p > ctx.grid.steps() {
                Err(Error::OffGridTimestep(if p > ctx.grid.steps() {
                    p
                } else {
                    ctx.grid.tau(p)
                }))
            } else {
                Ok(ctx.schedule.level(ctx.grid.tau(p)))
            }
        })
        .collect::<Result<_>>()?;
    let local = block.update.start - window.start..block.update.end - window.start;
    let eps = ctx
        .denoiser
        .predict_frames(frames, &levels, ctx.condition, local)?;
    block
        .update
        .clone()
        .zip(eps)
        .map(|(slot, e)| {
            let p = snap.positions[slot];
            let mut rng = ctx.streams.ddim(snap.serials[slot], p);
            let latent = ddim_step(
                ctx.schedule,
                snap.latents[slot],
                &e,
                ctx.grid.tau(p),
                ctx.grid.tau(p - 1),
                ctx.eta,
                &mut rng,
            )?;
            Ok(SlotUpdate { slot, latent })
        })
        .collect()
}

/// Runs block plans on a fixed number of worker threads.
pub struct Executor {
    workers: usize,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.workers)
            .finish()
    }
}

impl Executor {
    /// `workers <= 1` runs blocks inline on the calling thread.
    pub fn new(workers: usize) -> Result<Self> {
        let workers = workers.max(1);
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| invalid(format!("cannot start {workers} workers: {e}")))?,
            )
        } else {
            None
        };
        Ok(Executor { workers, pool })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Default worker count: `min(2n, hardware threads)`.
    pub fn default_workers(n: usize) -> usize {
        let hw = std::thread::available_parallelism().map_or(1, |v| v.get());
        (2 * n).min(hw).max(1)
    }

    /// Executes every block against the same snapshot; updates come back in
    /// block order.
    pub fn run_blocks(
        &self,
        plan: &BlockPlan,
        snap: &QueueSnapshot,
        ctx: &StepContext,
    ) -> Result<Vec<SlotUpdate>> {
        let guarded = |b: &Block| -> Result<Vec<SlotUpdate>> {
            catch_unwind(AssertUnwindSafe(|| denoise_block(b, snap, ctx)))
                .unwrap_or(Err(Error::WorkerPanic(b.id)))
        };
        let per_block: Vec<Result<Vec<SlotUpdate>>> = match &self.pool {
            Some(pool) => pool.install(|| plan.blocks.par_iter().map(guarded).collect()),
            None => plan.blocks.iter().map(guarded).collect(),
        };
        let mut out = Vec::new();
        for r in per_block {
            out.extend(r?);
        }
        Ok(out)
    }
}

/// Runs `plan` with `workers` threads.
pub fn run_blocks(
    plan: &BlockPlan,
    snap: &QueueSnapshot,
    ctx: &StepContext,
    workers: usize,
) -> Result<Vec<SlotUpdate>> {
    Executor::new(workers)?.run_blocks(plan, snap, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookahead_plan_ranges() {
        let plan = BlockPlan::lookahead(4, 1);
        assert_eq!(plan.blocks[0].slots, 0..4);
        assert_eq!(plan.blocks[0].update, 2..4);
        assert_eq!(plan.blocks[1].slots, 2..6);
        assert_eq!(plan.blocks[1].update, 4..6);
        plan.validate(6).unwrap();
        assert_eq!(plan.updated_slots(), vec![2, 3, 4, 5]);
    }

    #[test]
    fn partition_plan_ranges() {
        let plan = BlockPlan::partitioned(4, 2);
        assert_eq!(plan.blocks[0].slots, 0..4);
        assert_eq!(plan.blocks[1].slots, 4..8);
        plan.validate(8).unwrap();
        assert!(plan.validate(7).is_err());
    }

    #[test]
    fn overlapping_writes_rejected() {
        let plan = BlockPlan {
            blocks: vec![
                Block {
                    id: 0,
                    slots: 0..4,
                    update: 0..3,
                },
                Block {
                    id: 1,
                    slots: 2..6,
                    update: 2..6,
                },
            ],
        };
        assert!(plan.validate(6).is_err());
    }

    #[test]
    fn lookahead_updates_follow_half_block_of_context() {
        for (f, n) in [(4, 1), (16, 4), (8, 3)] {
            let half = f / 2;
            for b in BlockPlan::lookahead(f, n).blocks {
                assert!(b.update.start - b.slots.start >= half);
            }
        }
    }
}

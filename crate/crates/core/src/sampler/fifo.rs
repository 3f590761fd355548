use std::fmt;
use std::io::Write;

use super::queue::{DiagonalQueue, Slot};
use super::{ConditionSchedule, StepContext};
use crate::denoiser::Denoiser;
use crate::error::{invalid, Error, Result};
use crate::parallel::{BlockPlan, Executor, SlotUpdate};
use crate::rng::NoiseStreams;
use crate::schedule::{NoiseSchedule, TimestepGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Denoiser window.
    pub f: usize,
    /// Partitions; 1 is plain diagonal denoising.
    pub n: usize,
    pub eta: f64,
    /// Frames to emit.
    pub frames: usize,
    pub seed: u64,
    pub lookahead: bool,
    pub conditions: ConditionSchedule,
    /// Worker threads; 0 picks `min(2n, hardware threads)`.
    pub workers: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            f: 16,
            n: 1,
            eta: 0.5,
            frames: 64,
            seed: 0,
            lookahead: false,
            conditions: ConditionSchedule::constant(0),
            workers: 1,
        }
    }
}

impl SamplerConfig {
    pub fn mode(&self) -> FifoMode {
        match (self.n, self.lookahead) {
            (_, true) => FifoMode::Lookahead { n: self.n },
            (1, false) => FifoMode::Diagonal,
            (n, false) => FifoMode::Partitioned { n },
        }
    }

    /// Queue body length and grid size `nf`.
    pub fn body_len(&self) -> usize {
        self.f * self.n
    }

    pub fn validate(&self) -> Result<()> {
        if self.f < 1 || self.n < 1 {
            return Err(invalid("f and n must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid(format!("eta {} outside [0, 1]", self.eta)));
        }
        if self.frames < 1 {
            return Err(invalid("at least one frame must be requested"));
        }
        if self.lookahead && !self.f.is_multiple_of(2) {
            return Err(Error::OddWindow(self.f));
        }
        if self.frames > self.conditions.end() {
            return Err(Error::OutOfRange {
                iteration: self.frames,
                end: self.conditions.end(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FifoMode {
    Diagonal,
    Partitioned { n: usize },
    Lookahead { n: usize },
}

impl FifoMode {
    /// Latents held by the queue in steady state.
    pub fn capacity(&self, f: usize) -> usize {
        match *self {
            FifoMode::Diagonal => f,
            FifoMode::Partitioned { n } => n * f,
            FifoMode::Lookahead { n } => n * f + f / 2,
        }
    }
}

impl fmt::Display for FifoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FifoMode::Diagonal => write!(f, "diagonal"),
            FifoMode::Partitioned { n } => write!(f, "partitioned(n={n})"),
            FifoMode::Lookahead { n } => write!(f, "lookahead(n={n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub condition: u32,
    /// FNV-1a hash of the queue's timesteps after the iteration.
    pub timestep_hash: u64,
    pub emitted_norm: f64,
    pub live_latents: usize,
}

#[derive(Debug, Clone)]
pub struct FifoRun {
    pub mode: FifoMode,
    pub frames: Vec<Vec<f64>>,
    pub log: Vec<IterationRecord>,
    pub peak_live_latents: usize,
}

impl FifoRun {
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "iteration,condition,timestep_hash,emitted_norm,live_latents"
        )?;
        for r in &self.log {
            writeln!(
                w,
                "{},{},{:016x},{},{}",
                r.iteration, r.condition, r.timestep_hash, r.emitted_norm, r.live_latents
            )?;
        }
        Ok(())
    }
}

fn fnv1a(values: impl IntoIterator<Item = usize>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in (v as u64).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn check_grid(grid: &TimestepGrid, body: usize) -> Result<()> {
    if grid.steps() != body {
        return Err(Error::ConfigMismatch(format!(
            "grid has {} steps but the queue body holds {body} frames",
            grid.steps()
        )));
    }
    Ok(())
}

fn scatter(queue: &mut DiagonalQueue, updates: Vec<SlotUpdate>) {
    for SlotUpdate { slot, latent } in updates {
        let s = queue.slot_mut(slot);
        s.latent = latent;
        s.position -= 1;
    }
}

fn fresh_slot(ctx: &StepContext, serial: u64, position: usize) -> Slot {
    let d = ctx.denoiser.dataset().dim();
    Slot {
        latent: ctx.streams.frame_noise(serial, d),
        position,
        serial,
    }
}

/// Builds a diagonal queue of `n * f` latents from pure noise without
/// emitting frames. Blocks of `f` frames are denoised independently.
/// Returns the queue and the next unused frame serial.
fn bootstrap(
    ctx: &StepContext,
    f: usize,
    n: usize,
    exec: &Executor,
) -> Result<(DiagonalQueue, u64)> {
    let body = f * n;
    check_grid(ctx.grid, body)?;
    let plan = BlockPlan::partitioned(f, n);
    let mut queue = DiagonalQueue::new();
    let mut serial = 0u64;
    for _ in 0..body {
        queue.enqueue(fresh_slot(ctx, serial, body));
        serial += 1;
    }
    for _ in 0..body {
        let updates = exec.run_blocks(&plan, &queue.snapshot(), ctx)?;
        scatter(&mut queue, updates);
        queue.dequeue();
        queue.enqueue(fresh_slot(ctx, serial, body));
        serial += 1;
    }
    Ok((queue, serial))
}

/// Initial diagonal queue of `f * n` latents at grid positions `1..=f*n`,
/// built on a grid of exactly `f * n` steps.
pub fn init_queue(ctx: &StepContext, f: usize, n: usize) -> Result<DiagonalQueue> {
    if f < 1 || n < 1 {
        return Err(invalid("f and n must be at least 1"));
    }
    Ok(bootstrap(ctx, f, n, &Executor::new(1)?)?.0)
}

/// Stepwise FIFO driver; each [`FifoSampler::step`] emits one frame.
#[derive(Debug)]
pub struct FifoSampler<'a> {
    config: SamplerConfig,
    schedule: &'a NoiseSchedule,
    grid: &'a TimestepGrid,
    denoiser: &'a Denoiser,
    streams: NoiseStreams,
    exec: Executor,
    plan: BlockPlan,
    queue: DiagonalQueue,
    next_serial: u64,
    iteration: usize,
}

impl<'a> FifoSampler<'a> {
    pub fn new(
        config: &SamplerConfig,
        schedule: &'a NoiseSchedule,
        grid: &'a TimestepGrid,
        denoiser: &'a Denoiser,
    ) -> Result<Self> {
        config.validate()?;
        let (f, n) = (config.f, config.n);
        if f > denoiser.dataset().frames() {
            return Err(Error::ConfigMismatch(format!(
                "window {f} exceeds the dataset clip length {}",
                denoiser.dataset().frames()
            )));
        }
        check_grid(grid, f * n)?;
        let workers = if config.workers == 0 {
            Executor::default_workers(n)
        } else {
            config.workers
        };
        let exec = Executor::new(workers)?;
        let streams = NoiseStreams::new(config.seed);
        let condition = config.conditions.condition_for_iteration(1)?;
        let ctx = StepContext {
            denoiser,
            schedule,
            grid,
            eta: config.eta,
            streams,
            condition,
        };
        let (mut queue, next_serial) = bootstrap(&ctx, f, n, &exec)?;
        let plan = match config.mode() {
            FifoMode::Lookahead { n } => {
                queue.add_dummy_prefix(f / 2)?;
                BlockPlan::lookahead(f, n)
            }
            _ => BlockPlan::partitioned(f, n),
        };
        plan.validate(queue.len())?;
        Ok(FifoSampler {
            config: config.clone(),
            schedule,
            grid,
            denoiser,
            streams,
            exec,
            plan,
            queue,
            next_serial,
            iteration: 0,
        })
    }

    pub fn queue(&self) -> &DiagonalQueue {
        &self.queue
    }

    pub fn plan(&self) -> &BlockPlan {
        &self.plan
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One FIFO iteration: denoise every block, emit the head at level 0 and
    /// enqueue fresh noise at the tail.
    pub fn step(&mut self) -> Result<(Vec<f64>, IterationRecord)> {
        let i = self.iteration + 1;
        let condition = self.config.conditions.condition_for_iteration(i)?;
        let ctx = StepContext {
            denoiser: self.denoiser,
            schedule: self.schedule,
            grid: self.grid,
            eta: self.config.eta,
            streams: self.streams,
            condition,
        };
        let head = self.queue.dummy_prefix();
        let saved = (head > 0).then(|| self.queue.slot(head).clone());
        let updates = self
            .exec
            .run_blocks(&self.plan, &self.queue.snapshot(), &ctx)?;
        scatter(&mut self.queue, updates);
        let emitted = match saved {
            Some(saved) => {
                let out = std::mem::replace(self.queue.slot_mut(head), saved);
                self.queue.dequeue();
                out
            }
            None => self.queue.dequeue().ok_or_else(|| invalid("empty queue"))?,
        };
        debug_assert_eq!(emitted.position, 0);
        if let Some(k) = emitted.latent.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "frame {} coordinate {k} at iteration {i}",
                emitted.serial
            )));
        }
        let tail = self.grid.steps();
        self.queue.enqueue(fresh_slot(&ctx, self.next_serial, tail));
        self.next_serial += 1;
        self.iteration = i;
        let record = IterationRecord {
            iteration: i,
            condition,
            timestep_hash: fnv1a(self.queue.timesteps(self.grid)),
            emitted_norm: emitted.latent.iter().map(|v| v * v).sum::<f64>().sqrt(),
            live_latents: self.queue.len(),
        };
        Ok((emitted.latent, record))
    }
}

/// Runs any FIFO variant selected by `config`.
pub fn run_fifo(
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    grid: &TimestepGrid,
    denoiser: &Denoiser,
) -> Result<FifoRun> {
    let mut sampler = FifoSampler::new(config, schedule, grid, denoiser)?;
    let mut frames = Vec::with_capacity(config.frames);
    let mut log = Vec::with_capacity(config.frames);
    for _ in 0..config.frames {
        let (frame, record) = sampler.step()?;
        frames.push(frame);
        log.push(record);
    }
    Ok(FifoRun {
        mode: config.mode(),
        frames,
        log,
        peak_live_latents: sampler.queue.peak_live(),
    })
}

/// Diagonal denoising over a single window of `f` frames.
pub fn fifo_generate(
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    grid: &TimestepGrid,
    denoiser: &Denoiser,
) -> Result<FifoRun> {
    if config.n != 1 || config.lookahead {
        return Err(Error::ConfigMismatch(
            "diagonal denoising uses n = 1 without lookahead".into(),
        ));
    }
    run_fifo(config, schedule, grid, denoiser)
}

/// Latent partitioning into `n` independent blocks.
pub fn fifo_generate_lp(
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    grid: &TimestepGrid,
    denoiser: &Denoiser,
) -> Result<FifoRun> {
    if config.lookahead {
        return Err(Error::ConfigMismatch(
            "latent partitioning runs without lookahead".into(),
        ));
    }
    run_fifo(config, schedule, grid, denoiser)
}

/// Lookahead denoising over `2n` overlapping half-updated blocks.
pub fn fifo_generate_ld(
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    grid: &TimestepGrid,
    denoiser: &Denoiser,
) -> Result<FifoRun> {
    if !config.lookahead {
        return Err(Error::ConfigMismatch("lookahead flag is off".into()));
    }
    run_fifo(config, schedule, grid, denoiser)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::data::build_dataset;
    use crate::denoiser::FrameStack;
    use crate::sampler::{phi, standard_generate_serial};
    use crate::schedule::{build_vp_schedule, make_grid};

    fn fixture(f: usize, d: usize) -> (NoiseSchedule, Denoiser) {
        let data = build_dataset(2, f + 6, f, d, 1, 17).unwrap();
        (
            build_vp_schedule(1000, 1e-4, 0.02).unwrap(),
            Denoiser::exact(Arc::new(data)),
        )
    }

    fn config(f: usize, n: usize, lookahead: bool, frames: usize) -> SamplerConfig {
        SamplerConfig {
            f,
            n,
            lookahead,
            frames,
            eta: 0.5,
            seed: 4,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn bootstrap_two_frames_by_hand() {
        let (sch, den) = fixture(2, 3);
        let grid = make_grid(&sch, 2).unwrap();
        assert_eq!(grid.taus(), &[0, 500, 1000]);
        let streams = NoiseStreams::new(21);
        let ctx = StepContext {
            denoiser: &den,
            schedule: &sch,
            grid: &grid,
            eta: 1.0,
            streams,
            condition: 0,
        };
        let q = init_queue(&ctx, 2, 1).unwrap();
        assert_eq!(q.timesteps(&grid), vec![500, 1000]);

        // Iteration 1: serials 0 and 1 step jointly from 1000 to 500, the head
        // is dropped and serial 2 enters at 1000.
        let noise = |k| streams.frame_noise(k, 3);
        let s1 = phi(
            &FrameStack::new(vec![noise(0), noise(1)], vec![1000, 1000], 0),
            &[0, 1],
            &ctx,
        )
        .unwrap();
        assert_eq!(s1.tsteps, vec![500, 500]);
        // Iteration 2: serials 1 and 2 sit at 500 and 1000; serial 1 reaches 0
        // and is dropped, serial 3 enters at 1000.
        let s2 = phi(
            &FrameStack::new(vec![s1.frames[1].clone(), noise(2)], vec![500, 1000], 0),
            &[1, 2],
            &ctx,
        )
        .unwrap();
        assert_eq!(s2.tsteps, vec![0, 500]);
        assert_eq!(q.slot(0).latent, s2.frames[1]);
        assert_eq!(q.slot(0).serial, 2);
        assert_eq!(q.slot(1).latent, noise(3));
        assert_eq!(q.slot(1).serial, 3);
    }

    #[test]
    fn bootstrap_ends_diagonal() {
        let (sch, den) = fixture(4, 2);
        for (f, n) in [(1, 1), (4, 1), (4, 3), (2, 2)] {
            let grid = make_grid(&sch, f * n).unwrap();
            let ctx = StepContext {
                denoiser: &den,
                schedule: &sch,
                grid: &grid,
                eta: 0.5,
                streams: NoiseStreams::new(1),
                condition: 0,
            };
            let q = init_queue(&ctx, f, n).unwrap();
            assert_eq!(q.positions(), (1..=f * n).collect::<Vec<_>>());
            assert_eq!(q.peak_live(), f * n);
        }
        let grid = make_grid(&sch, 5).unwrap();
        let ctx = StepContext {
            denoiser: &den,
            schedule: &sch,
            grid: &grid,
            eta: 0.5,
            streams: NoiseStreams::new(1),
            condition: 0,
        };
        assert!(matches!(
            init_queue(&ctx, 4, 1),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn single_frame_window_is_standard_sampling() {
        let (sch, den) = fixture(2, 3);
        for (n, eta) in [(1, 0.0), (1, 1.0), (6, 0.5)] {
            let grid = make_grid(&sch, n).unwrap();
            let cfg = SamplerConfig {
                eta,
                ..config(1, n, false, 12)
            };
            let run = run_fifo(&cfg, &sch, &grid, &den).unwrap();
            let ctx = StepContext {
                denoiser: &den,
                schedule: &sch,
                grid: &grid,
                eta,
                streams: NoiseStreams::new(cfg.seed),
                condition: 0,
            };
            for (k, frame) in run.frames.iter().enumerate() {
                let serial = (k + n) as u64;
                assert_eq!(
                    frame,
                    &standard_generate_serial(1, serial, &ctx).unwrap()[0]
                );
            }
        }
    }

    #[test]
    fn lookahead_dummies_hold_recent_frames() {
        let (sch, den) = fixture(4, 2);
        let grid = make_grid(&sch, 4).unwrap();
        let mut s = FifoSampler::new(&config(4, 1, true, 8), &sch, &grid, &den).unwrap();
        assert_eq!(s.queue().len(), 6);
        assert_eq!(s.queue().positions(), vec![1, 1, 1, 2, 3, 4]);
        let plan = s.plan().clone();
        assert_eq!(plan.blocks[0].slots, 0..4);
        assert_eq!(plan.blocks[1].slots, 2..6);
        assert_eq!(plan.updated_slots(), vec![2, 3, 4, 5]);

        let mut heads = Vec::new();
        for _ in 0..4 {
            heads.push(s.queue().slot(2).latent.clone());
            s.step().unwrap();
            assert_eq!(s.queue().len(), 6);
            assert_eq!(s.queue().positions(), vec![1, 1, 1, 2, 3, 4]);
        }
        assert_eq!(s.queue().slot(0).latent, heads[2]);
        assert_eq!(s.queue().slot(1).latent, heads[3]);
    }

    #[test]
    fn lookahead_updates_see_cleaner_context() {
        let (sch, den) = fixture(8, 2);
        let grid = make_grid(&sch, 24).unwrap();
        let s = FifoSampler::new(&config(8, 3, true, 4), &sch, &grid, &den).unwrap();
        let pos = s.queue().positions();
        for b in &s.plan().blocks {
            for u in b.update.clone() {
                let cleaner = b
                    .slots
                    .clone()
                    .filter(|&v| pos[v] <= pos[u] && v != u)
                    .count();
                assert!(cleaner >= 4);
            }
        }
    }

    #[test]
    fn partitions_shrink_block_spread() {
        let (sch, den) = fixture(4, 2);
        let grid = make_grid(&sch, 8).unwrap();
        let s = FifoSampler::new(&config(4, 2, false, 1), &sch, &grid, &den).unwrap();
        assert_eq!(s.plan().blocks[0].slots, 0..4);
        assert_eq!(s.plan().blocks[1].slots, 4..8);
        let full = sch.sigma(grid.tau(8)) - sch.sigma(grid.tau(1));
        for (k, b) in s.plan().blocks.iter().enumerate() {
            let spread = sch.sigma(grid.tau(4 * k + 4)) - sch.sigma(grid.tau(4 * k + 1));
            let ts = s.queue().timesteps(&grid);
            assert_eq!(
                sch.sigma(ts[b.slots.end - 1]) - sch.sigma(ts[b.slots.start]),
                spread
            );
            assert!(spread < full);
        }
    }

    #[test]
    fn one_partition_matches_diagonal() {
        let (sch, den) = fixture(4, 2);
        let grid = make_grid(&sch, 4).unwrap();
        let cfg = config(4, 1, false, 6);
        let a = fifo_generate(&cfg, &sch, &grid, &den).unwrap();
        let b = fifo_generate_lp(&cfg, &sch, &grid, &den).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn wrapper_and_config_errors() {
        let (sch, den) = fixture(4, 2);
        let grid = make_grid(&sch, 4).unwrap();
        assert!(matches!(
            fifo_generate(&config(4, 2, false, 3), &sch, &grid, &den),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(matches!(
            run_fifo(&config(4, 2, false, 3), &sch, &grid, &den),
            Err(Error::ConfigMismatch(_))
        ));
        let grid3 = make_grid(&sch, 3).unwrap();
        assert!(matches!(
            fifo_generate_ld(&config(3, 1, true, 3), &sch, &grid3, &den),
            Err(Error::OddWindow(3))
        ));
        assert!(matches!(
            fifo_generate_ld(&config(4, 1, false, 3), &sch, &grid, &den),
            Err(Error::ConfigMismatch(_))
        ));
        let grid8 = make_grid(&sch, 8).unwrap();
        assert!(matches!(
            run_fifo(&config(8, 1, false, 3), &sch, &grid8, &den),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(run_fifo(&config(4, 1, false, 0), &sch, &grid, &den).is_err());
        assert!(run_fifo(
            &SamplerConfig {
                eta: 1.5,
                ..config(4, 1, false, 2)
            },
            &sch,
            &grid,
            &den
        )
        .is_err());
        let cfg = SamplerConfig {
            conditions: ConditionSchedule::parse("0:2").unwrap(),
            ..config(4, 1, false, 3)
        };
        assert!(matches!(
            run_fifo(&cfg, &sch, &grid, &den),
            Err(Error::OutOfRange {
                iteration: 3,
                end: 2
            })
        ));
    }

    #[test]
    fn log_follows_condition_schedule() {
        let data = build_dataset(4, 10, 2, 2, 2, 3).unwrap();
        let den = Denoiser::exact(Arc::new(data));
        let sch = build_vp_schedule(1000, 1e-4, 0.02).unwrap();
        let grid = make_grid(&sch, 2).unwrap();
        let cfg = SamplerConfig {
            conditions: ConditionSchedule::parse("A:3,B:5").unwrap(),
            ..config(2, 1, false, 5)
        };
        let run = run_fifo(&cfg, &sch, &grid, &den).unwrap();
        let labels: Vec<u32> = run.log.iter().map(|r| r.condition).collect();
        assert_eq!(labels, vec![0, 0, 0, 1, 1]);
        let hash = run.log[0].timestep_hash;
        assert!(run
            .log
            .iter()
            .all(|r| r.timestep_hash == hash && r.live_latents == 2));
        let mut csv = Vec::new();
        run.write_log_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("iteration,condition,"));
    }

    #[test]
    fn peak_matches_mode_capacity() {
        let (sch, den) = fixture(4, 2);
        for (n, la) in [(1, false), (3, false), (2, true)] {
            let grid = make_grid(&sch, 4 * n).unwrap();
            let cfg = config(4, n, la, 20);
            let run = run_fifo(&cfg, &sch, &grid, &den).unwrap();
            assert_eq!(run.peak_live_latents, cfg.mode().capacity(4));
        }
        assert_eq!(FifoMode::Lookahead { n: 4 }.capacity(16), 72);
    }

    #[test]
    fn workers_do_not_change_output() {
        let (sch, den) = fixture(4, 3);
        for la in [false, true] {
            let grid = make_grid(&sch, 12).unwrap();
            let base = run_fifo(&config(4, 3, la, 10), &sch, &grid, &den).unwrap();
            for workers in [2, 4] {
                let other = run_fifo(
                    &SamplerConfig {
                        workers,
                        ..config(4, 3, la, 10)
                    },
                    &sch,
                    &grid,
                    &den,
                )
                .unwrap();
                assert_eq!(base.frames, other.frames);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn queue_stays_diagonal(half in 1usize..3, n in 1usize..4, la: bool, frames in 1usize..12, seed: u64) {
            let f = 2 * half;
            let (sch, den) = fixture(f, 2);
            let grid = make_grid(&sch, f * n).unwrap();
            let cfg = SamplerConfig { seed, ..config(f, n, la, frames) };
            let mut s = FifoSampler::new(&cfg, &sch, &grid, &den).unwrap();
            let prefix = s.queue().dummy_prefix();
            let expected: Vec<usize> = std::iter::repeat_n(1, prefix).chain(1..=f * n).collect();
            let live = s.queue().len();
            for i in 1..=frames {
                let (frame, rec) = s.step().unwrap();
                prop_assert_eq!(frame.len(), 2);
                prop_assert!(s.queue().is_monotone());
                prop_assert_eq!(s.queue().positions(), expected.clone());
                prop_assert_eq!(rec.live_latents, live);
                prop_assert_eq!(s.iteration(), i);
                // One frame leaves for every frame that enters.
                prop_assert_eq!(s.queue().body_len(), f * n);
            }
        }
    }
}

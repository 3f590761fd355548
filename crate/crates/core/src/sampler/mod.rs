//! DDIM stepping with per-frame timesteps and the FIFO generation loops.

mod fifo;
mod queue;

pub use fifo::{
    fifo_generate, fifo_generate_ld, fifo_generate_lp, init_queue, run_fifo, FifoMode, FifoRun,
    FifoSampler, IterationRecord, SamplerConfig,
};
pub use queue::{DiagonalQueue, QueueSnapshot, Slot};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::{Denoiser, FrameStack};
use crate::error::{invalid, Error, Result};
use crate::parallel::{denoise_block, Block};
use crate::rng::NoiseStreams;
use crate::schedule::{NoiseSchedule, TimestepGrid};

/// One DDIM update of a single frame from `t_from` to `t_to`.
///
/// With `x0 = (z - sigma_from * eps) / s_from` and
/// `sigma_tilde = eta * (sigma_to / sigma_from) * sqrt(1 - s_from^2 / s_to^2)`,
/// returns `s_to * x0 + sqrt(sigma_to^2 - sigma_tilde^2) * eps + sigma_tilde * xi`.
/// Landing on `t_to = 0` returns `x0` exactly.
pub fn ddim_step<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    z: &[f64],
    eps_hat: &[f64],
    t_from: usize,
    t_to: usize,
    eta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if t_from <= t_to || t_from > schedule.t_max() {
        return Err(Error::InvalidTimestep {
            from: t_from,
            to: t_to,
        });
    }
    if z.len() != eps_hat.len() {
        return Err(invalid("latent and noise prediction differ in length"));
    }
    let (s_from, sigma_from) = (schedule.s(t_from), schedule.sigma(t_from));
    if sigma_from.is_nan() || sigma_from <= 0.0 {
        return Err(Error::DegenerateSigma { frame: 0 });
    }
    let x0: Vec<f64> = z
        .iter()
        .zip(eps_hat)
        .map(|(z, e)| (z - sigma_from * e) / s_from)
        .collect();
    if t_to == 0 {
        return Ok(x0);
    }
    let (s_to, sigma_to) = (schedule.s(t_to), schedule.sigma(t_to));
    let sigma_tilde =
        eta * (sigma_to / sigma_from) * (1.0 - (s_from * s_from) / (s_to * s_to)).max(0.0).sqrt();
    let direction = (sigma_to * sigma_to - sigma_tilde * sigma_tilde)
        .max(0.0)
        .sqrt();
    Ok(x0
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| {
            let xi: f64 = if sigma_tilde > 0.0 {
                rng.sample(StandardNormal)
            } else {
                0.0
            };
            s_to * x + direction * e + sigma_tilde * xi
        })
        .collect())
}

/// Everything a denoising step needs besides the latents themselves.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub denoiser: &'a Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub grid: &'a TimestepGrid,
    pub eta: f64,
    pub streams: NoiseStreams,
    pub condition: u32,
}

/// One joint denoising step: a single denoiser evaluation over the stack,
/// then each frame moves from its grid position `p` to `p - 1`. `serials`
/// key the per-frame DDIM noise.
pub fn phi(stack: &FrameStack, serials: &[u64], ctx: &StepContext) -> Result<FrameStack> {
    if serials.len() != stack.len() {
        return Err(invalid("one serial per frame required"));
    }
    let positions = stack
        .tsteps
        .iter()
        .map(|&t| match ctx.grid.position(t) {
            Some(p) if p >= 1 => Ok(p),
            _ => Err(Error::OffGridTimestep(t)),
        })
        .collect::<Result<Vec<usize>>>()?;
    let ctx = StepContext {
        condition: stack.condition,
        ..*ctx
    };
    let snapshot = QueueSnapshot {
        latents: stack.frames.iter().map(Vec::as_slice).collect(),
        positions: positions.clone(),
        serials: serials.to_vec(),
    };
    let block = Block {
        id: 0,
        slots: 0..stack.len(),
        update: 0..stack.len(),
    };
    let updates = denoise_block(&block, &snapshot, &ctx)?;
    let frames = updates.into_iter().map(|u| u.latent).collect();
    let tsteps = positions.iter().map(|&p| ctx.grid.tau(p - 1)).collect();
    Ok(FrameStack::new(frames, tsteps, stack.condition))
}

/// Standard sampling of an `f`-frame clip: `f` fresh latents at `tau_S`
/// denoised jointly at uniform timesteps for `S` steps. Frames draw from the
/// streams of serials `first_serial..first_serial + f`.
pub fn standard_generate_serial(
    f: usize,
    first_serial: u64,
    ctx: &StepContext,
) -> Result<Vec<Vec<f64>>> {
    standard_generate_traced(f, first_serial, ctx, |_, _| {})
}

/// [`standard_generate_serial`] calling `on_step(k, stack)` after step `k`
/// (1-based).
pub fn standard_generate_traced(
    f: usize,
    first_serial: u64,
    ctx: &StepContext,
    mut on_step: impl FnMut(usize, &FrameStack),
) -> Result<Vec<Vec<f64>>> {
    if f < 1 {
        return Err(invalid("clip needs at least one frame"));
    }
    let d = ctx.denoiser.dataset().dim();
    let top = ctx.grid.steps();
    let serials: Vec<u64> = (first_serial..first_serial + f as u64).collect();
    let frames = serials
        .iter()
        .map(|&k| ctx.streams.frame_noise(k, d))
        .collect();
    let mut stack = FrameStack::new(frames, vec![ctx.grid.tau(top); f], ctx.condition);
    for k in 1..=top {
        stack = phi(&stack, &serials, ctx)?;
        on_step(k, &stack);
    }
    Ok(stack.frames)
}

/// [`standard_generate_serial`] starting at serial 0 with streams from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn standard_generate(
    schedule: &NoiseSchedule,
    grid: &TimestepGrid,
    denoiser: &Denoiser,
    f: usize,
    eta: f64,
    seed: u64,
    condition: u32,
) -> Result<Vec<Vec<f64>>> {
    let ctx = StepContext {
        denoiser,
        schedule,
        grid,
        eta,
        streams: NoiseStreams::new(seed),
        condition,
    };
    standard_generate_serial(f, 0, &ctx)
}

/// Condition labels over iteration ranges: label `c_k` covers iterations
/// `end_{k-1} + 1 ..= end_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionSchedule {
    segments: Vec<(u32, usize)>,
}

impl ConditionSchedule {
    pub fn new(segments: Vec<(u32, usize)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(invalid("condition schedule needs at least one segment"));
        }
        if segments[0].1 < 1 || segments.windows(2).any(|w| w[1].1 <= w[0].1) {
            return Err(invalid(
                "condition boundaries must be positive and strictly increasing",
            ));
        }
        Ok(ConditionSchedule { segments })
    }

    /// A single label for every iteration.
    pub fn constant(label: u32) -> Self {
        ConditionSchedule {
            segments: vec![(label, usize::MAX)],
        }
    }

    /// Parses `"A:100,B:156"`. Labels are either integers or single letters,
    /// `A` = 0 through `Z` = 25.
    pub fn parse(spec: &str) -> Result<Self> {
        let segments = spec
            .split(',')
            .map(|part| {
                let (label, end) = part
                    .split_once(':')
                    .ok_or_else(|| invalid(format!("condition segment {part:?} lacks ':'")))?;
                let end = match end.trim() {
                    "inf" => usize::MAX,
                    e => e
                        .parse::<usize>()
                        .map_err(|_| invalid(format!("bad iteration bound in {part:?}")))?,
                };
                Ok((parse_label(label.trim())?, end))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(segments)
    }

    pub fn segments(&self) -> &[(u32, usize)] {
        &self.segments
    }

    /// Last covered iteration.
    pub fn end(&self) -> usize {
        self.segments.last().map_or(0, |s| s.1)
    }

    pub fn condition_for_iteration(&self, i: usize) -> Result<u32> {
        if i < 1 {
            return Err(invalid("iterations are numbered from 1"));
        }
        self.segments
            .iter()
            .find(|&&(_, end)| i <= end)
            .map(|&(label, _)| label)
            .ok_or(Error::OutOfRange {
                iteration: i,
                end: self.end(),
            })
    }
}

impl std::fmt::Display for ConditionSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|&(label, end)| {
                if end == usize::MAX {
                    format!("{label}:inf")
                } else {
                    format!("{label}:{end}")
                }
            })
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

fn parse_label(s: &str) -> Result<u32> {
    match s.as_bytes() {
        [c] if c.is_ascii_uppercase() => Ok(u32::from(c - b'A')),
        _ => s
            .parse()
            .map_err(|_| invalid(format!("bad condition label {s:?}"))),
    }
}

/// Free-function form of [`ConditionSchedule::condition_for_iteration`].
pub fn condition_for_iteration(schedule: &ConditionSchedule, i: usize) -> Result<u32> {
    schedule.condition_for_iteration(i)
}

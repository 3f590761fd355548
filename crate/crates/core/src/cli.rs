//! Command-line front end: `generate`, `fifo`, `ablate`, `verify` and `bench`.
//!
//! Settings come from defaults, then the `--config` file, then flags. Every
//! command writes `config.resolved.txt` next to its outputs.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{DenoiserKind, OutDir, RunConfig};
use crate::data::{build_dataset, render_sequence, write_latents, ClipDataset, FrameDecoder};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::metrics::gap::{write_ablation_csv, write_curves_csv};
use crate::metrics::{
    ablation, ablation_violations, consistency_metric, draw_gap_samples, lemma1_trajectory,
    memory_account, motion_magnitude, theorem1_sweep, AblationCell, SweepReport, Trajectory,
};
use crate::rng::NoiseStreams;
use crate::sampler::{
    run_fifo, standard_generate_traced, ConditionSchedule, FifoRun, SamplerConfig, StepContext,
};
use crate::schedule::{
    build_ve_schedule, build_vp_schedule, make_grid, NoiseSchedule, ScheduleKind,
};

/// Smallest linear-fit R² the theorem1 sweep must reach.
pub const THEOREM1_R2_FLOOR: f64 = 0.9;
/// Monte-Carlo slack of the theorem1 monotonicity check, in standard errors.
pub const THEOREM1_SLACK: f64 = 2.0;
/// Relative tolerance of the lemma1 bound.
pub const LEMMA1_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(
    name = "fifo",
    version,
    about = "Streaming diagonal-denoising sampler over an exact Gaussian-mixture score"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Standard joint sampling of independent clips.
    Generate,
    /// Streaming generation through the diagonal queue.
    Fifo,
    /// Relative-MSE grid over partitions and lookahead.
    Ablate,
    /// Run one verification study.
    Verify {
        #[arg(value_enum)]
        which: Study,
    },
    /// Seconds per frame across worker counts.
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Theorem1,
    Lemma1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserArg {
    Exact,
    Uniform,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// key = value settings file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Denoiser window.
    #[arg(long, global = true)]
    pub f: Option<usize>,
    #[arg(long, global = true)]
    pub partitions: Option<usize>,
    #[arg(long, global = true)]
    pub lookahead: bool,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub frames: Option<usize>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Condition schedule such as "A:100,B:156".
    #[arg(long, global = true, value_name = "SPEC")]
    pub conditions: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub denoiser: Option<DenoiserArg>,
    /// Write frames/*.pgm.
    #[arg(long, global = true)]
    pub render: bool,
}

impl Flags {
    /// Defaults, then the config file, then flags; validated.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.f {
            cfg.f = v;
        }
        if let Some(v) = self.partitions {
            cfg.partitions = v;
        }
        if self.lookahead {
            cfg.lookahead = true;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.frames {
            cfg.frames = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = &self.out {
            cfg.out = OutDir(v.clone());
        }
        if let Some(v) = &self.conditions {
            cfg.conditions = ConditionSchedule::parse(v)?;
        }
        if let Some(v) = self.denoiser {
            cfg.denoiser = match v {
                DenoiserArg::Exact => DenoiserKind::Exact,
                DenoiserArg::Uniform => DenoiserKind::Uniform,
            };
        }
        if self.render {
            cfg.render = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit code for an error: 2 for bad settings, 3 for failures during a run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_)
        | Error::ConfigMismatch(_)
        | Error::OddWindow(_)
        | Error::OutOfRange { .. }
        | Error::NoMatchingCondition(_)
        | Error::Format(_) => 2,
        _ => 3,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match cli.flags.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            return 2;
        }
    };
    match execute(&cli.command, &cfg) {
        Ok((summary, passed)) => {
            print!("{summary}");
            if passed {
                0
            } else {
                3
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            exit_code(&e)
        }
    }
}

/// Runs one command; returns its summary and whether its checks passed.
pub fn execute(command: &Command, cfg: &RunConfig) -> Result<(String, bool)> {
    let out = prepare_out(cfg)?;
    match command {
        Command::Generate => {
            let frames = cmd_generate(cfg)?;
            Ok((
                format!("generated {} frames into {}\n", frames.len(), out.display()),
                true,
            ))
        }
        Command::Fifo => {
            let run = cmd_fifo(cfg)?;
            Ok((fifo_summary(cfg, &run), true))
        }
        Command::Ablate => {
            let cells = cmd_ablate(cfg)?;
            let violations = ablation_violations(&cells);
            let mut s = String::new();
            for c in &cells {
                s.push_str(&format!(
                    "n={} lookahead={} mean={:.4}\n",
                    c.n, c.lookahead, c.result.mean
                ));
            }
            s.push_str(&pass_line("ablation ordering", violations.is_empty()));
            for v in &violations {
                s.push_str(&format!("  {v}\n"));
            }
            Ok((s, violations.is_empty()))
        }
        Command::Verify {
            which: Study::Theorem1,
        } => {
            let r = cmd_theorem1(cfg)?;
            let ok = theorem1_passes(&r);
            let s = format!(
                "slope={:.5} r2={:.4}\n{}",
                r.slope,
                r.r_squared,
                pass_line("theorem1", ok)
            );
            Ok((s, ok))
        }
        Command::Verify {
            which: Study::Lemma1,
        } => {
            let t = cmd_lemma1(cfg)?;
            let ok = t.max_ratio <= 1.0 + LEMMA1_TOL;
            let s = format!(
                "M={:.5} max_ratio={:.12}\n{}",
                t.max_eps,
                t.max_ratio,
                pass_line("lemma1", ok)
            );
            Ok((s, ok))
        }
        Command::Bench => {
            let b = cmd_bench(cfg)?;
            let mut s = String::new();
            for (w, sec) in &b.rows {
                s.push_str(&format!("workers={w} seconds/frame={sec:.6}\n"));
            }
            s.push_str(&pass_line("identical outputs", b.identical));
            Ok((s, b.identical))
        }
    }
}

fn pass_line(name: &str, ok: bool) -> String {
    format!("{}: {name}\n", if ok { "PASS" } else { "FAIL" })
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out.0.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.resolved.txt"), cfg.to_text())?;
    Ok(out)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn build_schedule(cfg: &RunConfig) -> Result<NoiseSchedule> {
    let s = match cfg.schedule {
        ScheduleKind::Vp => build_vp_schedule(cfg.t_max, cfg.beta_min, cfg.beta_max)?,
        ScheduleKind::Ve => build_ve_schedule(cfg.t_max, cfg.ve_slope)?,
    };
    s.validate()?;
    Ok(s)
}

pub fn build_run_dataset(cfg: &RunConfig, dim: usize) -> Result<Arc<ClipDataset>> {
    Ok(Arc::new(build_dataset(
        cfg.parents,
        cfg.parent_len,
        cfg.f,
        dim,
        cfg.n_conditions,
        cfg.data_seed,
    )?))
}

pub fn build_denoiser(cfg: &RunConfig, data: Arc<ClipDataset>) -> Denoiser {
    match cfg.denoiser {
        DenoiserKind::Exact => Denoiser::exact(data),
        DenoiserKind::Uniform => Denoiser::uniform(data, cfg.training_subset()),
    }
}

/// Dataset, variance-exploding schedule, uniform-assumption model and exact
/// truth used by the gap studies.
pub struct StudySetup {
    pub data: Arc<ClipDataset>,
    pub schedule: NoiseSchedule,
    pub model: Denoiser,
    pub truth: Denoiser,
}

pub fn study_setup(cfg: &RunConfig) -> Result<StudySetup> {
    let data = Arc::new(build_dataset(
        cfg.study_parents,
        cfg.study_parent_len,
        cfg.f,
        cfg.dim,
        cfg.study_conditions,
        cfg.data_seed,
    )?);
    let schedule = build_ve_schedule(cfg.t_max, cfg.study_slope)?;
    schedule.validate()?;
    let model = Denoiser::uniform(data.clone(), cfg.training_subset());
    let truth = Denoiser::exact(data.clone());
    Ok(StudySetup {
        data,
        schedule,
        model,
        truth,
    })
}

/// Independent clips of `f` frames, denoised in step, truncated to
/// `frames`. `log.csv` has one row per denoising step.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let out = prepare_out(cfg)?;
    let schedule = build_schedule(cfg)?;
    let grid = make_grid(&schedule, cfg.generate_steps())?;
    let data = build_run_dataset(cfg, cfg.dim)?;
    let denoiser = build_denoiser(cfg, data);
    let condition = cfg.conditions.condition_for_iteration(1)?;
    let ctx = StepContext {
        denoiser: &denoiser,
        schedule: &schedule,
        grid: &grid,
        eta: cfg.eta,
        streams: NoiseStreams::new(cfg.seed),
        condition,
    };
    let clips = cfg.frames.div_ceil(cfg.f);
    let mut norms = vec![0.0; grid.steps()];
    let mut frames = Vec::with_capacity(clips * cfg.f);
    for c in 0..clips {
        let clip = standard_generate_traced(cfg.f, (c * cfg.f) as u64, &ctx, |k, stack| {
            norms[k - 1] += stack.frames.iter().flatten().map(|v| v * v).sum::<f64>();
        })?;
        frames.extend(clip);
    }
    frames.truncate(cfg.frames);
    check_finite(&frames)?;
    let mut log = create(&out, "log.csv")?;
    writeln!(log, "step,timestep,rms")?;
    for (k, sq) in norms.iter().enumerate() {
        let rms = (sq / (clips * cfg.f * cfg.dim) as f64).sqrt();
        writeln!(log, "{},{},{rms}", k + 1, grid.tau(grid.steps() - k - 1))?;
    }
    log.flush()?;
    write_outputs(cfg, &out, &frames)?;
    Ok(frames)
}

fn check_finite(frames: &[Vec<f64>]) -> Result<()> {
    match frames.iter().position(|z| z.iter().any(|v| !v.is_finite())) {
        Some(k) => Err(Error::NonFinite(format!("output frame {k}"))),
        None => Ok(()),
    }
}

fn write_outputs(cfg: &RunConfig, out: &Path, frames: &[Vec<f64>]) -> Result<()> {
    let d = frames.first().map_or(cfg.dim, Vec::len);
    write_latents(create(out, "latents.bin")?, 1, d, frames)?;
    if cfg.render {
        render_sequence(&out.join("frames"), frames, &FrameDecoder::default())?;
    }
    Ok(())
}

/// Streaming run selected by `partitions` and `lookahead`.
pub fn cmd_fifo(cfg: &RunConfig) -> Result<FifoRun> {
    let out = prepare_out(cfg)?;
    let schedule = build_schedule(cfg)?;
    let sampler: SamplerConfig = cfg.sampler();
    let grid = make_grid(&schedule, sampler.body_len())?;
    let data = build_run_dataset(cfg, cfg.dim)?;
    let denoiser = build_denoiser(cfg, data.clone());
    let run = run_fifo(&sampler, &schedule, &grid, &denoiser)?;
    check_finite(&run.frames)?;
    run.write_log_csv(create(&out, "log.csv")?)?;
    write_outputs(cfg, &out, &run.frames)?;
    if run.frames.len() >= cfg.f {
        consistency_metric(&run.frames, &data)?
            .write_csv(create(&out, "consistency.csv")?, &data)?;
    }
    if run.frames.len() >= 2 {
        motion_magnitude(&run.frames, 20)?.write_csv(create(&out, "motion.csv")?)?;
    }
    fs::write(out.join("summary.txt"), fifo_summary(cfg, &run))?;
    Ok(run)
}

fn fifo_summary(cfg: &RunConfig, run: &FifoRun) -> String {
    format!(
        "mode = {}\nframes = {}\ncapacity = {}\npeak_live_latents = {}\n",
        run.mode,
        run.frames.len(),
        run.mode.capacity(cfg.f),
        memory_account(run)
    )
}

/// The six relative-MSE cells.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationCell>> {
    let out = prepare_out(cfg)?;
    let s = study_setup(cfg)?;
    let samples = draw_gap_samples(&s.data, cfg.study_samples, cfg.seed);
    let cells = ablation(&s.model, &s.truth, &s.schedule, cfg.f, &samples)?;
    write_ablation_csv(&cells, create(&out, "ablation.csv")?)?;
    write_curves_csv(&cells, create(&out, "ablation_curves.csv")?)?;
    Ok(cells)
}

pub fn sweep_spreads(cfg: &RunConfig) -> Vec<f64> {
    let k = cfg.sweep_points - 1;
    (0..=k)
        .map(|i| cfg.sweep_max * i as f64 / k as f64)
        .collect()
}

pub fn theorem1_passes(r: &SweepReport) -> bool {
    r.points[0].excess == 0.0 && r.is_monotone(THEOREM1_SLACK) && r.r_squared >= THEOREM1_R2_FLOOR
}

pub fn cmd_theorem1(cfg: &RunConfig) -> Result<SweepReport> {
    let out = prepare_out(cfg)?;
    let s = study_setup(cfg)?;
    let samples = draw_gap_samples(&s.data, cfg.study_samples, cfg.seed);
    let r = theorem1_sweep(
        &s.model,
        &s.truth,
        cfg.sweep_sigma,
        &sweep_spreads(cfg),
        &samples,
    )?;
    r.write_csv(create(&out, "theorem1.csv")?)?;
    Ok(r)
}

/// Euler trajectory from `sigma_T` times standard noise.
pub fn cmd_lemma1(cfg: &RunConfig) -> Result<Trajectory> {
    let out = prepare_out(cfg)?;
    let s = study_setup(cfg)?;
    let schedule = build_ve_schedule(cfg.lemma_steps, cfg.lemma_slope)?;
    let truth = Denoiser::exact(s.data.clone());
    let streams = NoiseStreams::new(cfg.seed);
    let top = schedule.sigma(schedule.t_max());
    let z: Vec<Vec<f64>> = (0..cfg.f as u64)
        .map(|k| {
            streams
                .frame_noise(k, cfg.dim)
                .into_iter()
                .map(|v| top * v)
                .collect()
        })
        .collect();
    let condition = s.data.label(0);
    let t = lemma1_trajectory(&schedule, &truth, &z, condition)?;
    t.write_csv(create(&out, "lemma1.csv")?)?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// `(workers, seconds per frame)`.
    pub rows: Vec<(usize, f64)>,
    /// Whether every worker count produced the same frames.
    pub identical: bool,
}

impl BenchReport {
    /// Speedup of `workers` over the first row.
    pub fn speedup(&self, workers: usize) -> Option<f64> {
        let base = self.rows.first()?.1;
        self.rows
            .iter()
            .find(|r| r.0 == workers)
            .map(|r| base / r.1)
    }
}

/// Latent-partitioning runs of `bench_partitions` blocks at `bench_dim`.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    let out = prepare_out(cfg)?;
    let schedule = build_schedule(cfg)?;
    let n = cfg.bench_partitions;
    let grid = make_grid(&schedule, n * cfg.f)?;
    let data = build_run_dataset(cfg, cfg.bench_dim)?;
    let denoiser = build_denoiser(cfg, data);
    let label = format!(
        "f{}-n{}-d{}-{}",
        cfg.f,
        n,
        cfg.bench_dim,
        if cfg.lookahead { "ld" } else { "lp" }
    );
    let mut rows = Vec::new();
    let mut first: Option<Vec<Vec<f64>>> = None;
    let mut identical = true;
    let mut csv = create(&out, "bench.csv")?;
    writeln!(csv, "config,workers,seconds_per_frame")?;
    for &workers in &cfg.bench_workers.0 {
        let sampler = SamplerConfig {
            n,
            frames: cfg.bench_frames,
            workers,
            conditions: ConditionSchedule::constant(cfg.conditions.condition_for_iteration(1)?),
            ..cfg.sampler()
        };
        let start = Instant::now();
        let run = run_fifo(&sampler, &schedule, &grid, &denoiser)?;
        let per_frame = start.elapsed().as_secs_f64() / cfg.bench_frames as f64;
        writeln!(csv, "{label},{workers},{per_frame}")?;
        match &first {
            Some(f) => identical &= *f == run.frames,
            None => first = Some(run.frames),
        }
        rows.push((workers, per_frame));
    }
    csv.flush()?;
    Ok(BenchReport { rows, identical })
}

//! Run configuration: a plain `key = value` file, one setting per line.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are
//! rejected. [`RunConfig::to_text`] writes every key, and parsing that text
//! gives back an identical configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::denoiser::TrainingSubset;
use crate::error::{Error, Result};
use crate::sampler::{ConditionSchedule, SamplerConfig};
use crate::schedule::ScheduleKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserKind {
    Exact,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetKind {
    Even,
    Random,
    Full,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    _ => Err(Error::Format(format!("unknown value {s:?}"))),
                }
            }
        }
    };
}

text_enum!(DenoiserKind { DenoiserKind::Exact => "exact", DenoiserKind::Uniform => "uniform" });
text_enum!(SubsetKind { SubsetKind::Even => "even", SubsetKind::Random => "random", SubsetKind::Full => "full" });
text_enum!(ScheduleKind { ScheduleKind::Vp => "vp", ScheduleKind::Ve => "ve" });

impl FromStr for ConditionSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ConditionSchedule::parse(s)
    }
}

/// A filesystem path stored verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutDir(pub PathBuf);

impl fmt::Display for OutDir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.display())
    }
}

impl FromStr for OutDir {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(OutDir(PathBuf::from(s)))
    }
}

/// Comma-separated worker counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerList(pub Vec<usize>);

impl fmt::Display for WorkerList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for WorkerList {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad worker count {p:?}")))
            })
            .collect::<Result<_>>()
            .map(WorkerList)
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $key:ident: $ty:ty = $default:expr;)+) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $key: $ty,)+
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($key: $default,)+ }
            }
        }

        impl RunConfig {
            /// Every key with its one-line description.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[$((stringify!($key), concat!($($doc),*)),)+];

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = value.parse::<$ty>().map_err(|_| {
                            Error::Format(format!("bad value {value:?} for {key}"))
                        })?;
                    })+
                    _ => return Err(Error::Format(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// Every key on its own line, in declaration order.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($key), self.$key));)+
                out
            }
        }
    };
}

run_config! {
    /// Master seed for sampling noise.
    seed: u64 = 0;
    /// Denoiser window, frames per clip.
    f: usize = 16;
    /// Latent partitions n.
    partitions: usize = 1;
    /// Lookahead denoising.
    lookahead: bool = false;
    /// DDIM stochasticity in [0, 1].
    eta: f64 = 0.5;
    /// Frames to produce.
    frames: usize = 64;
    /// Worker threads; 0 picks min(2n, hardware threads).
    workers: usize = 1;
    /// Output directory.
    out: OutDir = OutDir(PathBuf::from("out"));
    /// Condition schedule, label:last_iteration pairs.
    conditions: ConditionSchedule = ConditionSchedule::constant(0);
    /// Noise predictor: exact or uniform.
    denoiser: DenoiserKind = DenoiserKind::Exact;
    /// Training subset of the uniform predictor: even, random or full.
    subset: SubsetKind = SubsetKind::Random;
    /// Write PGM frames.
    render: bool = false;
    /// Inference steps for generate; 0 means f * partitions.
    steps: usize = 0;
    /// Latent dimension.
    dim: usize = 8;
    /// Parent trajectories in the dataset.
    parents: usize = 4;
    /// Frames per parent trajectory.
    parent_len: usize = 128;
    /// Distinct condition labels.
    n_conditions: usize = 2;
    /// Dataset seed.
    data_seed: u64 = 0;
    /// Noise schedule: vp or ve.
    schedule: ScheduleKind = ScheduleKind::Vp;
    /// Diffusion steps T.
    t_max: usize = 1000;
    /// First beta of the vp schedule.
    beta_min: f64 = 1e-4;
    /// Last beta of the vp schedule.
    beta_max: f64 = 0.02;
    /// sigma_t = ve_slope * t for the ve schedule.
    ve_slope: f64 = 0.01;
    /// Parents in the study dataset.
    study_parents: usize = 8;
    /// Frames per study parent.
    study_parent_len: usize = 48;
    /// Condition labels in the study dataset.
    study_conditions: usize = 1;
    /// Samples per study cell.
    study_samples: usize = 200;
    /// Slope of the ve schedule used by ablate and theorem1.
    study_slope: f64 = 0.01;
    /// Centre-frame sigma of the theorem1 sweep.
    sweep_sigma: f64 = 2.0;
    /// Largest spread of the theorem1 sweep.
    sweep_max: f64 = 3.0;
    /// Evenly spaced spreads in the theorem1 sweep, including 0.
    sweep_points: usize = 7;
    /// Euler steps of the lemma1 trajectory.
    lemma_steps: usize = 200;
    /// ve slope of the lemma1 trajectory.
    lemma_slope: f64 = 0.1;
    /// Latent dimension of the benchmark.
    bench_dim: usize = 64;
    /// Partitions of the benchmark.
    bench_partitions: usize = 4;
    /// Frames per benchmark run.
    bench_frames: usize = 16;
    /// Worker counts the benchmark compares.
    bench_workers: WorkerList = WorkerList(vec![1, 2, 4]);
}

impl RunConfig {
    /// Parses `key = value` lines on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Grid steps of a generate run.
    pub fn generate_steps(&self) -> usize {
        if self.steps == 0 {
            self.f * self.partitions
        } else {
            self.steps
        }
    }

    pub fn training_subset(&self) -> TrainingSubset {
        match self.subset {
            SubsetKind::Even => TrainingSubset::EvenIndices,
            SubsetKind::Random => TrainingSubset::RandomHalf {
                seed: self.data_seed ^ 0x5eed,
            },
            SubsetKind::Full => TrainingSubset::Full,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            f: self.f,
            n: self.partitions,
            eta: self.eta,
            frames: self.frames,
            seed: self.seed,
            lookahead: self.lookahead,
            conditions: self.conditions.clone(),
            workers: self.workers,
        }
    }

    /// Checks the settings shared by every command.
    pub fn validate(&self) -> Result<()> {
        self.sampler().validate()?;
        if self.dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "dim must be at least 2, got {}",
                self.dim
            )));
        }
        if self.parent_len < self.f || self.study_parent_len < self.f {
            return Err(Error::InvalidParameter(
                "parent trajectories must be at least f frames long".into(),
            ));
        }
        if self.n_conditions < 1 || self.parents < self.n_conditions {
            return Err(Error::InvalidParameter(
                "need 1 <= n_conditions <= parents".into(),
            ));
        }
        if self.sweep_points < 4 {
            return Err(Error::InvalidParameter(
                "theorem1 sweep needs at least four spreads".into(),
            ));
        }
        if self.bench_workers.0.is_empty() {
            return Err(Error::InvalidParameter("bench_workers is empty".into()));
        }
        Ok(())
    }
}

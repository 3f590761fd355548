//! Noise schedules `(s_t, sigma_t)` and integer inference grids.

use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};

/// Default number of training timesteps.
pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

/// Minimum terminal noise-to-signal ratio `sigma_T / s_T` a run schedule must reach.
pub const MIN_TERMINAL_RATIO: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Variance preserving: `s_t^2 + sigma_t^2 = 1`.
    Vp,
    /// Variance exploding: `s_t = 1`, `sigma_t = c t`.
    Ve,
}

/// Scale and noise level of a perturbed latent, `z = s * y + sigma * eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub s: f64,
    pub sigma: f64,
}

impl Level {
    pub fn new(s: f64, sigma: f64) -> Self {
        Level { s, sigma }
    }
}

/// Per-timestep constants for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    t_max: usize,
    s: Vec<f64>,
    sigma: Vec<f64>,
    slope: Option<f64>,
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Largest training timestep `T`.
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// VE slope `c`; `None` for VP schedules.
    pub fn slope(&self) -> Option<f64> {
        self.slope
    }

    pub fn s(&self, t: usize) -> f64 {
        self.s[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn level(&self, t: usize) -> Level {
        Level::new(self.s[t], self.sigma[t])
    }

    pub fn scales(&self) -> &[f64] {
        &self.s
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// `sigma_T / s_T`.
    pub fn terminal_ratio(&self) -> f64 {
        self.sigma[self.t_max] / self.s[self.t_max]
    }

    /// Checks the structural invariants: pinned endpoints, strictly increasing
    /// sigma, the family identity, and a terminal ratio of at least
    /// [`MIN_TERMINAL_RATIO`].
    pub fn validate(&self) -> Result<()> {
        if self.s[0] != 1.0 || self.sigma[0] != 0.0 {
            return Err(invalid(
                "schedule endpoints must satisfy s_0 = 1, sigma_0 = 0",
            ));
        }
        if self.sigma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sigma must be strictly increasing"));
        }
        match self.kind {
            ScheduleKind::Vp => {
                for (t, (s, sg)) in self.s.iter().zip(&self.sigma).enumerate() {
                    if (s * s + sg * sg - 1.0).abs() > 1e-12 {
                        return Err(invalid(format!("VP identity violated at t = {t}")));
                    }
                }
            }
            ScheduleKind::Ve => {
                let c = self.slope.unwrap_or(f64::NAN);
                for t in 0..=self.t_max {
                    if self.s[t] != 1.0 || self.sigma[t] != c * t as f64 {
                        return Err(invalid(format!("VE definition violated at t = {t}")));
                    }
                }
            }
        }
        if self.terminal_ratio() < MIN_TERMINAL_RATIO {
            return Err(invalid(format!(
                "terminal ratio sigma_T / s_T = {:.3} is below {MIN_TERMINAL_RATIO}",
                self.terminal_ratio()
            )));
        }
        Ok(())
    }

    /// Writes `t,s,sigma` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,s,sigma")?;
        for t in 0..=self.t_max {
            writeln!(w, "{t},{:e},{:e}", self.s[t], self.sigma[t])?;
        }
        Ok(())
    }

    /// Reads a table written by [`NoiseSchedule::write_csv`]. The family is
    /// inferred: all-ones scales with a constant slope give VE.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut s = Vec::new();
        let mut sigma = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "t,s,sigma" {
                    return Err(Error::Format(format!(
                        "unexpected schedule header {line:?}"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!("bad schedule row {line:?}")));
            }
            let t: usize = parse(cols[0])?;
            if t != s.len() {
                return Err(Error::Format(format!(
                    "schedule rows out of order at t = {t}"
                )));
            }
            s.push(parse(cols[1])?);
            sigma.push(parse(cols[2])?);
        }
        if s.len() < 2 {
            return Err(Error::Format("schedule needs at least two rows".into()));
        }
        let t_max = s.len() - 1;
        let slope = sigma[1];
        let is_ve = s.iter().all(|&v| v == 1.0)
            && sigma
                .iter()
                .enumerate()
                .all(|(t, &v)| v == slope * t as f64);
        let (kind, slope) = if is_ve {
            (ScheduleKind::Ve, Some(slope))
        } else {
            (ScheduleKind::Vp, None)
        };
        Ok(NoiseSchedule {
            kind,
            t_max,
            s,
            sigma,
            slope,
        })
    }
}

fn parse<T: std::str::FromStr>(field: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {field:?}")))
}

/// Linear-beta variance-preserving schedule.
///
/// `beta_1..beta_T` are evenly spaced in `[beta_min, beta_max]`,
/// `s_t = sqrt(prod_{u<=t} (1 - beta_u))` and `sigma_t = sqrt(1 - s_t^2)`.
pub fn build_vp_schedule(t_max: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_max < 1 {
        return Err(invalid("T must be at least 1"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(invalid(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let mut s = Vec::with_capacity(t_max + 1);
    let mut sigma = Vec::with_capacity(t_max + 1);
    s.push(1.0);
    sigma.push(0.0);
    let mut alpha_bar = 1.0;
    for u in 1..=t_max {
        let beta = if t_max == 1 {
            beta_min
        } else {
            beta_min + (beta_max - beta_min) * (u - 1) as f64 / (t_max - 1) as f64
        };
        alpha_bar *= 1.0 - beta;
        s.push(alpha_bar.sqrt());
        sigma.push((1.0 - alpha_bar).sqrt());
    }
    Ok(NoiseSchedule {
        kind: ScheduleKind::Vp,
        t_max,
        s,
        sigma,
        slope: None,
    })
}

/// Variance-exploding schedule with `s_t = 1` and `sigma_t = c t`.
pub fn build_ve_schedule(t_max: usize, c: f64) -> Result<NoiseSchedule> {
    if t_max < 1 {
        return Err(invalid("T must be at least 1"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("VE slope must be positive, got {c}")));
    }
    let s = vec![1.0; t_max + 1];
    let sigma = (0..=t_max).map(|t| c * t as f64).collect();
    Ok(NoiseSchedule {
        kind: ScheduleKind::Ve,
        t_max,
        s,
        sigma,
        slope: Some(c),
    })
}

/// Inference timesteps `0 = tau_0 < tau_1 < ... < tau_S = T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepGrid {
    tau: Vec<usize>,
}

impl TimestepGrid {
    /// Number of inference steps `S`.
    pub fn steps(&self) -> usize {
        self.tau.len() - 1
    }

    pub fn tau(&self, i: usize) -> usize {
        self.tau[i]
    }

    pub fn taus(&self) -> &[usize] {
        &self.tau
    }

    /// Grid position of timestep `t`, if it lies on the grid.
    pub fn position(&self, t: usize) -> Option<usize> {
        self.tau.binary_search(&t).ok()
    }
}

/// Evenly spaced integer grid, `tau_i = round(i T / S)` with halves rounded down.
pub fn make_grid(schedule: &NoiseSchedule, steps: usize) -> Result<TimestepGrid> {
    let t_max = schedule.t_max();
    if steps < 1 || steps > t_max {
        return Err(invalid(format!(
            "grid needs 1 <= S <= T, got S = {steps}, T = {t_max}"
        )));
    }
    // ceil((2 i T - S) / 2S) is round-half-down of i T / S.
    let den = 2 * steps as i64;
    let tau = (0..=steps as i64)
        .map(|i| {
            let num = 2 * i * t_max as i64 - steps as i64;
            num.div_euclid(den) + i64::from(num.rem_euclid(den) != 0)
        })
        .map(|v| v as usize)
        .collect();
    Ok(TimestepGrid { tau })
}

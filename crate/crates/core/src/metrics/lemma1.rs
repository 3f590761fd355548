//! Probability-flow trajectory of a variance-exploding schedule and its
//! Lipschitz-in-time bound.

use crate::denoiser::Denoiser;
use crate::error::{invalid, Error, Result};
use crate::schedule::{NoiseSchedule, ScheduleKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `states[k]` is the stack at `t = T - k`, flattened frame-major.
    pub states: Vec<Vec<f64>>,
    /// `|eps(z_t, t)|` for `t = T..=1`.
    pub eps_norms: Vec<f64>,
    pub slope: f64,
    /// Largest noise-prediction norm seen along the path.
    pub max_eps: f64,
    /// Largest `|z_t - z_s| / (c M |t - s|)` over all pairs `t != s`.
    pub max_ratio: f64,
}

impl Trajectory {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,state_norm,eps_norm")?;
        let t_max = self.states.len() - 1;
        for (k, z) in self.states.iter().enumerate() {
            let eps = self
                .eps_norms
                .get(k)
                .map_or(String::new(), |e| e.to_string());
            writeln!(w, "{},{},{}", t_max - k, norm(z), eps)?;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Integrates `z_{t-1} = z_t - c eps(z_t, t)` from `t = T` down to 0 with
/// every frame at the same level, then scans all state pairs. Norms are
/// Euclidean over the whole stack.
pub fn lemma1_trajectory(
    schedule: &NoiseSchedule,
    denoiser: &Denoiser,
    z_start: &[Vec<f64>],
    condition: u32,
) -> Result<Trajectory> {
    let c = match (schedule.kind(), schedule.slope()) {
        (ScheduleKind::Ve, Some(c)) => c,
        _ => {
            return Err(invalid(
                "the trajectory study needs a variance-exploding schedule",
            ))
        }
    };
    let t_max = schedule.t_max();
    if t_max < 100 {
        return Err(invalid(format!(
            "need at least 100 Euler steps, got {t_max}"
        )));
    }
    let d = denoiser.dataset().dim();
    let mut z: Vec<Vec<f64>> = z_start.to_vec();
    let mut states = vec![z.concat()];
    let mut eps_norms = Vec::with_capacity(t_max);
    for t in (1..=t_max).rev() {
        let refs: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
        let levels = vec![schedule.level(t); z.len()];
        let eps = denoiser.predict(&refs, &levels, condition)?;
        eps_norms.push(norm(&eps.concat()));
        for (frame, e) in z.iter_mut().zip(&eps) {
            for (x, e) in frame.iter_mut().zip(e) {
                *x -= c * e;
            }
        }
        let flat = z.concat();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(t - 1));
        }
        debug_assert_eq!(flat.len(), z.len() * d);
        states.push(flat);
    }
    let max_eps = eps_norms.iter().copied().fold(0.0, f64::max);
    let mut max_ratio: f64 = 0.0;
    for a in 0..states.len() {
        for b in a + 1..states.len() {
            let diff: f64 = states[a]
                .iter()
                .zip(&states[b])
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            max_ratio = max_ratio.max(diff / (c * max_eps * (b - a) as f64));
        }
    }
    Ok(Trajectory {
        states,
        eps_norms,
        slope: c,
        max_eps,
        max_ratio,
    })
}

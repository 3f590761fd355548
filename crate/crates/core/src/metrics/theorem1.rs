//! Excess prediction error of a uniform-assumption model as the noise levels
//! inside its input window spread apart.

use rayon::prelude::*;

use super::gap::{gap_terms, mean_stderr, GapSample};
use crate::denoiser::Denoiser;
use crate::error::{invalid, Result};
use crate::schedule::Level;

/// Mean excess error at one spread.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadPoint {
    pub spread: f64,
    pub excess: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub points: Vec<SpreadPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl SweepReport {
    /// Whether each point is at least its predecessor, allowing `k` combined
    /// standard errors of slack.
    pub fn is_monotone(&self, k: f64) -> bool {
        self.points.windows(2).all(|w| {
            let slack = k * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            w[1].excess >= w[0].excess - slack
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "spread,excess,stderr")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.spread, p.excess, p.stderr)?;
        }
        Ok(())
    }
}

/// Noise levels of a variance-exploding window whose centre frame sits at
/// `sigma` and whose levels grow linearly by `spread` from first to last frame.
pub fn spread_levels(f: usize, sigma: f64, spread: f64) -> Vec<Level> {
    let b = f / 2;
    let step = if f > 1 { spread / (f - 1) as f64 } else { 0.0 };
    (0..f)
        .map(|m| Level::new(1.0, sigma + step * (m as f64 - b as f64)))
        .collect()
}

/// For each spread, the mean over samples of
/// `|model(z_diag)^b - truth(z_vdm)^b| - |model(z_vdm)^b - truth(z_vdm)^b|`
/// with `b` the centre frame, plus a least-squares line through the means.
pub fn theorem1_sweep(
    model: &Denoiser,
    truth: &Denoiser,
    sigma: f64,
    spreads: &[f64],
    samples: &[GapSample],
) -> Result<SweepReport> {
    let mut distinct = spreads.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 || distinct[0] != 0.0 {
        return Err(invalid("need at least four distinct spreads including 0"));
    }
    if samples.len() < 2 {
        return Err(invalid("need at least two samples"));
    }
    let f = truth.dataset().frames();
    let b = f / 2;
    let centre = Level::new(1.0, sigma);
    let mut points = Vec::with_capacity(spreads.len());
    for &spread in spreads {
        let levels = spread_levels(f, sigma, spread);
        if levels.iter().any(|l| l.sigma.is_nan() || l.sigma <= 0.0) {
            return Err(invalid(format!(
                "spread {spread} drives a level to zero at sigma {sigma}"
            )));
        }
        let excess: Vec<f64> = samples
            .par_iter()
            .map(|s| {
                gap_terms(model, truth, centre, &levels, b, s).map(|t| t.numerator - t.denominator)
            })
            .collect::<Result<_>>()?;
        let (mean, stderr) = mean_stderr(&excess);
        points.push(SpreadPoint {
            spread,
            excess: mean,
            stderr,
        });
    }
    let (slope, intercept, r_squared) = linear_fit(
        &points.iter().map(|p| p.spread).collect::<Vec<_>>(),
        &points.iter().map(|p| p.excess).collect::<Vec<_>>(),
    );
    Ok(SweepReport {
        points,
        slope,
        intercept,
        r_squared,
    })
}

/// Ordinary least squares `y = slope x + intercept` and its R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

//! Training-inference gap: relative noise-prediction error of a
//! uniform-assumption model on diagonal stacks versus uniform stacks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::ClipDataset;
use crate::denoiser::Denoiser;
use crate::error::{invalid, Error, Result};
use crate::schedule::{Level, NoiseSchedule, TimestepGrid};

/// Denominators at or below this are excluded from the ratio averages.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

/// A clean clip and the noise shared by its diagonal and uniform versions.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSample {
    pub component: usize,
    /// Row-major `f x d` standard-normal draws.
    pub noise: Vec<f64>,
}

impl GapSample {
    /// Frame `m` perturbed to `level`: `s y^m + sigma eps^m`.
    pub fn perturbed_frame(&self, data: &ClipDataset, m: usize, level: Level) -> Vec<f64> {
        let d = data.dim();
        data.component_frame(self.component, m)
            .iter()
            .zip(&self.noise[m * d..(m + 1) * d])
            .map(|(y, e)| level.s * y + level.sigma * e)
            .collect()
    }
}

/// Draws `count` samples: a uniformly chosen component and fresh noise each.
pub fn draw_gap_samples(data: &ClipDataset, count: usize, seed: u64) -> Vec<GapSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fd = data.frames() * data.dim();
    (0..count)
        .map(|_| {
            let component = rng.random_range(0..data.len());
            let noise = (0..fd).map(|_| rng.sample(StandardNormal)).collect();
            GapSample { component, noise }
        })
        .collect()
}

/// How the sampler groups queue frames into denoiser windows, which fixes the
/// mixed noise levels a frame is predicted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextLayout {
    /// `n` disjoint blocks of `f` over an `nf`-step grid (`n = 1` is plain
    /// diagonal denoising).
    Partitioned { f: usize, n: usize },
    /// Overlapping blocks of stride `f / 2` over an `nf`-step grid, each frame
    /// predicted in the block whose second half contains it.
    Lookahead { f: usize, n: usize },
    /// Every frame of the window at the predicted frame's own level.
    ZeroSpread { f: usize, n: usize },
}

impl ContextLayout {
    pub fn window(&self) -> usize {
        match *self {
            ContextLayout::Partitioned { f, .. }
            | ContextLayout::Lookahead { f, .. }
            | ContextLayout::ZeroSpread { f, .. } => f,
        }
    }

    /// Number of queue body positions, `nf`.
    pub fn positions(&self) -> usize {
        match *self {
            ContextLayout::Partitioned { f, n }
            | ContextLayout::Lookahead { f, n }
            | ContextLayout::ZeroSpread { f, n } => f * n,
        }
    }

    /// Grid positions of the window that predicts body position `p`
    /// (1-based), and `p`'s index inside that window.
    pub fn window_for(&self, p: usize) -> (Vec<usize>, usize) {
        match *self {
            ContextLayout::Partitioned { f, .. } => {
                let k = (p - 1) / f;
                ((k * f + 1..=(k + 1) * f).collect(), p - 1 - k * f)
            }
            ContextLayout::Lookahead { f, .. } => {
                let half = f / 2;
                let slot = p + half;
                let k = (slot - 1) / half - 1;
                let positions = (k * half + 1..=(k + 2) * half)
                    .map(|u| u.saturating_sub(half).max(1))
                    .collect();
                (positions, slot - 1 - k * half)
            }
            ContextLayout::ZeroSpread { f, .. } => {
                let b = (p - 1) % f;
                (vec![p; f], b)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (f, n) = match *self {
            ContextLayout::Partitioned { f, n }
            | ContextLayout::Lookahead { f, n }
            | ContextLayout::ZeroSpread { f, n } => (f, n),
        };
        if f < 1 || n < 1 {
            return Err(invalid("layout needs f >= 1 and n >= 1"));
        }
        if matches!(self, ContextLayout::Lookahead { .. }) && !f.is_multiple_of(2) {
            return Err(Error::OddWindow(f));
        }
        Ok(())
    }
}

/// Per-position ratio curve and its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeMse {
    /// Mean ratio at body positions `1..=nf`; `NaN` where every sample was
    /// excluded.
    pub curve: Vec<f64>,
    /// Standard error of each curve point.
    pub stderr: Vec<f64>,
    /// Mean of the finite curve points.
    pub mean: f64,
    pub excluded: usize,
    pub evaluated: usize,
}

/// Numerator and denominator of the relative error for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapTerms {
    pub numerator: f64,
    pub denominator: f64,
}

/// Measures `|model(z_diag)^i - truth(z_vdm)^i| / |model(z_vdm)^i - truth(z_vdm)^i|`
/// for every sample and body position of `layout` on `grid`.
pub fn relative_mse(
    model: &Denoiser,
    truth: &Denoiser,
    schedule: &NoiseSchedule,
    grid: &TimestepGrid,
    layout: ContextLayout,
    samples: &[GapSample],
) -> Result<RelativeMse> {
    layout.validate()?;
    let positions = layout.positions();
    if grid.steps() != positions {
        return Err(Error::ConfigMismatch(format!(
            "layout needs an {positions}-step grid, got {}",
            grid.steps()
        )));
    }
    if layout.window() > truth.dataset().frames() {
        return Err(invalid("window longer than the dataset clips"));
    }
    let per_sample: Vec<Vec<GapTerms>> = samples
        .par_iter()
        .map(|sample| {
            (1..=positions)
                .map(|p| {
                    let (window, b) = layout.window_for(p);
                    let levels: Vec<Level> = window
                        .iter()
                        .map(|&q| schedule.level(grid.tau(q)))
                        .collect();
                    gap_terms(
                        model,
                        truth,
                        schedule.level(grid.tau(p)),
                        &levels,
                        b,
                        sample,
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut curve = Vec::with_capacity(positions);
    let mut stderr = Vec::with_capacity(positions);
    let (mut excluded, mut evaluated) = (0, 0);
    for p in 0..positions {
        let kept: Vec<GapTerms> = per_sample
            .iter()
            .map(|terms| terms[p])
            .filter(|t| t.denominator > DENOMINATOR_GUARD)
            .collect();
        excluded += samples.len() - kept.len();
        evaluated += kept.len();
        let (ratio, se) = ratio_of_means(&kept);
        curve.push(ratio);
        stderr.push(se);
    }
    let finite: Vec<f64> = curve.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::AllSamplesExcluded);
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    Ok(RelativeMse {
        curve,
        stderr,
        mean,
        excluded,
        evaluated,
    })
}

/// Error terms for frame `b` of a window at `diag_levels`, compared with the
/// same clip and noise with every frame at `uniform`.
pub fn gap_terms(
    model: &Denoiser,
    truth: &Denoiser,
    uniform: Level,
    diag_levels: &[Level],
    b: usize,
    sample: &GapSample,
) -> Result<GapTerms> {
    let data = truth.dataset();
    let condition = data.label(sample.component);
    let m_len = diag_levels.len();
    let diag: Vec<Vec<f64>> = (0..m_len)
        .map(|m| sample.perturbed_frame(data, m, diag_levels[m]))
        .collect();
    let vdm: Vec<Vec<f64>> = (0..m_len)
        .map(|m| sample.perturbed_frame(data, m, uniform))
        .collect();
    let uniform_levels = vec![uniform; m_len];
    let diag_refs: Vec<&[f64]> = diag.iter().map(Vec::as_slice).collect();
    let vdm_refs: Vec<&[f64]> = vdm.iter().map(Vec::as_slice).collect();
    let target = truth.predict_frame(&vdm_refs, &uniform_levels, condition, b)?;
    let on_diag = model.predict_frame(&diag_refs, diag_levels, condition, b)?;
    let on_vdm = model.predict_frame(&vdm_refs, &uniform_levels, condition, b)?;
    Ok(GapTerms {
        numerator: distance(&on_diag, &target),
        denominator: distance(&on_vdm, &target),
    })
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Ratio of mean squared errors, `sum(num^2) / sum(den^2)`, with a
/// delta-method standard error.
fn ratio_of_means(terms: &[GapTerms]) -> (f64, f64) {
    if terms.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = terms.len() as f64;
    let num = terms.iter().map(|t| t.numerator.powi(2)).sum::<f64>() / n;
    let den = terms.iter().map(|t| t.denominator.powi(2)).sum::<f64>() / n;
    let ratio = num / den;
    if terms.len() < 2 {
        return (ratio, 0.0);
    }
    let var = terms
        .iter()
        .map(|t| (t.numerator.powi(2) - ratio * t.denominator.powi(2)).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (ratio, (var / n).sqrt() / den)
}

pub(crate) fn mean_stderr(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One cell of the partition/lookahead grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub n: usize,
    pub lookahead: bool,
    pub result: RelativeMse,
}

/// Partition counts of the ablation grid.
pub const ABLATION_PARTITIONS: [usize; 3] = [1, 2, 4];

/// Relative MSE for `n` in {1, 2, 4}, each without and with lookahead, on
/// grids of `n f` steps.
pub fn ablation(
    model: &Denoiser,
    truth: &Denoiser,
    schedule: &NoiseSchedule,
    f: usize,
    samples: &[GapSample],
) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::with_capacity(6);
    for n in ABLATION_PARTITIONS {
        let grid = crate::schedule::make_grid(schedule, n * f)?;
        for lookahead in [false, true] {
            let layout = if lookahead {
                ContextLayout::Lookahead { f, n }
            } else {
                ContextLayout::Partitioned { f, n }
            };
            let result = relative_mse(model, truth, schedule, &grid, layout, samples)?;
            cells.push(AblationCell {
                n,
                lookahead,
                result,
            });
        }
    }
    Ok(cells)
}

/// Orderings violated by an ablation grid: means must fall strictly as `n`
/// grows, and lookahead must be strictly lower at every `n`.
pub fn ablation_violations(cells: &[AblationCell]) -> Vec<String> {
    let mean = |n: usize, la: bool| {
        cells
            .iter()
            .find(|c| c.n == n && c.lookahead == la)
            .map(|c| c.result.mean)
    };
    let mut out = Vec::new();
    for la in [false, true] {
        for w in ABLATION_PARTITIONS.windows(2) {
            match (mean(w[0], la), mean(w[1], la)) {
                (Some(a), Some(b)) if a > b => {}
                (a, b) => out.push(format!(
                    "lookahead={la}: n={} ({a:?}) not above n={} ({b:?})",
                    w[0], w[1]
                )),
            }
        }
    }
    for n in ABLATION_PARTITIONS {
        match (mean(n, false), mean(n, true)) {
            (Some(a), Some(b)) if a > b => {}
            (a, b) => out.push(format!("n={n}: lookahead ({b:?}) not below plain ({a:?})")),
        }
    }
    out
}

pub fn write_ablation_csv<W: std::io::Write>(cells: &[AblationCell], mut w: W) -> Result<()> {
    writeln!(w, "n,lookahead,mean,excluded,evaluated")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{},{}",
            c.n, c.lookahead, c.result.mean, c.result.excluded, c.result.evaluated
        )?;
    }
    Ok(())
}

pub fn write_curves_csv<W: std::io::Write>(cells: &[AblationCell], mut w: W) -> Result<()> {
    writeln!(w, "n,lookahead,position,ratio,stderr")?;
    for c in cells {
        for (p, (r, se)) in c.result.curve.iter().zip(&c.result.stderr).enumerate() {
            writeln!(w, "{},{},{},{r},{se}", c.n, c.lookahead, p + 1)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::data::build_dataset;
    use crate::denoiser::TrainingSubset;
    use crate::schedule::{build_ve_schedule, make_grid};

    fn setup() -> (Arc<ClipDataset>, NoiseSchedule) {
        (
            Arc::new(build_dataset(3, 12, 4, 3, 1, 2).unwrap()),
            build_ve_schedule(1000, 0.01).unwrap(),
        )
    }

    #[test]
    fn partition_windows() {
        let l = ContextLayout::Partitioned { f: 4, n: 2 };
        assert_eq!(l.window_for(1), (vec![1, 2, 3, 4], 0));
        assert_eq!(l.window_for(6), (vec![5, 6, 7, 8], 1));
    }

    #[test]
    fn lookahead_windows() {
        let l = ContextLayout::Lookahead { f: 4, n: 1 };
        // Dummy slots sit at position 1 ahead of the body.
        assert_eq!(l.window_for(1), (vec![1, 1, 1, 2], 2));
        assert_eq!(l.window_for(2), (vec![1, 1, 1, 2], 3));
        assert_eq!(l.window_for(3), (vec![1, 2, 3, 4], 2));
        assert_eq!(l.window_for(4), (vec![1, 2, 3, 4], 3));
        assert!(ContextLayout::Lookahead { f: 3, n: 1 }.validate().is_err());
    }

    #[test]
    fn zero_spread_ratio_is_one() {
        let (data, sch) = setup();
        let grid = make_grid(&sch, 8).unwrap();
        let truth = Denoiser::exact(data.clone());
        let model = Denoiser::uniform(data.clone(), TrainingSubset::EvenIndices);
        let samples = draw_gap_samples(&data, 10, 1);
        let r = relative_mse(
            &model,
            &truth,
            &sch,
            &grid,
            ContextLayout::ZeroSpread { f: 4, n: 2 },
            &samples,
        )
        .unwrap();
        assert!(r.curve.iter().all(|&v| v == 1.0));
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.excluded, 0);
    }

    #[test]
    fn exact_model_is_excluded() {
        let (data, sch) = setup();
        let grid = make_grid(&sch, 4).unwrap();
        let truth = Denoiser::exact(data.clone());
        let model = Denoiser::uniform(data.clone(), TrainingSubset::Full);
        let samples = draw_gap_samples(&data, 5, 1);
        let r = relative_mse(
            &model,
            &truth,
            &sch,
            &grid,
            ContextLayout::ZeroSpread { f: 4, n: 1 },
            &samples,
        );
        assert!(matches!(r, Err(Error::AllSamplesExcluded)));
    }

    #[test]
    fn grid_must_match_layout() {
        let (data, sch) = setup();
        let grid = make_grid(&sch, 5).unwrap();
        let truth = Denoiser::exact(data.clone());
        let samples = draw_gap_samples(&data, 2, 1);
        let r = relative_mse(
            &truth,
            &truth,
            &sch,
            &grid,
            ContextLayout::Partitioned { f: 4, n: 1 },
            &samples,
        );
        assert!(matches!(r, Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn shared_noise_construction() {
        let (data, _) = setup();
        let s = &draw_gap_samples(&data, 1, 3)[0];
        let level = Level::new(0.5, 2.0);
        let z = s.perturbed_frame(&data, 1, level);
        for (k, (z, y)) in z
            .iter()
            .zip(data.component_frame(s.component, 1))
            .enumerate()
        {
            assert_eq!(*z, 0.5 * y + 2.0 * s.noise[3 + k]);
        }
    }

    #[test]
    fn violations_are_listed() {
        let cell = |n, lookahead, mean| AblationCell {
            n,
            lookahead,
            result: RelativeMse {
                curve: vec![mean],
                stderr: vec![0.0],
                mean,
                excluded: 0,
                evaluated: 1,
            },
        };
        let good = vec![
            cell(1, false, 3.0),
            cell(1, true, 2.0),
            cell(2, false, 2.5),
            cell(2, true, 1.5),
            cell(4, false, 2.2),
            cell(4, true, 1.2),
        ];
        assert!(ablation_violations(&good).is_empty());
        let mut bad = good.clone();
        bad[5].result.mean = 1.6;
        assert_eq!(ablation_violations(&bad).len(), 1);
        assert_eq!(ablation_violations(&good[..4]).len(), 3);
    }
}

//! Noise predictors over stacks of frame latents with per-frame noise levels.
//!
//! Both predictors are posterior means of a Gaussian mixture whose components
//! are the dataset clips. For a stack `Z` whose frame `m` sits at level
//! `(s_m, sigma_m)`, the exact predictor weights component `j` by
//!
//! ```text
//! log w_j = -sum_m |z^m - s_m y_j^m|^2 / (2 sigma_m^2)   (normalised)
//! ```
//!
//! and returns `eps^i = (z^i - s_i yhat^i) / sigma_i`, which is
//! `-sigma_i * grad_{z^i} log p(Z)`. The uniform-assumption predictor scores
//! frame `i` as if the whole stack sat at frame `i`'s level, over a training
//! subset of the components.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{by_condition, ClipDataset};
use crate::error::{invalid, Error, Result};
use crate::schedule::{Level, NoiseSchedule};

/// Frame latents presented to a denoiser together with their timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub frames: Vec<Vec<f64>>,
    pub tsteps: Vec<usize>,
    pub condition: u32,
}

impl FrameStack {
    pub fn new(frames: Vec<Vec<f64>>, tsteps: Vec<usize>, condition: u32) -> Self {
        FrameStack {
            frames,
            tsteps,
            condition,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn levels(&self, schedule: &NoiseSchedule) -> Result<Vec<Level>> {
        self.tsteps
            .iter()
            .map(|&t| {
                if t > schedule.t_max() {
                    Err(invalid(format!(
                        "timestep {t} exceeds T = {}",
                        schedule.t_max()
                    )))
                } else {
                    Ok(schedule.level(t))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Exact anisotropic mixture score over the full dataset.
    ExactAnisotropic,
    /// Surrogate for a network trained on uniform noise levels only.
    UniformAssumption,
}

/// Which components the uniform-assumption model was "trained" on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingSubset {
    /// Components at even indices.
    EvenIndices,
    /// A seeded uniform draw of half the components.
    RandomHalf { seed: u64 },
    /// Every component; only useful for degeneracy checks.
    Full,
}

impl TrainingSubset {
    fn select(self, n: usize) -> Vec<usize> {
        match self {
            TrainingSubset::EvenIndices => (0..n).step_by(2).collect(),
            TrainingSubset::RandomHalf { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = sample(&mut rng, n, n.div_ceil(2)).into_vec();
                idx.sort_unstable();
                idx
            }
            TrainingSubset::Full => (0..n).collect(),
        }
    }
}

/// A noise predictor backed by a set of mixture components.
#[derive(Debug, Clone)]
pub struct Denoiser {
    variant: Variant,
    data: Arc<ClipDataset>,
    members: Vec<usize>,
    groups: BTreeMap<u32, Vec<usize>>,
    /// `|y_j^m|^2`, indexed `j * f + m`.
    sq_norms: Vec<f64>,
}

impl Denoiser {
    /// Exact predictor over the whole dataset.
    pub fn exact(data: Arc<ClipDataset>) -> Self {
        let members = (0..data.len()).collect::<Vec<_>>();
        Self::with_members(Variant::ExactAnisotropic, data, members)
    }

    /// Uniform-assumption predictor over `subset`.
    pub fn uniform(data: Arc<ClipDataset>, subset: TrainingSubset) -> Self {
        let members = subset.select(data.len());
        Self::with_members(Variant::UniformAssumption, data, members)
    }

    /// A predictor of the given variant over explicit component indices.
    pub fn with_members(variant: Variant, data: Arc<ClipDataset>, members: Vec<usize>) -> Self {
        let f = data.frames();
        let sq_norms = (0..data.len())
            .flat_map(|j| (0..f).map(move |m| (j, m)))
            .map(|(j, m)| data.component_frame(j, m).iter().map(|v| v * v).sum())
            .collect();
        let groups = by_condition(&data, &members);
        Denoiser {
            variant,
            data,
            members,
            groups,
            sq_norms,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dataset(&self) -> &Arc<ClipDataset> {
        &self.data
    }

    /// Component indices this predictor mixes over.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// The same variant restricted to another component set.
    pub fn restricted(&self, members: Vec<usize>) -> Self {
        Self::with_members(self.variant, self.data.clone(), members)
    }

    /// Members carrying `condition`.
    pub fn components_for(&self, condition: u32) -> Result<&[usize]> {
        self.groups
            .get(&condition)
            .map(Vec::as_slice)
            .ok_or(Error::NoMatchingCondition(condition))
    }

    /// Predicts noise for every frame of the stack.
    pub fn eps(&self, stack: &FrameStack, schedule: &NoiseSchedule) -> Result<Vec<Vec<f64>>> {
        let levels = stack.levels(schedule)?;
        let frames: Vec<&[f64]> = stack.frames.iter().map(Vec::as_slice).collect();
        self.predict(&frames, &levels, stack.condition)
    }

    /// Predicts noise for every frame given explicit levels.
    pub fn predict(
        &self,
        frames: &[&[f64]],
        levels: &[Level],
        condition: u32,
    ) -> Result<Vec<Vec<f64>>> {
        self.predict_frames(frames, levels, condition, 0..frames.len())
    }

    /// Predicts noise for frames `range` of the stack, sharing the sufficient
    /// statistics across them.
    pub fn predict_frames(
        &self,
        frames: &[&[f64]],
        levels: &[Level],
        condition: u32,
        range: std::ops::Range<usize>,
    ) -> Result<Vec<Vec<f64>>> {
        if range.end > frames.len() || range.start > range.end {
            return Err(invalid(format!(
                "frames {range:?} outside a stack of {}",
                frames.len()
            )));
        }
        let kernel = self.kernel(frames, levels, condition)?;
        match self.variant {
            Variant::ExactAnisotropic => {
                let lw = kernel.anisotropic_log_weights();
                Ok(range.map(|i| kernel.eps_for(&lw, i)).collect())
            }
            Variant::UniformAssumption => Ok(range
                .map(|i| kernel.eps_for(&kernel.uniform_log_weights(levels[i]), i))
                .collect()),
        }
    }

    /// Predicts noise for frame `i` only.
    pub fn predict_frame(
        &self,
        frames: &[&[f64]],
        levels: &[Level],
        condition: u32,
        i: usize,
    ) -> Result<Vec<f64>> {
        if i >= frames.len() {
            return Err(invalid(format!(
                "frame {i} outside a stack of {}",
                frames.len()
            )));
        }
        let kernel = self.kernel(frames, levels, condition)?;
        let lw = match self.variant {
            Variant::ExactAnisotropic => kernel.anisotropic_log_weights(),
            Variant::UniformAssumption => kernel.uniform_log_weights(levels[i]),
        };
        Ok(kernel.eps_for(&lw, i))
    }

    fn kernel<'a>(
        &'a self,
        frames: &'a [&'a [f64]],
        levels: &'a [Level],
        condition: u32,
    ) -> Result<Kernel<'a>> {
        self.check(frames, levels)?;
        let components = self.components_for(condition)?;
        Ok(Kernel::new(self, frames, levels, components))
    }

    fn check(&self, frames: &[&[f64]], levels: &[Level]) -> Result<()> {
        let (f, d) = (self.data.frames(), self.data.dim());
        if frames.is_empty() || frames.len() > f {
            return Err(invalid(format!(
                "stack of {} frames, need 1..={f}",
                frames.len()
            )));
        }
        if levels.len() != frames.len() {
            return Err(invalid("one level per frame required"));
        }
        if let Some(bad) = frames.iter().position(|z| z.len() != d) {
            return Err(invalid(format!("frame {bad} does not have dimension {d}")));
        }
        if let Some(frame) = levels
            .iter()
            .position(|l| l.sigma.is_nan() || l.sigma <= 0.0)
        {
            return Err(Error::DegenerateSigma { frame });
        }
        Ok(())
    }
}

/// Sufficient statistics of one stack against one component set.
struct Kernel<'a> {
    owner: &'a Denoiser,
    frames: &'a [&'a [f64]],
    levels: &'a [Level],
    components: &'a [usize],
    /// `|z^m|^2`.
    z_sq: Vec<f64>,
    /// `z^m . y_j^m`, indexed `k * m_len + m` for the `k`-th listed component.
    dots: Vec<f64>,
}

impl<'a> Kernel<'a> {
    fn new(
        owner: &'a Denoiser,
        frames: &'a [&'a [f64]],
        levels: &'a [Level],
        components: &'a [usize],
    ) -> Self {
        let m_len = frames.len();
        let z_sq = frames.iter().map(|z| dot(z, z)).collect();
        let mut dots = Vec::with_capacity(components.len() * m_len);
        for &j in components {
            for (m, z) in frames.iter().enumerate() {
                dots.push(dot(z, owner.data.component_frame(j, m)));
            }
        }
        Kernel {
            owner,
            frames,
            levels,
            components,
            z_sq,
            dots,
        }
    }

    fn sq_norm(&self, j: usize, m: usize) -> f64 {
        self.owner.sq_norms[j * self.owner.data.frames() + m]
    }

    /// Normalised log weights with each frame at its own level.
    fn anisotropic_log_weights(&self) -> Vec<f64> {
        let m_len = self.frames.len();
        let raw = self
            .components
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                (0..m_len)
                    .map(|m| {
                        let Level { s, sigma } = self.levels[m];
                        let r2 = self.z_sq[m] - 2.0 * s * self.dots[k * m_len + m]
                            + s * s * self.sq_norm(j, m);
                        -r2 / (2.0 * sigma * sigma)
                    })
                    .sum()
            })
            .collect();
        normalize_log(raw)
    }

    /// Normalised log weights with the whole stack treated as sitting at `level`.
    fn uniform_log_weights(&self, level: Level) -> Vec<f64> {
        let m_len = self.frames.len();
        let Level { s, sigma } = level;
        let raw = self
            .components
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                (0..m_len)
                    .map(|m| {
                        let r2 = self.z_sq[m] - 2.0 * s * self.dots[k * m_len + m]
                            + s * s * self.sq_norm(j, m);
                        -r2 / (2.0 * sigma * sigma)
                    })
                    .sum()
            })
            .collect();
        normalize_log(raw)
    }

    fn eps_for(&self, log_w: &[f64], i: usize) -> Vec<f64> {
        let d = self.owner.data.dim();
        let mut y_hat = vec![0.0; d];
        for (&j, lw) in self.components.iter().zip(log_w) {
            let w = lw.exp();
            for (acc, y) in y_hat.iter_mut().zip(self.owner.data.component_frame(j, i)) {
                *acc += w * y;
            }
        }
        let Level { s, sigma } = self.levels[i];
        self.frames[i]
            .iter()
            .zip(&y_hat)
            .map(|(z, y)| (z - s * y) / sigma)
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Subtracts the log-sum-exp so that the exponentials sum to one.
fn normalize_log(mut v: Vec<f64>) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter_mut().for_each(|x| *x -= lse);
    v
}

/// Log posterior weights of `components` for the stack, each frame at its own
/// level.
pub fn log_weights(
    data: &Arc<ClipDataset>,
    stack: &FrameStack,
    schedule: &NoiseSchedule,
    components: &[usize],
) -> Result<Vec<f64>> {
    if let Some(&j) = components.iter().find(|&&j| j >= data.len()) {
        return Err(invalid(format!("component {j} out of range")));
    }
    let den = Denoiser::with_members(Variant::ExactAnisotropic, data.clone(), components.to_vec());
    let levels = stack.levels(schedule)?;
    let frames: Vec<&[f64]> = stack.frames.iter().map(Vec::as_slice).collect();
    den.check(&frames, &levels)?;
    Ok(Kernel::new(&den, &frames, &levels, components).anisotropic_log_weights())
}

/// Exact anisotropic prediction over all of `denoiser`'s dataset.
pub fn eps_exact(
    data: &Arc<ClipDataset>,
    stack: &FrameStack,
    schedule: &NoiseSchedule,
) -> Result<Vec<Vec<f64>>> {
    Denoiser::exact(data.clone()).eps(stack, schedule)
}

/// Uniform-assumption prediction over `subset`.
pub fn eps_model(
    data: &Arc<ClipDataset>,
    subset: TrainingSubset,
    stack: &FrameStack,
    schedule: &NoiseSchedule,
) -> Result<Vec<Vec<f64>>> {
    Denoiser::uniform(data.clone(), subset).eps(stack, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_dataset;
    use crate::schedule::{build_ve_schedule, build_vp_schedule};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn custom(f: usize, d: usize, comps: Vec<Vec<f64>>) -> Arc<ClipDataset> {
        let n = comps.len();
        Arc::new(ClipDataset::from_components(f, d, comps, vec![0; n]).unwrap())
    }

    fn refs(frames: &[Vec<f64>]) -> Vec<&[f64]> {
        frames.iter().map(Vec::as_slice).collect()
    }

    /// log sum_j exp(-sum_m |z^m - s_m y_j^m|^2 / 2 sigma_m^2), evaluated directly.
    fn log_density(data: &ClipDataset, frames: &[Vec<f64>], levels: &[Level]) -> f64 {
        let terms: Vec<f64> = (0..data.len())
            .map(|j| {
                frames
                    .iter()
                    .enumerate()
                    .map(|(m, z)| {
                        let y = data.component_frame(j, m);
                        let r2: f64 = z
                            .iter()
                            .zip(y)
                            .map(|(a, b)| (a - levels[m].s * b).powi(2))
                            .sum();
                        -r2 / (2.0 * levels[m].sigma.powi(2))
                    })
                    .sum()
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    #[test]
    fn single_component_is_scaled_residual() {
        let y = vec![0.5, -1.0, 2.0, 0.25];
        let data = custom(2, 2, vec![y.clone()]);
        let den = Denoiser::exact(data);
        let frames = vec![vec![1.0, 1.0], vec![-0.5, 0.3]];
        let levels = [Level::new(1.0, 0.7), Level::new(1.0, 1.9)];
        let eps = den.predict(&refs(&frames), &levels, 0).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                let expected = (frames[i][k] - y[i * 2 + k]) / levels[i].sigma;
                assert!((eps[i][k] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_pair_predicts_from_midpoint() {
        let data = custom(1, 2, vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let den = Denoiser::exact(data.clone());
        let z = vec![vec![0.0, 0.4]];
        let eps = den.predict(&refs(&z), &[Level::new(1.0, 0.5)], 0).unwrap();
        assert!((eps[0][0]).abs() < 1e-15);
        assert!((eps[0][1] - 0.8).abs() < 1e-15);
        let stack = FrameStack::new(z, vec![5], 0);
        let sch = build_ve_schedule(10, 0.1).unwrap();
        let lw = log_weights(&data, &stack, &sch, &[0, 1]).unwrap();
        for v in lw {
            assert!((v + std::f64::consts::LN_2).abs() < 1e-14);
        }
    }

    #[test]
    fn log_weights_single_and_separated() {
        let data = custom(1, 2, vec![vec![0.0, 0.0], vec![25.0, 0.0]]);
        let sch = build_ve_schedule(10, 0.05).unwrap();
        // sigma = 0.5, separation 50 sigma, z exactly at component 0.
        let stack = FrameStack::new(vec![vec![0.0, 0.0]], vec![10], 0);
        let lw = log_weights(&data, &stack, &sch, &[0, 1]).unwrap();
        assert!(lw[0].exp() >= 1.0 - 1e-10);
        let total: f64 = lw.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(log_weights(&data, &stack, &sch, &[1]).unwrap(), vec![0.0]);
    }

    #[test]
    fn finite_difference_gradient_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (f, d) = (2, 2);
            let comps: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..f * d).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let data = custom(f, d, comps);
            let levels: Vec<Level> = (0..f)
                .map(|_| {
                    let sigma = 0.3 + rng.random::<f64>();
                    Level::new((1.0 - 0.5 * sigma * sigma).max(0.2), sigma)
                })
                .collect();
            let frames: Vec<Vec<f64>> = (0..f)
                .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let eps = Denoiser::exact(data.clone())
                .predict(&refs(&frames), &levels, 0)
                .unwrap();
            let h = 1e-5;
            for i in 0..f {
                for k in 0..d {
                    let mut plus = frames.clone();
                    let mut minus = frames.clone();
                    plus[i][k] += h;
                    minus[i][k] -= h;
                    let grad = (log_density(&data, &plus, &levels)
                        - log_density(&data, &minus, &levels))
                        / (2.0 * h);
                    let fd = -levels[i].sigma * grad;
                    assert!(
                        (eps[i][k] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                        "{} vs {fd}",
                        eps[i][k]
                    );
                }
            }
        }
    }

    #[test]
    fn uniform_levels_reduce_to_literal_mixture_formula() {
        // eps = -sigma * grad(sum_i N(z; y_i, sigma^2 I)) / sum_i N, with s = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (f, d) = (3, 2);
        let comps: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..f * d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let data = custom(f, d, comps.clone());
        let sigma = 1.3;
        let z: Vec<f64> = (0..f * d).map(|_| rng.sample(StandardNormal)).collect();
        let dens: Vec<f64> = comps
            .iter()
            .map(|y| {
                let r2: f64 = z.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                (-r2 / (2.0 * sigma * sigma)).exp()
                    / (2.0 * std::f64::consts::PI * sigma * sigma).powf((f * d) as f64 / 2.0)
            })
            .collect();
        let total: f64 = dens.iter().sum();
        let frames: Vec<Vec<f64>> = z.chunks(d).map(<[f64]>::to_vec).collect();
        let eps = Denoiser::exact(data)
            .predict(&refs(&frames), &vec![Level::new(1.0, sigma); f], 0)
            .unwrap();
        for q in 0..f * d {
            let grad: f64 = comps
                .iter()
                .zip(&dens)
                .map(|(y, p)| -(z[q] - y[q]) / (sigma * sigma) * p)
                .sum();
            let literal = -sigma * grad / total;
            assert!((eps[q / d][q % d] - literal).abs() < 1e-12);
        }
    }

    #[test]
    fn model_equals_exact_on_uniform_stacks() {
        let data = Arc::new(build_dataset(4, 20, 6, 4, 2, 9).unwrap());
        let sch = build_vp_schedule(1000, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        for t in [20, 300, 900] {
            let stack = FrameStack::new(frames.clone(), vec![t; 6], 1);
            let full = eps_model(&data, TrainingSubset::Full, &stack, &sch).unwrap();
            assert_eq!(full, eps_exact(&data, &stack, &sch).unwrap());
            let model = Denoiser::uniform(data.clone(), TrainingSubset::EvenIndices);
            let exact_sub = Denoiser::exact(data.clone()).restricted(model.members().to_vec());
            assert_eq!(
                model.eps(&stack, &sch).unwrap(),
                exact_sub.eps(&stack, &sch).unwrap()
            );
        }
    }

    #[test]
    fn model_gap_vanishes_as_spread_shrinks() {
        let data = Arc::new(build_dataset(4, 24, 8, 4, 1, 2).unwrap());
        let sch = build_vp_schedule(1000, 1e-4, 0.02).unwrap();
        let model = Denoiser::uniform(data.clone(), TrainingSubset::EvenIndices);
        let exact_sub = Denoiser::exact(data.clone()).restricted(model.members().to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = data.component(5).to_vec();
        let noise: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
        let centre = 400usize;
        let gaps: Vec<f64> = [40usize, 20, 10, 5, 0]
            .iter()
            .map(|&delta| {
                let ts: Vec<usize> = (0..8).map(|m| centre - 4 * delta + m * delta).collect();
                let frames: Vec<Vec<f64>> = (0..8)
                    .map(|m| {
                        (0..4)
                            .map(|k| {
                                sch.s(ts[m]) * y[m * 4 + k] + sch.sigma(ts[m]) * noise[m * 4 + k]
                            })
                            .collect()
                    })
                    .collect();
                let stack = FrameStack::new(frames, ts, 0);
                let a = model.eps(&stack, &sch).unwrap();
                let b = exact_sub.eps(&stack, &sch).unwrap();
                a.iter()
                    .flatten()
                    .zip(b.iter().flatten())
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
        assert_eq!(*gaps.last().unwrap(), 0.0);
    }

    #[test]
    fn error_paths() {
        let data = custom(2, 2, vec![vec![0.0; 4]]);
        let den = Denoiser::exact(data);
        let frames = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert!(matches!(
            den.predict(
                &refs(&frames),
                &[Level::new(1.0, 0.5), Level::new(1.0, 0.0)],
                0
            ),
            Err(Error::DegenerateSigma { frame: 1 })
        ));
        assert!(matches!(
            den.predict(&refs(&frames), &[Level::new(1.0, 0.5); 2], 3),
            Err(Error::NoMatchingCondition(3))
        ));
        let three = vec![vec![0.0, 0.0]; 3];
        assert!(den
            .predict(&refs(&three), &[Level::new(1.0, 0.5); 3], 0)
            .is_err());
    }

    #[test]
    fn random_half_subset_is_seeded() {
        let a = TrainingSubset::RandomHalf { seed: 4 }.select(10);
        assert_eq!(a.len(), 5);
        assert_eq!(a, TrainingSubset::RandomHalf { seed: 4 }.select(10));
        assert_eq!(TrainingSubset::EvenIndices.select(5), vec![0, 2, 4]);
    }
}

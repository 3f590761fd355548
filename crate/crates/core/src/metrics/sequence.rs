//! Statistics of generated frame sequences.

use crate::data::ClipDataset;
use crate::error::{invalid, Result};
use crate::sampler::FifoRun;

/// Nearest dataset window for every length-`f` window of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Consistency {
    /// Distance from window `k` (frames `k..k+f`) to its nearest component.
    pub distances: Vec<f64>,
    /// Index of that component.
    pub nearest: Vec<usize>,
    pub max: f64,
}

impl Consistency {
    /// Condition label of each window's nearest component.
    pub fn labels(&self, data: &ClipDataset) -> Vec<u32> {
        self.nearest.iter().map(|&j| data.label(j)).collect()
    }

    /// Mean of the last quarter of the curve over the mean of the first.
    pub fn quartile_ratio(&self) -> f64 {
        let q = (self.distances.len() / 4).max(1);
        let head = &self.distances[..q];
        let tail = &self.distances[self.distances.len() - q..];
        mean(tail) / mean(head)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W, data: &ClipDataset) -> Result<()> {
        writeln!(w, "window,distance,component,parent,offset,condition")?;
        for (k, (&dist, &j)) in self.distances.iter().zip(&self.nearest).enumerate() {
            writeln!(
                w,
                "{k},{dist},{j},{},{},{}",
                data.parent_of(j),
                data.offset_of(j),
                data.label(j)
            )?;
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Euclidean distance from each length-`f` window of `frames` to the closest
/// dataset component.
pub fn consistency_metric(frames: &[Vec<f64>], data: &ClipDataset) -> Result<Consistency> {
    let (f, d) = (data.frames(), data.dim());
    if frames.len() < f {
        return Err(invalid(format!(
            "sequence of {} frames is shorter than the window {f}",
            frames.len()
        )));
    }
    if frames.iter().any(|z| z.len() != d) {
        return Err(invalid(format!("frames must have dimension {d}")));
    }
    let mut distances = Vec::with_capacity(frames.len() - f + 1);
    let mut nearest = Vec::with_capacity(frames.len() - f + 1);
    for window in frames.windows(f) {
        let (j, sq) = (0..data.len())
            .map(|j| {
                let sq: f64 = window
                    .iter()
                    .enumerate()
                    .map(|(m, z)| {
                        z.iter()
                            .zip(data.component_frame(j, m))
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                    })
                    .sum();
                (j, sq)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| invalid("empty dataset"))?;
        distances.push(sq.sqrt());
        nearest.push(j);
    }
    let max = distances.iter().copied().fold(0.0, f64::max);
    Ok(Consistency {
        distances,
        nearest,
        max,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    /// Mean of `|frame_{k+1} - frame_k|`.
    pub mean: f64,
    pub steps: Vec<f64>,
    /// `(lower edge, upper edge, count)` per bin.
    pub histogram: Vec<(f64, f64, usize)>,
}

impl Motion {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lower,upper,count")?;
        for (lo, hi, n) in &self.histogram {
            writeln!(w, "{lo},{hi},{n}")?;
        }
        Ok(())
    }
}

/// Frame-to-frame step sizes, their mean, and a histogram over `bins` equal
/// bins spanning `[0, max]`.
pub fn motion_magnitude(frames: &[Vec<f64>], bins: usize) -> Result<Motion> {
    if frames.len() < 2 {
        return Err(invalid("motion needs at least two frames"));
    }
    if bins < 1 {
        return Err(invalid("histogram needs at least one bin"));
    }
    let steps: Vec<f64> = frames
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (b - a).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let top = steps.iter().copied().fold(0.0, f64::max);
    let width = if top > 0.0 { top / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &s in &steps {
        counts[((s / width) as usize).min(bins - 1)] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(k, n)| (k as f64 * width, (k + 1) as f64 * width, n))
        .collect();
    Ok(Motion {
        mean: mean(&steps),
        steps,
        histogram,
    })
}

/// Largest number of latents the run held at once.
pub fn memory_account(run: &FifoRun) -> usize {
    run.log
        .iter()
        .map(|r| r.live_latents)
        .fold(run.peak_live_latents, usize::max)
}

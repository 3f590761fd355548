//! Synthetic clip dataset standing in for a video training corpus, plus the
//! latent-to-pixel decoder and the on-disk formats used for dumps.
//!
//! Each parent trajectory is a 2-D sinusoid with linear drift,
//!
//! ```text
//! p(t) = (A cos(w t + phi) + v_x t, A sin(w t + phi) + v_y t)
//! ```
//!
//! lifted into `d` dimensions by a random orthonormal `d x 2` embedding shared
//! by every parent of one build. Clips are all stride-1 windows of length `f`.
//! Motion parameters are drawn uniformly from [`AMPLITUDE_RANGE`],
//! [`OMEGA_RANGE`], `[0, 2 pi)` for the phase and [`DRIFT_RANGE`] per axis.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

pub const AMPLITUDE_RANGE: (f64, f64) = (0.8, 1.6);
pub const OMEGA_RANGE: (f64, f64) = (0.3, 0.7);
pub const DRIFT_RANGE: (f64, f64) = (-0.03, 0.03);

/// A closed-form motion path of `length` frames in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParentTrajectory {
    pub id: usize,
    pub condition: u32,
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    pub drift: [f64; 2],
    pub length: usize,
    pub dim: usize,
    /// Column-major `dim x 2` orthonormal lift.
    embedding: Vec<[f64; 2]>,
}

impl ParentTrajectory {
    /// Latent of frame `t`.
    pub fn position(&self, t: usize) -> Vec<f64> {
        let t = t as f64;
        let angle = self.omega * t + self.phase;
        let px = self.amplitude * angle.cos() + self.drift[0] * t;
        let py = self.amplitude * angle.sin() + self.drift[1] * t;
        self.embedding
            .iter()
            .map(|e| e[0] * px + e[1] * py)
            .collect()
    }

    /// Frames `[offset, offset + f)`, row-major `f x dim`.
    pub fn window(&self, offset: usize, f: usize) -> Vec<f64> {
        (offset..offset + f)
            .flat_map(|t| self.position(t))
            .collect()
    }
}

/// Mixture components `y_j`: every stride-1 window of every parent.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipDataset {
    f: usize,
    d: usize,
    components: Vec<Vec<f64>>,
    labels: Vec<u32>,
    parent_ids: Vec<usize>,
    offsets: Vec<usize>,
    parents: Vec<ParentTrajectory>,
}

impl ClipDataset {
    /// A dataset of explicit clips with no parent trajectories behind them.
    pub fn from_components(
        f: usize,
        d: usize,
        components: Vec<Vec<f64>>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if f < 1 || d < 1 {
            return Err(invalid("f and d must be positive"));
        }
        if components.len() != labels.len() {
            return Err(invalid("one label per component required"));
        }
        if components.iter().any(|c| c.len() != f * d) {
            return Err(invalid(format!(
                "every component must hold {f} x {d} values"
            )));
        }
        let n = components.len();
        Ok(ClipDataset {
            f,
            d,
            components,
            labels,
            parent_ids: (0..n).collect(),
            offsets: vec![0; n],
            parents: Vec::new(),
        })
    }

    /// Frames per clip.
    pub fn frames(&self) -> usize {
        self.f
    }

    /// Latent dimension per frame.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Row-major `f x d` clip `j`.
    pub fn component(&self, j: usize) -> &[f64] {
        &self.components[j]
    }

    /// Frame `m` of clip `j`.
    pub fn component_frame(&self, j: usize, m: usize) -> &[f64] {
        &self.components[j][m * self.d..(m + 1) * self.d]
    }

    pub fn label(&self, j: usize) -> u32 {
        self.labels[j]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn parent_of(&self, j: usize) -> usize {
        self.parent_ids[j]
    }

    pub fn offset_of(&self, j: usize) -> usize {
        self.offsets[j]
    }

    pub fn parents(&self) -> &[ParentTrajectory] {
        &self.parents
    }

    /// Distinct condition labels, ascending.
    pub fn conditions(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Component index of `(parent, offset)`.
    pub fn index_of(&self, parent: usize, offset: usize) -> Option<usize> {
        let per_parent = self.parents.first()?.length + 1 - self.f;
        (parent < self.parents.len() && offset < per_parent).then(|| parent * per_parent + offset)
    }

    /// Verifies that each clip equals its parent window and that consecutive
    /// windows of one parent overlap in `f - 1` frames.
    pub fn check_window_chaining(&self) -> Result<()> {
        if self.parents.is_empty() {
            return Ok(());
        }
        let fd = self.f * self.d;
        for j in 0..self.len() {
            let parent = &self.parents[self.parent_ids[j]];
            if parent.window(self.offsets[j], self.f) != self.components[j] {
                return Err(Error::Format(format!(
                    "component {j} differs from its parent window"
                )));
            }
            if self.offsets[j] + self.f < parent.length {
                let next = self
                    .index_of(parent.id, self.offsets[j] + 1)
                    .ok_or_else(|| Error::Format(format!("component {j} has no successor")))?;
                if self.components[j][self.d..fd] != self.components[next][..fd - self.d] {
                    return Err(Error::Format(format!(
                        "components {j} and {next} do not chain"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the binary dump of all components.
    pub fn write_dump<W: Write>(&self, w: W) -> Result<()> {
        write_latents(w, self.f, self.d, &self.components)
    }

    /// Writes `component,parent,offset,condition` rows.
    pub fn write_index_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "component,parent,offset,condition")?;
        for j in 0..self.len() {
            writeln!(
                w,
                "{j},{},{},{}",
                self.parent_ids[j], self.offsets[j], self.labels[j]
            )?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * rng.random::<f64>()
}

/// Random orthonormal `d x 2` embedding via Gram-Schmidt on Gaussian columns.
fn orthonormal_embedding(rng: &mut ChaCha8Rng, d: usize) -> Vec<[f64; 2]> {
    let mut a: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut b: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter_mut().for_each(|x| *x /= na);
    let proj: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    b.iter_mut().zip(&a).for_each(|(y, x)| *y -= proj * x);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    b.iter_mut().for_each(|x| *x /= nb);
    a.into_iter().zip(b).map(|(x, y)| [x, y]).collect()
}

/// Uniform ranges the parent motion parameters are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionRanges {
    pub amplitude: (f64, f64),
    pub omega: (f64, f64),
    pub drift: (f64, f64),
}

impl Default for MotionRanges {
    fn default() -> Self {
        MotionRanges {
            amplitude: AMPLITUDE_RANGE,
            omega: OMEGA_RANGE,
            drift: DRIFT_RANGE,
        }
    }
}

/// Builds the clip dataset with the default [`MotionRanges`]. Parents are
/// labelled round-robin over `0..conditions`.
pub fn build_dataset(
    n_parents: usize,
    length: usize,
    f: usize,
    d: usize,
    conditions: usize,
    seed: u64,
) -> Result<ClipDataset> {
    build_dataset_with(
        n_parents,
        length,
        f,
        d,
        conditions,
        seed,
        MotionRanges::default(),
    )
}

pub fn build_dataset_with(
    n_parents: usize,
    length: usize,
    f: usize,
    d: usize,
    conditions: usize,
    seed: u64,
    ranges: MotionRanges,
) -> Result<ClipDataset> {
    if f < 1 || length < f {
        return Err(invalid(format!(
            "need 1 <= f <= L, got f = {f}, L = {length}"
        )));
    }
    if d < 2 {
        return Err(invalid(format!("latent dim must be at least 2, got {d}")));
    }
    if conditions < 1 || n_parents < conditions {
        return Err(invalid(format!(
            "need 1 <= conditions <= n_parents, got {conditions} and {n_parents}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedding = orthonormal_embedding(&mut rng, d);
    let parents: Vec<ParentTrajectory> = (0..n_parents)
        .map(|id| ParentTrajectory {
            id,
            condition: (id % conditions) as u32,
            amplitude: uniform(&mut rng, ranges.amplitude),
            omega: uniform(&mut rng, ranges.omega),
            phase: uniform(&mut rng, (0.0, std::f64::consts::TAU)),
            drift: [
                uniform(&mut rng, ranges.drift),
                uniform(&mut rng, ranges.drift),
            ],
            length,
            dim: d,
            embedding: embedding.clone(),
        })
        .collect();

    let windows = length - f + 1;
    let total = windows * n_parents;
    let mut ds = ClipDataset {
        f,
        d,
        components: Vec::with_capacity(total),
        labels: Vec::with_capacity(total),
        parent_ids: Vec::with_capacity(total),
        offsets: Vec::with_capacity(total),
        parents: Vec::new(),
    };
    for p in &parents {
        for offset in 0..windows {
            ds.components.push(p.window(offset, f));
            ds.labels.push(p.condition);
            ds.parent_ids.push(p.id);
            ds.offsets.push(offset);
        }
    }
    ds.parents = parents;
    Ok(ds)
}

const MAGIC: &[u8; 4] = b"FIFD";
const VERSION: u32 = 1;

/// Writes records of `f x d` little-endian `f64` values.
///
/// Layout: `"FIFD"`, version `u32`, record count `u64`, `f` `u32`, `d` `u32`,
/// then each record row-major.
pub fn write_latents<W: Write>(mut w: W, f: usize, d: usize, records: &[Vec<f64>]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    w.write_all(&(f as u32).to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    for r in records {
        if r.len() != f * d {
            return Err(invalid(format!(
                "record of length {} is not {f} x {d}",
                r.len()
            )));
        }
        for v in r {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Contents of a latent dump.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDump {
    pub f: usize,
    pub d: usize,
    pub records: Vec<Vec<f64>>,
}

pub fn read_latents<R: Read>(mut r: R) -> Result<LatentDump> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(head[16..20].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(head[20..24].try_into().unwrap()) as usize;
    let mut records = Vec::with_capacity(count);
    let mut buf = vec![0u8; f * d * 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        records.push(
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok(LatentDump { f, d, records })
}

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (`P5`).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        w.flush()?;
        Ok(())
    }
}

/// Renders a latent as a Gaussian bump.
///
/// `z[0], z[1]` place the bump center at `image center + scale * (z[0], z[1])`
/// (x right, y down), clamped to the image. `z[2]` modulates the width by a
/// factor in `(0.75, 1.25)`; the mean of `z[3..]` sets peak intensity in
/// `(127.5, 255)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDecoder {
    pub width: usize,
    pub height: usize,
    /// Pixels per latent unit.
    pub scale: f64,
    /// Bump standard deviation in pixels at `z[2] = 0`.
    pub base_width: f64,
}

impl Default for FrameDecoder {
    fn default() -> Self {
        FrameDecoder {
            width: 64,
            height: 64,
            scale: 10.0,
            base_width: 3.0,
        }
    }
}

impl FrameDecoder {
    /// Unclamped bump center in pixel coordinates.
    pub fn raw_center(&self, z: &[f64]) -> (f64, f64) {
        let cx = (self.width as f64 - 1.0) / 2.0 + self.scale * z[0];
        let cy = (self.height as f64 - 1.0) / 2.0 + self.scale * z[1];
        (cx, cy)
    }

    pub fn center(&self, z: &[f64]) -> (f64, f64) {
        let (cx, cy) = self.raw_center(z);
        (
            cx.clamp(0.0, self.width as f64 - 1.0),
            cy.clamp(0.0, self.height as f64 - 1.0),
        )
    }

    pub fn render(&self, z: &[f64]) -> Result<GrayImage> {
        if z.len() < 2 {
            return Err(invalid("latent must have at least two dimensions"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "latent passed to the frame decoder".into(),
            ));
        }
        let (cx, cy) = self.center(z);
        let width = self.base_width * (1.0 + 0.25 * z.get(2).map_or(0.0, |v| v.tanh()));
        let peak = if z.len() > 3 {
            let mean = z[3..].iter().sum::<f64>() / (z.len() - 3) as f64;
            255.0 * (0.75 + 0.25 * mean.tanh())
        } else {
            255.0
        };
        let inv = 1.0 / (2.0 * width * width);
        let mut pixels = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                pixels.push((peak * (-r2 * inv).exp()).round().clamp(0.0, 255.0) as u8);
            }
        }
        Ok(GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        })
    }
}

/// Writes each frame as `frame_%06d.pgm` under `dir`.
pub fn render_sequence(
    dir: &std::path::Path,
    frames: &[Vec<f64>],
    decoder: &FrameDecoder,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, z) in frames.iter().enumerate() {
        let img = decoder.render(z)?;
        let file = std::fs::File::create(dir.join(format!("frame_{k:06}.pgm")))?;
        img.write_pgm(std::io::BufWriter::new(file))?;
    }
    Ok(())
}

/// Groups component indices by condition label.
pub(crate) fn by_condition(ds: &ClipDataset, members: &[usize]) -> BTreeMap<u32, Vec<usize>> {
    let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &j in members {
        map.entry(ds.label(j)).or_default().push(j);
    }
    map
}

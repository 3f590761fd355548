//! Counter-based random streams.
//!
//! Every draw comes from a ChaCha8 stream whose 256-bit key is the tuple
//! `(master seed, purpose, frame serial, grid position)`, so a value depends
//! only on what it is for and never on execution order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Fresh latent noise for a frame entering the pipeline.
    FrameNoise = 1,
    /// Stochastic DDIM term of one frame leaving one grid position.
    DdimStep = 2,
    /// Gap-study sampling.
    Study = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStreams {
    master: u64,
}

impl NoiseStreams {
    pub fn new(master: u64) -> Self {
        NoiseStreams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, purpose: Purpose, serial: u64, position: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (chunk, word) in
            key.chunks_exact_mut(8)
                .zip([self.master, purpose as u64, serial, position])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// `d` standard normals for the initial latent of frame `serial`.
    pub fn frame_noise(&self, serial: u64, d: usize) -> Vec<f64> {
        let mut rng = self.stream(Purpose::FrameNoise, serial, 0);
        (0..d).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Stream for the DDIM step of frame `serial` leaving grid `position`.
    pub fn ddim(&self, serial: u64, position: usize) -> ChaCha8Rng {
        self.stream(Purpose::DdimStep, serial, position as u64)
    }
}

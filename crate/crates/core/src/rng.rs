//! Counter-addressed random streams.
//!
//! A [`NoiseStream`] is keyed by `(seed, layer, draw)`; the `i`-th standard
//! normal of a stream always comes from the same four 32-bit ChaCha words,
//! so any element range can be generated independently and in any order.
//! That is what lets the noise kernels split tensors across threads without
//! changing a single bit of output.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS_PER_NORMAL: u128 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    seed: u64,
    stream: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, layer: u64, draw: u64) -> Self {
        let stream = mix64(mix64(layer.wrapping_add(0x9E37_79B9_7F4A_7C15)) ^ draw.rotate_left(32));
        Self { seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for a sub-component (e.g. one device branch).
    pub fn derive(&self, label: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix64(self.stream ^ mix64(label ^ 0xD134_2543_DE82_EF95)),
        }
    }

    /// Fill `out` with the standard normals at positions `start..start + out.len()`.
    pub fn fill_normals(&self, start: usize, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(start as u128 * WORDS_PER_NORMAL);
        for z in out.iter_mut() {
            let a = rng.next_u64();
            let b = rng.next_u64();
            *z = box_muller(a, b);
        }
    }

    pub fn normal_at(&self, index: usize) -> f64 {
        let mut z = [0.0];
        self.fill_normals(index, &mut z);
        z[0]
    }
}

/// Cosine branch of Box-Muller; `a` gives u1 in (0, 1], `b` gives u2 in [0, 1).
fn box_muller(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded general-purpose generator for initialization and sampling.
pub fn seeded(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in purpose.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(mix64(seed ^ h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential_fill() {
        let s = NoiseStream::new(7, 3, 11);
        let mut all = vec![0.0; 64];
        s.fill_normals(0, &mut all);
        let mut tail = vec![0.0; 20];
        s.fill_normals(40, &mut tail);
        assert_eq!(&all[40..60], &tail[..]);
        assert_eq!(s.normal_at(13), all[13]);
    }

    #[test]
    fn keys_separate_streams() {
        let a = NoiseStream::new(1, 0, 0).normal_at(0);
        assert_ne!(a, NoiseStream::new(2, 0, 0).normal_at(0));
        assert_ne!(a, NoiseStream::new(1, 1, 0).normal_at(0));
        assert_ne!(a, NoiseStream::new(1, 0, 1).normal_at(0));
        assert_ne!(a, NoiseStream::new(1, 0, 0).derive(1).normal_at(0));
    }

    #[test]
    fn moments_are_standard_normal() {
        let s = NoiseStream::new(42, 0, 0);
        let mut z = vec![0.0; 200_000];
        s.fill_normals(0, &mut z);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }
}

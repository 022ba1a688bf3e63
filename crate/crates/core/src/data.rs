//! In-memory image classification datasets and a seeded synthetic generator.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::Tensor;
use crate::rng::seeded;
use crate::{invalid, Result};

/// Images stored as `f32` in NCHW order with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    /// (channels, height, width)
    pub shape: (usize, usize, usize),
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<f32>, labels: Vec<usize>, shape: (usize, usize, usize), classes: usize) -> Result<Self> {
        let per = shape.0 * shape.1 * shape.2;
        if per == 0 || images.len() != per * labels.len() {
            return invalid(format!(
                "{} image values do not match {} labels of shape {shape:?}",
                images.len(),
                labels.len()
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return invalid(format!("label {l} outside {classes} classes"));
        }
        Ok(Dataset {
            images,
            labels,
            shape,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Gather samples into a `[N, C, H, W]` tensor plus their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| f64::from(v)));
        }
        let (c, h, w) = self.shape;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(vec![indices.len(), c, h, w], data), labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let n = self.sample_len();
        let mut images = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
            classes: self.classes,
        }
    }

    /// First `n` samples (or all if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Sample `fraction` of the indices without replacement (at least one).
    pub fn sample_indices(&self, fraction: f64, seed: u64, purpose: &str) -> Vec<usize> {
        let k = ((self.len() as f64 * fraction).round() as usize).clamp(1.min(self.len()), self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seeded(seed, purpose));
        idx.truncate(k);
        idx
    }

    /// A seeded permutation of all indices.
    pub fn shuffled_indices(&self, seed: u64, purpose: &str) -> Vec<usize> {
        self.sample_indices(1.0, seed, purpose)
    }
}

/// Parameters of the synthetic classification task.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub classes: usize,
    pub shape: (usize, usize, usize),
    /// Per-pixel Gaussian noise added on top of the class pattern.
    pub noise: f64,
    /// Amplitude of the class pattern; 0 gives pure noise with uniform labels.
    pub signal: f64,
    /// Seed of the class patterns. Keep it fixed across train and test splits.
    pub pattern_seed: u64,
}

impl SyntheticSpec {
    /// CIFAR-10 shaped task: 3×32×32 images, 10 classes.
    pub fn cifar_like(samples: usize) -> Self {
        SyntheticSpec {
            samples,
            classes: 10,
            shape: (3, 32, 32),
            noise: 1.0,
            signal: 0.6,
            pattern_seed: 0x5EED,
        }
    }
}

/// Each class is a smooth random pattern (a few oriented sinusoids per
/// channel); samples are the pattern with random gain and shift plus noise.
pub fn synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let (c, h, w) = spec.shape;
    if spec.classes == 0 || c * h * w == 0 {
        return invalid("synthetic dataset needs classes and a non-empty image shape");
    }
    let per = c * h * w;
    let patterns = class_patterns(spec);
    let mut rng = seeded(seed, "synthetic-samples");
    let mut images = Vec::with_capacity(spec.samples * per);
    let mut labels = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let label = rng.random_range(0..spec.classes);
        let gain = spec.signal * rng.random_range(0.7..1.3);
        let dy = rng.random_range(0..3usize);
        let dx = rng.random_range(0..3usize);
        let pat = &patterns[label];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let py = (y + dy).min(h - 1);
                    let px = (x + dx).min(w - 1);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let v = gain * pat[(ch * h + py) * w + px] + spec.noise * z;
                    images.push(v as f32);
                }
            }
        }
        labels.push(label);
    }
    Dataset::new(images, labels, spec.shape, spec.classes)
}

fn class_patterns(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let (c, h, w) = spec.shape;
    let mut rng = seeded(spec.pattern_seed, "synthetic-patterns");
    (0..spec.classes)
        .map(|_| {
            let mut p = vec![0.0; c * h * w];
            for ch in 0..c {
                for _ in 0..3 {
                    let fy: f64 = rng.random_range(0.5..3.0);
                    let fx: f64 = rng.random_range(0.5..3.0);
                    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let amp: f64 = rng.random_range(0.5..1.0);
                    for y in 0..h {
                        for x in 0..w {
                            let arg = std::f64::consts::TAU
                                * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64)
                                + phase;
                            p[(ch * h + y) * w + x] += amp * arg.sin();
                        }
                    }
                }
            }
            p
        })
        .collect()
}

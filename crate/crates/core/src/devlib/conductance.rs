use super::DeviceSpec;
use crate::par;
use crate::rng::NoiseStream;
use crate::{invalid, Result};

const NOISE_CHUNK: usize = 8192;

/// Per-element conductances (µS) of one layer, with the mapping metadata
/// needed to return to the weight domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ConductanceTensor {
    pub values: Vec<f64>,
    /// max |w| of the source layer (1 for an all-zero layer).
    pub layer_scale: f64,
    /// Sign of each source weight; zero weights count as positive.
    pub signs: Vec<i8>,
    pub g_min: f64,
    pub g_max: f64,
}

impl ConductanceTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Magnitude mapping G = g_min + (|w|/s)·(g_max - g_min), s = max |w|.
pub fn weights_to_conductance(weights: &[f64], spec: &DeviceSpec) -> Result<ConductanceTensor> {
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return invalid(format!("weight {i} is not finite"));
    }
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let scale = if max_abs > 0.0 { max_abs } else { 1.0 };
    let (g_min, g_max) = (spec.g_min_us(), spec.g_max_us());
    let span = g_max - g_min;
    let values = weights
        .iter()
        .map(|w| (g_min + (w.abs() / scale) * span).min(g_max))
        .collect();
    let signs = weights.iter().map(|&w| if w < 0.0 { -1 } else { 1 }).collect();
    Ok(ConductanceTensor {
        values,
        layer_scale: scale,
        signs,
        g_min,
        g_max,
    })
}

/// G' = G·(t/t0)^(-ν); identity for devices without a drift coefficient.
pub fn apply_drift(mut g: ConductanceTensor, spec: &DeviceSpec, t: f64) -> Result<ConductanceTensor> {
    let factor = spec.drift_factor(t)?;
    if factor != 1.0 {
        let g_max = g.g_max;
        g.values
            .iter_mut()
            .for_each(|v| *v = (*v * factor).clamp(0.0, g_max));
    }
    Ok(g)
}

/// G' = G + n, n ~ N(0, σ(G)²) i.i.d., clamped to [0, g_max].
///
/// Element `i` always consumes normal `i` of `stream`, so chunking does not
/// change the draw.
pub fn apply_read_noise(mut g: ConductanceTensor, spec: &DeviceSpec, stream: &NoiseStream) -> ConductanceTensor {
    if spec.read_noise.is_zero() {
        return g;
    }
    let model = spec.read_noise;
    let g_max = g.g_max;
    par::for_each_chunk_mut(&mut g.values, NOISE_CHUNK, |ci, chunk| {
        let mut z = vec![0.0; chunk.len()];
        stream.fill_normals(ci * NOISE_CHUNK, &mut z);
        for (v, n) in chunk.iter_mut().zip(&z) {
            let sigma = model.sigma_us(*v);
            *v = (*v + sigma * n).clamp(0.0, g_max);
        }
    });
    g
}

/// Snap to the nearest of 2^bits uniformly spaced levels on [g_min, g_max],
/// rounding half up; values are clamped into range first.
pub fn quantize_conductance(mut g: ConductanceTensor, spec: &DeviceSpec) -> ConductanceTensor {
    let steps = f64::from(spec.levels() - 1);
    let (lo, hi) = (g.g_min, g.g_max);
    let step = (hi - lo) / steps;
    for v in g.values.iter_mut() {
        let x = v.clamp(lo, hi);
        let k = ((x - lo) / step + 0.5).floor().min(steps);
        *v = if k >= steps { hi } else { lo + k * step };
    }
    g
}

/// w' = sign·s·(G - g_min)/(g_max - g_min).
pub fn conductance_to_weights(g: &ConductanceTensor) -> Vec<f64> {
    let span = g.g_max - g.g_min;
    let k = g.layer_scale / span;
    g.values
        .iter()
        .zip(&g.signs)
        .map(|(&v, &s)| f64::from(s) * k * (v - g.g_min))
        .collect()
}

/// Which device effects to apply when round-tripping weights through conductances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    /// Inference time in seconds; `None` skips drift.
    pub drift_time: Option<f64>,
    pub read_noise: bool,
    pub quantize: bool,
}

impl Perturbation {
    /// Search-time treatment: drift at `t`, read noise, quantization.
    pub fn search(t: f64) -> Self {
        Perturbation {
            drift_time: Some(t),
            read_noise: true,
            quantize: true,
        }
    }

    /// Fine-tuning treatment: read noise and quantization, no drift.
    pub fn training() -> Self {
        Perturbation {
            drift_time: None,
            read_noise: true,
            quantize: true,
        }
    }

    /// Deployed weights at inference time `t` (`t == 0` means freshly programmed).
    pub fn inference(t: f64) -> Self {
        Perturbation {
            drift_time: (t > 0.0).then_some(t),
            read_noise: true,
            quantize: true,
        }
    }

    pub fn none() -> Self {
        Perturbation {
            drift_time: None,
            read_noise: false,
            quantize: false,
        }
    }
}

/// weights -> G -> [drift] -> [read noise] -> [quantize] -> weights.
pub fn perturb(
    weights: &[f64],
    spec: &DeviceSpec,
    how: &Perturbation,
    stream: &NoiseStream,
) -> Result<Vec<f64>> {
    let mut g = weights_to_conductance(weights, spec)?;
    if let Some(t) = how.drift_time {
        g = apply_drift(g, spec, t)?;
    }
    if how.read_noise {
        g = apply_read_noise(g, spec, stream);
    }
    if how.quantize {
        g = quantize_conductance(g, spec);
    }
    Ok(conductance_to_weights(&g))
}

/// Device round trip with read noise and quantization, plus drift at `t` when `with_drift`.
pub fn perturb_weights(
    weights: &[f64],
    spec: &DeviceSpec,
    t: f64,
    with_drift: bool,
    stream: &NoiseStream,
) -> Result<Vec<f64>> {
    let how = Perturbation {
        drift_time: with_drift.then_some(t),
        read_noise: true,
        quantize: true,
    };
    perturb(weights, spec, &how, stream)
}

//! Layer-level error studies built on the crossbar simulator.

use serde::{Deserialize, Serialize};

use super::{
    calibrate_adc_range, ideal_mvm, ideal_partial_sums, irdrop_mvm, map_layer, partial_sums, perturb_mapped,
    CrossbarConfig, MappedLayer,
};
use crate::devlib::DeviceSpec;
use crate::rng::NoiseStream;
use crate::topology::ConvLayerSpec;
use crate::{invalid, par, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdcSweepPoint {
    pub device: String,
    pub adc_bits: u32,
    /// Mean squared error of the noisy analog outputs (no ADC) against the noise-free outputs.
    pub mse_analog: f64,
    /// Same, after per-row-block ADC quantization at `adc_bits`.
    pub mse_adc: f64,
}

/// For each device, map `w` once, then for every input draw a fresh noisy
/// programming of the arrays (read noise, drift at `t`) and compare its
/// outputs with the noise-free outputs, without and with ADCs at each of
/// `bits`. ADC ranges are the largest noise-free row-block partial sum over `inputs`.
pub fn adc_mse_sweep(
    w: &[f64],
    spec: &ConvLayerSpec,
    devices: &[DeviceSpec],
    inputs: &[Vec<f64>],
    bits: &[u32],
    t: f64,
    seed: u64,
    xbar: &CrossbarConfig,
) -> Result<Vec<AdcSweepPoint>> {
    if inputs.is_empty() {
        return invalid("ADC sweep needs at least one input vector");
    }
    let mut out = Vec::new();
    for (di, dev) in devices.iter().enumerate() {
        let mapped = map_layer(w, spec, dev, xbar)?;
        let range = calibrate_adc_range(&mapped, inputs)?;
        // Per input: (analog squared error, squared error per bit width).
        let per_input = par::map_indexed(inputs.len(), |i| -> Result<(f64, Vec<f64>)> {
            let v = &inputs[i];
            let ideal = ideal_partial_sums(&mapped, v)?;
            let noisy = perturb_mapped(&mapped, dev, t, &NoiseStream::new(seed, di as u64, i as u64))?;
            let analog = sq_err(&partial_sums(&noisy, v, None)?, &ideal);
            let quant = bits
                .iter()
                .map(|&b| Ok(sq_err(&partial_sums(&noisy, v, Some((b, range)))?, &ideal)))
                .collect::<Result<Vec<f64>>>()?;
            Ok((analog, quant))
        });
        let mut analog = 0.0;
        let mut quant = vec![0.0; bits.len()];
        for r in per_input {
            let (a, q) = r?;
            analog += a;
            quant.iter_mut().zip(q).for_each(|(s, v)| *s += v);
        }
        let n = (inputs.len() * mapped.weight_cols) as f64;
        for (b, q) in bits.iter().zip(quant) {
            out.push(AdcSweepPoint {
                device: dev.name.clone(),
                adc_bits: *b,
                mse_analog: analog / n,
                mse_adc: q / n,
            });
        }
    }
    Ok(out)
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// ‖I_irdrop − I_ideal‖₂ / ‖I_ideal‖₂ over all physical columns for input `v`.
pub fn irdrop_deviation(mapped: &MappedLayer, v: &[f64], xbar: &CrossbarConfig) -> Result<f64> {
    let ideal = ideal_mvm(mapped, v)?;
    let real = irdrop_mvm(mapped, v, xbar)?;
    let norm = ideal.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return invalid("ideal output is zero; relative deviation undefined");
    }
    Ok(sq_err(&real, &ideal).sqrt() / norm)
}

//! Device-aware convolution and its softmax mixture over devices.

use super::conv::conv2d_forward;
use super::{softmax, Tensor};
use crate::devlib::{perturb, DeviceSpec, Perturbation};
use crate::rng::NoiseStream;
use crate::topology::ConvLayerSpec;
use crate::{invalid, Result};

/// Convolve with weights passed through `dev`'s conductance pipeline:
/// read noise and quantization always, drift at `t` when `with_drift` and `t > 0`.
pub fn device_aware_conv(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvLayerSpec,
    dev: &DeviceSpec,
    t: f64,
    with_drift: bool,
    stream: &NoiseStream,
) -> Result<Tensor> {
    if t < 0.0 {
        return invalid(format!("inference time must be non-negative, got {t}"));
    }
    let how = Perturbation {
        drift_time: (with_drift && t > 0.0).then_some(t),
        read_noise: true,
        quantize: true,
    };
    let wp = perturb(&w.data, dev, &how, stream)?;
    Ok(conv2d_forward(x, &wp, spec, None)?.y)
}

/// m = Σ_j softmax(α)_j · o_j, where o_j is the device-aware convolution
/// for device j with drift at `t`. Branch j draws noise from `stream.derive(j)`.
pub fn compdc_forward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvLayerSpec,
    alphas: &[f64],
    devices: &[DeviceSpec],
    t: f64,
    stream: &NoiseStream,
) -> Result<Tensor> {
    if devices.is_empty() {
        return invalid("CompDC needs at least one device");
    }
    if alphas.len() != devices.len() {
        return invalid(format!("{} affinities for {} devices", alphas.len(), devices.len()));
    }
    let p = softmax(alphas);
    let mut m: Option<Tensor> = None;
    for (j, (dev, pj)) in devices.iter().zip(&p).enumerate() {
        let o = device_aware_conv(x, w, spec, dev, t, true, &stream.derive(j as u64))?;
        match m.as_mut() {
            None => {
                let mut first = o;
                first.data.iter_mut().for_each(|v| *v *= pj);
                m = Some(first);
            }
            Some(acc) => acc.data.iter_mut().zip(&o.data).for_each(|(a, v)| *a += pj * v),
        }
    }
    Ok(m.expect("at least one device"))
}

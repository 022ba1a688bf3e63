//! Device-aware fine-tuning of a fixed configuration and evaluation of the deployed model.

use serde::{Deserialize, Serialize};

use super::{apply_weight_step, weight_optimizers};
use crate::data::Dataset;
use crate::devlib::{find_device, perturb, DeviceSpec, Perturbation};
use crate::hwcost::HybridConfig;
use crate::nn::{accuracy, cross_entropy, BlockMode, Checkpoint, ConvRoute, Network};
use crate::rng::{mix64, NoiseStream};
use crate::{invalid, Error, Result};

/// Inference times for retention curves, seconds.
pub const RETENTION_GRID: [f64; 5] = [0.0, 1e2, 1e4, 1e6, 1e8];

const FINETUNE_DOMAIN: u64 = 0x4649_4e45_5455_4e45;
const EVAL_DOMAIN: u64 = 0x4556_414c_5541_5445;
const MIN_RANGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Read noise and conductance quantization on the training weights.
    pub device_aware: bool,
    /// Quantize row-block partial sums at the configured ADC bits.
    pub adc: bool,
    /// Crossbar height used to split the unrolled rows.
    pub xbar_rows: usize,
    /// Training samples used to set the ADC ranges.
    pub calibration_samples: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 40,
            lr: 1e-3,
            batch: 64,
            seed: 0,
            device_aware: true,
            adc: true,
            xbar_rows: 128,
            calibration_samples: 256,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.xbar_rows == 0 || self.calibration_samples == 0 {
            return invalid("batch, crossbar rows and calibration size must be positive");
        }
        if !(self.lr >= 0.0) {
            return invalid("learning rate must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLog {
    pub loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
}

/// A trained network bound to a device configuration with frozen ADC ranges.
#[derive(Clone, Debug)]
pub struct DeployedModel {
    pub net: Network,
    pub config: HybridConfig,
    /// Device of each conv layer.
    pub devices: Vec<DeviceSpec>,
    pub adc_ranges: Vec<f64>,
    pub xbar_rows: usize,
}

impl DeployedModel {
    pub fn new(net: Network, config: HybridConfig, table: &[DeviceSpec], adc_ranges: Vec<f64>, xbar_rows: usize) -> Result<Self> {
        config.validate(net.conv_count(), table)?;
        if adc_ranges.len() != net.conv_count() {
            return invalid(format!("{} ADC ranges for {} conv layers", adc_ranges.len(), net.conv_count()));
        }
        let devices = layer_devices(&config, table)?;
        Ok(DeployedModel {
            net,
            config,
            devices,
            adc_ranges,
            xbar_rows,
        })
    }

    pub fn to_checkpoint(&self, table: &[DeviceSpec], seed: u64, epoch: u64) -> Checkpoint {
        let mut ckpt = Checkpoint::from_network(&self.net, None, seed, epoch);
        ckpt.meta = serde_json::json!({
            "config": self.config.to_text(table),
            "adc_ranges": self.adc_ranges,
            "xbar_rows": self.xbar_rows,
        });
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, table: &[DeviceSpec]) -> Result<Self> {
        let missing = |k: &str| Error::Format(format!("checkpoint has no deployment field `{k}`"));
        let text = ckpt.meta.get("config").and_then(|v| v.as_str()).ok_or_else(|| missing("config"))?;
        let ranges: Vec<f64> = serde_json::from_value(ckpt.meta.get("adc_ranges").cloned().ok_or_else(|| missing("adc_ranges"))?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let rows = ckpt.meta.get("xbar_rows").and_then(|v| v.as_u64()).ok_or_else(|| missing("xbar_rows"))?;
        let config = HybridConfig::parse_text(text, table)?;
        DeployedModel::new(ckpt.to_network()?, config, table, ranges, rows as usize)
    }
}

fn layer_devices(config: &HybridConfig, table: &[DeviceSpec]) -> Result<Vec<DeviceSpec>> {
    config.devices.iter().map(|d| find_device(table, d).cloned()).collect()
}

fn device_routes(
    net: &Network,
    devices: &[DeviceSpec],
    how: &Perturbation,
    stream: impl Fn(usize) -> NoiseStream,
    blocks: impl Fn(usize) -> Option<BlockMode>,
) -> Result<Vec<ConvRoute>> {
    net.conv_weights
        .iter()
        .zip(devices)
        .enumerate()
        .map(|(i, (w, d))| {
            Ok(ConvRoute::Device {
                weights: perturb(&w.data, d, how, &stream(i))?,
                blocks: blocks(i),
            })
        })
        .collect()
}

/// Largest |row-block partial sum| per layer over `data`, with the weights
/// programmed noise-free (quantized, no drift) and no ADC in the loop.
pub fn calibrate_ranges(net: &Network, devices: &[DeviceSpec], data: &Dataset, xbar_rows: usize) -> Result<Vec<f64>> {
    let quiet = Perturbation {
        drift_time: None,
        read_noise: false,
        quantize: true,
    };
    let stream = NoiseStream::new(0, 0, 0);
    let routes = device_routes(net, devices, &quiet, |_| stream, |_| {
        Some(BlockMode {
            rows: xbar_rows,
            adc: None,
        })
    })?;
    let mut ranges = vec![MIN_RANGE; net.conv_count()];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, _) = data.batch(chunk);
        let (_, maxes) = net.predict_with_ranges(&x, &routes)?;
        for (r, m) in ranges.iter_mut().zip(maxes) {
            *r = r.max(m);
        }
    }
    Ok(ranges)
}

/// Train `net` under `config` with per-batch read noise, quantized weights
/// and quantized partial sums (each as enabled in `ft`). ADC ranges are
/// recalibrated after every epoch; the last calibration is frozen into the result.
pub fn finetune(
    mut net: Network,
    config: &HybridConfig,
    table: &[DeviceSpec],
    data: &Dataset,
    ft: &FinetuneConfig,
) -> Result<(DeployedModel, FinetuneLog)> {
    ft.validate()?;
    config.validate(net.conv_count(), table)?;
    if data.is_empty() {
        return invalid("training set is empty");
    }
    let devices = layer_devices(config, table)?;
    let calib = data.head(ft.calibration_samples);
    let mut ranges = calibrate_ranges(&net, &devices, &calib, ft.xbar_rows)?;
    let mut opts = weight_optimizers(&net, ft.lr);
    let noise_seed = mix64(ft.seed ^ FINETUNE_DOMAIN);
    let mut log = FinetuneLog::default();
    let mut draw = 0u64;
    for epoch in 0..ft.epochs {
        let order = data.shuffled_indices(mix64(ft.seed ^ epoch as u64), "finetune");
        let (mut loss_sum, mut acc_sum, mut seen) = (0.0, 0.0, 0usize);
        for batch in order.chunks(ft.batch) {
            let (x, labels) = data.batch(batch);
            let routes = if ft.device_aware || ft.adc {
                let how = Perturbation {
                    drift_time: None,
                    read_noise: ft.device_aware,
                    quantize: ft.device_aware,
                };
                device_routes(&net, &devices, &how, |i| NoiseStream::new(noise_seed, i as u64, draw), |i| {
                    ft.adc.then(|| BlockMode {
                        rows: ft.xbar_rows,
                        adc: Some((config.adc_bits[i], ranges[i])),
                    })
                })?
            } else {
                Vec::new()
            };
            draw += 1;
            let logits = net.forward(&x, &routes)?;
            let (loss, dlogits) = cross_entropy(&logits, &labels)?;
            net.backward(&dlogits)?;
            apply_weight_step(&mut net, &mut opts);
            loss_sum += loss * batch.len() as f64;
            acc_sum += accuracy(&logits, &labels) * batch.len() as f64;
            seen += batch.len();
        }
        log.loss.push(loss_sum / seen as f64);
        log.train_accuracy.push(acc_sum / seen as f64);
        ranges = calibrate_ranges(&net, &devices, &calib, ft.xbar_rows)?;
    }
    let model = DeployedModel {
        net,
        config: config.clone(),
        devices,
        adc_ranges: ranges,
        xbar_rows: ft.xbar_rows,
    };
    Ok((model, log))
}

/// Accuracy on `data` of one programmed instance of the model read at time
/// `t` (0 = no drift), with read noise and the frozen ADC ranges.
pub fn evaluate_at_time(model: &DeployedModel, data: &Dataset, t: f64, seed: u64) -> Result<f64> {
    if !(t >= 0.0) {
        return invalid(format!("inference time must be non-negative, got {t}"));
    }
    let noise_seed = mix64(seed ^ EVAL_DOMAIN);
    let routes = device_routes(
        &model.net,
        &model.devices,
        &Perturbation::inference(t),
        |i| NoiseStream::new(noise_seed, i as u64, 0),
        |i| {
            Some(BlockMode {
                rows: model.xbar_rows,
                adc: Some((model.config.adc_bits[i], model.adc_ranges[i])),
            })
        },
    )?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0.0;
    for chunk in idx.chunks(256) {
        let (x, labels) = data.batch(chunk);
        let logits = model.net.predict(&x, &routes)?;
        hits += accuracy(&logits, &labels) * chunk.len() as f64;
    }
    Ok(hits / data.len().max(1) as f64)
}

/// (t, accuracy) for each time in `grid`, all from the same programmed instance.
pub fn retention_curve(model: &DeployedModel, data: &Dataset, grid: &[f64], seed: u64) -> Result<Vec<(f64, f64)>> {
    grid.iter().map(|&t| Ok((t, evaluate_at_time(model, data, t, seed)?))).collect()
}

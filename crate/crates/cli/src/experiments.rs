//! Fixed, seeded experiment setups shared by the commands and the acceptance tests.

use hybrid_imc::data::Dataset;
use hybrid_imc::devlib::{find_device, DeviceSpec};
use hybrid_imc::hwcost::{CostModel, CostReport, HybridConfig};
use hybrid_imc::nn::{accuracy, BlockMode, ConvRoute, Network, ParentArchitecture};
use hybrid_imc::rng::seeded;
use hybrid_imc::search::{
    evaluate_at_time, finetune, normalized_costs, run_search, DeployedModel, FinetuneConfig, SearchConfig, SearchTrace,
};
use hybrid_imc::topology::{ConvLayerSpec, Topology};
use hybrid_imc::xbar::{
    adc_mse_sweep, irdrop_deviation, irdrop_effective, map_layer, map_matrix, AdcSweepPoint, CrossbarConfig,
};
use rand_distr::{Distribution, StudentT, Uniform};

use crate::error::CliResult;

pub const DEFAULT_ADC_BITS: [u32; 7] = [2, 3, 4, 5, 6, 7, 8];
pub const DEFAULT_SIZES: [usize; 3] = [32, 64, 128];

/// A 3×3 conv(128, 256) with Student-t (3 d.o.f.) weights: the heavy tails
/// put most weights near zero relative to the largest one, as in trained layers.
pub fn adc_sweep_layer(seed: u64) -> (ConvLayerSpec, Vec<f64>) {
    let spec = ConvLayerSpec::same3(128, 256);
    let t = StudentT::new(3.0).expect("valid degrees of freedom");
    let mut rng = seeded(seed, "adc-sweep-layer");
    let w = (0..spec.weight_len()).map(|_| 0.02 * t.sample(&mut rng)).collect();
    (spec, w)
}

/// `n` input vectors with entries uniform in [0, 1).
pub fn uniform_inputs(seed: u64, n: usize, len: usize) -> Vec<Vec<f64>> {
    let u = Uniform::new(0.0, 1.0).expect("valid range");
    let mut rng = seeded(seed, "uniform-inputs");
    (0..n).map(|_| (0..len).map(|_| u.sample(&mut rng)).collect()).collect()
}

pub fn run_adc_sweep(
    devices: &[DeviceSpec],
    seed: u64,
    inputs: usize,
    bits: &[u32],
    t: f64,
    xbar: &CrossbarConfig,
) -> CliResult<Vec<AdcSweepPoint>> {
    let (spec, w) = adc_sweep_layer(seed);
    let v = uniform_inputs(seed, inputs, spec.unrolled_rows());
    Ok(adc_mse_sweep(&w, &spec, devices, &v, bits, t, seed, xbar)?)
}

const PATTERN_TILE: usize = 32;

/// An n×n weight matrix and n row voltages (0 to 0.2 V), both tiled from one
/// fixed 32×32 pattern so every size carries the same local structure.
pub fn irdrop_pattern(size: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seeded(seed, "irdrop-pattern");
    let uw = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let uv = Uniform::new_inclusive(0.0, 0.2).expect("valid range");
    let tile: Vec<f64> = (0..PATTERN_TILE * PATTERN_TILE).map(|_| uw.sample(&mut rng)).collect();
    let vt: Vec<f64> = (0..PATTERN_TILE).map(|_| uv.sample(&mut rng)).collect();
    let mut w = vec![0.0; size * size];
    for o in 0..size {
        for i in 0..size {
            w[o * size + i] = tile[(o % PATTERN_TILE) * PATTERN_TILE + i % PATTERN_TILE];
        }
    }
    let v = (0..size).map(|i| vt[i % PATTERN_TILE]).collect();
    (w, v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrdropRow {
    pub size: usize,
    pub device: String,
    pub deviation: f64,
    pub accuracy: Option<f64>,
}

/// Relative IR-drop deviation of the tiled pattern on size×size arrays, per device.
pub fn irdrop_study(sizes: &[usize], devices: &[DeviceSpec], seed: u64, base: &CrossbarConfig) -> CliResult<Vec<IrdropRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        let xbar = CrossbarConfig {
            rows: n,
            cols: n,
            ..*base
        };
        let (w, v) = irdrop_pattern(n, seed);
        for d in devices {
            let mapped = map_matrix(&w, n, n, d, &xbar)?;
            rows.push(IrdropRow {
                size: n,
                device: d.name.clone(),
                deviation: irdrop_deviation(&mapped, &v, &xbar)?,
                accuracy: None,
            });
        }
    }
    Ok(rows)
}

/// Test accuracy of a deployed model whose layers are programmed noise-free
/// onto size×size arrays and read through the parasitic network (no ADC).
pub fn irdrop_accuracy(model: &DeployedModel, data: &Dataset, size: usize, base: &CrossbarConfig) -> CliResult<f64> {
    let xbar = CrossbarConfig {
        rows: size,
        cols: size,
        ..*base
    };
    let specs = model.net.topology.conv_specs();
    let mut routes = Vec::new();
    for ((w, spec), dev) in model.net.conv_weights.iter().zip(&specs).zip(&model.devices) {
        let mapped = map_layer(&w.data, spec, dev, &xbar)?;
        routes.push(ConvRoute::Device {
            weights: irdrop_effective(&mapped, &xbar)?.effective_weights(),
            blocks: Some(BlockMode { rows: size, adc: None }),
        });
    }
    predict_accuracy(&model.net, data, &routes)
}

fn predict_accuracy(net: &Network, data: &Dataset, routes: &[ConvRoute]) -> CliResult<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0.0;
    for chunk in idx.chunks(256) {
        let (x, labels) = data.batch(chunk);
        hits += accuracy(&net.predict(&x, routes)?, &labels) * chunk.len() as f64;
    }
    Ok(hits / data.len().max(1) as f64)
}

/// One trained model of an end-to-end run and its figures of merit.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub name: String,
    pub model: DeployedModel,
    pub cost: CostReport,
    /// Test accuracy at each time of the run's retention grid.
    pub retention: Vec<(f64, f64)>,
}

impl TrainedModel {
    pub fn accuracy_at(&self, t: f64) -> Option<f64> {
        self.retention.iter().find(|(x, _)| *x == t).map(|(_, a)| *a)
    }
}

#[derive(Clone, Debug)]
pub struct EndToEnd {
    pub hybrid: HybridConfig,
    pub trace: SearchTrace,
    /// The searched hybrid first, then one model per baseline device.
    pub models: Vec<TrainedModel>,
}

/// Search a configuration on `train`, then fine-tune the hybrid and one
/// homogeneous model per `baselines` entry from the same searched weights,
/// and evaluate each on `test` at every time in `times`.
#[allow(clippy::too_many_arguments)]
pub fn end_to_end(
    topology: &Topology,
    devices: &[DeviceSpec],
    train: &Dataset,
    test: &Dataset,
    search: &SearchConfig,
    ft: &FinetuneConfig,
    cost_model: &CostModel,
    baselines: &[&str],
    times: &[f64],
    seed: u64,
) -> CliResult<EndToEnd> {
    let net = Network::new(topology.clone(), seed)?;
    let mut parent = ParentArchitecture::new(net, devices.to_vec())?;
    let costs = normalized_costs(&parent.net, devices, cost_model)?;
    let (hybrid, trace) = run_search(&mut parent, train, search, &costs)?;
    let mut configs = vec![("hybrid".to_string(), hybrid.clone())];
    for b in baselines {
        let name = find_device(devices, b)?.name.clone();
        configs.push((
            format!("all-{name}"),
            HybridConfig::homogeneous(&name, topology.conv_count(), search.profile),
        ));
    }
    let mut models = Vec::new();
    for (name, cfg) in configs {
        let (model, _) = finetune(parent.net.clone(), &cfg, devices, train, ft)?;
        let cost = cost_model.evaluate(topology, &cfg, devices)?;
        let retention = times
            .iter()
            .map(|&t| Ok((t, evaluate_at_time(&model, test, t, seed)?)))
            .collect::<CliResult<Vec<_>>>()?;
        models.push(TrainedModel {
            name,
            model,
            cost,
            retention,
        });
    }
    Ok(EndToEnd { hybrid, trace, models })
}

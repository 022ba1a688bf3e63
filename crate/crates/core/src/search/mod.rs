//! Device-affinity search over a fixed network, followed by device-aware fine-tuning.
//!
//! One search epoch runs a weight update on a single large batch with plain
//! convolutions, then a pass over a fixed mini-subset in which every conv is
//! a probability-weighted mixture of device-perturbed copies of its weights.
//! Only the affinities move in that second pass.

mod finetune;

pub use finetune::{
    calibrate_ranges, evaluate_at_time, finetune, retention_curve, DeployedModel, FinetuneConfig, FinetuneLog,
    RETENTION_GRID,
};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::devlib::{perturb, DeviceSpec, Perturbation};
use crate::hwcost::{expected_costs, AdcPolicy, CostModel, HybridConfig, LayerCostTable, Profile};
use crate::nn::{argmax, cross_entropy, softmax, softmax_backward, Adam, ConvRoute, Network, ParentArchitecture};
use crate::rng::{mix64, NoiseStream};
use crate::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub epochs: usize,
    pub phase1_batch: usize,
    /// Fraction of the training set forming the affinity-training subset.
    pub subset_fraction: f64,
    pub phase2_batch: usize,
    /// Weight of the expected area term (costs normalized per layer).
    pub lambda1: f64,
    /// Weight of the expected programming-energy term.
    pub lambda2: f64,
    /// Drift time applied to the branch weights, seconds.
    pub drift_time: f64,
    pub alpha_lr: f64,
    pub weight_lr: f64,
    pub seed: u64,
    /// When false the branches are the unperturbed weights.
    pub perturb: bool,
    pub profile: Profile,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            epochs: 30,
            phase1_batch: 1000,
            subset_fraction: 0.10,
            phase2_batch: 100,
            lambda1: 0.0,
            lambda2: 0.0,
            drift_time: 100.0,
            alpha_lr: 0.06,
            weight_lr: 1e-3,
            seed: 0,
            perturb: true,
            profile: Profile::Cifar10,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return invalid(format!("subset fraction {} outside (0, 1]", self.subset_fraction));
        }
        if self.phase1_batch == 0 || self.phase2_batch == 0 {
            return invalid("batch sizes must be positive");
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return invalid("lambda1 and lambda2 must be non-negative");
        }
        if !(self.drift_time >= 0.0) {
            return invalid("drift time must be non-negative");
        }
        if !(self.alpha_lr >= 0.0 && self.weight_lr >= 0.0) {
            return invalid("learning rates must be non-negative");
        }
        Ok(())
    }
}

/// Per-layer device costs divided by the layer's cost on PCM (or the first
/// device when there is no PCM entry).
pub fn normalized_costs(net: &Network, devices: &[DeviceSpec], model: &CostModel) -> Result<LayerCostTable> {
    let reference = devices.iter().position(|d| d.name == "PCM").unwrap_or(0);
    LayerCostTable::build(&net.topology, devices, model)?.normalized(reference)
}

/// The three parts of the regularized objective and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ce: f64,
    /// Σ_i E[area]_i (normalized units, before λ1).
    pub area: f64,
    /// Σ_i E[energy]_i (normalized units, before λ2).
    pub energy: f64,
    pub total: f64,
}

pub fn regularized_loss(ce: f64, costs: &LayerCostTable, probs: &[Vec<f64>], lambda1: f64, lambda2: f64) -> Result<LossTerms> {
    let (a, e) = expected_costs(costs, probs)?;
    let area: f64 = a.iter().sum();
    let energy: f64 = e.iter().sum();
    let mut total = ce;
    if lambda1 != 0.0 {
        total += lambda1 * area;
    }
    if lambda2 != 0.0 {
        total += lambda2 * energy;
    }
    Ok(LossTerms { ce, area, energy, total })
}

/// dL/dα per layer from the cross-entropy probability gradients and the cost terms.
pub fn alpha_gradient(
    dprobs: &[Vec<f64>],
    probs: &[Vec<f64>],
    costs: &LayerCostTable,
    lambda1: f64,
    lambda2: f64,
) -> Vec<Vec<f64>> {
    dprobs
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(i, (g, p))| {
            let total: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(j, gj)| gj + lambda1 * costs.area[i][j] + lambda2 * costs.energy[i][j])
                .collect();
            softmax_backward(p, &total)
        })
        .collect()
}

/// Separate optimizer states for the network weights and the affinities.
#[derive(Clone, Debug)]
pub struct SearchState {
    weights: Vec<Adam>,
    alphas: Adam,
    /// Phase-2 batches processed so far; addresses the noise streams.
    pub draws: u64,
}

impl SearchState {
    pub fn new(parent: &ParentArchitecture, cfg: &SearchConfig) -> Self {
        SearchState {
            weights: weight_optimizers(&parent.net, cfg.weight_lr),
            alphas: Adam::new(cfg.alpha_lr, parent.affinity.alphas.iter().map(Vec::len).sum()),
            draws: 0,
        }
    }
}

pub(crate) fn weight_optimizers(net: &Network, lr: f64) -> Vec<Adam> {
    net.params().iter().map(|t| Adam::new(lr, t.len())).collect()
}

pub(crate) fn apply_weight_step(net: &mut Network, opts: &mut [Adam]) {
    for (t, opt) in net.params_mut().into_iter().zip(opts) {
        if let Some(g) = t.grad.take() {
            opt.step(&mut t.data, &g);
        }
    }
}

/// One weight update on `batch` with plain convolutions; affinities are untouched.
/// Returns the cross-entropy before the update.
pub fn phase1_step(parent: &mut ParentArchitecture, data: &Dataset, batch: &[usize], state: &mut SearchState) -> Result<f64> {
    let (x, labels) = data.batch(batch);
    let logits = parent.net.forward(&x, &[])?;
    let (loss, dlogits) = cross_entropy(&logits, &labels)?;
    parent.net.backward(&dlogits)?;
    apply_weight_step(&mut parent.net, &mut state.weights);
    Ok(loss)
}

/// Branch weights for every conv layer for one noise draw.
pub fn branch_weights(parent: &ParentArchitecture, cfg: &SearchConfig, draw: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    let how = Perturbation::search(cfg.drift_time);
    parent
        .net
        .conv_weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let stream = NoiseStream::new(cfg.seed, i as u64, draw);
            parent
                .devices
                .iter()
                .enumerate()
                .map(|(j, d)| {
                    if cfg.perturb {
                        perturb(&w.data, d, &how, &stream.derive(j as u64))
                    } else {
                        Ok(w.data.clone())
                    }
                })
                .collect()
        })
        .collect()
}

/// Cross-entropy and dL_CE/dp per layer through the mixture routes.
pub fn mixture_pass(
    net: &mut Network,
    branches: Vec<Vec<Vec<f64>>>,
    probs: &[Vec<f64>],
    x: &crate::nn::Tensor,
    labels: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let routes: Vec<ConvRoute> = branches
        .into_iter()
        .zip(probs)
        .map(|(b, p)| ConvRoute::Mixture {
            branches: b,
            probs: p.clone(),
        })
        .collect();
    let logits = net.forward(x, &routes)?;
    let (ce, dlogits) = cross_entropy(&logits, labels)?;
    let back = net.backward(&dlogits)?;
    net.zero_grad();
    let dprobs = back
        .dprobs
        .into_iter()
        .map(|d| d.expect("every conv is a mixture"))
        .collect();
    Ok((ce, dprobs))
}

/// Affinity updates over `batches` of the mini-subset. The stored weights
/// are read but never written. Returns the batch-averaged loss terms.
pub fn phase2_step(
    parent: &mut ParentArchitecture,
    data: &Dataset,
    batches: &[Vec<usize>],
    cfg: &SearchConfig,
    costs: &LayerCostTable,
    state: &mut SearchState,
) -> Result<LossTerms> {
    parent.validate()?;
    let mut sum = LossTerms::default();
    for batch in batches {
        let probs = parent.affinity.probabilities();
        let branches = branch_weights(parent, cfg, state.draws)?;
        state.draws += 1;
        let (x, labels) = data.batch(batch);
        let (ce, dprobs) = mixture_pass(&mut parent.net, branches, &probs, &x, &labels)?;
        let terms = regularized_loss(ce, costs, &probs, cfg.lambda1, cfg.lambda2)?;
        let grad: Vec<f64> = alpha_gradient(&dprobs, &probs, costs, cfg.lambda1, cfg.lambda2)
            .into_iter()
            .flatten()
            .collect();
        let mut flat: Vec<f64> = parent.affinity.alphas.iter().flatten().copied().collect();
        state.alphas.step(&mut flat, &grad);
        let d = parent.devices.len();
        for (row, chunk) in parent.affinity.alphas.iter_mut().zip(flat.chunks(d)) {
            row.copy_from_slice(chunk);
        }
        sum.ce += terms.ce;
        sum.area += terms.area;
        sum.energy += terms.energy;
        sum.total += terms.total;
    }
    let n = batches.len().max(1) as f64;
    Ok(LossTerms {
        ce: sum.ce / n,
        area: sum.area / n,
        energy: sum.energy / n,
        total: sum.total / n,
    })
}

/// Per layer, the device with the largest affinity (first index on ties),
/// with ADC bits assigned per layer from the chosen devices.
pub fn sample_config(alphas: &[Vec<f64>], devices: &[DeviceSpec], profile: Profile) -> HybridConfig {
    let names = alphas
        .iter()
        .map(|a| devices[argmax(&softmax(a))].name.clone())
        .collect();
    HybridConfig::new(names, profile, AdcPolicy::Layerwise)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase1_loss: f64,
    pub loss: LossTerms,
    pub alphas: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    /// Device letters of the configuration sampled from these affinities.
    pub config: String,
}

/// Append-only per-epoch log of a search run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub records: Vec<EpochRecord>,
}

impl SearchTrace {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| crate::Error::Format(format!("search trace: {e}"))))
            .collect::<Result<_>>()?;
        Ok(SearchTrace { records })
    }
}

/// Alternate the two phases for `cfg.epochs` epochs and sample the final configuration.
pub fn run_search(
    parent: &mut ParentArchitecture,
    data: &Dataset,
    cfg: &SearchConfig,
    costs: &LayerCostTable,
) -> Result<(HybridConfig, SearchTrace)> {
    cfg.validate()?;
    parent.validate()?;
    if data.is_empty() {
        return invalid("training set is empty");
    }
    let mut state = SearchState::new(parent, cfg);
    let subset = data.sample_indices(cfg.subset_fraction, cfg.seed, "mini-subset");
    let letters = |p: &ParentArchitecture| {
        let c = sample_config(&p.affinity.alphas, &p.devices, cfg.profile);
        c.devices
            .iter()
            .map(|n| {
                p.devices
                    .iter()
                    .find(|d| &d.name == n)
                    .map_or('?', DeviceSpec::letter)
            })
            .collect::<String>()
    };
    let mut trace = SearchTrace::default();
    for epoch in 0..cfg.epochs {
        let epoch_seed = mix64(cfg.seed ^ epoch as u64);
        let mut p1 = data.shuffled_indices(epoch_seed, "phase1");
        p1.truncate(cfg.phase1_batch);
        let phase1_loss = phase1_step(parent, data, &p1, &mut state)?;

        let mut order = subset.clone();
        shuffle_with(&mut order, epoch_seed);
        let batches: Vec<Vec<usize>> = order.chunks(cfg.phase2_batch).map(<[usize]>::to_vec).collect();
        let loss = phase2_step(parent, data, &batches, cfg, costs, &mut state)?;
        trace.records.push(EpochRecord {
            epoch,
            phase1_loss,
            loss,
            alphas: parent.affinity.alphas.clone(),
            probs: parent.affinity.probabilities(),
            config: letters(parent),
        });
    }
    Ok((sample_config(&parent.affinity.alphas, &parent.devices, cfg.profile), trace))
}

fn shuffle_with(v: &mut [usize], seed: u64) {
    use rand::seq::SliceRandom;
    v.shuffle(&mut crate::rng::seeded(seed, "phase2-order"));
}

#[cfg(test)]
mod tests;

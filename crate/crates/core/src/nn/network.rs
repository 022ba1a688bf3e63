use rand_distr::{Distribution, Normal};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::conv::{conv2d_backward, conv2d_forward, BlockMode};
use super::layers::{linear_backward, linear_forward, maxpool2_backward, maxpool2_forward};
use super::{AffinityState, Tensor};
use crate::devlib::DeviceSpec;
use crate::rng::seeded;
use crate::topology::{LayerDesc, Topology};
use crate::{invalid, Error, Result};

/// How one conv layer computes its output for a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvRoute {
    /// The stored weights, exact arithmetic.
    Digital,
    /// Substitute weights (e.g. device-perturbed) with optional crossbar
    /// row blocking and ADC quantization. Weight gradients are passed
    /// straight through to the stored weights.
    Device {
        weights: Vec<f64>,
        blocks: Option<BlockMode>,
    },
    /// Probability-weighted sum of one convolution per branch weight set.
    /// Backward yields dL/dprobs and input gradients; the stored weights
    /// receive no gradient.
    Mixture {
        branches: Vec<Vec<f64>>,
        probs: Vec<f64>,
    },
}

enum ConvCache {
    Own,
    Substitute(Vec<f64>),
    Mixture { effective: Vec<f64>, outputs: Vec<Tensor> },
}

enum Step {
    Conv {
        index: usize,
        input: Tensor,
        active: Vec<bool>,
        kind: ConvCache,
    },
    Pool {
        in_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Fc {
        input: Tensor,
    },
}

/// Result of [`Network::backward`]; parameter gradients are stored on the tensors.
#[derive(Debug)]
pub struct BackwardResult {
    /// dL/dp per conv layer routed as a mixture.
    pub dprobs: Vec<Option<Vec<f64>>>,
    pub dinput: Tensor,
}

/// A feed-forward CNN over a [`Topology`]: conv+ReLU, 2×2 max-pool and a final linear classifier.
#[derive(Debug)]
pub struct Network {
    pub topology: Topology,
    /// One [C_out, C_in, k, k] tensor per conv layer.
    pub conv_weights: Vec<Tensor>,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
    /// Largest |row-block partial sum| per conv layer in the last forward pass.
    pub partial_max: Vec<f64>,
    cache: Option<Vec<Step>>,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            topology: self.topology.clone(),
            conv_weights: self.conv_weights.clone(),
            fc_weight: self.fc_weight.clone(),
            fc_bias: self.fc_bias.clone(),
            partial_max: self.partial_max.clone(),
            cache: None,
        }
    }
}

impl std::fmt::Debug for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Step::Conv { .. } => "Conv",
            Step::Pool { .. } => "Pool",
            Step::Fc { .. } => "Fc",
        })
    }
}

impl Network {
    /// He-normal initialization for convs, 1/fan_in variance for the classifier.
    pub fn new(topology: Topology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut rng = seeded(seed, "network-init");
        let mut conv_weights = Vec::new();
        for s in topology.conv_specs() {
            let std = (2.0 / s.unrolled_rows() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let data = (0..s.weight_len()).map(|_| normal.sample(&mut rng)).collect();
            conv_weights.push(Tensor::new(
                vec![s.out_channels, s.in_channels, s.kernel, s.kernel],
                data,
            ));
        }
        let f = topology.fc_inputs();
        let normal = Normal::new(0.0, (1.0 / f as f64).sqrt()).expect("positive std");
        let fc = (0..f * topology.classes).map(|_| normal.sample(&mut rng)).collect();
        let classes = topology.classes;
        let convs = conv_weights.len();
        Ok(Network {
            topology,
            conv_weights,
            fc_weight: Tensor::new(vec![classes, f], fc),
            fc_bias: Tensor::zeros(vec![classes]),
            partial_max: vec![0.0; convs],
            cache: None,
        })
    }

    pub fn conv_count(&self) -> usize {
        self.conv_weights.len()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.conv_weights.iter().collect();
        v.push(&self.fc_weight);
        v.push(&self.fc_bias);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.conv_weights.iter_mut().collect();
        v.push(&mut self.fc_weight);
        v.push(&mut self.fc_bias);
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Forward pass that keeps what [`Network::backward`] needs.
    /// An empty `routes` slice means every conv is [`ConvRoute::Digital`].
    pub fn forward(&mut self, x: &Tensor, routes: &[ConvRoute]) -> Result<Tensor> {
        let (logits, steps, maxes) = self.run(x, routes, true)?;
        self.cache = Some(steps);
        self.partial_max = maxes;
        Ok(logits)
    }

    /// Forward pass without caching; for evaluation.
    pub fn predict(&self, x: &Tensor, routes: &[ConvRoute]) -> Result<Tensor> {
        Ok(self.run(x, routes, false)?.0)
    }

    /// Like [`Network::predict`] but also returns the per-layer partial-sum maxima.
    pub fn predict_with_ranges(&self, x: &Tensor, routes: &[ConvRoute]) -> Result<(Tensor, Vec<f64>)> {
        let (y, _, m) = self.run(x, routes, false)?;
        Ok((y, m))
    }

    /// Hash of every ReLU mask and pool selection for an input; two inputs
    /// or parameter settings with equal signatures lie in the same linear piece.
    pub fn activation_signature(&self, x: &Tensor, routes: &[ConvRoute]) -> Result<u64> {
        let (_, steps, _) = self.run(x, routes, true)?;
        let mut h = DefaultHasher::new();
        for s in &steps {
            match s {
                Step::Conv { active, .. } => active.hash(&mut h),
                Step::Pool { argmax, .. } => argmax.hash(&mut h),
                Step::Fc { .. } => {}
            }
        }
        Ok(h.finish())
    }

    fn run(&self, x: &Tensor, routes: &[ConvRoute], keep: bool) -> Result<(Tensor, Vec<Step>, Vec<f64>)> {
        let convs = self.conv_count();
        if !routes.is_empty() && routes.len() != convs {
            return invalid(format!("{} routes for {convs} conv layers", routes.len()));
        }
        let (n, c, h, w) = x.dims4()?;
        if (c, h, w) != self.topology.input {
            return invalid(format!(
                "input {:?} does not match the topology's {:?}",
                &x.shape[1..],
                self.topology.input
            ));
        }
        let digital = ConvRoute::Digital;
        let mut steps = Vec::new();
        let mut maxes = vec![0.0; convs];
        let mut cur = x.clone();
        let mut ci = 0;
        for layer in &self.topology.layers {
            match layer {
                LayerDesc::Conv(spec) => {
                    let route = routes.get(ci).unwrap_or(&digital);
                    let own = &self.conv_weights[ci].data;
                    let (pre, kind) = match route {
                        ConvRoute::Digital => (conv2d_forward(&cur, own, spec, None)?.y, ConvCache::Own),
                        ConvRoute::Device { weights, blocks } => {
                            let out = conv2d_forward(&cur, weights, spec, blocks.as_ref())?;
                            maxes[ci] = out.partial_max;
                            (out.y, ConvCache::Substitute(if keep { weights.clone() } else { Vec::new() }))
                        }
                        ConvRoute::Mixture { branches, probs } => {
                            if branches.is_empty() || branches.len() != probs.len() {
                                return invalid("mixture needs one probability per branch");
                            }
                            let mut outputs = Vec::with_capacity(branches.len());
                            for b in branches {
                                outputs.push(conv2d_forward(&cur, b, spec, None)?.y);
                            }
                            let mut m = Tensor::zeros(outputs[0].shape.clone());
                            for (o, p) in outputs.iter().zip(probs) {
                                m.data.iter_mut().zip(&o.data).for_each(|(a, v)| *a += p * v);
                            }
                            let mut effective = vec![0.0; own.len()];
                            for (b, p) in branches.iter().zip(probs) {
                                effective.iter_mut().zip(b).for_each(|(a, v)| *a += p * v);
                            }
                            (m, ConvCache::Mixture { effective, outputs })
                        }
                    };
                    let active: Vec<bool> = pre.data.iter().map(|v| *v > 0.0).collect();
                    let mut post = pre;
                    post.data.iter_mut().for_each(|v| *v = v.max(0.0));
                    if keep {
                        steps.push(Step::Conv {
                            index: ci,
                            input: std::mem::replace(&mut cur, post),
                            active,
                            kind,
                        });
                    } else {
                        cur = post;
                    }
                    ci += 1;
                }
                LayerDesc::MaxPool => {
                    let (y, argmax) = maxpool2_forward(&cur)?;
                    if keep {
                        steps.push(Step::Pool {
                            in_shape: cur.shape.clone(),
                            argmax,
                        });
                    }
                    cur = y;
                }
                LayerDesc::Fc => {
                    let flat = Tensor::new(vec![n, cur.len() / n.max(1)], std::mem::take(&mut cur.data));
                    let y = linear_forward(&flat, &self.fc_weight, &self.fc_bias)?;
                    if keep {
                        steps.push(Step::Fc { input: flat });
                    }
                    cur = y;
                }
            }
        }
        Ok((cur, steps, maxes))
    }

    /// Back-propagate `dlogits` through the last [`Network::forward`] pass.
    /// Parameter gradients overwrite each tensor's `grad`.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<BackwardResult> {
        let steps = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidState("backward called before forward".into()))?;
        self.zero_grad();
        let mut dprobs = vec![None; self.conv_count()];
        let mut g = dlogits.clone();
        let conv_specs = self.topology.conv_specs();
        for step in steps.into_iter().rev() {
            match step {
                Step::Fc { input } => {
                    if g.shape != [input.shape[0], self.fc_weight.shape[0]] {
                        return invalid(format!("logit gradient shape {:?} does not match", g.shape));
                    }
                    let (dx, dw, db) = linear_backward(&input, &self.fc_weight, &g);
                    self.fc_weight.grad = Some(dw);
                    self.fc_bias.grad = Some(db);
                    g = dx;
                }
                Step::Pool { in_shape, argmax } => {
                    g = maxpool2_backward(&in_shape, &argmax, &g);
                }
                Step::Conv {
                    index,
                    input,
                    active,
                    kind,
                } => {
                    let spec = &conv_specs[index];
                    let (n, _, h, w) = input.dims4()?;
                    let (oh, ow) = spec.output_hw(h, w)?;
                    let mut dm = Tensor::new(vec![n, spec.out_channels, oh, ow], std::mem::take(&mut g.data));
                    dm.data.iter_mut().zip(&active).for_each(|(d, a)| {
                        if !a {
                            *d = 0.0
                        }
                    });
                    let (dx, dw) = match &kind {
                        ConvCache::Own => conv2d_backward(&input, &self.conv_weights[index].data, &dm, spec, true)?,
                        ConvCache::Substitute(wp) => conv2d_backward(&input, wp, &dm, spec, true)?,
                        ConvCache::Mixture { effective, outputs } => {
                            dprobs[index] = Some(
                                outputs
                                    .iter()
                                    .map(|o| o.data.iter().zip(&dm.data).map(|(a, b)| a * b).sum())
                                    .collect(),
                            );
                            conv2d_backward(&input, effective, &dm, spec, false)?
                        }
                    };
                    if let Some(dw) = dw {
                        self.conv_weights[index].grad = Some(dw);
                    }
                    g = dx;
                }
            }
        }
        Ok(BackwardResult { dprobs, dinput: g })
    }
}

/// A network whose conv layers each carry device affinities over a shared weight set.
#[derive(Clone, Debug)]
pub struct ParentArchitecture {
    pub net: Network,
    pub affinity: AffinityState,
    pub devices: Vec<DeviceSpec>,
}

impl ParentArchitecture {
    pub fn new(net: Network, devices: Vec<DeviceSpec>) -> Result<Self> {
        if devices.is_empty() {
            return invalid("device set is empty");
        }
        let affinity = AffinityState::uniform(net.conv_count(), devices.len());
        Ok(ParentArchitecture {
            net,
            affinity,
            devices,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.affinity.layers() != self.net.conv_count() {
            return invalid("one affinity row per conv layer required");
        }
        if self.affinity.alphas.iter().any(|a| a.len() != self.devices.len()) {
            return invalid("affinity rows must match the device count");
        }
        Ok(())
    }
}

//! Mini-batch Adam training with class-weighted cross-entropy.
//!
//! Batch-norm layers normalise with the statistics of the current batch
//! (no running averages), and gradients flow through those statistics.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::models::argmax_lowest;
use crate::network::{NetworkSpec, STD_FLOOR};
use crate::rng::rng_for;
use crate::tensor::{softmax, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// One positive weight per class; empty means all ones.
    pub class_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 11,
            batch_size: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            class_weights: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !self.class_weights.is_empty() {
            if self.class_weights.len() != classes {
                return bad(format!(
                    "{} class weights given for {classes} classes",
                    self.class_weights.len()
                ));
            }
            if let Some(w) = self.class_weights.iter().find(|w| !(**w > 0.0)) {
                return bad(format!("class weights must be positive, got {w}"));
            }
        }
        Ok(())
    }

    fn weight(&self, class: usize) -> f64 {
        self.class_weights.get(class).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Class-weighted mean cross-entropy over the epoch.
    pub loss: f64,
    /// Training accuracy under batch statistics.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// What the forward pass remembers for the backward pass of one layer.
enum Saved<F> {
    None,
    Norm { xhat: Vec<Tensor<F>>, std: Vec<F>, floored: Vec<bool> },
    Mask(Vec<Vec<F>>),
}

struct Adam<F> {
    m: Vec<Vec<Tensor<F>>>,
    v: Vec<Vec<Tensor<F>>>,
    step: i32,
}

impl<F: Real> Adam<F> {
    fn new(net: &NetworkSpec<F>) -> Self {
        let zeros: Vec<Vec<Tensor<F>>> = net
            .layers()
            .iter()
            .map(|l| l.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect())
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, net: &mut NetworkSpec<F>, grads: &[Vec<Tensor<F>>], cfg: &TrainConfig) {
        self.step += 1;
        let b1 = F::from_f64_lossy(cfg.beta1);
        let b2 = F::from_f64_lossy(cfg.beta2);
        let lr = F::from_f64_lossy(cfg.learning_rate);
        let eps = F::from_f64_lossy(cfg.adam_epsilon);
        let c1 = F::one() - b1.powi(self.step);
        let c2 = F::one() - b2.powi(self.step);
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            for (pi, param) in layer.params_mut().into_iter().enumerate() {
                let g = grads[li][pi].data();
                let m = self.m[li][pi].data_mut();
                let v = self.v[li][pi].data_mut();
                for (((p, &g), m), v) in param.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p = *p - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// Train a copy of `net` on `(samples, labels)`.
pub fn train<F: Real>(
    net: &NetworkSpec<F>,
    samples: &[Tensor<F>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(NetworkSpec<F>, TrainHistory)> {
    cfg.validate(net.classes)?;
    if samples.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= net.classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            net.classes
        )));
    }
    let mut net = net.clone();
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 || samples.is_empty() {
        return Ok((net, history));
    }
    let (n, t) = (net.input_channels, net.input_length);
    let volumes = samples
        .iter()
        .map(|x| {
            if x.len() != n * t {
                return Err(Error::shape(
                    "input",
                    format!("expected [{n}, {t}] sample, got {:?}", x.shape()),
                ));
            }
            x.clone().reshape(&[1, n, t])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut adam = Adam::new(&net);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(&[cfg.seed, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        let mut correct = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&Tensor<F>> = idx.iter().map(|&i| &volumes[i]).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let step = train_step(&net, &xs, &ys, cfg, epoch, bi)?;
            if !step.loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch: bi });
            }
            loss_sum += step.loss * step.weight;
            weight_sum += step.weight;
            correct += step.correct;
            adam.update(&mut net, &step.grads, cfg);
            net.validate().map_err(|_| Error::NanLoss { epoch, batch: bi })?;
        }
        history.epochs.push(EpochStats {
            loss: loss_sum / weight_sum,
            accuracy: correct as f64 / samples.len() as f64,
        });
    }
    Ok((net, history))
}

struct StepResult<F> {
    loss: f64,
    weight: f64,
    correct: usize,
    grads: Vec<Vec<Tensor<F>>>,
}

fn train_step<F: Real>(
    net: &NetworkSpec<F>,
    xs: &[&Tensor<F>],
    ys: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    batch: usize,
) -> Result<StepResult<F>> {
    let layers = net.layers();
    let end = if matches!(layers.last(), Some(Layer::Softmax)) {
        layers.len() - 1
    } else {
        layers.len()
    };

    // forward, keeping every layer input
    let mut acts: Vec<Vec<Tensor<F>>> = vec![xs.iter().map(|&x| x.clone()).collect()];
    let mut saved: Vec<Saved<F>> = Vec::with_capacity(end);
    for (li, layer) in layers[..end].iter().enumerate() {
        let input = acts.last().expect("non-empty");
        let (out, keep) = match layer {
            Layer::BatchNorm(bn) => {
                let (mean, std) = crate::models::channel_moments(input, bn.channels);
                let floor = STD_FLOOR;
                let floored: Vec<bool> = std.iter().map(|&s| s < floor).collect();
                let std: Vec<F> = std.iter().map(|&s| F::from_f64_lossy(s.max(floor))).collect();
                let mean: Vec<F> = mean.into_iter().map(F::from_f64_lossy).collect();
                let zero = vec![F::zero(); bn.channels];
                let one = vec![F::one(); bn.channels];
                let unit = crate::layers::BatchNorm::<F> {
                    channels: bn.channels,
                    gamma: Tensor::full(&[bn.channels], F::one()),
                    beta: Tensor::zeros(&[bn.channels]),
                };
                let xhat: Vec<Tensor<F>> = input.iter().map(|a| unit.forward(a, &mean, &std)).collect();
                let out = xhat.iter().map(|a| bn.forward(a, &zero, &one)).collect();
                (out, Saved::Norm { xhat, std, floored })
            }
            Layer::Dropout { rate } if *rate > 0.0 => {
                let mut rng = rng_for(&[cfg.seed, epoch as u64, batch as u64, li as u64]);
                let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
                let masks: Vec<Vec<F>> = input
                    .iter()
                    .map(|a| {
                        (0..a.len())
                            .map(|_| if rng.random::<f64>() < *rate { F::zero() } else { keep })
                            .collect()
                    })
                    .collect();
                let out = input
                    .iter()
                    .zip(&masks)
                    .map(|(a, m)| {
                        let mut o = a.clone();
                        for (v, &k) in o.data_mut().iter_mut().zip(m) {
                            *v = *v * k;
                        }
                        o
                    })
                    .collect();
                (out, Saved::Mask(masks))
            }
            _ => (
                input.iter().map(|a| layer.forward(a, None)).collect(),
                Saved::None,
            ),
        };
        acts.push(out);
        saved.push(keep);
    }

    // loss and logit gradient
    let logits = &acts[end];
    let total_w: f64 = ys.iter().map(|&y| cfg.weight(y)).sum();
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad: Vec<Tensor<F>> = Vec::with_capacity(xs.len());
    for (z, &y) in logits.iter().zip(ys) {
        let p = softmax(z.data());
        let w = cfg.weight(y);
        loss += -w * p[y].to_f64_lossy().max(f64::MIN_POSITIVE).ln();
        if argmax_lowest(z.data()) == y {
            correct += 1;
        }
        let scale = F::from_f64_lossy(w / total_w);
        let mut g = Tensor::new(vec![p.len()], p)?;
        g.data_mut()[y] = g.data()[y] - F::one();
        grad.push(g.map(|v| v * scale));
    }
    loss /= total_w;

    // backward
    let mut grads: Vec<Vec<Tensor<F>>> = layers
        .iter()
        .map(|l| l.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect())
        .collect();
    for li in (0..end).rev() {
        let layer = &layers[li];
        let inputs = &acts[li];
        grad = match (layer, &saved[li]) {
            (Layer::BatchNorm(bn), Saved::Norm { xhat, std, floored }) => {
                batch_norm_backward(bn, xhat, std, floored, &grad, &mut grads[li])
            }
            (_, Saved::Mask(masks)) => grad
                .into_iter()
                .zip(masks)
                .map(|(mut g, m)| {
                    for (v, &k) in g.data_mut().iter_mut().zip(m) {
                        *v = *v * k;
                    }
                    g
                })
                .collect(),
            _ => match layer.activation() {
                Some(act) => grad
                    .into_iter()
                    .zip(inputs)
                    .map(|(mut g, z)| {
                        for (v, &zv) in g.data_mut().iter_mut().zip(z.data()) {
                            *v = *v * act.derivative(zv);
                        }
                        g
                    })
                    .collect(),
                None => {
                    let needs_input_grad = li > 0;
                    grad.iter()
                        .zip(inputs)
                        .map(|(g, x)| {
                            layer.accumulate_param_grads(x, g, &mut grads[li]);
                            if needs_input_grad {
                                layer.backward_linear(x, g, None)
                            } else {
                                Tensor::zeros(&[0])
                            }
                        })
                        .collect()
                }
            },
        };
    }
    Ok(StepResult {
        loss,
        weight: total_w,
        correct,
        grads,
    })
}

/// Backward through batch normalisation with batch-dependent statistics.
fn batch_norm_backward<F: Real>(
    bn: &crate::layers::BatchNorm<F>,
    xhat: &[Tensor<F>],
    std: &[F],
    floored: &[bool],
    grad: &[Tensor<F>],
    param_grads: &mut [Tensor<F>],
) -> Vec<Tensor<F>> {
    let c = bn.channels;
    let per = xhat[0].len() / c;
    let count = (per * xhat.len()) as f64;
    // sums over the batch of dy and dy * xhat
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for (g, xh) in grad.iter().zip(xhat) {
        for ch in 0..c {
            let range = ch * per..(ch + 1) * per;
            for (&dy, &x) in g.data()[range.clone()].iter().zip(&xh.data()[range]) {
                sum_dy[ch] += dy.to_f64_lossy();
                sum_dy_xhat[ch] += (dy * x).to_f64_lossy();
            }
        }
    }
    for ch in 0..c {
        param_grads[0].data_mut()[ch] = F::from_f64_lossy(sum_dy_xhat[ch]);
        param_grads[1].data_mut()[ch] = F::from_f64_lossy(sum_dy[ch]);
    }
    grad.iter()
        .zip(xhat)
        .map(|(g, xh)| {
            let mut out = g.clone();
            for ch in 0..c {
                let gamma = bn.gamma.data()[ch].to_f64_lossy();
                let s = std[ch].to_f64_lossy();
                let mean_dy = sum_dy[ch] / count;
                let mean_dy_xhat = sum_dy_xhat[ch] / count;
                let range = ch * per..(ch + 1) * per;
                for (o, &x) in out.data_mut()[range.clone()].iter_mut().zip(&xh.data()[range]) {
                    let dy = o.to_f64_lossy();
                    let v = if floored[ch] {
                        // the floored deviation is a constant
                        gamma / s * (dy - mean_dy)
                    } else {
                        gamma / s * (dy - mean_dy - x.to_f64_lossy() * mean_dy_xhat)
                    };
                    *o = F::from_f64_lossy(v);
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Dense;
    use crate::models::{build_eegnet_with, init_weights, EegNetConfig};

    fn toy_set(seed: u64, count: usize) -> (Vec<Tensor<f32>>, Vec<usize>) {
        let mut rng = rng_for(&[seed, 99]);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..count {
            let y = i % 2;
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let x = Tensor::from_fn(&[1, 6], |j| {
                let shift = if j < 2 { sign * 1.5 } else { 0.0 };
                shift + rng.random_range(-1.0f32..1.0)
            });
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    }

    fn dense_net(seed: u64) -> NetworkSpec<f32> {
        let mut net =
            NetworkSpec::new("toy", 1, 6, 2, vec![Layer::Dense(Dense::new(6, 2, true)), Layer::Softmax])
                .unwrap();
        init_weights(&mut net, seed);
        net
    }

    #[test]
    fn separable_toy_reaches_high_accuracy() {
        let (xs, ys) = toy_set(1, 200);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 20,
            learning_rate: 0.01,
            seed: 4,
            ..TrainConfig::default()
        };
        let (trained, hist) = train(&dense_net(1), &xs, &ys, &cfg).unwrap();
        assert!(hist.epochs.last().unwrap().accuracy >= 0.95, "{hist:?}");
        let stats = crate::network::BatchStats::new();
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| crate::models::predict(&trained, x, &stats).unwrap().0 == y)
            .count();
        assert!(correct as f64 / xs.len() as f64 >= 0.95);
    }

    #[test]
    fn published_defaults_are_accepted() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size, 50);
        assert_eq!((cfg.learning_rate, cfg.beta1, cfg.beta2), (0.001, 0.9, 0.999));
        assert!(cfg.validate(2).is_ok());
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let net = dense_net(3);
        let (xs, ys) = toy_set(3, 10);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, hist) = train(&net, &xs, &ys, &cfg).unwrap();
        assert_eq!(out, net);
        assert!(hist.epochs.is_empty());
    }

    #[test]
    fn unit_class_weights_equal_unweighted_loss() {
        let (xs, ys) = toy_set(5, 60);
        let base = TrainConfig {
            epochs: 3,
            batch_size: 16,
            seed: 8,
            ..TrainConfig::default()
        };
        let weighted = TrainConfig {
            class_weights: vec![1.0, 1.0],
            ..base.clone()
        };
        let (_, a) = train(&dense_net(2), &xs, &ys, &base).unwrap();
        let (_, b) = train(&dense_net(2), &xs, &ys, &weighted).unwrap();
        for (x, y) in a.epochs.iter().zip(&b.epochs) {
            assert!((x.loss - y.loss).abs() < 1e-7);
        }
    }

    #[test]
    fn loss_decreases_over_first_five_epochs_for_ten_seeds() {
        let (xs, ys) = toy_set(11, 100);
        for seed in 0..10 {
            let cfg = TrainConfig {
                epochs: 5,
                batch_size: 50,
                seed,
                ..TrainConfig::default()
            };
            let (_, hist) = train(&dense_net(100 + seed), &xs, &ys, &cfg).unwrap();
            let losses: Vec<f64> = hist.epochs.iter().map(|e| e.loss).collect();
            assert!(
                losses.windows(2).all(|w| w[1] < w[0]),
                "seed {seed}: {losses:?}"
            );
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = 0.0;
        assert!(cfg.validate(2).is_err());
        let mut cfg = TrainConfig::default();
        cfg.beta2 = 1.0;
        assert!(cfg.validate(2).is_err());
        let mut cfg = TrainConfig::default();
        cfg.class_weights = vec![1.0, 0.0];
        assert!(cfg.validate(2).is_err());
        let mut cfg = TrainConfig::default();
        cfg.class_weights = vec![1.0, 0.41, 3.0];
        assert!(cfg.validate(2).is_err());
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let (xs, _) = toy_set(1, 4);
        let err = train(&dense_net(1), &xs, &[0, 1, 2, 0], &TrainConfig::default());
        assert!(err.is_err());
    }

    /// Finite-difference check of the full training gradient, including
    /// batch-norm through batch statistics, on a small EEGNet in f64.
    #[test]
    fn training_gradient_matches_finite_differences() {
        let cfg_net = EegNetConfig {
            f1: 2,
            depth: 1,
            f2: 2,
            temporal_kernel: 3,
            separable_kernel: 3,
            pool1: 2,
            pool2: 2,
            dropout: 0.0,
        };
        let mut net = build_eegnet_with::<f64>(2, 8, 2, &cfg_net).unwrap();
        init_weights(&mut net, 21);
        let mut rng = rng_for(&[77]);
        let xs: Vec<Tensor<f64>> = (0..3)
            .map(|_| Tensor::from_fn(&[1, 2, 8], |_| rng.random_range(-1.0..1.0)))
            .collect();
        let ys = vec![0, 1, 1];
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        let cfg = TrainConfig {
            class_weights: vec![1.0, 0.41],
            ..TrainConfig::default()
        };
        let step = train_step(&net, &refs, &ys, &cfg, 0, 0).unwrap();
        let h = 1e-6;
        for li in 0..net.layers().len() {
            let count = net.layers()[li].params().len();
            for pi in 0..count {
                let len = net.layers()[li].params()[pi].1.len();
                for k in 0..len {
                    let mut plus = net.clone();
                    plus.layers_mut()[li].params_mut()[pi].data_mut()[k] += h;
                    let mut minus = net.clone();
                    minus.layers_mut()[li].params_mut()[pi].data_mut()[k] -= h;
                    let lp = train_step(&plus, &refs, &ys, &cfg, 0, 0).unwrap().loss;
                    let lm = train_step(&minus, &refs, &ys, &cfg, 0, 0).unwrap().loss;
                    let fd = (lp - lm) / (2.0 * h);
                    let an = step.grads[li][pi].data()[k];
                    assert!(
                        (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                        "layer {li} param {pi}[{k}]: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }
}

//! Sequential networks: layer-wise forward pass with recorded activations
//! and a reverse pass whose behaviour at nonlinearities is chosen by a
//! [`BackwardRule`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::{Activation, Layer};
use crate::tensor::{softmax, Real, Tensor};

/// An ordered list of layers with a declared input size and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec<F = f32> {
    pub name: String,
    pub input_channels: usize,
    pub input_length: usize,
    pub classes: usize,
    layers: Vec<Layer<F>>,
}

impl<F: Real> NetworkSpec<F> {
    /// Validate the shape chain end to end and build the network.
    pub fn new(
        name: impl Into<String>,
        input_channels: usize,
        input_length: usize,
        classes: usize,
        layers: Vec<Layer<F>>,
    ) -> Result<Self> {
        let net = NetworkSpec {
            name: name.into(),
            input_channels,
            input_length,
            classes,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::shape("network", "class count must be positive"));
        }
        let mut shape = vec![1, self.input_channels, self.input_length];
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::shape(self.layer_label(i), "softmax must be the last layer"));
            }
            for (name, t) in layer.params() {
                if !t.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("parameter {name} of {}", self.layer_label(i)),
                    });
                }
            }
            shape = layer
                .output_shape(&shape)
                .map_err(|detail| Error::shape(self.layer_label(i), detail))?;
        }
        if shape != [self.classes] {
            return Err(Error::shape(
                "network output",
                format!("declared {} classes but layers produce {:?}", self.classes, shape),
            ));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    /// Mutable access to the layers. Callers must keep parameter shapes
    /// unchanged; [`NetworkSpec::validate`] re-checks the chain.
    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    pub fn layer_label(&self, index: usize) -> String {
        format!("layer {index} ({})", self.layers[index].kind_name())
    }

    /// Indices of the layers the attribution rules rewrite.
    pub fn nonlinearity_sites(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].activation().is_some())
            .collect()
    }

    pub fn batch_norm_sites(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| matches!(self.layers[i], Layer::BatchNorm(_)))
            .collect()
    }

    /// Activation shapes: entry 0 is the network input, entry `i + 1` the
    /// output of layer `i`.
    pub fn activation_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![vec![1, self.input_channels, self.input_length]];
        for layer in &self.layers {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .expect("validated network");
            shapes.push(next);
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<G: Real>(&self) -> NetworkSpec<G> {
        let layers = self.layers.iter().map(cast_layer).collect();
        NetworkSpec {
            name: self.name.clone(),
            input_channels: self.input_channels,
            input_length: self.input_length,
            classes: self.classes,
            layers,
        }
    }

    fn input_as_volume(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, t) = (self.input_channels, self.input_length);
        let ok = match input.shape() {
            [a, b] => *a == n && *b == t,
            [1, a, b] => *a == n && *b == t,
            _ => false,
        };
        if !ok {
            return Err(Error::shape(
                "input",
                format!("expected [{n}, {t}] sample, got {:?}", input.shape()),
            ));
        }
        if !input.is_finite() {
            return Err(Error::NonFinite {
                context: "network input".into(),
            });
        }
        input.clone().reshape(&[1, n, t])
    }

    fn stats_for<'a>(
        &self,
        index: usize,
        stats: &'a BatchStats<F>,
    ) -> Result<Option<(&'a [F], &'a [F])>> {
        match &self.layers[index] {
            Layer::BatchNorm(bn) => {
                let s = stats
                    .site(index)
                    .ok_or(Error::MissingStats { layer: index })?;
                if s.mean.len() != bn.channels || s.std.len() != bn.channels {
                    return Err(Error::shape(
                        self.layer_label(index),
                        format!(
                            "batch stats have {} channels, layer has {}",
                            s.mean.len(),
                            bn.channels
                        ),
                    ));
                }
                Ok(Some((&s.mean, &s.std)))
            }
            _ => Ok(None),
        }
    }
}

fn cast_layer<F: Real, G: Real>(layer: &Layer<F>) -> Layer<G> {
    use crate::layers::{BatchNorm, Conv2d, Dense};
    fn conv<F: Real, G: Real>(c: &Conv2d<F>) -> Conv2d<G> {
        Conv2d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            groups: c.groups,
            padding: c.padding,
            weight: c.weight.cast(),
            bias: c.bias.as_ref().map(|b| b.cast()),
        }
    }
    match layer {
        Layer::Conv { kind, conv: c } => Layer::Conv {
            kind: *kind,
            conv: conv(c),
        },
        Layer::SeparableConv {
            depthwise,
            pointwise,
        } => Layer::SeparableConv {
            depthwise: conv(depthwise),
            pointwise: conv(pointwise),
        },
        Layer::BatchNorm(bn) => Layer::BatchNorm(BatchNorm {
            channels: bn.channels,
            gamma: bn.gamma.cast(),
            beta: bn.beta.cast(),
        }),
        Layer::Elu { alpha } => Layer::Elu { alpha: *alpha },
        Layer::Relu => Layer::Relu,
        Layer::AvgPool { pool } => Layer::AvgPool { pool: *pool },
        Layer::GlobalAvgPool => Layer::GlobalAvgPool,
        Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
        Layer::Dense(d) => Layer::Dense(Dense {
            in_features: d.in_features,
            out_features: d.out_features,
            weight: d.weight.cast(),
            bias: d.bias.as_ref().map(|b| b.cast()),
        }),
        Layer::Softmax => Layer::Softmax,
    }
}

/// Per-channel normalisation statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<F = f32> {
    pub mean: Vec<F>,
    pub std: Vec<F>,
}

/// Fixed batch-norm statistics, keyed by layer index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchStats<F = f32> {
    sites: BTreeMap<usize, BnStats<F>>,
}

/// Lower bound applied to every batch-norm standard deviation.
pub const STD_FLOOR: f64 = 1e-5;

impl<F: Real> BatchStats<F> {
    pub fn new() -> Self {
        BatchStats {
            sites: BTreeMap::new(),
        }
    }

    /// Insert statistics for a layer, flooring the standard deviation.
    pub fn insert(&mut self, layer: usize, mean: Vec<F>, std: Vec<F>) {
        let floor = F::from_f64_lossy(STD_FLOOR);
        let std = std.into_iter().map(|s| s.max(floor)).collect();
        self.sites.insert(layer, BnStats { mean, std });
    }

    /// Zero mean, unit deviation at every batch-norm site of `net`.
    pub fn identity(net: &NetworkSpec<F>) -> Self {
        let mut stats = BatchStats::new();
        for i in net.batch_norm_sites() {
            if let Layer::BatchNorm(bn) = &net.layers()[i] {
                stats.insert(i, vec![F::zero(); bn.channels], vec![F::one(); bn.channels]);
            }
        }
        stats
    }

    pub fn site(&self, layer: usize) -> Option<&BnStats<F>> {
        self.sites.get(&layer)
    }

    pub fn sites(&self) -> impl Iterator<Item = (usize, &BnStats<F>)> {
        self.sites.iter().map(|(&k, v)| (k, v))
    }

    pub fn cast<G: Real>(&self) -> BatchStats<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::from_f64_lossy(x.to_f64_lossy())).collect();
        BatchStats {
            sites: self
                .sites
                .iter()
                .map(|(&k, s)| {
                    (
                        k,
                        BnStats {
                            mean: conv(&s.mean),
                            std: conv(&s.std),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Everything recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F = f32> {
    /// `activations[0]` is the input volume; `activations[i + 1]` is the
    /// output of layer `i`, so `activations[i]` is layer `i`'s pre-activation.
    pub activations: Vec<Tensor<F>>,
    pub logits: Tensor<F>,
    pub probabilities: Tensor<F>,
}

impl<F: Real> ForwardTrace<F> {
    pub fn predicted_class(&self) -> usize {
        self.probabilities.argmax()
    }
}

fn check_finite<F: Real>(net: &NetworkSpec<F>, index: usize, t: &Tensor<F>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("forward output of {}", net.layer_label(index)),
        })
    }
}

/// Inference forward pass with fixed batch-norm statistics.
pub fn forward<F: Real>(
    net: &NetworkSpec<F>,
    input: &Tensor<F>,
    stats: &BatchStats<F>,
) -> Result<ForwardTrace<F>> {
    let mut activations = vec![net.input_as_volume(input)?];
    for (i, layer) in net.layers().iter().enumerate() {
        let s = net.stats_for(i, stats)?;
        let out = layer.forward(activations.last().expect("non-empty"), s);
        check_finite(net, i, &out)?;
        activations.push(out);
    }
    let logits = logits_of(net, &activations);
    let probabilities = Tensor::new(vec![net.classes], softmax(logits.data()))?;
    Ok(ForwardTrace {
        activations,
        logits,
        probabilities,
    })
}

fn logits_of<F: Real>(net: &NetworkSpec<F>, activations: &[Tensor<F>]) -> Tensor<F> {
    // The softmax layer (if any) is the identity marker; logits are its input.
    let n = net.layers().len();
    if matches!(net.layers().last(), Some(Layer::Softmax)) {
        activations[n - 1].clone()
    } else {
        activations[n].clone()
    }
}

/// Forward pass that keeps only the logits.
pub fn forward_logits<F: Real>(
    net: &NetworkSpec<F>,
    input: &Tensor<F>,
    stats: &BatchStats<F>,
) -> Result<Tensor<F>> {
    let mut x = net.input_as_volume(input)?;
    for (i, layer) in net.layers().iter().enumerate() {
        if matches!(layer, Layer::Softmax) {
            break;
        }
        let s = net.stats_for(i, stats)?;
        x = layer.forward(&x, s);
        check_finite(net, i, &x)?;
    }
    Ok(x)
}

/// Class probabilities without recording activations.
pub fn forward_probabilities<F: Real>(
    net: &NetworkSpec<F>,
    input: &Tensor<F>,
    stats: &BatchStats<F>,
) -> Result<Vec<F>> {
    Ok(softmax(forward_logits(net, input, stats)?.data()))
}

/// How the reverse pass treats nonlinearity layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackwardRule {
    /// Exact gradient.
    Plain,
    /// Only positive upstream signal passes, regardless of the forward input.
    Deconv,
    /// Gradient gated by both a positive forward input and a positive
    /// upstream signal.
    Guided,
    /// Relevance ratio `f(z) / (z + eps * sign(z))`, with `sign(0) = +1`.
    EpsilonLrp { epsilon: f64 },
    /// Secant slope `(f(z) - f(z0)) / (z - z0)` against a baseline pass,
    /// replaced by the midpoint derivative when `|z - z0| < near_zero_delta`.
    DeepLiftRescale { near_zero_delta: f64 },
}

impl BackwardRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BackwardRule::EpsilonLrp { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => {
                Err(Error::InvalidArgument(format!(
                    "epsilon must be positive, got {epsilon}"
                )))
            }
            BackwardRule::DeepLiftRescale { near_zero_delta }
                if !(near_zero_delta > 0.0 && near_zero_delta.is_finite()) =>
            {
                Err(Error::InvalidArgument(format!(
                    "near_zero_delta must be positive, got {near_zero_delta}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Propagate one upstream value through a nonlinearity with
    /// pre-activation `z` (and baseline pre-activation `z0` for DeepLIFT).
    #[inline]
    pub fn propagate<F: Real>(&self, act: Activation, z: F, z0: F, g: F) -> F {
        let zero = F::zero();
        match *self {
            BackwardRule::Plain => g * act.derivative(z),
            BackwardRule::Deconv => g.max(zero),
            BackwardRule::Guided => {
                if z > zero && g > zero {
                    g * act.derivative(z)
                } else {
                    zero
                }
            }
            BackwardRule::EpsilonLrp { epsilon } => {
                let eps = F::from_f64_lossy(epsilon);
                let stab = if z >= zero { eps } else { -eps };
                g * act.value(z) / (z + stab)
            }
            BackwardRule::DeepLiftRescale { near_zero_delta } => {
                let dz = z - z0;
                if dz.abs() < F::from_f64_lossy(near_zero_delta) {
                    let mid = (z + z0) / F::from_f64_lossy(2.0);
                    g * act.derivative(mid)
                } else {
                    g * (act.value(z) - act.value(z0)) / dz
                }
            }
        }
    }
}

/// Reverse pass seeded with 1 at the target-class logit.
///
/// Returns an `[N, T]` map. Batch-norm layers act as fixed affine maps using
/// the statistics the trace was computed with. Networks without
/// nonlinearities give the plain gradient under every rule.
pub fn backward<F: Real>(
    net: &NetworkSpec<F>,
    trace: &ForwardTrace<F>,
    stats: &BatchStats<F>,
    target_class: usize,
    rule: BackwardRule,
    baseline: Option<&ForwardTrace<F>>,
) -> Result<Tensor<F>> {
    rule.validate()?;
    if target_class >= net.classes {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} out of range for {} classes",
            net.classes
        )));
    }
    if matches!(rule, BackwardRule::DeepLiftRescale { .. }) && baseline.is_none() {
        return Err(Error::MissingBaseline);
    }
    let layers = net.layers();
    let mut end = layers.len();
    if matches!(layers.last(), Some(Layer::Softmax)) {
        end -= 1;
    }
    let mut grad = Tensor::zeros(&[net.classes]);
    grad.data_mut()[target_class] = F::one();
    for i in (0..end).rev() {
        let input = &trace.activations[i];
        grad = match layers[i].activation() {
            Some(act) => {
                let z0s = baseline.map(|b| b.activations[i].data());
                let mut g = grad;
                for (k, (gv, &z)) in g.data_mut().iter_mut().zip(input.data()).enumerate() {
                    let z0 = z0s.map_or(F::zero(), |b| b[k]);
                    *gv = rule.propagate(act, z, z0, *gv);
                }
                g
            }
            None => {
                let s = net.stats_for(i, stats)?;
                layers[i].backward_linear(input, &grad, s)
            }
        };
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                context: format!("backward signal at {}", net.layer_label(i)),
            });
        }
    }
    grad.reshape(&[net.input_channels, net.input_length])
}

/// Central finite-difference gradient of the target logit, one coordinate at
/// a time. Test oracle; use with `f64`.
pub fn finite_diff_gradient<F: Real>(
    net: &NetworkSpec<F>,
    input: &Tensor<F>,
    stats: &BatchStats<F>,
    target_class: usize,
    h: F,
) -> Result<Tensor<F>> {
    if !(h > F::zero()) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    if target_class >= net.classes {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} out of range"
        )));
    }
    let mut x = input
        .clone()
        .reshape(&[net.input_channels, net.input_length])
        .map_err(|_| {
            Error::shape(
                "input",
                format!(
                    "expected [{}, {}] sample, got {:?}",
                    net.input_channels,
                    net.input_length,
                    input.shape()
                ),
            )
        })?;
    let mut grad = Tensor::zeros(&[net.input_channels, net.input_length]);
    let two_h = h + h;
    for k in 0..x.len() {
        let orig = x.data()[k];
        x.data_mut()[k] = orig + h;
        let up = forward_logits(net, &x, stats)?.data()[target_class];
        x.data_mut()[k] = orig - h;
        let down = forward_logits(net, &x, stats)?.data()[target_class];
        x.data_mut()[k] = orig;
        grad.data_mut()[k] = (up - down) / two_h;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Conv2d, ConvKind, Dense, Padding};

    fn linear_net(w: &[f64]) -> NetworkSpec<f64> {
        let mut d = Dense::new(w.len(), 1, false);
        d.weight.data_mut().copy_from_slice(w);
        NetworkSpec::new("linear", 1, w.len(), 1, vec![Layer::Dense(d), Layer::Softmax]).unwrap()
    }

    #[test]
    fn identity_dense_gives_input_as_logits() {
        let mut d = Dense::new(2, 2, true);
        d.weight.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let net = NetworkSpec::new("id", 1, 2, 2, vec![Layer::Dense(d), Layer::Softmax]).unwrap();
        let x = Tensor::<f64>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let trace = forward(&net, &x, &BatchStats::new()).unwrap();
        assert_eq!(trace.logits.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_logits_give_uniform_probabilities() {
        let d = Dense::new(3, 4, true);
        let net = NetworkSpec::new("z", 1, 3, 4, vec![Layer::Dense(d), Layer::Softmax]).unwrap();
        let x = Tensor::<f64>::full(&[1, 3], 2.0);
        let trace = forward(&net, &x, &BatchStats::new()).unwrap();
        for p in trace.probabilities.data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_gradient_is_weight_vector() {
        let net = linear_net(&[2.0, -1.0]);
        for x in [[0.0, 0.0], [3.0, 4.0], [-7.5, 1e3]] {
            let x = Tensor::new(vec![1, 2], x.to_vec()).unwrap();
            let stats = BatchStats::new();
            let trace = forward(&net, &x, &stats).unwrap();
            let g = backward(&net, &trace, &stats, 0, BackwardRule::Plain, None).unwrap();
            assert_eq!(g.data(), &[2.0, -1.0]);
            let fd = finite_diff_gradient(&net, &x, &stats, 0, 1e-3).unwrap();
            for (a, b) in fd.data().iter().zip([2.0, -1.0]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_model_has_zero_gradient() {
        let mut d = Dense::new(3, 1, true);
        d.bias.as_mut().unwrap().data_mut()[0] = 4.0;
        let net = NetworkSpec::new("c", 1, 3, 1, vec![Layer::Dense(d)]).unwrap();
        let x = Tensor::<f64>::from_fn(&[1, 3], |i| i as f64);
        let fd = finite_diff_gradient(&net, &x, &BatchStats::new(), 0, 1e-3).unwrap();
        assert!(fd.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_blocks_plain_and_guided() {
        for g in [-2.0f64, 0.5, 3.0] {
            assert_eq!(BackwardRule::Plain.propagate(Activation::Relu, -3.0, 0.0, g), 0.0);
            assert_eq!(BackwardRule::Guided.propagate(Activation::Relu, -3.0, 0.0, g), 0.0);
        }
    }

    #[test]
    fn deconv_and_guided_pass_only_nonnegative_signal() {
        for z in [-2.0f64, -0.1, 0.0, 0.3, 4.0] {
            for g in [-1.5f64, -0.2, 0.0, 0.7, 2.0] {
                for act in [Activation::Relu, Activation::Elu(1.0)] {
                    assert!(BackwardRule::Deconv.propagate(act, z, 0.0, g) >= 0.0);
                    assert!(BackwardRule::Guided.propagate(act, z, 0.0, g) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn epsilon_lrp_matches_gradient_on_active_relu() {
        let rule = BackwardRule::EpsilonLrp { epsilon: 1e-9 };
        for z in [1.001e-3f64, 0.01, 1.0, 250.0] {
            for g in [-1.0, 0.3, 1.0] {
                let lrp = rule.propagate(Activation::Relu, z, 0.0, g);
                let plain = BackwardRule::Plain.propagate(Activation::Relu, z, 0.0, g);
                assert!((lrp - plain).abs() < 1e-6);
            }
        }
        // sign(0) = +1 keeps the ratio finite
        assert_eq!(rule.propagate(Activation::Relu, 0.0f64, 0.0, 1.0), 0.0);
    }

    #[test]
    fn deeplift_falls_back_to_midpoint_derivative() {
        let rule = BackwardRule::DeepLiftRescale { near_zero_delta: 1e-6 };
        let act = Activation::Elu(1.0);
        let v = rule.propagate(act, -0.5f64, -0.5 + 1e-8, 1.0);
        assert!((v - (-0.5f64).exp()).abs() < 1e-7);
        let secant = rule.propagate(act, 1.0f64, -1.0, 1.0);
        assert!((secant - (1.0 - ((-1.0f64).exp() - 1.0)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rule_parameters_must_be_positive() {
        assert!(BackwardRule::EpsilonLrp { epsilon: 0.0 }.validate().is_err());
        assert!(BackwardRule::DeepLiftRescale { near_zero_delta: -1.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn deeplift_without_baseline_is_an_error() {
        let net = linear_net(&[1.0, 1.0]);
        let x = Tensor::<f64>::zeros(&[1, 2]);
        let stats = BatchStats::new();
        let trace = forward(&net, &x, &stats).unwrap();
        let rule = BackwardRule::DeepLiftRescale { near_zero_delta: 1e-6 };
        assert!(matches!(
            backward(&net, &trace, &stats, 0, rule, None),
            Err(Error::MissingBaseline)
        ));
    }

    #[test]
    fn rules_on_linear_net_equal_plain() {
        let net = linear_net(&[0.5, -2.0, 1.5]);
        let x = Tensor::<f64>::new(vec![1, 3], vec![1.0, -1.0, 2.0]).unwrap();
        let stats = BatchStats::new();
        let trace = forward(&net, &x, &stats).unwrap();
        let base = forward(&net, &Tensor::zeros(&[1, 3]), &stats).unwrap();
        let plain = backward(&net, &trace, &stats, 0, BackwardRule::Plain, None).unwrap();
        for rule in [
            BackwardRule::Deconv,
            BackwardRule::Guided,
            BackwardRule::EpsilonLrp { epsilon: 1e-4 },
            BackwardRule::DeepLiftRescale { near_zero_delta: 1e-6 },
        ] {
            let g = backward(&net, &trace, &stats, 0, rule, Some(&base)).unwrap();
            assert_eq!(g, plain);
        }
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let conv = Conv2d::<f32>::new(1, 2, (3, 1), 1, (Padding::Valid, Padding::Valid), false)
            .unwrap();
        let err = NetworkSpec::new(
            "bad",
            2,
            10,
            2,
            vec![Layer::Conv {
                kind: ConvKind::Depthwise,
                conv,
            }],
        )
        .unwrap_err();
        assert!(err.to_string().contains("layer 0 (depthwise_conv)"), "{err}");
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let net = linear_net(&[1.0, 1.0]);
        let x = Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            forward(&net, &x, &BatchStats::new()),
            Err(Error::NonFinite { .. })
        ));
    }
}

//! Contribution maps under the seven backpropagation methods, plus the
//! random baseline map.
//!
//! Every method targets the pre-softmax logit of the target class and keeps
//! batch-norm statistics fixed, so a map depends only on its own sample.

use std::fmt;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::models::argmax_lowest;
use crate::network::{backward, forward, BackwardRule, BatchStats, NetworkSpec};
use crate::rng::rng_for;
use crate::tensor::{softmax, Real, Tensor};

pub const DEFAULT_IG_STEPS: usize = 100;
pub const DEFAULT_LRP_EPSILON: f64 = 1e-4;
pub const DEFAULT_DEEPLIFT_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Saliency,
    Deconvolution,
    GuidedBackprop,
    GradTimesInput,
    IntegratedGradients { steps: usize },
    EpsilonLrp { epsilon: f64 },
    DeepLiftRescale { near_zero_delta: f64 },
}

impl Method {
    pub const NAMES: [&'static str; 7] = [
        "saliency",
        "deconvolution",
        "guided_backprop",
        "grad_times_input",
        "integrated_gradients",
        "epsilon_lrp",
        "deeplift_rescale",
    ];

    /// All seven methods with default parameters, in presentation order.
    pub fn all() -> Vec<Method> {
        Self::NAMES
            .iter()
            .map(|n| Method::from_name(n).expect("known name"))
            .collect()
    }

    /// Parse a method name, using default parameters.
    pub fn from_name(name: &str) -> Option<Method> {
        Some(match name {
            "saliency" => Method::Saliency,
            "deconvolution" => Method::Deconvolution,
            "guided_backprop" => Method::GuidedBackprop,
            "grad_times_input" => Method::GradTimesInput,
            "integrated_gradients" => Method::IntegratedGradients {
                steps: DEFAULT_IG_STEPS,
            },
            "epsilon_lrp" => Method::EpsilonLrp {
                epsilon: DEFAULT_LRP_EPSILON,
            },
            "deeplift_rescale" => Method::DeepLiftRescale {
                near_zero_delta: DEFAULT_DEEPLIFT_DELTA,
            },
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::Deconvolution => "deconvolution",
            Method::GuidedBackprop => "guided_backprop",
            Method::GradTimesInput => "grad_times_input",
            Method::IntegratedGradients { .. } => "integrated_gradients",
            Method::EpsilonLrp { .. } => "epsilon_lrp",
            Method::DeepLiftRescale { .. } => "deeplift_rescale",
        }
    }

    /// Display label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            Method::Saliency => "Saliency",
            Method::Deconvolution => "Deconvolution",
            Method::GuidedBackprop => "GuidedBackprop",
            Method::GradTimesInput => "GradTimesInput",
            Method::IntegratedGradients { .. } => "IntegratedGradients",
            Method::EpsilonLrp { .. } => "EpsilonLRP",
            Method::DeepLiftRescale { .. } => "DeepLIFTRescale",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Method::IntegratedGradients { steps: 0 } => Err(Error::InvalidArgument(
                "integrated gradients needs at least one step".into(),
            )),
            Method::EpsilonLrp { epsilon } => BackwardRule::EpsilonLrp { epsilon }.validate(),
            Method::DeepLiftRescale { near_zero_delta } => {
                BackwardRule::DeepLiftRescale { near_zero_delta }.validate()
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A method together with its reference input. The baseline is only used
/// by integrated gradients and DeepLIFT; `None` means all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec<F = f32> {
    pub method: Method,
    pub baseline: Option<Tensor<F>>,
}

impl<F: Real> From<Method> for MethodSpec<F> {
    fn from(method: Method) -> Self {
        MethodSpec {
            method,
            baseline: None,
        }
    }
}

/// Per-point attribution scores for one sample, shape `[N, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMap<F = f32> {
    pub values: Tensor<F>,
    /// Method name, or `"random"` for the baseline map.
    pub method: String,
    pub target_class: usize,
}

/// Temporal mean of a contribution map per electrode, shape `[N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelContributionMap<F = f32> {
    pub values: Tensor<F>,
    pub method: String,
    pub target_class: usize,
}

fn annotate(method: Method, e: Error) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{method}: {context}"),
        },
        other => other,
    }
}

/// Compute a contribution map. `target_class` defaults to the predicted
/// class of `sample`.
pub fn attribute<F: Real>(
    net: &NetworkSpec<F>,
    sample: &Tensor<F>,
    stats: &BatchStats<F>,
    spec: &MethodSpec<F>,
    target_class: Option<usize>,
) -> Result<ContributionMap<F>> {
    let method = spec.method;
    method.validate()?;
    let shape = [net.input_channels, net.input_length];
    let x = sample.clone().reshape(&shape).map_err(|_| {
        Error::shape("input", format!("expected {shape:?} sample, got {:?}", sample.shape()))
    })?;
    let baseline = match &spec.baseline {
        Some(b) => b.clone().reshape(&shape).map_err(|_| {
            Error::shape("baseline", format!("expected {shape:?}, got {:?}", b.shape()))
        })?,
        None => Tensor::zeros(&shape),
    };
    let trace = forward(net, &x, stats).map_err(|e| annotate(method, e))?;
    let target = match target_class {
        Some(c) if c >= net.classes => {
            return Err(Error::InvalidArgument(format!(
                "target class {c} out of range for {} classes",
                net.classes
            )))
        }
        Some(c) => c,
        None => argmax_lowest(trace.probabilities.data()),
    };
    let grad_at = |rule: BackwardRule| {
        backward(net, &trace, stats, target, rule, None).map_err(|e| annotate(method, e))
    };
    let values = match method {
        Method::Saliency => grad_at(BackwardRule::Plain)?.map(|g| g.abs()),
        Method::Deconvolution => grad_at(BackwardRule::Deconv)?,
        Method::GuidedBackprop => grad_at(BackwardRule::Guided)?,
        Method::GradTimesInput => grad_at(BackwardRule::Plain)?.zip_map(&x, |g, v| g * v)?,
        Method::EpsilonLrp { epsilon } => {
            grad_at(BackwardRule::EpsilonLrp { epsilon })?.zip_map(&x, |g, v| g * v)?
        }
        Method::IntegratedGradients { steps } => {
            integrated_gradients(net, &x, &baseline, stats, target, steps)
                .map_err(|e| annotate(method, e))?
        }
        Method::DeepLiftRescale { near_zero_delta } => {
            let base_trace = forward(net, &baseline, stats).map_err(|e| annotate(method, e))?;
            let rule = BackwardRule::DeepLiftRescale { near_zero_delta };
            let m = backward(net, &trace, stats, target, rule, Some(&base_trace))
                .map_err(|e| annotate(method, e))?;
            let delta = x.zip_map(&baseline, |a, b| a - b)?;
            m.zip_map(&delta, |g, d| g * d)?
        }
    };
    if !values.is_finite() {
        return Err(Error::NonFinite {
            context: format!("{method}: contribution map"),
        });
    }
    Ok(ContributionMap {
        values,
        method: method.name().to_string(),
        target_class: target,
    })
}

/// `(x - x0) * mean_k grad(x0 + a_k (x - x0))` with midpoint nodes
/// `a_k = (k - 1/2) / steps`, `k = 1..=steps`.
fn integrated_gradients<F: Real>(
    net: &NetworkSpec<F>,
    x: &Tensor<F>,
    baseline: &Tensor<F>,
    stats: &BatchStats<F>,
    target: usize,
    steps: usize,
) -> Result<Tensor<F>> {
    let delta = x.zip_map(baseline, |a, b| a - b)?;
    let mut acc = vec![0.0f64; x.len()];
    for k in 1..=steps {
        let alpha = F::from_f64_lossy((k as f64 - 0.5) / steps as f64);
        let point = baseline.zip_map(&delta, |b, d| b + alpha * d)?;
        let trace = forward(net, &point, stats)?;
        let g = backward(net, &trace, stats, target, BackwardRule::Plain, None)?;
        for (a, v) in acc.iter_mut().zip(g.data()) {
            *a += v.to_f64_lossy();
        }
    }
    let inv = 1.0 / steps as f64;
    let mut out = delta;
    for (o, a) in out.data_mut().iter_mut().zip(acc) {
        *o = *o * F::from_f64_lossy(a * inv);
    }
    Ok(out)
}

/// Row-wise temporal mean.
pub fn channel_contribution<F: Real>(map: &ContributionMap<F>) -> ChannelContributionMap<F> {
    let t = map.values.shape()[1];
    let values = map
        .values
        .rows()
        .map(|row| {
            let s: f64 = row.iter().map(|v| v.to_f64_lossy()).sum();
            F::from_f64_lossy(s / t as f64)
        })
        .collect();
    ChannelContributionMap {
        values: Tensor::new(vec![map.values.shape()[0]], values).expect("one value per row"),
        method: map.method.clone(),
        target_class: map.target_class,
    }
}

/// I.i.d. standard-normal map from a ChaCha stream keyed by `seed`.
pub fn random_baseline_map<F: Real>(n: usize, t: usize, seed: u64) -> ContributionMap<F> {
    let mut rng = rng_for(&[seed, 0x7261_6e64]);
    let values = Tensor::from_fn(&[n, t], |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        F::from_f64_lossy(v)
    });
    ContributionMap {
        values,
        method: "random".into(),
        target_class: 0,
    }
}

/// Target-class logit and probability for a sample, used by completeness
/// checks and reports.
pub fn logit_of<F: Real>(
    net: &NetworkSpec<F>,
    sample: &Tensor<F>,
    stats: &BatchStats<F>,
    class: usize,
) -> Result<(F, F)> {
    let logits = crate::network::forward_logits(net, sample, stats)?;
    let p = softmax(logits.data());
    Ok((logits.data()[class], p[class]))
}

const MAPS_MAGIC: &str = "EEGINTERP-MAPS";
const MAPS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MapEntry {
    sample_id: usize,
    method: String,
    target_class: usize,
}

#[derive(Serialize, Deserialize)]
struct MapsManifest {
    version: u32,
    n: usize,
    t: usize,
    entries: Vec<MapEntry>,
}

/// Write `(sample id, map)` pairs; all maps must share one shape.
pub fn save_maps(maps: &[(usize, ContributionMap<f32>)], path: &Path) -> Result<()> {
    let (n, t) = match maps.first().map(|(_, m)| m.values.shape()) {
        Some([n, t]) => (*n, *t),
        Some(s) => return Err(Error::InvalidArgument(format!("map shape {s:?} is not [N, T]"))),
        None => (0, 0),
    };
    let mut blob = Vec::with_capacity(maps.len() * n * t);
    let mut entries = Vec::with_capacity(maps.len());
    for (id, m) in maps {
        if m.values.shape() != [n, t] {
            return Err(Error::InvalidArgument(format!(
                "map of sample {id} has shape {:?}, expected [{n}, {t}]",
                m.values.shape()
            )));
        }
        blob.extend_from_slice(m.values.data());
        entries.push(MapEntry {
            sample_id: *id,
            method: m.method.clone(),
            target_class: m.target_class,
        });
    }
    let manifest = MapsManifest {
        version: MAPS_VERSION,
        n,
        t,
        entries,
    };
    let text = serde_json::to_string(&manifest).expect("manifest serializes");
    container::write(path, MAPS_MAGIC, MAPS_VERSION, &text, &blob)
}

pub fn load_maps(path: &Path) -> Result<Vec<(usize, ContributionMap<f32>)>> {
    let (text, blob) = container::read(path, MAPS_MAGIC, MAPS_VERSION)?;
    let m: MapsManifest = container::parse_manifest(&text, path)?;
    let size = m.n * m.t;
    if blob.len() != m.entries.len() * size {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "{} maps of [{}, {}] need {} values, blob has {}",
                m.entries.len(),
                m.n,
                m.t,
                m.entries.len() * size,
                blob.len()
            ),
        });
    }
    Ok(m.entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let values = Tensor::new(vec![m.n, m.t], blob[i * size..(i + 1) * size].to_vec())
                .expect("length checked");
            (
                e.sample_id,
                ContributionMap {
                    values,
                    method: e.method,
                    target_class: e.target_class,
                },
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Dense, Layer};

    fn linear_net() -> NetworkSpec<f64> {
        let mut d = Dense::new(2, 1, false);
        d.weight.data_mut().copy_from_slice(&[2.0, -1.0]);
        NetworkSpec::new("linear", 1, 2, 1, vec![Layer::Dense(d), Layer::Softmax]).unwrap()
    }

    fn map_of(method: Method, x: &[f64]) -> Vec<f64> {
        let net = linear_net();
        let x = Tensor::new(vec![1, 2], x.to_vec()).unwrap();
        attribute(&net, &x, &BatchStats::new(), &method.into(), Some(0))
            .unwrap()
            .values
            .into_data()
    }

    #[test]
    fn linear_closed_forms() {
        assert_eq!(map_of(Method::GradTimesInput, &[3.0, 4.0]), vec![6.0, -4.0]);
        assert_eq!(map_of(Method::Saliency, &[3.0, 4.0]), vec![2.0, 1.0]);
        for steps in [1, 7, 100] {
            let ig = map_of(Method::IntegratedGradients { steps }, &[3.0, 4.0]);
            assert!((ig[0] - 6.0).abs() < 1e-12 && (ig[1] + 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sample_with_zero_baseline_gives_zero_maps() {
        for method in [
            Method::GradTimesInput,
            Method::IntegratedGradients { steps: 10 },
            Method::DeepLiftRescale {
                near_zero_delta: 1e-6,
            },
            Method::EpsilonLrp { epsilon: 1e-4 },
        ] {
            assert!(map_of(method, &[0.0, 0.0]).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ig_on_relu_net_converges_at_first_order() {
        use crate::models::{build_interpretable_cnn_with, compute_batch_stats, init_weights, InterpretableCnnConfig};
        use rand::Rng;
        let cfg = InterpretableCnnConfig {
            pointwise_filters: 4,
            depth_multiplier: 2,
            temporal_kernel: 8,
        };
        let mut net = build_interpretable_cnn_with::<f64>(4, 32, 2, &cfg).unwrap();
        init_weights(&mut net, 8);
        let mut rng = rng_for(&[9]);
        let batch: Vec<Tensor<f64>> = (0..6)
            .map(|_| Tensor::from_fn(&[4, 32], |_| rng.random_range(-1.0..1.0)))
            .collect();
        let stats = compute_batch_stats(&net, &batch).unwrap();
        let x = &batch[0];
        let ig = |steps| {
            attribute(&net, x, &stats, &Method::IntegratedGradients { steps }.into(), Some(0))
                .unwrap()
                .values
        };
        let reference = ig(20_000);
        let rel = |steps: usize| {
            let m = ig(steps);
            let d: f64 = m.data().iter().zip(reference.data()).map(|(a, b)| (a - b).powi(2)).sum();
            let r: f64 = reference.data().iter().map(|b| b * b).sum();
            (d / r).sqrt()
        };
        let (e100, e1000) = (rel(100), rel(1000));
        assert!(e100 < 1e-2, "{e100}");
        assert!(e1000 < e100 / 3.0, "{e100} {e1000}");
    }

    #[test]
    fn zero_ig_steps_is_rejected() {
        let net = linear_net();
        let x = Tensor::zeros(&[1, 2]);
        let spec = Method::IntegratedGradients { steps: 0 }.into();
        assert!(attribute(&net, &x, &BatchStats::new(), &spec, None).is_err());
    }

    #[test]
    fn names_round_trip() {
        for m in Method::all() {
            assert_eq!(Method::from_name(m.name()), Some(m));
        }
        assert_eq!(Method::from_name("occlusion"), None);
    }

    #[test]
    fn channel_map_of_constant_and_alternating_rows() {
        let values = Tensor::new(
            vec![2, 4],
            vec![3.0f32, 3.0, 3.0, 3.0, 1.0, -1.0, 1.0, -1.0],
        )
        .unwrap();
        let map = ContributionMap {
            values,
            method: "x".into(),
            target_class: 1,
        };
        let ch = channel_contribution(&map);
        assert_eq!(ch.values.data(), &[3.0, 0.0]);
        assert_eq!(ch.target_class, 1);
    }

    #[test]
    fn random_map_is_deterministic_per_seed() {
        let a: ContributionMap<f32> = random_baseline_map(3, 50, 9);
        let b: ContributionMap<f32> = random_baseline_map(3, 50, 9);
        let c: ContributionMap<f32> = random_baseline_map(3, 50, 10);
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn random_map_mean_is_near_zero() {
        let m: ContributionMap<f64> = random_baseline_map(1000, 1000, 3);
        let mean = m.values.sum() / 1e6;
        assert!(mean.abs() < 0.01, "{mean}");
    }
    #[test]
    fn map_file_round_trip() {
        let maps: Vec<(usize, ContributionMap<f32>)> = (0..3)
            .map(|i| (i * 7, random_baseline_map(3, 5, i as u64)))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.eegmap");
        save_maps(&maps, &p).unwrap();
        assert_eq!(load_maps(&p).unwrap(), maps);
    }
}

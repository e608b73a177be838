//! Quantitative quality metrics for contribution maps.
//!
//! - Patch sensitivity: zero a contiguous window on one electrode, compare
//!   the summed attribution inside the window with the drop of the target
//!   logit, and report the Pearson correlation over many random windows.
//! - Channel sensitivity: the same with whole electrodes.
//! - Deletion: zero the highest-ranked points cumulatively and track the
//!   predicted-class probability; the mean over the curve is the AUPC.
//!
//! Sensitivity works on logits and deletion on probabilities. Every random
//! choice is keyed by `(seed, fraction index, trial index)`, so results do
//! not depend on execution order.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{ChannelContributionMap, ContributionMap};
use crate::error::{Error, Result};
use crate::models::argmax_lowest;
use crate::network::{forward_logits, forward_probabilities, BatchStats, NetworkSpec};
use crate::rng::rng_for;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_TRIALS: usize = 100;
pub const DELETION_STEPS: usize = 100;

/// Pearson correlation. `Ok(None)` when either series has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "pearson: length mismatch {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson: need at least two points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub fractions: Vec<f64>,
    /// One coefficient per fraction; `None` where a series had no variance.
    pub r: Vec<Option<f64>>,
    pub trials: usize,
    pub seed: u64,
}

fn check_map_shape<F: Real>(net: &NetworkSpec<F>, values: &Tensor<F>) -> Result<()> {
    if values.shape() != [net.input_channels, net.input_length] {
        return Err(Error::InvalidArgument(format!(
            "map shape {:?} does not match sample shape [{}, {}]",
            values.shape(),
            net.input_channels,
            net.input_length
        )));
    }
    Ok(())
}

fn as_matrix<F: Real>(net: &NetworkSpec<F>, sample: &Tensor<F>) -> Result<Tensor<F>> {
    let shape = [net.input_channels, net.input_length];
    sample.clone().reshape(&shape).map_err(|_| {
        Error::shape("input", format!("expected {shape:?} sample, got {:?}", sample.shape()))
    })
}

/// Patch length for a fraction of the sample length.
pub fn patch_length(fraction: f64, t: usize) -> Result<usize> {
    let len = (fraction * t as f64).round();
    if !(len >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "patch fraction {fraction} of length {t} is shorter than one point"
        )));
    }
    if len as usize > t {
        return Err(Error::InvalidArgument(format!(
            "patch fraction {fraction} exceeds the sample length"
        )));
    }
    Ok(len as usize)
}

/// Patch placement for one trial: `(channel, start)`.
pub fn patch_position(seed: u64, fraction_index: usize, trial: usize, n: usize, t: usize, len: usize) -> (usize, usize) {
    let mut rng = rng_for(&[seed, fraction_index as u64, trial as u64]);
    let channel = rng.random_range(0..n);
    let start = rng.random_range(0..=t - len);
    (channel, start)
}

pub fn patch_sensitivity<F: Real>(
    net: &NetworkSpec<F>,
    sample: &Tensor<F>,
    stats: &BatchStats<F>,
    map: &ContributionMap<F>,
    fractions: &[f64],
    trials: usize,
    seed: u64,
) -> Result<SensitivityResult> {
    check_map_shape(net, &map.values)?;
    if trials < 2 {
        return Err(Error::InvalidArgument("sensitivity needs at least two trials".into()));
    }
    let x = as_matrix(net, sample)?;
    let (n, t) = (net.input_channels, net.input_length);
    let logits = forward_logits(net, &x, stats)?;
    let class = argmax_lowest(logits.data());
    let base = logits.data()[class].to_f64_lossy();
    let mut r = Vec::with_capacity(fractions.len());
    for (fi, &f) in fractions.iter().enumerate() {
        let len = patch_length(f, t)?;
        let pairs = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let (ch, start) = patch_position(seed, fi, trial, n, t, len);
                let mut perturbed = x.clone();
                let row = ch * t;
                perturbed.data_mut()[row + start..row + start + len].fill(F::zero());
                let after = forward_logits(net, &perturbed, stats)?.data()[class].to_f64_lossy();
                let s: f64 = map.values.data()[row + start..row + start + len]
                    .iter()
                    .map(|v| v.to_f64_lossy())
                    .sum();
                Ok((s, base - after))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        let (scores, drops): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        r.push(pearson(&scores, &drops)?);
    }
    Ok(SensitivityResult {
        fractions: fractions.to_vec(),
        r,
        trials,
        seed,
    })
}

/// Zero each electrode once and correlate `channel_map[i] * T` with the
/// logit drop.
pub fn channel_sensitivity<F: Real>(
    net: &NetworkSpec<F>,
    sample: &Tensor<F>,
    stats: &BatchStats<F>,
    channel_map: &ChannelContributionMap<F>,
) -> Result<Option<f64>> {
    let (n, t) = (net.input_channels, net.input_length);
    if n < 2 {
        return Err(Error::InvalidArgument(
            "channel sensitivity needs at least two channels".into(),
        ));
    }
    if channel_map.values.len() != n {
        return Err(Error::InvalidArgument(format!(
            "channel map has {} entries for {n} channels",
            channel_map.values.len()
        )));
    }
    let x = as_matrix(net, sample)?;
    let logits = forward_logits(net, &x, stats)?;
    let class = argmax_lowest(logits.data());
    let base = logits.data()[class].to_f64_lossy();
    let drops = (0..n)
        .into_par_iter()
        .map(|ch| {
            let mut perturbed = x.clone();
            perturbed.data_mut()[ch * t..(ch + 1) * t].fill(F::zero());
            Ok(base - forward_logits(net, &perturbed, stats)?.data()[class].to_f64_lossy())
        })
        .collect::<Result<Vec<f64>>>()?;
    let scores: Vec<f64> = channel_map
        .values
        .data()
        .iter()
        .map(|v| v.to_f64_lossy() * t as f64)
        .collect();
    pearson(&scores, &drops)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionCurve {
    /// Predicted-class probability after each deletion step.
    pub probabilities: Vec<f64>,
    /// Mean of `probabilities`.
    pub aupc: f64,
}

impl DeletionCurve {
    fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let aupc = probabilities.iter().sum::<f64>() / probabilities.len().max(1) as f64;
        DeletionCurve { probabilities, aupc }
    }
}

/// Flat indices sorted by descending score; ties keep (channel, time) order.
pub fn deletion_order<F: Real>(values: &[F]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Number of points removed at step `n` (1..=100) out of `total`.
pub fn deletion_count(step: usize, total: usize) -> usize {
    (step * total + DELETION_STEPS / 2) / DELETION_STEPS
}

pub fn deletion_curve<F: Real>(
    net: &NetworkSpec<F>,
    sample: &Tensor<F>,
    stats: &BatchStats<F>,
    map: &ContributionMap<F>,
) -> Result<DeletionCurve> {
    check_map_shape(net, &map.values)?;
    let x = as_matrix(net, sample)?;
    let probs = forward_probabilities(net, &x, stats)?;
    let class = argmax_lowest(&probs);
    let order = deletion_order(map.values.data());
    let total = order.len();
    let counts: Vec<usize> = (1..=DELETION_STEPS).map(|s| deletion_count(s, total)).collect();
    let probabilities = counts
        .par_iter()
        .map(|&count| {
            let mut deleted = x.clone();
            for &i in &order[..count] {
                deleted.data_mut()[i] = F::zero();
            }
            Ok(forward_probabilities(net, &deleted, stats)?[class].to_f64_lossy())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DeletionCurve::from_probabilities(probabilities))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelDeletionMode {
    /// Channels removed one after another, deletions accumulate.
    #[default]
    Cumulative,
    /// Each step removes only the channel of that rank.
    Independent,
}

pub fn channel_deletion_curve<F: Real>(
    net: &NetworkSpec<F>,
    sample: &Tensor<F>,
    stats: &BatchStats<F>,
    channel_map: &ChannelContributionMap<F>,
    mode: ChannelDeletionMode,
) -> Result<DeletionCurve> {
    let (n, t) = (net.input_channels, net.input_length);
    if channel_map.values.len() != n {
        return Err(Error::InvalidArgument(format!(
            "channel map has {} entries for {n} channels",
            channel_map.values.len()
        )));
    }
    let x = as_matrix(net, sample)?;
    let probs = forward_probabilities(net, &x, stats)?;
    let class = argmax_lowest(&probs);
    let order = deletion_order(channel_map.values.data());
    let probabilities = (0..n)
        .into_par_iter()
        .map(|step| {
            let mut deleted = x.clone();
            let removed: &[usize] = match mode {
                ChannelDeletionMode::Cumulative => &order[..=step],
                ChannelDeletionMode::Independent => &order[step..=step],
            };
            for &ch in removed {
                deleted.data_mut()[ch * t..(ch + 1) * t].fill(F::zero());
            }
            Ok(forward_probabilities(net, &deleted, stats)?[class].to_f64_lossy())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DeletionCurve::from_probabilities(probabilities))
}

/// Metric settings shared by every sample of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub channel_deletion: ChannelDeletionMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            trials: DEFAULT_TRIALS,
            seed: 0,
            channel_deletion: ChannelDeletionMode::Cumulative,
        }
    }
}

/// One exported line: every metric of one map of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub method: String,
    pub fractions: Vec<f64>,
    pub sensitivity_r: Vec<Option<f64>>,
    pub channel_r: Option<f64>,
    pub aupc: f64,
    pub curve: Vec<f64>,
    pub channel_aupc: f64,
    pub channel_curve: Vec<f64>,
}

/// All metrics for one (sample, map) pair.
pub fn evaluate_map<F: Real>(
    net: &NetworkSpec<F>,
    sample: &Tensor<F>,
    stats: &BatchStats<F>,
    map: &ContributionMap<F>,
    sample_id: usize,
    cfg: &EvalConfig,
) -> Result<SampleRecord> {
    let channel = crate::attribution::channel_contribution(map);
    let sens = patch_sensitivity(net, sample, stats, map, &cfg.fractions, cfg.trials, cfg.seed)?;
    let channel_r = if net.input_channels >= 2 {
        channel_sensitivity(net, sample, stats, &channel)?
    } else {
        None
    };
    let del = deletion_curve(net, sample, stats, map)?;
    let ch_del = channel_deletion_curve(net, sample, stats, &channel, cfg.channel_deletion)?;
    Ok(SampleRecord {
        sample_id,
        method: map.method.clone(),
        fractions: sens.fractions,
        sensitivity_r: sens.r,
        channel_r,
        aupc: del.aupc,
        curve: del.probabilities,
        channel_aupc: ch_del.aupc,
        channel_curve: ch_del.probabilities,
    })
}

/// Five-number summary plus mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    /// Entries excluded because they were undefined.
    pub undefined: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl Stats {
    /// Summarise, skipping undefined entries. Errors when nothing is left.
    pub fn from_optional(values: &[Option<f64>]) -> Result<Stats> {
        let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
        let undefined = values.len() - defined.len();
        if defined.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cannot summarise: all {} entries undefined",
                values.len()
            )));
        }
        defined.sort_by(f64::total_cmp);
        Ok(Stats {
            count: defined.len(),
            undefined,
            min: defined[0],
            q1: quantile_sorted(&defined, 0.25),
            median: quantile_sorted(&defined, 0.5),
            q3: quantile_sorted(&defined, 0.75),
            max: defined[defined.len() - 1],
            mean: defined.iter().sum::<f64>() / defined.len() as f64,
        })
    }

    pub fn from_values(values: &[f64]) -> Result<Stats> {
        let opt: Vec<Option<f64>> = values.iter().map(|&v| Some(v)).collect();
        Self::from_optional(&opt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// One summary per fraction.
    pub sensitivity_r: Vec<Stats>,
    /// Per-sample mean r over fractions.
    pub sensitivity_r_mean: Stats,
    /// `None` when every channel r was undefined.
    pub channel_r: Option<Stats>,
    pub aupc: Stats,
    pub channel_aupc: Stats,
    /// Pointwise mean of the deletion curves.
    pub mean_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub fractions: Vec<f64>,
    pub methods: Vec<MethodSummary>,
}

impl EvalSummary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Group records by method (first-appearance order) and summarise.
pub fn aggregate(records: &[SampleRecord]) -> Result<EvalSummary> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("no records to aggregate".into()))?;
    let fractions = first.fractions.clone();
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.method.as_str()) {
            names.push(&r.method);
        }
        if r.fractions != fractions {
            return Err(Error::InvalidArgument(
                "records use different sensitivity fractions".into(),
            ));
        }
    }
    let mut methods = Vec::new();
    for name in names {
        let group: Vec<&SampleRecord> = records.iter().filter(|r| r.method == name).collect();
        let sensitivity_r = (0..fractions.len())
            .map(|fi| {
                let v: Vec<Option<f64>> = group.iter().map(|r| r.sensitivity_r[fi]).collect();
                Stats::from_optional(&v)
            })
            .collect::<Result<Vec<_>>>()?;
        let per_sample_mean: Vec<Option<f64>> = group
            .iter()
            .map(|r| {
                let d: Vec<f64> = r.sensitivity_r.iter().flatten().copied().collect();
                (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
            })
            .collect();
        let channel: Vec<Option<f64>> = group.iter().map(|r| r.channel_r).collect();
        let aupc: Vec<f64> = group.iter().map(|r| r.aupc).collect();
        let ch_aupc: Vec<f64> = group.iter().map(|r| r.channel_aupc).collect();
        let curve_len = group[0].curve.len();
        let mean_curve = (0..curve_len)
            .map(|k| group.iter().map(|r| r.curve[k]).sum::<f64>() / group.len() as f64)
            .collect();
        methods.push(MethodSummary {
            method: name.to_string(),
            sensitivity_r,
            sensitivity_r_mean: Stats::from_optional(&per_sample_mean)?,
            channel_r: Stats::from_optional(&channel).ok(),
            aupc: Stats::from_values(&aupc)?,
            channel_aupc: Stats::from_values(&ch_aupc)?,
            mean_curve,
        });
    }
    Ok(EvalSummary { fractions, methods })
}

/// Plain-text table of medians and means, one row per method.
pub fn summary_table(summary: &EvalSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<22}", "method"));
    for f in &summary.fractions {
        out.push_str(&format!(" {:>9}", format!("r@{f:.1}")));
    }
    out.push_str(&format!(
        " {:>9} {:>9} {:>9} {:>9}\n",
        "r_chan", "aupc", "aupc_ch", "n"
    ));
    for m in &summary.methods {
        out.push_str(&format!("{:<22}", m.method));
        for s in &m.sensitivity_r {
            out.push_str(&format!(" {:>9.4}", s.median));
        }
        let ch = m
            .channel_r
            .map_or("undef".to_string(), |s| format!("{:.4}", s.median));
        out.push_str(&format!(
            " {:>9} {:>9.4} {:>9.4} {:>9}\n",
            ch, m.aupc.mean, m.channel_aupc.mean, m.aupc.count
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Dense, Layer};

    #[test]
    fn pearson_worked_examples() {
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let r = pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().unwrap();
        assert!((r + 1.0).abs() < 1e-15);
        // sxy = 4, sxx = syy = 5 -> r = 0.8
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap();
        assert!((r - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pearson_edge_cases() {
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
    }

    #[test]
    fn deletion_count_reaches_everything() {
        assert_eq!(deletion_count(100, 5588), 5588);
        assert_eq!(deletion_count(1, 5588), 56);
        assert_eq!(deletion_count(50, 3), 2);
    }

    #[test]
    fn constant_map_deletes_in_lexicographic_order() {
        assert_eq!(deletion_order(&[2.0f32; 6]), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(deletion_order(&[0.0f32, 3.0, 1.0, 3.0]), vec![1, 3, 2, 0]);
    }

    #[test]
    fn patch_length_rules() {
        assert_eq!(patch_length(0.1, 384).unwrap(), 38);
        assert_eq!(patch_length(0.5, 254).unwrap(), 127);
        assert!(patch_length(0.01, 10).is_err());
        assert!(patch_length(1.5, 10).is_err());
    }

    #[test]
    fn quantiles_of_small_sets() {
        let s = Stats::from_values(&[0.3]).unwrap();
        assert!(s.min == s.q1 && s.q1 == s.median && s.median == s.q3 && s.q3 == s.max);
        let s = Stats::from_values(&[0.0, 1.0]).unwrap();
        assert_eq!(s.median, 0.5);
        let s = Stats::from_optional(&[Some(1.0), None, Some(3.0)]).unwrap();
        assert_eq!((s.count, s.undefined, s.median), (2, 1, 2.0));
        assert!(Stats::from_optional(&[None, None]).is_err());
    }

    fn two_channel_linear() -> NetworkSpec<f64> {
        // logit = sum_i w_i * sum_t x[i, t]
        let mut d = Dense::new(8, 2, false);
        let w = [1.0, 1.0, 1.0, 1.0, -2.0, -2.0, -2.0, -2.0];
        d.weight.data_mut()[..8].copy_from_slice(&w);
        NetworkSpec::new("lin", 2, 4, 2, vec![Layer::Dense(d), Layer::Softmax]).unwrap()
    }

    #[test]
    fn channel_deletion_with_single_channel_network() {
        let d = Dense::new(5, 2, true);
        let net = NetworkSpec::<f64>::new("one", 1, 5, 2, vec![Layer::Dense(d)]).unwrap();
        let stats = BatchStats::new();
        let x = Tensor::from_fn(&[1, 5], |i| i as f64);
        let ch = ChannelContributionMap {
            values: Tensor::full(&[1], 1.0),
            method: "m".into(),
            target_class: 0,
        };
        let curve = channel_deletion_curve(&net, &x, &stats, &ch, ChannelDeletionMode::Cumulative)
            .unwrap();
        let zero = forward_probabilities(&net, &Tensor::zeros(&[1, 5]), &stats).unwrap();
        assert_eq!(curve.probabilities, vec![zero[0]]);
    }

    #[test]
    fn uniform_channel_map_deletes_in_index_order() {
        assert_eq!(deletion_order(&[0.5f64; 4]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn constant_channel_map_has_undefined_r() {
        let net = two_channel_linear();
        let x = Tensor::from_fn(&[2, 4], |i| i as f64 - 3.0);
        let ch = ChannelContributionMap {
            values: Tensor::full(&[2], 1.0),
            method: "c".into(),
            target_class: 0,
        };
        assert_eq!(channel_sensitivity(&net, &x, &BatchStats::new(), &ch).unwrap(), None);
    }

    #[test]
    fn independent_and_cumulative_channel_deletion_share_first_step() {
        let net = two_channel_linear();
        let stats = BatchStats::new();
        let x = Tensor::from_fn(&[2, 4], |i| (i as f64 * 0.7).sin());
        let ch = ChannelContributionMap {
            values: Tensor::new(vec![2], vec![0.1, 0.9]).unwrap(),
            method: "c".into(),
            target_class: 0,
        };
        let a = channel_deletion_curve(&net, &x, &stats, &ch, ChannelDeletionMode::Cumulative).unwrap();
        let b = channel_deletion_curve(&net, &x, &stats, &ch, ChannelDeletionMode::Independent).unwrap();
        assert_eq!(a.probabilities[0], b.probabilities[0]);
        assert_ne!(a.probabilities[1], b.probabilities[1]);
    }
}

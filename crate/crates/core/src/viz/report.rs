//! Per-sample text report: a header and four lines.
//!
//! 1. model, method, smoothing window, thresholds
//! 2. patch sensitivity r per fraction and channel r, computed on the raw
//!    contribution map
//! 3. probability after zeroing the highlighted points, the portion of the
//!    sample removed, and the three electrodes that lost the most points
//! 4. probability after zeroing the highlighted electrodes

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, ProcessedMaps};
use crate::attribution::{channel_contribution, ContributionMap, Method};
use crate::error::{Error, Result};
use crate::evaluation::{channel_sensitivity, patch_sensitivity, EvalConfig};
use crate::network::{forward_probabilities, BatchStats, NetworkSpec};
use crate::tensor::{Real, Tensor};

/// Identification printed in the header.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportContext<'a> {
    pub sample_id: String,
    pub subject: Option<u32>,
    pub true_label: Option<usize>,
    pub model: &'a str,
    pub channel_names: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDeletion {
    pub probability: f64,
    /// Deleted points over all points.
    pub portion: f64,
    /// Up to three `(electrode, deleted points / T)` pairs, most first.
    pub top_channels: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub sample_id: String,
    pub subject: Option<u32>,
    pub true_label: Option<usize>,
    pub probabilities: Vec<f64>,
    pub target_class: usize,
    pub model: String,
    pub method: String,
    pub pipeline: PipelineConfig,
    pub fractions: Vec<f64>,
    pub sensitivity_r: Vec<Option<f64>>,
    pub channel_r: Option<f64>,
    pub point_deletion: PointDeletion,
    pub channel_deletion_probability: f64,
    pub deleted_channels: Vec<String>,
}

fn fmt_r(r: Option<f64>) -> String {
    r.map_or_else(|| "undef".to_string(), |v| format!("{v:.3}"))
}

impl Report {
    /// Sample line: id, subject, true label, prediction and probabilities.
    pub fn header(&self) -> String {
        let mut s = format!("sample {}", self.sample_id);
        if let Some(subj) = self.subject {
            let _ = write!(s, " | subject {subj}");
        }
        if let Some(l) = self.true_label {
            let _ = write!(s, " | true label {l}");
        }
        let probs: Vec<String> = self.probabilities.iter().map(|p| format!("{p:.3}")).collect();
        let _ = write!(s, " | predicted {} | probabilities {}", self.target_class, probs.join(" "));
        s
    }

    /// Four lines: settings, sensitivity, point deletion, channel deletion.
    pub fn to_text(&self) -> String {
        let p0 = self.probabilities[self.target_class];
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} | {} | window {} | thresholds {} (sample) {} (channel)",
            self.model,
            self.method,
            self.pipeline.smoothing_window,
            self.pipeline.sample_threshold,
            self.pipeline.channel_threshold
        );
        let rs: Vec<String> = self
            .fractions
            .iter()
            .zip(&self.sensitivity_r)
            .map(|(f, r)| format!("{f}:{}", fmt_r(*r)))
            .collect();
        let _ = writeln!(s, "sensitivity r {} | channel r {}", rs.join(" "), fmt_r(self.channel_r));
        let tops: Vec<String> = self
            .point_deletion
            .top_channels
            .iter()
            .map(|(n, p)| format!("{n} {p:.3}"))
            .collect();
        let _ = writeln!(
            s,
            "delete highlighted points: p {p0:.3} -> {:.3} | portion {:.3} | top channels {}",
            self.point_deletion.probability,
            self.point_deletion.portion,
            if tops.is_empty() { "none".to_string() } else { tops.join(", ") }
        );
        let _ = writeln!(
            s,
            "delete highlighted channels: p {p0:.3} -> {:.3} | channels {}",
            self.channel_deletion_probability,
            if self.deleted_channels.is_empty() {
                "none".to_string()
            } else {
                self.deleted_channels.join(", ")
            }
        );
        s
    }
}

/// Build the report. Sensitivity runs on `map` as computed; deletion uses
/// the highlight mask and channel set of `processed`.
#[allow(clippy::too_many_arguments)]
pub fn generate_report<F: Real>(
    net: &NetworkSpec<F>,
    stats: &BatchStats<F>,
    sample: &Tensor<F>,
    map: &ContributionMap<F>,
    processed: &ProcessedMaps,
    pipeline: &PipelineConfig,
    eval: &EvalConfig,
    ctx: &ReportContext<'_>,
) -> Result<Report> {
    let (n, t) = (net.input_channels, net.input_length);
    if processed.mask.len() != n * t || ctx.channel_names.len() != n {
        return Err(Error::InvalidArgument(format!(
            "report inputs disagree with the network's [{n}, {t}] input"
        )));
    }
    let x = sample.clone().reshape(&[n, t])?;
    let class = map.target_class;
    let probabilities: Vec<f64> = forward_probabilities(net, &x, stats)?
        .iter()
        .map(|p| p.to_f64_lossy())
        .collect();
    if class >= probabilities.len() {
        return Err(Error::InvalidArgument(format!(
            "target class {class} out of range"
        )));
    }
    let sens = patch_sensitivity(net, &x, stats, map, &eval.fractions, eval.trials, eval.seed)?;
    let channel_r = if n >= 2 {
        channel_sensitivity(net, &x, stats, &channel_contribution(map))?
    } else {
        None
    };

    let mut deleted = x.clone();
    let mut per_channel = vec![0usize; n];
    for (i, &m) in processed.mask.iter().enumerate() {
        if m {
            deleted.data_mut()[i] = F::zero();
            per_channel[i / t] += 1;
        }
    }
    let point_p = forward_probabilities(net, &deleted, stats)?[class].to_f64_lossy();
    let mut ranked: Vec<usize> = (0..n).filter(|&c| per_channel[c] > 0).collect();
    ranked.sort_by(|&a, &b| per_channel[b].cmp(&per_channel[a]).then(a.cmp(&b)));
    let top_channels = ranked
        .iter()
        .take(3)
        .map(|&c| (ctx.channel_names[c].clone(), per_channel[c] as f64 / t as f64))
        .collect();
    let total: usize = per_channel.iter().sum();

    let mut without = x.clone();
    for &c in &processed.highlighted_channels {
        without.data_mut()[c * t..(c + 1) * t].fill(F::zero());
    }
    let channel_p = forward_probabilities(net, &without, stats)?[class].to_f64_lossy();

    Ok(Report {
        sample_id: ctx.sample_id.clone(),
        subject: ctx.subject,
        true_label: ctx.true_label,
        probabilities,
        target_class: class,
        model: ctx.model.to_string(),
        method: Method::from_name(&map.method)
            .map_or_else(|| map.method.clone(), |m| m.label().to_string()),
        pipeline: pipeline.clone(),
        fractions: sens.fractions,
        sensitivity_r: sens.r,
        channel_r,
        point_deletion: PointDeletion {
            probability: point_p,
            portion: total as f64 / (n * t) as f64,
            top_channels,
        },
        channel_deletion_probability: channel_p,
        deleted_channels: processed
            .highlighted_channels
            .iter()
            .map(|&c| ctx.channel_names[c].clone())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{attribute, MethodSpec};
    use crate::models::{build_interpretable_cnn_with, init_weights, InterpretableCnnConfig};
    use crate::rng::rng_for;
    use crate::viz::process;
    use rand::Rng;

    fn setup() -> (NetworkSpec<f32>, BatchStats<f32>, Tensor<f32>, Vec<String>) {
        let cfg = InterpretableCnnConfig {
            pointwise_filters: 4,
            depth_multiplier: 2,
            temporal_kernel: 8,
        };
        let mut net = build_interpretable_cnn_with::<f32>(4, 32, 2, &cfg).unwrap();
        init_weights(&mut net, 21);
        let mut rng = rng_for(&[77]);
        let batch: Vec<Tensor<f32>> = (0..8)
            .map(|_| Tensor::from_fn(&[4, 32], |_| rng.random_range(-1.0..1.0)))
            .collect();
        let stats = crate::models::compute_batch_stats(&net, &batch).unwrap();
        let names = vec!["FZ".into(), "CZ".into(), "PZ".into(), "OZ".into()];
        (net, stats, batch[0].clone(), names)
    }

    fn eval() -> EvalConfig {
        EvalConfig {
            fractions: vec![0.1, 0.3],
            trials: 20,
            seed: 5,
            ..EvalConfig::default()
        }
    }

    fn ctx(names: &[String]) -> ReportContext<'_> {
        ReportContext {
            sample_id: "0".into(),
            subject: Some(2),
            true_label: Some(1),
            model: "interpretable_cnn",
            channel_names: names,
        }
    }

    #[test]
    fn golden_report() {
        let (net, stats, x, names) = setup();
        let map = attribute(&net, &x, &stats, &MethodSpec::from(Method::GradTimesInput), None).unwrap();
        let pipe = PipelineConfig {
            sample_threshold: 1.0,
            channel_threshold: 0.5,
            smoothing_window: 5,
        };
        let processed = process(&map, &channel_contribution(&map), &pipe).unwrap();
        let r = generate_report(&net, &stats, &x, &map, &processed, &pipe, &eval(), &ctx(&names)).unwrap();
        let text = r.to_text();
        assert_eq!(text.lines().count(), 4);
        assert!(r.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!((0.0..=1.0).contains(&r.point_deletion.portion));
        assert_eq!(
            r.point_deletion.portion,
            processed.highlighted_points() as f64 / 128.0
        );
        let golden = include_str!("../../tests/golden/report.txt");
        assert_eq!(text, golden, "report drifted:\n{text}");
    }

    #[test]
    fn empty_highlights_leave_probability_unchanged() {
        let (net, stats, x, names) = setup();
        let map = attribute(&net, &x, &stats, &MethodSpec::from(Method::Saliency), None).unwrap();
        let pipe = PipelineConfig {
            sample_threshold: 1e9,
            channel_threshold: 1e9,
            smoothing_window: 5,
        };
        let processed = process(&map, &channel_contribution(&map), &pipe).unwrap();
        let r = generate_report(&net, &stats, &x, &map, &processed, &pipe, &eval(), &ctx(&names)).unwrap();
        assert_eq!(r.point_deletion.portion, 0.0);
        assert_eq!(r.point_deletion.probability, r.probabilities[r.target_class]);
        assert_eq!(r.channel_deletion_probability, r.probabilities[r.target_class]);
        assert!(r.point_deletion.top_channels.is_empty());
        assert!(r.to_text().contains("top channels none"));
    }

    #[test]
    fn report_is_deterministic() {
        let (net, stats, x, names) = setup();
        let map = attribute(&net, &x, &stats, &MethodSpec::from(Method::EpsilonLrp { epsilon: 1e-4 }), None).unwrap();
        let pipe = PipelineConfig::default();
        let processed = process(&map, &channel_contribution(&map), &pipe).unwrap();
        let a = generate_report(&net, &stats, &x, &map, &processed, &pipe, &eval(), &ctx(&names)).unwrap();
        let b = generate_report(&net, &stats, &x, &map, &processed, &pipe, &eval(), &ctx(&names)).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }
}

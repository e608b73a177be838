//! Post-processing of contribution maps for display:
//!
//! 1. normalise to zero mean and unit (population) standard deviation,
//! 2. subtract a threshold and clip at the colormap floor of -1,
//! 3. smooth each electrode with a centred moving average.
//!
//! The channel map gets steps 1 and 2 only. A point or channel counts as
//! highlighted when its final value is positive.

mod report;
mod svg;

use serde::{Deserialize, Serialize};

use crate::attribution::{ChannelContributionMap, ContributionMap};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use report::{generate_report, PointDeletion, Report, ReportContext};
pub use svg::{colormap, colormap_hex, idw, render_sample_view, render_topomap, topomap_grid, TOPOMAP_GRID};

pub const COLOR_FLOOR: f64 = -1.0;
pub const COLOR_CEILING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_threshold: f64,
    pub channel_threshold: f64,
    /// Odd, at least 1 and at most the sample length.
    pub smoothing_window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_threshold: 2.0,
            channel_threshold: 1.0,
            smoothing_window: 5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, t: usize) -> Result<()> {
        check_window(self.smoothing_window, t)?;
        if self.sample_threshold.is_nan() || self.channel_threshold.is_nan() {
            return Err(Error::InvalidArgument("thresholds must not be NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// Set when the input had zero variance; `values` is then all zeros.
    pub zero_variance: bool,
}

pub fn normalize(values: &[f64]) -> Normalized {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Normalized {
            values: vec![0.0; values.len()],
            zero_variance: true,
        };
    }
    Normalized {
        values: values.iter().map(|v| (v - mean) / sd).collect(),
        zero_variance: false,
    }
}

/// `max(v - t, -1)` elementwise.
pub fn apply_threshold(values: &[f64], t: f64) -> Vec<f64> {
    values.iter().map(|v| (v - t).max(COLOR_FLOOR)).collect()
}

fn check_window(window: usize, t: usize) -> Result<()> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "smoothing window must be a positive odd number, got {window}"
        )));
    }
    if window > t {
        return Err(Error::InvalidArgument(format!(
            "smoothing window {window} exceeds the sample length {t}"
        )));
    }
    Ok(())
}

/// Centred moving average of one series; near the edges the window only
/// covers the points that exist.
pub fn smooth_series(values: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(window, values.len())?;
    let half = window / 2;
    Ok((0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}

/// Smooth every row of an `[N, T]` map along time.
pub fn smooth(map: &Tensor<f64>, window: usize) -> Result<Tensor<f64>> {
    let [n, t] = match map.shape() {
        [n, t] => [*n, *t],
        s => {
            return Err(Error::InvalidArgument(format!(
                "smooth expects an [N, T] map, got {s:?}"
            )))
        }
    };
    let mut data = Vec::with_capacity(n * t);
    for row in map.rows() {
        data.extend(smooth_series(row, window)?);
    }
    Tensor::new(vec![n, t], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedMaps {
    /// `[N, T]`, every value at least -1.
    pub sample: Tensor<f64>,
    pub channel: Vec<f64>,
    /// Row-major `[N, T]` mask of highlighted points.
    pub mask: Vec<bool>,
    pub highlighted_channels: Vec<usize>,
    pub warnings: Vec<String>,
}

impl ProcessedMaps {
    pub fn highlighted_points(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn process<F: Real>(
    sample_map: &ContributionMap<F>,
    channel_map: &ChannelContributionMap<F>,
    cfg: &PipelineConfig,
) -> Result<ProcessedMaps> {
    let [n, t] = match sample_map.values.shape() {
        [n, t] => [*n, *t],
        s => {
            return Err(Error::InvalidArgument(format!(
                "contribution map must be [N, T], got {s:?}"
            )))
        }
    };
    if channel_map.values.len() != n {
        return Err(Error::InvalidArgument(format!(
            "channel map has {} entries, sample map has {n} channels",
            channel_map.values.len()
        )));
    }
    cfg.validate(t)?;
    let mut warnings = Vec::new();
    let norm = normalize(&sample_map.values.to_f64_vec());
    if norm.zero_variance {
        warnings.push("sample contribution map has zero variance; normalised to zeros".into());
    }
    let thresholded = Tensor::new(vec![n, t], apply_threshold(&norm.values, cfg.sample_threshold))?;
    let sample = smooth(&thresholded, cfg.smoothing_window)?;
    let cnorm = normalize(&channel_map.values.to_f64_vec());
    if cnorm.zero_variance {
        warnings.push("channel contribution map has zero variance; normalised to zeros".into());
    }
    let channel = apply_threshold(&cnorm.values, cfg.channel_threshold);
    let mask = sample.data().iter().map(|&v| v > 0.0).collect();
    let highlighted_channels = (0..n).filter(|&i| channel[i] > 0.0).collect();
    Ok(ProcessedMaps {
        sample,
        channel,
        mask,
        highlighted_channels,
        warnings,
    })
}

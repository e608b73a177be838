//! Run configuration file (TOML). Every field is optional; command-line
//! flags take precedence.
//!
//! ```toml
//! model = "interpretable_cnn"
//! methods = ["grad_times_input", "integrated_gradients"]
//!
//! [method]
//! ig_steps = 100
//! lrp_epsilon = 1e-4
//! deeplift_delta = 1e-6
//!
//! [pipeline]
//! sample_threshold = 2.0
//! channel_threshold = 1.0
//! smoothing_window = 5
//!
//! [metrics]
//! fractions = [0.1, 0.2, 0.3, 0.4, 0.5]
//! trials = 100
//!
//! [paths]
//! dataset = "data.eegds"
//! weights = "model.eegw"
//! layout = "layout.txt"
//! output_dir = "out"
//! ```

use std::path::{Path, PathBuf};

use eeginterp::attribution::{Method, DEFAULT_DEEPLIFT_DELTA, DEFAULT_IG_STEPS, DEFAULT_LRP_EPSILON};
use eeginterp::evaluation::{ChannelDeletionMode, DEFAULT_FRACTIONS, DEFAULT_TRIALS};
use eeginterp::models::{EEGNET, INTERPRETABLE_CNN};
use eeginterp::train::TrainConfig;
use eeginterp::viz::PipelineConfig;
use serde::Deserialize;

use crate::CliError;

pub const MODELS: [&str; 2] = [EEGNET, INTERPRETABLE_CNN];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodParams {
    pub ig_steps: usize,
    pub lrp_epsilon: f64,
    pub deeplift_delta: f64,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            ig_steps: DEFAULT_IG_STEPS,
            lrp_epsilon: DEFAULT_LRP_EPSILON,
            deeplift_delta: DEFAULT_DEEPLIFT_DELTA,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub fractions: Vec<f64>,
    pub trials: usize,
    pub channel_deletion: ChannelDeletionMode,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            trials: DEFAULT_TRIALS,
            channel_deletion: ChannelDeletionMode::Cumulative,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    pub methods: Option<Vec<String>>,
    pub method: MethodParamsFile,
    pub pipeline: PipelineConfig,
    pub metrics: MetricParams,
    pub train: TrainConfig,
    pub paths: Paths,
}

/// `[method]` table with every key optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParamsFile {
    pub ig_steps: Option<usize>,
    pub lrp_epsilon: Option<f64>,
    pub deeplift_delta: Option<f64>,
}

impl MethodParamsFile {
    pub fn resolve(&self) -> MethodParams {
        let d = MethodParams::default();
        MethodParams {
            ig_steps: self.ig_steps.unwrap_or(d.ig_steps),
            lrp_epsilon: self.lrp_epsilon.unwrap_or(d.lrp_epsilon),
            deeplift_delta: self.deeplift_delta.unwrap_or(d.deeplift_delta),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.dataset,
            &mut cfg.paths.weights,
            &mut cfg.paths.layout,
            &mut cfg.paths.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Resolve method names against the closed set.
pub fn parse_methods(names: &[String], params: &MethodParams) -> Result<Vec<Method>, CliError> {
    names
        .iter()
        .map(|name| {
            let m = match Method::from_name(name.trim()) {
                Some(Method::IntegratedGradients { .. }) => Method::IntegratedGradients {
                    steps: params.ig_steps,
                },
                Some(Method::EpsilonLrp { .. }) => Method::EpsilonLrp {
                    epsilon: params.lrp_epsilon,
                },
                Some(Method::DeepLiftRescale { .. }) => Method::DeepLiftRescale {
                    near_zero_delta: params.deeplift_delta,
                },
                Some(m) => m,
                None => {
                    return Err(CliError::Usage(format!(
                        "unknown method {name:?}; expected one of: {}",
                        Method::NAMES.join(", ")
                    )))
                }
            };
            m.validate()
                .map_err(|e| CliError::Usage(format!("method {name}: {e}")))?;
            Ok(m)
        })
        .collect()
}

pub fn check_model(name: &str) -> Result<(), CliError> {
    if MODELS.contains(&name) {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "unknown model {name:?}; expected one of: {}",
            MODELS.join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_config_parses_with_shipped_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("demo/demo.toml");
        let cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.pipeline.smoothing_window, 5);
        assert_eq!(cfg.pipeline.sample_threshold, 2.0);
        assert_eq!(cfg.pipeline.channel_threshold, 1.0);
        assert_eq!(cfg.model.as_deref(), Some("interpretable_cnn"));
        let methods = parse_methods(cfg.methods.as_ref().unwrap(), &cfg.method.resolve()).unwrap();
        assert!(!methods.is_empty());
    }

    #[test]
    fn unknown_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[pipeline]\nsmoothing_windw = 3\n").unwrap();
        let err = RunConfig::load(Some(&p)).unwrap_err();
        assert!(matches!(&err, CliError::Data(m) if m.contains("smoothing_windw")));
    }

    #[test]
    fn unknown_method_lists_closed_set() {
        let err = parse_methods(&["gradcam".into()], &MethodParams::default()).unwrap_err();
        match err {
            CliError::Usage(m) => assert!(m.contains("deeplift_rescale") && m.contains("saliency")),
            other => panic!("{other:?}"),
        }
    }
}

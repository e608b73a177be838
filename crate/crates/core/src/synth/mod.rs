//! Synthetic EEG-like data: pink background noise with class-specific
//! feature archetypes injected on chosen electrodes.
//!
//! Features:
//!
//! - `alpha_spindle`: Hann-windowed carrier in the alpha band (waxing and
//!   waning alpha rhythm).
//! - `blink_pulse`: one period of a biphasic pulse, 300 ms by default, meant
//!   for frontal electrodes.
//! - `emg_noise`: band-limited high-frequency noise burst (30-50 Hz).
//! - `frn_transient`: negative deflection followed by a positive one at a
//!   fixed latency.
//! - `pink_background`: extra 1/f noise on a channel subset.
//!
//! Each sample draws from its own stream keyed by `(seed, subject, index,
//! class)`; subjects get their own gain, frequency and latency offsets.

mod dataset;
mod layout;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

pub use dataset::{load_dataset, save_dataset, split_leave_one_subject_out, Dataset, EEGSample};
pub use layout::{load_layout, Electrode, ElectrodeLayout, DEFAULT_LAYOUT};

pub const DEFAULT_RATE: f64 = 128.0;
pub const DEFAULT_LENGTH: usize = 384;

const SUBJECT_STREAM: u64 = 0x5355_424a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    AlphaSpindle,
    BlinkPulse,
    EmgNoise,
    FrnTransient,
    PinkBackground,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::AlphaSpindle => "alpha_spindle",
            FeatureKind::BlinkPulse => "blink_pulse",
            FeatureKind::EmgNoise => "emg_noise",
            FeatureKind::FrnTransient => "frn_transient",
            FeatureKind::PinkBackground => "pink_background",
        }
    }
}

/// One feature injected into every sample of a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    /// Peak amplitude relative to the unit-variance background.
    pub amplitude: f64,
    /// Frequency band in Hz (carrier range for spindles, passband for EMG).
    pub band: (f64, f64),
    /// Seconds.
    pub duration: f64,
    pub channels: Vec<String>,
    /// Onset in seconds; random per sample when absent.
    #[serde(default)]
    pub latency: Option<f64>,
}

fn names(channels: &[&str]) -> Vec<String> {
    channels.iter().map(|s| s.to_string()).collect()
}

impl FeatureSpec {
    pub fn alpha_spindle(channels: &[&str]) -> Self {
        FeatureSpec {
            kind: FeatureKind::AlphaSpindle,
            amplitude: 1.5,
            band: (9.0, 11.0),
            duration: 1.0,
            channels: names(channels),
            latency: None,
        }
    }

    pub fn blink_pulse(channels: &[&str]) -> Self {
        FeatureSpec {
            kind: FeatureKind::BlinkPulse,
            amplitude: 4.0,
            band: (0.0, 0.0),
            duration: 0.3,
            channels: names(channels),
            latency: None,
        }
    }

    pub fn emg_noise(channels: &[&str]) -> Self {
        FeatureSpec {
            kind: FeatureKind::EmgNoise,
            amplitude: 1.5,
            band: (30.0, 50.0),
            duration: 1.0,
            channels: names(channels),
            latency: None,
        }
    }

    pub fn frn_transient(channels: &[&str]) -> Self {
        FeatureSpec {
            kind: FeatureKind::FrnTransient,
            amplitude: 2.0,
            band: (0.0, 0.0),
            duration: 0.4,
            channels: names(channels),
            latency: Some(1.0),
        }
    }

    pub fn pink_background(channels: &[&str]) -> Self {
        FeatureSpec {
            kind: FeatureKind::PinkBackground,
            amplitude: 1.0,
            band: (0.0, 0.0),
            duration: DEFAULT_LENGTH as f64 / DEFAULT_RATE,
            channels: names(channels),
            latency: Some(0.0),
        }
    }

    fn validate(&self, rate: f64, length: usize, channels: &[String]) -> Result<Vec<usize>> {
        let nyquist = rate / 2.0;
        let top = match self.kind {
            FeatureKind::AlphaSpindle | FeatureKind::EmgNoise => Some(self.band.1),
            _ => None,
        };
        if let Some(f) = top {
            if !(self.band.0 >= 0.0 && self.band.0 <= self.band.1) {
                return Err(Error::InvalidArgument(format!(
                    "{}: band {:?} must satisfy 0 <= low <= high",
                    self.kind.name(),
                    self.band
                )));
            }
            if f >= nyquist {
                return Err(Error::Nyquist {
                    feature: self.kind.name().into(),
                    frequency: f,
                    rate,
                    nyquist,
                });
            }
        }
        let span = length as f64 / rate;
        if !(self.duration > 0.0 && self.duration <= span + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "{}: duration {} s must be in (0, {span}] s",
                self.kind.name(),
                self.duration
            )));
        }
        if let Some(lat) = self.latency {
            if lat < 0.0 || lat + self.duration > span + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "{}: latency {lat} s + duration {} s exceeds the {span} s sample",
                    self.kind.name(),
                    self.duration
                )));
            }
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{}: amplitude must be finite",
                self.kind.name()
            )));
        }
        self.channels
            .iter()
            .map(|name| {
                channels
                    .iter()
                    .position(|c| c.eq_ignore_ascii_case(name))
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "{}: channel {name} is not in the montage",
                            self.kind.name()
                        ))
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub features: Vec<FeatureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub channels: Vec<String>,
    pub length: usize,
    pub rate: f64,
    pub classes: Vec<ClassSpec>,
    pub samples_per_class: usize,
    pub subjects: usize,
    pub background_amplitude: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Two classes on the bundled 30-channel montage: occipital alpha
    /// spindles versus temporal EMG bursts.
    pub fn two_class_demo(seed: u64) -> Self {
        SynthConfig {
            channels: ElectrodeLayout::default_30().names(),
            length: DEFAULT_LENGTH,
            rate: DEFAULT_RATE,
            classes: vec![
                ClassSpec {
                    name: "spindle".into(),
                    features: vec![FeatureSpec::alpha_spindle(&["O1", "OZ", "O2", "PZ"])],
                },
                ClassSpec {
                    name: "emg".into(),
                    features: vec![FeatureSpec::emg_noise(&["T3", "T4", "T5", "T6"])],
                },
            ],
            samples_per_class: 50,
            subjects: 11,
            background_amplitude: 1.0,
            seed,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.subjects * self.classes.len() * self.samples_per_class
    }
}

/// Per-subject offsets applied to every feature of that subject.
#[derive(Debug, Clone, Copy)]
struct SubjectProfile {
    gain: f64,
    frequency_shift: f64,
    latency_shift: f64,
}

impl SubjectProfile {
    fn draw(seed: u64, subject: usize) -> Self {
        let mut rng = rng_for(&[seed, SUBJECT_STREAM, subject as u64]);
        SubjectProfile {
            gain: rng.random_range(0.8..1.2),
            frequency_shift: rng.random_range(-0.5..0.5),
            latency_shift: rng.random_range(-0.05..0.05),
        }
    }
}

struct Spectral {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    len: usize,
}

impl Spectral {
    fn new(planner: &mut FftPlanner<f64>, len: usize) -> Self {
        Spectral {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            len,
        }
    }

    /// White Gaussian noise reshaped by `gain(frequency in bins)`, scaled to
    /// unit standard deviation.
    fn shaped_noise(&self, rng: &mut ChaCha8Rng, gain: impl Fn(usize) -> f64) -> Vec<f64> {
        let n = self.len;
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
            .collect();
        self.forward.process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            *c *= gain(k.min(n - k));
        }
        self.inverse.process(&mut buf);
        let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
        unit_std(&mut out);
        out
    }
}

fn unit_std(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    for x in xs.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

fn hann(i: usize, len: usize) -> f64 {
    if len <= 1 {
        return 1.0;
    }
    0.5 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos()
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    planner: FftPlanner<f64>,
    plans: Vec<Spectral>,
    resolved: Vec<Vec<Vec<usize>>>,
}

impl<'a> Generator<'a> {
    fn plan(&mut self, len: usize) -> usize {
        if let Some(i) = self.plans.iter().position(|p| p.len == len) {
            return i;
        }
        let s = Spectral::new(&mut self.planner, len);
        self.plans.push(s);
        self.plans.len() - 1
    }

    fn pink(&mut self, rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        let p = self.plan(len);
        self.plans[p].shaped_noise(rng, |k| if k == 0 { 0.0 } else { 1.0 / (k as f64).sqrt() })
    }

    fn band_noise(&mut self, rng: &mut ChaCha8Rng, len: usize, band: (f64, f64)) -> Vec<f64> {
        let p = self.plan(len);
        let hz_per_bin = self.cfg.rate / len as f64;
        self.plans[p].shaped_noise(rng, |k| {
            let f = k as f64 * hz_per_bin;
            if k > 0 && f >= band.0 && f <= band.1 {
                1.0
            } else {
                0.0
            }
        })
    }

    fn sample(&mut self, subject: usize, index: usize, class: usize, profile: SubjectProfile) -> Tensor<f32> {
        let cfg = self.cfg;
        let (n, t) = (cfg.channels.len(), cfg.length);
        let mut rng = rng_for(&[cfg.seed, subject as u64, index as u64, class as u64]);
        let mut data = vec![0.0f64; n * t];
        for ch in 0..n {
            let bg = self.pink(&mut rng, t);
            for (d, b) in data[ch * t..(ch + 1) * t].iter_mut().zip(bg) {
                *d = cfg.background_amplitude * b;
            }
        }
        for (fi, feat) in cfg.classes[class].features.iter().enumerate() {
            let len = ((feat.duration * cfg.rate).round() as usize).clamp(1, t);
            let onset = match feat.latency {
                Some(lat) => {
                    let shifted = (lat + profile.latency_shift) * cfg.rate;
                    (shifted.round().max(0.0) as usize).min(t - len)
                }
                None => rng.random_range(0..=t - len),
            };
            let amp = feat.amplitude * profile.gain * rng.random_range(0.8..1.2);
            let wave: Vec<f64> = match feat.kind {
                FeatureKind::AlphaSpindle => {
                    let lo = feat.band.0 + profile.frequency_shift;
                    let hi = feat.band.1 + profile.frequency_shift;
                    let f = rng.random_range(lo.min(hi)..=hi.max(lo)).max(0.0);
                    let phase = rng.random_range(0.0..2.0 * PI);
                    (0..len)
                        .map(|i| hann(i, len) * (2.0 * PI * f * i as f64 / cfg.rate + phase).sin())
                        .collect()
                }
                FeatureKind::BlinkPulse => (0..len)
                    .map(|i| (2.0 * PI * (i as f64 + 0.5) / len as f64).sin())
                    .collect(),
                FeatureKind::EmgNoise => {
                    let noise = self.band_noise(&mut rng, len.max(2), feat.band);
                    (0..len).map(|i| hann(i, len) * noise[i]).collect()
                }
                FeatureKind::FrnTransient => {
                    let sigma = len as f64 / 8.0;
                    let neg = len as f64 * 0.3;
                    let pos = len as f64 * 0.7;
                    (0..len)
                        .map(|i| {
                            let x = i as f64;
                            let g = |c: f64| (-(x - c) * (x - c) / (2.0 * sigma * sigma)).exp();
                            -g(neg) + 0.6 * g(pos)
                        })
                        .collect()
                }
                FeatureKind::PinkBackground => self.pink(&mut rng, len),
            };
            for &ch in &self.resolved[class][fi] {
                let row = &mut data[ch * t + onset..ch * t + onset + len];
                for (d, w) in row.iter_mut().zip(&wave) {
                    *d += amp * w;
                }
            }
        }
        Tensor::new(vec![n, t], data.into_iter().map(|v| v as f32).collect())
            .expect("shape matches data")
    }
}

/// Generate the full dataset. Samples are ordered by subject, then by
/// repetition, then by class, so every subject is balanced.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.channels.is_empty() || cfg.length < 2 {
        return Err(Error::InvalidArgument(
            "synthetic data needs at least one channel and two time points".into(),
        ));
    }
    if cfg.classes.is_empty() || cfg.subjects == 0 || cfg.samples_per_class == 0 {
        return Err(Error::InvalidArgument(
            "classes, subjects and samples_per_class must be non-empty".into(),
        ));
    }
    if !(cfg.rate > 0.0) || !cfg.background_amplitude.is_finite() {
        return Err(Error::InvalidArgument(
            "rate must be positive and background amplitude finite".into(),
        ));
    }
    let resolved = cfg
        .classes
        .iter()
        .map(|c| {
            c.features
                .iter()
                .map(|f| f.validate(cfg.rate, cfg.length, &cfg.channels))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gen = Generator {
        cfg,
        planner: FftPlanner::new(),
        plans: Vec::new(),
        resolved,
    };
    let mut samples = Vec::with_capacity(cfg.sample_count());
    for subject in 0..cfg.subjects {
        let profile = SubjectProfile::draw(cfg.seed, subject);
        for index in 0..cfg.samples_per_class {
            for class in 0..cfg.classes.len() {
                let data = gen.sample(subject, index, class, profile);
                samples.push(EEGSample {
                    id: samples.len(),
                    data,
                    label: class,
                    subject: subject as u32,
                });
            }
        }
    }
    Ok(Dataset {
        channel_names: cfg.channels.clone(),
        rate: cfg.rate,
        length: cfg.length,
        class_names: cfg.classes.iter().map(|c| c.name.clone()).collect(),
        samples,
    })
}

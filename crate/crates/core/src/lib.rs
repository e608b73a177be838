//! Compact EEG convolutional networks, backpropagation-based attribution
//! methods and quantitative interpretability metrics.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`layers`], [`network`]: dense tensors, the layer kinds of
//!   the two architectures, and a forward/reverse pass whose nonlinearity
//!   behaviour is chosen by a [`network::BackwardRule`].
//! - [`models`], [`train`], [`weights`]: architecture builders, batch
//!   statistics, Adam training and weight files.
//! - [`attribution`]: contribution maps for seven methods plus a random
//!   baseline.
//! - [`evaluation`]: patch/channel sensitivity, deletion curves and
//!   aggregation.
//! - [`viz`]: the normalize / threshold / smooth pipeline, SVG rendering and
//!   text reports.
//! - [`synth`]: synthetic EEG-like datasets, dataset and layout files.

pub mod attribution;
mod container;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod models;
pub mod network;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod viz;
pub mod weights;

pub use error::{Error, Result};
pub use network::{BackwardRule, BatchStats, ForwardTrace, NetworkSpec};
pub use tensor::{Real, Tensor};

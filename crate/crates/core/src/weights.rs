//! Weight files: a JSON manifest naming the architecture, its
//! hyperparameters and every parameter tensor, followed by the parameters as
//! little-endian f32 in manifest order. See [`crate::container`] for framing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::models::{
    build_eegnet_with, build_interpretable_cnn_with, EegNetConfig, InterpretableCnnConfig, EEGNET,
    INTERPRETABLE_CNN,
};
use crate::network::NetworkSpec;
use crate::tensor::Tensor;

const MAGIC: &str = "EEGINTERP-WEIGHTS";
pub const FORMAT_VERSION: u32 = 1;

/// Architecture name plus the hyperparameters needed to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", content = "hyperparameters", rename_all = "snake_case")]
pub enum Architecture {
    Eegnet(EegNetConfig),
    InterpretableCnn(InterpretableCnnConfig),
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Eegnet(_) => EEGNET,
            Architecture::InterpretableCnn(_) => INTERPRETABLE_CNN,
        }
    }

    pub fn build(&self, n: usize, t: usize, k: usize) -> Result<NetworkSpec<f32>> {
        match self {
            Architecture::Eegnet(c) => build_eegnet_with(n, t, k, c),
            Architecture::InterpretableCnn(c) => build_interpretable_cnn_with(n, t, k, c),
        }
    }

    /// Recover the hyperparameters of a network made by one of the builders.
    pub fn of(net: &NetworkSpec<f32>) -> Result<Self> {
        let l = net.layers();
        let conv = |i: usize| match l.get(i) {
            Some(Layer::Conv { conv, .. }) => Some(conv),
            _ => None,
        };
        let arch = match net.name.as_str() {
            EEGNET => {
                let (temporal, spatial) = (conv(0), conv(3));
                let (pool1, dropout, sep, pool2) = (l.get(6), l.get(7), l.get(8), l.get(11));
                match (temporal, spatial, pool1, dropout, sep, pool2) {
                    (
                        Some(c0),
                        Some(c3),
                        Some(Layer::AvgPool { pool: p1 }),
                        Some(Layer::Dropout { rate }),
                        Some(Layer::SeparableConv {
                            depthwise,
                            pointwise,
                        }),
                        Some(Layer::AvgPool { pool: p2 }),
                    ) if c0.out_channels > 0 => Some(Architecture::Eegnet(EegNetConfig {
                        f1: c0.out_channels,
                        depth: c3.out_channels / c0.out_channels,
                        f2: pointwise.out_channels,
                        temporal_kernel: c0.kernel.1,
                        separable_kernel: depthwise.kernel.1,
                        pool1: p1.1,
                        pool2: p2.1,
                        dropout: *rate,
                    })),
                    _ => None,
                }
            }
            INTERPRETABLE_CNN => match (conv(0), conv(1)) {
                (Some(c0), Some(c1)) if c0.out_channels > 0 => {
                    Some(Architecture::InterpretableCnn(InterpretableCnnConfig {
                        pointwise_filters: c0.out_channels,
                        depth_multiplier: c1.out_channels / c0.out_channels,
                        temporal_kernel: c1.kernel.1,
                    }))
                }
                _ => None,
            },
            _ => None,
        };
        let not_standard = || {
            Error::InvalidArgument(format!(
                "network {:?} was not produced by a known architecture builder",
                net.name
            ))
        };
        let arch = arch.ok_or_else(not_standard)?;
        let rebuilt = arch.build(net.input_channels, net.input_length, net.classes)?;
        let same = rebuilt.layers().len() == l.len()
            && rebuilt.layers().iter().zip(l).all(|(a, b)| {
                a.kind_name() == b.kind_name()
                    && a.params().iter().map(|(n, t)| (*n, t.shape().to_vec())).collect::<Vec<_>>()
                        == b.params().iter().map(|(n, t)| (*n, t.shape().to_vec())).collect::<Vec<_>>()
            });
        if !same {
            return Err(not_standard());
        }
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in values.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    #[serde(flatten)]
    architecture: Architecture,
    input_channels: usize,
    input_length: usize,
    classes: usize,
    tensors: Vec<TensorEntry>,
}

fn tensor_name(layer: usize, param: &str) -> String {
    format!("layer{layer}.{param}")
}

/// Serialize to bytes.
pub fn encode_weights(net: &NetworkSpec<f32>) -> Result<Vec<u8>> {
    let architecture = Architecture::of(net)?;
    let mut tensors = Vec::new();
    let mut blob = Vec::with_capacity(net.parameter_count());
    for (li, layer) in net.layers().iter().enumerate() {
        for (pname, t) in layer.params() {
            tensors.push(TensorEntry {
                name: tensor_name(li, pname),
                shape: t.shape().to_vec(),
                offset: blob.len(),
            });
            blob.extend_from_slice(t.data());
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        architecture,
        input_channels: net.input_channels,
        input_length: net.input_length,
        classes: net.classes,
        tensors,
    };
    let text = serde_json::to_string(&manifest).expect("manifest serializes");
    Ok(container::encode(MAGIC, FORMAT_VERSION, &text, &blob))
}

pub fn save_weights(net: &NetworkSpec<f32>, path: &Path) -> Result<()> {
    let bytes = encode_weights(net)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<NetworkSpec<f32>> {
    let (text, blob) = container::decode(bytes, path, MAGIC, FORMAT_VERSION)?;
    let m: Manifest = container::parse_manifest(&text, path)?;
    let mismatch = |detail: String| Error::ShapeMismatch {
        path: path.to_path_buf(),
        detail,
    };
    if m.version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            expected: FORMAT_VERSION,
            found: m.version,
        });
    }
    let mut net = m
        .architecture
        .build(m.input_channels, m.input_length, m.classes)
        .map_err(|e| mismatch(format!("cannot build {}: {e}", m.architecture.name())))?;
    let mut entries = m.tensors.iter();
    let mut used = 0;
    for (li, layer) in net.layers_mut().iter_mut().enumerate() {
        let names: Vec<&'static str> = layer.params().iter().map(|(n, _)| *n).collect();
        for (pname, param) in names.into_iter().zip(layer.params_mut()) {
            let expected = tensor_name(li, pname);
            let e = entries
                .next()
                .ok_or_else(|| mismatch(format!("tensor {expected} missing from manifest")))?;
            if e.name != expected {
                return Err(mismatch(format!("expected tensor {expected}, found {}", e.name)));
            }
            if e.shape != param.shape() {
                return Err(mismatch(format!(
                    "{expected}: manifest shape {:?} but the architecture needs {:?}",
                    e.shape,
                    param.shape()
                )));
            }
            let len = param.len();
            if e.offset != used || e.offset + len > blob.len() {
                return Err(mismatch(format!(
                    "{expected}: offset {} / length {len} inconsistent with blob of {} values",
                    e.offset,
                    blob.len()
                )));
            }
            *param = Tensor::new(e.shape.clone(), blob[e.offset..e.offset + len].to_vec())
                .expect("length checked");
            used += len;
        }
    }
    if let Some(extra) = entries.next() {
        return Err(mismatch(format!("unexpected tensor {}", extra.name)));
    }
    if used != blob.len() {
        return Err(mismatch(format!(
            "manifest covers {used} values, blob has {}",
            blob.len()
        )));
    }
    net.validate()?;
    Ok(net)
}

pub fn load_weights(path: &Path) -> Result<NetworkSpec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, path)
}

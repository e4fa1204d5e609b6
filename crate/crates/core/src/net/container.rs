//! Model containers: a tensor archive whose `meta` object describes the
//! network. See `docs/container-format.md` for the byte layout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::archive::Archive;
use crate::error::{Error, Result};

use super::{InputShape, Layer, LayerOp, Network};

pub const CONTAINER_FORMAT: &str = "neurotext-cnn";
pub const CONTAINER_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum LayerSpec {
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu {
        name: String,
    },
    Maxpool {
        name: String,
        size: usize,
        stride: usize,
    },
    Avgpool {
        name: String,
        size: usize,
        stride: usize,
    },
    Flatten {
        name: String,
    },
    Dense {
        name: String,
        in_features: usize,
        out_features: usize,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkManifest {
    format: String,
    version: u64,
    input: InputShape,
    class_names: Vec<String>,
    layers: Vec<Value>,
    #[serde(default)]
    metadata: Value,
}

fn take_param(archive: &Archive, layer: &str, suffix: &str, shape: &[usize]) -> Result<Vec<f32>> {
    let name = format!("{layer}.{suffix}");
    let tensor = archive
        .get(&name)
        .ok_or_else(|| Error::Composition(format!("layer '{layer}' is missing tensor '{name}'")))?;
    if tensor.shape != shape {
        return Err(Error::Composition(format!(
            "tensor '{name}' has shape {:?}, layer '{layer}' declares {shape:?}",
            tensor.shape
        )));
    }
    Ok(tensor.data.clone())
}

impl Network {
    /// Loads a network from a container file.
    pub fn load(path: &Path) -> Result<Network> {
        Network::from_archive(&Archive::read(path)?)
    }

    pub fn from_archive(archive: &Archive) -> Result<Network> {
        let manifest: NetworkManifest = serde_json::from_value(archive.meta.clone())
            .map_err(|e| Error::format("<manifest>", e.to_string()))?;
        if manifest.format != CONTAINER_FORMAT || manifest.version != CONTAINER_VERSION {
            return Err(Error::format(
                "<manifest>",
                format!(
                    "unsupported container {} v{} (expected {CONTAINER_FORMAT} v{CONTAINER_VERSION})",
                    manifest.format, manifest.version
                ),
            ));
        }

        let mut layers = Vec::with_capacity(manifest.layers.len());
        for (i, raw) in manifest.layers.iter().enumerate() {
            let label = raw
                .get("name")
                .and_then(Value::as_str)
                .map(str::to_owned)
                .unwrap_or_else(|| format!("layers[{i}]"));
            let spec: LayerSpec =
                serde_json::from_value(raw.clone()).map_err(|e| Error::format(label.clone(), e.to_string()))?;
            let layer = match spec {
                LayerSpec::Conv2d {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let weight = take_param(archive, &name, "weight", &[out_channels, in_channels, kernel, kernel])?;
                    let bias = take_param(archive, &name, "bias", &[out_channels])?;
                    Layer::conv(&name, in_channels, out_channels, kernel, stride, padding, weight, bias)
                }
                LayerSpec::Dense {
                    name,
                    in_features,
                    out_features,
                } => {
                    let weight = take_param(archive, &name, "weight", &[out_features, in_features])?;
                    let bias = take_param(archive, &name, "bias", &[out_features])?;
                    Layer::dense(&name, in_features, out_features, weight, bias)
                }
                LayerSpec::Relu { name } => Layer::relu(&name),
                LayerSpec::Maxpool { name, size, stride } => Layer::maxpool(&name, size, stride),
                LayerSpec::Avgpool { name, size, stride } => Layer::avgpool(&name, size, stride),
                LayerSpec::Flatten { name } => Layer::flatten(&name),
            };
            layers.push(layer);
        }
        Ok(Network::new(manifest.input, layers, manifest.class_names)?.with_metadata(manifest.metadata))
    }

    pub fn to_archive(&self) -> Archive {
        let mut specs = Vec::with_capacity(self.layers().len());
        let mut tensors = Vec::new();
        for layer in self.layers() {
            let name = layer.name.clone();
            let spec = match &layer.op {
                LayerOp::Conv2d(c) => {
                    tensors.push((
                        format!("{name}.weight"),
                        vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                        c.weight.clone(),
                    ));
                    tensors.push((format!("{name}.bias"), vec![c.out_channels], c.bias.clone()));
                    LayerSpec::Conv2d {
                        name,
                        in_channels: c.in_channels,
                        out_channels: c.out_channels,
                        kernel: c.kernel,
                        stride: c.stride,
                        padding: c.padding,
                    }
                }
                LayerOp::Dense(d) => {
                    tensors.push((format!("{name}.weight"), vec![d.out_features, d.in_features], d.weight.clone()));
                    tensors.push((format!("{name}.bias"), vec![d.out_features], d.bias.clone()));
                    LayerSpec::Dense {
                        name,
                        in_features: d.in_features,
                        out_features: d.out_features,
                    }
                }
                LayerOp::Relu => LayerSpec::Relu { name },
                LayerOp::MaxPool(p) => LayerSpec::Maxpool {
                    name,
                    size: p.size,
                    stride: p.stride,
                },
                LayerOp::AvgPool(p) => LayerSpec::Avgpool {
                    name,
                    size: p.size,
                    stride: p.stride,
                },
                LayerOp::Flatten => LayerSpec::Flatten { name },
            };
            specs.push(serde_json::to_value(spec).expect("layer spec serializes"));
        }
        let manifest = json!({
            "format": CONTAINER_FORMAT,
            "version": CONTAINER_VERSION,
            "input": self.input_shape(),
            "class_names": self.class_names(),
            "layers": specs,
            "metadata": self.metadata(),
        });
        let mut archive = Archive::new(manifest);
        for (name, shape, data) in tensors {
            archive.push(name, shape, data);
        }
        archive
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().write(path)
    }
}

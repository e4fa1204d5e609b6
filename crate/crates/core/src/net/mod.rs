//! Small CNN classifiers: layer definitions, container I/O, and the forward
//! pass with full activation capture and filter masking.

mod container;
mod forward;
mod layers;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use container::{CONTAINER_FORMAT, CONTAINER_VERSION};
pub use forward::{ActivationMap, ActivationStore, Prediction};
pub use layers::{Conv2d, Dense, InputShape, Layer, LayerOp, Pool};

use crate::error::{Error, Result};

/// A convolutional filter, identified by its layer and channel index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: String,
    pub filter_index: usize,
}

impl NeuronId {
    pub fn new(layer: impl Into<String>, filter_index: usize) -> Self {
        NeuronId {
            layer: layer.into(),
            filter_index,
        }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.layer, self.filter_index)
    }
}

/// Filters whose post-activation maps are zeroed during a forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeuronMask {
    masked: BTreeSet<NeuronId>,
}

impl NeuronMask {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: NeuronId) -> bool {
        self.masked.insert(id)
    }

    pub fn contains(&self, id: &NeuronId) -> bool {
        self.masked.contains(id)
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeuronId> {
        self.masked.iter()
    }

    pub(crate) fn filters_in<'a>(&'a self, layer: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.masked
            .iter()
            .filter(move |id| id.layer == layer)
            .map(|id| id.filter_index)
    }
}

impl FromIterator<NeuronId> for NeuronMask {
    fn from_iter<I: IntoIterator<Item = NeuronId>>(iter: I) -> Self {
        NeuronMask {
            masked: iter.into_iter().collect(),
        }
    }
}

/// A feed-forward CNN classifier. Immutable once constructed.
#[derive(Clone, Debug)]
pub struct Network {
    input: InputShape,
    layers: Vec<Layer>,
    class_names: Vec<String>,
    output_shapes: Vec<Vec<usize>>,
    metadata: serde_json::Value,
}

impl Network {
    /// Validates that layer shapes compose and returns the network.
    pub fn new(input: InputShape, layers: Vec<Layer>, class_names: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut shape = vec![input.channels, input.height, input.width];
        let mut output_shapes = Vec::with_capacity(layers.len());
        for layer in &layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::Composition(format!(
                    "duplicate layer name '{}'",
                    layer.name
                )));
            }
            shape = layer.output_shape(&shape)?;
            output_shapes.push(shape.clone());
        }
        if !layers.iter().any(|l| matches!(l.op, LayerOp::Conv2d(_))) {
            return Err(Error::Composition("network has no convolutional layer".into()));
        }
        match shape.as_slice() {
            [n] if *n == class_names.len() => {}
            other => {
                return Err(Error::Composition(format!(
                    "network output shape {other:?} does not match {} class names",
                    class_names.len()
                )))
            }
        }
        Ok(Network {
            input,
            layers,
            class_names,
            output_shapes,
            metadata: serde_json::Value::Null,
        })
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn metadata(&self) -> &serde_json::Value {
        &self.metadata
    }

    pub fn input_shape(&self) -> InputShape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Output shape of layer `index`.
    pub fn output_shape(&self, index: usize) -> &[usize] {
        &self.output_shapes[index]
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    fn conv_layer(&self, name: &str) -> Result<(usize, &Conv2d)> {
        let index = self
            .layer_index(name)
            .ok_or_else(|| Error::Lookup(format!("no layer named '{name}'")))?;
        match &self.layers[index].op {
            LayerOp::Conv2d(conv) => Ok((index, conv)),
            _ => Err(Error::Lookup(format!("layer '{name}' is not convolutional"))),
        }
    }

    pub fn conv_layer_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| matches!(l.op, LayerOp::Conv2d(_)))
            .map(|l| l.name.as_str())
            .collect()
    }

    pub fn last_conv_layer(&self) -> &str {
        self.conv_layer_names()
            .last()
            .copied()
            .expect("constructor guarantees a conv layer")
    }

    /// All filters of a convolutional layer, ordered by index.
    pub fn list_neurons(&self, layer_name: &str) -> Result<Vec<NeuronId>> {
        let (_, conv) = self.conv_layer(layer_name)?;
        Ok((0..conv.out_channels)
            .map(|i| NeuronId::new(layer_name, i))
            .collect())
    }

    pub fn validate_neuron(&self, id: &NeuronId) -> Result<()> {
        let (_, conv) = self.conv_layer(&id.layer)?;
        if id.filter_index >= conv.out_channels {
            return Err(Error::Lookup(format!(
                "filter index {} out of range for layer '{}' with {} filters",
                id.filter_index, id.layer, conv.out_channels
            )));
        }
        Ok(())
    }

    pub fn validate_mask(&self, mask: &NeuronMask) -> Result<()> {
        mask.iter().try_for_each(|id| self.validate_neuron(id))
    }

    /// Index of the layer whose output holds the post-activation maps of the
    /// conv layer at `conv_index`: the directly following ReLU if any,
    /// otherwise the conv layer itself.
    pub(crate) fn activation_index(&self, conv_index: usize) -> usize {
        match self.layers.get(conv_index + 1) {
            Some(Layer {
                op: LayerOp::Relu, ..
            }) => conv_index + 1,
            _ => conv_index,
        }
    }

    /// Number of parameters across all layers.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.op {
                LayerOp::Conv2d(c) => c.weight.len() + c.bias.len(),
                LayerOp::Dense(d) => d.weight.len() + d.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Copy of the network with every bias set to zero.
    pub fn without_biases(&self) -> Network {
        let mut net = self.clone();
        for layer in &mut net.layers {
            match &mut layer.op {
                LayerOp::Conv2d(c) => c.bias.iter_mut().for_each(|b| *b = 0.0),
                LayerOp::Dense(d) => d.bias.iter_mut().for_each(|b| *b = 0.0),
                _ => {}
            }
        }
        net
    }
}

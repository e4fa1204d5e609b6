use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

use super::{Conv2d, Dense, LayerOp, Network, NeuronId, NeuronMask, Pool};

/// Classifier output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f32>,
    pub probabilities: Vec<f32>,
    pub predicted_index: usize,
    pub predicted_class: String,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f32>, class_names: &[String]) -> Self {
        // first maximum wins ties
        let predicted_index = logits
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > logits[best] { i } else { best });
        let max = f64::from(logits[predicted_index]);
        let exps: Vec<f64> = logits.iter().map(|&v| (f64::from(v) - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probabilities = exps.iter().map(|e| (e / total) as f32).collect();
        Prediction {
            predicted_class: class_names[predicted_index].clone(),
            logits,
            probabilities,
            predicted_index,
        }
    }

    /// Probability of the predicted class.
    pub fn confidence(&self) -> f32 {
        self.probabilities[self.predicted_index]
    }
}

/// 2D activation grid of one filter, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Self {
        assert_eq!(height * width, values.len());
        ActivationMap {
            height,
            width,
            values,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks(self.width)
    }
}

/// Every layer output of one forward pass.
#[derive(Clone, Debug)]
pub struct ActivationStore {
    input: Tensor,
    names: Vec<String>,
    outputs: Vec<Tensor>,
    // conv layer name -> (conv index, index of its post-activation output)
    neuron_sources: HashMap<String, (usize, usize)>,
}

impl ActivationStore {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn output(&self, index: usize) -> &Tensor {
        &self.outputs[index]
    }

    /// Input of layer `index` (the network input for layer 0).
    pub fn layer_input(&self, index: usize) -> &Tensor {
        if index == 0 {
            &self.input
        } else {
            &self.outputs[index - 1]
        }
    }

    pub fn layer(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.outputs[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.outputs)
    }

    pub fn logits(&self) -> &[f32] {
        self.outputs.last().expect("non-empty network").data()
    }

    /// Post-activation map of a filter (after the ReLU following its conv).
    pub fn neuron_map(&self, id: &NeuronId) -> Result<ActivationMap> {
        let &(conv_index, source) = self
            .neuron_sources
            .get(&id.layer)
            .ok_or_else(|| Error::Lookup(format!("no convolutional layer named '{}'", id.layer)))?;
        let tensor = &self.outputs[source];
        let (c, h, w) = tensor.spatial_dims().expect("conv outputs are spatial");
        if id.filter_index >= c {
            return Err(Error::Lookup(format!(
                "filter index {} out of range for layer '{}' ({} filters, layer #{conv_index})",
                id.filter_index, id.layer, c
            )));
        }
        Ok(ActivationMap::new(h, w, tensor.channel(id.filter_index).to_vec()))
    }
}

impl Network {
    /// Runs the classifier on `img`, recording every layer output. Filters in
    /// `mask` have their maps zeroed before the next layer sees them.
    pub fn forward(&self, img: &Image, mask: &NeuronMask) -> Result<(Prediction, ActivationStore)> {
        let input = self.input_shape();
        if (img.channels(), img.height(), img.width()) != (input.channels, input.height, input.width) {
            return Err(Error::Input(format!(
                "image is {}x{}x{} but the network expects {}x{}x{}",
                img.height(),
                img.width(),
                img.channels(),
                input.height,
                input.width,
                input.channels
            )));
        }
        self.forward_tensor(img.to_tensor(), mask)
    }

    pub fn forward_tensor(&self, input: Tensor, mask: &NeuronMask) -> Result<(Prediction, ActivationStore)> {
        let shape = self.input_shape();
        if input.shape() != [shape.channels, shape.height, shape.width] {
            return Err(Error::Input(format!(
                "input tensor shape {:?} does not match network input",
                input.shape()
            )));
        }
        self.validate_mask(mask)?;
        let outputs = self.run_layers(0, &input, mask);
        let prediction = Prediction::from_logits(outputs.last().unwrap().data().to_vec(), self.class_names());
        let neuron_sources = self
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.op, LayerOp::Conv2d(_)))
            .map(|(i, l)| (l.name.clone(), (i, self.activation_index(i))))
            .collect();
        let store = ActivationStore {
            input,
            names: self.layers().iter().map(|l| l.name.clone()).collect(),
            outputs,
            neuron_sources,
        };
        Ok((prediction, store))
    }

    /// Runs layers `start..` on `input`, which must have the shape of the
    /// input to layer `start`. Returns the prediction and the outputs of the
    /// layers that were run.
    pub fn forward_from(&self, start: usize, input: &Tensor, mask: &NeuronMask) -> Result<(Prediction, Vec<Tensor>)> {
        if start >= self.layers().len() {
            return Err(Error::Input(format!("layer index {start} out of range")));
        }
        let expected: Vec<usize> = if start == 0 {
            let s = self.input_shape();
            vec![s.channels, s.height, s.width]
        } else {
            self.output_shape(start - 1).to_vec()
        };
        if input.shape() != expected.as_slice() {
            return Err(Error::Input(format!(
                "tensor shape {:?} does not match input of layer {start} ({expected:?})",
                input.shape()
            )));
        }
        self.validate_mask(mask)?;
        let outputs = self.run_layers(start, input, mask);
        let prediction = Prediction::from_logits(outputs.last().unwrap().data().to_vec(), self.class_names());
        Ok((prediction, outputs))
    }

    /// Re-runs only the suffix of the network affected by `mask`, reusing the
    /// unmasked prefix from `acts`. Bit-identical to a full masked forward.
    pub fn rerun_masked(&self, acts: &ActivationStore, mask: &NeuronMask) -> Result<Prediction> {
        self.validate_mask(mask)?;
        let first = mask
            .iter()
            .filter_map(|id| self.layer_index(&id.layer))
            .min();
        let Some(first) = first else {
            return Ok(Prediction::from_logits(acts.logits().to_vec(), self.class_names()));
        };
        let (prediction, _) = self.forward_from(first, acts.layer_input(first), mask)?;
        Ok(prediction)
    }

    fn run_layers(&self, start: usize, input: &Tensor, mask: &NeuronMask) -> Vec<Tensor> {
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers().len() - start);
        for (offset, layer) in self.layers()[start..].iter().enumerate() {
            let x = outputs.last().unwrap_or(input);
            let mut y = match &layer.op {
                LayerOp::Conv2d(conv) => conv2d(conv, x),
                LayerOp::Relu => relu(x),
                LayerOp::MaxPool(pool) => max_pool(pool, x),
                LayerOp::AvgPool(pool) => avg_pool(pool, x),
                LayerOp::Flatten => {
                    let n = x.len();
                    x.clone().reshaped(vec![n])
                }
                LayerOp::Dense(dense) => dense_forward(dense, x),
            };
            if matches!(layer.op, LayerOp::Conv2d(_)) {
                for filter in mask.filters_in(&layer.name) {
                    y.channel_mut(filter).fill(0.0);
                }
            }
            debug_assert_eq!(y.shape(), self.output_shape(start + offset));
            outputs.push(y);
        }
        outputs
    }
}

pub(crate) fn conv2d(conv: &Conv2d, x: &Tensor) -> Tensor {
    let (c, h, w) = x.spatial_dims().expect("conv input is spatial");
    let (oh, ow) = conv.output_hw(h, w).expect("shape validated");
    let (k, s, p) = (conv.kernel, conv.stride, conv.padding as isize);
    let mut out = vec![0.0f32; conv.out_channels * oh * ow];
    for (o, plane) in out.chunks_mut(oh * ow).enumerate() {
        plane.fill(conv.bias[o]);
        for ci in 0..c {
            let xin = x.channel(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = conv.weight_at(o, ci, ky, kx);
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, acc) in orow.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *acc += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![conv.out_channels, oh, ow], out)
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())
}

pub(crate) fn max_pool(pool: &Pool, x: &Tensor) -> Tensor {
    let (c, h, w) = x.spatial_dims().expect("pool input is spatial");
    let (oh, ow) = pool.output_hw(h, w).expect("shape validated");
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = x.channel(ci);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..pool.size {
                    for dx in 0..pool.size {
                        best = best.max(plane[(oy * pool.stride + dy) * w + ox * pool.stride + dx]);
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub(crate) fn avg_pool(pool: &Pool, x: &Tensor) -> Tensor {
    let (c, h, w) = x.spatial_dims().expect("pool input is spatial");
    let (oh, ow) = pool.output_hw(h, w).expect("shape validated");
    let norm = (pool.size * pool.size) as f32;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = x.channel(ci);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0;
                for dy in 0..pool.size {
                    for dx in 0..pool.size {
                        sum += plane[(oy * pool.stride + dy) * w + ox * pool.stride + dx];
                    }
                }
                out.push(sum / norm);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub(crate) fn dense_forward(dense: &Dense, x: &Tensor) -> Tensor {
    let input = x.data();
    let out = dense
        .weight
        .chunks(dense.in_features)
        .zip(&dense.bias)
        .map(|(row, &b)| row.iter().zip(input).fold(b, |acc, (w, v)| acc + w * v))
        .collect();
    Tensor::new(vec![dense.out_features], out)
}

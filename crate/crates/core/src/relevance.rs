//! Layer-wise relevance propagation and filter ranking.
//!
//! Relevance is seeded with the target-class logit at the output and
//! redistributed backwards with the basic z-rule
//! `R_i = Σ_j z_ij / (Σ_i z_ij + b_j + ε) · R_j`, `z_ij = a_i · w_ij`.
//! The bias enters the denominator but receives no relevance, so exact
//! conservation only holds for bias-free networks. Max pooling routes all
//! relevance to the window's (first) maximum, average pooling splits it in
//! proportion to the inputs, and ReLU passes it through unchanged.
//!
//! Relevance is accumulated in `f64`.

use serde_json::json;

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::net::{ActivationStore, Conv2d, Dense, LayerOp, Network, NeuronId, Pool};

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrpOptions {
    /// Magnitude of the stabilizer added to every denominator (with the
    /// denominator's sign, zero counting as positive).
    pub epsilon: f64,
}

impl Default for LrpOptions {
    fn default() -> Self {
        LrpOptions {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RelevanceTensor {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Relevance of the network input and of every layer output.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceStore {
    target_class: usize,
    input: RelevanceTensor,
    layers: Vec<(String, RelevanceTensor)>,
}

impl RelevanceStore {
    pub fn target_class(&self) -> usize {
        self.target_class
    }

    pub fn input(&self) -> &RelevanceTensor {
        &self.input
    }

    pub fn layer(&self, name: &str) -> Option<&RelevanceTensor> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &RelevanceTensor)> {
        self.layers.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total relevance at the input followed by each layer output, in
    /// forward order.
    pub fn boundary_sums(&self) -> Vec<f64> {
        std::iter::once(self.input.sum())
            .chain(self.layers.iter().map(|(_, t)| t.sum()))
            .collect()
    }

    /// Debug dump in the tensor-archive format (values narrowed to `f32`).
    pub fn to_archive(&self) -> Archive {
        let mut archive = Archive::new(json!({
            "kind": "relevance",
            "target_class": self.target_class,
        }));
        let narrow = |t: &RelevanceTensor| t.data.iter().map(|&v| v as f32).collect();
        archive.push("input", self.input.shape.clone(), narrow(&self.input));
        for (name, t) in &self.layers {
            archive.push(name.clone(), t.shape.clone(), narrow(t));
        }
        archive
    }
}

#[inline]
fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// Backward relevance pass for `target_class` with default options.
pub fn lrp_backward(net: &Network, acts: &ActivationStore, target_class: usize) -> Result<RelevanceStore> {
    lrp_backward_with(net, acts, target_class, LrpOptions::default())
}

pub fn lrp_backward_with(
    net: &Network,
    acts: &ActivationStore,
    target_class: usize,
    options: LrpOptions,
) -> Result<RelevanceStore> {
    if target_class >= net.num_classes() {
        return Err(Error::Input(format!(
            "target class {target_class} out of range for {} classes",
            net.num_classes()
        )));
    }
    if acts.len() != net.layers().len()
        || (0..acts.len()).any(|i| acts.output(i).shape() != net.output_shape(i))
    {
        return Err(Error::Input("activations were not produced by this network".into()));
    }

    let n_layers = net.layers().len();
    let mut seed = vec![0.0; net.num_classes()];
    seed[target_class] = f64::from(acts.logits()[target_class]);
    let mut relevance = vec![
        RelevanceTensor {
            shape: vec![],
            data: vec![]
        };
        n_layers
    ];
    relevance[n_layers - 1] = RelevanceTensor {
        shape: net.output_shape(n_layers - 1).to_vec(),
        data: seed,
    };

    let mut input_relevance = None;
    for index in (0..n_layers).rev() {
        let layer = &net.layers()[index];
        let upper = &relevance[index].data;
        let a_in: Vec<f64> = acts.layer_input(index).data().iter().map(|&v| f64::from(v)).collect();
        let in_shape = acts.layer_input(index).shape().to_vec();
        let lower = match &layer.op {
            LayerOp::Dense(dense) => dense_rule(dense, &a_in, upper, options.epsilon),
            LayerOp::Conv2d(conv) => conv_rule(conv, &in_shape, &a_in, upper, options.epsilon),
            LayerOp::MaxPool(pool) => max_pool_rule(pool, &in_shape, acts.layer_input(index).data(), upper),
            LayerOp::AvgPool(pool) => avg_pool_rule(pool, &in_shape, &a_in, upper, options.epsilon),
            LayerOp::Relu | LayerOp::Flatten => upper.clone(),
        };
        if let Some(bad) = lower.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: layer.name.clone(),
                message: format!("non-finite relevance {bad}"),
            });
        }
        let tensor = RelevanceTensor {
            shape: in_shape,
            data: lower,
        };
        if index == 0 {
            input_relevance = Some(tensor);
        } else {
            relevance[index - 1] = tensor;
        }
    }

    Ok(RelevanceStore {
        target_class,
        input: input_relevance.expect("network has at least one layer"),
        layers: net.layers().iter().map(|l| l.name.clone()).zip(relevance).collect(),
    })
}

fn dense_rule(dense: &Dense, a: &[f64], upper: &[f64], eps: f64) -> Vec<f64> {
    let mut lower = vec![0.0; dense.in_features];
    for (j, row) in dense.weight.chunks(dense.in_features).enumerate() {
        if upper[j] == 0.0 {
            continue;
        }
        let z: f64 = f64::from(dense.bias[j]) + row.iter().zip(a).map(|(&w, &x)| f64::from(w) * x).sum::<f64>();
        let s = upper[j] / stabilize(z, eps);
        for (i, &w) in row.iter().enumerate() {
            lower[i] += a[i] * f64::from(w) * s;
        }
    }
    lower
}

fn conv_rule(conv: &Conv2d, in_shape: &[usize], a: &[f64], upper: &[f64], eps: f64) -> Vec<f64> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = conv.output_hw(h, w).expect("validated shape");
    let (k, s, p) = (conv.kernel, conv.stride, conv.padding as isize);
    // taps of output (oy, ox) along one axis: (kernel offset, input coordinate)
    let taps = |o: usize, limit: usize| {
        (0..k).filter_map(move |kk| {
            let i = (o * s + kk) as isize - p;
            (i >= 0 && i < limit as isize).then_some((kk, i as usize))
        })
    };

    let mut lower = vec![0.0; c * h * w];
    for o in 0..conv.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let r = upper[(o * oh + oy) * ow + ox];
                if r == 0.0 {
                    continue;
                }
                let mut z = f64::from(conv.bias[o]);
                for ci in 0..c {
                    for (ky, iy) in taps(oy, h) {
                        for (kx, ix) in taps(ox, w) {
                            z += f64::from(conv.weight_at(o, ci, ky, kx)) * a[(ci * h + iy) * w + ix];
                        }
                    }
                }
                let ratio = r / stabilize(z, eps);
                for ci in 0..c {
                    for (ky, iy) in taps(oy, h) {
                        for (kx, ix) in taps(ox, w) {
                            let idx = (ci * h + iy) * w + ix;
                            lower[idx] += a[idx] * f64::from(conv.weight_at(o, ci, ky, kx)) * ratio;
                        }
                    }
                }
            }
        }
    }
    lower
}

fn max_pool_rule(pool: &Pool, in_shape: &[usize], a: &[f32], upper: &[f64]) -> Vec<f64> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = pool.output_hw(h, w).expect("validated shape");
    let mut lower = vec![0.0; c * h * w];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = None::<(usize, f32)>;
                for dy in 0..pool.size {
                    for dx in 0..pool.size {
                        let idx = (ci * h + oy * pool.stride + dy) * w + ox * pool.stride + dx;
                        if best.is_none_or(|(_, v)| a[idx] > v) {
                            best = Some((idx, a[idx]));
                        }
                    }
                }
                lower[best.unwrap().0] += upper[(ci * oh + oy) * ow + ox];
            }
        }
    }
    lower
}

fn avg_pool_rule(pool: &Pool, in_shape: &[usize], a: &[f64], upper: &[f64], eps: f64) -> Vec<f64> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = pool.output_hw(h, w).expect("validated shape");
    let mut lower = vec![0.0; c * h * w];
    let window = |ci: usize, oy: usize, ox: usize| {
        (0..pool.size).flat_map(move |dy| {
            (0..pool.size).map(move |dx| (ci * h + oy * pool.stride + dy) * w + ox * pool.stride + dx)
        })
    };
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let r = upper[(ci * oh + oy) * ow + ox];
                if r == 0.0 {
                    continue;
                }
                let z: f64 = window(ci, oy, ox).map(|i| a[i]).sum();
                let ratio = r / stabilize(z, eps);
                for i in window(ci, oy, ox) {
                    lower[i] += a[i] * ratio;
                }
            }
        }
    }
    lower
}

/// How per-position relevance is aggregated into a filter score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreMode {
    /// Plain sum, negative relevance included.
    #[default]
    Signed,
    /// Sum of the positive part only.
    Positive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronScore {
    pub neuron: NeuronId,
    pub score: f64,
}

/// One score per filter of `layer_name`: the sum of its relevance map.
pub fn filter_relevance(rel: &RelevanceStore, layer_name: &str) -> Result<Vec<NeuronScore>> {
    filter_relevance_with(rel, layer_name, ScoreMode::Signed)
}

pub fn filter_relevance_with(rel: &RelevanceStore, layer_name: &str, mode: ScoreMode) -> Result<Vec<NeuronScore>> {
    let tensor = rel
        .layer(layer_name)
        .ok_or_else(|| Error::Lookup(format!("no relevance recorded for layer '{layer_name}'")))?;
    let &[channels, h, w] = tensor.shape.as_slice() else {
        return Err(Error::Lookup(format!("layer '{layer_name}' is not spatial")));
    };
    Ok(tensor
        .data
        .chunks(h * w)
        .take(channels)
        .enumerate()
        .map(|(i, plane)| NeuronScore {
            neuron: NeuronId::new(layer_name, i),
            score: match mode {
                ScoreMode::Signed => plane.iter().sum(),
                ScoreMode::Positive => plane.iter().map(|v| v.max(0.0)).sum(),
            },
        })
        .collect())
}

/// The `k` highest-scoring neurons in descending order; ties go to the
/// lower filter index.
pub fn top_k_neurons(scores: &[NeuronScore], k: usize) -> Result<Vec<NeuronId>> {
    if k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    if scores.is_empty() {
        return Err(Error::Input("empty score list".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Input(format!("non-finite score for {}", bad.neuron)));
    }
    let mut ranked: Vec<&NeuronScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.neuron.filter_index.cmp(&b.neuron.filter_index))
            .then_with(|| a.neuron.layer.cmp(&b.neuron.layer))
    });
    Ok(ranked.into_iter().take(k).map(|s| s.neuron.clone()).collect())
}

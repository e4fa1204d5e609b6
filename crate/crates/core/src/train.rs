//! Training for the reference classifier: plain minibatch SGD with
//! momentum and weight decay on softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{ActivationStore, InputShape, Layer, LayerOp, Network, NeuronMask};
use crate::synth::{self, Split, CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data_seed: u64,
    pub init_seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data_seed: 2024,
            init_seed: 7,
            train_per_class: 300,
            test_per_class: 100,
            epochs: 14,
            batch_size: 32,
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// conv(3→8) relu pool2, conv(8→16) relu pool2, conv(16→32) relu pool3,
/// flatten, dense(288→10), on 36×36 RGB, He-initialized.
pub fn reference_architecture(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut he = |fan_in: usize, n: usize| -> Vec<f32> {
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("valid std");
        (0..n).map(|_| normal.sample(&mut rng)).collect()
    };
    let layers = vec![
        Layer::conv("conv1", 3, 8, 3, 1, 1, he(27, 8 * 27), vec![0.0; 8]),
        Layer::relu("relu1"),
        Layer::maxpool("pool1", 2, 2),
        Layer::conv("conv2", 8, 16, 3, 1, 1, he(72, 16 * 72), vec![0.0; 16]),
        Layer::relu("relu2"),
        Layer::maxpool("pool2", 2, 2),
        Layer::conv("conv3", 16, 32, 3, 1, 1, he(144, 32 * 144), vec![0.0; 32]),
        Layer::relu("relu3"),
        Layer::maxpool("pool3", 3, 3),
        Layer::flatten("flatten"),
        Layer::dense("fc", 288, CLASSES.len(), he(288, 288 * CLASSES.len()), vec![0.0; CLASSES.len()]),
    ];
    Network::new(
        InputShape::new(3, synth::SIZE, synth::SIZE),
        layers,
        CLASSES.iter().map(|c| (*c).to_owned()).collect(),
    )
    .expect("reference architecture composes")
}

/// Per-layer parameter gradients (empty for parameter-free layers).
struct Grads {
    weight: Vec<Vec<f32>>,
    bias: Vec<Vec<f32>>,
}

impl Grads {
    fn zeros(net: &Network) -> Self {
        let (weight, bias) = net
            .layers()
            .iter()
            .map(|l| match &l.op {
                LayerOp::Conv2d(c) => (vec![0.0; c.weight.len()], vec![0.0; c.bias.len()]),
                LayerOp::Dense(d) => (vec![0.0; d.weight.len()], vec![0.0; d.bias.len()]),
                _ => (Vec::new(), Vec::new()),
            })
            .unzip();
        Grads { weight, bias }
    }
}

fn softmax_xent_grad(logits: &[f32], target: usize) -> (f32, Vec<f32>) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let mut grad: Vec<f32> = exps.iter().map(|e| e / sum).collect();
    let loss = -(grad[target].max(1e-12)).ln();
    grad[target] -= 1.0;
    (loss, grad)
}

fn backward(net: &Network, acts: &ActivationStore, target: usize, grads: &mut Grads) -> f32 {
    let (loss, top) = softmax_xent_grad(acts.logits(), target);
    let mut dy = top;
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let x = acts.layer_input(i);
        let need_dx = i > 0;
        dy = match &layer.op {
            LayerOp::Dense(d) => {
                let xin = x.data();
                let mut dx = vec![0.0; d.in_features];
                for o in 0..d.out_features {
                    let g = dy[o];
                    grads.bias[i][o] += g;
                    let row = &d.weight[o * d.in_features..(o + 1) * d.in_features];
                    let grow = &mut grads.weight[i][o * d.in_features..(o + 1) * d.in_features];
                    for k in 0..d.in_features {
                        grow[k] += g * xin[k];
                        dx[k] += g * row[k];
                    }
                }
                dx
            }
            LayerOp::Flatten => dy,
            LayerOp::Relu => {
                let y = acts.output(i).data();
                dy.iter().zip(y).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect()
            }
            LayerOp::MaxPool(p) => {
                let (c, h, w) = x.spatial_dims().expect("spatial");
                let (oh, ow) = p.output_hw(h, w).expect("validated");
                let mut dx = vec![0.0; c * h * w];
                for ci in 0..c {
                    let plane = x.channel(ci);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = (f32::NEG_INFINITY, 0);
                            for ky in 0..p.size {
                                for kx in 0..p.size {
                                    let idx = (oy * p.stride + ky) * w + ox * p.stride + kx;
                                    if plane[idx] > best.0 {
                                        best = (plane[idx], idx);
                                    }
                                }
                            }
                            dx[ci * h * w + best.1] += dy[(ci * oh + oy) * ow + ox];
                        }
                    }
                }
                dx
            }
            LayerOp::AvgPool(p) => {
                let (c, h, w) = x.spatial_dims().expect("spatial");
                let (oh, ow) = p.output_hw(h, w).expect("validated");
                let norm = (p.size * p.size) as f32;
                let mut dx = vec![0.0; c * h * w];
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = dy[(ci * oh + oy) * ow + ox] / norm;
                            for ky in 0..p.size {
                                for kx in 0..p.size {
                                    dx[ci * h * w + (oy * p.stride + ky) * w + ox * p.stride + kx] += g;
                                }
                            }
                        }
                    }
                }
                dx
            }
            LayerOp::Conv2d(conv) => {
                let (c, h, w) = x.spatial_dims().expect("spatial");
                let (oh, ow) = conv.output_hw(h, w).expect("validated");
                let (k, s, pad) = (conv.kernel, conv.stride, conv.padding as isize);
                let mut dx = if need_dx { vec![0.0; c * h * w] } else { Vec::new() };
                for o in 0..conv.out_channels {
                    let gplane = &dy[o * oh * ow..(o + 1) * oh * ow];
                    grads.bias[i][o] += gplane.iter().sum::<f32>();
                    for ci in 0..c {
                        let xin = x.channel(ci);
                        for ky in 0..k {
                            for kx in 0..k {
                                let widx = ((o * c + ci) * k + ky) * k + kx;
                                let wv = conv.weight[widx];
                                let mut gw = 0.0;
                                for oy in 0..oh {
                                    let iy = (oy * s + ky) as isize - pad;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let iy = iy as usize;
                                    for ox in 0..ow {
                                        let ix = (ox * s + kx) as isize - pad;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let g = gplane[oy * ow + ox];
                                        gw += g * xin[iy * w + ix as usize];
                                        if need_dx {
                                            dx[ci * h * w + iy * w + ix as usize] += g * wv;
                                        }
                                    }
                                }
                                grads.weight[i][widx] += gw;
                            }
                        }
                    }
                }
                dx
            }
        };
        if !need_dx {
            break;
        }
    }
    loss
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

/// Runs SGD in place. The learning rate drops tenfold for the last quarter
/// of the epochs.
pub fn train(
    net: &mut Network,
    data: &[(Image, usize)],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Input("training needs data and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed ^ 0x5eed);
    let mut velocity = Grads::zeros(net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = if epoch * 4 >= cfg.epochs * 3 {
            cfg.learning_rate * 0.1
        } else {
            cfg.learning_rate
        };
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Grads::zeros(net);
            for &j in batch {
                let (img, target) = &data[j];
                let (pred, acts) = net.forward(img, &NeuronMask::empty())?;
                correct += usize::from(pred.predicted_index == *target);
                loss_sum += backward(net, &acts, *target, &mut grads) as f64;
            }
            let scale = 1.0 / batch.len() as f32;
            for (i, layer) in net.layers_mut().iter_mut().enumerate() {
                let (weight, bias) = match &mut layer.op {
                    LayerOp::Conv2d(c) => (&mut c.weight, &mut c.bias),
                    LayerOp::Dense(d) => (&mut d.weight, &mut d.bias),
                    _ => continue,
                };
                for (params, g, v, decay) in [
                    (weight, &grads.weight[i], &mut velocity.weight[i], cfg.weight_decay),
                    (bias, &grads.bias[i], &mut velocity.bias[i], 0.0),
                ] {
                    for ((p, &g), v) in params.iter_mut().zip(g).zip(v.iter_mut()) {
                        *v = cfg.momentum * *v + g * scale + decay * *p;
                        *p -= lr * *v;
                    }
                }
            }
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

pub fn accuracy(net: &Network, data: &[(Image, usize)]) -> Result<f64> {
    let mut correct = 0;
    for (img, target) in data {
        let (pred, _) = net.forward(img, &NeuronMask::empty())?;
        correct += usize::from(pred.predicted_index == *target);
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn split_data(seed: u64, split: Split, per_class: usize) -> Vec<(Image, usize)> {
    synth::samples(seed, split, per_class)
        .into_iter()
        .map(|s| (s.image, s.class_index))
        .collect()
}

/// Trains the reference model and records its test accuracy in the
/// network metadata.
pub fn train_reference(cfg: &TrainConfig, on_epoch: impl FnMut(&EpochStats)) -> Result<Network> {
    let mut net = reference_architecture(cfg.init_seed);
    let train_data = split_data(cfg.data_seed, Split::Train, cfg.train_per_class);
    let history = train(&mut net, &train_data, cfg, on_epoch)?;
    let test_data = split_data(cfg.data_seed, Split::Test, cfg.test_per_class);
    let test_accuracy = accuracy(&net, &test_data)?;
    Ok(net.with_metadata(json!({
        "test_accuracy": test_accuracy,
        "test_split": {"generator": "synth", "seed": cfg.data_seed, "per_class": cfg.test_per_class},
        "train_config": cfg,
        "final_train_loss": history.last().map(|h| h.loss),
    })))
}

#[cfg(test)]
fn loss_of(net: &Network, img: &Image, target: usize) -> f32 {
    let (_, acts) = net.forward(img, &NeuronMask::empty()).unwrap();
    softmax_xent_grad(acts.logits(), target).0
}

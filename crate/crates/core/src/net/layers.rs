use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        InputShape {
            channels,
            height,
            width,
        }
    }
}

/// 2D convolution with square kernels. Weights are `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if self.stride == 0 || ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    #[inline]
    pub fn weight_at(&self, out: usize, inp: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((out * self.in_channels + inp) * self.kernel + ky) * self.kernel + kx]
    }
}

/// Fully connected layer. Weights are `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool {
    pub size: usize,
    pub stride: usize,
}

impl Pool {
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.stride == 0 || self.size == 0 || h < self.size || w < self.size {
            return None;
        }
        Some(((h - self.size) / self.stride + 1, (w - self.size) / self.stride + 1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Conv2d(Conv2d),
    Relu,
    MaxPool(Pool),
    AvgPool(Pool),
    Flatten,
    Dense(Dense),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
}

impl Layer {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Self {
        Layer {
            name: name.into(),
            op: LayerOp::Conv2d(Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight,
                bias,
            }),
        }
    }

    pub fn dense(name: &str, in_features: usize, out_features: usize, weight: Vec<f32>, bias: Vec<f32>) -> Self {
        Layer {
            name: name.into(),
            op: LayerOp::Dense(Dense {
                in_features,
                out_features,
                weight,
                bias,
            }),
        }
    }

    pub fn relu(name: &str) -> Self {
        Layer {
            name: name.into(),
            op: LayerOp::Relu,
        }
    }

    pub fn maxpool(name: &str, size: usize, stride: usize) -> Self {
        Layer {
            name: name.into(),
            op: LayerOp::MaxPool(Pool { size, stride }),
        }
    }

    pub fn avgpool(name: &str, size: usize, stride: usize) -> Self {
        Layer {
            name: name.into(),
            op: LayerOp::AvgPool(Pool { size, stride }),
        }
    }

    pub fn flatten(name: &str) -> Self {
        Layer {
            name: name.into(),
            op: LayerOp::Flatten,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self.op {
            LayerOp::Conv2d(_) => "conv2d",
            LayerOp::Relu => "relu",
            LayerOp::MaxPool(_) => "maxpool",
            LayerOp::AvgPool(_) => "avgpool",
            LayerOp::Flatten => "flatten",
            LayerOp::Dense(_) => "dense",
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let fail = |msg: String| Error::Composition(format!("layer '{}': {msg}", self.name));
        match &self.op {
            LayerOp::Conv2d(conv) => {
                let &[c, h, w] = input else {
                    return Err(fail(format!("expects a spatial input, got {input:?}")));
                };
                if c != conv.in_channels {
                    return Err(fail(format!("expects {} input channels, got {c}", conv.in_channels)));
                }
                let k2 = conv.kernel * conv.kernel;
                if conv.weight.len() != conv.out_channels * conv.in_channels * k2
                    || conv.bias.len() != conv.out_channels
                {
                    return Err(fail("weight or bias length does not match declared shape".into()));
                }
                let (oh, ow) = conv
                    .output_hw(h, w)
                    .ok_or_else(|| fail(format!("kernel does not fit input {h}x{w}")))?;
                Ok(vec![conv.out_channels, oh, ow])
            }
            LayerOp::Relu => Ok(input.to_vec()),
            LayerOp::MaxPool(pool) | LayerOp::AvgPool(pool) => {
                let &[c, h, w] = input else {
                    return Err(fail(format!("expects a spatial input, got {input:?}")));
                };
                let (oh, ow) = pool
                    .output_hw(h, w)
                    .ok_or_else(|| fail(format!("window does not fit input {h}x{w}")))?;
                Ok(vec![c, oh, ow])
            }
            LayerOp::Flatten => Ok(vec![input.iter().product()]),
            LayerOp::Dense(dense) => {
                let &[n] = input else {
                    return Err(fail(format!("expects a flat input, got {input:?}")));
                };
                if n != dense.in_features {
                    return Err(fail(format!("expects {} input features, got {n}", dense.in_features)));
                }
                if dense.weight.len() != dense.in_features * dense.out_features
                    || dense.bias.len() != dense.out_features
                {
                    return Err(fail("weight or bias length does not match declared shape".into()));
                }
                Ok(vec![dense.out_features])
            }
        }
    }
}

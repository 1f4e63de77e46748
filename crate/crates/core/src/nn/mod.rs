//! Minimal feed-forward engine: dense/ReLU/conv layers over [`Tensor`],
//! reverse-mode gradients with respect to parameters and inputs, and SGD
//! with momentum. Forward and gradient passes never mutate the model.

mod grad;
mod loss;
mod optim;

pub use grad::{batch_losses, input_gradient, param_gradients};
pub(crate) use grad::{backward, forward_cached, Cache};
pub use loss::{argmax, log_softmax, loss_value, softmax, BatchTargets, LossKind, Target};
pub(crate) use loss::{dlogits_row, kl_terms};
pub use optim::{sgd_step, LrSchedule, OptimizerState};

use crate::error::{Error, Result};
use crate::rng::XorShiftRng;
use crate::tensor::Tensor;

/// Architecture description of one layer; carries no parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    /// Stride-1 convolution with zero 'same' padding and a square odd
    /// kernel. Features are laid out channel-major as `c * h * w`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        height: usize,
        width: usize,
    },
}

impl LayerSpec {
    fn output_width(&self, input_width: usize) -> Result<usize> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs != input_width {
                    return Err(Error::config(format!(
                        "dense layer expects {} inputs, previous layer provides {}",
                        inputs, input_width
                    )));
                }
                if inputs == 0 || outputs == 0 {
                    return Err(Error::config("dense layer extents must be positive"));
                }
                Ok(outputs)
            }
            LayerSpec::Relu => Ok(input_width),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                height,
                width,
            } => {
                if in_channels * height * width != input_width {
                    return Err(Error::config(format!(
                        "conv layer expects {} inputs ({}x{}x{}), previous layer provides {}",
                        in_channels * height * width,
                        in_channels,
                        height,
                        width,
                        input_width
                    )));
                }
                if kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::config("conv kernel must be odd for 'same' padding"));
                }
                if out_channels == 0 || height == 0 || width == 0 {
                    return Err(Error::config("conv layer extents must be positive"));
                }
                Ok(out_channels * height * width)
            }
        }
    }
}

/// A layer together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        /// `[outputs, inputs]`, row-major.
        weight: Tensor,
        /// `[outputs]`.
        bias: Tensor,
    },
    Relu,
    Conv2d {
        /// `[out_channels, in_channels, kernel, kernel]`, row-major.
        weight: Tensor,
        bias: Tensor,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        height: usize,
        width: usize,
    },
}

impl Layer {
    fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense { weight, .. } => LayerSpec::Dense {
                inputs: weight.shape()[1],
                outputs: weight.shape()[0],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                height,
                width,
                ..
            } => LayerSpec::Conv2d {
                in_channels: *in_channels,
                out_channels: *out_channels,
                kernel: *kernel,
                height: *height,
                width: *width,
            },
        }
    }
}

/// Ordered layer stack mapping `[batch, input_dim]` to `[batch, class_count]`
/// logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    input_dim: usize,
    class_count: usize,
}

impl Model {
    /// Build a model with He-normal weights and zero biases.
    pub fn init(specs: &[LayerSpec], rng: &mut XorShiftRng) -> Result<Model> {
        let (input_dim, class_count) = validate_chain(specs)?;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            layers.push(init_layer(spec, rng));
        }
        Ok(Model {
            layers,
            input_dim,
            class_count,
        })
    }

    /// Build a model from explicit parameter tensors (checkpoint loading,
    /// hand-constructed test fixtures). Tensor shapes must match the specs.
    pub fn from_params(specs: &[LayerSpec], params: &[Tensor]) -> Result<Model> {
        let (input_dim, class_count) = validate_chain(specs)?;
        let mut layers = Vec::with_capacity(specs.len());
        let mut cursor = 0usize;
        for spec in specs {
            let take = |cursor: &mut usize| -> Result<Tensor> {
                let t = params
                    .get(*cursor)
                    .cloned()
                    .ok_or_else(|| Error::config("too few parameter tensors"))?;
                *cursor += 1;
                Ok(t)
            };
            match *spec {
                LayerSpec::Dense { inputs, outputs } => {
                    let weight = take(&mut cursor)?;
                    let bias = take(&mut cursor)?;
                    if weight.shape() != [outputs, inputs] || bias.shape() != [outputs] {
                        return Err(Error::config("dense parameter shape mismatch"));
                    }
                    layers.push(Layer::Dense { weight, bias });
                }
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    height,
                    width,
                } => {
                    let weight = take(&mut cursor)?;
                    let bias = take(&mut cursor)?;
                    if weight.shape() != [out_channels, in_channels, kernel, kernel]
                        || bias.shape() != [out_channels]
                    {
                        return Err(Error::config("conv parameter shape mismatch"));
                    }
                    layers.push(Layer::Conv2d {
                        weight,
                        bias,
                        in_channels,
                        out_channels,
                        kernel,
                        height,
                        width,
                    });
                }
            }
        }
        if cursor != params.len() {
            return Err(Error::config("too many parameter tensors"));
        }
        Ok(Model {
            layers,
            input_dim,
            class_count,
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameter tensors in a stable order: per layer, weight then bias.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::Relu => {}
            }
        }
        out
    }

    /// Stable names matching [`Model::param_tensors`] order, e.g.
    /// `layer0.weight`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense { .. } | Layer::Conv2d { .. } => {
                    out.push(format!("layer{i}.weight"));
                    out.push(format!("layer{i}.bias"));
                }
                Layer::Relu => {}
            }
        }
        out
    }

    /// Logits for a `[batch, input_dim]` batch (a 1-D `[input_dim]` tensor
    /// is treated as a single-example batch).
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        if inputs.row_len() != self.input_dim {
            return Err(Error::config(format!(
                "forward expects rows of width {}, got {}",
                self.input_dim,
                inputs.row_len()
            )));
        }
        let (logits, _) = forward_cached(self, inputs);
        Ok(logits)
    }

    /// Predicted class per example (lowest index wins ties).
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(inputs)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }
}

fn validate_chain(specs: &[LayerSpec]) -> Result<(usize, usize)> {
    let first = specs
        .first()
        .ok_or_else(|| Error::config("model needs at least one layer"))?;
    let input_dim = match *first {
        LayerSpec::Dense { inputs, .. } => inputs,
        LayerSpec::Conv2d {
            in_channels,
            height,
            width,
            ..
        } => in_channels * height * width,
        LayerSpec::Relu => {
            return Err(Error::config("first layer must be dense or conv"));
        }
    };
    let mut width = input_dim;
    for spec in specs {
        width = spec.output_width(width)?;
    }
    if width < 2 {
        return Err(Error::config("model must output at least two classes"));
    }
    Ok((input_dim, width))
}

fn init_layer(spec: &LayerSpec, rng: &mut XorShiftRng) -> Layer {
    match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            let scale = (2.0 / inputs as f64).sqrt();
            let data: Vec<f64> = (0..inputs * outputs).map(|_| rng.normal() * scale).collect();
            Layer::Dense {
                weight: Tensor::new(vec![outputs, inputs], data).expect("finite init"),
                bias: Tensor::zeros(vec![outputs]),
            }
        }
        LayerSpec::Relu => Layer::Relu,
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            height,
            width,
        } => {
            let fan_in = in_channels * kernel * kernel;
            let scale = (2.0 / fan_in as f64).sqrt();
            let n = out_channels * in_channels * kernel * kernel;
            let data: Vec<f64> = (0..n).map(|_| rng.normal() * scale).collect();
            Layer::Conv2d {
                weight: Tensor::new(vec![out_channels, in_channels, kernel, kernel], data)
                    .expect("finite init"),
                bias: Tensor::zeros(vec![out_channels]),
                in_channels,
                out_channels,
                kernel,
                height,
                width,
            }
        }
    }
}

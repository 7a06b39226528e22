//! Layers, losses, optimizer and initialization.
//!
//! Every layer works on a leading batch dimension: fully-connected inputs are
//! `[batch, features]`, feature maps are `[batch, channels, height, width]`.

mod adam;
mod conv;
mod dense;
pub mod gradcheck;
mod init;
mod loss;
mod merger;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use conv::{conv_output_side, same_padding, tconv_output_side};
pub use init::{init_params, LayerDesc, FIRST_LAYER_STD};
pub use loss::{loss_and_grad, Distortion, LossOutput};
pub use merger::{MERGED_LEN, MERGED_SIDE};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    FullyConnected,
    Conv2d,
    TConv2d,
    Merger,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    LeakyRelu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu if x < 0.0 => LEAKY_SLOPE * x,
            _ => x,
        }
    }

    /// Derivative expressed through the activation output. Leaky-ReLU keeps the
    /// sign of its input, and the tie at 0 takes the positive-branch slope.
    #[inline]
    pub fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu if y < 0.0 => LEAKY_SLOPE,
            _ => 1.0,
        }
    }
}

/// Parameters of one layer.
///
/// Weight layouts:
/// * fully-connected: `[out, in]`
/// * conv2d: `[out_ch, in_ch, k, k]`
/// * tconv2d: `[in_ch, out_ch, k, k]`, i.e. the kernel of the convolution it is the adjoint of
/// * merger: `[channels, 16, in0 + in1]`, biases `[channels, 16]`
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub weights: Tensor,
    pub biases: Tensor,
    pub stride: usize,
    pub activation: Activation,
}

/// Gradients with respect to one layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub weights: Tensor,
    pub biases: Tensor,
}

impl ParamGrads {
    pub fn zeros_like(params: &LayerParams) -> ParamGrads {
        ParamGrads {
            weights: Tensor::zeros(params.weights.shape()),
            biases: Tensor::zeros(params.biases.shape()),
        }
    }
}

/// State kept by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    inputs: Vec<Tensor>,
    output: Tensor,
}

impl LayerCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl LayerParams {
    pub fn fully_connected(weights: Tensor, biases: Tensor, activation: Activation) -> Result<LayerParams> {
        let p = LayerParams { kind: LayerKind::FullyConnected, weights, biases, stride: 1, activation };
        p.validate()?;
        Ok(p)
    }

    pub fn conv2d(weights: Tensor, biases: Tensor, stride: usize, activation: Activation) -> Result<LayerParams> {
        let p = LayerParams { kind: LayerKind::Conv2d, weights, biases, stride, activation };
        p.validate()?;
        Ok(p)
    }

    pub fn tconv2d(weights: Tensor, biases: Tensor, stride: usize, activation: Activation) -> Result<LayerParams> {
        let p = LayerParams { kind: LayerKind::TConv2d, weights, biases, stride, activation };
        p.validate()?;
        Ok(p)
    }

    pub fn merger(weights: Tensor, biases: Tensor) -> Result<LayerParams> {
        let p = LayerParams {
            kind: LayerKind::Merger,
            weights,
            biases,
            stride: 1,
            activation: Activation::LeakyRelu,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weights.shape();
        let bs = self.biases.shape();
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("{:?} layer: {msg}", self.kind)));
        match self.kind {
            LayerKind::FullyConnected => {
                if ws.len() != 2 || bs != [ws[0]] {
                    return bad("weights must be [out, in] and biases [out]");
                }
            }
            LayerKind::Conv2d | LayerKind::TConv2d => {
                if ws.len() != 4 || ws[2] != ws[3] {
                    return bad("kernels must be [a, b, k, k]");
                }
                let out = if self.kind == LayerKind::Conv2d { ws[0] } else { ws[1] };
                if bs != [out] {
                    return bad("bias length must equal the output channel count");
                }
                if self.stride == 0 || self.stride > ws[2] {
                    return bad("stride must lie in 1..=kernel size");
                }
            }
            LayerKind::Merger => {
                if ws.len() != 3 || ws[1] != MERGED_LEN || bs != [ws[0], ws[1]] {
                    return bad("weights must be [l, 16, in] and biases [l, 16]");
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Output channels (conv kinds, merger) or neurons (fully-connected).
    pub fn out_size(&self) -> usize {
        match self.kind {
            LayerKind::TConv2d => self.weights.shape()[1],
            _ => self.weights.shape()[0],
        }
    }

    pub fn in_size(&self) -> usize {
        match self.kind {
            LayerKind::TConv2d => self.weights.shape()[0],
            LayerKind::Merger => self.weights.shape()[0],
            _ => self.weights.shape()[1],
        }
    }

    pub fn kernel(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d | LayerKind::TConv2d => self.weights.shape()[2],
            _ => 1,
        }
    }

    /// Forward pass of a single-input layer, keeping what backward needs.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, LayerCache)> {
        let output = self.infer(input)?;
        let cache = LayerCache { inputs: vec![input.clone()], output: output.clone() };
        Ok((output, cache))
    }

    /// Forward pass without a cache.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        match self.kind {
            LayerKind::FullyConnected => dense::forward(self, input),
            LayerKind::Conv2d => conv::conv_forward(self, input),
            LayerKind::TConv2d => conv::tconv_forward(self, input),
            LayerKind::Merger => Err(Error::InvalidArgument(
                "the merger takes two inputs; use merge/merge_forward".into(),
            )),
        }
    }

    /// Merger forward on the two branch outputs `[b, l, h0, w0]` and `[b, l, h1, w1]`.
    pub fn merge(&self, z0: &Tensor, z1: &Tensor) -> Result<Tensor> {
        merger::forward(self, z0, z1)
    }

    pub fn merge_forward(&self, z0: &Tensor, z1: &Tensor) -> Result<(Tensor, LayerCache)> {
        let output = merger::forward(self, z0, z1)?;
        let cache = LayerCache { inputs: vec![z0.clone(), z1.clone()], output: output.clone() };
        Ok((output, cache))
    }

    /// Backward pass: returns one gradient per forward input plus the parameter gradients.
    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<(Vec<Tensor>, ParamGrads)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::Precondition(format!(
                "upstream gradient {:?} does not match the cached output {:?}",
                grad_out.shape(),
                cache.output.shape()
            )));
        }
        let expected_inputs = if self.kind == LayerKind::Merger { 2 } else { 1 };
        if cache.inputs.len() != expected_inputs {
            return Err(Error::Precondition("cache was produced by a different layer kind".into()));
        }
        // dL/d(pre-activation)
        let mut delta = grad_out.clone();
        for (d, &y) in delta.data_mut().iter_mut().zip(cache.output.data()) {
            *d *= self.activation.slope_from_output(y);
        }
        match self.kind {
            LayerKind::FullyConnected => {
                let (gi, gp) = dense::backward(self, &cache.inputs[0], &delta)?;
                Ok((vec![gi], gp))
            }
            LayerKind::Conv2d => {
                let (gi, gp) = conv::conv_backward(self, &cache.inputs[0], &delta)?;
                Ok((vec![gi], gp))
            }
            LayerKind::TConv2d => {
                let (gi, gp) = conv::tconv_backward(self, &cache.inputs[0], &delta)?;
                Ok((vec![gi], gp))
            }
            LayerKind::Merger => {
                let (g0, g1, gp) = merger::backward(self, &cache.inputs[0], &cache.inputs[1], &delta)?;
                Ok((vec![g0, g1], gp))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values_and_slopes() {
        let a = Activation::LeakyRelu;
        assert_eq!(a.apply(3.0), 3.0);
        assert_eq!(a.apply(-2.0), -0.2);
        assert_eq!(a.slope_from_output(0.0), 1.0);
        assert_eq!(a.slope_from_output(-0.2), 0.1);
        assert_eq!(Activation::Identity.slope_from_output(-5.0), 1.0);
    }

    #[test]
    fn validate_rejects_bad_bias() {
        let r = LayerParams::fully_connected(Tensor::zeros(&[3, 4]), Tensor::zeros(&[4]), Activation::Identity);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let r = LayerParams::conv2d(Tensor::zeros(&[2, 1, 3, 3]), Tensor::zeros(&[1]), 1, Activation::Identity);
        assert!(r.is_err());
    }

    #[test]
    fn backward_with_foreign_cache_is_precondition_error() {
        let fc = LayerParams::fully_connected(Tensor::zeros(&[2, 2]), Tensor::zeros(&[2]), Activation::Identity)
            .unwrap();
        let other = LayerParams::fully_connected(Tensor::zeros(&[3, 2]), Tensor::zeros(&[3]), Activation::Identity)
            .unwrap();
        let (_, cache) = other.forward(&Tensor::zeros(&[1, 2])).unwrap();
        let err = fc.backward(&cache, &Tensor::zeros(&[1, 2])).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}

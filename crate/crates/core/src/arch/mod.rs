//! The two predictor families and their end-to-end evaluation.
//!
//! * fully-connected `f_m`: `5m² → p → p → p → m²`, leaky-ReLU on the first three layers.
//! * convolutional `g_m`: two conv stacks (one per context rectangle), a
//!   channelwise merger onto a 4×4×l stack, then a transposed-conv decoder.
//!
//! Every conv stack has stride product `m / 4`, so the branch outputs are
//! always 8×4×l (from X0) and 4×12×l (from X1), and the decoder brings the
//! 4×4×l merged stack back to m×m.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, PredictorSet, CHECKPOINT_VERSION};

use crate::context::{postprocess_prediction, ContextPair};
use crate::error::{invalid, Error, Result};
use crate::nn::{
    init_params, Activation, LayerCache, LayerDesc, LayerKind, LayerParams, ParamGrads, MERGED_LEN, MERGED_SIDE,
};
use crate::tensor::Tensor;
use rand::Rng;

/// Internal width of the fully-connected predictors.
pub const FC_INTERNAL: usize = 1200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    FullyConnected,
    Convolutional,
}

impl Family {
    /// Family used by the codec for a block width: fully-connected up to 8, convolutional above.
    pub fn for_block_width(m: usize) -> Family {
        if m <= 8 {
            Family::FullyConnected
        } else {
            Family::Convolutional
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::FullyConnected => "fc",
            Family::Convolutional => "conv",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Family> {
        match s {
            "fc" | "fully-connected" => Ok(Family::FullyConnected),
            "conv" | "convolutional" => Ok(Family::Convolutional),
            _ => Err(invalid!("unknown network family {s:?}")),
        }
    }
}

/// Layer-by-layer description of one predictor.
///
/// For the convolutional family the layers are stored as
/// `[branch X0..., branch X1..., merger, decoder...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub family: Family,
    pub m: usize,
    pub layers: Vec<LayerDesc>,
}

fn fc_desc(n_in: usize, n_out: usize, activation: Activation) -> LayerDesc {
    LayerDesc { kind: LayerKind::FullyConnected, in_size: n_in, out_size: n_out, kernel: 1, stride: 1, activation }
}

/// `f_m` with internal size `p`.
pub fn build_fc(m: usize, p: usize) -> Result<NetworkSpec> {
    if ![4, 8, 16].contains(&m) {
        return Err(invalid!("fully-connected predictors exist for m in {{4, 8, 16}}, not {m}"));
    }
    if p == 0 {
        return Err(invalid!("internal size must be positive"));
    }
    let lr = Activation::LeakyRelu;
    Ok(NetworkSpec {
        family: Family::FullyConnected,
        m,
        layers: vec![
            fc_desc(5 * m * m, p, lr),
            fc_desc(p, p, lr),
            fc_desc(p, p, lr),
            fc_desc(p, m * m, Activation::Identity),
        ],
    })
}

/// `(kernel, output channels, stride)` per conv layer of `g_m`.
pub fn conv_stack(m: usize) -> Result<&'static [(usize, usize, usize)]> {
    Ok(match m {
        4 => &[(3, 32, 1), (3, 32, 1)],
        8 => &[(5, 64, 2), (3, 64, 1)],
        16 => &[(5, 64, 2), (3, 64, 1), (5, 128, 2), (3, 128, 1)],
        32 => &[(5, 64, 2), (5, 128, 2), (3, 128, 1), (5, 256, 2), (3, 256, 1)],
        64 => &[(5, 64, 2), (5, 128, 2), (5, 256, 2), (5, 512, 2), (3, 512, 1)],
        _ => return Err(invalid!("convolutional predictors exist for m in {{4, 8, 16, 32, 64}}, not {m}")),
    })
}

/// `g_m` as tabulated.
pub fn build_conv(m: usize) -> Result<NetworkSpec> {
    build_conv_scaled(m, 1)
}

/// `g_m` with every channel count divided by `divisor` (at least one channel).
/// Used to run gradient checks on the same topology at small cost.
pub fn build_conv_scaled(m: usize, divisor: usize) -> Result<NetworkSpec> {
    if divisor == 0 {
        return Err(invalid!("channel divisor must be positive"));
    }
    let stack = conv_stack(m)?;
    let lr = Activation::LeakyRelu;
    let mut branch = Vec::with_capacity(stack.len());
    let mut c_in = 1;
    for &(k, c, s) in stack {
        let c_out = (c / divisor).max(1);
        branch.push(LayerDesc { kind: LayerKind::Conv2d, in_size: c_in, out_size: c_out, kernel: k, stride: s, activation: lr });
        c_in = c_out;
    }
    let l = c_in;
    let mut layers = branch.clone();
    layers.extend(branch.iter().copied());
    layers.push(LayerDesc {
        kind: LayerKind::Merger,
        in_size: 8 * 4 + 4 * 12,
        out_size: l,
        kernel: 1,
        stride: 1,
        activation: lr,
    });
    for (i, d) in branch.iter().enumerate().rev() {
        let last = i == 0;
        layers.push(LayerDesc {
            kind: LayerKind::TConv2d,
            in_size: d.out_size,
            out_size: d.in_size,
            kernel: d.kernel,
            stride: d.stride,
            activation: if last { Activation::Identity } else { lr },
        });
    }
    Ok(NetworkSpec { family: Family::Convolutional, m, layers })
}

impl NetworkSpec {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerDesc::param_count).sum()
    }

    /// Number of conv layers in each branch (convolutional family).
    pub fn branch_len(&self) -> usize {
        match self.family {
            Family::FullyConnected => 0,
            Family::Convolutional => (self.layers.len() - 1) / 3,
        }
    }

    /// Channel count `l` of the merged stack.
    pub fn merged_channels(&self) -> Option<usize> {
        self.layers.iter().find(|d| d.kind == LayerKind::Merger).map(|d| d.out_size)
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            Family::FullyConnected => {
                let n = self.layers.len();
                if n == 0 || self.layers.iter().any(|d| d.kind != LayerKind::FullyConnected) {
                    return Err(invalid!("fully-connected spec must only hold fully-connected layers"));
                }
                if self.layers[0].in_size != 5 * self.m * self.m || self.layers[n - 1].out_size != self.m * self.m {
                    return Err(invalid!("fully-connected spec does not map 5m² inputs to m² outputs"));
                }
                for w in self.layers.windows(2) {
                    if w[0].out_size != w[1].in_size {
                        return Err(invalid!("fully-connected layer sizes do not chain"));
                    }
                }
            }
            Family::Convolutional => {
                let b = self.branch_len();
                if b == 0 || self.layers.len() != 3 * b + 1 {
                    return Err(invalid!("convolutional spec must be two branches, a merger and a decoder"));
                }
                let (br0, rest) = self.layers.split_at(b);
                let (br1, rest) = rest.split_at(b);
                let (merger, decoder) = rest.split_at(1);
                let stride_product: usize = br0.iter().map(|d| d.stride).product();
                if br0 != br1
                    || br0.iter().any(|d| d.kind != LayerKind::Conv2d)
                    || decoder.iter().any(|d| d.kind != LayerKind::TConv2d)
                    || merger[0].kind != LayerKind::Merger
                    || stride_product * MERGED_SIDE != self.m
                    || br0[0].in_size != 1
                    || decoder[b - 1].out_size != 1
                    || merger[0].out_size != br0[b - 1].out_size
                    || decoder[0].in_size != merger[0].out_size
                {
                    return Err(invalid!("inconsistent convolutional spec for m = {}", self.m));
                }
            }
        }
        Ok(())
    }
}

/// Instantiated predictor: a spec and one parameter set per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<LayerParams>,
}

/// Forward state kept for [`Network::backward`].
#[derive(Debug)]
pub struct Trace {
    batch: usize,
    caches: Vec<LayerCache>,
}

impl Network {
    /// Fresh parameters: the first layer of each conv branch (or of the
    /// fully-connected stack) gets the narrow Gaussian, everything else Xavier.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Network> {
        spec.validate()?;
        let b = spec.branch_len();
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let first = i == 0 || (spec.family == Family::Convolutional && i == b);
                init_params(d, first, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network { spec, layers })
    }

    /// Network with every weight and bias set to zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Network> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|d| LayerParams {
                kind: d.kind,
                weights: Tensor::zeros(&d.weight_shape()),
                biases: Tensor::zeros(&d.bias_shape()),
                stride: d.stride,
                activation: d.activation,
            })
            .collect();
        Ok(Network { spec, layers })
    }

    pub fn from_parts(spec: NetworkSpec, layers: Vec<LayerParams>) -> Result<Network> {
        spec.validate()?;
        if layers.len() != spec.layers.len() {
            return Err(invalid!("spec has {} layers, got {}", spec.layers.len(), layers.len()));
        }
        for (d, p) in spec.layers.iter().zip(&layers) {
            p.validate()?;
            if p.kind != d.kind
                || p.weights.shape() != d.weight_shape().as_slice()
                || p.stride != d.stride
                || p.activation != d.activation
            {
                return Err(invalid!("layer parameters do not match the spec"));
            }
        }
        Ok(Network { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// All parameter tensors in declaration order: weights then biases per layer.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.biases]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.biases]).collect()
    }

    pub fn weight_tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().map(|l| &l.weights).collect()
    }

    fn check_context(&self, ctx: &ContextPair) -> Result<()> {
        if ctx.m != self.spec.m {
            return Err(invalid!("network predicts m = {}, context is for m = {}", self.spec.m, ctx.m));
        }
        Ok(())
    }

    /// Stacks centered contexts into the network input(s): `[batch, 5m²]` for the
    /// fully-connected family, `[batch, 1, 2m, m]` and `[batch, 1, m, 3m]` otherwise.
    pub fn input_tensors(&self, contexts: &[&ContextPair]) -> Result<Vec<Tensor>> {
        for c in contexts {
            self.check_context(c)?;
        }
        let m = self.spec.m;
        let b = contexts.len();
        match self.spec.family {
            Family::FullyConnected => {
                let mut data = Vec::with_capacity(b * 5 * m * m);
                for c in contexts {
                    data.extend_from_slice(c.vectorize_centered().data());
                }
                Ok(vec![Tensor::from_vec(&[b, 5 * m * m], data)?])
            }
            Family::Convolutional => {
                let mut d0 = Vec::with_capacity(b * 2 * m * m);
                let mut d1 = Vec::with_capacity(b * 3 * m * m);
                for c in contexts {
                    let (x0, x1) = c.centered();
                    d0.extend_from_slice(x0.data());
                    d1.extend_from_slice(x1.data());
                }
                Ok(vec![Tensor::from_vec(&[b, 1, 2 * m, m], d0)?, Tensor::from_vec(&[b, 1, m, 3 * m], d1)?])
            }
        }
    }

    /// Centered predictions `[batch, m²]` without keeping a trace.
    pub fn infer_batch(&self, contexts: &[&ContextPair]) -> Result<Tensor> {
        let inputs = self.input_tensors(contexts)?;
        let b = contexts.len();
        let mm = self.spec.m * self.spec.m;
        match self.spec.family {
            Family::FullyConnected => {
                let mut x = inputs.into_iter().next().expect("one input");
                if b == 1 {
                    x = x.reshape(&[5 * mm])?;
                }
                for l in &self.layers {
                    x = l.infer(&x)?;
                }
                x.reshape(&[b, mm])
            }
            Family::Convolutional => {
                let nb = self.spec.branch_len();
                let mut it = inputs.into_iter();
                let mut z0 = it.next().expect("x0");
                let mut z1 = it.next().expect("x1");
                for l in &self.layers[..nb] {
                    z0 = l.infer(&z0)?;
                }
                for l in &self.layers[nb..2 * nb] {
                    z1 = l.infer(&z1)?;
                }
                let mut z = self.layers[2 * nb].merge(&z0, &z1)?;
                for l in &self.layers[2 * nb + 1..] {
                    z = l.infer(&z)?;
                }
                z.reshape(&[b, mm])
            }
        }
    }

    /// Centered prediction for one context, shaped `[m, m]`.
    pub fn predict_centered(&self, ctx: &ContextPair) -> Result<Tensor> {
        let m = self.spec.m;
        self.infer_batch(&[ctx])?.reshape(&[m, m])
    }

    /// Full pipeline: center, run the network, add α back and clip to [0, 255].
    pub fn predict_block(&self, ctx: &ContextPair) -> Result<Tensor> {
        Ok(postprocess_prediction(&self.predict_centered(ctx)?, ctx.alpha))
    }

    /// Training forward pass over a minibatch; returns `[batch, m²]` centered predictions.
    pub fn forward(&self, contexts: &[&ContextPair]) -> Result<(Tensor, Trace)> {
        self.forward_tensors(self.input_tensors(contexts)?)
    }

    /// [`Network::forward`] on already stacked inputs (see [`Network::input_tensors`]).
    pub fn forward_tensors(&self, inputs: Vec<Tensor>) -> Result<(Tensor, Trace)> {
        let expected = match self.spec.family {
            Family::FullyConnected => 1,
            Family::Convolutional => 2,
        };
        if inputs.len() != expected || inputs[0].shape().len() < 2 {
            return Err(invalid!("expected {expected} batched input tensor(s)"));
        }
        let b = inputs[0].shape()[0];
        let mm = self.spec.m * self.spec.m;
        let mut caches = Vec::with_capacity(self.layers.len());
        let out = match self.spec.family {
            Family::FullyConnected => {
                let mut x = inputs.into_iter().next().expect("one input");
                for l in &self.layers {
                    let (y, c) = l.forward(&x)?;
                    caches.push(c);
                    x = y;
                }
                x
            }
            Family::Convolutional => {
                let nb = self.spec.branch_len();
                let mut it = inputs.into_iter();
                let mut z0 = it.next().expect("x0");
                let mut z1 = it.next().expect("x1");
                for l in &self.layers[..nb] {
                    let (y, c) = l.forward(&z0)?;
                    caches.push(c);
                    z0 = y;
                }
                for l in &self.layers[nb..2 * nb] {
                    let (y, c) = l.forward(&z1)?;
                    caches.push(c);
                    z1 = y;
                }
                let (mut z, c) = self.layers[2 * nb].merge_forward(&z0, &z1)?;
                caches.push(c);
                for l in &self.layers[2 * nb + 1..] {
                    let (y, c) = l.forward(&z)?;
                    caches.push(c);
                    z = y;
                }
                z
            }
        };
        Ok((out.reshape(&[b, mm])?, Trace { batch: b, caches }))
    }

    /// Parameter gradients (declaration order) given `dL/d(prediction)` of shape `[batch, m²]`.
    pub fn backward(&self, trace: &Trace, grad: &Tensor) -> Result<Vec<ParamGrads>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::Precondition("trace does not belong to this network".into()));
        }
        let m = self.spec.m;
        if grad.len() != trace.batch * m * m {
            return Err(invalid!("gradient of length {} does not match batch {}", grad.len(), trace.batch));
        }
        let mut grads: Vec<Option<ParamGrads>> = vec![None; self.layers.len()];
        match self.spec.family {
            Family::FullyConnected => {
                let mut g = grad.clone();
                for (i, l) in self.layers.iter().enumerate().rev() {
                    let (gi, gp) = l.backward(&trace.caches[i], &g)?;
                    grads[i] = Some(gp);
                    g = gi.into_iter().next().expect("one input gradient");
                }
            }
            Family::Convolutional => {
                let nb = self.spec.branch_len();
                let mut g = grad.clone().reshape(&[trace.batch, 1, m, m])?;
                for i in (2 * nb + 1..self.layers.len()).rev() {
                    let (gi, gp) = self.layers[i].backward(&trace.caches[i], &g)?;
                    grads[i] = Some(gp);
                    g = gi.into_iter().next().expect("one input gradient");
                }
                let (gi, gp) = self.layers[2 * nb].backward(&trace.caches[2 * nb], &g)?;
                grads[2 * nb] = Some(gp);
                let mut it = gi.into_iter();
                let mut g0 = it.next().expect("z0 gradient");
                let mut g1 = it.next().expect("z1 gradient");
                for i in (nb..2 * nb).rev() {
                    let (gi, gp) = self.layers[i].backward(&trace.caches[i], &g1)?;
                    grads[i] = Some(gp);
                    g1 = gi.into_iter().next().expect("one input gradient");
                }
                for i in (0..nb).rev() {
                    let (gi, gp) = self.layers[i].backward(&trace.caches[i], &g0)?;
                    grads[i] = Some(gp);
                    g0 = gi.into_iter().next().expect("one input gradient");
                }
            }
        }
        Ok(grads.into_iter().map(|g| g.expect("every layer visited")).collect())
    }
}

/// Merger weight count for `l` channels: `l · (80·16 + 16)`.
pub fn merger_param_count(l: usize) -> usize {
    l * ((8 * 4 + 4 * 12) * MERGED_LEN + MERGED_LEN)
}

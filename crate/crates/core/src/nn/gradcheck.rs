//! Central finite-difference gradient checks.

use super::loss::{loss_and_grad, Distortion};
use super::{LayerKind, LayerParams};
use crate::arch::Network;
use crate::error::Result;
use crate::tensor::Tensor;
use rand::seq::index::sample;
use rand::Rng;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central differences of `f` at `x`, one entry at a time.
pub fn numeric_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over all entries.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Checks one layer's backward pass against central differences of the
/// scalar `⟨r, layer(inputs)⟩` for a random projection `r`.
///
/// `inputs` holds one tensor, or two for the merger. Returns the largest
/// relative error over input, weight and bias gradients.
pub fn check_layer<R: Rng + ?Sized>(params: &LayerParams, inputs: &[Tensor], rng: &mut R) -> Result<f64> {
    let run = |p: &LayerParams, xs: &[Tensor]| -> Result<Tensor> {
        if p.kind == LayerKind::Merger {
            p.merge(&xs[0], &xs[1])
        } else {
            p.infer(&xs[0])
        }
    };
    let (out, cache) = if params.kind == LayerKind::Merger {
        params.merge_forward(&inputs[0], &inputs[1])?
    } else {
        params.forward(&inputs[0])?
    };
    let proj = Tensor::from_vec(out.shape(), (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let (input_grads, param_grads) = params.backward(&cache, &proj)?;
    let floor = 1e-6;
    let mut worst = 0.0f64;
    for (k, g) in input_grads.iter().enumerate() {
        let numeric = numeric_gradient(
            |x| {
                let mut xs = inputs.to_vec();
                xs[k] = x.clone();
                run(params, &xs).map(|o| o.dot(&proj)).unwrap_or(f64::NAN)
            },
            &inputs[k],
            DEFAULT_STEP,
        );
        worst = worst.max(max_relative_error(g, &numeric, floor));
    }
    let numeric_w = numeric_gradient(
        |w| {
            let mut p = params.clone();
            p.weights = w.clone();
            run(&p, inputs).map(|o| o.dot(&proj)).unwrap_or(f64::NAN)
        },
        &params.weights,
        DEFAULT_STEP,
    );
    worst = worst.max(max_relative_error(&param_grads.weights, &numeric_w, floor));
    let numeric_b = numeric_gradient(
        |b| {
            let mut p = params.clone();
            p.biases = b.clone();
            run(&p, inputs).map(|o| o.dot(&proj)).unwrap_or(f64::NAN)
        },
        &params.biases,
        DEFAULT_STEP,
    );
    worst = worst.max(max_relative_error(&param_grads.biases, &numeric_b, floor));
    Ok(worst)
}

/// Outcome of [`check_network`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkCheck {
    /// Largest relative error over the probes that were scored.
    pub max_error: f64,
    pub probed: usize,
    /// Probes whose forward and backward quotients disagreed at every step:
    /// a leaky-ReLU kink lies within the probe interval, so they are not scored.
    pub kinks: usize,
}

/// Steps tried per probe, largest first.
const NETWORK_STEPS: [f64; 3] = [DEFAULT_STEP, DEFAULT_STEP / 10.0, DEFAULT_STEP / 100.0];
/// Relative agreement required between the forward and backward quotients.
/// A kink inside the probe interval that slips under it shifts the central
/// quotient by at most half this much.
const SETTLED: f64 = 5e-4;
/// Gradient magnitude below which pipeline errors are measured absolutely:
/// loss roundoff over thousands of terms limits the quotients to about 1e-7.
const PIPELINE_FLOOR: f64 = 1e-2;

/// Checks the full training gradient (distortion plus `λ Σ ‖W‖²`) of `net`
/// on one minibatch against central differences of the loss.
///
/// `inputs` are stacked network inputs as in [`Network::forward_tensors`].
/// Up to `per_tensor` randomly chosen entries of each parameter tensor are probed.
pub fn check_network<R: Rng + ?Sized>(
    net: &Network,
    inputs: &[Tensor],
    target: &Tensor,
    distortion: Distortion,
    lambda: f64,
    per_tensor: usize,
    rng: &mut R,
) -> Result<NetworkCheck> {
    let loss = |n: &Network| -> Result<f64> {
        let (pred, _) = n.forward_tensors(inputs.to_vec())?;
        Ok(loss_and_grad(&pred, target, distortion, &n.weight_tensors(), lambda)?.loss)
    };
    let (pred, trace) = net.forward_tensors(inputs.to_vec())?;
    let out = loss_and_grad(&pred, target, distortion, &net.weight_tensors(), lambda)?;
    let mut grads = net.backward(&trace, &out.grad_prediction)?;
    for (g, w) in grads.iter_mut().zip(&out.weight_grads) {
        g.weights.add_scaled(w, 1.0);
    }
    let analytic: Vec<&Tensor> = grads.iter().flat_map(|g| [&g.weights, &g.biases]).collect();
    let base = loss(net)?;
    let mut probe = net.clone();
    // One-sided quotients `(forward, backward)` at step `h`.
    let mut one_sided = |t: usize, i: usize, h: f64| -> Result<(f64, f64)> {
        let orig = probe.params()[t].data()[i];
        probe.params_mut()[t].data_mut()[i] = orig + h;
        let up = loss(&probe)?;
        probe.params_mut()[t].data_mut()[i] = orig - h;
        let down = loss(&probe)?;
        probe.params_mut()[t].data_mut()[i] = orig;
        Ok(((up - base) / h, (base - down) / h))
    };
    let mut report = NetworkCheck { max_error: 0.0, probed: 0, kinks: 0 };
    for (t, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        for i in sample(rng, n, per_tensor.min(n)) {
            report.probed += 1;
            let mut settled = None;
            for h in NETWORK_STEPS {
                let (fwd, bwd) = one_sided(t, i, h)?;
                if (fwd - bwd).abs() <= SETTLED * fwd.abs().max(bwd.abs()).max(PIPELINE_FLOOR) {
                    settled = Some(0.5 * (fwd + bwd));
                    break;
                }
            }
            match settled {
                Some(numeric) => {
                    let a = grad.data()[i];
                    report.max_error =
                        report.max_error.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(PIPELINE_FLOOR));
                }
                None => report.kinks += 1,
            }
        }
    }
    Ok(report)
}

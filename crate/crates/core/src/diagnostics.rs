//! Built-in consistency suites: gradients, conv/tconv adjointness, codeword
//! round trips, MPM enumeration and the DCT identity.

use crate::arch::{build_conv_scaled, build_fc, Network};
use crate::codec::bits::{BitReader, BitWriter};
use crate::codec::residual::Transform;
use crate::codec::signal::{derive_mpm, mode_bits, read_mode, write_mode, Scheme};
use crate::context::{sample_at, View};
use crate::error::Result;
use crate::hevc::{Mode, MODE_COUNT};
use crate::image::GrayImage;
use crate::nn::gradcheck::{check_layer, check_network, NetworkCheck};
use crate::nn::{Activation, Distortion, LayerParams};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const PIPELINE_TOLERANCE: f64 = 1e-3;
pub const ADJOINT_TOLERANCE: f64 = 1e-9;
/// Largest share of pipeline probes allowed to straddle a kink at every step.
pub const KINK_SHARE: f64 = 0.1;

/// Whether a pooled pipeline check passes.
pub fn pipeline_passes(c: &NetworkCheck) -> bool {
    c.max_error < PIPELINE_TOLERANCE && (c.kinks as f64) <= KINK_SHARE * c.probed as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

/// One random instance of each layer kind with its inputs.
pub fn sample_layers<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<(&'static str, LayerParams, Vec<Tensor>)>> {
    let act = Activation::LeakyRelu;
    Ok(vec![
        (
            "fully-connected",
            LayerParams::fully_connected(random_tensor(&[5, 7], rng), random_tensor(&[5], rng), act)?,
            vec![random_tensor(&[3, 7], rng)],
        ),
        (
            "conv",
            LayerParams::conv2d(random_tensor(&[3, 2, 5, 5], rng), random_tensor(&[3], rng), 2, act)?,
            vec![random_tensor(&[2, 2, 8, 6], rng)],
        ),
        (
            "tconv",
            LayerParams::tconv2d(random_tensor(&[2, 3, 3, 3], rng), random_tensor(&[3], rng), 2, act)?,
            vec![random_tensor(&[2, 2, 4, 3], rng)],
        ),
        (
            "merger",
            LayerParams::merger(random_tensor(&[2, 16, 80], rng), random_tensor(&[2, 16], rng))?,
            vec![random_tensor(&[2, 2, 8, 4], rng), random_tensor(&[2, 2, 4, 12], rng)],
        ),
    ])
}

/// Largest layer-level relative gradient error over `seeds` random instances.
pub fn layer_gradient_error(seeds: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, layer, inputs) in sample_layers(&mut rng)? {
            worst = worst.max(check_layer(&layer, &inputs, &mut rng)?);
        }
    }
    Ok(worst)
}

/// Small `f_4` and `g_4` networks for pipeline checks.
///
/// Biases are randomized: at their zero init, flat context regions put
/// pre-activations exactly on the leaky-ReLU kink.
pub fn reduced_pipelines<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<Network>> {
    let mut nets = vec![Network::init(build_fc(4, 12)?, rng)?, Network::init(build_conv_scaled(4, 8)?, rng)?];
    for net in &mut nets {
        for (k, t) in net.params_mut().into_iter().enumerate() {
            if k % 2 == 1 {
                t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
            }
        }
    }
    Ok(nets)
}

/// Pipeline-level gradient check pooled over `seeds` random networks and
/// minibatches, probing `per_tensor` entries per parameter tensor.
pub fn pipeline_gradient_error(seeds: u64, per_tensor: usize) -> Result<NetworkCheck> {
    let mut total = NetworkCheck { max_error: 0.0, probed: 0, kinks: 0 };
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let pixels: Vec<u8> = (0..256).map(|_| rng.gen()).collect();
        let img = GrayImage::new(16, 16, pixels)?;
        for net in reduced_pipelines(&mut rng)? {
            let samples: Vec<_> = (0..3)
                .map(|k| sample_at(&View::identity(&img), 4 + k, 4 + 2 * k, 4, 4 * (k % 2), 0, 120.0))
                .collect();
            let contexts: Vec<_> = samples.iter().map(|s| &s.context).collect();
            let inputs = net.input_tensors(&contexts)?;
            let mut y = Vec::new();
            for s in &samples {
                y.extend_from_slice(s.target_centered().data());
            }
            let target = Tensor::from_vec(&[3, 16], y)?;
            let c = check_network(&net, &inputs, &target, Distortion::L2, 5e-4, per_tensor, &mut rng)?;
            total.max_error = total.max_error.max(c.max_error);
            total.probed += c.probed;
            total.kinks += c.kinks;
        }
    }
    Ok(total)
}

/// `|⟨conv(x), y⟩ − ⟨x, tconv(y)⟩|` relative to the inner product, with the
/// same kernel, over `seeds` random shapes.
pub fn adjoint_error(seeds: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let s = rng.gen_range(1..=k.min(2));
        let (h, w) = (s * rng.gen_range(1..5), s * rng.gen_range(1..5));
        let kernel = random_tensor(&[co, ci, k, k], &mut rng);
        let conv = LayerParams::conv2d(kernel.clone(), Tensor::zeros(&[co]), s, Activation::Identity)?;
        let tconv = LayerParams::tconv2d(kernel, Tensor::zeros(&[ci]), s, Activation::Identity)?;
        let x = random_tensor(&[1, ci, h, w], &mut rng);
        let y = random_tensor(&[1, co, h / s, w / s], &mut rng);
        let lhs = conv.infer(&x)?.dot(&y);
        let rhs = x.dot(&tconv.infer(&y)?);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    Ok(worst)
}

fn neighbours() -> Vec<Option<Mode>> {
    let mut v = vec![None, Some(Mode::Pnns)];
    v.extend((0..MODE_COUNT).map(|i| Some(Mode::Hevc(i))));
    v
}

/// Number of (scheme, neighbour pair, mode) combinations that fail to round-trip.
pub fn codeword_failures() -> usize {
    let mut failures = 0;
    for scheme in Scheme::ALL {
        for a in neighbours() {
            for b in neighbours() {
                let mpm = derive_mpm(a, b, scheme);
                for mode in neighbours().into_iter().flatten().filter(|&m| scheme.allows(m)) {
                    let mut w = BitWriter::new();
                    let ok = write_mode(&mut w, mode, &mpm, scheme).is_ok() && {
                        let mut r = BitReader::new(w.as_bytes());
                        read_mode(&mut r, &mpm, scheme).ok() == Some(mode)
                            && r.position() == w.len()
                            && w.len() == mode_bits(mode, &mpm, scheme) as u64
                    };
                    failures += usize::from(!ok);
                }
            }
        }
    }
    failures
}

/// Number of neighbour pairs whose MPM list is not three distinct valid mode indices.
pub fn mpm_failures() -> usize {
    let mut failures = 0;
    for scheme in Scheme::ALL {
        for a in neighbours() {
            for b in neighbours() {
                let l = derive_mpm(a, b, scheme);
                let distinct = l[0] != l[1] && l[1] != l[2] && l[0] != l[2];
                let valid = l.iter().all(|&i| i < MODE_COUNT);
                failures += usize::from(!(distinct && valid));
            }
        }
    }
    failures
}

/// Largest `|IDCT(DCT(x)) − x|` over random blocks of every width.
pub fn dct_identity_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for n in [4, 8, 16, 32, 64] {
        let t = Transform::new(n);
        let x: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-255.0..255.0)).collect();
        for (a, b) in x.iter().zip(t.inverse(&t.forward(&x))) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Runs every suite.
pub fn selfcheck() -> Vec<SuiteOutcome> {
    let mut out = Vec::new();
    let mut push = |name, result: Result<(bool, String)>| {
        let (passed, detail) = result.unwrap_or_else(|e| (false, e.to_string()));
        out.push(SuiteOutcome { name, passed, detail });
    };
    push("layer gradients", layer_gradient_error(5).map(|e| (e < LAYER_TOLERANCE, format!("max relative error {e:.2e}"))));
    push(
        "pipeline gradients",
        pipeline_gradient_error(3, 6).map(|c| {
            let detail = format!("max relative error {:.2e}, {} of {} probes at a kink", c.max_error, c.kinks, c.probed);
            (pipeline_passes(&c), detail)
        }),
    );
    push("conv/tconv adjoint", adjoint_error(20).map(|e| (e < ADJOINT_TOLERANCE, format!("max relative error {e:.2e}"))));
    let f = codeword_failures();
    push("codeword round trips", Ok((f == 0, format!("{f} failures"))));
    let f = mpm_failures();
    push("MPM enumeration", Ok((f == 0, format!("{f} failures"))));
    let e = dct_identity_error();
    push("DCT identity", Ok((e < 1e-9, format!("max error {e:.2e}"))));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for s in selfcheck() {
            assert!(s.passed, "{}: {}", s.name, s.detail);
        }
    }
}

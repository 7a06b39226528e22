//! Analytic gradients against central finite differences.

use pnns::arch::{build_conv, build_fc, Network, FC_INTERNAL};
use pnns::context::{sample_at, View};
use pnns::diagnostics::{layer_gradient_error, pipeline_gradient_error, pipeline_passes, LAYER_TOLERANCE};
use pnns::nn::gradcheck::{check_network, NetworkCheck};
use pnns::nn::Distortion;
use pnns::training::synthetic_texture;
use pnns::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_layer_kind_over_many_seeds() {
    let e = layer_gradient_error(25).unwrap();
    assert!(e < LAYER_TOLERANCE, "max relative error {e:e}");
}

#[test]
fn reduced_pipelines_over_many_seeds() {
    let c = pipeline_gradient_error(20, 4).unwrap();
    assert!(pipeline_passes(&c), "{c:?}");
}

fn full_size_check(mut net: Network, distortion: Distortion, seed: u64) -> NetworkCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, t) in net.params_mut().into_iter().enumerate() {
        if k % 2 == 1 {
            t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    let m = net.m();
    let img = synthetic_texture(3 * m + 8, &mut rng);
    let view = View::identity(&img);
    let samples: Vec<_> = (0..2).map(|k| sample_at(&view, m + 2 * k, m + 3 * k, m, 4 * k, 0, 118.0)).collect();
    let contexts: Vec<_> = samples.iter().map(|s| &s.context).collect();
    let inputs = net.input_tensors(&contexts).unwrap();
    let y: Vec<f64> = samples.iter().flat_map(|s| s.target_centered().into_vec()).collect();
    let target = Tensor::from_vec(&[2, m * m], y).unwrap();
    check_network(&net, &inputs, &target, distortion, 5e-4, 3, &mut rng).unwrap()
}

#[test]
fn full_width_fully_connected_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Network::init(build_fc(4, FC_INTERNAL).unwrap(), &mut rng).unwrap();
    let c = full_size_check(net, Distortion::L2, 2);
    assert!(pipeline_passes(&c), "{c:?}");
}

#[test]
fn full_width_convolutional_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Network::init(build_conv(16).unwrap(), &mut rng).unwrap();
    for (distortion, seed) in [(Distortion::L2, 4), (Distortion::L1, 5)] {
        let c = full_size_check(net.clone(), distortion, seed);
        assert!(pipeline_passes(&c), "{distortion:?}: {c:?}");
    }
}

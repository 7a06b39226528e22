use super::{Activation, LayerKind, LayerParams, MERGED_LEN};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Standard deviation of the Gaussian used for the first layer of a network.
pub const FIRST_LAYER_STD: f64 = 0.01;

/// Shape description of one layer.
///
/// For the merger, `in_size` is the per-channel input length and `out_size`
/// the channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub in_size: usize,
    pub out_size: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerDesc {
    pub fn weight_shape(&self) -> Vec<usize> {
        let k = self.kernel;
        match self.kind {
            LayerKind::FullyConnected => vec![self.out_size, self.in_size],
            LayerKind::Conv2d => vec![self.out_size, self.in_size, k, k],
            LayerKind::TConv2d => vec![self.in_size, self.out_size, k, k],
            LayerKind::Merger => vec![self.out_size, MERGED_LEN, self.in_size],
        }
    }

    pub fn bias_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Merger => vec![self.out_size, MERGED_LEN],
            _ => vec![self.out_size],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.bias_shape().iter().product::<usize>()
    }

    /// (fan-in, fan-out) as used by Xavier initialization.
    pub fn fans(&self) -> (usize, usize) {
        let k2 = self.kernel * self.kernel;
        match self.kind {
            LayerKind::FullyConnected => (self.in_size, self.out_size),
            LayerKind::Conv2d | LayerKind::TConv2d => (self.in_size * k2, self.out_size * k2),
            LayerKind::Merger => (self.in_size, MERGED_LEN),
        }
    }
}

/// Fresh parameters: N(0, 0.01²) weights for the first layer of a network,
/// Xavier (Glorot uniform) weights elsewhere, zero biases.
pub fn init_params<R: Rng + ?Sized>(desc: &LayerDesc, first_layer: bool, rng: &mut R) -> Result<LayerParams> {
    if desc.in_size == 0 || desc.out_size == 0 || desc.kernel == 0 || desc.stride == 0 {
        return Err(invalid!("degenerate layer description {:?}", desc));
    }
    let shape = desc.weight_shape();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = if first_layer {
        let normal = Normal::new(0.0, FIRST_LAYER_STD).expect("valid std");
        (0..n).map(|_| normal.sample(rng)).collect()
    } else {
        let (fan_in, fan_out) = desc.fans();
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let uniform = Uniform::new_inclusive(-a, a);
        (0..n).map(|_| uniform.sample(rng)).collect()
    };
    let params = LayerParams {
        kind: desc.kind,
        weights: Tensor::from_vec(&shape, data)?,
        biases: Tensor::zeros(&desc.bias_shape()),
        stride: desc.stride,
        activation: desc.activation,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fc(n_in: usize, n_out: usize) -> LayerDesc {
        LayerDesc {
            kind: LayerKind::FullyConnected,
            in_size: n_in,
            out_size: n_out,
            kernel: 1,
            stride: 1,
            activation: Activation::LeakyRelu,
        }
    }

    fn variance(v: &[f64]) -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn biases_start_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for first in [true, false] {
            let p = init_params(&fc(10, 7), first, &mut rng).unwrap();
            assert!(p.biases.data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn xavier_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 128;
        let p = init_params(&fc(n, n), false, &mut rng).unwrap();
        let target = 2.0 / (2 * n) as f64;
        let var = variance(p.weights.data());
        assert!((var / target - 1.0).abs() < 0.2, "variance {var} vs {target}");
    }

    #[test]
    fn first_layer_is_narrow_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = init_params(&fc(100, 200), true, &mut rng).unwrap();
        let std = variance(p.weights.data()).sqrt();
        assert!((std / FIRST_LAYER_STD - 1.0).abs() < 0.05);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let d = fc(6, 5);
        let a = init_params(&d, false, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = init_params(&d, false, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }
}

use super::{LayerParams, ParamGrads};
use crate::error::{invalid, Result};
use crate::tensor::{dot, gemm, Tensor};

/// `[batch, in]` (or a single rank-1 vector) → `[batch, out]`.
fn batch_dims(params: &LayerParams, input: &Tensor) -> Result<(usize, bool)> {
    let n_in = params.weights.shape()[1];
    match input.shape() {
        [n] if *n == n_in => Ok((1, true)),
        [b, n] if *n == n_in => Ok((*b, false)),
        s => Err(invalid!("fully-connected layer expects {} inputs, got shape {:?}", n_in, s)),
    }
}

pub(super) fn forward(params: &LayerParams, input: &Tensor) -> Result<Tensor> {
    let (batch, single) = batch_dims(params, input)?;
    let (n_out, n_in) = (params.weights.shape()[0], params.weights.shape()[1]);
    let mut out = vec![0.0; batch * n_out];
    if batch == 1 {
        // matrix-vector product: skip GEMM packing of the whole weight matrix
        let w = params.weights.data();
        for (o, (v, b)) in out.iter_mut().zip(params.biases.data()).enumerate() {
            *v = b + dot(&w[o * n_in..(o + 1) * n_in], input.data());
        }
    } else {
        for row in out.chunks_exact_mut(n_out) {
            row.copy_from_slice(params.biases.data());
        }
        gemm(batch, n_in, n_out, input.data(), false, params.weights.data(), true, &mut out, true);
    }
    for v in out.iter_mut() {
        *v = params.activation.apply(*v);
    }
    let shape: Vec<usize> = if single { vec![n_out] } else { vec![batch, n_out] };
    Tensor::from_vec(&shape, out)
}

pub(super) fn backward(params: &LayerParams, input: &Tensor, delta: &Tensor) -> Result<(Tensor, ParamGrads)> {
    let (batch, _) = batch_dims(params, input)?;
    let (n_out, n_in) = (params.weights.shape()[0], params.weights.shape()[1]);
    let mut gw = vec![0.0; n_out * n_in];
    // dW = deltaᵀ · X
    gemm(n_out, batch, n_in, delta.data(), true, input.data(), false, &mut gw, false);
    let mut gb = vec![0.0; n_out];
    for row in delta.data().chunks_exact(n_out) {
        for (g, d) in gb.iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut gi = vec![0.0; batch * n_in];
    gemm(batch, n_out, n_in, delta.data(), false, params.weights.data(), false, &mut gi, false);
    Ok((
        Tensor::from_vec(input.shape(), gi)?,
        ParamGrads {
            weights: Tensor::from_vec(params.weights.shape(), gw)?,
            biases: Tensor::from_vec(&[n_out], gb)?,
        },
    ))
}

#[cfg(test)]
mod tests {
    use crate::nn::{Activation, LayerParams};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_with_leaky_relu() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let fc = LayerParams::fully_connected(w, Tensor::zeros(&[2]), Activation::LeakyRelu).unwrap();
        let out = fc.infer(&Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap()).unwrap();
        assert_eq!(out.shape(), &[2]);
        assert_eq!(out.data()[0], 3.0);
        assert!((out.data()[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_bias() {
        let fc = LayerParams::fully_connected(
            Tensor::zeros(&[1, 3]),
            Tensor::from_vec(&[1], vec![5.0]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let out = fc.infer(&Tensor::from_vec(&[3], vec![7.0, -1.0, 2.5]).unwrap()).unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn matches_naive_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fc = LayerParams::fully_connected(
            Tensor::from_vec(&[3, 4], w.clone()).unwrap(),
            Tensor::from_vec(&[3], b.clone()).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let out = fc.infer(&Tensor::from_vec(&[4], x.clone()).unwrap()).unwrap();
        for o in 0..3 {
            let mut acc = b[o];
            for i in 0..4 {
                acc += w[o * 4 + i] * x[i];
            }
            assert!((out.data()[o] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn single_neuron_weight_gradient_is_input_times_upstream() {
        let fc = LayerParams::fully_connected(
            Tensor::from_vec(&[1, 3], vec![0.5, -0.25, 2.0]).unwrap(),
            Tensor::zeros(&[1]),
            Activation::Identity,
        )
        .unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, -3.0]).unwrap();
        let (_, cache) = fc.forward(&x).unwrap();
        let (_, grads) = fc.backward(&cache, &Tensor::from_vec(&[1, 1], vec![1.5]).unwrap()).unwrap();
        assert_eq!(grads.weights.data(), &[1.5, 3.0, -4.5]);
        assert_eq!(grads.biases.data(), &[1.5]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let fc = LayerParams::fully_connected(Tensor::zeros(&[2, 3]), Tensor::zeros(&[2]), Activation::Identity)
            .unwrap();
        assert!(fc.infer(&Tensor::zeros(&[4])).is_err());
    }
}

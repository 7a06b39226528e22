//! Channelwise affine merge of the two branch feature stacks.
//!
//! For every channel `i`, the flattened (row-major) maps `Z0_i` and `Z1_i`
//! are concatenated and sent through their own affine map onto a 4×4 map.
//! Channels never mix.

use super::{LayerParams, ParamGrads};
use crate::error::{invalid, Result};
use crate::tensor::{gemm, Tensor};

pub const MERGED_SIDE: usize = 4;
pub const MERGED_LEN: usize = MERGED_SIDE * MERGED_SIDE;

struct Dims {
    batch: usize,
    channels: usize,
    len0: usize,
    len1: usize,
    single: bool,
}

fn dims(params: &LayerParams, z0: &Tensor, z1: &Tensor) -> Result<Dims> {
    let l = params.weights.shape()[0];
    let n_in = params.weights.shape()[2];
    let split = |t: &Tensor| -> Result<(usize, usize, bool)> {
        match *t.shape() {
            [c, h, w] if c == l => Ok((1, h * w, true)),
            [b, c, h, w] if c == l => Ok((b, h * w, false)),
            ref s => Err(invalid!("merger expects {l} channels, got shape {:?}", s)),
        }
    };
    let (b0, len0, s0) = split(z0)?;
    let (b1, len1, s1) = split(z1)?;
    if b0 != b1 || s0 != s1 {
        return Err(invalid!("merger inputs disagree on batch size"));
    }
    if len0 + len1 != n_in {
        return Err(invalid!("merger expects {} inputs per channel, got {} + {}", n_in, len0, len1));
    }
    Ok(Dims { batch: b0, channels: l, len0, len1, single: s0 })
}

/// Per-channel input matrix `[batch, len0 + len1]`.
fn gather(z0: &Tensor, z1: &Tensor, d: &Dims, ch: usize, v: &mut [f64]) {
    let n_in = d.len0 + d.len1;
    for b in 0..d.batch {
        let row = &mut v[b * n_in..(b + 1) * n_in];
        let o0 = (b * d.channels + ch) * d.len0;
        let o1 = (b * d.channels + ch) * d.len1;
        row[..d.len0].copy_from_slice(&z0.data()[o0..o0 + d.len0]);
        row[d.len0..].copy_from_slice(&z1.data()[o1..o1 + d.len1]);
    }
}

pub(super) fn forward(params: &LayerParams, z0: &Tensor, z1: &Tensor) -> Result<Tensor> {
    let d = dims(params, z0, z1)?;
    let n_in = d.len0 + d.len1;
    let mut v = vec![0.0; d.batch * n_in];
    let mut y = vec![0.0; d.batch * MERGED_LEN];
    let mut out = vec![0.0; d.batch * d.channels * MERGED_LEN];
    for ch in 0..d.channels {
        gather(z0, z1, &d, ch, &mut v);
        let a = &params.weights.data()[ch * MERGED_LEN * n_in..(ch + 1) * MERGED_LEN * n_in];
        let bias = &params.biases.data()[ch * MERGED_LEN..(ch + 1) * MERGED_LEN];
        for row in y.chunks_exact_mut(MERGED_LEN) {
            row.copy_from_slice(bias);
        }
        gemm(d.batch, n_in, MERGED_LEN, &v, false, a, true, &mut y, true);
        for b in 0..d.batch {
            let dst = &mut out[(b * d.channels + ch) * MERGED_LEN..][..MERGED_LEN];
            for (o, &val) in dst.iter_mut().zip(&y[b * MERGED_LEN..(b + 1) * MERGED_LEN]) {
                *o = params.activation.apply(val);
            }
        }
    }
    if d.single {
        Tensor::from_vec(&[d.channels, MERGED_SIDE, MERGED_SIDE], out)
    } else {
        Tensor::from_vec(&[d.batch, d.channels, MERGED_SIDE, MERGED_SIDE], out)
    }
}

pub(super) fn backward(
    params: &LayerParams,
    z0: &Tensor,
    z1: &Tensor,
    delta: &Tensor,
) -> Result<(Tensor, Tensor, ParamGrads)> {
    let d = dims(params, z0, z1)?;
    let n_in = d.len0 + d.len1;
    let mut v = vec![0.0; d.batch * n_in];
    let mut dy = vec![0.0; d.batch * MERGED_LEN];
    let mut dv = vec![0.0; d.batch * n_in];
    let mut gw = vec![0.0; params.weights.len()];
    let mut gb = vec![0.0; params.biases.len()];
    let mut g0 = vec![0.0; z0.len()];
    let mut g1 = vec![0.0; z1.len()];
    for ch in 0..d.channels {
        gather(z0, z1, &d, ch, &mut v);
        for b in 0..d.batch {
            dy[b * MERGED_LEN..(b + 1) * MERGED_LEN]
                .copy_from_slice(&delta.data()[(b * d.channels + ch) * MERGED_LEN..][..MERGED_LEN]);
        }
        let a = &params.weights.data()[ch * MERGED_LEN * n_in..(ch + 1) * MERGED_LEN * n_in];
        let ga = &mut gw[ch * MERGED_LEN * n_in..(ch + 1) * MERGED_LEN * n_in];
        gemm(MERGED_LEN, d.batch, n_in, &dy, true, &v, false, ga, false);
        for row in dy.chunks_exact(MERGED_LEN) {
            for (g, x) in gb[ch * MERGED_LEN..(ch + 1) * MERGED_LEN].iter_mut().zip(row) {
                *g += x;
            }
        }
        gemm(d.batch, MERGED_LEN, n_in, &dy, false, a, false, &mut dv, false);
        for b in 0..d.batch {
            let row = &dv[b * n_in..(b + 1) * n_in];
            let o0 = (b * d.channels + ch) * d.len0;
            let o1 = (b * d.channels + ch) * d.len1;
            g0[o0..o0 + d.len0].copy_from_slice(&row[..d.len0]);
            g1[o1..o1 + d.len1].copy_from_slice(&row[d.len0..]);
        }
    }
    Ok((
        Tensor::from_vec(z0.shape(), g0)?,
        Tensor::from_vec(z1.shape(), g1)?,
        ParamGrads {
            weights: Tensor::from_vec(params.weights.shape(), gw)?,
            biases: Tensor::from_vec(params.biases.shape(), gb)?,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_constant_bias() {
        let l = 3;
        let m = LayerParams::merger(Tensor::zeros(&[l, 16, 80]), Tensor::filled(&[l, 16], 2.5)).unwrap();
        let out = m.merge(&Tensor::filled(&[l, 8, 4], 1.0), &Tensor::filled(&[l, 4, 12], -1.0)).unwrap();
        assert_eq!(out.shape(), &[l, 4, 4]);
        assert!(out.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn single_channel_reduces_to_fully_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random(&[1, 16, 80], &mut rng);
        let b = random(&[1, 16], &mut rng);
        let z0 = random(&[1, 8, 4], &mut rng);
        let z1 = random(&[1, 4, 12], &mut rng);
        let merged = LayerParams::merger(w.clone(), b.clone()).unwrap().merge(&z0, &z1).unwrap();
        let fc = LayerParams::fully_connected(
            w.reshape(&[16, 80]).unwrap(),
            b.reshape(&[16]).unwrap(),
            Activation::LeakyRelu,
        )
        .unwrap();
        let mut v = z0.data().to_vec();
        v.extend_from_slice(z1.data());
        let direct = fc.infer(&Tensor::from_vec(&[80], v).unwrap()).unwrap();
        assert!(merged.reshape(&[16]).unwrap().max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn channel_permutation_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l = 3;
        let w = random(&[l, 16, 80], &mut rng);
        let b = random(&[l, 16], &mut rng);
        let z0 = random(&[l, 8, 4], &mut rng);
        let z1 = random(&[l, 4, 12], &mut rng);
        let out = LayerParams::merger(w.clone(), b.clone()).unwrap().merge(&z0, &z1).unwrap();
        let perm = [2usize, 0, 1];
        let permute = |t: &Tensor, chunk: usize| {
            let mut data = Vec::new();
            for &p in &perm {
                data.extend_from_slice(&t.data()[p * chunk..(p + 1) * chunk]);
            }
            Tensor::from_vec(t.shape(), data).unwrap()
        };
        let out_p = LayerParams::merger(permute(&w, 16 * 80), permute(&b, 16))
            .unwrap()
            .merge(&permute(&z0, 32), &permute(&z1, 48))
            .unwrap();
        assert_eq!(out_p, permute(&out, 16));
    }
}

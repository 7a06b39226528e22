//! 2D convolution and its adjoint, both via im2col + GEMM.
//!
//! Padding is "same" style: a stride-`s` convolution maps an `n`-pixel side to
//! `n / s`, with the odd padding pixel placed on the top/left.

use super::{LayerParams, ParamGrads};
use crate::error::{invalid, Result};
use crate::tensor::{gemm, Tensor};

/// Zero padding `(before, after)` along one axis for kernel `k` and stride `s`.
pub fn same_padding(k: usize, s: usize) -> (usize, usize) {
    let total = k.saturating_sub(s);
    let before = total.div_ceil(2);
    (before, total - before)
}

pub fn conv_output_side(n: usize, stride: usize) -> Result<usize> {
    if !n.is_multiple_of(stride) {
        return Err(invalid!("spatial extent {n} is not divisible by stride {stride}"));
    }
    Ok(n / stride)
}

pub fn tconv_output_side(n: usize, stride: usize) -> usize {
    n * stride
}

struct Geometry {
    k: usize,
    s: usize,
    pad: usize,
    /// full-resolution side (conv input, tconv output)
    h: usize,
    w: usize,
    /// reduced side (conv output, tconv input)
    ho: usize,
    wo: usize,
}

/// Gathers `[c, h, w]` into `[c·k·k, ho·wo]`.
fn im2col(x: &[f64], c: usize, g: &Geometry, cols: &mut [f64]) {
    let hw = g.ho * g.wo;
    for ci in 0..c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.k {
            for j in 0..g.k {
                let row = &mut cols[((ci * g.k + i) * g.k + j) * hw..][..hw];
                for oy in 0..g.ho {
                    let y = (oy * g.s + i) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if y < 0 || y >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let xx = (ox * g.s + j) as isize - g.pad as isize;
                        *d = if xx < 0 || xx >= g.w as isize { 0.0 } else { src[xx as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `[c·k·k, ho·wo]` back into `[c, h, w]`.
fn col2im(cols: &[f64], c: usize, g: &Geometry, x: &mut [f64]) {
    let hw = g.ho * g.wo;
    for ci in 0..c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.k {
            for j in 0..g.k {
                let row = &cols[((ci * g.k + i) * g.k + j) * hw..][..hw];
                for oy in 0..g.ho {
                    let y = (oy * g.s + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let xx = (ox * g.s + j) as isize - g.pad as isize;
                        if xx >= 0 && xx < g.w as isize {
                            dst[xx as usize] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Splits `[c,h,w]` or `[b,c,h,w]` into (batch, c, h, w, was_single).
fn batch_shape(input: &Tensor, channels: usize) -> Result<(usize, usize, usize, bool)> {
    match *input.shape() {
        [c, h, w] if c == channels => Ok((1, h, w, true)),
        [b, c, h, w] if c == channels => Ok((b, h, w, false)),
        ref s => Err(invalid!("expected {channels} input channels, got shape {:?}", s)),
    }
}

fn shaped(single: bool, batch: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Tensor> {
    if single {
        Tensor::from_vec(&[c, h, w], data)
    } else {
        Tensor::from_vec(&[batch, c, h, w], data)
    }
}

pub(super) fn conv_forward(params: &LayerParams, input: &Tensor) -> Result<Tensor> {
    let ws = params.weights.shape();
    let (c_out, c_in, k) = (ws[0], ws[1], ws[2]);
    let s = params.stride;
    let (batch, h, w, single) = batch_shape(input, c_in)?;
    let g = Geometry {
        k,
        s,
        pad: same_padding(k, s).0,
        h,
        w,
        ho: conv_output_side(h, s)?,
        wo: conv_output_side(w, s)?,
    };
    let hw = g.ho * g.wo;
    let ckk = c_in * k * k;
    let mut cols = vec![0.0; ckk * hw];
    let mut out = vec![0.0; batch * c_out * hw];
    for b in 0..batch {
        im2col(&input.data()[b * c_in * h * w..(b + 1) * c_in * h * w], c_in, &g, &mut cols);
        let o = &mut out[b * c_out * hw..(b + 1) * c_out * hw];
        for (co, row) in o.chunks_exact_mut(hw).enumerate() {
            row.fill(params.biases.data()[co]);
        }
        gemm(c_out, ckk, hw, params.weights.data(), false, &cols, false, o, true);
    }
    for v in out.iter_mut() {
        *v = params.activation.apply(*v);
    }
    shaped(single, batch, c_out, g.ho, g.wo, out)
}

pub(super) fn conv_backward(params: &LayerParams, input: &Tensor, delta: &Tensor) -> Result<(Tensor, ParamGrads)> {
    let ws = params.weights.shape();
    let (c_out, c_in, k) = (ws[0], ws[1], ws[2]);
    let s = params.stride;
    let (batch, h, w, _) = batch_shape(input, c_in)?;
    let g = Geometry { k, s, pad: same_padding(k, s).0, h, w, ho: h / s, wo: w / s };
    let hw = g.ho * g.wo;
    let ckk = c_in * k * k;
    let mut cols = vec![0.0; ckk * hw];
    let mut dcols = vec![0.0; ckk * hw];
    let mut gw = vec![0.0; params.weights.len()];
    let mut gb = vec![0.0; c_out];
    let mut gi = vec![0.0; input.len()];
    for b in 0..batch {
        let d = &delta.data()[b * c_out * hw..(b + 1) * c_out * hw];
        im2col(&input.data()[b * c_in * h * w..(b + 1) * c_in * h * w], c_in, &g, &mut cols);
        gemm(c_out, hw, ckk, d, false, &cols, true, &mut gw, true);
        for (co, row) in d.chunks_exact(hw).enumerate() {
            gb[co] += row.iter().sum::<f64>();
        }
        gemm(ckk, c_out, hw, params.weights.data(), true, d, false, &mut dcols, false);
        col2im(&dcols, c_in, &g, &mut gi[b * c_in * h * w..(b + 1) * c_in * h * w]);
    }
    Ok((
        Tensor::from_vec(input.shape(), gi)?,
        ParamGrads {
            weights: Tensor::from_vec(ws, gw)?,
            biases: Tensor::from_vec(&[c_out], gb)?,
        },
    ))
}

pub(super) fn tconv_forward(params: &LayerParams, input: &Tensor) -> Result<Tensor> {
    let ws = params.weights.shape();
    let (c_in, c_out, k) = (ws[0], ws[1], ws[2]);
    let s = params.stride;
    let (batch, hi, wi, single) = batch_shape(input, c_in)?;
    let g = Geometry {
        k,
        s,
        pad: same_padding(k, s).0,
        h: tconv_output_side(hi, s),
        w: tconv_output_side(wi, s),
        ho: hi,
        wo: wi,
    };
    let hw = hi * wi;
    let ckk = c_out * k * k;
    let plane = g.h * g.w;
    let mut cols = vec![0.0; ckk * hw];
    let mut out = vec![0.0; batch * c_out * plane];
    for b in 0..batch {
        let x = &input.data()[b * c_in * hw..(b + 1) * c_in * hw];
        gemm(ckk, c_in, hw, params.weights.data(), true, x, false, &mut cols, false);
        let o = &mut out[b * c_out * plane..(b + 1) * c_out * plane];
        for (co, p) in o.chunks_exact_mut(plane).enumerate() {
            p.fill(params.biases.data()[co]);
        }
        col2im(&cols, c_out, &g, o);
    }
    for v in out.iter_mut() {
        *v = params.activation.apply(*v);
    }
    shaped(single, batch, c_out, g.h, g.w, out)
}

pub(super) fn tconv_backward(params: &LayerParams, input: &Tensor, delta: &Tensor) -> Result<(Tensor, ParamGrads)> {
    let ws = params.weights.shape();
    let (c_in, c_out, k) = (ws[0], ws[1], ws[2]);
    let s = params.stride;
    let (batch, hi, wi, _) = batch_shape(input, c_in)?;
    let g = Geometry { k, s, pad: same_padding(k, s).0, h: hi * s, w: wi * s, ho: hi, wo: wi };
    let hw = hi * wi;
    let ckk = c_out * k * k;
    let plane = g.h * g.w;
    let mut cols = vec![0.0; ckk * hw];
    let mut gw = vec![0.0; params.weights.len()];
    let mut gb = vec![0.0; c_out];
    let mut gi = vec![0.0; input.len()];
    for b in 0..batch {
        let d = &delta.data()[b * c_out * plane..(b + 1) * c_out * plane];
        for (co, p) in d.chunks_exact(plane).enumerate() {
            gb[co] += p.iter().sum::<f64>();
        }
        im2col(d, c_out, &g, &mut cols);
        let x = &input.data()[b * c_in * hw..(b + 1) * c_in * hw];
        // dW[ci, ·] = x[ci, hw] · colsᵀ
        gemm(c_in, hw, ckk, x, false, &cols, true, &mut gw, true);
        gemm(c_in, ckk, hw, params.weights.data(), false, &cols, false, &mut gi[b * c_in * hw..(b + 1) * c_in * hw], false);
    }
    Ok((
        Tensor::from_vec(input.shape(), gi)?,
        ParamGrads {
            weights: Tensor::from_vec(ws, gw)?,
            biases: Tensor::from_vec(&[c_out], gb)?,
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
    fn padding_rule() {
        assert_eq!(same_padding(3, 1), (1, 1));
        assert_eq!(same_padding(5, 2), (2, 1));
        assert_eq!(same_padding(1, 1), (0, 0));
    }

    #[test]
    fn identity_kernel_conv_and_tconv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 5, 6], &mut rng);
        let k = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let conv = LayerParams::conv2d(k.clone(), Tensor::zeros(&[1]), 1, Activation::Identity).unwrap();
        assert_eq!(conv.infer(&x).unwrap(), x);
        let tconv = LayerParams::tconv2d(k, Tensor::zeros(&[1]), 1, Activation::Identity).unwrap();
        assert_eq!(tconv.infer(&x).unwrap(), x);
    }

    #[test]
    fn zero_kernel_gives_constant_bias() {
        let conv = LayerParams::conv2d(
            Tensor::zeros(&[2, 1, 3, 3]),
            Tensor::from_vec(&[2], vec![0.7, 0.7]).unwrap(),
            1,
            Activation::Identity,
        )
        .unwrap();
        let out = conv.infer(&Tensor::filled(&[1, 4, 4], 9.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn stride_divisibility_is_checked() {
        let conv = LayerParams::conv2d(Tensor::zeros(&[1, 1, 5, 5]), Tensor::zeros(&[1]), 2, Activation::Identity)
            .unwrap();
        assert!(conv.infer(&Tensor::zeros(&[1, 5, 4])).is_err());
    }

    #[test]
    fn tconv_shape_rule() {
        let t = LayerParams::tconv2d(Tensor::zeros(&[3, 2, 5, 5]), Tensor::zeros(&[2]), 2, Activation::Identity)
            .unwrap();
        let out = t.infer(&Tensor::zeros(&[3, 4, 4])).unwrap();
        assert_eq!(out.shape(), &[2, 8, 8]);
    }

    #[test]
    fn batched_equals_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conv = LayerParams::conv2d(random(&[3, 2, 5, 5], &mut rng), random(&[3], &mut rng), 2, Activation::LeakyRelu)
            .unwrap();
        let batch = random(&[2, 2, 8, 6], &mut rng);
        let out = conv.infer(&batch).unwrap();
        let per = 3 * 4 * 3;
        for b in 0..2 {
            let one = Tensor::from_vec(&[2, 8, 6], batch.data()[b * 96..(b + 1) * 96].to_vec()).unwrap();
            let o = conv.infer(&one).unwrap();
            assert_eq!(o.data(), &out.data()[b * per..(b + 1) * per]);
        }
    }
}

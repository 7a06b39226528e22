//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pnns::evaluation::RdPoint;
use pnns::nn::same_padding;
use pnns::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn idx4(s: &[usize], a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * s[1] + b) * s[2] + c) * s[3] + d
}

/// `y[b,o,p,q] = bias[o] + Σ w[o,c,i,j] · x[b, c, p·s + i − pad, q·s + j − pad]`.
pub fn naive_conv(x: &Tensor, w: &Tensor, bias: &Tensor, s: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (batch, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, k) = (ws[0], ws[2]);
    let pad = same_padding(k, s).0 as isize;
    let shape = [batch, co, h / s, wd / s];
    let mut y = Tensor::zeros(&shape);
    for b in 0..batch {
        for o in 0..co {
            for p in 0..h / s {
                for q in 0..wd / s {
                    let mut acc = bias.data()[o];
                    for c in 0..ci {
                        for i in 0..k {
                            for j in 0..k {
                                let r = (p * s + i) as isize - pad;
                                let t = (q * s + j) as isize - pad;
                                if r >= 0 && t >= 0 && (r as usize) < h && (t as usize) < wd {
                                    acc += w.data()[idx4(ws, o, c, i, j)] * x.data()[idx4(xs, b, c, r as usize, t as usize)];
                                }
                            }
                        }
                    }
                    y.data_mut()[idx4(&shape, b, o, p, q)] = acc;
                }
            }
        }
    }
    y
}

/// Each input pixel scatters `x[b,c,p,q] · w[c,o,i,j]` to `(p·s + i − pad, q·s + j − pad)`.
pub fn naive_tconv(x: &Tensor, w: &Tensor, bias: &Tensor, s: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (batch, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, k) = (ws[1], ws[2]);
    let pad = same_padding(k, s).0 as isize;
    let shape = [batch, co, h * s, wd * s];
    let mut y = Tensor::zeros(&shape);
    for b in 0..batch {
        for o in 0..co {
            for r in 0..h * s {
                for t in 0..wd * s {
                    y.data_mut()[idx4(&shape, b, o, r, t)] = bias.data()[o];
                }
            }
        }
        for c in 0..ci {
            for p in 0..h {
                for q in 0..wd {
                    let v = x.data()[idx4(xs, b, c, p, q)];
                    for o in 0..co {
                        for i in 0..k {
                            for j in 0..k {
                                let r = (p * s + i) as isize - pad;
                                let t = (q * s + j) as isize - pad;
                                if r >= 0 && t >= 0 && (r as usize) < h * s && (t as usize) < wd * s {
                                    y.data_mut()[idx4(&shape, b, o, r as usize, t as usize)] +=
                                        v * w.data()[idx4(ws, c, o, i, j)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Cubic in the standardized variable `(psnr − 35) / 10`.
fn z(psnr: f64) -> f64 {
    (psnr - 35.0) / 10.0
}

fn fit(curve: &[RdPoint]) -> Vec<f64> {
    let a = DMatrix::from_fn(curve.len(), 4, |r, c| z(curve[r].psnr).powi(c as i32));
    let b = DVector::from_iterator(curve.len(), curve.iter().map(|p| p.rate.log10()));
    a.svd(true, true).solve(&b, 1e-14).expect("solvable").iter().copied().collect()
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, k| acc * x + k)
}

pub fn bd_oracle(a: &[RdPoint], b: &[RdPoint]) -> f64 {
    let span = |c: &[RdPoint]| c.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.psnr), hi.max(p.psnr)));
    let ((a_lo, a_hi), (b_lo, b_hi)) = (span(a), span(b));
    let (lo, hi) = (a_lo.max(b_lo), a_hi.min(b_hi));
    let (ca, cb) = (fit(a), fit(b));
    let f = |x: f64| poly(&ca, z(x)) - poly(&cb, z(x));
    let simpson = (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi));
    100.0 * (10f64.powf(simpson / (hi - lo)) - 1.0)
}

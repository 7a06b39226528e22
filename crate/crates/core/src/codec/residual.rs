//! Residual path: orthonormal 2-D DCT-II, uniform quantization and
//! exp-Golomb coefficient coding in zig-zag order.
//!
//! Coefficient syntax for one block:
//!
//! ```text
//! ue(count)                       count = 1 + zig-zag index of the last nonzero level, 0 if none
//! for each position before the last:
//!     sig flag; if set: ue(|v| - 1), sign
//! last position: ue(|v| - 1), sign
//! ```

use super::bits::{ue_len, BitReader, BitWriter};
use crate::error::{invalid, Error, Result};
use std::collections::HashMap;
use std::f64::consts::PI;

pub const MAX_QP: u8 = 51;

/// Quantizer step `2^((QP - 4) / 6)`.
pub fn quant_step(qp: u8) -> f64 {
    2f64.powf((qp as f64 - 4.0) / 6.0)
}

/// Orthonormal DCT-II basis and zig-zag order for one block width.
#[derive(Clone, Debug)]
pub struct Transform {
    n: usize,
    basis: Vec<f64>,
    zigzag: Vec<usize>,
}

impl Transform {
    pub fn new(n: usize) -> Transform {
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for i in 0..n {
                basis[k * n + i] = s * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
            }
        }
        Transform { n, basis, zigzag: zigzag(n) }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn zigzag(&self) -> &[usize] {
        &self.zigzag
    }

    /// `C · X · Cᵀ`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x, false)
    }

    /// `Cᵀ · Y · C`.
    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        self.apply(y, true)
    }

    fn apply(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let n = self.n;
        let c = |a: usize, b: usize| if transpose { self.basis[b * n + a] } else { self.basis[a * n + b] };
        // rows first: t = X · Cᵀ (or X · C)
        let mut t = vec![0.0; n * n];
        for r in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += x[r * n + i] * c(k, i);
                }
                t[r * n + k] = acc;
            }
        }
        let mut out = vec![0.0; n * n];
        for k in 0..n {
            for col in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += c(k, i) * t[i * n + col];
                }
                out[k * n + col] = acc;
            }
        }
        out
    }
}

/// Raster indices of an `n×n` block in zig-zag order.
pub fn zigzag(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n * n);
    for d in 0..2 * n - 1 {
        let lo = d.saturating_sub(n - 1);
        let hi = d.min(n - 1);
        if d % 2 == 0 {
            // up-right: row decreasing
            for r in (lo..=hi).rev() {
                order.push(r * n + (d - r));
            }
        } else {
            for r in lo..=hi {
                order.push(r * n + (d - r));
            }
        }
    }
    order
}

/// Per-width transforms, built on first use.
#[derive(Debug, Default)]
pub struct TransformCache {
    transforms: HashMap<usize, Transform>,
}

impl TransformCache {
    pub fn get(&mut self, n: usize) -> &Transform {
        self.transforms.entry(n).or_insert_with(|| Transform::new(n))
    }
}

fn check_qp(qp: u8) -> Result<()> {
    if qp > MAX_QP {
        return Err(invalid!("QP {qp} is outside 0..=51"));
    }
    Ok(())
}

/// Forward transform then quantization with rounding half away from zero.
pub fn transform_quantize(t: &Transform, residual: &[f64], qp: u8) -> Result<Vec<i32>> {
    check_qp(qp)?;
    let step = quant_step(qp);
    Ok(t.forward(residual).into_iter().map(|c| (c / step).round() as i32).collect())
}

/// Dequantization then inverse transform.
pub fn dequantize_inverse(t: &Transform, levels: &[i32], qp: u8) -> Result<Vec<f64>> {
    check_qp(qp)?;
    let step = quant_step(qp);
    let coeffs: Vec<f64> = levels.iter().map(|&l| l as f64 * step).collect();
    Ok(t.inverse(&coeffs))
}

pub fn code_coefficients(w: &mut BitWriter, levels: &[i32], zigzag: &[usize]) {
    let count = zigzag.iter().rposition(|&i| levels[i] != 0).map_or(0, |p| p + 1);
    w.put_ue(count as u64);
    for (pos, &i) in zigzag[..count].iter().enumerate() {
        let v = levels[i];
        let last = pos + 1 == count;
        if !last {
            w.put_bit(v != 0);
            if v == 0 {
                continue;
            }
        }
        w.put_ue(v.unsigned_abs() as u64 - 1);
        w.put_bit(v < 0);
    }
}

/// Exact length of [`code_coefficients`] output.
pub fn coefficient_bits(levels: &[i32], zigzag: &[usize]) -> u64 {
    let count = zigzag.iter().rposition(|&i| levels[i] != 0).map_or(0, |p| p + 1);
    let mut bits = ue_len(count as u64) as u64;
    for (pos, &i) in zigzag[..count].iter().enumerate() {
        let v = levels[i];
        if pos + 1 != count {
            bits += 1;
        }
        if v != 0 {
            bits += ue_len(v.unsigned_abs() as u64 - 1) as u64 + 1;
        }
    }
    bits
}

pub fn decode_coefficients(r: &mut BitReader<'_>, zigzag: &[usize]) -> Result<Vec<i32>> {
    let n = zigzag.len();
    let count = r.ue()? as usize;
    if count > n {
        return Err(Error::CorruptBitstream(format!("{count} coefficients signalled for a block of {n}")));
    }
    let mut levels = vec![0i32; n];
    for (pos, &i) in zigzag[..count].iter().enumerate() {
        let last = pos + 1 == count;
        if !last && !r.bit()? {
            continue;
        }
        let mag = r.ue()? + 1;
        if mag > i32::MAX as u64 {
            return Err(Error::CorruptBitstream("coefficient magnitude overflows".into()));
        }
        levels[i] = if r.bit()? { -(mag as i32) } else { mag as i32 };
    }
    Ok(levels)
}

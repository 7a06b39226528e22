//! Bjontegaard rate difference: a cubic fit of `log10(rate)` against PSNR for
//! each curve, integrated over the shared PSNR interval.

use crate::error::{Error, Result};

/// One rate-distortion point: bits per pixel and PSNR in dB.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub rate: f64,
    pub psnr: f64,
}

impl RdPoint {
    pub fn new(rate: f64, psnr: f64) -> RdPoint {
        RdPoint { rate, psnr }
    }
}

pub const MIN_POINTS: usize = 4;

fn check_curve(curve: &[RdPoint], name: &str) -> Result<()> {
    if curve.len() < MIN_POINTS {
        return Err(Error::Fit(format!("curve {name} has {} points, at least {MIN_POINTS} needed", curve.len())));
    }
    if curve.iter().any(|p| !(p.rate > 0.0 && p.rate.is_finite() && p.psnr.is_finite())) {
        return Err(Error::Fit(format!("curve {name} has a non-positive or non-finite point")));
    }
    let mut sorted: Vec<RdPoint> = curve.to_vec();
    sorted.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    for w in sorted.windows(2) {
        if w[0].rate == w[1].rate {
            return Err(Error::Fit(format!("curve {name} repeats the rate {}", w[0].rate)));
        }
        if w[1].psnr <= w[0].psnr {
            return Err(Error::Fit(format!("curve {name} is not monotone: PSNR does not grow with rate")));
        }
    }
    Ok(())
}

/// Least-squares cubic `log10(rate) ≈ Σ c_k (psnr − center)^k` via the normal equations.
fn fit_cubic(curve: &[RdPoint], center: f64) -> Result<[f64; 4]> {
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for p in curve {
        let x = p.psnr - center;
        let powers = [1.0, x, x * x, x * x * x];
        let y = p.rate.log10();
        for i in 0..4 {
            atb[i] += powers[i] * y;
            for j in 0..4 {
                ata[i][j] += powers[i] * powers[j];
            }
        }
    }
    solve4(ata, atb).ok_or_else(|| Error::Fit("singular normal equations".into()))
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= scale * 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let s: f64 = (i + 1..4).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

fn integral(c: &[f64; 4], center: f64, lo: f64, hi: f64) -> f64 {
    let antiderivative = |x: f64| {
        let x = x - center;
        c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0
    };
    antiderivative(hi) - antiderivative(lo)
}

/// Mean of `log10(rate_a) − log10(rate_b)` over the overlapping PSNR interval.
pub fn bjontegaard_log_delta(a: &[RdPoint], b: &[RdPoint]) -> Result<f64> {
    check_curve(a, "A")?;
    check_curve(b, "B")?;
    let range = |c: &[RdPoint]| {
        c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.psnr), hi.max(p.psnr)))
    };
    let (a_lo, a_hi) = range(a);
    let (b_lo, b_hi) = range(b);
    let (lo, hi) = (a_lo.max(b_lo), a_hi.min(b_hi));
    if !(hi > lo) {
        return Err(Error::Fit(format!("PSNR ranges [{a_lo}, {a_hi}] and [{b_lo}, {b_hi}] do not overlap")));
    }
    let center = 0.5 * (lo + hi);
    let ca = fit_cubic(a, center)?;
    let cb = fit_cubic(b, center)?;
    Ok((integral(&ca, center, lo, hi) - integral(&cb, center, lo, hi)) / (hi - lo))
}

/// Average bitrate difference of curve `a` relative to `b`, in percent;
/// negative means `a` needs fewer bits.
pub fn bjontegaard(a: &[RdPoint], b: &[RdPoint]) -> Result<f64> {
    Ok(100.0 * (10f64.powf(bjontegaard_log_delta(a, b)?) - 1.0))
}

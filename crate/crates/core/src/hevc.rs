//! H.265-style intra prediction: 35 modes over one row and one column of
//! decoded neighbors, plus the fast-list stage of mode selection.
//!
//! Predictions are computed in integer arithmetic with 1/32-pel two-tap
//! interpolation and without reference smoothing or boundary filters.

use crate::error::{invalid, Result};
use crate::image::{psnr_from_mse, GrayImage};
use crate::tensor::Tensor;

pub const MODE_COUNT: u8 = 35;
pub const PLANAR: u8 = 0;
pub const DC: u8 = 1;
pub const HORIZONTAL: u8 = 10;
pub const DIAGONAL: u8 = 18;
pub const VERTICAL: u8 = 26;

/// Value used when no neighbor at all is available.
pub const DEFAULT_SAMPLE: u8 = 128;

/// `intraPredAngle` for modes 2..=34.
const ANGLES: [i32; 33] = [
    32, 26, 21, 17, 13, 9, 5, 2, 0, -2, -5, -9, -13, -17, -21, -26, -32, -26, -21, -17, -13, -9, -5, -2, 0, 2, 5, 9,
    13, 17, 21, 26, 32,
];

/// A prediction mode: one of the 35 H.265 modes or the neural predictor.
///
/// The derived order puts `Pnns` first and then the H.265 modes by index,
/// which is the tie-breaking order used throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Pnns,
    Hevc(u8),
}

impl Mode {
    pub fn hevc(index: u8) -> Result<Mode> {
        if index >= MODE_COUNT {
            return Err(invalid!("mode index {index} is not in 0..35"));
        }
        Ok(Mode::Hevc(index))
    }

    pub fn is_angular(self) -> bool {
        matches!(self, Mode::Hevc(i) if i >= 2)
    }

    pub fn label(self) -> String {
        match self {
            Mode::Pnns => "pnns".to_string(),
            Mode::Hevc(i) => i.to_string(),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Neighbors of an `m×m` block after substitution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceSamples {
    pub m: usize,
    /// `2m + 1` samples: the top-left corner followed by the row above, left to right.
    pub above: Vec<u8>,
    /// `2m` samples: the column to the left, top to bottom.
    pub left: Vec<u8>,
    /// Availability before substitution, same layout as `above`.
    pub above_available: Vec<bool>,
    /// Availability before substitution, same layout as `left`.
    pub left_available: Vec<bool>,
}

impl ReferenceSamples {
    /// Gathers the neighbors of the block at `(row, col)`; `available(r, c)` says
    /// whether pixel `(r, c)` of `decoded` may be used. Out-of-image pixels are never used.
    pub fn build(
        decoded: &GrayImage,
        row: usize,
        col: usize,
        m: usize,
        available: impl Fn(usize, usize) -> bool,
    ) -> ReferenceSamples {
        let (h, w) = (decoded.height() as isize, decoded.width() as isize);
        let fetch = |r: isize, c: isize| -> Option<u8> {
            if r < 0 || c < 0 || r >= h || c >= w || !available(r as usize, c as usize) {
                None
            } else {
                Some(decoded.get(r as usize, c as usize))
            }
        };
        let (r0, c0) = (row as isize, col as isize);
        let above: Vec<Option<u8>> = (-1..2 * m as isize).map(|dx| fetch(r0 - 1, c0 + dx)).collect();
        let left: Vec<Option<u8>> = (0..2 * m as isize).map(|dy| fetch(r0 + dy, c0 - 1)).collect();
        ReferenceSamples::substitute(m, &above, &left)
    }

    /// Fills missing samples by propagation along the scan bottom-left → corner → top-right.
    pub fn substitute(m: usize, above: &[Option<u8>], left: &[Option<u8>]) -> ReferenceSamples {
        debug_assert_eq!(above.len(), 2 * m + 1);
        debug_assert_eq!(left.len(), 2 * m);
        // scan order: left column bottom to top, then corner and above row left to right
        let scan: Vec<Option<u8>> = left.iter().rev().chain(above.iter()).copied().collect();
        let filled: Vec<u8> = match scan.iter().flatten().next() {
            None => vec![DEFAULT_SAMPLE; scan.len()],
            Some(&first) => {
                let mut prev = first;
                scan.iter()
                    .map(|s| {
                        if let Some(v) = s {
                            prev = *v;
                        }
                        prev
                    })
                    .collect()
            }
        };
        let (l, a) = filled.split_at(2 * m);
        ReferenceSamples {
            m,
            above: a.to_vec(),
            left: l.iter().rev().copied().collect(),
            above_available: above.iter().map(Option::is_some).collect(),
            left_available: left.iter().map(Option::is_some).collect(),
        }
    }

    /// All samples available with the given values.
    pub fn from_values(m: usize, above: Vec<u8>, left: Vec<u8>) -> Result<ReferenceSamples> {
        if above.len() != 2 * m + 1 || left.len() != 2 * m {
            return Err(invalid!("reference samples for m = {m} need {} above and {} left values", 2 * m + 1, 2 * m));
        }
        Ok(ReferenceSamples {
            m,
            above_available: vec![true; above.len()],
            left_available: vec![true; left.len()],
            above,
            left,
        })
    }

    /// `p[x][-1]` for `x ∈ -1..2m`.
    #[inline]
    fn top(&self, x: i32) -> i32 {
        self.above[(x + 1) as usize] as i32
    }

    /// `p[-1][y]` for `y ∈ -1..2m`.
    #[inline]
    fn side(&self, y: i32) -> i32 {
        if y < 0 {
            self.above[0] as i32
        } else {
            self.left[y as usize] as i32
        }
    }

    /// Swaps the roles of the above row and the left column.
    pub fn transposed(&self) -> ReferenceSamples {
        let mut above = vec![self.above[0]];
        above.extend_from_slice(&self.left);
        let mut above_available = vec![self.above_available[0]];
        above_available.extend_from_slice(&self.left_available);
        ReferenceSamples {
            m: self.m,
            above,
            left: self.above[1..].to_vec(),
            above_available,
            left_available: self.above_available[1..].to_vec(),
        }
    }
}

fn check_block_width(m: usize) -> Result<u32> {
    if !m.is_power_of_two() || !(4..=64).contains(&m) {
        return Err(invalid!("intra prediction supports m in {{4, 8, 16, 32, 64}}, not {m}"));
    }
    Ok(m.trailing_zeros())
}

/// Integer prediction of `mode` into `out` (row-major, `m²` values).
pub fn predict_into(refs: &ReferenceSamples, mode: u8, out: &mut [i32]) -> Result<()> {
    let m = refs.m;
    let log2 = check_block_width(m)?;
    if mode >= MODE_COUNT {
        return Err(invalid!("mode index {mode} is not in 0..35"));
    }
    if out.len() != m * m {
        return Err(invalid!("output buffer must hold {} values", m * m));
    }
    let n = m as i32;
    match mode {
        PLANAR => {
            let (top_right, bottom_left) = (refs.top(n), refs.side(n));
            for y in 0..n {
                for x in 0..n {
                    let v = (n - 1 - x) * refs.side(y) + (x + 1) * top_right + (n - 1 - y) * refs.top(x) + (y + 1) * bottom_left + n;
                    out[(y * n + x) as usize] = v >> (log2 + 1);
                }
            }
        }
        DC => {
            let sum: i32 = (0..n).map(|i| refs.top(i) + refs.side(i)).sum();
            out.fill((sum + n) >> (log2 + 1));
        }
        _ => angular(refs, mode, out),
    }
    Ok(())
}

fn angular(refs: &ReferenceSamples, mode: u8, out: &mut [i32]) {
    let n = refs.m as i32;
    let angle = ANGLES[(mode - 2) as usize];
    let vertical = mode >= DIAGONAL;
    // main and side reference arrays, indexed from -n
    let main = |i: i32| if vertical { refs.top(i) } else { refs.side(i) };
    let side = |i: i32| if vertical { refs.side(i) } else { refs.top(i) };
    let offset = n as usize;
    let mut r = vec![0i32; 3 * n as usize + 1];
    for x in 0..=n {
        r[offset + x as usize] = main(x - 1);
    }
    if angle < 0 {
        let inv_angle = inverse_angle(angle);
        let last = (n * angle) >> 5;
        if last < -1 {
            for x in last..=-1 {
                r[(offset as i32 + x) as usize] = side(-1 + ((x * inv_angle + 128) >> 8));
            }
        }
    } else {
        for x in n + 1..=2 * n {
            r[offset + x as usize] = main(x - 1);
        }
    }
    let at = |i: i32| r[(offset as i32 + i) as usize];
    for j in 0..n {
        let pos = (j + 1) * angle;
        let (idx, fact) = (pos >> 5, pos & 31);
        for i in 0..n {
            let v = if fact != 0 {
                ((32 - fact) * at(i + idx + 1) + fact * at(i + idx + 2) + 16) >> 5
            } else {
                at(i + idx + 1)
            };
            // vertical modes walk rows with j, horizontal modes walk columns
            let (y, x) = if vertical { (j, i) } else { (i, j) };
            out[(y * n + x) as usize] = v;
        }
    }
}

/// `invAngle = round(8192 / angle)` for the negative angles.
fn inverse_angle(angle: i32) -> i32 {
    match angle {
        -2 => -4096,
        -5 => -1638,
        -9 => -910,
        -13 => -630,
        -17 => -482,
        -21 => -390,
        -26 => -315,
        _ => -256,
    }
}

/// Prediction of `mode` as an `[m, m]` tensor.
pub fn predict_mode(refs: &ReferenceSamples, mode: u8) -> Result<Tensor> {
    let mut out = vec![0i32; refs.m * refs.m];
    predict_into(refs, mode, &mut out)?;
    Tensor::from_vec(&[refs.m, refs.m], out.into_iter().map(f64::from).collect())
}

/// All 35 predictions, indexed by mode.
pub fn predict_all(refs: &ReferenceSamples) -> Result<Vec<Vec<i32>>> {
    (0..MODE_COUNT)
        .map(|mode| {
            let mut out = vec![0i32; refs.m * refs.m];
            predict_into(refs, mode, &mut out)?;
            Ok(out)
        })
        .collect()
}

pub fn sad(block: &[f64], prediction: &[i32]) -> f64 {
    block.iter().zip(prediction).map(|(y, &p)| (y - p as f64).abs()).sum()
}

/// `(SAD + λ_fast · bits(mode), mode)` for every candidate, ascending, ties to the lower mode index.
pub fn fast_costs(
    block: &Tensor,
    refs: &ReferenceSamples,
    candidates: &[u8],
    lambda_fast: f64,
    bits: impl Fn(u8) -> u32,
) -> Result<Vec<(f64, u8)>> {
    if block.len() != refs.m * refs.m {
        return Err(invalid!("block has {} pixels, references are for m = {}", block.len(), refs.m));
    }
    let mut pred = vec![0i32; refs.m * refs.m];
    let mut costs = Vec::with_capacity(candidates.len());
    for &mode in candidates {
        predict_into(refs, mode, &mut pred)?;
        costs.push((sad(block.data(), &pred) + lambda_fast * bits(mode) as f64, mode));
    }
    costs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(costs)
}

/// The `list_size` candidates of lowest `SAD + λ_fast · bits(mode)`, ties to the lower mode index.
pub fn fast_mode_list(
    block: &Tensor,
    refs: &ReferenceSamples,
    candidates: &[u8],
    lambda_fast: f64,
    bits: impl Fn(u8) -> u32,
    list_size: usize,
) -> Result<Vec<u8>> {
    if list_size == 0 {
        return Err(invalid!("fast list size must be at least 1"));
    }
    let costs = fast_costs(block, refs, candidates, lambda_fast, bits)?;
    Ok(costs.into_iter().take(list_size).map(|(_, mode)| mode).collect())
}

/// The H.265 mode with the highest prediction PSNR, ties to the lower index.
pub fn best_mode_psnr(block: &Tensor, refs: &ReferenceSamples) -> Result<(u8, f64)> {
    if block.len() != refs.m * refs.m {
        return Err(invalid!("block has {} pixels, references are for m = {}", block.len(), refs.m));
    }
    let mut pred = vec![0i32; refs.m * refs.m];
    let mut best = (0u8, f64::NEG_INFINITY);
    for mode in 0..MODE_COUNT {
        predict_into(refs, mode, &mut pred)?;
        let mse = block.data().iter().zip(&pred).map(|(y, &p)| (y - p as f64).powi(2)).sum::<f64>() / block.len() as f64;
        let p = psnr_from_mse(mse);
        if p > best.1 {
            best = (mode, p);
        }
    }
    Ok(best)
}

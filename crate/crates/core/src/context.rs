//! Context geometry, extraction, masking and augmentation.
//!
//! For an `m×m` block whose top-left pixel is `(row, col)`:
//!
//! ```text
//!            col-m     col      col+m    col+2m
//!   row-m    +--------+--------+--------+
//!            |            X1 (m × 3m)   |
//!   row      +--------+--------+--------+
//!            |        |        |
//!            |   X0   | block  |
//!   row+m    | (2m×m) +--------+
//!            |        |
//!   row+2m   +--------+
//! ```
//!
//! Undecoded pixels are covered by two masks set to the mean intensity α:
//! the bottom `n0` rows of X0 and the rightmost `n1` columns of X1.

use crate::error::{invalid, Result};
use crate::image::GrayImage;
use crate::tensor::Tensor;
use rand::Rng;

pub const BLOCK_WIDTHS: [usize; 5] = [4, 8, 16, 32, 64];
/// Minibatch size of the augmentation procedure.
pub const MINIBATCH: usize = 100;

/// The two context rectangles of one block plus their masking state.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextPair {
    pub m: usize,
    /// `[2m, m]`, left of and below-left of the block.
    pub x0: Tensor,
    /// `[m, 3m]`, above-left, above and above-right of the block.
    pub x1: Tensor,
    pub n0: usize,
    pub n1: usize,
    pub alpha: f64,
}

/// An `m×m` target block with its context.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSample {
    pub context: ContextPair,
    /// `[m, m]`, raw intensities.
    pub target: Tensor,
}

/// Result of a test-time extraction.
#[derive(Clone, Debug, PartialEq)]
pub enum Extraction {
    Context(ContextPair),
    /// No usable context: the caller falls back to the zero prediction.
    OutOfBounds,
}

fn check_geometry(m: usize, n0: usize, n1: usize) -> Result<()> {
    if m == 0 || !m.is_multiple_of(4) {
        return Err(invalid!("block width {m} is not a positive multiple of 4"));
    }
    if n0 > m || n1 > m || !n0.is_multiple_of(4) || !n1.is_multiple_of(4) {
        return Err(invalid!("mask sizes ({n0}, {n1}) must be multiples of 4 in [0, {m}]"));
    }
    Ok(())
}

impl ContextPair {
    /// Builds a context by sampling `pixel(r, c)` in image coordinates
    /// around a block at `(row, col)`; masked entries are never sampled.
    fn gather(
        m: usize,
        n0: usize,
        n1: usize,
        alpha: f64,
        row: usize,
        col: usize,
        pixel: impl Fn(usize, usize) -> u8,
    ) -> ContextPair {
        let mut x0 = Tensor::filled(&[2 * m, m], alpha);
        for r in 0..2 * m - n0 {
            for c in 0..m {
                x0.set2(r, c, pixel(row + r, col - m + c) as f64);
            }
        }
        let mut x1 = Tensor::filled(&[m, 3 * m], alpha);
        for r in 0..m {
            for c in 0..3 * m - n1 {
                x1.set2(r, c, pixel(row - m + r, col - m + c) as f64);
            }
        }
        ContextPair { m, x0, x1, n0, n1, alpha }
    }

    /// X0 and X1 with α subtracted.
    pub fn centered(&self) -> (Tensor, Tensor) {
        let a = self.alpha;
        (self.x0.map(|v| v - a), self.x1.map(|v| v - a))
    }

    /// Row-major X0 followed by row-major X1 (length `5m²`).
    pub fn vectorize(&self) -> Tensor {
        let mut v = Vec::with_capacity(5 * self.m * self.m);
        v.extend_from_slice(self.x0.data());
        v.extend_from_slice(self.x1.data());
        Tensor::from_vec(&[v.len()], v).expect("length is 5m²")
    }

    pub fn vectorize_centered(&self) -> Tensor {
        let a = self.alpha;
        self.vectorize().map(|v| v - a)
    }

    /// Inverse of [`ContextPair::vectorize`].
    pub fn devectorize(v: &Tensor, m: usize, n0: usize, n1: usize, alpha: f64) -> Result<ContextPair> {
        if v.len() != 5 * m * m {
            return Err(invalid!("context vector of length {} does not fit m = {m}", v.len()));
        }
        let split = 2 * m * m;
        Ok(ContextPair {
            m,
            x0: Tensor::from_vec(&[2 * m, m], v.data()[..split].to_vec())?,
            x1: Tensor::from_vec(&[m, 3 * m], v.data()[split..].to_vec())?,
            n0,
            n1,
            alpha,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.x0.len() + self.x1.len()
    }
}

impl BlockSample {
    pub fn m(&self) -> usize {
        self.context.m
    }

    pub fn target_centered(&self) -> Tensor {
        let a = self.context.alpha;
        self.target.map(|v| v - a)
    }
}

/// Mean pixel intensity over a set of images.
pub fn compute_alpha(images: &[GrayImage]) -> Result<f64> {
    let count: usize = images.iter().map(|i| i.data().len()).sum();
    if count == 0 {
        return Err(invalid!("cannot compute the mean intensity of an empty image set"));
    }
    let sum: u64 = images.iter().flat_map(|i| i.data()).map(|&v| v as u64).sum();
    Ok(sum as f64 / count as f64)
}

/// Extracts the context of the block at `(row, col)` from a decoded image.
///
/// Returns [`Extraction::OutOfBounds`] when the top-left context pixel lies
/// outside the image, or when an unmasked context pixel does.
pub fn extract_context_test(
    decoded: &GrayImage,
    row: usize,
    col: usize,
    m: usize,
    n0: usize,
    n1: usize,
    alpha: f64,
) -> Result<Extraction> {
    check_geometry(m, n0, n1)?;
    if row < m || col < m || row >= decoded.height() || col >= decoded.width() {
        return Ok(Extraction::OutOfBounds);
    }
    let bottom = row + 2 * m - n0;
    let right = col + 2 * m - n1;
    if bottom > decoded.height() || right > decoded.width() || col + m > decoded.width() {
        return Ok(Extraction::OutOfBounds);
    }
    Ok(Extraction::Context(ContextPair::gather(m, n0, n1, alpha, row, col, |r, c| {
        decoded.get(r, c)
    })))
}

/// Range of valid block positions (inclusive) along one axis of length `len`.
pub fn training_positions(len: usize, m: usize) -> Option<(usize, usize)> {
    if len < 3 * m {
        None
    } else {
        Some((m, len - 2 * m))
    }
}

/// A block and its context at a uniformly random valid position of `image`.
pub fn extract_training_pair<R: Rng + ?Sized>(
    image: &GrayImage,
    m: usize,
    n0: usize,
    n1: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<BlockSample> {
    extract_training_view(&View::identity(image), m, n0, n1, alpha, rng)
}

/// Rotated and/or flipped view of an image, read through without copying.
pub struct View<'a> {
    image: &'a GrayImage,
    quarter_turns: u8,
    flip: bool,
}

impl<'a> View<'a> {
    pub fn identity(image: &'a GrayImage) -> View<'a> {
        View { image, quarter_turns: 0, flip: false }
    }

    /// Counter-clockwise rotation by `quarter_turns × 90°`, then an optional
    /// horizontal flip.
    pub fn new(image: &'a GrayImage, quarter_turns: u8, flip: bool) -> View<'a> {
        View { image, quarter_turns: quarter_turns % 4, flip }
    }

    pub fn width(&self) -> usize {
        if self.quarter_turns.is_multiple_of(2) {
            self.image.width()
        } else {
            self.image.height()
        }
    }

    pub fn height(&self) -> usize {
        if self.quarter_turns.is_multiple_of(2) {
            self.image.height()
        } else {
            self.image.width()
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        let c = if self.flip { self.width() - 1 - c } else { c };
        let (w, h) = (self.image.width(), self.image.height());
        match self.quarter_turns {
            0 => self.image.get(r, c),
            1 => self.image.get(c, w - 1 - r),
            2 => self.image.get(h - 1 - r, w - 1 - c),
            _ => self.image.get(h - 1 - c, r),
        }
    }

    pub fn materialize(&self) -> GrayImage {
        GrayImage::from_fn(self.width(), self.height(), |r, c| self.get(r, c))
    }
}

fn extract_training_view<R: Rng + ?Sized>(
    view: &View<'_>,
    m: usize,
    n0: usize,
    n1: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<BlockSample> {
    check_geometry(m, n0, n1)?;
    let (Some((r_lo, r_hi)), Some((c_lo, c_hi))) =
        (training_positions(view.height(), m), training_positions(view.width(), m))
    else {
        return Err(invalid!(
            "{}x{} image cannot host the 3m x 3m footprint for m = {m}",
            view.width(),
            view.height()
        ));
    };
    let row = rng.gen_range(r_lo..=r_hi);
    let col = rng.gen_range(c_lo..=c_hi);
    Ok(sample_at(view, row, col, m, n0, n1, alpha))
}

/// The training sample whose block sits at `(row, col)` of `view`.
pub fn sample_at(view: &View<'_>, row: usize, col: usize, m: usize, n0: usize, n1: usize, alpha: f64) -> BlockSample {
    let context = ContextPair::gather(m, n0, n1, alpha, row, col, |r, c| view.get(r, c));
    let mut target = Tensor::zeros(&[m, m]);
    for r in 0..m {
        for c in 0..m {
            target.set2(r, c, view.get(row + r, col + c) as f64);
        }
    }
    BlockSample { context, target }
}

/// Uniform draw from `{0, 4, ..., m}`.
pub fn draw_mask_extent<R: Rng + ?Sized>(m: usize, rng: &mut R) -> usize {
    rng.gen_range(0..=m / 4) * 4
}

/// How the mask extents `(n0, n1)` of a training sample are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskPolicy {
    Fixed { n0: usize, n1: usize },
    /// `n0` and `n1` drawn independently and uniformly from `{0, 4, ..., m}`.
    UniformRandom,
}

impl MaskPolicy {
    pub fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> (usize, usize) {
        match *self {
            MaskPolicy::Fixed { n0, n1 } => (n0, n1),
            MaskPolicy::UniformRandom => {
                let n0 = draw_mask_extent(m, rng);
                (n0, draw_mask_extent(m, rng))
            }
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match *self {
            MaskPolicy::Fixed { n0, n1 } => check_geometry(m, n0, n1),
            MaskPolicy::UniformRandom => check_geometry(m, 0, 0),
        }
    }
}

impl std::fmt::Display for MaskPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskPolicy::Fixed { n0, n1 } => write!(f, "fixed-{n0}-{n1}"),
            MaskPolicy::UniformRandom => f.write_str("uniform"),
        }
    }
}

impl std::str::FromStr for MaskPolicy {
    type Err = crate::Error;
    /// `uniform` or `fixed-N0-N1`.
    fn from_str(s: &str) -> Result<MaskPolicy> {
        if s == "uniform" {
            return Ok(MaskPolicy::UniformRandom);
        }
        let parts: Vec<&str> = s.split('-').collect();
        if let ["fixed", n0, n1] = parts.as_slice() {
            if let (Ok(n0), Ok(n1)) = (n0.parse(), n1.parse()) {
                return Ok(MaskPolicy::Fixed { n0, n1 });
            }
        }
        Err(invalid!("mask policy must be `uniform` or `fixed-N0-N1`, got {s:?}"))
    }
}

/// Per-sample random choices of the augmentation procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub crop: usize,
    pub quarter_turns: u8,
    pub flip: bool,
    pub n0: usize,
    pub n1: usize,
}

pub fn draw_augmentation<R: Rng + ?Sized>(crop_count: usize, m: usize, masks: MaskPolicy, rng: &mut R) -> AugmentDraw {
    let crop = rng.gen_range(0..crop_count);
    let quarter_turns = rng.gen_range(0..4u8);
    let flip = rng.gen_bool(0.5);
    let (n0, n1) = masks.draw(m, rng);
    AugmentDraw { crop, quarter_turns, flip, n0, n1 }
}

/// One minibatch of randomly rotated, flipped and masked training samples.
/// Centered views come from [`ContextPair::centered`] and
/// [`BlockSample::target_centered`].
pub fn augment_minibatch<R: Rng + ?Sized>(
    crops: &[GrayImage],
    m: usize,
    alpha: f64,
    batch: usize,
    masks: MaskPolicy,
    rng: &mut R,
) -> Result<Vec<BlockSample>> {
    masks.validate(m)?;
    if crops.is_empty() {
        return Err(invalid!("augmentation needs at least one crop"));
    }
    (0..batch)
        .map(|_| {
            let d = draw_augmentation(crops.len(), m, masks, rng);
            let view = View::new(&crops[d.crop], d.quarter_turns, d.flip);
            extract_training_view(&view, m, d.n0, d.n1, alpha, rng)
        })
        .collect()
}

/// `clip(Ŷc + α, 0, 255)`.
pub fn postprocess_prediction(centered: &Tensor, alpha: f64) -> Tensor {
    centered.map(|v| (v + alpha).clamp(0.0, 255.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |r, c| ((r * 7 + c * 3) % 256) as u8)
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(compute_alpha(&[GrayImage::filled(4, 4, 100)]).unwrap(), 100.0);
        let a = compute_alpha(&[GrayImage::filled(3, 3, 0), GrayImage::filled(3, 3, 255)]).unwrap();
        assert_eq!(a, 127.5);
        assert!(compute_alpha(&[]).is_err());
    }

    #[test]
    fn fig5_mask_layout() {
        let img = ramp(64, 64);
        let Extraction::Context(ctx) = extract_context_test(&img, 16, 16, 8, 4, 4, 99.5).unwrap() else {
            panic!("expected a context");
        };
        for r in 0..16 {
            for c in 0..8 {
                let masked = r >= 12;
                assert_eq!(ctx.x0.at2(r, c) == 99.5, masked, "x0 ({r},{c})");
                if !masked {
                    assert_eq!(ctx.x0.at2(r, c), img.get(16 + r, 8 + c) as f64);
                }
            }
        }
        for r in 0..8 {
            for c in 0..24 {
                let masked = c >= 20;
                assert_eq!(ctx.x1.at2(r, c) == 99.5, masked, "x1 ({r},{c})");
                if !masked {
                    assert_eq!(ctx.x1.at2(r, c), img.get(8 + r, 8 + c) as f64);
                }
            }
        }
    }

    #[test]
    fn origin_is_out_of_bounds() {
        let img = ramp(32, 32);
        assert_eq!(extract_context_test(&img, 0, 0, 4, 0, 0, 0.0).unwrap(), Extraction::OutOfBounds);
        // above-right strip beyond the right edge is only usable when masked
        assert_eq!(extract_context_test(&img, 8, 24, 8, 0, 0, 0.0).unwrap(), Extraction::OutOfBounds);
        assert!(matches!(extract_context_test(&img, 8, 24, 8, 0, 8, 0.0).unwrap(), Extraction::Context(_)));
    }

    #[test]
    fn constant_alpha_image_centers_to_zero() {
        let img = GrayImage::filled(40, 40, 120);
        let Extraction::Context(ctx) = extract_context_test(&img, 8, 8, 8, 0, 4, 120.0).unwrap() else {
            panic!()
        };
        let (c0, c1) = ctx.centered();
        assert!(c0.data().iter().chain(c1.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn training_position_ranges() {
        assert_eq!(training_positions(320, 64), Some((64, 192)));
        assert_eq!(training_positions(12, 4), Some((4, 4)));
        assert_eq!(training_positions(11, 4), None);
        let img = ramp(12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = extract_training_pair(&img, 4, 0, 0, 0.0, &mut rng).unwrap();
        assert_eq!(s.target.at2(0, 0), img.get(4, 4) as f64);
        assert!(extract_training_pair(&ramp(11, 12), 4, 0, 0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn test_and_train_geometry_agree() {
        let img = ramp(48, 48);
        let Extraction::Context(ctx) = extract_context_test(&img, 12, 16, 8, 4, 8, 10.0).unwrap() else {
            panic!()
        };
        let s = sample_at(&View::identity(&img), 12, 16, 8, 4, 8, 10.0);
        assert_eq!(s.context, ctx);
    }

    #[test]
    fn vectorize_layout_and_round_trip() {
        let img = ramp(64, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [4, 8] {
            let s = extract_training_pair(&img, m, 4, 0, 3.0, &mut rng).unwrap();
            let v = s.context.vectorize();
            assert_eq!(v.len(), 5 * m * m);
            assert_eq!(v.data()[0], s.context.x0.at2(0, 0));
            assert_eq!(v.data()[2 * m * m], s.context.x1.at2(0, 0));
            let back = ContextPair::devectorize(&v, m, 4, 0, 3.0).unwrap();
            assert_eq!(back, s.context);
        }
    }

    #[test]
    fn view_matches_materialized_rotation() {
        let img = ramp(6, 4);
        for q in 0..4u8 {
            for flip in [false, true] {
                let expected = if flip { img.rotate(q).flip_horizontal() } else { img.rotate(q) };
                assert_eq!(View::new(&img, q, flip).materialize(), expected);
            }
        }
    }

    #[test]
    fn postprocess_clips() {
        let alpha = 110.0;
        let y = Tensor::from_vec(&[3], vec![300.0 - alpha, -alpha - 5.0, 0.0]).unwrap();
        assert_eq!(postprocess_prediction(&y, alpha).data(), &[255.0, 0.0, alpha]);
    }

    #[test]
    fn augmentation_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 16;
        let n = 10_000;
        let mut turns = [0usize; 4];
        let mut n0 = [0usize; 5];
        for _ in 0..n {
            let d = draw_augmentation(3, m, MaskPolicy::UniformRandom, &mut rng);
            turns[d.quarter_turns as usize] += 1;
            n0[d.n0 / 4] += 1;
        }
        for t in turns {
            assert!((t as f64 / n as f64 - 0.25).abs() < 0.02);
        }
        for k in n0 {
            assert!((k as f64 / n as f64 - 0.2).abs() < 0.02);
        }
    }

    #[test]
    fn minibatch_is_seeded() {
        let crops = vec![ramp(48, 48), ramp(40, 56)];
        let a = augment_minibatch(&crops, 8, 50.0, 10, MaskPolicy::UniformRandom, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = augment_minibatch(&crops, 8, 50.0, 10, MaskPolicy::UniformRandom, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }
}

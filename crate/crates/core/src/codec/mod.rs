//! Intra-only image codec with optional neural prediction.
//!
//! The image is padded to a multiple of 64 and coded CTB by CTB in raster
//! order. Each CTB is a quadtree (64 → 32 → 16 → 8) whose split decisions are
//! made by comparing exact rate-distortion costs; an unsplit 8×8 block may be
//! predicted as four 4×4 blocks. Every leaf picks its mode in two stages: a
//! SAD-based fast list, then a full residual encode per candidate.
//!
//! Stream layout: `"PNC1" | width u32 | height u32 | QP u8 | scheme u8 |
//! predictor digest [u8; 8]`, followed by the bit-packed CTB payloads.

pub mod bits;
pub mod residual;
pub mod signal;

pub use bits::{BitReader, BitWriter};
pub use residual::{
    code_coefficients, coefficient_bits, decode_coefficients, dequantize_inverse, quant_step, transform_quantize,
    Transform, TransformCache, MAX_QP,
};
pub use signal::{derive_mpm, mode_bits, read_mode, write_mode, Scheme};

use crate::arch::PredictorSet;
use crate::context::{extract_context_test, Extraction};
use crate::error::{invalid, Error, Result};
use crate::hevc::{fast_costs, predict_into, sad, Mode, ReferenceSamples};
use crate::image::{psnr, GrayImage};
use crate::tensor::Tensor;
use std::collections::BTreeMap;

pub const CTB_SIZE: usize = 64;
pub const MIN_CB_SIZE: usize = 8;
pub const PB_SPLIT_SIZE: usize = 4;
const MAGIC: &[u8; 4] = b"PNC1";
pub const HEADER_BYTES: usize = 22;

/// `0.85 · 2^((QP - 12) / 3)`.
pub fn lambda_rd(qp: u8) -> f64 {
    0.85 * 2f64.powf((qp as f64 - 12.0) / 3.0)
}

pub fn lambda_fast(qp: u8) -> f64 {
    lambda_rd(qp).sqrt()
}

/// Fast-list length: 8 for 4×4 and 8×8 blocks, 3 above.
pub fn fast_list_size(m: usize) -> usize {
    if m <= 8 {
        8
    } else {
        3
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub width: u32,
    pub height: u32,
    pub qp: u8,
    pub scheme: Scheme,
    pub digest: [u8; 8],
}

impl Header {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.qp);
        out.push(self.scheme.code());
        out.extend_from_slice(&self.digest);
    }

    pub fn parse(bytes: &[u8]) -> Result<Header> {
        if bytes.len() < HEADER_BYTES || &bytes[..4] != MAGIC {
            return Err(Error::CorruptBitstream("missing PNC1 header".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let header = Header {
            width: u32_at(4),
            height: u32_at(8),
            qp: bytes[12],
            scheme: Scheme::from_code(bytes[13])?,
            digest: bytes[14..22].try_into().expect("8 bytes"),
        };
        if header.width == 0 || header.height == 0 || header.qp > MAX_QP {
            return Err(Error::CorruptBitstream("invalid header fields".into()));
        }
        Ok(header)
    }
}

/// Per-width mode counts.
pub type ModeCounts = BTreeMap<usize, BTreeMap<Mode, u64>>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stats {
    /// Winner of every RD mode selection run, including those in discarded partitions.
    pub rd_wins: ModeCounts,
    /// Modes of the prediction blocks actually coded.
    pub selected: ModeCounts,
    /// Total stream length in bits, header included.
    pub total_bits: u64,
    pub pixels: u64,
    pub psnr: f64,
}

impl Stats {
    pub fn bits_per_pixel(&self) -> f64 {
        self.total_bits as f64 / self.pixels as f64
    }

    pub fn coded_blocks(&self) -> u64 {
        self.selected.values().flat_map(|c| c.values()).sum()
    }

    /// Fraction of coded prediction blocks that use the neural mode.
    pub fn pnns_fraction(&self) -> f64 {
        let pnns: u64 = self.selected.values().filter_map(|c| c.get(&Mode::Pnns)).sum();
        pnns as f64 / self.coded_blocks().max(1) as f64
    }
}

fn bump(counts: &mut ModeCounts, m: usize, mode: Mode) {
    *counts.entry(m).or_default().entry(mode).or_default() += 1;
}

/// `ν(m, mode)`: share of RD selections at width `m` won by `mode`, pooled over encodes.
/// Widths without any selection are omitted.
pub fn mode_frequency_nu<'a>(stats: impl IntoIterator<Item = &'a Stats>) -> BTreeMap<usize, BTreeMap<Mode, f64>> {
    let mut pooled = ModeCounts::new();
    for s in stats {
        for (&m, counts) in &s.rd_wins {
            for (&mode, &n) in counts {
                *pooled.entry(m).or_default().entry(mode).or_default() += n;
            }
        }
    }
    pooled
        .into_iter()
        .filter_map(|(m, counts)| {
            let total: u64 = counts.values().sum();
            (total > 0).then(|| (m, counts.into_iter().map(|(mode, n)| (mode, n as f64 / total as f64)).collect()))
        })
        .collect()
}

/// Result of one RD mode decision.
#[derive(Clone, Debug, PartialEq)]
pub struct RdChoice {
    pub mode: Mode,
    pub cost: f64,
    pub sse: f64,
    pub bits: u64,
    pub levels: Vec<i32>,
    pub reconstruction: Vec<u8>,
}

/// `clip(round(prediction + dequantized residual))`.
pub fn reconstruct(t: &Transform, prediction: &[i32], levels: &[i32], qp: u8) -> Result<Vec<u8>> {
    let residual = dequantize_inverse(t, levels, qp)?;
    Ok(prediction.iter().zip(&residual).map(|(&p, r)| (p as f64 + r).round().clamp(0.0, 255.0) as u8).collect())
}

/// Full residual encode of every candidate; returns the lowest `SSE + λ_rd · bits`,
/// ties to the earlier mode in [`Mode`] order.
pub fn select_mode_rd(
    candidates: &[(Mode, Vec<i32>)],
    block: &[f64],
    mpm: &[u8; 3],
    scheme: Scheme,
    qp: u8,
    lambda: f64,
    t: &Transform,
) -> Result<RdChoice> {
    let mut best: Option<RdChoice> = None;
    for (mode, pred) in candidates {
        let residual: Vec<f64> = block.iter().zip(pred).map(|(y, &p)| y - p as f64).collect();
        let levels = transform_quantize(t, &residual, qp)?;
        let recon = reconstruct(t, pred, &levels, qp)?;
        let sse: f64 = block.iter().zip(&recon).map(|(y, &r)| (y - r as f64).powi(2)).sum();
        let bits = mode_bits(*mode, mpm, scheme) as u64 + coefficient_bits(&levels, t.zigzag());
        let cost = sse + lambda * bits as f64;
        let better = match &best {
            None => true,
            Some(b) => cost < b.cost || (cost == b.cost && *mode < b.mode),
        };
        if better {
            best = Some(RdChoice { mode: *mode, cost, sse, bits, levels, reconstruction: recon });
        }
    }
    best.ok_or_else(|| invalid!("RD selection needs at least one candidate"))
}

/// Reconstruction plus the per-4×4 mode map, shared by encoder and decoder.
struct Canvas<'p> {
    recon: GrayImage,
    modes: Vec<Option<Mode>>,
    units_wide: usize,
    ctbs_wide: usize,
    predictors: &'p PredictorSet,
    transforms: TransformCache,
}

struct Snapshot {
    row: usize,
    col: usize,
    size: usize,
    pixels: Vec<u8>,
    modes: Vec<Option<Mode>>,
}

fn z_order(r: usize, c: usize) -> usize {
    let mut z = 0;
    for bit in 0..4 {
        z |= ((c >> bit) & 1) << (2 * bit);
        z |= ((r >> bit) & 1) << (2 * bit + 1);
    }
    z
}

impl<'p> Canvas<'p> {
    fn new(width: usize, height: usize, predictors: &'p PredictorSet) -> Canvas<'p> {
        Canvas {
            recon: GrayImage::filled(width, height, 0),
            modes: vec![None; (width / 4) * (height / 4)],
            units_wide: width / 4,
            ctbs_wide: width / CTB_SIZE,
            predictors,
            transforms: TransformCache::default(),
        }
    }

    fn inside(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.recon.height() && (c as usize) < self.recon.width()
    }

    /// Whether pixel `(r, c)` is decoded before the block whose top-left is `(row, col)`.
    fn decoded_before(&self, row: usize, col: usize, r: usize, c: usize) -> bool {
        let ctb = |r: usize, c: usize| (r / CTB_SIZE) * self.ctbs_wide + c / CTB_SIZE;
        let (a, b) = (ctb(r, c), ctb(row, col));
        if a != b {
            return a < b;
        }
        let unit = |v: usize| (v % CTB_SIZE) / 4;
        z_order(unit(r), unit(c)) < z_order(unit(row), unit(col))
    }

    fn available(&self, row: usize, col: usize, r: isize, c: isize) -> bool {
        self.inside(r, c) && self.decoded_before(row, col, r as usize, c as usize)
    }

    fn refs(&self, row: usize, col: usize, m: usize) -> ReferenceSamples {
        ReferenceSamples::build(&self.recon, row, col, m, |r, c| self.decoded_before(row, col, r, c))
    }

    fn mode_at(&self, r: usize, c: usize) -> Option<Mode> {
        self.modes[(r / 4) * self.units_wide + c / 4]
    }

    fn mpm(&self, row: usize, col: usize, m: usize, scheme: Scheme) -> [u8; 3] {
        let left = (col > 0).then(|| self.mode_at(row + m - 1, col - 1)).flatten();
        let ctb_top = row - row % CTB_SIZE;
        let above = (row > ctb_top).then(|| self.mode_at(row - 1, col + m - 1)).flatten();
        derive_mpm(left, above, scheme)
    }

    /// Neural prediction rounded to integers; the all-zero block when there is
    /// no context or no predictor for this width.
    fn pnns_prediction(&self, row: usize, col: usize, m: usize) -> Result<Vec<i32>> {
        let Some(ckpt) = self.predictors.get(m) else {
            return Ok(vec![0; m * m]);
        };
        let (r, c, mi) = (row as isize, col as isize, m as isize);
        let n0 = if self.available(row, col, r + mi, c - mi) { 0 } else { m };
        let n1 = if self.available(row, col, r - mi, c + mi) { 0 } else { m };
        match extract_context_test(&self.recon, row, col, m, n0, n1, ckpt.alpha)? {
            Extraction::OutOfBounds => Ok(vec![0; m * m]),
            Extraction::Context(ctx) => {
                let pred = ckpt.network.predict_block(&ctx)?;
                Ok(pred.data().iter().map(|v| v.round() as i32).collect())
            }
        }
    }

    fn prediction(&self, mode: Mode, refs: &ReferenceSamples, row: usize, col: usize, m: usize) -> Result<Vec<i32>> {
        match mode {
            Mode::Pnns => self.pnns_prediction(row, col, m),
            Mode::Hevc(i) => {
                let mut out = vec![0; m * m];
                predict_into(refs, i, &mut out)?;
                Ok(out)
            }
        }
    }

    fn write_block(&mut self, row: usize, col: usize, m: usize, pixels: &[u8], mode: Mode) {
        for r in 0..m {
            for c in 0..m {
                self.recon.set(row + r, col + c, pixels[r * m + c]);
            }
        }
        for r in (0..m).step_by(4) {
            for c in (0..m).step_by(4) {
                self.modes[((row + r) / 4) * self.units_wide + (col + c) / 4] = Some(mode);
            }
        }
    }

    fn snapshot(&self, row: usize, col: usize, size: usize) -> Snapshot {
        let mut pixels = Vec::with_capacity(size * size);
        for r in row..row + size {
            pixels.extend((col..col + size).map(|c| self.recon.get(r, c)));
        }
        let mut modes = Vec::with_capacity(size * size / 16);
        for r in (row..row + size).step_by(4) {
            modes.extend((col..col + size).step_by(4).map(|c| self.mode_at(r, c)));
        }
        Snapshot { row, col, size, pixels, modes }
    }

    fn restore(&mut self, s: &Snapshot) {
        let mut pixels = s.pixels.iter();
        for r in s.row..s.row + s.size {
            for c in s.col..s.col + s.size {
                self.recon.set(r, c, *pixels.next().expect("snapshot size"));
            }
        }
        let mut modes = s.modes.iter();
        for r in (s.row..s.row + s.size).step_by(4) {
            for c in (s.col..s.col + s.size).step_by(4) {
                self.modes[(r / 4) * self.units_wide + c / 4] = *modes.next().expect("snapshot size");
            }
        }
    }
}

/// Child offsets of a quadtree node in z-order.
fn quadrants(row: usize, col: usize, size: usize) -> [(usize, usize); 4] {
    let h = size / 2;
    [(row, col), (row, col + h), (row + h, col), (row + h, col + h)]
}

struct Trial {
    cost: f64,
    bits: BitWriter,
    modes: Vec<(usize, Mode)>,
}

struct Encoder<'p> {
    canvas: Canvas<'p>,
    source: GrayImage,
    qp: u8,
    scheme: Scheme,
    lambda: f64,
    lambda_fast: f64,
    rd_wins: ModeCounts,
}

impl Encoder<'_> {
    fn leaf(&mut self, row: usize, col: usize, m: usize) -> Result<Trial> {
        let block: Vec<f64> =
            (0..m * m).map(|i| self.source.get(row + i / m, col + i % m) as f64).collect();
        let refs = self.canvas.refs(row, col, m);
        let mpm = self.canvas.mpm(row, col, m, self.scheme);
        let scheme = self.scheme;
        let block_t = Tensor::from_vec(&[m, m], block.clone())?;
        let mut ranked: Vec<(f64, Mode)> = fast_costs(&block_t, &refs, &scheme.hevc_candidates(), self.lambda_fast, |i| {
            mode_bits(Mode::Hevc(i), &mpm, scheme)
        })?
        .into_iter()
        .map(|(c, i)| (c, Mode::Hevc(i)))
        .collect();
        let mut pnns_pred = None;
        if scheme == Scheme::Substitution {
            // the neural mode competes for the fast list in the slot of mode 18
            let pred = self.canvas.pnns_prediction(row, col, m)?;
            let cost = sad(&block, &pred) + self.lambda_fast * mode_bits(Mode::Pnns, &mpm, scheme) as f64;
            ranked.push((cost, Mode::Pnns));
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            pnns_pred = Some(pred);
        }
        let mut list: Vec<Mode> = ranked.into_iter().take(fast_list_size(m)).map(|(_, mode)| mode).collect();
        if scheme == Scheme::Switch {
            list.push(Mode::Pnns);
        }
        list.sort();
        let mut candidates = Vec::with_capacity(list.len());
        for mode in list {
            let pred = match (mode, &pnns_pred) {
                (Mode::Pnns, Some(p)) => p.clone(),
                _ => self.canvas.prediction(mode, &refs, row, col, m)?,
            };
            candidates.push((mode, pred));
        }
        let t = self.canvas.transforms.get(m).clone();
        let choice = select_mode_rd(&candidates, &block, &mpm, scheme, self.qp, self.lambda, &t)?;
        bump(&mut self.rd_wins, m, choice.mode);
        let mut bits = BitWriter::new();
        write_mode(&mut bits, choice.mode, &mpm, scheme)?;
        code_coefficients(&mut bits, &choice.levels, t.zigzag());
        debug_assert_eq!(bits.len(), choice.bits);
        self.canvas.write_block(row, col, m, &choice.reconstruction, choice.mode);
        Ok(Trial { cost: choice.cost, bits, modes: vec![(m, choice.mode)] })
    }

    /// Codes the four children of a node after a flag bit.
    fn split(&mut self, row: usize, col: usize, size: usize) -> Result<Trial> {
        let mut bits = BitWriter::new();
        bits.put_bit(true);
        let mut trial = Trial { cost: self.lambda, bits, modes: Vec::new() };
        for (r, c) in quadrants(row, col, size) {
            let child = if size / 2 >= MIN_CB_SIZE { self.node(r, c, size / 2)? } else { self.leaf(r, c, size / 2)? };
            trial.cost += child.cost;
            trial.bits.append(&child.bits);
            trial.modes.extend(child.modes);
        }
        Ok(trial)
    }

    /// Codes a node of the quadtree both unsplit and split and keeps the cheaper.
    fn node(&mut self, row: usize, col: usize, size: usize) -> Result<Trial> {
        let before = self.canvas.snapshot(row, col, size);
        let leaf = self.leaf(row, col, size)?;
        let mut whole = Trial { cost: leaf.cost + self.lambda, bits: BitWriter::new(), modes: leaf.modes };
        whole.bits.put_bit(false);
        whole.bits.append(&leaf.bits);
        let after_whole = self.canvas.snapshot(row, col, size);
        self.canvas.restore(&before);
        let parts = self.split(row, col, size)?;
        if whole.cost <= parts.cost {
            self.canvas.restore(&after_whole);
            Ok(whole)
        } else {
            Ok(parts)
        }
    }
}

/// Output of [`encode_image`].
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    /// Encoder-side reconstruction at the original size.
    pub reconstruction: GrayImage,
    pub stats: Stats,
}

fn padded_size(v: usize) -> usize {
    v.div_ceil(CTB_SIZE) * CTB_SIZE
}

pub fn encode_image(image: &GrayImage, qp: u8, scheme: Scheme, predictors: &PredictorSet) -> Result<Encoded> {
    if qp > MAX_QP {
        return Err(invalid!("QP {qp} is outside 0..=51"));
    }
    if image.width() == 0 || image.height() == 0 {
        return Err(invalid!("cannot encode an empty image"));
    }
    let (pw, ph) = (padded_size(image.width()), padded_size(image.height()));
    let source = image.pad_to(pw, ph);
    let mut enc = Encoder {
        canvas: Canvas::new(pw, ph, predictors),
        source,
        qp,
        scheme,
        lambda: lambda_rd(qp),
        lambda_fast: lambda_fast(qp),
        rd_wins: ModeCounts::new(),
    };
    let mut payload = BitWriter::new();
    let mut selected = ModeCounts::new();
    for row in (0..ph).step_by(CTB_SIZE) {
        for col in (0..pw).step_by(CTB_SIZE) {
            let t = enc.node(row, col, CTB_SIZE)?;
            payload.append(&t.bits);
            for (m, mode) in t.modes {
                bump(&mut selected, m, mode);
            }
        }
    }
    let header = Header {
        width: image.width() as u32,
        height: image.height() as u32,
        qp,
        scheme,
        digest: predictors.digest(),
    };
    let mut bytes = Vec::with_capacity(HEADER_BYTES + payload.as_bytes().len());
    header.write(&mut bytes);
    bytes.extend_from_slice(payload.as_bytes());
    let reconstruction = enc.canvas.recon.crop(0, 0, image.height(), image.width())?;
    let to_f64 = |img: &GrayImage| img.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    let stats = Stats {
        rd_wins: enc.rd_wins,
        selected,
        total_bits: bytes.len() as u64 * 8,
        pixels: (image.width() * image.height()) as u64,
        psnr: psnr(&to_f64(image), &to_f64(&reconstruction)),
    };
    Ok(Encoded { bytes, reconstruction, stats })
}

struct Decoder<'p, 'b> {
    canvas: Canvas<'p>,
    reader: BitReader<'b>,
    qp: u8,
    scheme: Scheme,
}

impl Decoder<'_, '_> {
    fn leaf(&mut self, row: usize, col: usize, m: usize) -> Result<()> {
        let mpm = self.canvas.mpm(row, col, m, self.scheme);
        let mode = read_mode(&mut self.reader, &mpm, self.scheme)?;
        let refs = self.canvas.refs(row, col, m);
        let pred = self.canvas.prediction(mode, &refs, row, col, m)?;
        let t = self.canvas.transforms.get(m).clone();
        let levels = decode_coefficients(&mut self.reader, t.zigzag())?;
        let recon = reconstruct(&t, &pred, &levels, self.qp)?;
        self.canvas.write_block(row, col, m, &recon, mode);
        Ok(())
    }

    fn node(&mut self, row: usize, col: usize, size: usize) -> Result<()> {
        if !self.reader.bit()? {
            return self.leaf(row, col, size);
        }
        for (r, c) in quadrants(row, col, size) {
            if size / 2 >= MIN_CB_SIZE {
                self.node(r, c, size / 2)?;
            } else {
                self.leaf(r, c, size / 2)?;
            }
        }
        Ok(())
    }
}

pub fn decode_image(bytes: &[u8], predictors: &PredictorSet) -> Result<GrayImage> {
    let header = Header::parse(bytes)?;
    if header.scheme.uses_pnns() && header.digest != predictors.digest() {
        return Err(Error::Precondition("the stream was encoded with a different predictor set".into()));
    }
    let (w, h) = (header.width as usize, header.height as usize);
    let (pw, ph) = (padded_size(w), padded_size(h));
    let payload = &bytes[HEADER_BYTES..];
    let mut dec = Decoder {
        canvas: Canvas::new(pw, ph, predictors),
        reader: BitReader::new(payload),
        qp: header.qp,
        scheme: header.scheme,
    };
    for row in (0..ph).step_by(CTB_SIZE) {
        for col in (0..pw).step_by(CTB_SIZE) {
            dec.node(row, col, CTB_SIZE)?;
        }
    }
    if payload.len() as u64 * 8 - dec.reader.position() >= 8 {
        return Err(Error::CorruptBitstream("trailing data after the last CTB".into()));
    }
    dec.canvas.recon.crop(0, 0, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |r, c| {
            let v = 128.0 + 60.0 * ((r as f64) * 0.31).sin() + 40.0 * ((c as f64) * 0.17 + (r as f64) * 0.05).cos();
            v.round().clamp(0.0, 255.0) as u8
        })
    }

    #[test]
    fn lambdas() {
        assert!((lambda_rd(12) - 0.85).abs() < 1e-15);
        assert!((lambda_rd(15) - 1.7).abs() < 1e-12);
        assert!((lambda_fast(12) - 0.85f64.sqrt()).abs() < 1e-15);
        assert_eq!((fast_list_size(4), fast_list_size(8), fast_list_size(16)), (8, 8, 3));
    }

    #[test]
    fn z_order_interleaves() {
        assert_eq!(z_order(0, 1), 1);
        assert_eq!(z_order(1, 0), 2);
        assert_eq!(z_order(0, 2), 4);
        assert_eq!(z_order(15, 15), 255);
    }

    #[test]
    fn availability_follows_decode_order() {
        let set = PredictorSet::new();
        let c = Canvas::new(128, 128, &set);
        // above-right of the second 32×32 quadrant lies in the previous CTB row only for row 0 blocks
        assert!(c.decoded_before(32, 32, 31, 63));
        assert!(!c.decoded_before(32, 0, 31, 32 + 40));
        assert!(c.decoded_before(0, 32, 31, 31));
        assert!(!c.decoded_before(0, 32, 32, 31));
        // previous CTB in raster order and the CTB row above
        assert!(c.decoded_before(64, 0, 63, 127));
        assert!(!c.decoded_before(0, 64, 64, 0));
    }

    #[test]
    fn constant_image_round_trip() {
        let img = GrayImage::filled(64, 64, 93);
        let set = PredictorSet::new();
        let enc = encode_image(&img, 22, Scheme::Baseline, &set).unwrap();
        let dec = decode_image(&enc.bytes, &set).unwrap();
        assert_eq!(dec, enc.reconstruction);
        assert!(enc.stats.psnr > 50.0);
    }

    #[test]
    fn odd_sized_image_round_trip_and_rate_order() {
        let img = textured(70, 50);
        let set = PredictorSet::new();
        let mut previous = u64::MAX;
        for qp in [22, 37] {
            let enc = encode_image(&img, qp, Scheme::Baseline, &set).unwrap();
            assert_eq!(enc.reconstruction.width(), 70);
            assert_eq!(decode_image(&enc.bytes, &set).unwrap(), enc.reconstruction);
            assert!(enc.stats.total_bits < previous);
            previous = enc.stats.total_bits;
        }
    }

    #[test]
    fn pnns_schemes_without_predictors_round_trip() {
        let img = textured(64, 64);
        let set = PredictorSet::new();
        for scheme in [Scheme::Substitution, Scheme::Switch] {
            let enc = encode_image(&img, 32, scheme, &set).unwrap();
            assert_eq!(decode_image(&enc.bytes, &set).unwrap(), enc.reconstruction);
        }
    }

    #[test]
    fn nu_rows_sum_to_one() {
        let img = textured(64, 64);
        let enc = encode_image(&img, 32, Scheme::Switch, &PredictorSet::new()).unwrap();
        for row in mode_frequency_nu([&enc.stats]).values() {
            assert!((row.values().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_candidate_is_selected() {
        let t = Transform::new(4);
        let block = vec![10.0; 16];
        let c = select_mode_rd(&[(Mode::Hevc(7), vec![0; 16])], &block, &[0, 1, 26], Scheme::Baseline, 30, 5.0, &t)
            .unwrap();
        assert_eq!(c.mode, Mode::Hevc(7));
        assert!(select_mode_rd(&[], &block, &[0, 1, 26], Scheme::Baseline, 30, 5.0, &t).is_err());
    }

    #[test]
    fn corrupt_streams_are_rejected() {
        let img = textured(64, 64);
        let set = PredictorSet::new();
        let enc = encode_image(&img, 32, Scheme::Baseline, &set).unwrap();
        assert!(matches!(decode_image(&enc.bytes[..10], &set), Err(Error::CorruptBitstream(_))));
        assert!(decode_image(&enc.bytes[..enc.bytes.len() / 2], &set).is_err());
        let mut bad = enc.bytes.clone();
        bad[13] = 9;
        assert!(matches!(decode_image(&bad, &set), Err(Error::CorruptBitstream(_))));
    }
}

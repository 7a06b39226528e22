//! Measurement harness: prediction PSNR against the H.265 modes, success
//! rates, mask-robustness matrices, rate-distortion sweeps and timing.

pub mod bjontegaard;
pub mod rd;

pub use bjontegaard::{bjontegaard, bjontegaard_log_delta, RdPoint};
pub use rd::{noise_robustness_compare, rd_sweep, timing_report, NoiseComparison, RdSweep, TimingReport};

use crate::arch::Network;
use crate::context::{sample_at, training_positions, BlockSample, View};
use crate::error::{invalid, Result};
use crate::hevc::{predict_all, ReferenceSamples, DC};
use crate::image::{psnr, GrayImage};
use rand::Rng;
use std::fmt::Write as _;

/// Block count of the reference protocol.
pub const DEFAULT_BLOCK_COUNT: usize = 960;

/// Where a test block sits: image index and top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSite {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// A test block with both the neural context and the H.265 reference samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TestBlock {
    pub site: BlockSite,
    pub sample: BlockSample,
    pub refs: ReferenceSamples,
}

/// Up to `count` distinct random sites whose `3m × 3m` footprint fits, visiting
/// the images in turn. Fewer are returned when the images cannot host `count`.
pub fn draw_sites<R: Rng + ?Sized>(images: &[GrayImage], m: usize, count: usize, rng: &mut R) -> Result<Vec<BlockSite>> {
    let mut pools: Vec<Vec<BlockSite>> = images
        .iter()
        .enumerate()
        .map(|(image, img)| match (training_positions(img.height(), m), training_positions(img.width(), m)) {
            (Some((r0, r1)), Some((c0, c1))) => {
                (r0..=r1).flat_map(|row| (c0..=c1).map(move |col| BlockSite { image, row, col })).collect()
            }
            _ => Vec::new(),
        })
        .collect();
    if pools.iter().all(Vec::is_empty) {
        return Err(invalid!("no image can host a {m}x{m} block with its context"));
    }
    let mut sites = Vec::with_capacity(count);
    while sites.len() < count && pools.iter().any(|p| !p.is_empty()) {
        for pool in pools.iter_mut().filter(|p| !p.is_empty()) {
            if sites.len() == count {
                break;
            }
            let k = rng.gen_range(0..pool.len());
            sites.push(pool.swap_remove(k));
        }
    }
    Ok(sites)
}

/// Test blocks at `sites` with masks `(n0, n1)`. The H.265 references treat
/// masked pixels as unavailable.
pub fn make_test_blocks(images: &[GrayImage], sites: &[BlockSite], m: usize, n0: usize, n1: usize, alpha: f64) -> Result<Vec<TestBlock>> {
    crate::context::MaskPolicy::Fixed { n0, n1 }.validate(m)?;
    sites
        .iter()
        .map(|&site| {
            let img = images.get(site.image).ok_or_else(|| invalid!("site refers to missing image {}", site.image))?;
            let (row, col) = (site.row, site.col);
            if row < m || col < m || row + 2 * m > img.height() || col + 2 * m > img.width() {
                return Err(invalid!("site ({row}, {col}) leaves no room for the context"));
            }
            let sample = sample_at(&View::identity(img), row, col, m, n0, n1, alpha);
            let refs = ReferenceSamples::build(img, row, col, m, |r, c| {
                let masked_left = c < col && r >= row + 2 * m - n0;
                let masked_above = r < row && c >= col + 2 * m - n1;
                (r < row || c < col) && !masked_left && !masked_above
            });
            Ok(TestBlock { site, sample, refs })
        })
        .collect()
}

/// Per-block prediction quality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockScore {
    pub pnns: f64,
    pub best_hevc: f64,
    pub best_mode: u8,
    pub dc: f64,
}

/// Scores every block: neural prediction PSNR, best of the 35 modes, and DC.
pub fn score_blocks(net: &Network, blocks: &[TestBlock]) -> Result<Vec<BlockScore>> {
    let m = net.m();
    let mut out = Vec::with_capacity(blocks.len());
    for chunk in blocks.chunks(64) {
        let contexts: Vec<_> = chunk.iter().map(|b| &b.sample.context).collect();
        let pred = net.infer_batch(&contexts)?;
        for (i, b) in chunk.iter().enumerate() {
            let alpha = b.sample.context.alpha;
            let block: Vec<f64> =
                pred.data()[i * m * m..(i + 1) * m * m].iter().map(|v| (v + alpha).clamp(0.0, 255.0)).collect();
            let target = b.sample.target.data();
            let mut best = (0u8, f64::NEG_INFINITY);
            let mut dc = 0.0;
            for (mode, p) in predict_all(&b.refs)?.into_iter().enumerate() {
                let p: Vec<f64> = p.into_iter().map(f64::from).collect();
                let v = psnr(&p, target);
                if v > best.1 {
                    best = (mode as u8, v);
                }
                if mode as u8 == DC {
                    dc = v;
                }
            }
            out.push(BlockScore { pnns: psnr(&block, target), best_hevc: best.1, best_mode: best.0, dc });
        }
    }
    Ok(out)
}

/// Means over a set of block scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreSummary {
    pub count: usize,
    pub pnns: f64,
    pub best_hevc: f64,
    pub dc: f64,
    pub mu: f64,
}

pub fn summarize(scores: &[BlockScore]) -> Result<ScoreSummary> {
    if scores.is_empty() {
        return Err(invalid!("empty sample set"));
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&BlockScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(ScoreSummary {
        count: scores.len(),
        pnns: mean(|s| s.pnns),
        best_hevc: mean(|s| s.best_hevc),
        dc: mean(|s| s.dc),
        mu: success_rate_mu(scores),
    })
}

/// Share of blocks where the neural prediction beats every H.265 mode strictly.
pub fn success_rate_mu(scores: &[BlockScore]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|s| s.pnns > s.best_hevc).count() as f64 / scores.len() as f64
}

/// Per-block log; values use the shortest representation that parses back exactly.
pub fn scores_csv(scores: &[BlockScore]) -> String {
    let mut s = String::from("index,pnns_psnr,best_hevc_psnr,best_mode,dc_psnr\n");
    for (i, b) in scores.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{}", b.pnns, b.best_hevc, b.best_mode, b.dc);
    }
    s
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<BlockScore>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || invalid!("malformed score row {line:?}");
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(BlockScore {
                pnns: f[1].parse().map_err(|_| bad())?,
                best_hevc: f[2].parse().map_err(|_| bad())?,
                best_mode: f[3].parse().map_err(|_| bad())?,
                dc: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Which aggregate a [`MaskMatrix`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    MeanPsnr,
    SuccessRate,
}

/// Rows: test masks; columns: training policies.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix {
    pub metric: Metric,
    pub tests: Vec<(usize, usize)>,
    pub policies: Vec<String>,
    pub cells: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
}

impl MaskMatrix {
    pub fn cell(&self, test: (usize, usize), policy: &str) -> Option<f64> {
        let r = self.tests.iter().position(|&t| t == test)?;
        let c = self.policies.iter().position(|p| p == policy)?;
        Some(self.cells[r][c])
    }

    pub fn to_csv(&self) -> String {
        let metric = match self.metric {
            Metric::MeanPsnr => "mean_psnr",
            Metric::SuccessRate => "success_rate",
        };
        let mut s = format!("test_n0,test_n1,policy,{metric},samples\n");
        for (r, &(n0, n1)) in self.tests.iter().enumerate() {
            for (c, p) in self.policies.iter().enumerate() {
                let _ = writeln!(s, "{n0},{n1},{p},{},{}", self.cells[r][c], self.counts[r][c]);
            }
        }
        s
    }
}

/// Mean PSNR and success-rate matrices of each named network over the test masks.
pub fn prediction_psnr_suite(
    networks: &[(&str, &Network, f64)],
    images: &[GrayImage],
    sites: &[BlockSite],
    tests: &[(usize, usize)],
) -> Result<(MaskMatrix, MaskMatrix)> {
    if sites.is_empty() {
        return Err(invalid!("empty block sample set"));
    }
    let policies: Vec<String> = networks.iter().map(|(n, _, _)| n.to_string()).collect();
    let mut psnr_cells = Vec::with_capacity(tests.len());
    let mut mu_cells = Vec::with_capacity(tests.len());
    let mut counts = Vec::with_capacity(tests.len());
    for &(n0, n1) in tests {
        let (mut pr, mut mr, mut cr) = (Vec::new(), Vec::new(), Vec::new());
        for (_, net, alpha) in networks {
            let blocks = make_test_blocks(images, sites, net.m(), n0, n1, *alpha)?;
            let summary = summarize(&score_blocks(net, &blocks)?)?;
            pr.push(summary.pnns);
            mr.push(summary.mu);
            cr.push(summary.count);
        }
        psnr_cells.push(pr);
        mu_cells.push(mr);
        counts.push(cr);
    }
    let matrix = |metric, cells| MaskMatrix {
        metric,
        tests: tests.to_vec(),
        policies: policies.clone(),
        cells,
        counts: counts.clone(),
    };
    Ok((matrix(Metric::MeanPsnr, psnr_cells), matrix(Metric::SuccessRate, mu_cells)))
}

/// Mode-frequency table as CSV: `width,mode,frequency`.
pub fn nu_csv(nu: &std::collections::BTreeMap<usize, std::collections::BTreeMap<crate::hevc::Mode, f64>>) -> String {
    let mut s = String::from("width,mode,frequency\n");
    for (m, modes) in nu {
        for (mode, f) in modes {
            let _ = writeln!(s, "{m},{},{f}", mode.label());
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_fc, Network};
    use crate::training::synthetic_texture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn images() -> Vec<GrayImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..3).map(|_| synthetic_texture(40, &mut rng)).collect()
    }

    #[test]
    fn sites_are_distinct_and_capped() {
        let imgs = images();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sites = draw_sites(&imgs, 8, 10_000, &mut rng).unwrap();
        // each 40x40 image has 17x17 valid positions for m = 8
        assert_eq!(sites.len(), 3 * 289);
        let mut seen = std::collections::HashSet::new();
        assert!(sites.iter().all(|s| seen.insert((s.image, s.row, s.col))));
        assert!(draw_sites(&[GrayImage::filled(10, 10, 0)], 4, 5, &mut rng).is_err());
    }

    #[test]
    fn masked_references_are_substituted() {
        let img = GrayImage::from_fn(24, 24, |r, c| (r * 24 + c) as u8);
        let site = BlockSite { image: 0, row: 8, col: 8 };
        let open = &make_test_blocks(std::slice::from_ref(&img), &[site], 4, 0, 0, 0.0).unwrap()[0];
        assert_eq!(open.refs.left[7], img.get(15, 7));
        assert_eq!(open.refs.above[8], img.get(7, 15));
        let masked = &make_test_blocks(std::slice::from_ref(&img), &[site], 4, 4, 4, 0.0).unwrap()[0];
        // below-left copies the last available left sample, above-right the last above one
        assert_eq!(masked.refs.left[7], img.get(11, 7));
        assert_eq!(masked.refs.above[8], img.get(7, 11));
    }

    #[test]
    fn perfect_predictor_scores_capped_psnr() {
        let scores = vec![BlockScore { pnns: 100.0, best_hevc: 40.0, best_mode: 0, dc: 30.0 }; 4];
        let s = summarize(&scores).unwrap();
        assert_eq!((s.pnns, s.mu), (100.0, 1.0));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn ties_do_not_count_as_success() {
        let s = [
            BlockScore { pnns: 30.0, best_hevc: 30.0, best_mode: 0, dc: 20.0 },
            BlockScore { pnns: 31.0, best_hevc: 30.0, best_mode: 0, dc: 20.0 },
        ];
        assert_eq!(success_rate_mu(&s), 0.5);
    }

    #[test]
    fn score_log_replays_exactly() {
        let imgs = images();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(build_fc(4, 16).unwrap(), &mut rng).unwrap();
        let sites = draw_sites(&imgs, 4, 50, &mut rng).unwrap();
        let blocks = make_test_blocks(&imgs, &sites, 4, 0, 0, 120.0).unwrap();
        let scores = score_blocks(&net, &blocks).unwrap();
        let replayed = parse_scores_csv(&scores_csv(&scores)).unwrap();
        assert_eq!(replayed, scores);
        assert_eq!(summarize(&replayed).unwrap(), summarize(&scores).unwrap());
    }

    #[test]
    fn suite_fills_every_cell() {
        let imgs = images();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::init(build_fc(4, 16).unwrap(), &mut rng).unwrap();
        let sites = draw_sites(&imgs, 4, 30, &mut rng).unwrap();
        let tests = [(0, 0), (4, 0), (4, 4)];
        let (p, mu) = prediction_psnr_suite(&[("a", &net, 120.0), ("b", &net, 120.0)], &imgs, &sites, &tests).unwrap();
        assert_eq!(p.cells.len(), 3);
        assert!(p.cells.iter().all(|r| r.len() == 2 && r[0] == r[1]));
        assert!(mu.counts.iter().flatten().all(|&c| c == 30));
        assert_eq!(p.to_csv().lines().count(), 7);
        assert!(p.cell((4, 4), "b").is_some());
        assert!(prediction_psnr_suite(&[("a", &net, 120.0)], &imgs, &[], &tests).is_err());
    }
}

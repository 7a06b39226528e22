//! Rate-distortion sweeps over QPs, the clean/noisy predictor comparison and
//! encoder/decoder timing.

use super::bjontegaard::{bjontegaard, RdPoint};
use crate::arch::PredictorSet;
use crate::codec::{decode_image, encode_image, Scheme, Stats};
use crate::error::{invalid, Result};
use crate::image::GrayImage;
use std::fmt::Write as _;
use std::time::Instant;

pub const LOW_RATE_QPS: [u8; 5] = [32, 34, 37, 39, 42];
pub const HIGH_RATE_QPS: [u8; 5] = [17, 19, 22, 24, 27];

/// The three QP ranges of the reference protocol: low, high and all rates.
pub fn standard_ranges() -> Vec<(String, Vec<u8>)> {
    let all: Vec<u8> = HIGH_RATE_QPS.iter().chain(&LOW_RATE_QPS).copied().collect();
    vec![("low".into(), LOW_RATE_QPS.to_vec()), ("high".into(), HIGH_RATE_QPS.to_vec()), ("all".into(), all)]
}

/// One encode of one image.
#[derive(Clone, Debug)]
pub struct RdSample {
    pub image: usize,
    pub qp: u8,
    pub point: RdPoint,
    pub stats: Stats,
}

#[derive(Clone, Debug)]
pub struct RdSweep {
    pub scheme_a: Scheme,
    pub scheme_b: Scheme,
    pub a: Vec<RdSample>,
    pub b: Vec<RdSample>,
    /// `(image, range name, percent)`, negative when scheme A saves bits.
    pub bd: Vec<(usize, String, f64)>,
}

impl RdSweep {
    fn curve(samples: &[RdSample], image: usize, qps: &[u8]) -> Vec<RdPoint> {
        samples.iter().filter(|s| s.image == image && qps.contains(&s.qp)).map(|s| s.point).collect()
    }

    /// Whether the rate strictly decreases as QP grows on every curve.
    pub fn rates_decrease(&self) -> bool {
        [&self.a, &self.b].iter().all(|samples| {
            let images: std::collections::BTreeSet<usize> = samples.iter().map(|s| s.image).collect();
            images.into_iter().all(|img| {
                let mut pts: Vec<&RdSample> = samples.iter().filter(|s| s.image == img).collect();
                pts.sort_by_key(|s| s.qp);
                pts.windows(2).all(|w| w[1].point.rate < w[0].point.rate)
            })
        })
    }

    /// Mean Bjontegaard result per range, averaged over images.
    pub fn mean_bd(&self, range: &str) -> Option<f64> {
        let v: Vec<f64> = self.bd.iter().filter(|(_, r, _)| r == range).map(|(_, _, x)| *x).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `scheme,image,qp,bpp,psnr`.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("scheme,image,qp,bpp,psnr\n");
        for (scheme, samples) in [(self.scheme_a, &self.a), (self.scheme_b, &self.b)] {
            for x in samples {
                let _ = writeln!(s, "{scheme},{},{},{},{}", x.image, x.qp, x.point.rate, x.point.psnr);
            }
        }
        s
    }

    /// `image,range,bd_rate_percent`.
    pub fn bd_csv(&self) -> String {
        let mut s = String::from("image,range,bd_rate_percent\n");
        for (img, range, v) in &self.bd {
            let _ = writeln!(s, "{img},{range},{v}");
        }
        s
    }
}

fn encode_all(images: &[GrayImage], qps: &[u8], scheme: Scheme, predictors: &PredictorSet) -> Result<Vec<RdSample>> {
    let mut out = Vec::with_capacity(images.len() * qps.len());
    for (image, img) in images.iter().enumerate() {
        for &qp in qps {
            let enc = encode_image(img, qp, scheme, predictors)?;
            let point = RdPoint::new(enc.stats.bits_per_pixel(), enc.stats.psnr);
            out.push(RdSample { image, qp, point, stats: enc.stats });
        }
    }
    Ok(out)
}

/// Encodes every image at every QP of `ranges` under both schemes and computes
/// the Bjontegaard rate difference of A against B per image and range.
pub fn rd_sweep(
    images: &[GrayImage],
    ranges: &[(String, Vec<u8>)],
    scheme_a: Scheme,
    predictors_a: &PredictorSet,
    scheme_b: Scheme,
    predictors_b: &PredictorSet,
) -> Result<RdSweep> {
    if images.is_empty() {
        return Err(invalid!("no images to sweep"));
    }
    for (name, qps) in ranges {
        if qps.len() < 4 {
            return Err(invalid!("range {name} has {} QPs, at least 4 needed", qps.len()));
        }
    }
    let mut qps: Vec<u8> = ranges.iter().flat_map(|(_, q)| q.iter().copied()).collect();
    qps.sort_unstable();
    qps.dedup();
    let a = encode_all(images, &qps, scheme_a, predictors_a)?;
    let b = encode_all(images, &qps, scheme_b, predictors_b)?;
    let mut bd = Vec::new();
    for image in 0..images.len() {
        for (name, range) in ranges {
            let v = bjontegaard(&RdSweep::curve(&a, image, range), &RdSweep::curve(&b, image, range))?;
            bd.push((image, name.clone(), v));
        }
    }
    Ok(RdSweep { scheme_a, scheme_b, a, b, bd })
}

#[derive(Clone, Debug)]
pub struct NoiseComparison {
    /// Switch scheme with clean-trained predictors against the baseline.
    pub clean: RdSweep,
    /// Switch scheme with noise-trained predictors against the baseline.
    pub noisy: RdSweep,
    /// `(range, percent)`: noise-trained against clean-trained, averaged over images.
    pub delta: Vec<(String, f64)>,
}

/// Runs the switch scheme with each predictor set and compares the two.
pub fn noise_robustness_compare(
    clean: &PredictorSet,
    noisy: &PredictorSet,
    images: &[GrayImage],
    ranges: &[(String, Vec<u8>)],
) -> Result<NoiseComparison> {
    if clean.widths() != noisy.widths() {
        return Err(invalid!("predictor sets cover different block widths"));
    }
    let empty = PredictorSet::new();
    let clean_sweep = rd_sweep(images, ranges, Scheme::Switch, clean, Scheme::Baseline, &empty)?;
    let noisy_sweep = rd_sweep(images, ranges, Scheme::Switch, noisy, Scheme::Baseline, &empty)?;
    let mut delta = Vec::new();
    for (name, qps) in ranges {
        let mut total = 0.0;
        for image in 0..images.len() {
            total += bjontegaard(
                &RdSweep::curve(&noisy_sweep.a, image, qps),
                &RdSweep::curve(&clean_sweep.a, image, qps),
            )?;
        }
        delta.push((name.clone(), total / images.len() as f64));
    }
    Ok(NoiseComparison { clean: clean_sweep, noisy: noisy_sweep, delta })
}

/// Wall-clock ratios of the switch scheme against the baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingReport {
    pub runs: usize,
    pub encode_ratio: f64,
    pub encode_ratio_std: f64,
    pub decode_ratio: f64,
    pub decode_ratio_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Encodes and decodes `image` `runs` times under each scheme.
pub fn timing_report(image: &GrayImage, qp: u8, predictors: &PredictorSet, runs: usize) -> Result<TimingReport> {
    if runs < 3 {
        return Err(invalid!("timing needs at least 3 runs, got {runs}"));
    }
    let empty = PredictorSet::new();
    let (mut enc_ratios, mut dec_ratios) = (Vec::with_capacity(runs), Vec::with_capacity(runs));
    for _ in 0..runs {
        let mut times = [(0.0, 0.0); 2];
        for (k, (scheme, set)) in [(Scheme::Baseline, &empty), (Scheme::Switch, predictors)].into_iter().enumerate() {
            let t = Instant::now();
            let enc = encode_image(image, qp, scheme, set)?;
            let te = t.elapsed().as_secs_f64();
            let t = Instant::now();
            decode_image(&enc.bytes, set)?;
            times[k] = (te, t.elapsed().as_secs_f64());
        }
        enc_ratios.push(times[1].0 / times[0].0.max(1e-9));
        dec_ratios.push(times[1].1 / times[0].1.max(1e-9));
    }
    let (encode_ratio, encode_ratio_std) = mean_std(&enc_ratios);
    let (decode_ratio, decode_ratio_std) = mean_std(&dec_ratios);
    Ok(TimingReport { runs, encode_ratio, encode_ratio_std, decode_ratio, decode_ratio_std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::synthetic_texture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn baseline_against_itself_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = synthetic_texture(64, &mut rng);
        let empty = PredictorSet::new();
        let ranges = vec![("low".to_string(), LOW_RATE_QPS.to_vec())];
        let sweep = rd_sweep(&[img], &ranges, Scheme::Baseline, &empty, Scheme::Baseline, &empty).unwrap();
        assert!(sweep.rates_decrease());
        assert!(sweep.mean_bd("low").unwrap().abs() < 1e-9);
        assert_eq!(sweep.curves_csv().lines().count(), 11);
    }

    #[test]
    fn short_ranges_are_rejected() {
        let img = GrayImage::filled(16, 16, 9);
        let empty = PredictorSet::new();
        let ranges = vec![("x".to_string(), vec![22, 27, 32])];
        assert!(rd_sweep(&[img], &ranges, Scheme::Baseline, &empty, Scheme::Baseline, &empty).is_err());
    }

    #[test]
    fn timing_ratios_are_positive() {
        let img = GrayImage::from_fn(32, 32, |r, c| (r * 5 + c * 3) as u8);
        let r = timing_report(&img, 32, &PredictorSet::new(), 3).unwrap();
        assert!(r.encode_ratio > 0.0 && r.decode_ratio > 0.0);
        assert!(timing_report(&img, 32, &PredictorSet::new(), 2).is_err());
    }
}

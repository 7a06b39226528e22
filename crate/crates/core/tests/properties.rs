use pnns::arch::{build_conv_scaled, build_fc, Network};
use pnns::codec::{mode_frequency_nu, Stats};
use pnns::context::{draw_mask_extent, sample_at, MaskPolicy, View, BLOCK_WIDTHS};
use pnns::evaluation::{parse_scores_csv, scores_csv, success_rate_mu, summarize, BlockScore};
use pnns::hevc::Mode;
use pnns::image::GrayImage;
use pnns::nn::{loss_and_grad, Activation, Distortion, LayerParams};
use pnns::training::{synthetic_crops, train, TrainingConfig};
use pnns::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
}

fn width() -> impl Strategy<Value = usize> {
    prop::sample::select(BLOCK_WIDTHS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn uniform_masks_are_equiprobable_and_independent(m in width(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = m / 4 + 1;
        let draws = 10_000;
        let mut n0 = vec![0usize; k];
        let mut n1 = vec![0usize; k];
        let mut both_zero = 0usize;
        for _ in 0..draws {
            let (a, b) = MaskPolicy::UniformRandom.draw(m, &mut rng);
            prop_assert!(a % 4 == 0 && a <= m && b % 4 == 0 && b <= m);
            n0[a / 4] += 1;
            n1[b / 4] += 1;
            both_zero += usize::from(a == 0 && b == 0);
        }
        let p = 1.0 / k as f64;
        for c in n0.iter().chain(&n1) {
            prop_assert!((*c as f64 / draws as f64 - p).abs() <= 0.02, "{n0:?} {n1:?}");
        }
        prop_assert!((both_zero as f64 / draws as f64 - p * p).abs() <= 0.02);
    }

    #[test]
    fn context_is_five_blocks_and_masks_center_to_zero(m in width(), a in 0usize..17, b in 0usize..17, seed in any::<u64>()) {
        let (n0, n1) = ((4 * a).min(m), (4 * b).min(m));
        let img = image(3 * m, 3 * m, seed);
        let alpha = 117.5;
        let s = sample_at(&View::identity(&img), m, m, m, n0, n1, alpha);
        prop_assert_eq!(s.context.pixel_count(), 5 * m * m);
        prop_assert_eq!(s.context.vectorize().len(), 5 * m * m);
        let (c0, c1) = s.context.centered();
        for r in 0..2 * m {
            for c in 0..m {
                prop_assert_eq!(c0.at2(r, c) == 0.0, r >= 2 * m - n0);
            }
        }
        for r in 0..m {
            for c in 0..3 * m {
                prop_assert_eq!(c1.at2(r, c) == 0.0, c >= 3 * m - n1);
            }
        }
    }

    #[test]
    fn augmentation_preserves_histograms(w in 1usize..20, h in 1usize..20, turns in 0u8..4, flip in any::<bool>(), seed in any::<u64>()) {
        let img = image(w, h, seed);
        let out = View::new(&img, turns, flip).materialize();
        let hist = |g: &GrayImage| g.data().iter().fold([0usize; 256], |mut acc, &v| { acc[v as usize] += 1; acc });
        prop_assert_eq!(hist(&img), hist(&out));
        prop_assert_eq!(out.width() * out.height(), w * h);
    }

    #[test]
    fn predictions_stay_in_range(m in prop::sample::select(vec![4usize, 8, 16]), scale in 1.0..50.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = if m <= 8 { build_fc(m, 16) } else { build_conv_scaled(m, 8) }.unwrap();
        let mut net = Network::init(spec, &mut rng).unwrap();
        for t in net.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let img = image(3 * m, 3 * m, seed ^ 1);
        let n0 = draw_mask_extent(m, &mut rng);
        let s = sample_at(&View::identity(&img), m, m, m, n0, 0, 120.0);
        let block = net.predict_block(&s.context).unwrap();
        prop_assert!(block.data().iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn merger_never_mixes_channels(l in 1usize..5, j in 0usize..5, seed in any::<u64>()) {
        let j = j % l;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let merger = LayerParams::merger(rand(&[l, 16, 80]), rand(&[l, 16])).unwrap();
        let (z0, z1) = (rand(&[l, 8, 4]), rand(&[l, 4, 12]));
        let base = merger.merge(&z0, &z1).unwrap();
        let (mut p0, mut p1) = (z0.clone(), z1.clone());
        for v in &mut p0.data_mut()[j * 32..(j + 1) * 32] {
            *v += 1.0;
        }
        for v in &mut p1.data_mut()[j * 48..(j + 1) * 48] {
            *v -= 0.5;
        }
        let out = merger.merge(&p0, &p1).unwrap();
        for ch in 0..l {
            let same = base.data()[ch * 16..(ch + 1) * 16] == out.data()[ch * 16..(ch + 1) * 16];
            prop_assert_eq!(same, ch != j);
        }
        prop_assert_eq!(merger.param_count(), l * (80 * 16 + 16));
    }

    #[test]
    fn success_rate_ignores_order(scores in prop::collection::vec((0.0..60.0f64, 0.0..60.0f64, 0u8..35, 0.0..60.0f64), 1..80), seed in any::<u64>()) {
        let scores: Vec<BlockScore> = scores.into_iter().map(|(pnns, best_hevc, best_mode, dc)| BlockScore { pnns, best_hevc, best_mode, dc }).collect();
        let mut shuffled = scores.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(success_rate_mu(&scores), success_rate_mu(&shuffled));
        let (a, b) = (summarize(&scores).unwrap(), summarize(&shuffled).unwrap());
        prop_assert_eq!(a.mu, b.mu);
        prop_assert!((a.pnns - b.pnns).abs() <= 1e-12 && (a.dc - b.dc).abs() <= 1e-12);
        prop_assert_eq!(parse_scores_csv(&scores_csv(&scores)).unwrap(), scores);
    }

    #[test]
    fn mode_frequencies_ignore_order(counts in prop::collection::vec(prop::collection::vec((0usize..5, 0u8..36, 1u64..50), 1..20), 1..6), seed in any::<u64>()) {
        let stats: Vec<Stats> = counts
            .iter()
            .map(|entries| {
                let mut s = Stats::default();
                for &(w, mode, n) in entries {
                    let mode = if mode == 35 { Mode::Pnns } else { Mode::Hevc(mode) };
                    *s.rd_wins.entry(BLOCK_WIDTHS[w]).or_default().entry(mode).or_default() += n;
                }
                s
            })
            .collect();
        let mut shuffled = stats.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (mode_frequency_nu(&stats), mode_frequency_nu(&shuffled));
        prop_assert_eq!(&a, &b);
        for row in a.values() {
            prop_assert!((row.values().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn weight_decay_never_touches_biases(lambda in 1e-3..0.5f64, conv in any::<bool>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let crops = synthetic_crops(4, 64, &mut rng).unwrap();
        let m = if conv { 16 } else { 4 };
        let base = TrainingConfig {
            fc_internal: 16,
            conv_divisor: 8,
            iterations: 1,
            milestones: vec![],
            batch_size: 4,
            fc_samples: 64,
            log_every: 1,
            validate_every: 0,
            seed,
            ..TrainingConfig::desk_scale(m)
        };
        let plain = train(&TrainingConfig { weight_decay: 0.0, ..base.clone() }, &crops, None).unwrap().network;
        let decayed = train(&TrainingConfig { weight_decay: lambda, ..base }, &crops, None).unwrap().network;
        let mut weights_moved = false;
        for (p, d) in plain.layers().iter().zip(decayed.layers()) {
            prop_assert_eq!(p.biases.data(), d.biases.data());
            weights_moved |= p.weights.max_abs_diff(&d.weights) > 0.0;
        }
        prop_assert!(weights_moved);
    }

    #[test]
    fn regularizer_is_flat_along_biases(lambda in 1e-4..1.0f64, h in 1e-3..1.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::init(build_conv_scaled(16, 8).unwrap(), &mut rng).unwrap();
        let regularizer = |n: &Network| {
            let p = Tensor::zeros(&[1]);
            loss_and_grad(&p, &p, Distortion::L2, &n.weight_tensors(), lambda).unwrap().regularizer
        };
        let base = regularizer(&net);
        prop_assert!(base > 0.0);
        for (k, len) in net.params().iter().map(|t| t.len()).enumerate().filter(|(k, _)| k % 2 == 1) {
            let i = rng.gen_range(0..len);
            let (mut up, mut down) = (net.clone(), net.clone());
            up.params_mut()[k].data_mut()[i] += h;
            down.params_mut()[k].data_mut()[i] -= h;
            prop_assert_eq!((regularizer(&up) - regularizer(&down)) / (2.0 * h), 0.0);
        }
    }
}

#[test]
fn identity_activation_layers_are_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let layer = LayerParams::fully_connected(w, Tensor::zeros(&[3]), Activation::Identity).unwrap();
    let x = Tensor::from_vec(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let y = layer.infer(&x).unwrap();
    let y2 = layer.infer(&x.map(|v| 2.0 * v)).unwrap();
    assert!(y.map(|v| 2.0 * v).max_abs_diff(&y2) < 1e-12);
}

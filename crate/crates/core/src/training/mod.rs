//! Training of the prediction networks: configuration, minibatch drawing,
//! ADAM with a step learning-rate schedule, validation and the
//! hyperparameter grid.

pub mod dataset;

pub use dataset::{
    add_quantization_noise, draw_sample, evaluation_samples, generate_fc_dataset, image_files, ingest_crops, load_image_dir,
    synthetic_crops,
    synthetic_texture, CropSet, FcDataset, CROP_SIZE, VALIDATION_FRACTION,
};

use crate::arch::{build_conv_scaled, build_fc, save_checkpoint, Checkpoint, Family, Network, NetworkSpec, FC_INTERNAL};
use crate::context::{draw_augmentation, BlockSample, MaskPolicy, View};
use crate::error::{invalid, Error, Result};
use crate::image::{psnr, GrayImage};
use crate::nn::{loss_and_grad, AdamState, Distortion};
use crate::tensor::Tensor;
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const GRID_LEARNING_RATES: [f64; 8] = [0.007, 0.004, 0.001, 0.0007, 0.0004, 0.0001, 0.00007, 0.00004];
pub const GRID_WEIGHT_DECAYS: [f64; 3] = [0.001, 0.0005, 0.0001];

/// Validation samples drawn from each held-out crop.
const VALIDATION_PER_CROP: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub m: usize,
    pub family: Family,
    /// Width of the hidden fully-connected layers.
    pub fc_internal: usize,
    /// Channel divisor applied to the convolutional architecture.
    pub conv_divisor: usize,
    pub distortion: Distortion,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub iterations: u64,
    /// The learning rate is divided by 10 at each of these iterations.
    pub milestones: Vec<u64>,
    pub batch_size: usize,
    pub mask_policy: MaskPolicy,
    pub seed: u64,
    pub validation_fraction: f64,
    pub quantization_noise: bool,
    /// Size of the offline sample set of the fully-connected family.
    pub fc_samples: usize,
    /// Iterations between curve points.
    pub log_every: u64,
    /// Iterations between validation passes; 0 validates only at the end.
    pub validate_every: u64,
}

impl TrainingConfig {
    /// The full-scale schedule: 800k iterations of 100 samples.
    pub fn paper_scale(m: usize) -> TrainingConfig {
        let family = Family::for_block_width(m);
        TrainingConfig {
            m,
            family,
            fc_internal: FC_INTERNAL,
            conv_divisor: 1,
            distortion: Distortion::L2,
            weight_decay: 0.0005,
            learning_rate: match family {
                Family::FullyConnected => 1e-4,
                Family::Convolutional => 4e-4,
            },
            iterations: 800_000,
            milestones: vec![400_000, 600_000, 700_000],
            batch_size: 100,
            mask_policy: MaskPolicy::UniformRandom,
            seed: 0,
            validation_fraction: VALIDATION_FRACTION,
            quantization_noise: false,
            fc_samples: 10_000_000,
            log_every: 1000,
            validate_every: 10_000,
        }
    }

    /// A single-machine schedule with the same shape and 40 times fewer iterations.
    pub fn desk_scale(m: usize) -> TrainingConfig {
        TrainingConfig {
            iterations: 20_000,
            milestones: vec![10_000, 15_000, 17_500],
            fc_samples: 200_000,
            log_every: 100,
            validate_every: 2_000,
            ..TrainingConfig::paper_scale(m)
        }
    }

    /// `base / 10^k` where `k` counts the milestones already passed at iteration `t`.
    pub fn learning_rate_at(&self, t: u64) -> f64 {
        let k = self.milestones.iter().filter(|&&s| t >= s).count();
        self.learning_rate / 10f64.powi(k as i32)
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        match self.family {
            Family::FullyConnected => build_fc(self.m, self.fc_internal),
            Family::Convolutional => build_conv_scaled(self.m, self.conv_divisor),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid!("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid!("validation fraction must lie in [0, 1)"));
        }
        if self.family == Family::FullyConnected && self.fc_samples == 0 {
            return Err(invalid!("the fully-connected family needs at least one training sample"));
        }
        self.mask_policy.validate(self.m)?;
        self.spec()?.validate()
    }
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: u64,
    pub loss: f64,
    pub learning_rate: f64,
    pub validation_psnr: Option<f64>,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("iteration,loss,learning_rate,validation_psnr\n");
    for p in curve {
        let v = p.validation_psnr.map(|v| format!("{v:.4}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:.6},{:e},{}", p.iteration, p.loss, p.learning_rate, v);
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub alpha: f64,
    pub curve: Vec<CurvePoint>,
    /// Mean validation PSNR of the final network, if any crop was held out.
    pub validation_psnr: Option<f64>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, iteration: u64) -> Checkpoint {
        Checkpoint { network: self.network.clone(), alpha: self.alpha, iteration }
    }
}

/// Where minibatches come from.
enum Source<'a> {
    /// Offline samples, visited in a fresh random order each epoch.
    Offline { data: FcDataset, order: Vec<usize>, cursor: usize },
    /// Samples drawn on the fly from rotated and flipped crops.
    Online { crops: &'a [GrayImage] },
}

impl Source<'_> {
    fn next_batch(&mut self, net: &Network, config: &TrainingConfig, alpha: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Tensor)> {
        match self {
            Source::Offline { data, order, cursor } => {
                let mut picked = Vec::with_capacity(config.batch_size);
                while picked.len() < config.batch_size {
                    if *cursor == order.len() {
                        order.shuffle(rng);
                        *cursor = 0;
                    }
                    picked.push(order[*cursor]);
                    *cursor += 1;
                }
                let (x, y) = data.batch(&picked)?;
                Ok((vec![x], y))
            }
            Source::Online { crops } => {
                let samples = (0..config.batch_size)
                    .map(|_| {
                        let d = draw_augmentation(crops.len(), config.m, config.mask_policy, rng);
                        let view = View::new(&crops[d.crop], d.quarter_turns, d.flip);
                        draw_sample(&view, config.m, d.n0, d.n1, alpha, config.quantization_noise, rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                stack(net, &samples)
            }
        }
    }
}

fn stack(net: &Network, samples: &[BlockSample]) -> Result<(Vec<Tensor>, Tensor)> {
    let contexts: Vec<_> = samples.iter().map(|s| &s.context).collect();
    let inputs = net.input_tensors(&contexts)?;
    let mm = net.m() * net.m();
    let mut y = Vec::with_capacity(samples.len() * mm);
    for s in samples {
        y.extend_from_slice(s.target_centered().data());
    }
    Ok((inputs, Tensor::from_vec(&[samples.len(), mm], y)?))
}

/// Mean PSNR of the post-processed predictions of `net` over `samples`.
pub fn mean_prediction_psnr(net: &Network, samples: &[BlockSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid!("no samples to evaluate"));
    }
    let mm = net.m() * net.m();
    let mut total = 0.0;
    for chunk in samples.chunks(64) {
        let contexts: Vec<_> = chunk.iter().map(|s| &s.context).collect();
        let pred = net.infer_batch(&contexts)?;
        for (i, s) in chunk.iter().enumerate() {
            let alpha = s.context.alpha;
            let block: Vec<f64> = pred.data()[i * mm..(i + 1) * mm].iter().map(|v| (v + alpha).clamp(0.0, 255.0)).collect();
            total += psnr(&block, s.target.data());
        }
    }
    Ok(total / samples.len() as f64)
}

fn checkpoint_path(dir: &Path, m: usize, iteration: Option<u64>) -> PathBuf {
    match iteration {
        Some(t) => dir.join(format!("pnns-m{m}-iter{t}.ckpt")),
        None => dir.join(format!("pnns-m{m}.ckpt")),
    }
}

/// Trains one network on `crops`.
///
/// The last `validation_fraction` of the crops is held out. When
/// `checkpoint_dir` is given, a checkpoint is written at every milestone, at
/// the end, and before returning [`Error::Diverged`].
pub fn train(config: &TrainingConfig, crops: &CropSet, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_crops, val_crops) = crops.split(config.validation_fraction);
    if train_crops.is_empty() {
        return Err(invalid!("no training crops left after the validation split"));
    }
    let alpha = crops.alpha;
    let mut network = Network::init(config.spec()?, &mut rng)?;
    let val_samples = if val_crops.is_empty() {
        Vec::new()
    } else {
        let mut samples = Vec::with_capacity(val_crops.len() * VALIDATION_PER_CROP);
        for crop in val_crops {
            for _ in 0..VALIDATION_PER_CROP {
                let (n0, n1) = config.mask_policy.draw(config.m, &mut rng);
                samples.push(draw_sample(&View::identity(crop), config.m, n0, n1, alpha, false, &mut rng)?);
            }
        }
        samples
    };
    let mut source = match config.family {
        Family::FullyConnected => {
            let data = generate_fc_dataset(
                train_crops,
                config.m,
                config.fc_samples,
                config.mask_policy,
                alpha,
                config.quantization_noise,
                &mut rng,
            )?;
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            Source::Offline { data, order, cursor: 0 }
        }
        Family::Convolutional => Source::Online { crops: train_crops },
    };
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut adam = AdamState::new(network.params(), config.learning_rate);
    let mut curve = Vec::new();
    let mut running = 0.0;
    let mut running_count = 0u64;
    for t in 0..config.iterations {
        adam.learning_rate = config.learning_rate_at(t);
        let (inputs, target) = source.next_batch(&network, config, alpha, &mut rng)?;
        let (pred, trace) = network.forward_tensors(inputs)?;
        let out = loss_and_grad(&pred, &target, config.distortion, &[], 0.0)?;
        let mut grads = network.backward(&trace, &out.grad_prediction)?;
        for (g, layer) in grads.iter_mut().zip(network.layers()) {
            g.weights.add_scaled(&layer.weights, 2.0 * config.weight_decay);
        }
        if !out.loss.is_finite() || grads.iter().any(|g| !g.weights.is_finite() || !g.biases.is_finite()) {
            if let Some(dir) = checkpoint_dir {
                let ckpt = Checkpoint { network: network.clone(), alpha, iteration: t };
                save_checkpoint(dir.join(format!("pnns-m{}-diverged.ckpt", config.m)), &ckpt)?;
            }
            return Err(Error::Diverged { iteration: t, loss: out.loss });
        }
        let grad_refs: Vec<&Tensor> = grads.iter().flat_map(|g| [&g.weights, &g.biases]).collect();
        adam.update(&mut network.params_mut(), &grad_refs)?;
        running += out.distortion;
        running_count += 1;

        let done = t + 1;
        if done % config.log_every.max(1) == 0 || done == config.iterations {
            let reg = config.weight_decay * network.weight_tensors().iter().map(|w| w.sum_sq()).sum::<f64>();
            let loss = running / running_count as f64 + reg;
            if !loss.is_finite() {
                return Err(Error::Diverged { iteration: done, loss });
            }
            let validate_now = !val_samples.is_empty()
                && (done == config.iterations || (config.validate_every > 0 && done % config.validate_every == 0));
            let validation_psnr =
                if validate_now { Some(mean_prediction_psnr(&network, &val_samples)?) } else { None };
            info!(
                "m={} iter {done}: loss {loss:.4}, lr {:e}{}",
                config.m,
                adam.learning_rate,
                validation_psnr.map(|v| format!(", validation {v:.3} dB")).unwrap_or_default()
            );
            curve.push(CurvePoint { iteration: done, loss, learning_rate: adam.learning_rate, validation_psnr });
            running = 0.0;
            running_count = 0;
        }
        if let Some(dir) = checkpoint_dir {
            if config.milestones.contains(&done) {
                let ckpt = Checkpoint { network: network.clone(), alpha, iteration: done };
                save_checkpoint(checkpoint_path(dir, config.m, Some(done)), &ckpt)?;
            }
        }
    }
    let validation_psnr = curve.last().and_then(|p| p.validation_psnr);
    let outcome = TrainOutcome { network, alpha, curve, validation_psnr };
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(checkpoint_path(dir, config.m, None), &outcome.checkpoint(config.iterations))?;
    }
    Ok(outcome)
}

/// Final checkpoint location used by [`train`].
pub fn final_checkpoint_path(dir: &Path, m: usize) -> PathBuf {
    checkpoint_path(dir, m, None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub validation_psnr: f64,
    pub final_loss: f64,
}

/// Trains one network per `(learning rate, weight decay)` pair. Diverged runs
/// are reported with a validation PSNR of negative infinity.
pub fn hyperparameter_grid(
    base: &TrainingConfig,
    crops: &CropSet,
    learning_rates: &[f64],
    weight_decays: &[f64],
) -> Result<Vec<GridPoint>> {
    let mut out = Vec::with_capacity(learning_rates.len() * weight_decays.len());
    for &learning_rate in learning_rates {
        for &weight_decay in weight_decays {
            let config = TrainingConfig { learning_rate, weight_decay, ..base.clone() };
            let point = match train(&config, crops, None) {
                Ok(o) => GridPoint {
                    learning_rate,
                    weight_decay,
                    validation_psnr: o.validation_psnr.unwrap_or(f64::NAN),
                    final_loss: o.curve.last().map_or(f64::NAN, |p| p.loss),
                },
                Err(Error::Diverged { loss, .. }) => {
                    GridPoint { learning_rate, weight_decay, validation_psnr: f64::NEG_INFINITY, final_loss: loss }
                }
                Err(e) => return Err(e),
            };
            info!("grid lr {learning_rate:e}, lambda {weight_decay:e}: {:.3} dB", point.validation_psnr);
            out.push(point);
        }
    }
    Ok(out)
}

pub fn grid_csv(points: &[GridPoint]) -> String {
    let mut s = String::from("learning_rate,weight_decay,validation_psnr,final_loss\n");
    for p in points {
        let _ = writeln!(s, "{:e},{:e},{:.4},{:.6}", p.learning_rate, p.weight_decay, p.validation_psnr, p.final_loss);
    }
    s
}

/// The grid point with the highest validation PSNR.
pub fn best_grid_point(points: &[GridPoint]) -> Option<GridPoint> {
    points.iter().copied().filter(|p| p.validation_psnr.is_finite()).max_by(|a, b| a.validation_psnr.total_cmp(&b.validation_psnr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::load_checkpoint;

    fn tiny(m: usize) -> TrainingConfig {
        TrainingConfig {
            fc_internal: 32,
            conv_divisor: 8,
            iterations: 30,
            milestones: vec![10, 20],
            batch_size: 8,
            fc_samples: 200,
            log_every: 10,
            validate_every: 10,
            learning_rate: 1e-3,
            ..TrainingConfig::desk_scale(m)
        }
    }

    #[test]
    fn schedule_divides_by_ten_at_milestones() {
        let c = TrainingConfig::paper_scale(4);
        assert_eq!(c.learning_rate_at(0), 1e-4);
        assert_eq!(c.learning_rate_at(399_999), 1e-4);
        assert!((c.learning_rate_at(400_000) - 1e-5).abs() < 1e-20);
        assert!((c.learning_rate_at(650_000) - 1e-6).abs() < 1e-21);
        assert!((c.learning_rate_at(799_999) - 1e-7).abs() < 1e-22);
        assert_eq!(TrainingConfig::paper_scale(16).learning_rate, 4e-4);
    }

    #[test]
    fn fc_training_writes_curve_and_checkpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let crops = synthetic_crops(6, 24, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = train(&tiny(4), &crops, Some(dir.path())).unwrap();
        assert_eq!(out.curve.len(), 3);
        assert!(out.curve.iter().all(|p| p.validation_psnr.is_some()));
        assert!((out.curve[2].learning_rate - 1e-5).abs() < 1e-18);
        for t in [10, 20] {
            assert!(checkpoint_path(dir.path(), 4, Some(t)).exists());
        }
        let ckpt = load_checkpoint(final_checkpoint_path(dir.path(), 4)).unwrap();
        assert_eq!(ckpt.iteration, 30);
        for (a, b) in ckpt.network.params().iter().zip(out.network.params()) {
            assert!(a.max_abs_diff(b) < 1e-6);
        }
        assert!(curve_csv(&out.curve).lines().count() == 4);
    }

    #[test]
    fn conv_training_runs_and_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let crops = synthetic_crops(3, 64, &mut rng).unwrap();
        let config = TrainingConfig { iterations: 3, log_every: 1, ..tiny(16) };
        let a = train(&config, &crops, None).unwrap();
        let b = train(&config, &crops, None).unwrap();
        assert_eq!(a.network, b.network);
        assert!(a.curve.iter().all(|p| p.loss.is_finite()));
    }

    #[test]
    fn huge_learning_rate_diverges_with_diagnostic_checkpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let crops = synthetic_crops(3, 24, &mut rng).unwrap();
        let config = TrainingConfig { learning_rate: 1e300, weight_decay: 1e300, ..tiny(4) };
        let dir = tempfile::tempdir().unwrap();
        match train(&config, &crops, Some(dir.path())) {
            Err(Error::Diverged { .. }) => assert!(dir.path().join("pnns-m4-diverged.ckpt").exists()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let crops = synthetic_crops(2, 24, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for config in [
            TrainingConfig { batch_size: 0, ..tiny(4) },
            TrainingConfig { learning_rate: 0.0, ..tiny(4) },
            TrainingConfig { mask_policy: MaskPolicy::Fixed { n0: 5, n1: 0 }, ..tiny(4) },
            TrainingConfig { m: 5, ..tiny(4) },
        ] {
            assert!(matches!(train(&config, &crops, None), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn grid_reports_every_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let crops = synthetic_crops(4, 24, &mut rng).unwrap();
        let config = TrainingConfig { iterations: 5, log_every: 5, ..tiny(4) };
        let points = hyperparameter_grid(&config, &crops, &[1e-3, 1e-4], &[1e-4, 5e-4, 1e-3]).unwrap();
        assert_eq!(points.len(), 6);
        assert!(best_grid_point(&points).is_some());
        assert_eq!(grid_csv(&points).lines().count(), 7);
    }
}

mod config;
mod manifest;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{config_pairs, default_seed, parse_pair, read_config_file, resolve, Preset};
use log::info;
use manifest::RunManifest;
use pnns::arch::{load_checkpoint, PredictorSet};
use pnns::codec::{decode_image, encode_image, mode_frequency_nu, Scheme, Stats};
use pnns::context::{extract_context_test, Extraction, BLOCK_WIDTHS};
use pnns::evaluation::{bjontegaard, draw_sites, nu_csv, prediction_psnr_suite, RdPoint, DEFAULT_BLOCK_COUNT};
use pnns::image::{psnr, GrayImage};
use pnns::training::{
    best_grid_point, curve_csv, final_checkpoint_path, grid_csv, hyperparameter_grid, ingest_crops, load_image_dir,
    synthetic_crops, train, CropSet, TrainingConfig, CROP_SIZE, GRID_LEARNING_RATES, GRID_WEIGHT_DECAYS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Neural intra prediction for block-based image coding.
#[derive(Parser, Debug)]
#[command(name = "pnns", version)]
struct Cli {
    /// Worker cap for data pipelines; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a crop set from a directory of images, or synthetic textures.
    Ingest(IngestArgs),
    /// Train one predictor.
    Train(TrainArgs),
    /// Train over a learning-rate and weight-decay grid.
    Grid(GridArgs),
    /// Predict one block of an image from its context.
    Predict(PredictArgs),
    /// Mean prediction PSNR per test mask and training policy.
    EvalPsnr(EvalArgs),
    /// Success rate against the best H.265 mode, and optionally the codec's
    /// mode frequencies.
    EvalMu(EvalMuArgs),
    /// Encode an image.
    Encode(EncodeArgs),
    /// Decode a bitstream.
    Decode(DecodeArgs),
    /// Bjontegaard rate difference between two RD curves.
    Bdrate(BdrateArgs),
    /// Run the built-in consistency suites.
    Selfcheck,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory of source images.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    src: Option<PathBuf>,
    /// Generate this many synthetic textures instead.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = CROP_SIZE)]
    crop_size: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output crop-set directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Crop-set directory written by `ingest`.
    #[arg(long)]
    crops: PathBuf,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// `uniform` or `n0,n1`.
    #[arg(long)]
    mask_policy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints and the training curve.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_delimiter = ',')]
    learning_rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    weight_decays: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    row: usize,
    #[arg(long)]
    col: usize,
    #[arg(long, default_value_t = 0)]
    n0: usize,
    #[arg(long, default_value_t = 0)]
    n1: usize,
    /// Output PGM of the predicted block.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of test images.
    #[arg(long)]
    images: PathBuf,
    /// `name=checkpoint` (repeatable); all models must share one block width.
    #[arg(long = "model", value_name = "NAME=PATH", required = true)]
    models: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_BLOCK_COUNT)]
    blocks: usize,
    /// Test mask `n0,n1` (repeatable); defaults to `0,0`.
    #[arg(long = "test", value_name = "N0,N1")]
    tests: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalMuArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Predictor directory for the mode-frequency table.
    #[arg(long, requires = "nu_qps")]
    model_dir: Option<PathBuf>,
    /// QPs of the switch-scheme encodes behind the mode-frequency table.
    #[arg(long = "nu-qp", value_delimiter = ',')]
    nu_qps: Vec<u8>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Baseline,
    Substitution,
    Switch,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Baseline => Scheme::Baseline,
            SchemeArg::Substitution => Scheme::Substitution,
            SchemeArg::Switch => Scheme::Switch,
        }
    }
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    qp: u8,
    #[arg(long, value_enum, default_value = "switch")]
    scheme: SchemeArg,
    /// Directory holding `pnns-m{m}.ckpt` predictors.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the encoder-side reconstruction here.
    #[arg(long)]
    recon: Option<PathBuf>,
    /// Also write coding statistics here as CSV.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// Output PGM.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BdrateArgs {
    /// CSV with `bpp` (or `rate`) and `psnr` columns.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Also write the result here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = match cli.threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    match cli.command {
        Command::Ingest(a) => ingest(a, threads),
        Command::Train(a) => train_cmd(a, threads),
        Command::Grid(a) => grid(a, threads),
        Command::Predict(a) => predict(a),
        Command::EvalPsnr(a) => eval(&a, threads, None).map(|_| ()),
        Command::EvalMu(a) => eval(&a.eval, threads, Some((a.model_dir.as_deref(), &a.nu_qps))).map(|_| ()),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Bdrate(a) => bdrate(a),
        Command::Selfcheck => return Ok(selfcheck()),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn load_image(path: &Path) -> Result<GrayImage> {
    pnns::image::load_luminance(path).with_context(|| format!("reading {}", path.display()))
}

fn seed_or_default(seed: Option<u64>) -> Result<u64> {
    seed.map_or_else(default_seed, Ok)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ingest(a: IngestArgs, threads: usize) -> Result<()> {
    let seed = seed_or_default(a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = RunManifest::new("ingest", seed);
    manifest.set("crop_size", a.crop_size).set("threads", threads);
    let set = match (&a.src, a.synthetic) {
        (Some(src), _) => {
            manifest.input(src)?;
            ingest_crops(src, a.crop_size, &mut rng)?
        }
        (None, Some(n)) => {
            manifest.set("synthetic", n);
            synthetic_crops(n, a.crop_size, &mut rng)?
        }
        (None, None) => bail!("either --src or --synthetic is required"),
    };
    create_dir(&a.out)?;
    set.save(&a.out)?;
    manifest.set("alpha", set.alpha).set("crops", set.len());
    manifest.write_for(&a.out)?;
    println!("{} crops, alpha {:.4}, written to {}", set.len(), set.alpha, a.out.display());
    Ok(())
}

fn resolve_training(a: &TrainArgs) -> Result<(Preset, TrainingConfig)> {
    let file = a.config.as_deref().map(read_config_file).transpose()?.unwrap_or_default();
    let mut flags = a.overrides.iter().map(|s| parse_pair(s)).collect::<Result<Vec<_>>>()?;
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    push("iterations", a.iterations.map(|v| v.to_string()));
    push("learning_rate", a.learning_rate.map(|v| v.to_string()));
    push("batch_size", a.batch_size.map(|v| v.to_string()));
    push("mask_policy", a.mask_policy.clone());
    push("seed", a.seed.map(|v| v.to_string()));
    resolve(a.m, a.preset, &file, &flags)
}

fn training_manifest(name: &str, a: &TrainArgs, preset: Preset, c: &TrainingConfig, threads: usize) -> Result<RunManifest> {
    let mut manifest = RunManifest::new(name, c.seed);
    manifest.set("preset", preset.name()).extend(&config_pairs(c)).set("threads", threads);
    manifest.input(&a.crops)?;
    if let Some(cfg) = &a.config {
        manifest.input(cfg)?;
    }
    Ok(manifest)
}

fn train_cmd(a: TrainArgs, threads: usize) -> Result<()> {
    let (preset, c) = resolve_training(&a)?;
    let manifest = training_manifest("train", &a, preset, &c, threads)?;
    let crops = CropSet::load(&a.crops)?;
    create_dir(&a.out)?;
    let outcome = train(&c, &crops, Some(&a.out))?;
    write_file(&a.out.join("curve.csv"), curve_csv(&outcome.curve))?;
    manifest.write_for(&a.out)?;
    let ckpt = final_checkpoint_path(&a.out, c.m);
    match outcome.validation_psnr {
        Some(p) => println!("validation PSNR {p:.3} dB; checkpoint {}", ckpt.display()),
        None => println!("no validation crops; checkpoint {}", ckpt.display()),
    }
    Ok(())
}

fn grid(a: GridArgs, threads: usize) -> Result<()> {
    let (preset, c) = resolve_training(&a.train)?;
    let lrs = a.learning_rates.unwrap_or_else(|| GRID_LEARNING_RATES.to_vec());
    let lambdas = a.weight_decays.unwrap_or_else(|| GRID_WEIGHT_DECAYS.to_vec());
    let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let mut manifest = training_manifest("grid", &a.train, preset, &c, threads)?;
    manifest.set("learning_rates", list(&lrs)).set("weight_decays", list(&lambdas));
    let crops = CropSet::load(&a.train.crops)?;
    let points = hyperparameter_grid(&c, &crops, &lrs, &lambdas)?;
    create_dir(&a.train.out)?;
    write_file(&a.train.out.join("grid.csv"), grid_csv(&points))?;
    manifest.write_for(&a.train.out)?;
    match best_grid_point(&points) {
        Some(p) => println!(
            "best: learning rate {:e}, weight decay {:e}, validation PSNR {:.3} dB",
            p.learning_rate, p.weight_decay, p.validation_psnr
        ),
        None => println!("every grid point diverged"),
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let img = load_image(&a.input)?;
    let m = ckpt.network.m();
    let ctx = match extract_context_test(&img, a.row, a.col, m, a.n0, a.n1, ckpt.alpha)? {
        Extraction::Context(ctx) => ctx,
        Extraction::OutOfBounds => bail!("the context of the {m}x{m} block at ({}, {}) leaves the image", a.row, a.col),
    };
    if a.row + m > img.height() || a.col + m > img.width() {
        bail!("the {m}x{m} block at ({}, {}) leaves the image", a.row, a.col);
    }
    let pred = ckpt.network.predict_block(&ctx)?;
    let truth: Vec<f64> = (0..m * m).map(|i| img.get(a.row + i / m, a.col + i % m) as f64).collect();
    let block = GrayImage::new(m, m, pred.data().iter().map(|&v| v.round() as u8).collect())?;
    block.write_pgm(&a.out)?;
    let mut manifest = RunManifest::new("predict", 0);
    manifest.set("row", a.row).set("col", a.col).set("n0", a.n0).set("n1", a.n1);
    manifest.input(&a.model)?.input(&a.input)?;
    manifest.write_for(&a.out)?;
    println!("prediction PSNR {:.3} dB", psnr(pred.data(), &truth));
    Ok(())
}

fn parse_test(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(',').ok_or_else(|| anyhow!("test mask must be n0,n1, got {s:?}"))?;
    Ok((a.trim().parse().context("n0")?, b.trim().parse().context("n1")?))
}

fn eval(a: &EvalArgs, threads: usize, nu: Option<(Option<&Path>, &[u8])>) -> Result<()> {
    let seed = seed_or_default(a.seed)?;
    let name = if nu.is_some() { "eval-mu" } else { "eval-psnr" };
    let mut manifest = RunManifest::new(name, seed);
    manifest.set("blocks", a.blocks).set("threads", threads);
    let (images, _) = load_image_dir(&a.images)?;
    manifest.input(&a.images)?;
    let mut models = Vec::new();
    for spec in &a.models {
        let (label, path) = spec.split_once('=').ok_or_else(|| anyhow!("--model expects NAME=PATH, got {spec:?}"))?;
        models.push((label.to_string(), load_checkpoint(path)?));
        manifest.input(Path::new(path))?;
    }
    let m = models[0].1.network.m();
    if models.iter().any(|(_, c)| c.network.m() != m) {
        bail!("all models of one evaluation must predict the same block width");
    }
    let tests = if a.tests.is_empty() { vec![(0, 0)] } else { a.tests.iter().map(|s| parse_test(s)).collect::<Result<_>>()? };
    manifest.set("tests", tests.iter().map(|(x, y)| format!("{x},{y}")).collect::<Vec<_>>().join(";"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = draw_sites(&images, m, a.blocks, &mut rng)?;
    let networks: Vec<_> = models.iter().map(|(l, c)| (l.as_str(), &c.network, c.alpha)).collect();
    let (psnr_matrix, mu_matrix) = prediction_psnr_suite(&networks, &images, &sites, &tests)?;
    create_dir(&a.out)?;
    let matrix = if nu.is_some() { &mu_matrix } else { &psnr_matrix };
    print!("{}", matrix.to_csv());
    write_file(&a.out.join(if nu.is_some() { "mu.csv" } else { "psnr.csv" }), matrix.to_csv())?;
    if let Some((Some(dir), qps)) = nu {
        let predictors = load_model_dir(dir, &mut manifest)?;
        manifest.set("nu_qps", qps.iter().map(u8::to_string).collect::<Vec<_>>().join(","));
        let mut stats = Vec::new();
        for img in &images {
            for &qp in qps {
                stats.push(encode_image(img, qp, Scheme::Switch, &predictors)?.stats);
            }
        }
        write_file(&a.out.join("nu.csv"), nu_csv(&mode_frequency_nu(&stats)))?;
    }
    manifest.write_for(&a.out)?;
    Ok(())
}

fn load_model_dir(dir: &Path, manifest: &mut RunManifest) -> Result<PredictorSet> {
    let mut set = PredictorSet::new();
    for m in BLOCK_WIDTHS {
        let path = final_checkpoint_path(dir, m);
        if path.is_file() {
            let ckpt = load_checkpoint(&path)?;
            if ckpt.network.m() != m {
                bail!("{} holds a predictor for m = {}", path.display(), ckpt.network.m());
            }
            set.insert(ckpt);
            manifest.input(&path)?;
        }
    }
    if set.is_empty() {
        bail!("no pnns-m{{m}}.ckpt predictor in {}", dir.display());
    }
    Ok(set)
}

fn stats_csv(s: &Stats) -> String {
    let mut out = String::from("key,value\n");
    let _ = writeln!(out, "total_bits,{}", s.total_bits);
    let _ = writeln!(out, "pixels,{}", s.pixels);
    let _ = writeln!(out, "bpp,{}", s.bits_per_pixel());
    let _ = writeln!(out, "psnr,{}", s.psnr);
    let _ = writeln!(out, "pnns_fraction,{}", s.pnns_fraction());
    for (m, modes) in &s.selected {
        for (mode, n) in modes {
            let _ = writeln!(out, "selected.m{m}.{mode},{n}");
        }
    }
    out
}

fn encode(a: EncodeArgs) -> Result<()> {
    let scheme = Scheme::from(a.scheme);
    let mut manifest = RunManifest::new("encode", 0);
    manifest.set("qp", a.qp).set("scheme", scheme);
    let img = load_image(&a.input)?;
    manifest.input(&a.input)?;
    let predictors = match (&a.model_dir, scheme.uses_pnns()) {
        (Some(dir), true) => load_model_dir(dir, &mut manifest)?,
        (None, true) => bail!("the {scheme} scheme needs --model-dir"),
        (_, false) => PredictorSet::new(),
    };
    let enc = encode_image(&img, a.qp, scheme, &predictors)?;
    write_file(&a.out, &enc.bytes)?;
    if let Some(p) = &a.recon {
        enc.reconstruction.write_pgm(p)?;
        manifest.set("recon", p.display());
    }
    if let Some(p) = &a.stats {
        write_file(p, stats_csv(&enc.stats))?;
        manifest.set("stats", p.display());
    }
    manifest.write_for(&a.out)?;
    println!("{:.4} bpp, {:.3} dB, {} bytes", enc.stats.bits_per_pixel(), enc.stats.psnr, enc.bytes.len());
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let mut manifest = RunManifest::new("decode", 0);
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    manifest.input(&a.input)?;
    let predictors = match &a.model_dir {
        Some(dir) => load_model_dir(dir, &mut manifest)?,
        None => PredictorSet::new(),
    };
    let img = decode_image(&bytes, &predictors)?;
    img.write_pgm(&a.out)?;
    manifest.write_for(&a.out)?;
    info!("decoded {}x{} image", img.width(), img.height());
    Ok(())
}

/// Reads an RD curve from CSV with a `bpp` or `rate` column and a `psnr` column.
fn read_curve(path: &Path) -> Result<Vec<RdPoint>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| anyhow!("{} is empty", path.display()))?.split(',').map(str::trim).collect();
    let col = |names: &[&str]| header.iter().position(|h| names.contains(h));
    let rate = col(&["bpp", "rate"]).ok_or_else(|| anyhow!("{} has no bpp or rate column", path.display()))?;
    let psnr = col(&["psnr"]).ok_or_else(|| anyhow!("{} has no psnr column", path.display()))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |k: usize| -> Result<f64> {
                f.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| anyhow!("{} row {}: bad value", path.display(), i + 2))
            };
            Ok(RdPoint::new(get(rate)?, get(psnr)?))
        })
        .collect()
}

fn bdrate(a: BdrateArgs) -> Result<()> {
    let pct = bjontegaard(&read_curve(&a.a)?, &read_curve(&a.b)?)?;
    let line = format!("BD-rate: {pct:.3}%");
    println!("{line}");
    if let Some(out) = &a.out {
        write_file(out, format!("{line}\n"))?;
        let mut manifest = RunManifest::new("bdrate", 0);
        manifest.input(&a.a)?.input(&a.b)?;
        manifest.write_for(out)?;
    }
    Ok(())
}

fn selfcheck() -> ExitCode {
    let outcomes = pnns::diagnostics::selfcheck();
    for s in &outcomes {
        println!("{} {}: {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail);
    }
    if outcomes.iter().all(|s| s.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

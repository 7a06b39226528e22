//! Training configuration resolution: built-in preset, then a key=value
//! file, then command-line overrides.

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use pnns::arch::Family;
use pnns::context::MaskPolicy;
use pnns::nn::Distortion;
use pnns::training::TrainingConfig;
use std::fs;
use std::path::Path;

pub const SEED_ENV: &str = "PNNS_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    PaperScale,
    DeskScale,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperScale => "paper-scale",
            Preset::DeskScale => "desk-scale",
        }
    }

    fn parse(s: &str) -> Result<Preset> {
        Preset::from_str(s, true).map_err(|_| anyhow!("unknown preset {s:?}, expected paper-scale or desk-scale"))
    }

    fn config(self, m: usize) -> TrainingConfig {
        match self {
            Preset::PaperScale => TrainingConfig::paper_scale(m),
            Preset::DeskScale => TrainingConfig::desk_scale(m),
        }
    }
}

/// Seed used when neither a flag nor a config file sets one.
pub fn default_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key=value, got {line:?}", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_pair(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected key=value, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_pairs(&text).with_context(|| format!("in config {}", path.display()))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("{key}: cannot parse {v:?}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("{key}: expected true or false, got {v:?}"),
    }
}

pub fn parse_mask_policy(v: &str) -> Result<MaskPolicy> {
    if v == "uniform" {
        return Ok(MaskPolicy::UniformRandom);
    }
    let (a, b) = v.split_once(',').ok_or_else(|| anyhow!("mask policy must be \"uniform\" or \"n0,n1\", got {v:?}"))?;
    Ok(MaskPolicy::Fixed { n0: num("mask_policy", a.trim())?, n1: num("mask_policy", b.trim())? })
}

pub fn mask_policy_name(p: MaskPolicy) -> String {
    match p {
        MaskPolicy::UniformRandom => "uniform".into(),
        MaskPolicy::Fixed { n0, n1 } => format!("{n0},{n1}"),
    }
}

fn apply(c: &mut TrainingConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "family" => c.family = v.parse::<Family>().map_err(|e| anyhow!("family: {e}"))?,
        "fc_internal" => c.fc_internal = num(key, v)?,
        "conv_divisor" => c.conv_divisor = num(key, v)?,
        "distortion" => {
            c.distortion = match v {
                "l2" => Distortion::L2,
                "l1" => Distortion::L1,
                _ => bail!("distortion: expected l1 or l2, got {v:?}"),
            }
        }
        "weight_decay" => c.weight_decay = num(key, v)?,
        "learning_rate" => c.learning_rate = num(key, v)?,
        "iterations" => c.iterations = num(key, v)?,
        "milestones" => {
            c.milestones = v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s.trim())).collect::<Result<_>>()?
        }
        "batch_size" => c.batch_size = num(key, v)?,
        "mask_policy" => c.mask_policy = parse_mask_policy(v)?,
        "seed" => c.seed = num(key, v)?,
        "validation_fraction" => c.validation_fraction = num(key, v)?,
        "quantization_noise" => c.quantization_noise = parse_bool(key, v)?,
        "fc_samples" => c.fc_samples = num(key, v)?,
        "log_every" => c.log_every = num(key, v)?,
        "validate_every" => c.validate_every = num(key, v)?,
        _ => bail!("unknown configuration key {key:?}"),
    }
    Ok(())
}

/// Every field of `c` as `key=value` pairs, in a fixed order.
pub fn config_pairs(c: &TrainingConfig) -> Vec<(String, String)> {
    let milestones: Vec<String> = c.milestones.iter().map(u64::to_string).collect();
    let distortion = match c.distortion {
        Distortion::L2 => "l2",
        Distortion::L1 => "l1",
    };
    [
        ("m", c.m.to_string()),
        ("family", c.family.name().to_string()),
        ("fc_internal", c.fc_internal.to_string()),
        ("conv_divisor", c.conv_divisor.to_string()),
        ("distortion", distortion.to_string()),
        ("weight_decay", c.weight_decay.to_string()),
        ("learning_rate", c.learning_rate.to_string()),
        ("iterations", c.iterations.to_string()),
        ("milestones", milestones.join(",")),
        ("batch_size", c.batch_size.to_string()),
        ("mask_policy", mask_policy_name(c.mask_policy)),
        ("seed", c.seed.to_string()),
        ("validation_fraction", c.validation_fraction.to_string()),
        ("quantization_noise", c.quantization_noise.to_string()),
        ("fc_samples", c.fc_samples.to_string()),
        ("log_every", c.log_every.to_string()),
        ("validate_every", c.validate_every.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Resolves a training configuration.
///
/// `m` and `preset` are taken from the flags, else the file; the preset
/// defaults to desk-scale. Remaining keys apply file first, flags last.
pub fn resolve(
    m: Option<usize>,
    preset: Option<Preset>,
    file: &[(String, String)],
    flags: &[(String, String)],
) -> Result<(Preset, TrainingConfig)> {
    let lookup = |key: &str| file.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let m = match (m, lookup("m")) {
        (Some(m), _) => m,
        (None, Some(v)) => num("m", v)?,
        (None, None) => bail!("block width m is required (flag --m or key m)"),
    };
    let preset = match (preset, lookup("preset")) {
        (Some(p), _) => p,
        (None, Some(v)) => Preset::parse(v)?,
        (None, None) => Preset::DeskScale,
    };
    let mut c = preset.config(m);
    c.seed = default_seed()?;
    for (k, v) in file.iter().chain(flags) {
        if k != "m" && k != "preset" {
            apply(&mut c, k, v)?;
        }
    }
    c.validate()?;
    Ok((preset, c))
}

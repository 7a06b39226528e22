//! Training corpora: luminance crops and the offline fully-connected sample set.

use crate::codec::{decode_image, encode_image, Scheme};
use crate::arch::PredictorSet;
use crate::context::{compute_alpha, sample_at, training_positions, BlockSample, MaskPolicy, View};
use crate::error::{invalid, Error, Result};
use crate::image::{load_luminance, GrayImage};
use crate::tensor::Tensor;
use log::{info, warn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const CROP_SIZE: usize = 320;
/// Share of crops, taken from the end of the manifest, held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.05;
/// QPs drawn for quantization-noise training.
pub const NOISE_QPS: [u8; 3] = [32, 37, 42];

const IMAGE_EXTENSIONS: [&str; 7] = ["png", "jpg", "jpeg", "pgm", "ppm", "pnm", "bmp"];

/// Ordered luminance crops with their source names and mean intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct CropSet {
    pub crops: Vec<GrayImage>,
    pub manifest: Vec<String>,
    pub alpha: f64,
}

impl CropSet {
    pub fn new(crops: Vec<GrayImage>, manifest: Vec<String>) -> Result<CropSet> {
        if crops.len() != manifest.len() {
            return Err(invalid!("{} crops but {} manifest entries", crops.len(), manifest.len()));
        }
        let alpha = compute_alpha(&crops)?;
        Ok(CropSet { crops, manifest, alpha })
    }

    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    /// `(training, validation)`: the validation part is the last `fraction` of
    /// the manifest, at least one crop when there are two or more.
    pub fn split(&self, fraction: f64) -> (&[GrayImage], &[GrayImage]) {
        let n = self.crops.len();
        let mut held = (n as f64 * fraction).round() as usize;
        if held == 0 && n >= 2 && fraction > 0.0 {
            held = 1;
        }
        self.crops.split_at(n - held.min(n))
    }

    /// Writes every crop as `NNNNN.pgm` plus a `manifest.txt` listing the sources.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (i, (crop, name)) in self.crops.iter().zip(&self.manifest).enumerate() {
            crop.write_pgm(dir.join(format!("{i:05}.pgm")))?;
            manifest.push_str(&format!("{i:05}.pgm\t{name}\n"));
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Reads a directory written by [`CropSet::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<CropSet> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut crops = Vec::new();
        let mut manifest = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (file, source) = line.split_once('\t').unwrap_or((line, line));
            crops.push(GrayImage::read_pgm(dir.join(file))?);
            manifest.push(source.to_string());
        }
        CropSet::new(crops, manifest)
    }
}

/// Decodable image files of `dir`, sorted by path.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// One random `crop_size × crop_size` luminance crop per image of `dir`, in file-name order.
/// Images that are too small or cannot be decoded are skipped.
pub fn ingest_crops<R: Rng + ?Sized>(dir: impl AsRef<Path>, crop_size: usize, rng: &mut R) -> Result<CropSet> {
    let dir = dir.as_ref();
    let mut crops = Vec::new();
    let mut manifest = Vec::new();
    for path in image_files(dir)? {
        let img = match load_luminance(&path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        if img.width() < crop_size || img.height() < crop_size {
            info!("skipping {}: {}x{} is smaller than {crop_size}", path.display(), img.width(), img.height());
            continue;
        }
        let row = rng.gen_range(0..=img.height() - crop_size);
        let col = rng.gen_range(0..=img.width() - crop_size);
        crops.push(img.crop(row, col, crop_size, crop_size)?);
        manifest.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    if crops.is_empty() {
        return Err(invalid!("no image of at least {crop_size}x{crop_size} in {}", dir.display()));
    }
    CropSet::new(crops, manifest)
}

/// Luminance of every image of `dir`, in file-name order, with the file names.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<(Vec<GrayImage>, Vec<String>)> {
    let dir = dir.as_ref();
    let mut images = Vec::new();
    let mut names = Vec::new();
    for path in image_files(dir)? {
        images.push(load_luminance(&path)?);
        names.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    if images.is_empty() {
        return Err(invalid!("no image in {}", dir.display()));
    }
    Ok((images, names))
}

/// A random texture: two or three sinusoidal gratings of random orientation,
/// period and phase over a random mean, plus Gaussian noise.
pub fn synthetic_texture<R: Rng + ?Sized>(size: usize, rng: &mut R) -> GrayImage {
    let mean = rng.gen_range(70.0..180.0);
    let count = rng.gen_range(2..=3);
    let gratings: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let theta: f64 = rng.gen_range(0.0..PI);
            let period: f64 = rng.gen_range(6.0..32.0);
            let amplitude = rng.gen_range(15.0..45.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let k = 2.0 * PI / period;
            (k * theta.cos(), k * theta.sin(), amplitude, phase)
        })
        .collect();
    let noise = Normal::new(0.0, rng.gen_range(2.0..6.0)).expect("positive std");
    let mut data = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let mut v = mean;
            for &(kx, ky, a, p) in &gratings {
                v += a * (kx * c as f64 + ky * r as f64 + p).sin();
            }
            v += noise.sample(rng);
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(size, size, data).expect("size matches")
}

/// `count` synthetic crops with a numbered manifest.
pub fn synthetic_crops<R: Rng + ?Sized>(count: usize, size: usize, rng: &mut R) -> Result<CropSet> {
    let crops: Vec<GrayImage> = (0..count).map(|_| synthetic_texture(size, rng)).collect();
    let manifest = (0..count).map(|i| format!("synthetic-{i:05}")).collect();
    CropSet::new(crops, manifest)
}

/// Re-draws the context of `sample` from a copy of its footprint that went
/// through the codec at `qp`; the target block stays clean.
pub fn add_quantization_noise(view: &View<'_>, row: usize, col: usize, sample: &mut BlockSample, qp: u8) -> Result<()> {
    let m = sample.context.m;
    let footprint = GrayImage::from_fn(3 * m, 3 * m, |r, c| view.get(row - m + r, col - m + c));
    let empty = PredictorSet::new();
    let coded = encode_image(&footprint, qp, Scheme::Baseline, &empty)?;
    let decoded = decode_image(&coded.bytes, &empty)?;
    let noisy = sample_at(&View::identity(&decoded), m, m, m, sample.context.n0, sample.context.n1, sample.context.alpha);
    sample.context = noisy.context;
    Ok(())
}

/// One training sample at a uniform position of `view`, optionally with quantization noise.
pub fn draw_sample<R: Rng + ?Sized>(
    view: &View<'_>,
    m: usize,
    n0: usize,
    n1: usize,
    alpha: f64,
    noise: bool,
    rng: &mut R,
) -> Result<BlockSample> {
    let (Some((r_lo, r_hi)), Some((c_lo, c_hi))) =
        (training_positions(view.height(), m), training_positions(view.width(), m))
    else {
        return Err(invalid!("{}x{} image cannot host a 3m x 3m footprint for m = {m}", view.width(), view.height()));
    };
    let row = rng.gen_range(r_lo..=r_hi);
    let col = rng.gen_range(c_lo..=c_hi);
    let mut sample = sample_at(view, row, col, m, n0, n1, alpha);
    if noise {
        let qp = NOISE_QPS[rng.gen_range(0..NOISE_QPS.len())];
        add_quantization_noise(view, row, col, &mut sample, qp)?;
    }
    Ok(sample)
}

/// Offline sample set for the fully-connected family: centered, vectorized
/// contexts and centered targets stored as 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct FcDataset {
    pub m: usize,
    pub alpha: f64,
    contexts: Vec<f32>,
    targets: Vec<f32>,
}

const FC_MAGIC: &[u8; 4] = b"PFC1";

impl FcDataset {
    pub fn len(&self) -> usize {
        self.targets.len() / (self.m * self.m)
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn context_len(&self) -> usize {
        5 * self.m * self.m
    }

    pub fn context(&self, i: usize) -> &[f32] {
        let n = self.context_len();
        &self.contexts[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        let n = self.m * self.m;
        &self.targets[i * n..(i + 1) * n]
    }

    /// `([batch, 5m²], [batch, m²])` tensors for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let (nc, nt) = (self.context_len(), self.m * self.m);
        let mut x = Vec::with_capacity(indices.len() * nc);
        let mut y = Vec::with_capacity(indices.len() * nt);
        for &i in indices {
            x.extend(self.context(i).iter().map(|&v| v as f64));
            y.extend(self.target(i).iter().map(|&v| v as f64));
        }
        Ok((Tensor::from_vec(&[indices.len(), nc], x)?, Tensor::from_vec(&[indices.len(), nt], y)?))
    }

    /// Layout: `"PFC1" | m u32 | count u64 | alpha f64`, then per sample the
    /// `5m²` context values followed by the `m²` target values, all f32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(FC_MAGIC)?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        for i in 0..self.len() {
            for &v in self.context(i).iter().chain(self.target(i)) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FcDataset> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut header = [0u8; 24];
        r.read_exact(&mut header)?;
        if &header[..4] != FC_MAGIC {
            return Err(invalid!("not a fully-connected sample file"));
        }
        let m = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
        let alpha = f64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
        let (nc, nt) = (5 * m * m, m * m);
        let mut contexts = Vec::with_capacity(count * nc);
        let mut targets = Vec::with_capacity(count * nt);
        let mut record = vec![0u8; (nc + nt) * 4];
        for _ in 0..count {
            r.read_exact(&mut record).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => invalid!("sample file is truncated"),
                _ => Error::Io(e),
            })?;
            let values = record.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
            for (k, v) in values.enumerate() {
                if k < nc {
                    contexts.push(v);
                } else {
                    targets.push(v);
                }
            }
        }
        Ok(FcDataset { m, alpha, contexts, targets })
    }
}

/// `count` samples from uniformly chosen crops, without rotation or flipping.
pub fn generate_fc_dataset<R: Rng + ?Sized>(
    crops: &[GrayImage],
    m: usize,
    count: usize,
    masks: MaskPolicy,
    alpha: f64,
    noise: bool,
    rng: &mut R,
) -> Result<FcDataset> {
    if count == 0 {
        return Err(invalid!("sample count must be at least 1"));
    }
    if crops.is_empty() {
        return Err(invalid!("no crops to sample from"));
    }
    masks.validate(m)?;
    let mut contexts = Vec::with_capacity(count * 5 * m * m);
    let mut targets = Vec::with_capacity(count * m * m);
    for _ in 0..count {
        let crop = &crops[rng.gen_range(0..crops.len())];
        let (n0, n1) = masks.draw(m, rng);
        let s = draw_sample(&View::identity(crop), m, n0, n1, alpha, noise, rng)?;
        contexts.extend(s.context.vectorize_centered().data().iter().map(|&v| v as f32));
        targets.extend(s.target_centered().data().iter().map(|&v| v as f32));
    }
    Ok(FcDataset { m, alpha, contexts, targets })
}

/// Fixed evaluation samples: `per_crop` positions from each crop, with the given masks.
pub fn evaluation_samples<R: Rng + ?Sized>(
    crops: &[GrayImage],
    m: usize,
    per_crop: usize,
    n0: usize,
    n1: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<BlockSample>> {
    let mut out = Vec::with_capacity(crops.len() * per_crop);
    for crop in crops {
        for _ in 0..per_crop {
            out.push(draw_sample(&View::identity(crop), m, n0, n1, alpha, false, rng)?);
        }
    }
    Ok(out)
}

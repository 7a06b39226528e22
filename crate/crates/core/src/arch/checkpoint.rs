//! Binary checkpoint format.
//!
//! ```text
//! "PNNS" | version u16 | family u8 | m u16 | layer count u16
//! per layer: kind u8 | activation u8 | in u32 | out u32 | kernel u16 | stride u16
//! alpha f64 | iteration u64
//! payload: f32 weights then f32 biases, layer by layer
//! CRC-32 of everything above, u32
//! ```
//!
//! All integers and floats are little-endian.

use super::{Family, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerDesc, LayerKind, LayerParams};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PNNS";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A trained predictor with the mean intensity it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub alpha: f64,
    pub iteration: u64,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn family_code(f: Family) -> u8 {
    match f {
        Family::FullyConnected => 0,
        Family::Convolutional => 1,
    }
}

fn kind_code(k: LayerKind) -> u8 {
    match k {
        LayerKind::FullyConnected => 0,
        LayerKind::Conv2d => 1,
        LayerKind::TConv2d => 2,
        LayerKind::Merger => 3,
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::LeakyRelu => 1,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.network.spec();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(family_code(spec.family));
        out.extend_from_slice(&(spec.m as u16).to_le_bytes());
        out.extend_from_slice(&(spec.layers.len() as u16).to_le_bytes());
        for d in &spec.layers {
            out.push(kind_code(d.kind));
            out.push(activation_code(d.activation));
            out.extend_from_slice(&(d.in_size as u32).to_le_bytes());
            out.extend_from_slice(&(d.out_size as u32).to_le_bytes());
            out.extend_from_slice(&(d.kernel as u16).to_le_bytes());
            out.extend_from_slice(&(d.stride as u16).to_le_bytes());
        }
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        for l in self.network.layers() {
            for t in [&l.weights, &l.biases] {
                for &v in t.data() {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing PNNS magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("CRC mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let family = match r.u8()? {
            0 => Family::FullyConnected,
            1 => Family::Convolutional,
            f => return Err(corrupt(format!("unknown family code {f}"))),
        };
        let m = r.u16()? as usize;
        let count = r.u16()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = match r.u8()? {
                0 => LayerKind::FullyConnected,
                1 => LayerKind::Conv2d,
                2 => LayerKind::TConv2d,
                3 => LayerKind::Merger,
                k => return Err(corrupt(format!("unknown layer kind {k}"))),
            };
            let activation = match r.u8()? {
                0 => Activation::Identity,
                1 => Activation::LeakyRelu,
                a => return Err(corrupt(format!("unknown activation {a}"))),
            };
            let in_size = r.u32()? as usize;
            let out_size = r.u32()? as usize;
            let kernel = r.u16()? as usize;
            let stride = r.u16()? as usize;
            layers.push(LayerDesc { kind, in_size, out_size, kernel, stride, activation });
        }
        let spec = NetworkSpec { family, m, layers };
        spec.validate().map_err(|e| corrupt(format!("invalid architecture: {e}")))?;
        let alpha = r.f64()?;
        let iteration = r.u64()?;
        let expected: usize = spec.param_count() * 4;
        if r.remaining() != expected {
            return Err(corrupt(format!("payload has {} bytes, architecture needs {expected}", r.remaining())));
        }
        let mut params = Vec::with_capacity(spec.layers.len());
        for d in &spec.layers {
            let weights = r.tensor(&d.weight_shape())?;
            let biases = r.tensor(&d.bias_shape())?;
            params.push(LayerParams { kind: d.kind, weights, biases, stride: d.stride, activation: d.activation });
        }
        let network = Network::from_parts(spec, params).map_err(|e| corrupt(e.to_string()))?;
        Ok(Checkpoint { network, alpha, iteration })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(corrupt("truncated checkpoint"));
        }
        let out = self.bytes[self.pos..end].try_into().expect("N bytes");
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_le_bytes(self.take()?) as f64);
        }
        Tensor::from_vec(shape, data)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// One predictor per block width, as used by the codec.
#[derive(Clone, Debug, Default)]
pub struct PredictorSet {
    predictors: BTreeMap<usize, Checkpoint>,
}

impl PredictorSet {
    pub fn new() -> PredictorSet {
        PredictorSet::default()
    }

    pub fn insert(&mut self, ckpt: Checkpoint) {
        self.predictors.insert(ckpt.network.m(), ckpt);
    }

    pub fn get(&self, m: usize) -> Option<&Checkpoint> {
        self.predictors.get(&m)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.predictors.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.predictors.is_empty()
    }

    /// Loads every given checkpoint file.
    pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<PredictorSet> {
        let mut set = PredictorSet::new();
        for p in paths {
            set.insert(load_checkpoint(p)?);
        }
        Ok(set)
    }

    /// First 8 bytes of SHA-256 over `(m as u16 LE, checkpoint bytes)` in increasing `m`.
    /// The empty set hashes to the digest of no input.
    pub fn digest(&self) -> [u8; 8] {
        let mut h = Sha256::new();
        for (m, c) in &self.predictors {
            h.update((*m as u16).to_le_bytes());
            h.update(c.to_bytes());
        }
        h.finalize()[..8].try_into().expect("8 bytes")
    }
}

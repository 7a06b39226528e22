//! Run manifests: what was run, with which resolved settings, on which inputs.

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// File name of the manifest written into output directories.
pub const DIR_MANIFEST: &str = "run-manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    /// `(path, sha256 hex)`.
    pub inputs: Vec<(String, String)>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// SHA-256 of a file, or of a directory's regular files (names and contents,
/// sorted by name, excluding any run manifest).
pub fn digest_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != DIR_MANIFEST))
            .collect();
        files.sort();
        for f in files {
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex(&h.finalize()))
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: Vec::new(),
            inputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.push((key.to_string(), value.to_string()));
        self
    }

    pub fn extend(&mut self, pairs: &[(String, String)]) -> &mut Self {
        self.config.extend_from_slice(pairs);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push((path.display().to_string(), digest_path(path)?));
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "subcommand={}", self.subcommand);
        let _ = writeln!(s, "version={}", self.version);
        let _ = writeln!(s, "seed={}", self.seed);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        for (p, d) in &self.inputs {
            let _ = writeln!(s, "input.{p}=sha256:{d}");
        }
        s
    }

    /// Where the manifest of an output lives: inside it for directories,
    /// `<file>.manifest` for files.
    pub fn location(output: &Path) -> PathBuf {
        if output.is_dir() {
            output.join(DIR_MANIFEST)
        } else {
            let mut name = output.as_os_str().to_owned();
            name.push(".manifest");
            PathBuf::from(name)
        }
    }

    pub fn write_for(&self, output: &Path) -> Result<PathBuf> {
        let path = RunManifest::location(output);
        fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("abc");
        fs::write(&f, b"abc").unwrap();
        assert_eq!(digest_path(&f).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn directory_digest_ignores_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.pgm"), b"1").unwrap();
        let before = digest_path(dir.path()).unwrap();
        fs::write(dir.path().join(DIR_MANIFEST), b"x").unwrap();
        assert_eq!(digest_path(dir.path()).unwrap(), before);
        fs::write(dir.path().join("b.pgm"), b"2").unwrap();
        assert_ne!(digest_path(dir.path()).unwrap(), before);
    }

    #[test]
    fn text_lists_everything() {
        let mut m = RunManifest::new("encode", 7);
        m.set("qp", 32);
        let t = m.to_text();
        assert!(t.starts_with("subcommand=encode\nversion="));
        assert!(t.contains("seed=7\nconfig.qp=32\n"));
        assert_eq!(RunManifest::location(Path::new("/x/out.pnc")), PathBuf::from("/x/out.pnc.manifest"));
    }
}

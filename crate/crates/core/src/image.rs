//! 8-bit grayscale images and binary PGM (P5) I/O.

use crate::error::{invalid, Error, Result};
use std::fs;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<GrayImage> {
        if width * height != data.len() {
            return Err(invalid!("{}x{} image needs {} pixels, got {}", width, height, width * height, data.len()));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> GrayImage {
        GrayImage { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> GrayImage {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }

    /// Copy of the `h×w` region whose top-left pixel is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<GrayImage> {
        if row + h > self.height || col + w > self.width {
            return Err(invalid!("crop {h}x{w} at ({row},{col}) exceeds {}x{}", self.height, self.width));
        }
        Ok(GrayImage::from_fn(w, h, |r, c| self.get(row + r, col + c)))
    }

    /// Rotation by `quarter_turns × 90°` counter-clockwise.
    pub fn rotate(&self, quarter_turns: u8) -> GrayImage {
        let (w, h) = (self.width, self.height);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => GrayImage::from_fn(h, w, |r, c| self.get(c, w - 1 - r)),
            2 => GrayImage::from_fn(w, h, |r, c| self.get(h - 1 - r, w - 1 - c)),
            _ => GrayImage::from_fn(h, w, |r, c| self.get(h - 1 - c, r)),
        }
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |r, c| self.get(r, self.width - 1 - c))
    }

    /// Extends the image to `width × height` by edge replication.
    pub fn pad_to(&self, width: usize, height: usize) -> GrayImage {
        GrayImage::from_fn(width, height, |r, c| {
            self.get(r.min(self.height - 1), c.min(self.width - 1))
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<GrayImage> {
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(invalid!("truncated PGM header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err(invalid!("not a binary PGM (P5) file"));
        }
        let parse = |s: String| s.parse::<usize>().map_err(|_| invalid!("bad PGM header field {s:?}"));
        let width = parse(token()?)?;
        let height = parse(token()?)?;
        let maxval = parse(token()?)?;
        if maxval != 255 {
            return Err(invalid!("only maxval 255 is supported, got {maxval}"));
        }
        // exactly one whitespace byte separates the header from the raster
        let start = pos + 1;
        let end = start + width * height;
        if end > bytes.len() {
            return Err(invalid!("PGM raster is truncated"));
        }
        GrayImage::new(width, height, bytes[start..end].to_vec())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
        GrayImage::from_pgm(&fs::read(path)?)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(Error::from)
    }
}

/// BT.601 luma of an 8-bit RGB triple, rounded to the nearest integer.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().clamp(0.0, 255.0) as u8
}

/// Loads any supported raster format and converts it to BT.601 luminance.
/// PGM files are read directly.
pub fn load_luminance(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P5") {
        return GrayImage::from_pgm(&bytes);
    }
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| invalid!("cannot decode {}: {e}", path.display()))?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let data = decoded.pixels().map(|p| luminance(p[0], p[1], p[2])).collect();
    GrayImage::new(w as usize, h as usize, data)
}

/// Mean squared error between two equally sized pixel slices.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

pub const PSNR_CAP_DB: f64 = 100.0;

/// `10·log10(255² / MSE)`, capped at 100 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    psnr_from_mse(mse(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = GrayImage::from_fn(5, 3, |r, c| (r * 10 + c) as u8);
        let bytes = img.to_pgm();
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap(), img);
        let mut commented = b"P5\n# made by hand\n5 3\n255\n".to_vec();
        commented.extend_from_slice(img.data());
        assert_eq!(GrayImage::from_pgm(&commented).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_other_formats() {
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::from_pgm(b"P5\n2 2\n65535\n").is_err());
        assert!(GrayImage::from_pgm(b"P5\n4 4\n255\n\x00\x01").is_err());
    }

    #[test]
    fn luminance_values() {
        assert_eq!(luminance(100, 100, 100), 100);
        assert_eq!(luminance(255, 0, 0), 76);
        assert_eq!(luminance(255, 255, 255), 255);
    }

    #[test]
    fn rotations_compose() {
        let img = GrayImage::from_fn(4, 3, |r, c| (r * 4 + c) as u8);
        assert_eq!(img.rotate(0), img);
        assert_eq!(img.rotate(2).rotate(2), img);
        assert_eq!(img.rotate(1).rotate(3), img);
        assert_eq!(img.rotate(1).width(), 3);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    #[test]
    fn psnr_values() {
        assert_eq!(psnr(&[1.0, 2.0], &[1.0, 2.0]), 100.0);
        let p = psnr(&[1.0; 16], &[2.0; 16]);
        assert!((p - 48.130_803_608_679_11).abs() < 1e-9);
    }
}

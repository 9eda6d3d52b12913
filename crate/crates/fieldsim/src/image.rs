//! RGB images in [0,1] and binary PPM (P6) I/O.

use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples, length = width * height * 3.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; (width * height * 3) as usize],
        }
    }

    #[inline]
    pub fn pixel(&self, u: u32, v: u32) -> [f32; 3] {
        let i = ((v * self.width + u) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, u: u32, v: u32, rgb: [f32; 3]) {
        let i = ((v * self.width + u) * 3) as usize;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    /// Mean of the per-pixel Rec.601 luma.
    pub fn mean_luminance(&self) -> f64 {
        let mut sum = 0.0f64;
        for px in self.data.chunks_exact(3) {
            sum += 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
        }
        sum / (self.width as f64 * self.height as f64)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Snaps every channel onto the 8-bit grid, so that values survive a PPM
    /// round trip unchanged.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    /// 2x2 average-pool downsample; dimensions must be even.
    pub fn downsample2(&self) -> Image {
        debug_assert!(self.width % 2 == 0 && self.height % 2 == 0);
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Image::new(w, h);
        for v in 0..h {
            for u in 0..w {
                let mut acc = [0.0f32; 3];
                for (dv, du) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let p = self.pixel(u * 2 + du, v * 2 + dv);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
                out.set_pixel(u, v, [acc[0] * 0.25, acc[1] * 0.25, acc[2] * 0.25]);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.to_rgb8())?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let mut reader = std::io::BufReader::new(std::fs::File::open(path)?);
        // P6, width height, maxval; tokens may be separated by any whitespace.
        let mut tokens: Vec<String> = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::InvalidConfig(format!(
                    "truncated PPM header in {}",
                    path.display()
                )));
            }
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(|s| s.to_string()));
        }
        if tokens[0] != "P6" {
            return Err(Error::InvalidConfig(format!(
                "{} is not a binary PPM",
                path.display()
            )));
        }
        let width: u32 = tokens[1]
            .parse()
            .map_err(|_| Error::InvalidConfig("bad PPM width".into()))?;
        let height: u32 = tokens[2]
            .parse()
            .map_err(|_| Error::InvalidConfig("bad PPM height".into()))?;
        let maxval: u32 = tokens[3]
            .parse()
            .map_err(|_| Error::InvalidConfig("bad PPM maxval".into()))?;
        if maxval != 255 {
            return Err(Error::InvalidConfig("only maxval 255 supported".into()));
        }
        let mut bytes = vec![0u8; (width * height * 3) as usize];
        std::io::Read::read_exact(&mut reader, &mut bytes)?;
        Ok(Image {
            width,
            height,
            data: bytes.iter().map(|b| *b as f32 / 255.0).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_is_lossless_after_quantize() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(7, 5);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 256) as f32 / 255.0;
        }
        img.quantize();
        let path = dir.path().join("t.ppm");
        img.write_ppm(&path).unwrap();
        let back = Image::read_ppm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn downsample_averages() {
        let mut img = Image::new(2, 2);
        img.set_pixel(0, 0, [1.0, 0.0, 0.0]);
        img.set_pixel(1, 0, [0.0, 1.0, 0.0]);
        img.set_pixel(0, 1, [0.0, 0.0, 1.0]);
        img.set_pixel(1, 1, [1.0, 1.0, 1.0]);
        let d = img.downsample2();
        assert_eq!(d.pixel(0, 0), [0.5, 0.5, 0.5]);
    }
}

//! Row-major grayscale and boolean rasters plus 8-bit binary PGM I/O.
//!
//! Row `r`, column `c` covers the workspace square whose centre is at
//! `((c + 0.5) / ppm, (r + 0.5) / ppm)` millimetres, so rows grow with `y`.

use std::io::{self, BufRead, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length mismatch");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    /// Value at signed coordinates, `fill` outside the raster.
    #[inline]
    pub fn get_or(&self, row: i64, col: i64, fill: f32) -> f32 {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            fill
        } else {
            self.data[row as usize * self.width + col as usize]
        }
    }

    /// Bilinear sample at continuous pixel coordinates where integer
    /// coordinates are pixel centres. Taps outside the raster read `fill`.
    pub fn bilinear(&self, row: f64, col: f64, fill: f32) -> f64 {
        let r0 = row.floor();
        let c0 = col.floor();
        let fr = row - r0;
        let fc = col - c0;
        let (r0, c0) = (r0 as i64, c0 as i64);
        let v00 = self.get_or(r0, c0, fill) as f64;
        let v01 = self.get_or(r0, c0 + 1, fill) as f64;
        let v10 = self.get_or(r0 + 1, c0, fill) as f64;
        let v11 = self.get_or(r0 + 1, c0 + 1, fill) as f64;
        let top = v00 + (v01 - v00) * fc;
        let bottom = v10 + (v11 - v10) * fc;
        top + (bottom - top) * fr
    }

    /// Write as binary PGM (P5), values clamped to [0,1] and scaled to 255.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)
    }

    pub fn read_pgm<R: BufRead>(mut r: R) -> io::Result<Raster> {
        let mut header = Vec::new();
        // magic, width, height, maxval: four whitespace-separated tokens
        let mut tokens: Vec<String> = Vec::new();
        while tokens.len() < 4 {
            header.clear();
            let n = r.read_until(b'\n', &mut header)?;
            if n == 0 {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated PGM header"));
            }
            let line = String::from_utf8_lossy(&header);
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P5" || tokens[3] != "255" {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "expected 8-bit P5 PGM"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "bad PGM dimension"))
        };
        let (width, height) = (parse(&tokens[1])?, parse(&tokens[2])?);
        let mut bytes = vec![0u8; width * height];
        r.read_exact(&mut bytes)?;
        Ok(Raster::from_vec(
            width,
            height,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn to_raster(&self) -> Raster {
        Raster::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_lossless_on_8bit_values() {
        let data: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
        let r = Raster::from_vec(4, 3, data);
        let mut buf = Vec::new();
        r.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n4 3\n255\n"));
        let back = Raster::read_pgm(&buf[..]).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn bilinear_hits_pixel_centres_exactly() {
        let r = Raster::from_vec(2, 2, vec![0.0, 1.0, 0.5, 0.25]);
        assert_eq!(r.bilinear(0.0, 1.0, 0.0), 1.0);
        assert_eq!(r.bilinear(1.0, 0.0, 0.0), 0.5);
        assert!((r.bilinear(0.0, 0.5, 0.0) - 0.5).abs() < 1e-12);
        assert_eq!(r.bilinear(-3.0, -3.0, 0.7), 0.699999988079071);
    }
}

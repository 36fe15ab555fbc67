//! 8-bit RGB images and binary PPM (P6) reading/writing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "image {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage {
            width,
            height,
            data,
        }
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

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at a real-valued position, edge-clamped, per channel
    /// in [0,1].
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let cx = x.clamp(0.0, (self.width - 1) as f64);
        let cy = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = cx.floor() as usize;
        let y0 = cy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = cx - x0 as f64;
        let fy = cy - y0 as f64;
        let mut out = [0.0; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let p00 = self.data[(y0 * self.width + x0) * 3 + c] as f64;
            let p01 = self.data[(y0 * self.width + x1) * 3 + c] as f64;
            let p10 = self.data[(y1 * self.width + x0) * 3 + c] as f64;
            let p11 = self.data[(y1 * self.width + x1) * 3 + c] as f64;
            let top = p00 * (1.0 - fx) + p01 * fx;
            let bot = p10 * (1.0 - fx) + p11 * fx;
            *slot = (top * (1.0 - fy) + bot * fy) / 255.0;
        }
        out
    }
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", img.width(), img.height()).map_err(|e| Error::io(path, e))?;
    w.write_all(img.data()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    let mut pos = 0usize;
    let fail = |message: String, offset: usize| Error::Format {
        path: path.to_path_buf(),
        message,
        offset: offset as u64,
    };
    let token = |pos: &mut usize| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(fail("truncated header".into(), start));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = token(&mut pos)?;
    if magic != "P6" {
        return Err(fail(format!("bad magic {magic:?}, expected P6"), 0));
    }
    let width: usize = token(&mut pos)?
        .parse()
        .map_err(|_| fail("bad width".into(), pos))?;
    let height: usize = token(&mut pos)?
        .parse()
        .map_err(|_| fail("bad height".into(), pos))?;
    let maxval: usize = token(&mut pos)?
        .parse()
        .map_err(|_| fail("bad maxval".into(), pos))?;
    if maxval != 255 {
        return Err(fail(format!("unsupported maxval {maxval}"), pos));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(fail(
            format!("truncated pixel data: need {need} bytes"),
            bytes.len(),
        ));
    }
    RgbImage::new(width, height, bytes[pos..pos + need].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let data: Vec<u8> = (0..4 * 2 * 3).map(|i| (i * 17 % 256) as u8).collect();
        let img = RgbImage::new(4, 2, data).unwrap();
        write_ppm(&path, &img).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), img);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut bytes = b"P6\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        std::fs::write(&path, bytes).unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!(img.get(1, 0), [4, 5, 6]);
    }
}

//! RGB8 images, binary masks and their PPM (P6) / PGM (P5) encodings.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::mismatch("RGB buffer", width * height * 3, data.len()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let (w, h, body) = parse_pnm(bytes, b"P6", "PPM")?;
        let need = w * h * 3;
        if body.len() < need {
            return Err(Error::Truncated("PPM"));
        }
        Self::from_raw(w, h, body[..need].to_vec())
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_ppm(&std::fs::read(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Row-major bitmap, MSB first within each byte.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            out[i / 8] |= 0x80 >> (i % 8);
        }
        out
    }

    pub fn unpack(width: usize, height: usize, packed: &[u8]) -> Result<Self> {
        let n = width * height;
        if packed.len() != n.div_ceil(8) {
            return Err(Error::mismatch("packed mask", n.div_ceil(8), packed.len()));
        }
        let bits = (0..n).map(|i| packed[i / 8] & (0x80 >> (i % 8)) != 0).collect();
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut out = Self::empty(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.bits[y * self.width + x] = self.get(self.width - 1 - x, y);
            }
        }
        out
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }

    /// Any non-zero gray value counts as inside.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let (w, h, body) = parse_pnm(bytes, b"P5", "PGM")?;
        if body.len() < w * h {
            return Err(Error::Truncated("PGM"));
        }
        Ok(Self {
            width: w,
            height: h,
            bits: body[..w * h].iter().map(|&v| v != 0).collect(),
        })
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pgm(&std::fs::read(path)?)
    }
}

/// Parses a binary netpbm header with maxval 255; returns (width, height, raster bytes).
fn parse_pnm<'a>(
    bytes: &'a [u8],
    magic: &[u8; 2],
    format: &'static str,
) -> Result<(usize, usize, &'a [u8])> {
    let malformed = |reason: &str| Error::Malformed {
        format,
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(malformed("bad magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Truncated(format)),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a number in the header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| malformed("header number out of range"))?;
    }
    if fields[2] != 255 {
        return Err(malformed("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Truncated(format));
    }
    Ok((fields[0], fields[1], &bytes[pos + 1..]))
}

//! Binary greyscale PGM (`P5`) with 8- or 16-bit samples.
//!
//! 16-bit samples are stored most significant byte first, as netpbm defines.

use std::fs;
use std::path::Path;

use super::{Mask, RasterImage};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Pgm {
    /// Quantizes a `[0, 1]` raster to `maxval` levels.
    pub fn from_raster(raster: &RasterImage, maxval: u16) -> Result<Self> {
        check_maxval(maxval)?;
        let m = maxval as f64;
        let samples = raster
            .data()
            .iter()
            .map(|&v| {
                if (0.0..=1.0).contains(&v) {
                    Ok((v * m).round() as u16)
                } else {
                    Err(Error::EncodingRange { position: 0, value: v })
                }
            })
            .collect::<Result<_>>()?;
        Ok(Pgm { width: raster.width(), height: raster.height(), maxval, samples })
    }

    /// Masks use `{0, maxval}` only.
    pub fn from_mask(mask: &Mask, maxval: u16) -> Result<Self> {
        check_maxval(maxval)?;
        Ok(Pgm {
            width: mask.width(),
            height: mask.height(),
            maxval,
            samples: mask.data().iter().map(|&v| v as u16 * maxval).collect(),
        })
    }

    /// Samples scaled by `1 / maxval`.
    pub fn to_raster(&self) -> Result<RasterImage> {
        let m = self.maxval as f64;
        RasterImage::new(self.height, self.width, self.samples.iter().map(|&s| s as f64 / m).collect())
    }

    pub fn to_mask(&self) -> Result<Mask> {
        let data = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, &s)| match s {
                0 => Ok(0),
                s if s == self.maxval => Ok(1),
                s => Err(Error::Data(format!("mask sample {s} at pixel {i} is neither 0 nor maxval {}", self.maxval))),
            })
            .collect::<Result<_>>()?;
        Mask::new(self.height, self.width, data)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        check_maxval(self.maxval)?;
        if self.samples.len() != self.width * self.height {
            return Err(Error::Shape("sample count does not match dims".into()));
        }
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.samples.iter().map(|&s| s as u8));
        } else {
            self.samples.iter().for_each(|s| out.extend_from_slice(&s.to_be_bytes()));
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(Error::Format { offset: 0, message: "expected binary PGM magic `P5`".into() });
        }
        let mut pos = 2;
        let mut header = [0usize; 3];
        for value in header.iter_mut() {
            // Whitespace and comments between fields.
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format { offset: pos, message: "expected a decimal header field".into() });
            }
            *value = std::str::from_utf8(&bytes[start..pos])
                .unwrap()
                .parse()
                .map_err(|_| Error::Format { offset: start, message: "header field too large".into() })?;
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Format { offset: pos, message: "expected whitespace after maxval".into() });
        }
        pos += 1;
        let [width, height, maxval] = header;
        if width == 0 || height == 0 {
            return Err(Error::Format { offset: 2, message: "zero image dimension".into() });
        }
        if !(1..=65535).contains(&maxval) {
            return Err(Error::Format { offset: pos - 1, message: format!("maxval {maxval} outside 1..=65535") });
        }
        let wide = maxval > 255;
        let n = width * height;
        let expected = n * if wide { 2 } else { 1 };
        let payload = &bytes[pos..];
        if payload.len() < expected {
            return Err(Error::Length { expected, found: payload.len() });
        }
        let samples: Vec<u16> = if wide {
            payload[..expected].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            payload[..expected].iter().map(|&b| b as u16).collect()
        };
        if let Some(i) = samples.iter().position(|&s| s as usize > maxval) {
            return Err(Error::Format { offset: pos + i, message: "sample exceeds maxval".into() });
        }
        Ok(Pgm { width, height, maxval: maxval as u16, samples })
    }
}

fn check_maxval(maxval: u16) -> Result<()> {
    if maxval == 0 {
        return Err(Error::Config("PGM maxval must be >= 1".into()));
    }
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Pgm::decode(&bytes)
}

pub fn write_pgm(path: &Path, pgm: &Pgm) -> Result<()> {
    let bytes = pgm.encode()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_mask() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 255, 0]);
        let mask = Pgm::decode(&bytes).unwrap().to_mask().unwrap();
        assert_eq!(mask.data(), &[0, 1, 1, 0]);
    }

    #[test]
    fn non_binary_mask_rejected() {
        let mut bytes = b"P5 2 1 255\n".to_vec();
        bytes.extend_from_slice(&[0, 7]);
        assert!(matches!(Pgm::decode(&bytes).unwrap().to_mask(), Err(Error::Data(_))));
    }

    #[test]
    fn header_comments_and_sixteen_bit() {
        let mut bytes = b"P5\n# made by hand\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x80, 0x00]);
        let pgm = Pgm::decode(&bytes).unwrap();
        assert_eq!(pgm.samples, vec![65535, 32768]);
        assert_eq!(pgm.encode().unwrap()[..], [b"P5\n2 1\n65535\n".as_slice(), &[0xff, 0xff, 0x80, 0x00]].concat()[..]);
    }

    #[test]
    fn errors() {
        assert!(matches!(Pgm::decode(b"P2\n1 1\n255\n0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(Pgm::decode(b"P5\n2 2\n255\n\x00\x01"), Err(Error::Length { .. })));
        assert!(matches!(Pgm::decode(b"P5\n1 1\n70000\n\x00"), Err(Error::Format { .. })));
    }

    #[test]
    fn raster_and_mask_round_trips() {
        let raster = RasterImage::new(2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        for maxval in [255u16, 65535] {
            let pgm = Pgm::from_raster(&raster, maxval).unwrap();
            let back = Pgm::decode(&pgm.encode().unwrap()).unwrap();
            assert_eq!(back, pgm);
            let r = back.to_raster().unwrap();
            for (a, b) in r.data().iter().zip(raster.data()) {
                assert!((a - b).abs() <= 0.5 / maxval as f64 + 1e-12);
            }
        }
        let mask = Mask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let pgm = Pgm::from_mask(&mask, 65535).unwrap();
        assert_eq!(Pgm::decode(&pgm.encode().unwrap()).unwrap().to_mask().unwrap(), mask);
    }
}

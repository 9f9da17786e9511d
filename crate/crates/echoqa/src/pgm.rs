//! Binary PGM (P5) reading and writing for 8-bit grayscale frames.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Quantizes a `[h, w]` tensor of intensities in `[0, 1]` (values are
    /// clamped, then rounded to the nearest of 255 levels).
    pub fn from_tensor(frame: &Tensor<f32>) -> Result<Self> {
        if frame.rank() != 2 {
            return Err(Error::Shape(format!(
                "expected [h, w] frame, got {:?}",
                frame.shape()
            )));
        }
        let pixels = frame
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(Self {
            width: frame.shape()[1],
            height: frame.shape()[0],
            pixels,
        })
    }

    /// Normalizes to a `[h, w]` tensor with intensities in `[0, 1]`
    /// (divides by 255 exactly once).
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Tensor::from_vec(&[self.height, self.width], data).expect("consistent size")
    }
}

/// Writes a binary PGM (P5) file with maxval 255.
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)?;
    out.write_all(&image.pixels)?;
    out.flush()?;
    Ok(())
}

/// Reads a binary PGM (P5) file. Accepts `#` comments and arbitrary
/// whitespace in the header; maxval must be at most 255.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_pgm(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err("missing P5 magic".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| "bad header")?;
        *field = text.parse::<usize>().map_err(|_| "bad header number")?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator before pixel data".into());
    }
    pos += 1;
    let expected = width * height;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(format!(
            "expected {expected} pixels, file holds {}",
            data.len()
        ));
    }
    GrayImage::new(width, height, data[..expected].to_vec()).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRng::new(1);
        let pixels: Vec<u8> = (0..24 * 17).map(|_| rng.next_below(256) as u8).collect();
        let img = GrayImage::new(24, 17, pixels).unwrap();
        let path = dir.path().join("a.pgm");
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, img);
        let path2 = dir.path().join("b.pgm");
        write_pgm(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn header_comments_are_skipped() {
        let body: Vec<u8> = b"P5\n# a comment\n2 2\n# another\n255\n"
            .iter()
            .chain(&[1u8, 2, 3, 4])
            .cloned()
            .collect();
        let img = parse_pgm(&body).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixels, vec![1, 2, 3, 4]);
    }

    #[test]
    fn truncated_file_rejected() {
        assert!(parse_pgm(b"P5\n4 4\n255\nxy").is_err());
        assert!(parse_pgm(b"P6\n1 1\n255\n ").is_err());
    }

    #[test]
    fn tensor_quantization_round_trip() {
        let t = Tensor::from_vec(&[2, 2], vec![0.0f32, 0.5, 1.0, 2.0]).unwrap();
        let img = GrayImage::from_tensor(&t).unwrap();
        assert_eq!(img.pixels, vec![0, 128, 255, 255]);
        let back = img.to_tensor();
        assert_eq!(back.data()[0], 0.0);
        assert_eq!(back.data()[2], 1.0);
    }
}

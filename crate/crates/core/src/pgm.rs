//! Binary PGM (P5) with maxval 255.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::SpatialImage;

const FORMAT: &str = "PGM";

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
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
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(FORMAT, "malformed header"))
}

/// Decodes a square P5 image with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<SpatialImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(FORMAT, "not a binary PGM (P5)"));
    }
    let mut pos = 2;
    let width = next_token(bytes, &mut pos)?;
    let height = next_token(bytes, &mut pos)?;
    let maxval = next_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::format(FORMAT, format!("maxval {maxval} unsupported")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(FORMAT, "missing separator before raster"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() < width * height {
        return Err(Error::format(FORMAT, "truncated raster"));
    }
    if width != height {
        return Err(Error::NonSquare {
            rows: height,
            cols: width,
        });
    }
    let pixels = Array2::from_shape_fn((height, width), |(r, c)| raster[r * width + c] as f64);
    SpatialImage::new(pixels)
}

/// Encodes an image as P5, rounding to the nearest integer level.
pub fn encode_pgm(image: &SpatialImage) -> Vec<u8> {
    let m = image.m();
    let mut out = format!("P5\n{m} {m}\n255\n").into_bytes();
    out.extend(image.pixels().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    out
}

pub fn read_pgm(path: &Path) -> Result<SpatialImage> {
    let mut bytes = Vec::new();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    BufReader::new(file).read_to_end(&mut bytes)?;
    decode_pgm(&bytes)
}

pub fn write_pgm(path: &Path, image: &SpatialImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io_at(path, e))?);
    w.write_all(&encode_pgm(image))?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = SpatialImage::new(Array2::from_shape_fn((5, 5), |(r, c)| (r * 50 + c) as f64)).unwrap();
        let bytes = encode_pgm(&img);
        assert!(bytes.starts_with(b"P5\n5 5\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P5\n# made by hand\n2 2\n# depth\n255\n".to_vec();
        bytes.extend([0u8, 10, 20, 255]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels()[[1, 1]], 255.0);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(decode_pgm(b"P2\n2 2\n255\n0 0 0 0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n65535\n").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(matches!(
            decode_pgm(b"P5\n2 1\n255\n\x00\x00"),
            Err(Error::NonSquare { .. })
        ));
    }

    #[test]
    fn bundled_images_load() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/benchmark");
        for name in ["lena.pgm", "cameraman.pgm"] {
            let img = read_pgm(&root.join(name)).unwrap();
            assert_eq!(img.m(), 128);
        }
    }
}

//! Binary PGM (`P5`) masks and images, plus a binary PPM (`P6`) writer for
//! visualisations.

use super::pfm::HeaderReader;
use crate::error::{Error, Result};
use std::path::Path;

/// Decoded PGM: 8-bit when `maxval < 256`, otherwise 16-bit big-endian.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let mut r = HeaderReader::new(bytes, path);
    let (at, magic) = r.token()?;
    if magic != "P5" {
        return Err(r.err(at, format!("expected magic \"P5\", found {magic:?}")));
    }
    let width: usize = r.number("width")?;
    let height: usize = r.number("height")?;
    let maxval: u32 = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(r.err(r.pos(), "width and height must be positive"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(r.err(r.pos(), format!("maxval {maxval} outside 1..=65535")));
    }
    let start = r.end_header()?;
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(r.err(
            bytes.len(),
            format!(
                "payload truncated: need {need} bytes, found {}",
                payload.len()
            ),
        ));
    }
    let data = if wide {
        payload[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        payload[..need].iter().map(|&b| u16::from(b)).collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        data,
    })
}

pub fn encode_pgm(img: &Pgm) -> Result<Vec<u8>> {
    if img.data.len() != img.width * img.height || img.maxval == 0 {
        return Err(Error::shape(
            "write_pgm",
            "pixel count does not match dimensions",
        ));
    }
    if let Some(v) = img.data.iter().find(|&&v| v > img.maxval) {
        return Err(Error::InvalidArgument(format!(
            "pixel value {v} exceeds maxval {}",
            img.maxval
        )));
    }
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for v in &img.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(img.data.iter().map(|&v| v as u8));
    }
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Pgm) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)?).map_err(|e| Error::io(path, e))
}

/// 8-bit RGB, `rgb.len() == 3 * width * height`.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != 3 * width * height {
        return Err(Error::shape(
            "write_ppm",
            "pixel count does not match dimensions",
        ));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    Ok(out)
}

pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(width, height, rgb)?).map_err(|e| Error::io(path, e))
}

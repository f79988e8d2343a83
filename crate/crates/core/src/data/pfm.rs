//! Single-channel PFM (`Pf`) disparity maps.
//!
//! The header is `Pf`, the width and height, then a scale whose sign gives
//! the byte order (negative = little-endian). Rows are stored bottom-up.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

/// Reads whitespace-separated header tokens, tracking the byte offset.
pub(crate) struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> HeaderReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &Path) -> Self {
        HeaderReader {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub(crate) fn err(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    /// Skips whitespace and `#` comments, then returns the next token.
    pub(crate) fn token(&mut self) -> Result<(usize, &'a str)> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(self.err(self.pos, "unexpected end of header")),
            }
        }
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| self.err(start, "non-ASCII header token"))?;
        Ok((start, tok))
    }

    pub(crate) fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (at, tok) = self.token()?;
        tok.parse()
            .map_err(|_| self.err(at, format!("invalid {what} {tok:?}")))
    }

    /// Consumes the single whitespace byte that ends the header.
    pub(crate) fn end_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(self.err(self.pos, "header must end with a whitespace byte")),
        }
    }
}

/// Decodes a PFM byte stream into an `[H, W]` tensor (top row first).
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut r = HeaderReader::new(bytes, path);
    let (at, magic) = r.token()?;
    if magic != "Pf" {
        return Err(r.err(at, format!("expected magic \"Pf\", found {magic:?}")));
    }
    let width: usize = r.number("width")?;
    let height: usize = r.number("height")?;
    if width == 0 || height == 0 {
        return Err(r.err(r.pos(), "width and height must be positive"));
    }
    let scale: f64 = r.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(r.err(r.pos(), "scale must be finite and non-zero"));
    }
    let little = scale < 0.0;
    let start = r.end_header()?;
    let need = width * height * 4;
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
    let mut data = vec![0.0; width * height];
    for (i, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row, col) = (i / width, i % width);
        data[(height - 1 - row) * width + col] = f64::from(v);
    }
    Tensor::new(&[height, width], data)
}

/// Encodes an `[H, W]` map as little-endian PFM (values rounded to `f32`).
pub fn encode_pfm(map: &Tensor) -> Result<Vec<u8>> {
    if map.rank() != 2 {
        return Err(Error::shape(
            "write_pfm",
            format!("expected [H, W], got {:?}", map.shape()),
        ));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for row in (0..h).rev() {
        for &v in &map.data()[row * w..(row + 1) * w] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

pub fn write_pfm(path: impl AsRef<Path>, map: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(map)?).map_err(|e| Error::io(path, e))
}

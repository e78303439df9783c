//! Binary PGM (`P5`, maxval 255).

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

fn format_err(pos: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        what: "PGM",
        pos,
        msg: msg.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, format!("expected {field}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(start, format!("{field} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err(0, "missing P5 magic"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_pos = h.pos;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(format_err(maxval_pos, format!("maxval {maxval} unsupported, need 255")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(format_err(h.pos, "expected whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(format_err(2, format!("empty image {width}×{height}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| format_err(2, "image dimensions overflow"))?;
    let payload = &bytes[h.pos..];
    if payload.len() < n {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: {} of {n} bytes", payload.len()),
        ));
    }
    Image::new(width, height, payload[..n].to_vec())
}

pub fn encode(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(image)).map_err(|e| Error::io(path, e))
}

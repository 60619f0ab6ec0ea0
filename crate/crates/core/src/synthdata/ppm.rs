use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `[-1, 1]` to `[0, 255]`, rounding half up.
pub fn to_byte(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn from_byte(b: u8) -> f32 {
    (b as f64 / 127.5 - 1.0) as f32
}

/// Binary PPM (`P6`, maxval 255) bytes of a `[3, H, W]` image.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [3, h, w] = image.shape()[..] else {
        return Err(Error::Shape(format!(
            "PPM needs a [3, H, W] image, got {:?}",
            image.shape()
        )));
    };
    let d = image.data();
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(to_byte(d[c * plane + i]));
        }
    }
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn err(&self, message: String) -> Error {
        Error::Format {
            offset: self.pos,
            message,
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Format {
                offset: start,
                message: format!("invalid {what}"),
            })
    }
}

/// Parses binary PPM bytes into a `[3, H, W]` image in `[-1, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut hd = Header { bytes, pos: 0 };
    if bytes.get(..2) != Some(b"P6") {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(hd.err(format!("expected magic \"P6\", found {found:?}")));
    }
    hd.pos = 2;
    let w = hd.number("width")?;
    let h = hd.number("height")?;
    let maxval = hd.number("maxval")?;
    if maxval != 255 {
        return Err(hd.err(format!("only maxval 255 is supported, got {maxval}")));
    }
    match bytes.get(hd.pos) {
        Some(c) if c.is_ascii_whitespace() => hd.pos += 1,
        _ => return Err(hd.err("expected a single whitespace byte before pixel data".into())),
    }
    let plane = h * w;
    let payload = &bytes[hd.pos..];
    if payload.len() < 3 * plane {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "truncated payload: {} of {} bytes",
                payload.len(),
                3 * plane
            ),
        });
    }
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = from_byte(payload[3 * i + c]);
        }
    }
    Tensor::new([3, h, w], data)
}

pub fn write_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

//! Binary 8-bit PPM (`P6`) and PGM (`P5`) images.
//!
//! Values in `[0, 1]` are stored as `round(255·v)`; reading returns
//! `k / maxval`, so an image whose values are multiples of 1/255 survives a
//! write-read cycle bit for bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Masks read from PGM count a pixel as object when its byte is at least this.
pub const MASK_THRESHOLD: u8 = 128;

fn to_byte<T: Real>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode<T: Real>(image: &Tensor<T>) -> Vec<u8> {
    let s = image.shape();
    let (h, w) = (s[0], s[1]);
    let channels = if s.len() == 3 { s[2] } else { 1 };
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    out
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    body: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err("not a binary PPM/PGM (expected P6 or P5)".into()),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("truncated or malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("header number out of range")?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after header".into());
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero image extent".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("maxval {maxval} is not an 8-bit depth"));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval,
        body: pos + 1,
    })
}

/// Decodes to `H×W×C`, `C` being 3 for `P6` and 1 for `P5`.
pub fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let h = parse_header(bytes).map_err(|m| Error::format(path, m))?;
    let n = h.width * h.height * h.channels;
    let body = &bytes[h.body..];
    if body.len() < n {
        return Err(Error::format(
            path,
            format!("expected {n} pixel bytes, found {}", body.len()),
        ));
    }
    let scale = h.maxval as f64;
    Tensor::new(
        &[h.height, h.width, h.channels],
        body[..n].iter().map(|&b| T::lit(b as f64 / scale)).collect(),
    )
}

pub fn write<T: Real>(path: &Path, image: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(image)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn read_channels<T: Real>(path: &Path, channels: usize) -> Result<Tensor<T>> {
    let t: Tensor<T> = read(path)?;
    if t.shape()[2] != channels {
        return Err(Error::format(
            path,
            format!("expected {channels} channel(s), found {}", t.shape()[2]),
        ));
    }
    Ok(t)
}

pub fn read_rgb<T: Real>(path: &Path) -> Result<Tensor<T>> {
    read_channels(path, 3)
}

pub fn read_gray<T: Real>(path: &Path) -> Result<Tensor<T>> {
    read_channels(path, 1)
}

/// Reads a PGM as an `H×W` binary mask.
pub fn read_mask<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let g: Tensor<T> = read_gray(path)?;
    let cut = MASK_THRESHOLD as f64 / 255.0;
    let (h, w) = (g.shape()[0], g.shape()[1]);
    Tensor::new(
        &[h, w],
        g.data()
            .iter()
            .map(|v| if v.as_f64() >= cut { T::one() } else { T::zero() })
            .collect(),
    )
}

//! Binary PPM (P6, maxval 255) and the LUMF1 raw-float format.
//!
//! LUMF1 layout: the magic `LUMF1\n`, an ASCII line `H W C\n`, then
//! `H·W·C` little-endian `f32` values in the same interleaved order as
//! [`Image`]. PPM files are written in canonical form (`P6\n<w> <h>\n255\n`).

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub const LUMF_MAGIC: &[u8] = b"LUMF1\n";

/// Reads a P6 or LUMF1 file, choosing the decoder by magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.starts_with(LUMF_MAGIC) {
        decode_lumf(&bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else {
        Err(Error::format(0, "unrecognised magic (expected P6 or LUMF1)"))
    }
}

/// Writes `.ppm`/`.pnm` as clamped 8-bit P6 and `.lumf` as raw floats.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let bytes = match ext.as_deref() {
        Some("ppm") | Some("pnm") => encode_ppm(img)?,
        Some("lumf") => encode_lumf(img),
        _ => {
            return Err(Error::invalid(format!(
                "cannot infer image format from {}; use .ppm or .lumf",
                path.display()
            )))
        }
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    img.ensure_channels(3, "PPM encoding")?;
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(img.len());
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    if !bytes.starts_with(b"P6") {
        return Err(Error::format(0, "missing P6 magic"));
    }
    cur.pos = 2;
    let (width, _) = cur.next_number("width")?;
    let (height, _) = cur.next_number("height")?;
    let (maxval, maxval_at) = cur.next_number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            maxval_at,
            format!("unsupported maxval {maxval} (only 255)"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::format(cur.pos, "expected whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(Error::format(2, format!("zero image dimension {width}x{height}")));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::format(2, "image dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: expected {need} bytes, found {}", payload.len()),
        ));
    }
    let data = payload[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, 3, data)
}

pub fn encode_lumf(img: &Image) -> Vec<u8> {
    let mut out = LUMF_MAGIC.to_vec();
    out.extend_from_slice(
        format!("{} {} {}\n", img.height(), img.width(), img.channels()).as_bytes(),
    );
    out.reserve(img.len() * 4);
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_lumf(bytes: &[u8]) -> Result<Image> {
    if !bytes.starts_with(LUMF_MAGIC) {
        return Err(Error::format(0, "missing LUMF1 magic"));
    }
    let start = LUMF_MAGIC.len();
    let nl = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(start, "unterminated shape line"))?;
    let line = std::str::from_utf8(&bytes[start..start + nl])
        .map_err(|_| Error::format(start, "shape line is not ASCII"))?;
    let dims: Vec<usize> = line
        .split_ascii_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(start, format!("bad shape line {line:?}")))?;
    let [h, w, c] = dims[..] else {
        return Err(Error::format(start, format!("expected `H W C`, got {line:?}")));
    };
    if h == 0 || w == 0 || !(c == 1 || c == 3) {
        return Err(Error::format(start, format!("invalid shape {h}x{w}x{c}")));
    }
    let body = start + nl + 1;
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::format(start, "shape overflows"))?;
    let payload = &bytes[body..];
    if payload.len() < count * 4 {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: expected {} bytes, found {}", count * 4, payload.len()),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload[..count * 4].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(body + 4 * i, "non-finite sample"));
        }
        data.push(v as f64);
    }
    Image::new(h, w, c, data)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// Returns the parsed value and the offset of its first digit.
    fn next_number(&mut self, field: &str) -> Result<(usize, usize)> {
        let before = self.pos;
        self.skip_space_and_comments();
        if self.pos == before {
            return Err(Error::format(self.pos, format!("expected whitespace before {field}")));
        }
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or_else(|| Error::format(start, format!("{field} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            let msg = if self.pos >= self.bytes.len() {
                format!("header truncated before {field}")
            } else {
                format!("expected digits for {field}")
            };
            return Err(Error::format(start, msg));
        }
        Ok((value, start))
    }
}

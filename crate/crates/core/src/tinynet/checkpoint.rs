//! Checkpoint format.
//!
//! ```text
//! LUMNET1\n
//! residual <0|1> layers <L>\n
//! <in_ch> <out_ch> <k>\n        (one line per layer)
//! payload: per layer, weights then biases, little-endian f32
//! 8-byte little-endian FNV-1a 64 checksum of the payload
//! ```

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use super::{ConvLayer, TinyNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"LUMNET1\n";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn encode_checkpoint(net: &TinyNet) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(
        format!("residual {} layers {}\n", net.residual as u8, net.layers.len()).as_bytes(),
    );
    for l in &net.layers {
        out.extend_from_slice(format!("{} {} {}\n", l.in_ch, l.out_ch, l.k).as_bytes());
    }
    let mut payload = Vec::with_capacity(net.param_count() * 4);
    for l in &net.layers {
        for &v in l.weight.iter().chain(&l.bias) {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let sum = fnv1a(&payload);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt(format!("unterminated header line at byte {pos}")))?;
    let line = std::str::from_utf8(&rest[..nl])
        .map_err(|_| corrupt(format!("non-ASCII header at byte {pos}")))?;
    *pos += nl + 1;
    Ok(line)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TinyNet> {
    if !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(corrupt("missing LUMNET1 magic"));
    }
    let mut pos = CHECKPOINT_MAGIC.len();
    let first = read_line(bytes, &mut pos)?;
    let fields: Vec<&str> = first.split_ascii_whitespace().collect();
    let (residual, count) = match fields[..] {
        ["residual", r, "layers", n] => {
            let residual = match r {
                "0" => false,
                "1" => true,
                _ => return Err(corrupt(format!("bad residual flag {r:?}"))),
            };
            let count: usize = n
                .parse()
                .map_err(|_| corrupt(format!("bad layer count {n:?}")))?;
            (residual, count)
        }
        _ => return Err(corrupt(format!("bad header line {first:?}"))),
    };
    if count == 0 || count > 1024 {
        return Err(corrupt(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let line = read_line(bytes, &mut pos)?;
        let dims: Vec<usize> = line
            .split_ascii_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| corrupt(format!("bad layer line {line:?}")))?;
        let [i, o, k] = dims[..] else {
            return Err(corrupt(format!("bad layer line {line:?}")));
        };
        if i > 4096 || o > 4096 || k > 63 {
            return Err(corrupt(format!("implausible layer shape {line:?}")));
        }
        layers.push(ConvLayer::zeros(i, o, k).map_err(|e| corrupt(e.to_string()))?);
    }
    let params: usize = layers.iter().map(ConvLayer::param_count).sum();
    let expected = pos + params * 4 + 8;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "expected {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[pos..pos + params * 4];
    let stored = u64::from_le_bytes(bytes[pos + params * 4..].try_into().unwrap());
    let actual = fnv1a(payload);
    if stored != actual {
        return Err(corrupt(format!(
            "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for l in &mut layers {
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *v = values.next().unwrap();
        }
    }
    let net = TinyNet::from_layers(layers, residual).map_err(|e| corrupt(e.to_string()))?;
    net.check_finite().map_err(|e| corrupt(e.to_string()))?;
    Ok(net)
}

pub fn save_checkpoint(net: &TinyNet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TinyNet> {
    decode_checkpoint(&fs::read(path)?)
}

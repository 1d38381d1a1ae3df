//! Flat binary weight container.
//!
//! Layout: 8-byte magic `HSNNWGT1`, a little-endian `u64` manifest length,
//! the UTF-8 manifest, then the payload of little-endian `f64` values. Each
//! manifest line reads `name dims offset count` where `dims` is the shape
//! joined by `x` and `offset` counts elements from the payload start.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HSNNWGT1";

fn fmt_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode<S: Scalar>(tensors: &[(String, Tensor<S>)]) -> Result<Vec<u8>> {
    let mut manifest = String::new();
    let mut offset = 0usize;
    for (name, t) in tensors {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Config(format!("weight name `{name}` must be non-empty without spaces")));
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("{name} {} {offset} {}\n", dims.join("x"), t.numel()));
        offset += t.numel();
    }
    let mut out = Vec::with_capacity(16 + manifest.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<S>)>> {
    if bytes.len() < 16 {
        return Err(fmt_err(bytes.len(), "truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(fmt_err(0, "bad magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fmt_err(16, "manifest runs past end of file"))?;
    let manifest = std::str::from_utf8(&bytes[16..body]).map_err(|e| fmt_err(16 + e.valid_up_to(), "manifest is not UTF-8"))?;
    let payload = &bytes[body..];
    if payload.len() % 8 != 0 {
        return Err(fmt_err(body, "payload length is not a multiple of 8"));
    }
    let values = payload.len() / 8;
    let mut out = Vec::new();
    let mut line_start = 16;
    for line in manifest.lines() {
        let bad = |m: &str| fmt_err(line_start, format!("manifest line `{line}`: {m}"));
        let fields: Vec<&str> = line.split(' ').collect();
        let [name, dims, offset, count] = fields[..] else {
            return Err(bad("expected 4 fields"));
        };
        let shape: Vec<usize> = dims
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad shape"))?;
        let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
        let count: usize = count.parse().map_err(|_| bad("bad count"))?;
        if shape.iter().product::<usize>() != count {
            return Err(bad("count disagrees with shape"));
        }
        if offset.checked_add(count).map_or(true, |e| e > values) {
            return Err(bad("entry runs past payload"));
        }
        let data = payload[offset * 8..(offset + count) * 8]
            .chunks_exact(8)
            .map(|c| S::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| bad(&e.to_string()))?;
        out.push((name.to_string(), t));
        line_start += line.len() + 1;
    }
    Ok(out)
}

pub fn save<S: Scalar>(path: &Path, tensors: &[(String, Tensor<S>)]) -> Result<()> {
    fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<S>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor<f64>)> {
        vec![
            ("conv1.weight".into(), Tensor::from_fn(&[2, 1, 3, 3], |i| i as f64 * 0.1 - 0.5).unwrap()),
            ("conv1.bias".into(), Tensor::from_vec(&[2], vec![f64::MIN_POSITIVE, -0.0]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = sample();
        let bytes = encode(&w).unwrap();
        let back: Vec<(String, Tensor<f64>)> = decode(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        for ((a, ta), (b, tb)) in w.iter().zip(&back) {
            assert_eq!(a, b);
            assert_eq!(ta.shape(), tb.shape());
            let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb));
        }
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn manifest_lists_offsets() {
        let bytes = encode(&sample()).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let manifest = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
        assert_eq!(manifest, "conv1.weight 2x1x3x3 0 18\nconv1.bias 2 18 2\n");
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let mut bytes = encode(&sample()).unwrap();
        assert!(matches!(decode::<f64>(&bytes[..10]), Err(Error::Format { offset: 10, .. })));
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(decode::<f64>(&bytes), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode::<f64>(&bytes), Err(Error::Format { offset: 0, .. })));
    }
}

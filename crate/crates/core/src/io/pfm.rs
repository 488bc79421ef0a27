//! Grayscale portable float maps. Non-finite samples mark invalid pixels.

use std::path::Path;

use super::{header_tokens, read_bytes, write_bytes};
use crate::disparity::Map;
use crate::error::{Error, Result};

/// Parse failure with the byte offset where it was detected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PfmError {
    pub offset: usize,
    pub msg: String,
}

pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<Map, PfmError> {
    let err = |offset, msg: String| PfmError { offset, msg };
    let (tok, start) = header_tokens(bytes, 4).map_err(|(o, m)| err(o, m))?;
    match tok[0].as_str() {
        "Pf" => {}
        "PF" => return Err(err(0, "color PFM (PF) is not supported; expected grayscale Pf".into())),
        other => return Err(err(0, format!("bad magic `{other}`"))),
    }
    let dim = |s: &str| s.parse::<usize>().ok().filter(|&n| n > 0);
    let (Some(w), Some(h)) = (dim(&tok[1]), dim(&tok[2])) else {
        return Err(err(2, format!("bad dimensions `{} {}`", tok[1], tok[2])));
    };
    let scale: f64 = tok[3].parse().map_err(|_| err(start - 1, format!("bad scale `{}`", tok[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(err(start - 1, "scale must be non-zero".into()));
    }
    let little = scale < 0.0;
    let need = w * h * 4;
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(err(bytes.len(), format!("payload truncated: {} of {need} bytes", payload.len())));
    }
    let mut values = vec![0.0; w * h];
    for (k, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, col) = (k / w, k % w);
        values[(h - 1 - row) * w + col] = v as f64;
    }
    Map::dense(w, h, values).map_err(|e| err(start, e.to_string()))
}

/// Little-endian payload, invalid pixels written as `+inf`.
pub fn encode_pfm(map: &Map) -> Vec<u8> {
    let (w, h) = (map.width, map.height);
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for row in (0..h).rev() {
        for col in 0..w {
            let k = row * w + col;
            let v = if map.valid[k] { map.values[k] as f32 } else { f32::INFINITY };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: &Path) -> Result<Map> {
    decode_pfm(&read_bytes(path)?).map_err(|e| Error::format(path, format!("byte {}: {}", e.offset, e.msg)))
}

pub fn write_pfm(path: &Path, map: &Map) -> Result<()> {
    write_bytes(path, &encode_pfm(map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn negative_scale_means_little_endian() {
        let mut bytes = b"Pf\n2 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().values, vec![1.5, -2.0]);
        let mut be = b"Pf\n2 1\n1.0\n".to_vec();
        be.extend_from_slice(&1.5f32.to_be_bytes());
        be.extend_from_slice(&(-2.0f32).to_be_bytes());
        assert_eq!(decode_pfm(&be).unwrap().values, vec![1.5, -2.0]);
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        let m = Map::dense(1, 2, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&m);
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(body[..4].try_into().unwrap()), 2.0);
    }

    #[test]
    fn rejects_color_and_truncation() {
        assert!(decode_pfm(b"PF\n1 1\n-1\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap_err().msg.contains("color"));
        let e = decode_pfm(b"Pf\n2 2\n-1\n\0\0\0\0").unwrap_err();
        assert!(e.msg.contains("truncated") && e.offset == 14);
        assert!(decode_pfm(b"Pf\n0 2\n-1\n").is_err());
    }

    #[test]
    fn invalid_pixels_survive() {
        let m = Map::new(2, 1, vec![3.0, 0.0], vec![true, false]).unwrap();
        let back = decode_pfm(&encode_pfm(&m)).unwrap();
        assert_eq!(back.valid, vec![true, false]);
    }

    proptest! {
        #[test]
        fn roundtrip_bit_exact(w in 1usize..7, h in 1usize..7, seed in any::<u64>()) {
            let values: Vec<f64> = (0..w * h).map(|i| f32::from_bits((seed.rotate_left(i as u32) as u32) & 0x7f7f_ffff) as f64).collect();
            let m = Map::dense(w, h, values).unwrap();
            prop_assert_eq!(decode_pfm(&encode_pfm(&m)).unwrap(), m);
        }
    }
}

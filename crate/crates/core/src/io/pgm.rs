//! Binary portable graymaps (8- or 16-bit), read into `[0, 1]` intensities.

use std::path::Path;

use super::{header_tokens, read_bytes, write_bytes};
use crate::disparity::Image;
use crate::error::{Error, Result};

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let (tok, start) = header_tokens(bytes, 4).map_err(|(o, m)| format!("byte {o}: {m}"))?;
    if tok[0] != "P5" {
        return Err(format!("bad magic `{}`; expected binary P5", tok[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field `{s}`"));
    let (w, h, maxval) = (num(&tok[1])?, num(&tok[2])?, num(&tok[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad header {w}x{h} maxval {maxval}"));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bpp;
    if bytes.len() < start + need {
        return Err(format!("byte {}: payload truncated, need {need} bytes", bytes.len()));
    }
    let body = &bytes[start..start + need];
    let values = (0..w * h)
        .map(|k| {
            let raw = if bpp == 1 { body[k] as u32 } else { u16::from_be_bytes([body[2 * k], body[2 * k + 1]]) as u32 };
            raw as f64 / maxval as f64
        })
        .collect();
    Image::dense(w, h, values).map_err(|e| e.to_string())
}

/// Quantizes `[0, 1]` intensities to the given maxval (255 or 65535 typical).
pub fn encode_pgm(img: &Image, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    for &v in &img.values {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    out
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    decode_pgm(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_pgm(path: &Path, img: &Image, maxval: u16) -> Result<()> {
    write_bytes(path, &encode_pgm(img, maxval))
}

pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    Ok(read_pgm(path)?.values.iter().map(|&v| v >= 0.5).collect())
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let img = Image::dense(width, height, mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
    write_pgm(path, &img, 255)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_roundtrip_within_quantization() {
        let img = Image::dense(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.123456]).unwrap();
        let back = decode_pgm(&encode_pgm(&img, 65535)).unwrap();
        for (a, b) in img.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn comments_and_eight_bit() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        assert_eq!(decode_pgm(bytes).unwrap().values, vec![0.0, 1.0]);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }
}

//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::path::Path;

use super::write_atomic;
use crate::error::{GemError, Result};

fn format_err(msg: impl Into<String>) -> GemError {
    GemError::Format(msg.into())
}

/// Encodes `[0, 1]` values as a binary graymap.
pub fn encode_pgm(width: usize, height: usize, pixels: &[f64]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(format_err(format!("{} pixels for a {width}×{height} image", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Encodes interleaved RGB bytes as a binary pixmap.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != 3 * width * height {
        return Err(format_err(format!("{} bytes for a {width}×{height} RGB image", rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    Ok(out)
}

/// Header fields and the offset of the first sample byte.
fn parse_header(bytes: &[u8], magic: &str) -> Result<(usize, usize, usize)> {
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(format_err("truncated image header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| format_err("non-ASCII image header"))?);
    }
    if fields[0] != magic {
        return Err(format_err(format!("expected {magic} image, found '{}'", fields[0])));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| format_err(format!("bad {what} '{s}' in image header")))
    };
    let (w, h, max) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if max != 255 {
        return Err(format_err(format!("only 8-bit images are supported, maxval is {max}")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    Ok((w, h, i + 1))
}

/// Decodes a binary graymap into `(width, height, values in [0, 1])`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let (w, h, off) = parse_header(bytes, "P5")?;
    let data = bytes.get(off..).unwrap_or_default();
    if data.len() != w * h {
        return Err(format_err(format!("{w}×{h} graymap has {} sample bytes", data.len())));
    }
    Ok((w, h, data.iter().map(|&b| b as f64 / 255.0).collect()))
}

/// Decodes a binary pixmap into `(width, height, RGB bytes)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h, off) = parse_header(bytes, "P6")?;
    let data = bytes.get(off..).unwrap_or_default();
    if data.len() != 3 * w * h {
        return Err(format_err(format!("{w}×{h} pixmap has {} sample bytes", data.len())));
    }
    Ok((w, h, data.to_vec()))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| format_err(format!("{}: {e}", path.display())))?;
    decode_pgm(&bytes).map_err(|e| format_err(format!("{}: {e}", path.display())))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    write_atomic(path, &encode_pgm(width, height, pixels)?)
}

pub const BLUE: [u8; 3] = [0, 0, 255];
pub const RED: [u8; 3] = [255, 0, 0];

/// Gray image with 3×3 squares: ground truth in red first, then
/// predictions in blue on top.
pub fn overlay(size: usize, pixels: &[f64], predicted: &[[f64; 2]], truth: &[[f64; 2]]) -> Vec<u8> {
    let mut rgb: Vec<u8> = pixels
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g]
        })
        .collect();
    let mut mark = |p: [f64; 2], color: [u8; 3]| {
        let cell = |v: f64| ((v * size as f64).floor().max(0.0) as usize).min(size - 1);
        let (cx, cy) = (cell(p[0]) as isize, cell(p[1]) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if (0..size as isize).contains(&x) && (0..size as isize).contains(&y) {
                    let i = 3 * (y as usize * size + x as usize);
                    rgb[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    };
    for &p in truth {
        mark(p, RED);
    }
    for &p in predicted {
        mark(p, BLUE);
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graymap_roundtrip_is_exact_for_8bit_values() {
        let px: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let bytes = encode_pgm(4, 3, &px).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        let (w, h, back) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, px);
    }

    #[test]
    fn header_comments_and_errors() {
        let mut bytes = b"P5 # comment\n2 1\n255\n".to_vec();
        bytes.extend([0, 255]);
        assert_eq!(decode_pgm(&bytes).unwrap().2, [0.0, 1.0]);
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(encode_pgm(2, 2, &[0.0; 3]).is_err());
    }

    #[test]
    fn overlay_marks_points() {
        let rgb = overlay(8, &[0.5; 64], &[[0.5, 0.5]], &[[0.1, 0.1]]);
        let at = |x: usize, y: usize| &rgb[3 * (y * 8 + x)..3 * (y * 8 + x) + 3];
        assert_eq!(at(4, 4), BLUE);
        assert_eq!(at(3, 5), BLUE);
        assert_eq!(at(0, 0), RED);
        assert_eq!(at(7, 7), [128, 128, 128]);
        let ppm = encode_ppm(8, 8, &rgb).unwrap();
        assert_eq!(decode_ppm(&ppm).unwrap().2, rgb);
    }
}

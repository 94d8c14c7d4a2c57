//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::fs;
use std::path::Path;

use spanet_core::data::Image;

use crate::error::{CliError, Result};

/// Decodes a P5 or P6 file. Comments in the header are skipped; a maxval
/// below 255 is rescaled to the full 8-bit range.
pub fn decode(bytes: &[u8]) -> Result<Image, String> {
    let mut pos = 0usize;
    let magic = bytes.get(0..2).ok_or("file is shorter than the magic number")?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => return Err(format!("unsupported magic {:?}, expected P5 or P6", String::from_utf8_lossy(other))),
    };
    pos += 2;
    let mut fields = [0usize; 3];
    for (slot, what) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        *slot = header_number(bytes, &mut pos).ok_or_else(|| format!("missing or malformed {what}"))?;
    }
    let [width, height, maxval] = fields;
    if !(1..=255).contains(&maxval) {
        return Err(format!("maxval {maxval} is not an 8-bit value"));
    }
    if width == 0 || height == 0 {
        return Err(format!("empty image {width}x{height}"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("no whitespace after maxval".into());
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or("image dimensions overflow")?;
    let raster = pos.checked_add(need).and_then(|end| bytes.get(pos..end)).ok_or_else(|| {
        format!("raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(pos))
    })?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster.iter().map(|&v| ((v.min(maxval as u8) as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8).collect()
    };
    Image::new(width, height, channels, pixels).map_err(|e| e.to_string())
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        match bytes.get(*pos)? {
            b if b.is_ascii_whitespace() => *pos += 1,
            b'#' => {
                while *bytes.get(*pos)? != b'\n' {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

/// Encodes as P5 (one channel) or P6 (three channels), maxval 255.
pub fn encode(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|msg| CliError::Data(format!("{}: {msg}", path.display())))
}

pub fn write(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, encode(image)).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trip() {
        let img = Image::new(3, 2, 1, vec![0, 1, 2, 253, 254, 255]).unwrap();
        assert_eq!(decode(&encode(&img)).unwrap(), img);
    }

    #[test]
    fn color_with_comment_header() {
        let mut bytes = b"P6 # made by hand\n2 1 # size\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 3));
        assert_eq!(img.get(1, 0, 2), 6);
    }

    #[test]
    fn low_maxval_is_rescaled() {
        let img = decode(b"P5 2 1 15\n\x00\x0f").unwrap();
        assert_eq!(img.pixels, vec![0, 255]);
    }

    #[test]
    fn malformed_inputs_are_errors() {
        for bad in [&b""[..], b"P3 1 1 255\n0", b"P5 2 2 255\n\x00", b"P5 x 2 255\n", b"P5 1 1 65535\n\x00\x00", b"P5 0 1 255\n"] {
            assert!(decode(bad).is_err(), "{:?}", String::from_utf8_lossy(bad));
        }
    }
}

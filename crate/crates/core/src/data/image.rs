//! Binary PGM (P5) and PPM (P6) with maxval 255.

use super::{DataError, Structure};

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

/// Binary mask to P5; foreground 255, background 0.
pub fn write_mask_pgm(mask: &[u8], w: usize, h: usize) -> Result<Vec<u8>, DataError> {
    if mask.len() != w * h {
        return Err(DataError::Shape(format!("{} samples for a {w}x{h} image", mask.len())));
    }
    let mut out = header("P5", w, h);
    for (i, &v) in mask.iter().enumerate() {
        out.push(match v {
            0 => 0,
            1 => 255,
            _ => return Err(DataError::ClassIndex { index: i, value: v }),
        });
    }
    Ok(out)
}

/// Values in [0, 1] to an 8-bit P5 (rounded, clamped).
pub fn write_gray_pgm(values: &[f64], w: usize, h: usize) -> Result<Vec<u8>, DataError> {
    if values.len() != w * h {
        return Err(DataError::Shape(format!("{} samples for a {w}x{h} image", values.len())));
    }
    let mut out = header("P5", w, h);
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Class-index mask (0 background, `1 + Structure index`) to P6 via the palette.
pub fn write_fused_ppm(classes: &[u8], w: usize, h: usize) -> Result<Vec<u8>, DataError> {
    if classes.len() != w * h {
        return Err(DataError::Shape(format!("{} samples for a {w}x{h} image", classes.len())));
    }
    let mut out = header("P6", w, h);
    for (i, &c) in classes.iter().enumerate() {
        let rgb = match c {
            0 => [0, 0, 0],
            k => Structure::ALL
                .get(k as usize - 1)
                .ok_or(DataError::ClassIndex { index: i, value: c })?
                .color(),
        };
        out.extend_from_slice(&rgb);
    }
    Ok(out)
}

/// A decoded P5 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

/// Reads a binary P5 with maxval ≤ 255; `#` comments in the header are skipped.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, DataError> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::Pgm(format!("header ends early at byte {pos}")));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(DataError::Pgm(format!("magic {:?} is not P5", fields[0])));
    }
    let num = |i: usize, name: &str| {
        fields[i]
            .parse::<usize>()
            .map_err(|_| DataError::Pgm(format!("bad {name} {:?}", fields[i])))
    };
    let (width, height, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(DataError::Pgm(format!("maxval {maxval} unsupported")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(DataError::Pgm(format!(
            "raster needs {need} bytes at offset {pos}, file has {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        pixels: bytes[pos..pos + need].to_vec(),
    })
}

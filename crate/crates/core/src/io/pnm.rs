//! Binary netpbm images: RGB as `P6`, class masks as `P5`. Only maxval 255 is
//! accepted and every header token is followed by exactly one whitespace byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-pixel class indices, one byte per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Data(format!(
                "mask {height}x{width} cannot hold {} values",
                data.len()
            )));
        }
        Ok(LabelMask { height, width, data })
    }

    /// Build a mask and check every class index against `num_classes`.
    pub fn with_classes(height: usize, width: usize, data: Vec<u8>, num_classes: usize) -> Result<Self> {
        let mask = LabelMask::new(height, width, data)?;
        mask.check_classes(num_classes)?;
        Ok(mask)
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        if let Some((i, &v)) = self.data.iter().enumerate().find(|(_, &v)| v as usize >= num_classes) {
            return Err(Error::Label(format!(
                "pixel {i} has class {v}, but only {num_classes} classes exist"
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Count of pixels per class, for classes `0..num_classes`.
    pub fn histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &v in &self.data {
            if (v as usize) < num_classes {
                h[v as usize] += 1;
            }
        }
        h
    }
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::format(bytes.len(), "file too short for a netpbm magic"));
    }
    match &bytes[..2] {
        m if m == magic => {}
        b"P3" | b"P2" => return Err(Error::format(0, "ASCII netpbm variants are not supported")),
        _ => {
            return Err(Error::format(
                0,
                format!("expected magic {}", String::from_utf8_lossy(magic)),
            ))
        }
    }
    fn token(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
        if *pos >= bytes.len() || !bytes[*pos].is_ascii_whitespace() {
            return Err(Error::format(
                *pos,
                format!("expected one whitespace byte before {what}"),
            ));
        }
        *pos += 1;
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if *pos == start {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start, format!("{what} out of range")))
    }
    let mut pos = 2;
    let width = token(bytes, &mut pos, "width")?;
    let height = token(bytes, &mut pos, "height")?;
    let maxval_at = pos + 1;
    let maxval = token(bytes, &mut pos, "maxval")?;
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(pos, "expected one whitespace byte after maxval"));
    }
    pos += 1;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(2, "zero image extent"));
    }
    Ok(Header {
        width,
        height,
        data_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8]> {
    let expected = header.data_start + header.width * header.height * channels;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len(),
            format!("truncated raster: expected {expected} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected, "trailing bytes after the raster"));
    }
    Ok(&bytes[header.data_start..])
}

/// Decode a `P6` image into a `[1, 3, H, W]` tensor scaled to `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes, b"P6")?;
    let raster = payload(bytes, &header, 3)?;
    let plane = header.width * header.height;
    let mut data = vec![0.0; 3 * plane];
    for (p, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = byte_to_unit(px[c]);
        }
    }
    Tensor::new(&[1, 3, header.height, header.width], data)
}

/// Encode a `[1, 3, H, W]` tensor in `[0, 1]` as `P6`, rounding to the
/// nearest byte.
pub fn encode_ppm(rgb: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = rgb.dims4()?;
    if n != 1 || c != 3 {
        return Err(Error::shape(format!(
            "PPM export needs [1, 3, H, W], got {:?}",
            rgb.shape()
        )));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            out.push(unit_to_byte(rgb.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8], num_classes: usize) -> Result<LabelMask> {
    let header = parse_header(bytes, b"P5")?;
    let raster = payload(bytes, &header, 1)?;
    LabelMask::with_classes(header.height, header.width, raster.to_vec(), num_classes)
}

pub fn encode_pgm(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.data);
    out
}

#[inline]
pub fn byte_to_unit(b: u8) -> f64 {
    b as f64 / 255.0
}

#[inline]
pub fn unit_to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(rgb: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, &encode_ppm(rgb)?)
}

pub fn read_pgm(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelMask> {
    decode_pgm(&std::fs::read(path)?, num_classes)
}

pub fn write_pgm(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, &encode_pgm(mask))
}

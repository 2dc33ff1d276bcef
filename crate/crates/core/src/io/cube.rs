//! The `HSC1` hyperspectral cube format.
//!
//! Layout: the magic bytes `HSC1`, then little-endian `u32` bands, height and
//! width, then `bands * height * width` little-endian `f32` values stored
//! band-sequentially (one full image plane per band).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const CUBE_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl HyperCube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::Data(format!(
                "cube extents must be >= 1, got {bands}x{height}x{width}"
            )));
        }
        if data.len() != bands * height * width {
            return Err(Error::Data(format!(
                "cube {bands}x{height}x{width} needs {} values, got {}",
                bands * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("cube value {i} is not finite")));
        }
        Ok(HyperCube {
            bands,
            height,
            width,
            data,
        })
    }

    /// A cube whose channel planes are the channels of a `[1, C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 {
            return Err(Error::shape(format!("cube export needs batch 1, got {n}")));
        }
        HyperCube::new(c, h, w, t.data().iter().map(|&v| v as f32).collect())
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn value(&self, band: usize, y: usize, x: usize) -> f32 {
        self.data[(band * self.height + y) * self.width + x]
    }

    /// Spectrum of the pixel with row-major index `p`.
    pub fn spectrum(&self, p: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.bands).map(|b| self.data[b * n + p] as f64).collect()
    }

    /// `[1, bands, H, W]` tensor view of the raster.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, self.bands, self.height, self.width],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("cube extents are validated")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CUBE_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(CUBE_MAGIC);
        for v in [self.bands, self.height, self.width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::format(bytes.len(), "file too short for the HSC1 magic"));
        }
        if &bytes[..4] != CUBE_MAGIC {
            return Err(Error::format(0, "bad magic, expected HSC1"));
        }
        if bytes.len() < CUBE_HEADER_LEN {
            return Err(Error::format(bytes.len(), "truncated HSC1 header"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (bands, height, width) = (dim(0), dim(1), dim(2));
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::format(
                4,
                format!("zero extent in header {bands}x{height}x{width}"),
            ));
        }
        let count = bands
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::format(4, "header extents overflow"))?;
        let expected = CUBE_HEADER_LEN + 4 * count;
        if bytes.len() < expected {
            return Err(Error::format(
                bytes.len(),
                format!("truncated payload: expected {expected} bytes, file has {}", bytes.len()),
            ));
        }
        if bytes.len() > expected {
            return Err(Error::format(expected, "trailing bytes after the raster"));
        }
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in bytes[CUBE_HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(CUBE_HEADER_LEN + 4 * i, "non-finite sample"));
            }
            data.push(v);
        }
        HyperCube::new(bands, height, width, data)
    }
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    HyperCube::from_bytes(&std::fs::read(path)?)
}

pub fn write_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, &cube.to_bytes())
}

//! RGB frames and PNG output.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use slotrl_tensor::{Scalar, Tensor};

use crate::error::{argument, Result};

/// Square 8-bit RGB image; channel values map to `[0, 1]` as `v / 255`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    size: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn filled(size: usize, rgb: [u8; 3]) -> Self {
        Self {
            size,
            data: rgb.repeat(size * size),
        }
    }

    pub fn from_raw(size: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != size * size * 3 {
            return Err(argument(format!(
                "{} bytes do not form a {size}x{size} RGB frame",
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.size + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.size + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel values in `[0, 1]`.
    pub fn to_unit<F: Scalar>(&self) -> Vec<F> {
        self.data.iter().map(|&v| F::of(v as f64 / 255.0)).collect()
    }

    /// Rounds `[0, 1]` values (clamped) back to 8 bits.
    pub fn from_unit<F: Scalar>(size: usize, values: &[F]) -> Result<Self> {
        let data = values
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::from_raw(size, data)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_rgb_png(path, self.size, self.size, &self.data)
    }
}

/// Stacks frames into a `[B, H, W, 3]` tensor with values in `[0, 1]`.
pub fn frames_to_tensor<F: Scalar>(frames: &[&Frame]) -> Result<Tensor<F>> {
    let Some(first) = frames.first() else {
        return Err(argument("no frames"));
    };
    let size = first.size();
    let mut data = Vec::with_capacity(frames.len() * size * size * 3);
    for f in frames {
        if f.size() != size {
            return Err(argument("frames of different sizes"));
        }
        data.extend(f.to_unit::<F>());
    }
    Ok(Tensor::from_vec(data, &[frames.len(), size, size, 3]))
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(argument("pixel buffer does not match image size"));
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(rgb)?;
    writer.finish()?;
    Ok(())
}

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// An RGB image with values in [0, 1], stored row-major as (h, w, c).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRgb {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageRgb {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::Data(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(ImageRgb { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        ImageRgb { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Loads any PNG or BMP; 8-bit samples map to v / 255.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = ::image::open(path)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        ImageRgb::new(h as usize, w as usize, data)
    }

    /// 8-bit samples, round(clamp(v) · 255).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// The image after an 8-bit round trip.
    pub fn quantized(&self) -> ImageRgb {
        ImageRgb {
            height: self.height,
            width: self.width,
            data: self.to_u8().into_iter().map(|v| v as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let buf = ::image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .ok_or_else(|| Error::Data("image buffer size mismatch".into()))?;
        buf.save_with_format(path, ::image::ImageFormat::Png)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImageRgb> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::Data(format!(
                "crop {height}x{width} at ({top}, {left}) outside {}x{} image",
                self.height, self.width
            )));
        }
        Ok(ImageRgb::from_fn(height, width, |y, x, c| self.get(top + y, left + x, c)))
    }

    /// (1, 3, h, w) tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (h, w) = (self.height, self.width);
        Tensor::from_fn(Shape::new(1, 3, h, w), |i| {
            let (c, rest) = (i / (h * w), i % (h * w));
            self.data[rest * 3 + c]
        })
    }

    /// Batch item `n` of a 3-channel tensor, values copied unclamped.
    pub fn from_tensor(t: &Tensor<f32>, n: usize) -> Result<ImageRgb> {
        let s = t.shape();
        if s.c != 3 || n >= s.n {
            return Err(Error::Data(format!("cannot read image {n} from tensor {s}")));
        }
        Ok(ImageRgb::from_fn(s.h, s.w, |y, x, c| t.at(n, c, y, x)))
    }

    pub fn clamped(&self) -> ImageRgb {
        ImageRgb {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

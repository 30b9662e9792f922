use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{imageops::FilterType, RgbImage};

use crate::error::{Error, Result};

/// An RGB image stored channel-major (`3 x H x W`) with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::shape(3 * height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, height * width));
        }
        Self {
            height,
            width,
            data,
        }
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

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let plane = self.height * self.width;
        let mut out = [0.0; 3];
        for (c, m) in out.iter_mut().enumerate() {
            let s: f64 = self.data[c * plane..(c + 1) * plane].iter().map(|&v| f64::from(v)).sum();
            *m = s / plane as f64;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Affine map `[-1, 1] -> [0, 255]`, rounded and saturated.
    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| {
                let v = (self.get(c, y as usize, x as usize) + 1.0) * 127.5;
                v.round().clamp(0.0, 255.0) as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::filled(h, w, [0.0; 3]);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, f32::from(p.0[c]) / 127.5 - 1.0);
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Load any supported image file, resizing to `height x width` when needed.
    pub fn load(path: &Path, height: usize, width: usize) -> Result<Self> {
        let mut rgb = image::open(path)?.to_rgb8();
        if rgb.width() as usize != width || rgb.height() as usize != height {
            rgb = image::imageops::resize(&rgb, width as u32, height as u32, FilterType::Triangle);
        }
        Ok(Self::from_rgb8(&rgb))
    }

    /// Stack images into a `(B, 3, H, W)` tensor.
    pub fn batch_tensor(images: &[&Image], dtype: DType) -> Result<Tensor> {
        let first = images.first().ok_or(Error::BatchTooSmall(0))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if img.height != h || img.width != w {
                return Err(Error::shape((h, w), (img.height, img.width)));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?.to_dtype(dtype)?)
    }

    /// Split a `(B, 3, H, W)` tensor back into images.
    pub fn from_batch_tensor(t: &Tensor) -> Result<Vec<Image>> {
        let (b, c, h, w) = t.dims4()?;
        if c != 3 {
            return Err(Error::shape(3, c));
        }
        let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        Ok(flat
            .chunks_exact(3 * h * w)
            .take(b)
            .map(|chunk| Image {
                height: h,
                width: w,
                data: chunk.to_vec(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_roundtrip_within_quantization() {
        let data: Vec<f32> = (0..3 * 4 * 5).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
        let img = Image::new(4, 5, data).unwrap();
        let back = Image::from_rgb8(&img.to_rgb8());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 127.5 / 2.0 + 1e-6);
        }
    }

    #[test]
    fn extremes_map_to_byte_range() {
        let img = Image::filled(1, 1, [-1.0, 0.0, 1.0]);
        let p = img.to_rgb8().get_pixel(0, 0).0;
        assert_eq!(p, [0, 128, 255]);
    }

    #[test]
    fn tensor_roundtrip() {
        let a = Image::filled(2, 2, [0.5, -0.5, 0.25]);
        let b = Image::filled(2, 2, [0.1, 0.2, 0.3]);
        let t = Image::batch_tensor(&[&a, &b], DType::F32).unwrap();
        assert_eq!(t.dims(), &[2, 3, 2, 2]);
        assert_eq!(Image::from_batch_tensor(&t).unwrap(), vec![a, b]);
    }
}

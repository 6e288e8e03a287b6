use crate::diffcore::kernels;
use crate::diffcore::{Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// Rec.601 luma weights.
pub const GRAY_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// H×W×C image with values in [0, 1], interleaved row-major (H → W → C).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMethod {
    Bilinear,
    Nearest,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(shape_err!("images have 1 or 3 channels, got {channels}"));
        }
        if data.len() != height * width * channels {
            return Err(shape_err!(
                "{} values for a {height}×{width}×{channels} image",
                data.len()
            ));
        }
        Ok(ImageBuffer {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels]).expect("valid extents")
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data).expect("valid extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_extent(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Planar (1, C, H, W) tensor of the same values.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; h * w * c];
        for (i, px) in self.data.chunks(c).enumerate() {
            for (ch, v) in px.iter().enumerate() {
                data[ch * h * w + i] = *v;
            }
        }
        Tensor::new(Shape::new(1, c, h, w), data).expect("image tensor")
    }

    /// Inverse of [`ImageBuffer::to_tensor`]; the tensor must have batch 1.
    pub fn from_tensor<T: crate::diffcore::Element>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 {
            return Err(shape_err!("expected a single image, got batch {}", s.n));
        }
        let plane = s.plane();
        let mut data = vec![0.0f32; s.numel()];
        for ch in 0..s.c {
            for i in 0..plane {
                data[i * s.c + ch] = t.data()[ch * plane + i].f64() as f32;
            }
        }
        Self::new(s.h, s.w, s.c, data)
    }

    pub fn to_gray(&self) -> Result<ImageBuffer> {
        if self.channels != 3 {
            return Err(shape_err!("to_gray needs 3 channels, got {}", self.channels));
        }
        let data = self.data.chunks(3).map(gray_of).collect();
        ImageBuffer::new(self.height, self.width, 1, data)
    }

    /// Gray replicated over three channels; identity on 3-channel input.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|v| [*v, *v, *v]).collect();
        ImageBuffer::new(self.height, self.width, 3, data).expect("rgb")
    }

    pub fn resize(&self, h: usize, w: usize, method: ResizeMethod) -> Result<ImageBuffer> {
        if h == 0 || w == 0 {
            return Err(arg_err!("resize target must be at least 1×1, got {h}×{w}"));
        }
        match method {
            ResizeMethod::Bilinear => {
                let t = kernels::resize_bilinear(&self.to_tensor(), h, w)?;
                ImageBuffer::from_tensor(&t)
            }
            ResizeMethod::Nearest => {
                let c = self.channels;
                let mut data = Vec::with_capacity(h * w * c);
                for y in 0..h {
                    let sy = (((y as f64 + 0.5) * self.height as f64 / h as f64) as usize).min(self.height - 1);
                    for x in 0..w {
                        let sx = (((x as f64 + 0.5) * self.width as f64 / w as f64) as usize).min(self.width - 1);
                        let base = (sy * self.width + sx) * c;
                        data.extend_from_slice(&self.data[base..base + c]);
                    }
                }
                ImageBuffer::new(h, w, c, data)
            }
        }
    }

    /// Sub-image starting at (y0, x0).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImageBuffer> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(arg_err!(
                "crop {h}×{w} at ({y0},{x0}) outside {}×{}",
                self.height,
                self.width
            ));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        ImageBuffer::new(h, w, c, data)
    }

    /// Mirror-pads the bottom and right edges (edge pixel not repeated).
    pub fn reflect_pad(&self, bottom: usize, right: usize) -> Result<ImageBuffer> {
        if (bottom >= self.height.max(1) || right >= self.width.max(1)) && (bottom > 0 || right > 0) {
            return Err(arg_err!(
                "reflect padding {bottom}/{right} needs extents above the pad, image is {}×{}",
                self.height,
                self.width
            ));
        }
        let (h, w) = (self.height + bottom, self.width + right);
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            let sy = reflect(y, self.height);
            for x in 0..w {
                let sx = reflect(x, self.width);
                let base = (sy * self.width + sx) * c;
                data.extend_from_slice(&self.data[base..base + c]);
            }
        }
        ImageBuffer::new(h, w, c, data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| *v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn max_abs_diff(&self, other: &ImageBuffer) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[inline]
pub(crate) fn gray_of(px: &[f32]) -> f32 {
    (GRAY_WEIGHTS[0] as f64 * px[0] as f64
        + GRAY_WEIGHTS[1] as f64 * px[1] as f64
        + GRAY_WEIGHTS[2] as f64 * px[2] as f64) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, 3, |y, x, c| ((y * w + x) * 3 + c) as f32 / (h * w * 3) as f32)
    }

    #[test]
    fn tensor_roundtrip_is_lossless() {
        let img = ramp(5, 7);
        assert_eq!(ImageBuffer::from_tensor(&img.to_tensor()).unwrap(), img);
    }

    #[test]
    fn gray_of_white_and_red() {
        let white = ImageBuffer::filled(1, 1, 3, 1.0);
        assert!((white.to_gray().unwrap().data()[0] - 1.0).abs() < 1e-7);
        let red = ImageBuffer::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((red.to_gray().unwrap().data()[0] - 0.299).abs() < 1e-7);
    }

    #[test]
    fn gray_input_keeps_values() {
        let img = ImageBuffer::from_fn(3, 3, 3, |y, x, _| (y * 3 + x) as f32 / 9.0);
        let g = img.to_gray().unwrap();
        for (a, px) in g.data().iter().zip(img.data().chunks(3)) {
            assert!((a - px[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn to_gray_rejects_single_channel() {
        let img = ImageBuffer::filled(2, 2, 1, 0.5);
        assert!(img.to_gray().is_err());
    }

    #[test]
    fn nearest_resize_to_same_size_is_identity() {
        let img = ramp(6, 9);
        assert_eq!(img.resize(6, 9, ResizeMethod::Nearest).unwrap(), img);
        assert_eq!(img.resize(6, 9, ResizeMethod::Bilinear).unwrap(), img);
    }

    #[test]
    fn constant_image_survives_resize() {
        let img = ImageBuffer::filled(5, 8, 3, 0.7);
        for (h, w) in [(1, 1), (3, 17), (20, 9)] {
            for m in [ResizeMethod::Bilinear, ResizeMethod::Nearest] {
                let r = img.resize(h, w, m).unwrap();
                assert!(r.data().iter().all(|v| *v == 0.7));
            }
        }
    }

    #[test]
    fn zero_extent_resize_is_rejected() {
        assert!(ramp(4, 4).resize(0, 3, ResizeMethod::Nearest).is_err());
    }

    #[test]
    fn reflect_pad_then_crop_restores_image() {
        let img = ramp(5, 6);
        let padded = img.reflect_pad(3, 4).unwrap();
        assert_eq!(padded.height(), 8);
        assert_eq!(padded.get(5, 0, 0), img.get(3, 0, 0));
        assert_eq!(padded.crop(0, 0, 5, 6).unwrap(), img);
    }
}

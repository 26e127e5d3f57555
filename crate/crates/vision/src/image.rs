//! Planar float images and boolean masks with 8-bit PNG interchange.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::VisionError;

/// Channel-major (`C x H x W`) image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, VisionError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(VisionError::InvalidArgument("image dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(VisionError::InvalidArgument(format!(
                "expected {} values for {channels}x{height}x{width}, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    /// Builds an image by evaluating `f(channel, y, x)` at every sample.
    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<(), VisionError> {
        if self.shape() != other.shape() {
            return Err(VisionError::Shape { left: self.shape(), right: other.shape() });
        }
        Ok(())
    }

    /// Luma (Rec. 601) for RGB, identity for one channel, channel mean otherwise.
    pub fn to_gray(&self) -> Vec<f64> {
        let n = self.height * self.width;
        match self.channels {
            1 => self.data.clone(),
            3 => (0..n).map(|i| 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i]).collect(),
            c => (0..n).map(|i| (0..c).map(|k| self.data[k * n + i]).sum::<f64>() / c as f64).collect(),
        }
    }

    /// Bilinear sample of channel `c` at continuous pixel coordinates
    /// (pixel centres at integers), clamped to the border.
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f64 {
        bilinear(self.plane(c), self.width, self.height, x, y)
    }

    /// Rounds to 8 bits and writes an RGB (three channels) or grayscale (one
    /// channel) PNG.
    pub fn write_png(&self, path: &Path) -> Result<(), VisionError> {
        let (w, h) = (self.width as u32, self.height as u32);
        let n = self.height * self.width;
        let result = match self.channels {
            1 => GrayImage::from_fn(w, h, |x, y| image::Luma([to_u8(self.data[(y * w + x) as usize])])).save(path),
            3 => RgbImage::from_fn(w, h, |x, y| {
                let i = (y * w + x) as usize;
                image::Rgb([to_u8(self.data[i]), to_u8(self.data[n + i]), to_u8(self.data[2 * n + i])])
            })
            .save(path),
            c => return Err(VisionError::InvalidArgument(format!("cannot write a {c}-channel PNG"))),
        };
        result.map_err(|source| VisionError::Png { path: path.to_path_buf(), source })
    }

    /// Reads an 8-bit PNG as RGB in `[0, 1]`; alpha is dropped.
    pub fn read_png(path: &Path) -> Result<Self, VisionError> {
        let img = image::open(path).map_err(|source| VisionError::Png { path: path.to_path_buf(), source })?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let n = w * h;
        let mut data = vec![0.0; 3 * n];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = px.0[c] as f64 / 255.0;
            }
        }
        Image::new(3, h, w, data)
    }
}

/// Foreground mask, row-major `H x W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self, VisionError> {
        if data.len() != height * width {
            return Err(VisionError::InvalidArgument(format!(
                "mask of {height}x{width} needs {} entries, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn write_png(&self, path: &Path) -> Result<(), VisionError> {
        let w = self.width as u32;
        GrayImage::from_fn(w, self.height as u32, |x, y| image::Luma([if self.data[(y * w + x) as usize] { 255 } else { 0 }]))
            .save(path)
            .map_err(|source| VisionError::Png { path: path.to_path_buf(), source })
    }

    /// Any nonzero luma counts as foreground.
    pub fn read_png(path: &Path) -> Result<Self, VisionError> {
        let img = image::open(path).map_err(|source| VisionError::Png { path: path.to_path_buf(), source })?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Mask::new(h, w, img.pixels().map(|p| p.0[0] > 0).collect())
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn bilinear(plane: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = plane[y0 * width + x0] * (1.0 - fx) + plane[y0 * width + x1] * fx;
    let bottom = plane[y1 * width + x0] * (1.0 - fx) + plane[y1 * width + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Smooth two-colour checkerboard `0.5 + 0.5 tanh(sin(pi x / cell) sin(pi y / cell) / softness)`
/// evaluated at `(x - dx, y - dy)`, so shifted copies are exact translates
/// with no border fill.
pub fn checkerboard(height: usize, width: usize, cell: f64, softness: f64, dx: f64, dy: f64) -> Image {
    use std::f64::consts::PI;
    let gray: Vec<f64> = (0..height * width)
        .map(|i| {
            let x = (i % width) as f64 - dx;
            let y = (i / width) as f64 - dy;
            0.5 + 0.5 * ((PI * x / cell).sin() * (PI * y / cell).sin() / softness).tanh()
        })
        .collect();
    let (a, b) = ([0.1, 0.2, 0.6], [0.9, 0.8, 0.3]);
    Image::from_fn(3, height, width, |c, y, x| {
        let w = gray[y * width + x];
        a[c] * (1.0 - w) + b[c] * w
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_of_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(3, 5, 7, |c, y, x| ((c * 35 + y * 7 + x) % 256) as f64 / 255.0);
        img.write_png(&path).unwrap();
        assert_eq!(Image::read_png(&path).unwrap(), img);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = Mask::new(3, 4, (0..12).map(|i| i % 3 == 0).collect()).unwrap();
        m.write_png(&path).unwrap();
        assert_eq!(Mask::read_png(&path).unwrap(), m);
        assert_eq!(m.count(), 4);
    }

    #[test]
    fn bilinear_hits_samples_and_midpoints() {
        let p = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(bilinear(&p, 2, 2, 1.0, 1.0), 3.0);
        assert_eq!(bilinear(&p, 2, 2, 0.5, 0.5), 1.5);
        assert_eq!(bilinear(&p, 2, 2, -4.0, 9.0), 2.0);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(Image::new(3, 2, 2, vec![0.0; 11]).is_err());
        assert!(Mask::new(2, 2, vec![true; 3]).is_err());
    }

    #[test]
    fn checkerboard_shift_is_translation() {
        let a = checkerboard(32, 32, 8.0, 0.3, 0.0, 0.0);
        let b = checkerboard(32, 32, 8.0, 0.3, 3.0, 0.0);
        for y in 0..32 {
            for x in 3..32 {
                assert_eq!(b.get(0, y, x), a.get(0, y, x - 3));
            }
        }
    }
}

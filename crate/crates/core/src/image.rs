use alloc::vec;
use alloc::vec::Vec;

/// Row-major interleaved RGB image with `f64` samples, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("expected {expected} samples for the image, got {got}")]
pub struct ImageSizeError {
    pub expected: usize,
    pub got: usize,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(3 * n);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Result<Self, ImageSizeError> {
        let expected = 3 * width as usize * height as usize;
        if data.len() != expected {
            return Err(ImageSizeError {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f64; 3]) -> Self {
        let mut data = vec![0.0; 3 * width as usize * height as usize];
        for y in 0..height {
            for x in 0..width {
                let i = 3 * (y as usize * width as usize + x as usize);
                data[i..i + 3].copy_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Top `rows` rows as a new image.
    pub fn crop_rows(&self, rows: u32) -> Image {
        let rows = rows.min(self.height);
        let n = 3 * rows as usize * self.width as usize;
        Image {
            width: self.width,
            height: rows,
            data: self.data[..n].to_vec(),
        }
    }

    /// Columns rotated so that column `x` moves to `(x + shift) mod width`.
    pub fn roll_columns(&self, shift: i64) -> Image {
        let w = self.width as i64;
        Image::from_fn(self.width, self.height, |x, y| {
            let src = (x as i64 - shift).rem_euclid(w) as u32;
            self.pixel(src, y)
        })
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_size(other), "image sizes differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

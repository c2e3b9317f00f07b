//! Grayscale images with intensities in [0, 1].

use tgfuse_autodiff::{Scalar, Tensor};

use crate::error::{FuseError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// Row-major.
    pixels: Vec<f64>,
}

/// Original extent of a padded image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub width: usize,
    pub height: usize,
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(FuseError::input(format!(
                "{width}x{height} image with {} pixels",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| self.at(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| self.at(x, self.height - 1 - y))
    }

    /// Nearest 8-bit level of each pixel.
    pub fn levels(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| to_level(v)).collect()
    }

    /// Reflect-pads the right and bottom edges up to multiples of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> (Image, Crop) {
        let m = m.max(1);
        let (w, h) = (self.width.next_multiple_of(m), self.height.next_multiple_of(m));
        let padded = Image::from_fn(w, h, |x, y| {
            self.at(reflect(x, self.width), reflect(y, self.height))
        });
        let crop = Crop {
            width: self.width,
            height: self.height,
        };
        (padded, crop)
    }

    pub fn crop(&self, c: Crop) -> Image {
        let (w, h) = (c.width.min(self.width), c.height.min(self.height));
        Image::from_fn(w, h, |x, y| self.at(x, y))
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        stack(&[self])
    }

    /// Image `index` of a `[b, 1, h, w]` tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Image> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 1 || index >= s[0] {
            return Err(FuseError::input(format!("no image {index} in tensor of shape {s:?}")));
        }
        let n = s[2] * s[3];
        let pixels = t.data()[index * n..(index + 1) * n]
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        Image::new(s[3], s[2], pixels)
    }
}

pub fn to_level(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Stacks equally sized images into `[b, 1, h, w]`.
pub fn stack<T: Scalar>(images: &[&Image]) -> Tensor<T> {
    let (w, h) = (images[0].width, images[0].height);
    assert!(images.iter().all(|i| i.width == w && i.height == h), "stacked images differ in size");
    let data = images
        .iter()
        .flat_map(|i| i.pixels.iter().map(|&v| T::from_f64_lossy(v)))
        .collect();
    Tensor::new(&[images.len(), 1, h, w], data).expect("non-empty stack")
}

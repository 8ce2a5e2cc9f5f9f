use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Single-channel image with intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::dim("Image::new", &[height, width], &[pixels.len()]));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|p| (0.0..=1.0).contains(p))
    }

    /// `[1 × height × width]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.pixels.iter().map(|&p| T::from_f64_lossy(f64::from(p))).collect();
        Tensor::new(&[1, self.height, self.width], data).expect("consistent image shape")
    }

    /// Accepts `[H × W]` or `[1 × H × W]` tensors.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = match t.shape() {
            [h, w] | [1, h, w] => (*h, *w),
            other => return Err(Error::dim("Image::from_tensor", other, &[1, 0, 0])),
        };
        Self::new(w, h, t.data().iter().map(|x| x.as_f64() as f32).collect())
    }
}

/// An image paired with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: u8,
}

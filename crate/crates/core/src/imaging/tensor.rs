use ndarray::{Array3, Zip};

use crate::error::{Error, Result};

/// A `C×H×W` raster of intensities, nominally in `[0, 1]`.
///
/// Values are not clamped on construction: intermediate results (residuals,
/// gradients) reuse the type. Operations that produce displayable images
/// clip explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("empty image {c}x{h}x{w}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data".into()));
        }
        Ok(ImageTensor { data })
    }

    pub(crate) fn from_array_unchecked(data: Array3<f64>) -> Self {
        ImageTensor { data }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Self {
        ImageTensor {
            data: Array3::from_elem((channels, height, width), value),
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl FnMut((usize, usize, usize)) -> f64) -> Self {
        ImageTensor {
            data: Array3::from_shape_fn((channels, height, width), f),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[[c, y, x]]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ImageTensor) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clipped(&self) -> ImageTensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            data: self.data.mapv(f),
        }
    }

    pub fn scaled(&self, k: f64) -> ImageTensor {
        self.map(|v| v * k)
    }

    pub fn same_dims(&self, other: &ImageTensor) -> bool {
        self.dim() == other.dim()
    }

    pub fn check_same_dims(&self, other: &ImageTensor, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::shape(format!("{what}: {:?} vs {:?}", self.dim(), other.dim())))
        }
    }

    /// `a·self + b·other`, elementwise.
    pub fn axpby(&self, a: f64, other: &ImageTensor, b: f64) -> Result<ImageTensor> {
        self.check_same_dims(other, "linear combination")?;
        let mut out = self.data.clone();
        Zip::from(&mut out)
            .and(&other.data)
            .for_each(|o, &q| *o = a * *o + b * q);
        Ok(ImageTensor { data: out })
    }

    pub fn add(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.axpby(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.axpby(1.0, other, -1.0)
    }

    /// Copies the window `[top, top+h) × [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<ImageTensor> {
        if top + h > self.height() || left + w > self.width() || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "crop {h}x{w} at ({top},{left}) outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        let view = self.data.slice(ndarray::s![.., top..top + h, left..left + w]);
        Ok(ImageTensor { data: view.to_owned() })
    }
}

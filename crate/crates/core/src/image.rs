//! Planar image and perturbation containers.
//!
//! Pixels are stored channel-major (`[channel][row][col]`), so each channel
//! is one contiguous plane. All attack code works on that flat layout.

use crate::error::{check_len, Error, Result};

/// Channel count and spatial extent of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    /// Total number of scalar values.
    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels in a single channel plane.
    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// An image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    /// Wraps `data`, checking its length and that every pixel lies in `[0, 1]`.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        check_len(shape.len(), data.len())?;
        if shape.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { shape, data })
    }

    /// Builds an image from arbitrary values, clipping each into `[0, 1]`.
    pub fn clipped(shape: Shape, mut data: Vec<f64>) -> Result<Self> {
        check_len(shape.len(), data.len())?;
        if shape.is_empty() {
            return Err(Error::Empty);
        }
        clip_unit(&mut data);
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The `c`-th channel plane.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// `self + delta`, clipped into the pixel box.
    pub fn perturbed(&self, delta: &Perturbation) -> Result<Image> {
        check_len(self.len(), delta.len())?;
        let data = self.data.iter().zip(delta.as_slice()).map(|(x, d)| x + d).collect();
        Image::clipped(self.shape, data)
    }

    /// `self - base` as a perturbation.
    pub fn difference(&self, base: &Image) -> Result<Perturbation> {
        check_len(base.len(), self.len())?;
        let data = self.data.iter().zip(&base.data).map(|(a, b)| a - b).collect();
        Ok(Perturbation { shape: self.shape, data })
    }
}

/// An additive perturbation with the same layout as the image it applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    shape: Shape,
    data: Vec<f64>,
}

impl Perturbation {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        check_len(shape.len(), data.len())?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub(crate) fn clip_unit(values: &mut [f64]) {
    for v in values {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Replaces `delta` by `clip(x + delta, [0,1]) - x`.
pub(crate) fn project_to_box(x: &[f64], delta: &mut [f64]) {
    for (d, &xi) in delta.iter_mut().zip(x) {
        *d = (xi + *d).clamp(0.0, 1.0) - xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        let shape = Shape::new(1, 1, 2);
        assert!(Image::new(shape, vec![0.0, 1.5]).is_err());
        assert!(Image::new(shape, vec![0.0]).is_err());
        let img = Image::clipped(shape, vec![-0.2, 1.5]).unwrap();
        assert_eq!(img.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn channel_planes_are_contiguous() {
        let img = Image::new(Shape::new(2, 1, 2), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(img.channel(1), &[0.3, 0.4]);
    }

    #[test]
    fn box_projection_keeps_sum_in_unit_interval() {
        let x = [0.2, 0.9, 0.5];
        let mut d = [-0.5, 0.5, 0.1];
        project_to_box(&x, &mut d);
        assert!((d[0] + 0.2).abs() < 1e-15);
        assert!((d[1] - 0.1).abs() < 1e-12);
        assert!((d[2] - 0.1).abs() < 1e-15);
    }
}

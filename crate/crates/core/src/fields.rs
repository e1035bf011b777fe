//! Dense row-major grids and the sampling primitives built on them.
//!
//! Layout is fixed crate-wide: `Field2D` is row-major, `Field3D` is
//! channel-major then row-major. Integer coordinate `(row, col)` addresses the
//! center of that cell.

use crate::scalar::Scalar;
use crate::{Error, Result};

/// A single-channel dense grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2D<S = f64> {
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> Field2D<S> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, S::zero())
    }

    pub fn filled(height: usize, width: usize, value: S) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Builds a field from row-major data; rejects wrong lengths and non-finite values.
    pub fn from_vec(height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "Field2D {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Field2D data"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
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

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> S {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: S) {
        self.data[row * self.width + col] = value;
    }

    /// Value at a signed cell index; zero outside the grid.
    #[inline]
    pub fn get_or_zero(&self, row: i64, col: i64) -> S {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            S::zero()
        } else {
            self.get(row as usize, col as usize)
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn cast<T: Scalar>(&self) -> Field2D<T> {
        Field2D {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    pub(crate) fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// A multi-channel dense grid, channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field3D<S = f64> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> Field3D<S> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![S::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "Field3D {channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Field3D data"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Stacks equally shaped single-channel fields.
    pub fn from_channels(channels: &[Field2D<S>]) -> Result<Self> {
        let first = channels.first().ok_or(Error::Empty("channel list"))?;
        let (height, width) = first.shape();
        let mut data = Vec::with_capacity(channels.len() * height * width);
        for ch in channels {
            first.check_same_shape(ch, "Field3D::from_channels")?;
            data.extend_from_slice(ch.as_slice());
        }
        Ok(Self {
            channels: channels.len(),
            height,
            width,
            data,
        })
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

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> S {
        self.data[self.index(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: S) {
        let i = self.index(channel, row, col);
        self.data[i] = value;
    }

    #[inline]
    pub fn add_at(&mut self, channel: usize, row: usize, col: usize, value: S) {
        let i = self.index(channel, row, col);
        self.data[i] += value;
    }

    pub fn channel_slice(&self, channel: usize) -> &[S] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn channel_slice_mut(&mut self, channel: usize) -> &mut [S] {
        let n = self.plane_len();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn channel(&self, channel: usize) -> Field2D<S> {
        Field2D {
            height: self.height,
            width: self.width,
            data: self.channel_slice(channel).to_vec(),
        }
    }

    /// Elementwise in-place addition of an equally shaped field.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "Field3D add: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: S) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| *v * factor).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Field3D<T> {
        Field3D {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

impl<S: Scalar> From<Field2D<S>> for Field3D<S> {
    fn from(field: Field2D<S>) -> Self {
        Field3D {
            channels: 1,
            height: field.height,
            width: field.width,
            data: field.data,
        }
    }
}

/// A time-ordered sequence of equally shaped `Field3D`s.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSeq<S = f64> {
    elements: Vec<Field3D<S>>,
}

impl<S: Scalar> FieldSeq<S> {
    pub fn new(elements: Vec<Field3D<S>>) -> Result<Self> {
        if let Some(first) = elements.first() {
            if let Some(bad) = elements.iter().find(|e| e.shape() != first.shape()) {
                return Err(Error::Shape(format!(
                    "FieldSeq elements differ: {:?} vs {:?}",
                    first.shape(),
                    bad.shape()
                )));
            }
        }
        Ok(Self { elements })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[Field3D<S>] {
        &self.elements
    }

    pub fn into_elements(self) -> Vec<Field3D<S>> {
        self.elements
    }

    pub fn get(&self, t: usize) -> &Field3D<S> {
        &self.elements[t]
    }
}

/// Bilinear interpolation at continuous cell coordinate `(x = column, y = row)`.
///
/// Neighbors outside the grid read as zero.
pub fn bilinear_sample<S: Scalar>(field: &Field2D<S>, x: S, y: S) -> Result<S> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite("bilinear_sample coordinate"));
    }
    Ok(bilinear_unchecked(field.as_slice(), field.height, field.width, x, y))
}

#[inline]
pub(crate) fn bilinear_unchecked<S: Scalar>(
    data: &[S],
    height: usize,
    width: usize,
    x: S,
    y: S,
) -> S {
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    // Coordinates far outside the grid saturate; every neighbor is then zero.
    let (Some(x0), Some(y0)) = (x0f.to_i64(), y0f.to_i64()) else {
        return S::zero();
    };
    let read = |row: i64, col: i64| -> S {
        if row < 0 || col < 0 || row as usize >= height || col as usize >= width {
            S::zero()
        } else {
            data[row as usize * width + col as usize]
        }
    };
    let one = S::one();
    let mut acc = read(y0, x0) * (one - fx) * (one - fy);
    if fx != S::zero() {
        acc += read(y0, x0 + 1) * fx * (one - fy);
    }
    if fy != S::zero() {
        acc += read(y0 + 1, x0) * (one - fx) * fy;
        if fx != S::zero() {
            acc += read(y0 + 1, x0 + 1) * fx * fy;
        }
    }
    acc
}

/// Max-subtracted softmax.
pub fn softmax<S: Scalar>(values: &[S]) -> Result<Vec<S>> {
    if values.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    Ok(softmax_unchecked(values))
}

pub(crate) fn softmax_unchecked<S: Scalar>(values: &[S]) -> Vec<S> {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = values.iter().map(|v| (*v - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln Σ exp(v)`, stabilized.
pub(crate) fn log_sum_exp<S: Scalar>(values: &[S]) -> S {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    let total: S = values.iter().map(|v| (*v - max).exp()).sum();
    max + total.ln()
}

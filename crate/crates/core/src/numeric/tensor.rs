use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array of arbitrary rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{n} values for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", self.data.len(), format!("{shape:?}")));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape("item", "1 element", self.data.len())),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_assign",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }
}

/// A `channels x length` map of real samples, row-major by channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    length: usize,
    values: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, length: usize, values: Vec<T>) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::shape(
                "FeatureMap::new",
                "positive channels and length",
                format!("{channels}x{length}"),
            ));
        }
        if values.len() != channels * length {
            return Err(Error::shape(
                "FeatureMap::new",
                format!("{} values ({channels}x{length})", channels * length),
                values.len(),
            ));
        }
        Ok(Self {
            channels,
            length,
            values,
        })
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Self {
            channels,
            length,
            values: vec![T::zero(); channels * length],
        }
    }

    /// Single-channel map over a sample slice.
    pub fn from_signal(samples: &[T]) -> Result<Self> {
        Self::new(1, samples.len(), samples.to_vec())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.values[c * self.length..(c + 1) * self.length]
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.channels, self.length)
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Tensor {
            shape: vec![self.channels, self.length],
            data: self.values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Channel-wise concatenation `[a; b]`.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if a.length != b.length {
            return Err(Error::shape("concat_channels", a.shape_str(), b.shape_str()));
        }
        let mut values = Vec::with_capacity(a.values.len() + b.values.len());
        values.extend_from_slice(&a.values);
        values.extend_from_slice(&b.values);
        Ok(Self {
            channels: a.channels + b.channels,
            length: a.length,
            values,
        })
    }
}

impl<T: Scalar> TryFrom<Tensor<T>> for FeatureMap<T> {
    type Error = Error;

    fn try_from(t: Tensor<T>) -> Result<Self> {
        match *t.shape() {
            [c, l] => FeatureMap::new(c, l, t.into_data()),
            [l] => FeatureMap::new(1, l, t.into_data()),
            _ => Err(Error::shape(
                "FeatureMap::try_from",
                "rank 1 or 2",
                format!("{:?}", t.shape()),
            )),
        }
    }
}

/// Inner product of two equally sized slices, accumulated left to right.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

use crate::error::{Error, Result};
use crate::numeric::tensor::FeatureMap;
use crate::scalar::Scalar;

/// `x^q` by repeated multiplication (no `powi`, so results are reproducible).
#[inline]
pub(crate) fn pow_n<T: Scalar>(x: T, q: usize) -> T {
    let mut acc = x;
    for _ in 1..q {
        acc *= x;
    }
    acc
}

pub(crate) fn power_slice<T: Scalar>(x: &[T], q: usize) -> Vec<T> {
    x.iter().map(|&v| pow_n(v, q)).collect()
}

/// Elementwise `x^q`, `q >= 1`.
pub fn elementwise_power<T: Scalar>(x: &FeatureMap<T>, q: usize) -> Result<FeatureMap<T>> {
    if q == 0 {
        return Err(Error::InvalidArgument("power order q must be >= 1".into()));
    }
    FeatureMap::new(x.channels(), x.length(), power_slice(x.values(), q))
}

pub fn tanh_activation<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let values = x.values().iter().map(|v| v.tanh()).collect();
    FeatureMap::new(x.channels(), x.length(), values).expect("shape preserved")
}

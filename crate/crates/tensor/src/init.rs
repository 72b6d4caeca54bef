//! Parameter initializers.

use rand::Rng;

use crate::array::NdArray;
use crate::real::Real;

pub fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> NdArray<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound))).collect();
    NdArray::new(shape.to_vec(), data).expect("shape and length agree")
}

/// He-style uniform bound `sqrt(6 / fan_in)` for layers followed by ReLU.
pub fn fan_in_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> NdArray<T> {
    uniform(shape, (6.0 / fan_in.max(1) as f64).sqrt(), rng)
}

pub fn zeros<T: Real>(shape: &[usize]) -> NdArray<T> {
    NdArray::zeros(shape)
}

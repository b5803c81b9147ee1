use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Scalar;

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot/Xavier uniform with the given fan-in and fan-out.
    Xavier { fan_in: usize, fan_out: usize },
    Normal { std: f64 },
}

impl Init {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(self, shape: (usize, usize), rng: &mut R) -> Array2<T> {
        match self {
            Init::Zeros => Array2::zeros(shape),
            Init::Ones => Array2::ones(shape),
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Array2::from_shape_simple_fn(shape, || T::from_f64_lossy(dist.sample(rng)))
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
                Array2::from_shape_simple_fn(shape, || T::from_f64_lossy(dist.sample(rng)))
            }
        }
    }
}

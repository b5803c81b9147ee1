use ndarray::Array2;
use rand::Rng;

use super::Scalar;

/// Inverted-dropout mask; `None` means the layer acted as identity.
pub type DropMask<T> = Option<Array2<T>>;

/// Applies inverted dropout with keep-scaling `1/(1-rate)`. A zero rate or a
/// missing generator (evaluation) returns the input untouched.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    x: Array2<T>,
    rate: f64,
    rng: Option<&mut R>,
) -> (Array2<T>, DropMask<T>) {
    let rng = match rng {
        Some(r) if rate > 0.0 => r,
        _ => return (x, None),
    };
    let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask = Array2::from_shape_simple_fn(x.dim(), || {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            scale
        }
    });
    (x * &mask, Some(mask))
}

pub fn dropout_backward<T: Scalar>(mask: &DropMask<T>, dy: Array2<T>) -> Array2<T> {
    match mask {
        Some(m) => dy * m,
        None => dy,
    }
}

use ndarray::{Array2, Axis};
use rand::Rng;

use super::{Grads, Init, ParamId, ParamStore, Scalar};

/// Affine map `y = x·W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = Init::Xavier {
            fan_in: d_in,
            fan_out: d_out,
        }
        .sample((d_in, d_out), rng);
        Self {
            weight: store.register(format!("{prefix}.weight"), w),
            bias: store.register(format!("{prefix}.bias"), Array2::zeros((1, d_out))),
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Array2<T>) -> Array2<T> {
        x.dot(store.get(self.weight)) + store.get(self.bias)
    }

    /// Accumulates `dW`, `db` and returns `dx`. `x` is the forward input.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Array2<T>,
        dy: &Array2<T>,
        grads: &mut Grads<T>,
    ) -> Array2<T> {
        let w = store.get(self.weight);
        let dw = grads.slot(self.weight, w.dim());
        ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), dw);
        let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.add(self.bias, db.view());
        dy.dot(&w.t())
    }
}

use ndarray::{Array1, Array2, Axis, Zip};

use super::{Grads, ParamId, ParamStore, Scalar};

const EPS: f64 = 1e-5;

/// Layer normalisation over the feature axis with learned scale and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub struct NormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl LayerNorm {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Self {
        Self {
            gamma: store.register(format!("{prefix}.gamma"), Array2::ones((1, dim))),
            beta: store.register(format!("{prefix}.beta"), Array2::zeros((1, dim))),
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }

    /// Normalised rows before the affine step, exposed for tests.
    pub fn standardize<T: Scalar>(x: &Array2<T>) -> (Array2<T>, Array1<T>) {
        let d = T::from_usize(x.ncols()).unwrap();
        let eps = T::from_f64_lossy(EPS);
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / d;
            *inv = T::one() / (var + eps).sqrt();
            let s = *inv;
            row.mapv_inplace(|v| v * s);
        }
        (xhat, inv_std)
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Array2<T>) -> (Array2<T>, NormCache<T>) {
        let (xhat, inv_std) = Self::standardize(x);
        let y = &xhat * store.get(self.gamma) + store.get(self.beta);
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &NormCache<T>,
        dy: &Array2<T>,
        grads: &mut Grads<T>,
    ) -> Array2<T> {
        let gamma = store.get(self.gamma);
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.add(self.gamma, dgamma.view());
        let dbeta = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.add(self.beta, dbeta.view());

        let dxhat = dy * gamma;
        let d = T::from_usize(dy.ncols()).unwrap();
        let mut dx = Array2::zeros(dy.dim());
        Zip::from(dx.rows_mut())
            .and(dxhat.rows())
            .and(cache.xhat.rows())
            .and(&cache.inv_std)
            .for_each(|mut out, g, xh, &inv| {
                let sum_g = g.sum();
                let sum_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
                for ((o, &gi), &xi) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
                    *o = inv / d * (d * gi - sum_g - xi * sum_gx);
                }
            });
        dx
    }
}

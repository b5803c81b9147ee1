use ndarray::Array2;
use rand::Rng;

use super::{Grads, Linear, ParamId, ParamStore, Scalar};

/// Position-wise feed-forward network `D → D_ff → D` with a ReLU in between.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

pub struct FfnCache<T> {
    x: Array2<T>,
    hidden: Array2<T>,
}

impl FeedForward {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            up: Linear::register(store, &format!("{prefix}.up"), d_model, d_ff, rng),
            down: Linear::register(store, &format!("{prefix}.down"), d_ff, d_model, rng),
        }
    }

    pub fn params(&self) -> [ParamId; 4] {
        let [a, b] = self.up.params();
        let [c, d] = self.down.params();
        [a, b, c, d]
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Array2<T>) -> (Array2<T>, FfnCache<T>) {
        let hidden = self.up.forward(store, x).mapv_into(|v| v.max(T::zero()));
        let y = self.down.forward(store, &hidden);
        (
            y,
            FfnCache {
                x: x.clone(),
                hidden,
            },
        )
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &FfnCache<T>,
        dy: &Array2<T>,
        grads: &mut Grads<T>,
    ) -> Array2<T> {
        let mut dh = self.down.backward(store, &cache.hidden, dy, grads);
        ndarray::Zip::from(&mut dh)
            .and(&cache.hidden)
            .for_each(|g, &h| {
                if h <= T::zero() {
                    *g = T::zero();
                }
            });
        self.up.backward(store, &cache.x, &dh, grads)
    }
}

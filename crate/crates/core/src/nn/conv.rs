use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Grads, Init, ParamId, ParamStore, Scalar};

/// Channel mixing of the temporal convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvLayout {
    /// Every output channel sees every input channel: kernel `k·D × D`.
    #[default]
    Full,
    /// One filter per channel: kernel `k × D`.
    Depthwise,
}

/// Causal 1-D convolution along the sequence axis with `k − 1` left padding,
/// so output row `t` depends on input rows `t−k+1 ..= t` only.
///
/// The full kernel is stored as a `k·D × D` matrix whose `s`-th `D × D` block
/// multiplies input row `t − (k−1) + s`.
#[derive(Clone, Copy, Debug)]
pub struct CausalConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub layout: ConvLayout,
}

pub enum ConvCache<T> {
    Full { cols: Array2<T> },
    Depthwise { x: Array2<T> },
}

impl CausalConv {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        kernel: usize,
        layout: ConvLayout,
        rng: &mut R,
    ) -> Self {
        let w = match layout {
            ConvLayout::Full => Init::Xavier {
                fan_in: kernel * dim,
                fan_out: dim,
            }
            .sample((kernel * dim, dim), rng),
            ConvLayout::Depthwise => Init::Xavier {
                fan_in: kernel,
                fan_out: 1,
            }
            .sample((kernel, dim), rng),
        };
        Self {
            weight: store.register(format!("{prefix}.weight"), w),
            bias: store.register(format!("{prefix}.bias"), Array2::zeros((1, dim))),
            kernel,
            layout,
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    /// Row `t` of the result holds `[x_{t−k+1}, …, x_t]`, zero-filled before the start.
    fn unfold<T: Scalar>(&self, x: &Array2<T>) -> Array2<T> {
        let (len, dim) = x.dim();
        let k = self.kernel;
        let mut cols = Array2::zeros((len, k * dim));
        for t in 0..len {
            for s in 0..k {
                let src = t as isize - (k as isize - 1) + s as isize;
                if src >= 0 {
                    cols.slice_mut(s![t, s * dim..(s + 1) * dim])
                        .assign(&x.row(src as usize));
                }
            }
        }
        cols
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Array2<T>) -> (Array2<T>, ConvCache<T>) {
        let w = store.get(self.weight);
        let b = store.get(self.bias);
        match self.layout {
            ConvLayout::Full => {
                let cols = self.unfold(x);
                let y = cols.dot(w) + b;
                (y, ConvCache::Full { cols })
            }
            ConvLayout::Depthwise => {
                let (len, _) = x.dim();
                let k = self.kernel;
                let mut y = Array2::zeros(x.dim());
                for t in 0..len {
                    let mut row = y.row_mut(t);
                    row.assign(&b.row(0));
                    for s in 0..k {
                        let src = t as isize - (k as isize - 1) + s as isize;
                        if src >= 0 {
                            row.zip_mut_with(&(&x.row(src as usize) * &w.row(s)), |a, &v| *a += v);
                        }
                    }
                }
                (y, ConvCache::Depthwise { x: x.clone() })
            }
        }
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &ConvCache<T>,
        dy: &Array2<T>,
        grads: &mut Grads<T>,
    ) -> Array2<T> {
        let w = store.get(self.weight);
        let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.add(self.bias, db.view());
        let (len, dim) = dy.dim();
        let k = self.kernel;
        let mut dx = Array2::zeros((len, dim));
        match cache {
            ConvCache::Full { cols } => {
                let dw = grads.slot(self.weight, w.dim());
                ndarray::linalg::general_mat_mul(T::one(), &cols.t(), dy, T::one(), dw);
                let dcols = dy.dot(&w.t());
                for t in 0..len {
                    for s in 0..k {
                        let src = t as isize - (k as isize - 1) + s as isize;
                        if src >= 0 {
                            let mut row = dx.row_mut(src as usize);
                            row += &dcols.slice(s![t, s * dim..(s + 1) * dim]);
                        }
                    }
                }
            }
            ConvCache::Depthwise { x } => {
                let mut dw = Array2::zeros(w.dim());
                for t in 0..len {
                    for s in 0..k {
                        let src = t as isize - (k as isize - 1) + s as isize;
                        if src >= 0 {
                            let src = src as usize;
                            let g = dy.row(t);
                            dw.row_mut(s).zip_mut_with(&(&g * &x.row(src)), |a, &v| *a += v);
                            dx.row_mut(src).zip_mut_with(&(&g * &w.row(s)), |a, &v| *a += v);
                        }
                    }
                }
                grads.add(self.weight, dw.view());
            }
        }
        dx
    }
}

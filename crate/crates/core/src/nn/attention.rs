use ndarray::{s, Array2};
use rand::Rng;

use super::{Grads, Linear, ParamId, ParamStore, Scalar};

/// Multi-head scaled dot-product attention with a causal and key-padding mask.
///
/// Query row `t` may attend key `j` only when `j ≤ t` and `valid[j]`. Queries
/// and keys are aligned one-to-one with sequence positions, which also holds
/// for decoder cross-attention onto the encoder states. A query row with no
/// admissible key produces a zero context vector.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

pub struct AttentionCache<T> {
    xq: Array2<T>,
    xkv: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// Per-head row-stochastic attention weights, `L × L`.
    probs: Vec<Array2<T>>,
    context: Array2<T>,
}

impl<T: Scalar> AttentionCache<T> {
    pub fn weights(&self, head: usize) -> &Array2<T> {
        &self.probs[head]
    }
}

impl MultiHeadAttention {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && d_model % heads == 0, "d_model must be divisible by heads");
        Self {
            query: Linear::register(store, &format!("{prefix}.query"), d_model, d_model, rng),
            key: Linear::register(store, &format!("{prefix}.key"), d_model, d_model, rng),
            value: Linear::register(store, &format!("{prefix}.value"), d_model, d_model, rng),
            output: Linear::register(store, &format!("{prefix}.output"), d_model, d_model, rng),
            heads,
        }
    }

    pub fn params(&self) -> [ParamId; 8] {
        let [a, b] = self.query.params();
        let [c, d] = self.key.params();
        let [e, f] = self.value.params();
        let [g, h] = self.output.params();
        [a, b, c, d, e, f, g, h]
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        xq: &Array2<T>,
        xkv: &Array2<T>,
        valid: &[bool],
    ) -> (Array2<T>, AttentionCache<T>) {
        let (len, d_model) = xq.dim();
        assert_eq!(xkv.nrows(), len, "query and key lengths must match");
        assert_eq!(valid.len(), len, "mask length must match sequence length");
        let q = self.query.forward(store, xq);
        let k = self.key.forward(store, xkv);
        let v = self.value.forward(store, xkv);
        let dh = d_model / self.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();

        let mut context = Array2::zeros((len, d_model));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut p = qh.dot(&kh.t());
            for t in 0..len {
                let mut row = p.row_mut(t);
                let mut max = T::neg_infinity();
                for j in 0..len {
                    if j <= t && valid[j] {
                        row[j] *= scale;
                        max = max.max(row[j]);
                    }
                }
                if max == T::neg_infinity() {
                    row.fill(T::zero());
                    continue;
                }
                let mut total = T::zero();
                for j in 0..len {
                    if j <= t && valid[j] {
                        row[j] = (row[j] - max).exp();
                        total += row[j];
                    } else {
                        row[j] = T::zero();
                    }
                }
                row.mapv_inplace(|x| x / total);
            }
            context.slice_mut(cols).assign(&p.dot(&vh));
            probs.push(p);
        }
        let y = self.output.forward(store, &context);
        (
            y,
            AttentionCache {
                xq: xq.clone(),
                xkv: xkv.clone(),
                q,
                k,
                v,
                probs,
                context,
            },
        )
    }

    /// Returns `(dxq, dxkv)`. For self-attention the caller adds both.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &AttentionCache<T>,
        dy: &Array2<T>,
        grads: &mut Grads<T>,
    ) -> (Array2<T>, Array2<T>) {
        let (len, d_model) = dy.dim();
        let dh = d_model / self.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let dcontext = self.output.backward(store, &cache.context, dy, grads);

        let mut dq = Array2::zeros((len, d_model));
        let mut dk = Array2::zeros((len, d_model));
        let mut dv = Array2::zeros((len, d_model));
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &cache.probs[h];
            let dctx = dcontext.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dctx));
            let dp = dctx.dot(&cache.v.slice(cols).t());
            // softmax backward: dS = P ⊙ (dP − rowsum(dP ⊙ P))
            let mut ds = Array2::zeros((len, len));
            for t in 0..len {
                let pr = p.row(t);
                let dpr = dp.row(t);
                let dot: T = pr.iter().zip(dpr.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..len {
                    ds[[t, j]] = pr[j] * (dpr[j] - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let dxq = self.query.backward(store, &cache.xq, &dq, grads);
        let dxkv = self.key.backward(store, &cache.xkv, &dk, grads)
            + self.value.backward(store, &cache.xkv, &dv, grads);
        (dxq, dxkv)
    }
}

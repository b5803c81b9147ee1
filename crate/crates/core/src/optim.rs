//! Adam with per-parameter step counts and the Noam warmup schedule.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::nn::{Grads, ParamStore};

/// `lr(s) = factor · D^-0.5 · min(s^-0.5, s · warmup^-1.5)`, with `factor`
/// chosen so the peak at `s = warmup` equals `peak_lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Noam {
    pub peak_lr: f64,
    pub dim: usize,
    pub warmup: u64,
}

impl Noam {
    pub fn factor(&self) -> f64 {
        self.peak_lr * (self.dim as f64).sqrt() * (self.warmup as f64).sqrt()
    }

    /// Rate for 1-based step `step`; step 0 is treated as 1.
    pub fn rate(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.factor() * (self.dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub(crate) m: Vec<Option<Array2<f32>>>,
    pub(crate) v: Vec<Option<Array2<f32>>>,
    pub(crate) steps: Vec<u64>,
}

impl Adam {
    pub fn new(params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![None; params],
            v: vec![None; params],
            steps: vec![0; params],
        }
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    /// Updates every parameter `grads` touched. Untouched parameters keep
    /// their values and moment estimates.
    pub fn update(&mut self, store: &mut ParamStore<f32>, grads: &Grads<f32>, lr: f64) {
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let eps = self.eps as f32;
        for id in grads.touched() {
            let g = grads.get(id).expect("touched slot");
            let i = id.index();
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let m = self.m[i].get_or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v[i].get_or_insert_with(|| Array2::zeros(g.dim()));
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let step = (lr / c1) as f32;
            let c2 = c2 as f32;
            Zip::from(store.get_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamId;
    use ndarray::array;

    #[test]
    fn noam_peaks_at_warmup_with_the_configured_rate() {
        let noam = Noam {
            peak_lr: 1e-3,
            dim: 128,
            warmup: 8000,
        };
        assert!((noam.rate(8000) - 1e-3).abs() < 1e-15);
        assert!(noam.rate(7999) < noam.rate(8000));
        assert!(noam.rate(8001) < noam.rate(8000));
        // linear warmup, inverse-sqrt decay
        assert!((noam.rate(4000) / noam.rate(2000) - 2.0).abs() < 1e-12);
        assert!((noam.rate(32000) / noam.rate(8000) - 0.5).abs() < 1e-12);
        let s: f64 = 100.0;
        let formula = noam.factor() * 128f64.powf(-0.5) * s.powf(-0.5).min(s * 8000f64.powf(-1.5));
        assert_eq!(noam.rate(100), formula);
    }

    fn store() -> (ParamStore<f32>, ParamId, ParamId) {
        let mut s = ParamStore::new();
        let a = s.register("a", array![[1.0f32, -2.0]]);
        let b = s.register("b", array![[0.5f32]]);
        (s, a, b)
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let (mut s, a, b) = store();
        let mut grads = Grads::for_store(&s);
        grads.add(a, array![[0.3f32, -4.0]].view());
        let mut adam = Adam::new(s.len());
        adam.update(&mut s, &grads, 0.1);
        let got = s.get(a);
        assert!((got[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((got[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(s.get(b), &array![[0.5f32]]);
        assert_eq!(adam.steps(), &[1, 0]);
    }

    #[test]
    fn zero_rate_leaves_parameters_bitwise_unchanged() {
        let (mut s, a, b) = store();
        let before = s.clone();
        let mut grads = Grads::for_store(&s);
        grads.add(a, array![[1.0f32, 2.0]].view());
        grads.add(b, array![[-3.0f32]].view());
        let mut adam = Adam::new(s.len());
        for _ in 0..3 {
            adam.update(&mut s, &grads, 0.0);
        }
        for id in s.ids() {
            assert_eq!(s.get(id), before.get(id));
        }
    }
}

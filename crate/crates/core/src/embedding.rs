//! Feature embeddings and the selective input modules that fuse them into one
//! `L × D` tensor per stack.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureKind, FeatureVocabulary, SequenceWindow, Stream};
use crate::error::{Error, Result};
use crate::nn::{Grads, Init, ParamId, ParamStore, Scalar};

/// One table per candidate feature: `rows × D` lookups for categorical
/// features, a `1 × D` projection for continuous ones.
#[derive(Clone, Debug)]
pub struct EmbeddingBank {
    pub features: Vec<FeatureKind>,
    pub tables: Vec<ParamId>,
    pub dim: usize,
}

impl EmbeddingBank {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        features: &[FeatureKind],
        vocabulary: &FeatureVocabulary,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let std = Init::Normal { std: 1.0 / (dim as f64).sqrt() };
        let tables = features
            .iter()
            .map(|&kind| {
                let rows = vocabulary.table_rows(kind).unwrap_or(1);
                let mut table = std.sample((rows, dim), rng);
                if !kind.is_continuous() {
                    // index 0 is the start/pad token
                    table.row_mut(0).fill(T::zero());
                }
                store.register(format!("embed.{}", kind.short_name()), table)
            })
            .collect();
        Self {
            features: features.to_vec(),
            tables,
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Embeds feature slot `slot` of `window` as an `L × D` matrix.
    pub fn embed<T: Scalar>(&self, store: &ParamStore<T>, window: &SequenceWindow, slot: usize) -> Result<Array2<T>> {
        let kind = self.features[slot];
        let table = store.get(self.tables[slot]);
        let len = window.len();
        match window.stream(kind) {
            Stream::Categorical(ids) => {
                let mut out = Array2::zeros((len, self.dim));
                for (t, &id) in ids.iter().enumerate() {
                    if id as usize >= table.nrows() {
                        return Err(Error::invalid(
                            kind.short_name(),
                            format!("index {id} at position {t} outside table of {} rows", table.nrows()),
                        ));
                    }
                    out.row_mut(t).assign(&table.row(id as usize));
                }
                Ok(out)
            }
            Stream::Continuous { values, .. } => {
                if let Some(t) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::invalid(kind.short_name(), format!("non-finite value at position {t}")));
                }
                let column = Array2::from_shape_fn((len, 1), |(t, _)| T::from_f64_lossy(values[t] as f64));
                Ok(column.dot(table))
            }
        }
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        window: &SequenceWindow,
        slot: usize,
        dy: &Array2<T>,
        grads: &mut Grads<T>,
    ) {
        let kind = self.features[slot];
        let g = grads.slot(self.tables[slot], store.get(self.tables[slot]).dim());
        match window.stream(kind) {
            Stream::Categorical(ids) => {
                for (t, &id) in ids.iter().enumerate() {
                    let mut row = g.row_mut(id as usize);
                    row += &dy.row(t);
                }
            }
            Stream::Continuous { values, .. } => {
                for (t, &v) in values.iter().enumerate() {
                    let v = T::from_f64_lossy(v as f64);
                    g.row_mut(0).scaled_add(v, &dy.row(t));
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    /// Pairwise `tanh` fusion into fixed zero-padded slots, then `W_out`.
    #[default]
    Hierarchical,
    /// Selected embeddings concatenated into fixed slots, then one projection.
    Concat,
}

/// All unordered pairs `i < j` over `num` features in lexicographic order.
pub fn pair_slots(num: usize) -> Vec<(usize, usize)> {
    (0..num).flat_map(|i| (i + 1..num).map(move |j| (i, j))).collect()
}

/// Per-stack input module: fusion parameters plus a learned positional table.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub mode: InputMode,
    pub num: usize,
    pub dim: usize,
    /// `W_ij`, `2D × D`, in [`pair_slots`] order; empty in concat mode.
    pub pairs: Vec<ParamId>,
    /// `W_out` (`P·D × D`) or the concat projection (`Num·D × D`).
    pub out: ParamId,
    pub position: ParamId,
}

pub struct FusionCache<T> {
    selection: Vec<bool>,
    /// Fused pair features `tanh(x_i A + x_j B)`; `None` for zero slots.
    temps: Vec<Option<Array2<T>>>,
    inputs: Vec<Option<Array2<T>>>,
    len: usize,
}

impl<T: Scalar> FusionCache<T> {
    pub fn temp(&self, slot: usize) -> Option<&Array2<T>> {
        self.temps.get(slot).and_then(|t| t.as_ref())
    }
}

impl Fusion {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        num: usize,
        dim: usize,
        max_len: usize,
        mode: InputMode,
        rng: &mut R,
    ) -> Self {
        let (pairs, out) = match mode {
            InputMode::Hierarchical => {
                let slots = pair_slots(num);
                let pairs = slots
                    .iter()
                    .map(|(i, j)| {
                        let init = Init::Xavier {
                            fan_in: 2 * dim,
                            fan_out: dim,
                        };
                        store.register(format!("{prefix}.pair.{i}.{j}"), init.sample((2 * dim, dim), rng))
                    })
                    .collect();
                let rows = slots.len().max(1) * dim;
                let init = Init::Xavier { fan_in: rows, fan_out: dim };
                (pairs, store.register(format!("{prefix}.out"), init.sample((rows, dim), rng)))
            }
            InputMode::Concat => {
                let init = Init::Xavier {
                    fan_in: num * dim,
                    fan_out: dim,
                };
                (Vec::new(), store.register(format!("{prefix}.concat"), init.sample((num * dim, dim), rng)))
            }
        };
        let position = store.register(
            format!("{prefix}.position"),
            Init::Normal { std: 0.02 }.sample((max_len, dim), rng),
        );
        Self {
            mode,
            num,
            dim,
            pairs,
            out,
            position,
        }
    }

    /// Parameters a forward pass with `selection` reads.
    pub fn used_params(&self, selection: &[bool]) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = pair_slots(self.num)
            .into_iter()
            .zip(&self.pairs)
            .filter(|((i, j), _)| selection[*i] && selection[*j])
            .map(|(_, &id)| id)
            .collect();
        ids.push(self.out);
        ids.push(self.position);
        ids
    }

    /// `inputs[i]` must be `Some` exactly where `selection[i]`; the result is
    /// the fused tensor plus positional embedding.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        inputs: Vec<Option<Array2<T>>>,
        selection: &[bool],
        len: usize,
    ) -> Result<(Array2<T>, FusionCache<T>)> {
        if selection.len() != self.num || inputs.len() != self.num {
            return Err(Error::Shape(format!(
                "fusion expects {} features, got selection {} and inputs {}",
                self.num,
                selection.len(),
                inputs.len()
            )));
        }
        if !selection.contains(&true) {
            return Err(Error::Genome("no input feature selected".into()));
        }
        let position = store.get(self.position);
        if len > position.nrows() {
            return Err(Error::Shape(format!("sequence length {len} exceeds {}", position.nrows())));
        }
        let d = self.dim;
        let w_out = store.get(self.out);
        let mut y = position.slice(s![..len, ..]).to_owned();
        let mut temps = Vec::new();
        match self.mode {
            InputMode::Hierarchical => {
                for (slot, (i, j)) in pair_slots(self.num).into_iter().enumerate() {
                    if !(selection[i] && selection[j]) {
                        temps.push(None);
                        continue;
                    }
                    let (xi, xj) = (inputs[i].as_ref().unwrap(), inputs[j].as_ref().unwrap());
                    let w = store.get(self.pairs[slot]);
                    let mut pre = xi.dot(&w.slice(s![..d, ..]));
                    pre += &xj.dot(&w.slice(s![d.., ..]));
                    let temp = pre.mapv(|v| v.tanh());
                    y += &temp.dot(&w_out.slice(s![slot * d..(slot + 1) * d, ..]));
                    temps.push(Some(temp));
                }
            }
            InputMode::Concat => {
                for (i, x) in inputs.iter().enumerate() {
                    if let Some(x) = x.as_ref().filter(|_| selection[i]) {
                        y += &x.dot(&w_out.slice(s![i * d..(i + 1) * d, ..]));
                    }
                }
            }
        }
        Ok((
            y,
            FusionCache {
                selection: selection.to_vec(),
                temps,
                inputs,
                len,
            },
        ))
    }

    /// Returns the gradient for each selected input.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &FusionCache<T>,
        dy: &Array2<T>,
        grads: &mut Grads<T>,
    ) -> Vec<Option<Array2<T>>> {
        let d = self.dim;
        let position = store.get(self.position);
        grads
            .slot(self.position, position.dim())
            .slice_mut(s![..cache.len, ..])
            .zip_mut_with(dy, |g, &v| *g += v);
        let w_out = store.get(self.out);
        let mut dx: Vec<Option<Array2<T>>> = cache
            .selection
            .iter()
            .map(|&on| on.then(|| Array2::zeros((cache.len, d))))
            .collect();
        match self.mode {
            InputMode::Hierarchical => {
                for (slot, (i, j)) in pair_slots(self.num).into_iter().enumerate() {
                    let Some(temp) = &cache.temps[slot] else { continue };
                    let rows = s![slot * d..(slot + 1) * d, ..];
                    grads
                        .slot(self.out, w_out.dim())
                        .slice_mut(rows)
                        .zip_mut_with(&temp.t().dot(dy), |g, &v| *g += v);
                    let dtemp = dy.dot(&w_out.slice(rows).t());
                    let dpre = ndarray::Zip::from(&dtemp).and(temp).map_collect(|&g, &t| g * (T::one() - t * t));
                    let w = store.get(self.pairs[slot]);
                    let (xi, xj) = (cache.inputs[i].as_ref().unwrap(), cache.inputs[j].as_ref().unwrap());
                    let gw = grads.slot(self.pairs[slot], w.dim());
                    gw.slice_mut(s![..d, ..]).zip_mut_with(&xi.t().dot(&dpre), |g, &v| *g += v);
                    gw.slice_mut(s![d.., ..]).zip_mut_with(&xj.t().dot(&dpre), |g, &v| *g += v);
                    *dx[i].as_mut().unwrap() += &dpre.dot(&w.slice(s![..d, ..]).t());
                    *dx[j].as_mut().unwrap() += &dpre.dot(&w.slice(s![d.., ..]).t());
                }
            }
            InputMode::Concat => {
                for i in 0..self.num {
                    if !cache.selection[i] {
                        continue;
                    }
                    let rows = s![i * d..(i + 1) * d, ..];
                    let x = cache.inputs[i].as_ref().unwrap();
                    grads
                        .slot(self.out, w_out.dim())
                        .slice_mut(rows)
                        .zip_mut_with(&x.t().dot(dy), |g, &v| *g += v);
                    *dx[i].as_mut().unwrap() += &dy.dot(&w_out.slice(rows).t());
                }
            }
        }
        dx
    }
}

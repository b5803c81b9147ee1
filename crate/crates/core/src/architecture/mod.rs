//! The searchable encoder-decoder Transformer.
//!
//! [`Network`] owns parameter handles for every candidate operation at every
//! block slot, so one layout serves both as the weight-sharing supernet and,
//! restricted to a [`Genome`], as a concrete model. Each block computes
//!
//! ```text
//! x1 = LN(X)
//! gp = LN(x1 + GO1(x1))            (GO1 = zero drops the residual term)
//! gp = gp + CrossMHSA(gp, O_En)    (decoder only)
//! lp = LN(x1 + Conv_k(x1))         (lp = 0 when LO = zero)
//! h  = gp + lp
//! h  = h + GO2(h)
//! ```
//!
//! with dropout on every operation output before its residual sum and a
//! final LN closing each stack.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureKind, FeatureVocabulary, SequenceWindow};
use crate::embedding::{EmbeddingBank, Fusion, FusionCache, InputMode};
use crate::error::{Error, Result};
use crate::genome::{BlockOps, Genome, GlobalOp, LocalOp};
use crate::nn::{
    dropout_backward, dropout_forward, AttentionCache, CausalConv, ConvCache, ConvLayout, DropMask, FeedForward,
    FfnCache, Grads, LayerNorm, Linear, MultiHeadAttention, NormCache, ParamId, ParamStore, Scalar,
};

/// Kernel sizes of the local candidates, in [`LocalOp`] code order.
pub const KERNELS: [usize; 4] = [3, 5, 7, 11];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Blocks per stack (`N`).
    pub blocks: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    /// Window length `L`.
    pub max_len: usize,
    pub dropout: f64,
    pub input_mode: InputMode,
    pub conv_layout: ConvLayout,
    /// Candidate features in selection-bit order.
    pub features: Vec<FeatureKind>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            dim: 128,
            ffn_dim: 128,
            heads: 8,
            max_len: 100,
            dropout: 0.1,
            input_mode: InputMode::Hierarchical,
            conv_layout: ConvLayout::Full,
            features: FeatureKind::ALL.to_vec(),
        }
    }
}

impl ModelConfig {
    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("model.blocks", self.blocks),
            ("model.dim", self.dim),
            ("model.ffn_dim", self.ffn_dim),
            ("model.heads", self.heads),
            ("model.max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.dim % self.heads != 0 {
            return Err(Error::invalid(
                "model.heads",
                format!("dim {} is not divisible by {} heads", self.dim, self.heads),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("model.dropout", "must lie in [0, 1)"));
        }
        if self.features.is_empty() {
            return Err(Error::invalid("model.features", "must not be empty"));
        }
        let distinct: BTreeSet<_> = self.features.iter().collect();
        if distinct.len() != self.features.len() {
            return Err(Error::invalid("model.features", "contains duplicates"));
        }
        Ok(())
    }

    /// Checks that `genome` fits this configuration.
    pub fn check_genome(&self, genome: &Genome) -> Result<()> {
        genome.validate()?;
        if genome.num_features() != self.num_features() || genome.blocks_per_side() != self.blocks {
            return Err(Error::Genome(format!(
                "genome has {} features and {} blocks per side, model expects {} and {}",
                genome.num_features(),
                genome.blocks_per_side(),
                self.num_features(),
                self.blocks
            )));
        }
        Ok(())
    }
}

/// Every candidate operation of one block position.
#[derive(Clone, Debug)]
pub struct BlockSlot {
    pub norm_in: LayerNorm,
    pub norm_global: LayerNorm,
    pub norm_local: LayerNorm,
    pub convs: [CausalConv; 4],
    /// Indexed by GO position (0 for GO1, 1 for GO2).
    pub attention: [MultiHeadAttention; 2],
    pub ffn: [FeedForward; 2],
    pub cross: Option<MultiHeadAttention>,
}

impl BlockSlot {
    fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &ModelConfig,
        decoder: bool,
        rng: &mut R,
    ) -> Self {
        let d = config.dim;
        let convs = KERNELS.map(|k| CausalConv::register(store, &format!("{prefix}.conv{k}"), d, k, config.conv_layout, rng));
        let attention = [1, 2].map(|g| MultiHeadAttention::register(store, &format!("{prefix}.go{g}.mhsa"), d, config.heads, rng));
        let ffn = [1, 2].map(|g| FeedForward::register(store, &format!("{prefix}.go{g}.ffn"), d, config.ffn_dim, rng));
        let cross = decoder.then(|| MultiHeadAttention::register(store, &format!("{prefix}.cross"), d, config.heads, rng));
        Self {
            norm_in: LayerNorm::register(store, &format!("{prefix}.norm_in"), d),
            norm_global: LayerNorm::register(store, &format!("{prefix}.norm_global"), d),
            norm_local: LayerNorm::register(store, &format!("{prefix}.norm_local"), d),
            convs,
            attention,
            ffn,
            cross,
        }
    }

    fn conv(&self, op: LocalOp) -> Option<&CausalConv> {
        op.kernel().map(|k| &self.convs[KERNELS.iter().position(|&c| c == k).unwrap()])
    }

    fn global_params(&self, position: usize, op: GlobalOp) -> Vec<ParamId> {
        match op {
            GlobalOp::Zero => Vec::new(),
            GlobalOp::Ffn => self.ffn[position].params().to_vec(),
            GlobalOp::Attention => self.attention[position].params().to_vec(),
        }
    }

    /// Parameters read by this block under `ops`.
    pub fn used_params(&self, ops: BlockOps) -> Vec<ParamId> {
        let mut ids = Vec::new();
        ids.extend(self.norm_in.params());
        ids.extend(self.norm_global.params());
        ids.extend(self.global_params(0, ops.global1));
        ids.extend(self.global_params(1, ops.global2));
        if let Some(conv) = self.conv(ops.local) {
            ids.extend(conv.params());
            ids.extend(self.norm_local.params());
        }
        if let Some(cross) = &self.cross {
            ids.extend(cross.params());
        }
        ids
    }

    /// Every parameter this slot owns.
    pub fn all_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = [self.norm_in, self.norm_global, self.norm_local]
            .iter()
            .flat_map(|n| n.params())
            .collect();
        ids.extend(self.convs.iter().flat_map(|c| c.params()));
        ids.extend(self.attention.iter().flat_map(|a| a.params()));
        ids.extend(self.ffn.iter().flat_map(|f| f.params()));
        if let Some(cross) = &self.cross {
            ids.extend(cross.params());
        }
        ids
    }
}

enum GlobalCache<T> {
    Zero,
    Ffn(FfnCache<T>, DropMask<T>),
    Attention(AttentionCache<T>, DropMask<T>),
}

pub struct BlockCache<T> {
    norm_in: NormCache<T>,
    go1: GlobalCache<T>,
    norm_global: NormCache<T>,
    cross: Option<(AttentionCache<T>, DropMask<T>)>,
    local: Option<(LocalOp, ConvCache<T>, DropMask<T>, NormCache<T>)>,
    go2: GlobalCache<T>,
}

fn global_forward<T: Scalar, R: Rng + ?Sized>(
    slot: &BlockSlot,
    position: usize,
    op: GlobalOp,
    store: &ParamStore<T>,
    x: &Array2<T>,
    valid: &[bool],
    rate: f64,
    rng: &mut Option<&mut R>,
) -> (Option<Array2<T>>, GlobalCache<T>) {
    match op {
        GlobalOp::Zero => (None, GlobalCache::Zero),
        GlobalOp::Ffn => {
            let (y, c) = slot.ffn[position].forward(store, x);
            let (y, m) = dropout_forward(y, rate, rng.as_deref_mut());
            (Some(y), GlobalCache::Ffn(c, m))
        }
        GlobalOp::Attention => {
            let (y, c) = slot.attention[position].forward(store, x, x, valid);
            let (y, m) = dropout_forward(y, rate, rng.as_deref_mut());
            (Some(y), GlobalCache::Attention(c, m))
        }
    }
}

/// Adds the input gradient of a global operation to `dx`.
fn global_backward<T: Scalar>(
    slot: &BlockSlot,
    position: usize,
    store: &ParamStore<T>,
    cache: &GlobalCache<T>,
    dy: &Array2<T>,
    dx: &mut Array2<T>,
    grads: &mut Grads<T>,
) {
    match cache {
        GlobalCache::Zero => {}
        GlobalCache::Ffn(c, m) => {
            let d = dropout_backward(m, dy.clone());
            *dx += &slot.ffn[position].backward(store, c, &d, grads);
        }
        GlobalCache::Attention(c, m) => {
            let d = dropout_backward(m, dy.clone());
            let (dq, dkv) = slot.attention[position].backward(store, c, &d, grads);
            *dx += &dq;
            *dx += &dkv;
        }
    }
}

impl BlockSlot {
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        ops: BlockOps,
        x: &Array2<T>,
        memory: Option<&Array2<T>>,
        valid: &[bool],
        rate: f64,
        mut rng: Option<&mut R>,
    ) -> (Array2<T>, BlockCache<T>) {
        let (x1, norm_in) = self.norm_in.forward(store, x);

        let (o1, go1) = global_forward(self, 0, ops.global1, store, &x1, valid, rate, &mut rng);
        let (mut gp, norm_global) = match o1 {
            Some(o) => self.norm_global.forward(store, &(&x1 + &o)),
            None => self.norm_global.forward(store, &x1),
        };

        let cross = match (&self.cross, memory) {
            (Some(attn), Some(mem)) => {
                let (y, c) = attn.forward(store, &gp, mem, valid);
                let (y, m) = dropout_forward(y, rate, rng.as_deref_mut());
                gp += &y;
                Some((c, m))
            }
            _ => None,
        };

        let mut h = gp;
        let local = self.conv(ops.local).map(|conv| {
            let (y, c) = conv.forward(store, &x1);
            let (y, m) = dropout_forward(y, rate, rng.as_deref_mut());
            let (lp, n) = self.norm_local.forward(store, &(&x1 + &y));
            h += &lp;
            (ops.local, c, m, n)
        });

        let (o2, go2) = global_forward(self, 1, ops.global2, store, &h, valid, rate, &mut rng);
        if let Some(o) = o2 {
            h += &o;
        }
        (
            h,
            BlockCache {
                norm_in,
                go1,
                norm_global,
                cross,
                local,
                go2,
            },
        )
    }

    /// Returns the input gradient and, for decoder blocks, the gradient with
    /// respect to the encoder memory.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &BlockCache<T>,
        dy: &Array2<T>,
        grads: &mut Grads<T>,
    ) -> (Array2<T>, Option<Array2<T>>) {
        let mut dh = dy.clone();
        global_backward(self, 1, store, &cache.go2, dy, &mut dh, grads);

        let mut dx1 = Array2::zeros(dy.dim());
        if let Some((op, conv_cache, mask, norm)) = &cache.local {
            let dsum = self.norm_local.backward(store, norm, &dh, grads);
            dx1 += &dsum;
            let d = dropout_backward(mask, dsum);
            let conv = self.conv(*op).expect("local cache implies a conv");
            dx1 += &conv.backward(store, conv_cache, &d, grads);
        }

        let mut dgp = dh;
        let mut dmemory = None;
        if let (Some(attn), Some((c, m))) = (&self.cross, &cache.cross) {
            let d = dropout_backward(m, dgp.clone());
            let (dq, dkv) = attn.backward(store, c, &d, grads);
            dgp += &dq;
            dmemory = Some(dkv);
        }

        let dg = self.norm_global.backward(store, &cache.norm_global, &dgp, grads);
        dx1 += &dg;
        global_backward(self, 0, store, &cache.go1, &dg, &mut dx1, grads);

        let dx = self.norm_in.backward(store, &cache.norm_in, &dx1, grads);
        (dx, dmemory)
    }
}

/// Parameter handles of the whole search space.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub bank: EmbeddingBank,
    pub encoder_input: Fusion,
    pub decoder_input: Fusion,
    pub encoder: Vec<BlockSlot>,
    pub decoder: Vec<BlockSlot>,
    pub encoder_norm: LayerNorm,
    pub decoder_norm: LayerNorm,
    pub head: Linear,
}

pub struct ForwardCache<T> {
    embeddings: Vec<Option<Array2<T>>>,
    encoder_input: (FusionCache<T>, DropMask<T>),
    decoder_input: (FusionCache<T>, DropMask<T>),
    encoder: Vec<BlockCache<T>>,
    decoder: Vec<BlockCache<T>>,
    encoder_norm: NormCache<T>,
    decoder_norm: NormCache<T>,
    decoder_out: Array2<T>,
}

impl Network {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: &ModelConfig,
        vocabulary: &FeatureVocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (num, d, len) = (config.num_features(), config.dim, config.max_len);
        let bank = EmbeddingBank::register(store, &config.features, vocabulary, d, rng);
        let encoder_input = Fusion::register(store, "encoder.input", num, d, len, config.input_mode, rng);
        let decoder_input = Fusion::register(store, "decoder.input", num, d, len, config.input_mode, rng);
        let encoder = (0..config.blocks)
            .map(|i| BlockSlot::register(store, &format!("encoder.{i}"), config, false, rng))
            .collect();
        let decoder = (0..config.blocks)
            .map(|i| BlockSlot::register(store, &format!("decoder.{i}"), config, true, rng))
            .collect();
        Ok(Self {
            config: config.clone(),
            bank,
            encoder_input,
            decoder_input,
            encoder,
            decoder,
            encoder_norm: LayerNorm::register(store, "encoder.norm", d),
            decoder_norm: LayerNorm::register(store, "decoder.norm", d),
            head: Linear::register(store, "head", d, 1, rng),
        })
    }

    /// Parameters read when running `genome`, sorted and deduplicated.
    pub fn used_params(&self, genome: &Genome) -> Vec<ParamId> {
        let mut ids = BTreeSet::new();
        for (slot, (&e, &d)) in genome.encoder_inputs.iter().zip(&genome.decoder_inputs).enumerate() {
            if e || d {
                ids.insert(self.bank.tables[slot]);
            }
        }
        ids.extend(self.encoder_input.used_params(&genome.encoder_inputs));
        ids.extend(self.decoder_input.used_params(&genome.decoder_inputs));
        for (slot, ops) in self.encoder.iter().zip(&genome.encoder_blocks) {
            ids.extend(slot.used_params(*ops));
        }
        for (slot, ops) in self.decoder.iter().zip(&genome.decoder_blocks) {
            ids.extend(slot.used_params(*ops));
        }
        ids.extend(self.encoder_norm.params());
        ids.extend(self.decoder_norm.params());
        ids.extend(self.head.params());
        ids.into_iter().collect()
    }

    /// Number of trainable scalars `genome` uses.
    pub fn count_parameters<T: Scalar>(&self, store: &ParamStore<T>, genome: &Genome) -> u64 {
        self.used_params(genome).iter().map(|&id| store.numel(id) as u64).sum()
    }

    fn check_window(&self, window: &SequenceWindow) -> Result<()> {
        if window.len() == 0 || window.len() > self.config.max_len {
            return Err(Error::Shape(format!(
                "window length {} outside 1..={}",
                window.len(),
                self.config.max_len
            )));
        }
        if window.targets.len() != window.len() || window.streams.iter().any(|s| s.len() != window.len()) {
            return Err(Error::Shape(format!("window for {} has ragged streams", window.student)));
        }
        Ok(())
    }

    /// Logits for every position of `window`. Dropout is active when `rng` is given.
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        genome: &Genome,
        window: &SequenceWindow,
        mut rng: Option<&mut R>,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.config.check_genome(genome)?;
        self.check_window(window)?;
        let rate = self.config.dropout;
        let len = window.len();
        let valid = &window.valid;

        let mut embeddings = Vec::with_capacity(self.bank.len());
        for slot in 0..self.bank.len() {
            let used = genome.encoder_inputs[slot] || genome.decoder_inputs[slot];
            embeddings.push(if used { Some(self.bank.embed(store, window, slot)?) } else { None });
        }
        let pick = |selection: &[bool]| -> Vec<Option<Array2<T>>> {
            embeddings
                .iter()
                .zip(selection)
                .map(|(e, &on)| if on { e.clone() } else { None })
                .collect()
        };

        let (x, fc) = self
            .encoder_input
            .forward(store, pick(&genome.encoder_inputs), &genome.encoder_inputs, len)?;
        let (mut x, em) = dropout_forward(x, rate, rng.as_deref_mut());
        let mut encoder = Vec::with_capacity(self.config.blocks);
        for (slot, &ops) in self.encoder.iter().zip(&genome.encoder_blocks) {
            let (y, c) = slot.forward(store, ops, &x, None, valid, rate, rng.as_deref_mut());
            x = y;
            encoder.push(c);
        }
        let (memory, encoder_norm) = self.encoder_norm.forward(store, &x);

        let (y, dc) = self
            .decoder_input
            .forward(store, pick(&genome.decoder_inputs), &genome.decoder_inputs, len)?;
        let (mut y, dm) = dropout_forward(y, rate, rng.as_deref_mut());
        let mut decoder = Vec::with_capacity(self.config.blocks);
        for (slot, &ops) in self.decoder.iter().zip(&genome.decoder_blocks) {
            let (z, c) = slot.forward(store, ops, &y, Some(&memory), valid, rate, rng.as_deref_mut());
            y = z;
            decoder.push(c);
        }
        let (decoder_out, decoder_norm) = self.decoder_norm.forward(store, &y);
        let logits = self.head.forward(store, &decoder_out).into_raw_vec_and_offset().0;

        Ok((
            logits,
            ForwardCache {
                embeddings,
                encoder_input: (fc, em),
                decoder_input: (dc, dm),
                encoder,
                decoder,
                encoder_norm,
                decoder_norm,
                decoder_out,
            },
        ))
    }

    /// Back-propagates logit gradients into `grads`.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        window: &SequenceWindow,
        cache: &ForwardCache<T>,
        dlogits: &[T],
        grads: &mut Grads<T>,
    ) {
        let len = dlogits.len();
        let dl = Array2::from_shape_vec((len, 1), dlogits.to_vec()).expect("one logit per position");
        let dout = self.head.backward(store, &cache.decoder_out, &dl, grads);
        let mut dy = self.decoder_norm.backward(store, &cache.decoder_norm, &dout, grads);
        let mut dmemory: Array2<T> = Array2::zeros(dy.dim());
        for (slot, c) in self.decoder.iter().zip(&cache.decoder).rev() {
            let (dx, dm) = slot.backward(store, c, &dy, grads);
            dy = dx;
            if let Some(dm) = dm {
                dmemory += &dm;
            }
        }
        let dy = dropout_backward(&cache.decoder_input.1, dy);
        let ddec = self.decoder_input.backward(store, &cache.decoder_input.0, &dy, grads);

        let mut dx = self.encoder_norm.backward(store, &cache.encoder_norm, &dmemory, grads);
        for (slot, c) in self.encoder.iter().zip(&cache.encoder).rev() {
            dx = slot.backward(store, c, &dx, grads).0;
        }
        let dx = dropout_backward(&cache.encoder_input.1, dx);
        let denc = self.encoder_input.backward(store, &cache.encoder_input.0, &dx, grads);

        for (slot, (de, dd)) in denc.into_iter().zip(ddec).enumerate() {
            let total = match (de, dd) {
                (Some(a), Some(b)) => Some(a + b),
                (a, b) => a.or(b),
            };
            if let Some(total) = total {
                debug_assert!(cache.embeddings[slot].is_some());
                self.bank.backward(store, window, slot, &total, grads);
            }
        }
    }

    /// Probability of a correct answer at every position, without dropout.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, genome: &Genome, window: &SequenceWindow) -> Result<Vec<T>> {
        let (logits, _) = self.forward::<T, rand::rngs::ThreadRng>(store, genome, window, None)?;
        Ok(logits.into_iter().map(crate::nn::sigmoid).collect())
    }

    /// JSON summary of a concrete model: ops per block and parameter count.
    pub fn summary<T: Scalar>(&self, store: &ParamStore<T>, genome: &Genome) -> serde_json::Value {
        let names = |v: &[bool]| -> Vec<&str> {
            self.config
                .features
                .iter()
                .zip(v)
                .filter(|(_, &b)| b)
                .map(|(f, _)| f.short_name())
                .collect()
        };
        let blocks = |b: &[BlockOps]| -> Vec<[&str; 3]> {
            b.iter()
                .map(|o| [o.local.name(), o.global1.name(), o.global2.name()])
                .collect()
        };
        serde_json::json!({
            "genome": genome.encode(),
            "encoder_inputs": names(&genome.encoder_inputs),
            "decoder_inputs": names(&genome.decoder_inputs),
            "encoder_blocks": blocks(&genome.encoder_blocks),
            "decoder_blocks": blocks(&genome.decoder_blocks),
            "parameters": self.count_parameters(store, genome),
        })
    }
}

#[cfg(test)]
mod tests;

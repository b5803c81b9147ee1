//! Weight-sharing supernet training and sub-model evaluation.
//!
//! Every random draw during training comes from a substream keyed by the run
//! seed and the step, epoch or window it serves, so a run resumed from a
//! checkpoint replays the uninterrupted trajectory exactly.

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::{ModelConfig, Network};
use crate::checkpoint::Checkpoint;
use crate::dataset::{FeatureVocabulary, SequenceWindow};
use crate::error::{Error, Result};
use crate::genome::{BlockOps, Genome, SearchSpace};
use crate::metrics::Metrics;
use crate::nn::{bce_with_logits, sigmoid, Grads, ParamId, ParamStore};
use crate::optim::{Adam, Noam};
use crate::seed::substream;

/// Windows per gradient chunk. Chunk results are merged in index order, so
/// the summation order (and every bit of the result) is independent of the
/// thread count.
pub const CHUNK: usize = 8;

const TAG_SAMPLE: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_DROPOUT: u64 = 3;
const TAG_EVAL: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Peak learning rate of the Noam schedule.
    pub lr: f64,
    pub batch_size: usize,
    pub warmup: u64,
    pub seed: u64,
    /// Worker threads for batch gradients and evaluation.
    pub threads: usize,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 1e-3,
            batch_size: 128,
            warmup: 8000,
            seed: 0,
            threads: 1,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    /// Defaults for training or fine-tuning one fixed architecture.
    pub fn retrain() -> Self {
        Self {
            epochs: 30,
            warmup: 4000,
            ..Self::default()
        }
    }

    pub fn validate(&self, section: &'static str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid(section, "batch_size must be positive"));
        }
        if self.warmup == 0 {
            return Err(Error::invalid(section, "warmup must be positive"));
        }
        if self.threads == 0 {
            return Err(Error::invalid(section, "threads must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(section, "lr must be a non-negative number"));
        }
        Ok(())
    }
}

/// Shared parameters plus the layout describing them.
#[derive(Clone, Debug)]
pub struct Supernet {
    pub network: Network,
    pub store: ParamStore<f32>,
}

impl Supernet {
    pub fn new(config: &ModelConfig, vocabulary: &FeatureVocabulary, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let network = Network::register(&mut store, config, vocabulary, &mut substream(seed, &[0]))?;
        Ok(Self { network, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.network.config
    }

    /// The initial (unreduced) search space matching this network.
    pub fn space(&self) -> SearchSpace {
        SearchSpace::initial(self.config().num_features(), self.config().blocks)
    }

    /// A view running `genome` on the shared parameters.
    pub fn extract<'a>(&'a self, genome: &'a Genome) -> Result<SubModel<'a>> {
        self.config().check_genome(genome)?;
        Ok(SubModel {
            network: &self.network,
            store: &self.store,
            genome,
        })
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }
}

pub struct SubModel<'a> {
    pub network: &'a Network,
    pub store: &'a ParamStore<f32>,
    pub genome: &'a Genome,
}

impl SubModel<'_> {
    pub fn predict(&self, window: &SequenceWindow) -> Result<Vec<f32>> {
        self.network.predict(self.store, self.genome, window)
    }

    pub fn used_params(&self) -> Vec<ParamId> {
        self.network.used_params(self.genome)
    }

    pub fn count_parameters(&self) -> u64 {
        self.network.count_parameters(self.store, self.genome)
    }

    /// Mean BCE over the valid positions of `batch` and its gradient.
    /// `dropout` keys the per-window dropout substreams.
    pub fn gradients(
        &self,
        batch: &[&SequenceWindow],
        dropout: Option<(u64, u64, u64)>,
        threads: usize,
    ) -> Result<(f64, Grads<f32>)> {
        batch_gradients(self.network, self.store, self.genome, batch, dropout, threads)
    }
}

/// Runs `f` over `0..n` in [`CHUNK`]-sized pieces across `threads` workers and
/// returns the per-chunk results in chunk order.
fn chunked<R: Send>(n: usize, threads: usize, f: impl Fn(std::ops::Range<usize>) -> R + Sync) -> Vec<R> {
    let ranges: Vec<_> = (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect();
    if threads <= 1 || ranges.len() <= 1 {
        return ranges.into_iter().map(f).collect();
    }
    let mut out: Vec<Option<R>> = (0..ranges.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let (ranges, f) = (&ranges, &f);
                scope.spawn(move || {
                    (w..ranges.len())
                        .step_by(threads)
                        .map(|i| (i, f(ranges[i].clone())))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every chunk ran")).collect()
}

pub fn batch_gradients(
    network: &Network,
    store: &ParamStore<f32>,
    genome: &Genome,
    batch: &[&SequenceWindow],
    dropout: Option<(u64, u64, u64)>,
    threads: usize,
) -> Result<(f64, Grads<f32>)> {
    let positions: usize = batch.iter().map(|w| w.valid_len()).sum();
    let mut total = Grads::for_store(store);
    if positions == 0 {
        return Ok((0.0, total));
    }
    let scale = 1.0 / positions as f32;
    let parts = chunked(batch.len(), threads, |range| -> Result<(f64, Grads<f32>)> {
        let mut grads = Grads::for_store(store);
        let mut loss = 0.0f64;
        for i in range {
            let w = batch[i];
            let mut rng = dropout.map(|(seed, step, sub)| substream(seed, &[TAG_DROPOUT, step, sub, i as u64]));
            let (logits, cache) = network.forward(store, genome, w, rng.as_mut())?;
            let mut dlogits = vec![0.0f32; logits.len()];
            for t in 0..logits.len() {
                if w.valid[t] {
                    let (l, d) = bce_with_logits(logits[t], w.targets[t] as f32);
                    loss += l as f64;
                    dlogits[t] = d * scale;
                }
            }
            network.backward(store, w, &cache, &dlogits, &mut grads);
        }
        Ok((loss, grads))
    });
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.merge(g);
    }
    Ok((loss / positions as f64, total))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub forwards: u64,
    pub updates: u64,
}

/// What one optimizer step did.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    /// Per sub-model: genome, mean loss and the parameters its pass touched.
    pub passes: Vec<(Genome, f64, Vec<ParamId>)>,
}

impl StepReport {
    pub fn mean_loss(&self) -> f64 {
        self.passes.iter().map(|p| p.1).sum::<f64>() / self.passes.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Global, local and random sub-models per batch, one summed update.
    Sandwich,
    Fixed(Genome),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Supernet plus optimizer state and progress counters.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub supernet: Supernet,
    pub adam: Adam,
    pub config: TrainConfig,
    pub step: u64,
    pub epoch: usize,
    pub counters: Counters,
}

impl Trainer {
    pub fn new(supernet: Supernet, config: TrainConfig) -> Result<Self> {
        config.validate("train")?;
        let adam = Adam::new(supernet.store.len());
        Ok(Self {
            supernet,
            adam,
            config,
            step: 0,
            epoch: 0,
            counters: Counters::default(),
        })
    }

    pub fn schedule(&self) -> Noam {
        Noam {
            peak_lr: self.config.lr,
            dim: self.supernet.config().dim,
            warmup: self.config.warmup,
        }
    }

    fn pass(&mut self, genome: &Genome, batch: &[&SequenceWindow], sub: u64) -> Result<(f64, Grads<f32>)> {
        let (loss, grads) = batch_gradients(
            &self.supernet.network,
            &self.supernet.store,
            genome,
            batch,
            Some((self.config.seed, self.step, sub)),
            self.config.threads,
        )?;
        self.counters.forwards += 1;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!(
                "step {} sub-model {sub} genome {genome}: loss {loss}",
                self.step
            )));
        }
        Ok((loss, grads))
    }

    fn apply(&mut self, grads: &Grads<f32>) -> f64 {
        let lr = self.schedule().rate(self.step);
        self.adam.update(&mut self.supernet.store, grads, lr);
        self.counters.updates += 1;
        lr
    }

    /// The three sub-models of one sandwich step, drawn from the step's substream.
    pub fn sandwich_genomes(&self, step: u64) -> [Genome; 3] {
        let space = self.supernet.space();
        let mut rng = substream(self.config.seed, &[TAG_SAMPLE, step]);
        let blocks = self.supernet.config().blocks;
        let g = space.sample_unconstrained(&mut rng);
        let l = space.sample_unconstrained(&mut rng);
        let r = space.sample_unconstrained(&mut rng);
        [
            Genome::uniform(g.encoder_inputs, g.decoder_inputs, blocks, BlockOps::GLOBAL),
            Genome::uniform(l.encoder_inputs, l.decoder_inputs, blocks, BlockOps::LOCAL),
            r,
        ]
    }

    /// Three forward/backward passes on the same batch and one Adam update of
    /// the summed gradient.
    pub fn sandwich_step(&mut self, batch: &[&SequenceWindow]) -> Result<StepReport> {
        self.step += 1;
        let genomes = self.sandwich_genomes(self.step);
        let mut total = Grads::for_store(&self.supernet.store);
        let mut passes = Vec::with_capacity(3);
        for (sub, genome) in genomes.into_iter().enumerate() {
            let (loss, grads) = self.pass(&genome, batch, sub as u64)?;
            let touched = grads.touched().collect();
            total.merge(grads);
            passes.push((genome, loss, touched));
        }
        let lr = self.apply(&total);
        Ok(StepReport {
            step: self.step,
            lr,
            passes,
        })
    }

    pub fn fixed_step(&mut self, genome: &Genome, batch: &[&SequenceWindow]) -> Result<StepReport> {
        self.step += 1;
        let (loss, grads) = self.pass(genome, batch, 0)?;
        let touched = grads.touched().collect();
        let lr = self.apply(&grads);
        Ok(StepReport {
            step: self.step,
            lr,
            passes: vec![(genome.clone(), loss, touched)],
        })
    }

    /// One pass over `windows` in an epoch-seeded order.
    pub fn train_epoch(&mut self, windows: &[SequenceWindow], objective: &Objective) -> Result<EpochLog> {
        if windows.is_empty() {
            return Err(Error::invalid("dataset", "no training windows"));
        }
        if let Objective::Fixed(g) = objective {
            self.supernet.config().check_genome(g)?;
        }
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut substream(self.config.seed, &[TAG_SHUFFLE, self.epoch as u64]));
        let mut loss_sum = 0.0;
        let mut steps = 0;
        let mut lr = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&SequenceWindow> = chunk.iter().map(|&i| &windows[i]).collect();
            let report = match objective {
                Objective::Sandwich => self.sandwich_step(&batch)?,
                Objective::Fixed(g) => self.fixed_step(g, &batch)?,
            };
            loss_sum += report.mean_loss();
            lr = report.lr;
            steps += 1;
            debug!("step {} loss {:.5} lr {:.3e}", report.step, report.mean_loss(), lr);
        }
        self.epoch += 1;
        let log = EpochLog {
            epoch: self.epoch,
            steps,
            mean_loss: loss_sum / steps as f64,
            lr,
        };
        info!("epoch {} mean loss {:.5} lr {:.3e}", log.epoch, log.mean_loss, log.lr);
        Ok(log)
    }

    /// Trains until `config.epochs`, checkpointing into `checkpoint_dir` when given.
    pub fn train(
        &mut self,
        windows: &[SequenceWindow],
        objective: &Objective,
        checkpoint_dir: Option<&Path>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            logs.push(self.train_epoch(windows, objective)?);
            let every = self.config.checkpoint_every;
            if let Some(dir) = checkpoint_dir.filter(|_| every > 0 && (self.epoch % every == 0 || self.epoch == self.config.epochs)) {
                self.checkpoint().save(dir)?;
            }
        }
        Ok(logs)
    }

    /// Parameters, Adam moments and progress in one checkpoint.
    pub fn checkpoint(&self) -> Checkpoint {
        let store = &self.supernet.store;
        let mut ck = Checkpoint::from_store(store);
        for id in store.ids() {
            let i = id.index();
            if let (Some(m), Some(v)) = (&self.adam.m[i], &self.adam.v[i]) {
                ck.tensors.push((format!("adam.m/{}", store.name(id)), m.clone()));
                ck.tensors.push((format!("adam.v/{}", store.name(id)), v.clone()));
            }
        }
        ck.metadata = serde_json::json!({
            "kind": "trainer",
            "step": self.step,
            "epoch": self.epoch,
            "counters": self.counters,
            "adam_steps": self.adam.steps,
            "train": self.config,
            "model": self.supernet.config(),
        });
        ck
    }

    /// Rebuilds a trainer from [`checkpoint`](Self::checkpoint) output. The
    /// training configuration is taken from `config`, so epochs can be extended.
    pub fn resume(ck: &Checkpoint, vocabulary: &FeatureVocabulary, config: TrainConfig) -> Result<Self> {
        let model = model_config(ck)?;
        let mut supernet = Supernet::new(&model, vocabulary, 0)?;
        ck.restore_into(&mut supernet.store)?;
        let mut trainer = Trainer::new(supernet, config)?;
        let meta = &ck.metadata;
        let field = |name: &str| meta.get(name).ok_or_else(|| Error::Checkpoint(format!("metadata lacks {name}")));
        trainer.step = serde_json::from_value(field("step")?.clone())?;
        trainer.epoch = serde_json::from_value(field("epoch")?.clone())?;
        trainer.counters = serde_json::from_value(field("counters")?.clone())?;
        let steps: Vec<u64> = serde_json::from_value(field("adam_steps")?.clone())?;
        if steps.len() != trainer.adam.steps.len() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        trainer.adam.steps = steps;
        let store = &trainer.supernet.store;
        for id in store.ids() {
            let i = id.index();
            let name = store.name(id);
            trainer.adam.m[i] = ck.get(&format!("adam.m/{name}")).cloned();
            trainer.adam.v[i] = ck.get(&format!("adam.v/{name}")).cloned();
        }
        Ok(trainer)
    }
}

/// The model configuration recorded in a checkpoint's metadata.
pub fn model_config(ck: &Checkpoint) -> Result<ModelConfig> {
    let model = ck
        .metadata
        .get("model")
        .ok_or_else(|| Error::Checkpoint("metadata lacks the model configuration".into()))?;
    let config: ModelConfig = serde_json::from_value(model.clone())?;
    config.validate()?;
    Ok(config)
}

/// Loads only the parameters of a checkpoint into a fresh supernet.
pub fn load_supernet(ck: &Checkpoint, vocabulary: &FeatureVocabulary) -> Result<Supernet> {
    let mut supernet = Supernet::new(&model_config(ck)?, vocabulary, 0)?;
    ck.restore_into(&mut supernet.store)?;
    Ok(supernet)
}

/// Window indices of a seed-fixed evaluation subset: shuffled, cut into
/// batches of `batch_size`, first `max_batches` batches kept (all when `None`).
pub fn eval_subset(windows: usize, batch_size: usize, max_batches: Option<usize>, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..windows).collect();
    order.shuffle(&mut substream(seed, &[TAG_EVAL]));
    let keep = max_batches.map_or(windows, |b| (b * batch_size.max(1)).min(windows));
    order.truncate(keep);
    order
}

/// Pooled predictions and labels over the valid positions of `subset`.
pub fn predictions(
    network: &Network,
    store: &ParamStore<f32>,
    genome: &Genome,
    windows: &[SequenceWindow],
    subset: &[usize],
    threads: usize,
) -> Result<(Vec<f64>, Vec<u8>)> {
    network.config.check_genome(genome)?;
    let parts = chunked(subset.len(), threads, |range| -> Result<(Vec<f64>, Vec<u8>)> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for &i in &subset[range] {
            let w = &windows[i];
            let (logits, _) = network.forward::<f32, ChaCha8Rng>(store, genome, w, None)?;
            for t in 0..w.len() {
                if w.valid[t] {
                    scores.push(sigmoid(logits[t]) as f64);
                    labels.push(w.targets[t]);
                }
            }
        }
        Ok((scores, labels))
    });
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for part in parts {
        let (s, l) = part?;
        scores.extend(s);
        labels.extend(l);
    }
    Ok((scores, labels))
}

/// Dropout-free metrics of `genome` over `subset`.
pub fn evaluate(
    network: &Network,
    store: &ParamStore<f32>,
    genome: &Genome,
    windows: &[SequenceWindow],
    subset: &[usize],
    threads: usize,
) -> Result<Metrics> {
    if subset.is_empty() {
        return Err(Error::invalid("evaluation", "validation subset is empty"));
    }
    let (scores, labels) = predictions(network, store, genome, windows, subset, threads)?;
    Metrics::compute(&scores, &labels)
}

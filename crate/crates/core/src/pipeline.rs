//! End-to-end steps shared by the CLI and the integration tests.

use std::path::Path;

use log::info;

use crate::architecture::ModelConfig;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{group_by_student, synthetic, FeatureVocabulary, PreparedDataset, StudentLog};
use crate::error::{Error, Result};
use crate::evolution::{search, SearchOutcome, SupernetFitness};
use crate::genome::Genome;
use crate::metrics::Metrics;
use crate::supernet::{eval_subset, evaluate, EpochLog, Objective, Supernet, TrainConfig, Trainer};

/// Synthetic logs plus the vocabulary they were drawn from.
pub fn synthetic_logs(config: &RunConfig) -> Result<(Vec<StudentLog>, FeatureVocabulary)> {
    let records = synthetic::generate(&config.synthetic)?;
    Ok((group_by_student(records), config.synthetic.vocabulary()))
}

pub fn prepare(logs: &[StudentLog], vocabulary: FeatureVocabulary, config: &RunConfig) -> Result<PreparedDataset> {
    let d = &config.data;
    let data = PreparedDataset::build(logs, vocabulary, config.model.max_len, d.ratios, d.fold, d.split_seed)?;
    if data.train.is_empty() || data.validation.is_empty() || data.test.is_empty() {
        return Err(Error::invalid("data", "a partition has no windows; add students or change data.ratios"));
    }
    info!(
        "prepared {} train, {} validation, {} test windows",
        data.train.len(),
        data.validation.len(),
        data.test.len()
    );
    Ok(data)
}

/// Sandwich-trains a fresh supernet seeded with `config.supernet.seed`.
pub fn train_supernet(
    data: &PreparedDataset,
    config: &RunConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(Trainer, Vec<EpochLog>)> {
    let supernet = Supernet::new(&config.model, &data.vocabulary, config.supernet.seed)?;
    let mut trainer = Trainer::new(supernet, config.supernet.clone())?;
    let logs = trainer.train(&data.train, &Objective::Sandwich, checkpoint_dir)?;
    Ok((trainer, logs))
}

/// Validation windows used to score genomes during search.
pub fn fitness_subset(data: &PreparedDataset, config: &RunConfig) -> Vec<usize> {
    let f = &config.fitness;
    let batches = (!f.full).then_some(f.batches);
    eval_subset(data.validation.len(), config.supernet.batch_size, batches, f.seed)
}

/// Evolutionary search scored by the frozen `supernet`.
pub fn run_search(supernet: &Supernet, data: &PreparedDataset, config: &RunConfig) -> Result<SearchOutcome> {
    let fitness = SupernetFitness {
        network: &supernet.network,
        store: &supernet.store,
        windows: &data.validation,
        subset: fitness_subset(data, config),
        threads: config.supernet.threads,
    };
    let count = |g: &Genome| supernet.network.count_parameters(&supernet.store, g);
    let budget = config.search.budget.map(|b| (b, &count as &dyn Fn(&Genome) -> u64));
    search(supernet.space(), fitness, &config.search, budget)
}

/// Trains one fixed genome, starting from `start` (inherited weights) or
/// from a fresh initialisation of `model` seeded with `train.seed`.
pub fn train_genome(
    genome: &Genome,
    start: Option<Supernet>,
    model: &ModelConfig,
    vocabulary: &FeatureVocabulary,
    data: &PreparedDataset,
    train: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(Trainer, Vec<EpochLog>)> {
    let supernet = match start {
        Some(s) => {
            if s.config() != model {
                return Err(Error::invalid(
                    "model",
                    "warm start needs the supernet's model configuration (input mode included)",
                ));
            }
            s
        }
        None => Supernet::new(model, vocabulary, train.seed)?,
    };
    supernet.config().check_genome(genome)?;
    let mut trainer = Trainer::new(supernet, train.clone())?;
    let logs = trainer.train(&data.train, &Objective::Fixed(genome.clone()), None)?;
    if let Some(dir) = checkpoint_dir {
        model_checkpoint(&trainer, genome).save(dir)?;
    }
    Ok((trainer, logs))
}

/// Trainer checkpoint tagged with the genome it was trained for.
pub fn model_checkpoint(trainer: &Trainer, genome: &Genome) -> Checkpoint {
    let mut ck = trainer.checkpoint();
    if let Some(meta) = ck.metadata.as_object_mut() {
        meta.insert("kind".into(), "model".into());
        meta.insert("genome".into(), serde_json::to_value(genome.encode()).expect("codes serialise"));
    }
    ck
}

/// The genome recorded by [`model_checkpoint`], if any.
pub fn checkpoint_genome(ck: &Checkpoint, num_features: usize) -> Result<Option<Genome>> {
    match ck.metadata.get("genome") {
        None => Ok(None),
        Some(v) => {
            let codes: Vec<i64> = serde_json::from_value(v.clone())?;
            Genome::decode(&codes, num_features).map(Some)
        }
    }
}

/// Metrics of `genome` on every test window.
pub fn test_metrics(supernet: &Supernet, genome: &Genome, data: &PreparedDataset, threads: usize) -> Result<Metrics> {
    let all: Vec<usize> = (0..data.test.len()).collect();
    evaluate(&supernet.network, &supernet.store, genome, &data.test, &all, threads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::InputMode;
    use crate::presets::Preset;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.synthetic.students = 40;
        c.synthetic.min_len = 8;
        c.synthetic.max_len = 14;
        c.model.dim = 8;
        c.model.ffn_dim = 8;
        c.model.heads = 2;
        c.model.blocks = 1;
        c.model.max_len = 6;
        c.supernet.epochs = 1;
        c.supernet.batch_size = 16;
        c.supernet.warmup = 10;
        c.retrain.epochs = 1;
        c.retrain.batch_size = 16;
        c.retrain.warmup = 10;
        c.search.population = 4;
        c.search.generations = 2;
        c.fitness.batches = 1;
        c
    }

    #[test]
    fn steps_compose_and_warm_start_checks_the_model() {
        let config = tiny();
        let (logs, vocab) = synthetic_logs(&config).unwrap();
        let data = prepare(&logs, vocab.clone(), &config).unwrap();
        assert_eq!(fitness_subset(&data, &config).len(), 16.min(data.validation.len()));
        let (trainer, epochs) = train_supernet(&data, &config, None).unwrap();
        assert_eq!(epochs.len(), 1);
        let outcome = run_search(&trainer.supernet, &data, &config).unwrap();
        assert_eq!(outcome.log.generations.len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let best = outcome.best.genome.clone();
        let (tuned, _) = train_genome(
            &best,
            Some(trainer.supernet.clone()),
            &config.model,
            &vocab,
            &data,
            &config.retrain,
            Some(dir.path()),
        )
        .unwrap();
        let m = test_metrics(&tuned.supernet, &best, &data, 1).unwrap();
        assert!((0.0..=1.0).contains(&m.auc));
        let ck = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(checkpoint_genome(&ck, 12).unwrap(), Some(best));

        let concat = ModelConfig {
            input_mode: InputMode::Concat,
            ..config.model.clone()
        };
        let (vanilla, _) = Preset::Vanilla.build(&concat, None).unwrap();
        let err = train_genome(&vanilla, Some(trainer.supernet.clone()), &concat, &vocab, &data, &config.retrain, None);
        assert!(err.is_err());
        assert!(train_genome(&vanilla, None, &concat, &vocab, &data, &config.retrain, None).is_ok());
    }

    #[test]
    fn budgeted_search_respects_the_limit() {
        let mut config = tiny();
        let (logs, vocab) = synthetic_logs(&config).unwrap();
        let data = prepare(&logs, vocab, &config).unwrap();
        let supernet = Supernet::new(&config.model, &data.vocabulary, 0).unwrap();
        let mut rng = crate::seed::substream(1, &[]);
        let mut counts: Vec<u64> = (0..101)
            .map(|_| supernet.network.count_parameters(&supernet.store, &supernet.space().sample_unconstrained(&mut rng)))
            .collect();
        counts.sort();
        let limit = counts[50];
        config.search.budget = Some(limit);
        let out = run_search(&supernet, &data, &config).unwrap();
        for r in &out.population {
            assert!(r.params.unwrap() <= limit);
            assert_eq!(r.params.unwrap(), supernet.network.count_parameters(&supernet.store, &r.genome));
        }
    }
}

mod run_dir;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use ktnas::architecture::ModelConfig;
use ktnas::checkpoint::{manifest_path, Checkpoint, Manifest};
use ktnas::config::RunConfig;
use ktnas::dataset::{self, synthetic, PreparedDataset};
use ktnas::genome::Genome;
use ktnas::pipeline;
use ktnas::presets::Preset;
use ktnas::supernet::{load_supernet, model_config, Objective, Trainer};

use run_dir::RunDir;

#[derive(Parser)]
#[command(name = "ktnas", version, about = "Evolutionary architecture search for knowledge-tracing Transformers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; every key is optional.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set model.dim=32`. Wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Write artifacts here instead of a fresh directory under `runs_dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic interaction log and its vocabulary.
    GenData,
    /// Ingest, window and split the interaction log.
    Prepare,
    /// Train the weight-sharing supernet with the sandwich rule.
    TrainSupernet {
        /// Continue from a trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evolutionary search scored by a trained supernet.
    Search {
        #[arg(long)]
        supernet: PathBuf,
        /// Disable search-space reduction.
        #[arg(long)]
        no_reduction: bool,
    },
    /// Train one fixed architecture.
    Train {
        /// A genome JSON file or a preset name.
        #[arg(long)]
        genome: String,
        /// Genome whose selection or blocks the preset borrows.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Start from these supernet weights instead of a fresh model.
        #[arg(long)]
        supernet: Option<PathBuf>,
    },
    /// Test-split metrics of a trained model.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Genome to evaluate; defaults to the one stored in the checkpoint.
        #[arg(long)]
        genome: Option<String>,
    },
    /// Print a checkpoint's manifest summary as JSON.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also list every tensor.
        #[arg(long)]
        tensors: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(global: &Global) -> Result<RunConfig> {
    Ok(match &global.config {
        Some(path) => RunConfig::load(path, &global.sets)?,
        None => RunConfig::parse("", &global.sets)?,
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.global)?;
    let run_dir = cli.global.run_dir.as_deref();
    match cli.command {
        Command::GenData => gen_data(&config, run_dir),
        Command::Prepare => prepare(&config, run_dir),
        Command::TrainSupernet { resume } => train_supernet(&config, run_dir, resume.as_deref()),
        Command::Search { supernet, no_reduction } => {
            if no_reduction {
                config.search.reduction = false;
            }
            search(&config, run_dir, &supernet)
        }
        Command::Train {
            genome,
            reference,
            supernet,
        } => train(&config, run_dir, &genome, reference.as_deref(), supernet.as_deref()),
        Command::Eval { checkpoint, genome } => eval(&config, run_dir, &checkpoint, genome.as_deref()),
        Command::Export { checkpoint, tensors } => export(&checkpoint, tensors),
    }
}

/// Vocabulary file written next to the interaction log.
fn vocabulary_path(raw: &Path) -> PathBuf {
    raw.with_extension("vocab.json")
}

fn gen_data(config: &RunConfig, run_dir: Option<&Path>) -> Result<()> {
    let run = RunDir::create(run_dir, config, "gen-data", config.synthetic.seed)?;
    let records = synthetic::generate(&config.synthetic)?;
    let raw = &config.data.raw;
    if let Some(parent) = raw.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(raw).with_context(|| format!("creating {}", raw.display()))?;
    synthetic::write_jsonl(&records, BufWriter::new(file)).with_context(|| format!("writing {}", raw.display()))?;
    let vocab = vocabulary_path(raw);
    std::fs::write(&vocab, config.synthetic.vocabulary().to_json())
        .with_context(|| format!("writing {}", vocab.display()))?;
    run.write("gen-data.json", &serde_json::to_string_pretty(&json!({
        "records": records.len(),
        "raw": raw,
        "vocabulary": vocab,
    }))?)?;
    info!("wrote {} records to {}", records.len(), raw.display());
    Ok(())
}

fn prepare(config: &RunConfig, run_dir: Option<&Path>) -> Result<()> {
    let run = RunDir::create(run_dir, config, "prepare", config.data.split_seed)?;
    let vocab_path = vocabulary_path(&config.data.raw);
    let schema = vocab_path
        .exists()
        .then(|| dataset::read_vocabulary(&vocab_path))
        .transpose()?;
    let (logs, vocabulary) = dataset::ingest(&config.data.raw, schema.as_ref())?;
    let data = pipeline::prepare(&logs, vocabulary, config)?;
    let out = &config.data.prepared;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    data.save(out)?;
    run.write("prepare.json", &serde_json::to_string_pretty(&json!({
        "students": logs.len(),
        "windows": {
            "train": data.train.len(),
            "validation": data.validation.len(),
            "test": data.test.len(),
        },
        "prepared": out,
    }))?)?;
    Ok(())
}

fn load_data(config: &RunConfig) -> Result<PreparedDataset> {
    let path = &config.data.prepared;
    let data = PreparedDataset::load(path).context("loading prepared data (run `prepare` first)")?;
    if data.seq_len != config.model.max_len {
        bail!(
            "invalid model.max_len: {} but {} was prepared with windows of {}",
            config.model.max_len,
            path.display(),
            data.seq_len
        );
    }
    Ok(data)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn train_supernet(config: &RunConfig, run_dir: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let run = RunDir::create(run_dir, config, "train-supernet", config.supernet.seed)?;
    let data = load_data(config)?;
    let ckdir = run.file("supernet");
    let (trainer, logs) = match resume {
        None => pipeline::train_supernet(&data, config, Some(&ckdir))?,
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let mut trainer = Trainer::resume(&ck, &data.vocabulary, config.supernet.clone())?;
            info!("resuming at epoch {}", trainer.epoch);
            let logs = trainer.train(&data.train, &Objective::Sandwich, Some(&ckdir))?;
            (trainer, logs)
        }
    };
    trainer.checkpoint().save(&ckdir)?;
    run.write("train_log.json", &serde_json::to_string_pretty(&logs)?)?;
    info!("supernet checkpoint in {}", ckdir.display());
    Ok(())
}

fn search(config: &RunConfig, run_dir: Option<&Path>, supernet: &Path) -> Result<()> {
    let run = RunDir::create(run_dir, config, "search", config.search.seed)?;
    let data = load_data(config)?;
    let net = load_supernet(&load_checkpoint(supernet)?, &data.vocabulary)?;
    let outcome = pipeline::run_search(&net, &data, config)?;
    run.write("genome.json", &outcome.best.genome.to_json())?;
    run.write("search_log.csv", &outcome.log.to_csv())?;
    run.write("search_summary.json", &serde_json::to_string_pretty(&json!({
        "best_genome": outcome.best.genome.encode(),
        "best_validation_auc": outcome.best.auc,
        "evaluations": outcome.evaluations,
        "reduction": config.search.reduction,
        "final_space_size": outcome.space.size().to_string(),
        "final_space": outcome.space.describe(),
    }))?)?;
    println!("{}", outcome.best.genome.describe());
    println!("validation AUC {:.4}", outcome.best.auc);
    Ok(())
}

/// A genome file, or a preset built over `model`. Returns the genome and the
/// model configuration it must be trained in.
fn resolve_genome(arg: &str, reference: Option<&Path>, model: &ModelConfig) -> Result<(Genome, ModelConfig)> {
    let read = |path: &Path| -> Result<Genome> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading genome {}", path.display()))?;
        Ok(Genome::from_json(&text, model.num_features())?)
    };
    if let Some(preset) = Preset::from_name(arg) {
        let reference = reference.map(read).transpose()?;
        let (genome, input_mode) = preset.build(model, reference.as_ref())?;
        return Ok((genome, ModelConfig { input_mode, ..model.clone() }));
    }
    let path = Path::new(arg);
    if !path.exists() {
        let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
        bail!("--genome {arg:?} is neither a file nor a preset ({})", names.join(", "));
    }
    Ok((read(path)?, model.clone()))
}

fn train(
    config: &RunConfig,
    run_dir: Option<&Path>,
    genome: &str,
    reference: Option<&Path>,
    supernet: Option<&Path>,
) -> Result<()> {
    let run = RunDir::create(run_dir, config, "train", config.retrain.seed)?;
    let data = load_data(config)?;
    let start = supernet.map(load_checkpoint).transpose()?;
    let base = match &start {
        Some(ck) => model_config(ck)?,
        None => config.model.clone(),
    };
    let (genome, model) = resolve_genome(genome, reference, &base)?;
    let start = start.map(|ck| load_supernet(&ck, &data.vocabulary)).transpose()?;
    let ckdir = run.file("model");
    let (trainer, logs) =
        pipeline::train_genome(&genome, start, &model, &data.vocabulary, &data, &config.retrain, Some(&ckdir))?;
    run.write("genome.json", &genome.to_json())?;
    run.write("train_log.json", &serde_json::to_string_pretty(&logs)?)?;
    let m = pipeline::test_metrics(&trainer.supernet, &genome, &data, config.retrain.threads)?;
    run.write("metrics.json", &serde_json::to_string_pretty(&m)?)?;
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

fn eval(config: &RunConfig, run_dir: Option<&Path>, checkpoint: &Path, genome: Option<&str>) -> Result<()> {
    let run = RunDir::create(run_dir, config, "eval", config.fitness.seed)?;
    let data = load_data(config)?;
    let ck = load_checkpoint(checkpoint)?;
    let net = load_supernet(&ck, &data.vocabulary)?;
    let genome = match genome {
        Some(arg) => resolve_genome(arg, None, net.config())?.0,
        None => pipeline::checkpoint_genome(&ck, net.config().num_features())?
            .context("checkpoint stores no genome; pass --genome")?,
    };
    let m = pipeline::test_metrics(&net, &genome, &data, config.supernet.threads)?;
    let text = serde_json::to_string(&m)?;
    run.write("metrics.json", &text)?;
    println!("{text}");
    Ok(())
}

fn export(checkpoint: &Path, tensors: bool) -> Result<()> {
    let path = manifest_path(checkpoint);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest = Manifest::parse(&text)?;
    let params: u64 = manifest
        .tensors
        .iter()
        .filter(|t| !t.name.starts_with("adam."))
        .map(|t| (t.shape[0] * t.shape[1]) as u64)
        .sum();
    let mut metadata = manifest.metadata;
    if let Some(steps) = metadata.get_mut("adam_steps") {
        let updated = steps.as_array().map_or(0, |a| a.iter().filter(|v| v.as_u64() != Some(0)).count());
        *steps = json!({ "tensors_with_updates": updated });
    }
    let mut out = json!({
        "format": manifest.format,
        "version": manifest.version,
        "dtype": manifest.dtype,
        "blob_len": manifest.blob_len,
        "tensor_count": manifest.tensors.len(),
        "stored_parameters": params,
        "metadata": metadata,
    });
    if tensors {
        out["tensors"] = json!(manifest
            .tensors
            .iter()
            .map(|t| json!({"name": t.name, "shape": t.shape, "offset": t.offset}))
            .collect::<Vec<_>>());
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

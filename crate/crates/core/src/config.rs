//! Run configuration: one TOML file plus `section.key=value` overrides.
//!
//! ```toml
//! [data]
//! raw = "data/interactions.jsonl"
//! prepared = "data/prepared.json"
//!
//! [model]
//! dim = 32
//! blocks = 2
//!
//! [supernet]
//! epochs = 5
//!
//! [search]
//! population = 8
//! generations = 8
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::architecture::ModelConfig;
use crate::dataset::synthetic::SyntheticParams;
use crate::dataset::SplitRatios;
use crate::error::{Error, Result};
use crate::evolution::EvolutionConfig;
use crate::supernet::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Interaction log in JSON lines.
    pub raw: PathBuf,
    /// Windowed, split dataset written by `prepare`.
    pub prepared: PathBuf,
    pub ratios: SplitRatios,
    pub fold: usize,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            raw: PathBuf::from("data/interactions.jsonl"),
            prepared: PathBuf::from("data/prepared.json"),
            ratios: SplitRatios::default(),
            fold: 0,
            split_seed: 0,
        }
    }
}

/// Which validation windows score a genome during search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessConfig {
    /// Score on the whole validation split instead of a fixed subset.
    pub full: bool,
    /// Subset size in supernet batches.
    pub batches: usize,
    pub seed: u64,
}

impl Default for FitnessConfig {
    fn default() -> Self {
        Self {
            full: false,
            batches: 8,
            seed: 0,
        }
    }
}

fn retrain_default() -> TrainConfig {
    TrainConfig::retrain()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Parent directory of per-run output directories.
    pub runs_dir: PathBuf,
    pub data: DataConfig,
    pub synthetic: SyntheticParams,
    pub model: ModelConfig,
    pub supernet: TrainConfig,
    #[serde(default = "retrain_default")]
    pub retrain: TrainConfig,
    pub search: EvolutionConfig,
    pub fitness: FitnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            runs_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            synthetic: SyntheticParams::default(),
            model: ModelConfig::default(),
            supernet: TrainConfig::default(),
            retrain: TrainConfig::retrain(),
            search: EvolutionConfig::default(),
            fitness: FitnessConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses, applies `overrides` (`section.key=value`, value in TOML syntax
    /// or a bare string) and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // a partial [retrain] section falls back to the retraining defaults
        if let Some(toml::Value::Table(section)) = table.get_mut("retrain") {
            let defaults = toml::Table::try_from(TrainConfig::retrain()).expect("config serialises");
            for (k, v) in defaults {
                section.entry(k).or_insert(v);
            }
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.supernet.validate("supernet")?;
        self.retrain.validate("retrain")?;
        self.search.validate()?;
        if self.fitness.batches == 0 {
            return Err(Error::invalid("fitness.batches", "must be positive"));
        }
        let r = self.data.ratios;
        let total = r.train + r.validation + r.test;
        if [r.train, r.validation, r.test].iter().any(|&x| x <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("data.ratios", "shares must be positive and sum to 1"));
        }
        if self.data.fold >= crate::dataset::FOLDS {
            return Err(Error::invalid("data.fold", "must be below 5"));
        }
        Ok(())
    }
}

/// Sets `path.to.key = value` inside `table`, creating sections as needed.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::InputMode;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let c = RunConfig::parse("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.supernet.epochs, c.supernet.warmup), (60, 8000));
        assert_eq!((c.retrain.epochs, c.retrain.warmup), (30, 4000));
        assert_eq!((c.search.population, c.search.generations), (20, 30));
        assert!(c.search.reduction);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = RunConfig::parse("[retrain]\nepochs = 3\n[model]\ninput_mode = \"concat\"\n", &[]).unwrap();
        assert_eq!(c.retrain.epochs, 3);
        assert_eq!(c.retrain.warmup, 4000);
        assert_eq!(c.model.input_mode, InputMode::Concat);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = RunConfig::parse("[model]\ndimm = 3\n", &[]).unwrap_err().to_string();
        assert!(err.contains("dimm"), "{err}");
        assert!(RunConfig::parse("[nonsense]\n", &[]).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let err = RunConfig::parse("[model]\ndim = 30\nheads = 4\n", &[]).unwrap_err().to_string();
        assert!(err.contains("model."), "{err}");
        let err = RunConfig::parse("[search]\npopulation = 1\n", &[]).unwrap_err().to_string();
        assert!(err.contains("search.population"), "{err}");
        let err = RunConfig::parse("[retrain]\nbatch_size = 0\n", &[]).unwrap_err().to_string();
        assert!(err.contains("retrain"), "{err}");
    }

    #[test]
    fn overrides_win_over_the_file() {
        let text = "[model]\ndim = 64\n";
        let sets = [
            "model.dim=32".to_string(),
            "search.reduction = false".into(),
            "search.budget=1000".into(),
            "data.prepared=out/p.json".into(),
            "fitness.full=true".into(),
        ];
        let c = RunConfig::parse(text, &sets).unwrap();
        assert_eq!(c.model.dim, 32);
        assert!(!c.search.reduction);
        assert_eq!(c.search.budget, Some(1000));
        assert_eq!(c.data.prepared, PathBuf::from("out/p.json"));
        assert!(c.fitness.full);
        assert!(RunConfig::parse("", &["model".into()]).is_err());
        assert!(RunConfig::parse("", &["model.dim.x=1".into()]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.search.budget = Some(5);
        c.model.dim = 16;
        c.model.heads = 4;
        assert_eq!(RunConfig::parse(&c.to_toml(), &[]).unwrap(), c);
    }
}

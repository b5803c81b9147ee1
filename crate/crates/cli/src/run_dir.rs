//! Per-run output directories and their reproducibility manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use ktnas::config::RunConfig;

pub const MANIFEST: &str = "run.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Serialize)]
struct Seeds {
    synthetic: u64,
    split: u64,
    supernet: u64,
    retrain: u64,
    search: u64,
    fitness: u64,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    args: Vec<String>,
    version: &'static str,
    created: String,
    seeds: Seeds,
    config: &'a RunConfig,
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Uses `explicit` when given, otherwise a fresh `<runs_dir>/<timestamp>-seed<seed>`.
    pub fn create(explicit: Option<&Path>, config: &RunConfig, command: &str, seed: u64) -> Result<Self> {
        let now = chrono::Utc::now();
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let stem = format!("{}-seed{seed}", now.format("%Y%m%dT%H%M%S"));
                let mut candidate = config.runs_dir.join(&stem);
                let mut n = 1;
                while candidate.exists() {
                    candidate = config.runs_dir.join(format!("{stem}-{n}"));
                    n += 1;
                }
                candidate
            }
        };
        fs::create_dir_all(&path).with_context(|| format!("creating run directory {}", path.display()))?;
        let manifest = RunManifest {
            command,
            args: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            created: now.to_rfc3339(),
            seeds: Seeds {
                synthetic: config.synthetic.seed,
                split: config.data.split_seed,
                supernet: config.supernet.seed,
                retrain: config.retrain.seed,
                search: config.search.seed,
                fitness: config.fitness.seed,
            },
            config,
        };
        let run = Self { path };
        run.write(MANIFEST, &serde_json::to_string_pretty(&manifest)?)?;
        run.write(CONFIG_SNAPSHOT, &config.to_toml())?;
        log::info!("run directory {}", run.path.display());
        Ok(run)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.file(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulator::{RaccConfig, TrainConfig, Variant};
use crate::retrieval::retriever::DEFAULT_DIM;
use crate::retrieval::TaskConfig;
use crate::tinylm::PretrainConfig;

/// Everything a run needs. Missing TOML fields fall back to the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Artifact directory shared by all subcommands.
    pub out: PathBuf,
    pub task: TaskConfig,
    pub pretrain: PretrainConfig,
    pub racc: RaccConfig,
    pub train: TrainConfig,
    pub retriever_dim: usize,
    pub retriever_seed: u64,
    /// Minimum number of val instances timed by the benchmark.
    pub bench_min_instances: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/default"),
            task: TaskConfig::default(),
            pretrain: PretrainConfig::default(),
            racc: RaccConfig::default(),
            train: TrainConfig::default(),
            retriever_dim: DEFAULT_DIM,
            retriever_seed: 1,
            bench_min_instances: 100,
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Sets the task, RACC initialization and training seeds together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.task.seed = seed;
        self.racc.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        if self.racc.l_d == 0 || self.racc.l_vq == 0 || self.racc.n_r == 0 {
            return Err(Error::Config("L_d, L_vq and n_r must be positive".into()));
        }
        if self.retriever_dim == 0 {
            return Err(Error::Config("retriever_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn paths(&self) -> Paths {
        Paths::new(&self.out)
    }

    pub fn variant(&self) -> Variant {
        self.train.variant
    }
}

/// Artifact locations under the output directory.
#[derive(Clone, Debug)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn task_config(&self) -> PathBuf {
        self.root.join("task.json")
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.tsv")
    }
    pub fn train_instances(&self) -> PathBuf {
        self.root.join("train.tsv")
    }
    pub fn val_instances(&self) -> PathBuf {
        self.root.join("val.tsv")
    }
    pub fn hyper_model(&self) -> PathBuf {
        self.root.join("hyper.tlm")
    }
    pub fn hetero_base_model(&self) -> PathBuf {
        self.root.join("base_hetero.tlm")
    }
    pub fn racc(&self) -> PathBuf {
        self.root.join("racc.bin")
    }
    pub fn losses(&self) -> PathBuf {
        self.root.join("losses.json")
    }
    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    pub fn metrics_txt(&self) -> PathBuf {
        self.root.join("metrics.txt")
    }
    pub fn bench_json(&self) -> PathBuf {
        self.root.join("bench.json")
    }
    pub fn cache(&self) -> PathBuf {
        self.root.join("docs.rcc")
    }
    pub fn ablation_json(&self) -> PathBuf {
        self.root.join("ablation.json")
    }
    pub fn ablation_txt(&self) -> PathBuf {
        self.root.join("ablation.txt")
    }
}

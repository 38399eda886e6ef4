//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid configuration: a
//! synthetic SBM graph, a 512-unit GCN trained for 400 epochs with Adam
//! (lr 0.01, weight decay 5e-4), and the adaptive schedule
//! `r = 0.5, T = T_burn = 50`.
//!
//! ```toml
//! seed = 0
//! n_seeds = 5
//! out_dir = "out"
//! metric = "npt"
//! metrics = ["npt", "mi", "random"]
//! ratios = [0.02, 0.05]
//! resample_splits = true
//!
//! [data]
//! path = "data/cora"      # omit to generate [sbm]
//!
//! [sbm]
//! n_nodes = 300
//! n_classes = 3
//!
//! [model]
//! arch = "gcn"
//! hidden_dim = 512
//!
//! [train]
//! epochs = 400
//! lr = 0.01
//! weight_decay = 5e-4
//!
//! [selection]
//! burn_in = 50
//! interval = 50
//! keep_ratio = 0.5
//!
//! [scoring]
//! k_shuffles = 10
//! eval_split = "val"
//!
//! [heatmap]
//! n_bins = 8
//! prune = false
//!
//! [bounds]
//! n_instances = 100
//! n_perms = 20
//! t = 2.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_sbm, load_graph, SbmConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::importance::{Metric, ScoreConfig};
use crate::models::{ModelSpec, TrainConfig};
use crate::selection::SelectionConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Graph directory; when absent the `[sbm]` section generates the graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapConfig {
    pub n_bins: usize,
    /// Prune during the heatmap run; off keeps every feature scored at every
    /// checkpoint.
    pub prune: bool,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self { n_bins: 8, prune: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsConfig {
    pub n_instances: usize,
    pub n_perms: usize,
    pub t: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            n_instances: 100,
            n_perms: 20,
            t: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Independent runs averaged by `perturb-study` and `fs-compare`.
    pub n_seeds: usize,
    pub out_dir: PathBuf,
    /// Metric used by `adaptive` and `heatmap`.
    pub metric: Metric,
    /// Metrics compared by `fs-compare`.
    pub metrics: Vec<Metric>,
    /// Kept-feature ratios compared by `fs-compare`.
    pub ratios: Vec<f64>,
    /// Draw a fresh 70/10/20 split for every run instead of using the
    /// graph's own split.
    pub resample_splits: bool,
    pub data: DataConfig,
    pub sbm: SbmConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub scoring: ScoreConfig,
    pub heatmap: HeatmapConfig,
    pub bounds: BoundsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_seeds: 5,
            out_dir: PathBuf::from("out"),
            metric: Metric::Npt,
            metrics: Metric::ALL.to_vec(),
            ratios: vec![0.02, 0.05],
            resample_splits: true,
            data: DataConfig::default(),
            sbm: SbmConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            scoring: ScoreConfig::default(),
            heatmap: HeatmapConfig::default(),
            bounds: BoundsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML file. Relative data paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(base)) = (cfg.data.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Parses TOML text, rejecting keys the schema does not know.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let given: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let known = toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(key) = unknown_key(&given, &known, "") {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.selection.validate()?;
        if let Some(p) = &self.data.path {
            if !p.is_dir() {
                return Err(Error::Config(format!("data path {} is not a directory", p.display())));
            }
        } else {
            self.sbm.validate()?;
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be >= 1".into()));
        }
        if self.scoring.k_shuffles == 0 {
            return Err(Error::Config("k_shuffles must be >= 1".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::Config(format!("ratio {r} outside (0, 1]")));
        }
        Ok(())
    }

    /// Loads the configured graph directory, or generates the SBM graph.
    pub fn graph(&self) -> Result<Graph> {
        match &self.data.path {
            Some(p) => load_graph(p, self.seed),
            None => generate_sbm(&self.sbm),
        }
    }
}

/// First key of `given` absent from the fully serialized `known` table.
fn unknown_key(given: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in given {
        let path = format!("{prefix}{k}");
        match (v, known.get(k)) {
            (_, None) => {
                // optional fields are omitted from the snapshot when unset
                if path != "data.path" {
                    return Some(path);
                }
            }
            (toml::Value::Table(g), Some(toml::Value::Table(kn))) => {
                if let Some(bad) = unknown_key(g, kn, &format!("{path}.")) {
                    return Some(bad);
                }
            }
            _ => {}
        }
    }
    None
}

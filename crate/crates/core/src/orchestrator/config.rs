use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::TrainConfig;
use crate::data::{LabelScale, PartitionMode, SyntheticConfig};
use crate::error::{Error, Result};
use crate::matching::{AvgMode, MatchConfig};
use crate::nn::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Per-cycle capacity estimation.
    Cyclic,
    /// Remaining useful life from sliding windows.
    Noncyclic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    #[serde(alias = "local_only")]
    Local,
    Central,
    Fedavg,
    Fedma,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Local => "local",
            Algo::Central => "central",
            Algo::Fedavg => "fedavg",
            Algo::Fedma => "fedma",
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Cyclic => "cyclic",
            Task::Noncyclic => "noncyclic",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" | "local_only" => Ok(Algo::Local),
            "central" => Ok(Algo::Central),
            "fedavg" => Ok(Algo::Fedavg),
            "fedma" => Ok(Algo::Fedma),
            other => Err(Error::Config(format!("unknown algo `{other}`"))),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" => Ok(Task::Cyclic),
            "noncyclic" => Ok(Task::Noncyclic),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Every experiment setting, as one flat table. Missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub algo: Algo,
    pub seed: u64,
    /// Communication rounds R.
    pub rounds: usize,
    /// FedAvg: epochs E per round, no early stopping.
    pub local_epochs: usize,
    /// Local-only, central and the first FedMA round: max epochs with early stopping.
    pub initial_epochs: usize,
    /// FedMA: max epochs of full retraining before later rounds.
    pub retrain_epochs: usize,
    /// FedMA: max epochs of head retraining after the LSTM broadcast (0 = pure aggregation).
    pub head_epochs: usize,
    pub patience: usize,

    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,
    pub val_fraction: f64,
    pub forget_bias: f64,
    /// Training targets are `(y − label_offset) / label_scale`; defaults depend on the task.
    pub label_offset: Option<f64>,
    pub label_scale: Option<f64>,

    pub sigma_sq: f64,
    pub sigma0_sq: f64,
    pub eps_scale: f64,
    pub penalty_kappa: f64,
    pub match_passes: usize,
    pub avg_mode: AvgMode,

    /// Sliding-window length λ and step Δτ (non-cyclic only).
    pub window: usize,
    pub window_step: usize,
    pub rul_cap: usize,
    pub partition: PartitionMode,
    pub boundaries: Vec<usize>,

    /// Directory of `client_*.csv` files (cyclic). Synthetic data is used when unset.
    pub data_dir: Option<PathBuf>,
    /// Engine CSVs and RUL truth (non-cyclic). Synthetic data is used when unset.
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub rul_file: Option<PathBuf>,

    pub n_clients: usize,
    pub cycles_per_client: usize,
    pub heterogeneity: f64,
    pub n_engines: usize,
    pub lifespan_min: usize,
    pub lifespan_max: usize,
    pub knee_fraction: f64,

    pub out_dir: PathBuf,
    /// 0 lets the thread pool pick.
    pub threads: usize,
    /// Record wall-clock seconds in the metrics (makes reruns differ).
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SyntheticConfig::default();
        Self {
            task: Task::Cyclic,
            algo: Algo::Fedma,
            seed: 7,
            rounds: 20,
            local_epochs: 2,
            initial_epochs: 100,
            retrain_epochs: 120,
            head_epochs: 120,
            patience: 10,
            hidden: 128,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            val_fraction: 0.1,
            forget_bias: 0.0,
            label_offset: None,
            label_scale: None,
            sigma_sq: 1.0,
            sigma0_sq: 10.0,
            eps_scale: 1.0,
            penalty_kappa: 1.0,
            match_passes: 2,
            avg_mode: AvgMode::PerMatch,
            window: 50,
            window_step: 1,
            rul_cap: crate::data::RUL_CAP,
            partition: PartitionMode::Heterogeneous,
            boundaries: vec![200, 350],
            data_dir: None,
            train_csv: None,
            test_csv: None,
            rul_file: None,
            n_clients: synth.n_clients,
            cycles_per_client: synth.cycles_per_client,
            heterogeneity: synth.heterogeneity,
            n_engines: synth.n_engines,
            lifespan_min: synth.lifespan_min,
            lifespan_max: synth.lifespan_max,
            knee_fraction: synth.knee_fraction,
            out_dir: PathBuf::from("out"),
            threads: 0,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.rounds == 0 {
            return fail("rounds must be at least 1");
        }
        if self.initial_epochs == 0 || self.local_epochs == 0 {
            return fail("initial_epochs and local_epochs must be at least 1");
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return fail("hidden and batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm >= 0.0) {
            return fail("learning_rate must be positive and clip_norm non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction must lie in [0, 1)");
        }
        if self.window == 0 || self.window_step == 0 {
            return fail("window and window_step must be at least 1");
        }
        self.match_config(0).validate()?;
        self.synthetic().validate()?;
        self.labels()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            val_fraction: self.val_fraction,
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
        }
    }

    /// Matching settings for one round; the client order is reshuffled per round.
    pub fn match_config(&self, round: usize) -> MatchConfig {
        MatchConfig {
            sigma_sq: self.sigma_sq,
            sigma0_sq: self.sigma0_sq,
            eps_scale: self.eps_scale,
            penalty_kappa: self.penalty_kappa,
            passes: self.match_passes,
            seed: self.seed.wrapping_add(round as u64),
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_clients: self.n_clients,
            cycles_per_client: self.cycles_per_client,
            seed: self.seed,
            heterogeneity: self.heterogeneity,
            n_engines: self.n_engines,
            lifespan_min: self.lifespan_min,
            lifespan_max: self.lifespan_max,
            knee_fraction: self.knee_fraction,
        }
    }

    /// Capacity targets are centred near 1.5 Ah; RUL targets span `[0, cap]`.
    pub fn labels(&self) -> Result<LabelScale> {
        let (offset, scale) = match self.task {
            Task::Cyclic => (1.5, 0.25),
            Task::Noncyclic => (self.rul_cap as f64 / 2.0, self.rul_cap as f64 / 2.0),
        };
        LabelScale::new(self.label_offset.unwrap_or(offset), self.label_scale.unwrap_or(scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn roundtrip_through_toml() {
        let cfg = ExperimentConfig {
            task: Task::Noncyclic,
            algo: Algo::Fedavg,
            label_offset: Some(1.0),
            data_dir: Some("data".into()),
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn flat_keys_parse() {
        let cfg = ExperimentConfig::from_toml_str(
            "task = \"noncyclic\"\nalgo = \"local_only\"\nrounds = 5\navg_mode = \"uniform_j\"\npartition = \"homogeneous\"\n",
        )
        .unwrap();
        assert_eq!((cfg.task, cfg.algo, cfg.rounds), (Task::Noncyclic, Algo::Local, 5));
        assert_eq!(cfg.avg_mode, AvgMode::UniformJ);
        assert_eq!(cfg.labels().unwrap(), LabelScale::new(65.0, 65.0).unwrap());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml_str("rounds = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus_key = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("algo = \"bogus\"").is_err());
        assert!(ExperimentConfig::from_toml_str("sigma_sq = 0.0").is_err());
        assert!(ExperimentConfig::from_toml_str("label_scale = -1.0").is_err());
    }
}

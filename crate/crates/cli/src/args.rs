use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, Parser, Subcommand, ValueEnum};
use fedhealth::data::PartitionMode;
use fedhealth::matching::AvgMode;
use fedhealth::orchestrator::{Algo, ExperimentConfig, Task};

fn defaults() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn given(m: &ArgMatches, id: &str) -> bool {
    matches!(m.try_get_raw(id), Ok(Some(_))) && m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Federated LSTM health prognostics: FedAvg and FedMA on cyclic and run-to-failure data.
#[derive(Parser, Debug)]
#[command(name = "fedhealth", version, about)]
pub struct Cli {
    /// TOML file of experiment keys; flags given on the command line win over it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (data, initialization, shuffling, matching order).
    #[arg(long, global = true, default_value_t = defaults().seed)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value_os_t = defaults().out_dir)]
    pub out: PathBuf,
    /// Worker threads for client training (0 = one per core).
    #[arg(long, global = true, default_value_t = defaults().threads)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    /// Applies the global flags that were given explicitly.
    pub fn apply(&self, m: &ArgMatches, cfg: &mut ExperimentConfig) {
        if given(m, "seed") {
            cfg.seed = self.seed;
        }
        if given(m, "out") {
            cfg.out_dir = self.out.clone();
        }
        if given(m, "threads") {
            cfg.threads = self.threads;
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and print a per-client summary.
    Synth(SynthArgs),
    /// Run an experiment and write metrics.csv, best_model.json and config.toml.
    Run(RunArgs),
    /// Evaluate a checkpoint on every client's test split.
    Eval(EvalArgs),
    /// Write final hidden activations of selected neurons for one client's windows.
    DumpFeatures(DumpArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `run`.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Metrics CSV of a local-only run; adds an IMP column.
    #[arg(long, value_name = "PATH")]
    pub baseline: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    /// Checkpoint written by `run`.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Neuron indices: ranges and lists such as `0-9` or `0-2,7`.
    #[arg(long, default_value = "0-9", value_parser = parse_neurons)]
    pub neurons: Neurons,
    /// Client whose windows are fed through the model.
    #[arg(long, default_value_t = 0)]
    pub client: usize,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Output CSV [default: <out>/features.csv].
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neurons(pub Vec<usize>);

pub fn parse_neurons(s: &str) -> Result<Neurons, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    Ok(Neurons(out))
}

macro_rules! config_flags {
    ($($(#[$meta:meta])* $field:ident: $ty:ty;)*) => {
        /// Experiment keys, one flag per config key.
        #[derive(Args, Debug, Clone)]
        #[command(next_help_heading = "Experiment")]
        pub struct ConfigArgs {
            $(
                $(#[$meta])*
                #[arg(long, default_value_t = defaults().$field)]
                pub $field: $ty,
            )*
            /// Lifespan bucket boundaries for heterogeneous partitioning.
            #[arg(long, value_delimiter = ',', default_value = "200,350")]
            pub boundaries: Vec<usize>,
            /// Training targets are (y - label_offset) / label_scale [default: 1.5 cyclic, rul_cap/2 noncyclic].
            #[arg(long)]
            pub label_offset: Option<f64>,
            /// [default: 0.25 cyclic, rul_cap/2 noncyclic].
            #[arg(long)]
            pub label_scale: Option<f64>,
            /// Directory of client_*.csv files (cyclic) [default: synthetic data].
            #[arg(long, value_name = "DIR")]
            pub data_dir: Option<PathBuf>,
            /// Engine training CSV (noncyclic) [default: synthetic data].
            #[arg(long, value_name = "PATH")]
            pub train_csv: Option<PathBuf>,
            /// Engine test CSV (noncyclic).
            #[arg(long, value_name = "PATH")]
            pub test_csv: Option<PathBuf>,
            /// True RUL per test engine, one per line (noncyclic).
            #[arg(long, value_name = "PATH")]
            pub rul_file: Option<PathBuf>,
            /// Record wall-clock seconds per round in the metrics [default: off].
            #[arg(long)]
            pub timing: bool,
        }

        impl ConfigArgs {
            /// Copies every flag given on the command line into `cfg`.
            pub fn apply(&self, m: &ArgMatches, cfg: &mut ExperimentConfig) {
                $(
                    if given(m, stringify!($field)) {
                        cfg.$field = self.$field.clone();
                    }
                )*
                if given(m, "boundaries") {
                    cfg.boundaries = self.boundaries.clone();
                }
                for (id, value, slot) in [
                    ("label_offset", self.label_offset, &mut cfg.label_offset),
                    ("label_scale", self.label_scale, &mut cfg.label_scale),
                ] {
                    if given(m, id) {
                        *slot = value;
                    }
                }
                for (id, value, slot) in [
                    ("data_dir", &self.data_dir, &mut cfg.data_dir),
                    ("train_csv", &self.train_csv, &mut cfg.train_csv),
                    ("test_csv", &self.test_csv, &mut cfg.test_csv),
                    ("rul_file", &self.rul_file, &mut cfg.rul_file),
                ] {
                    if given(m, id) {
                        *slot = value.clone();
                    }
                }
                if self.timing {
                    cfg.timing = true;
                }
            }
        }
    };
}

config_flags! {
    /// cyclic (capacity per discharge cycle) or noncyclic (RUL from sliding windows).
    task: Task;
    /// local (alias local_only), central, fedavg or fedma.
    algo: Algo;
    /// Communication rounds.
    rounds: usize;
    /// FedAvg epochs per round.
    local_epochs: usize;
    /// Max epochs for local-only, central and the first FedMA round (early stopping).
    initial_epochs: usize;
    /// FedMA max epochs of full retraining before each later round.
    retrain_epochs: usize;
    /// FedMA max epochs of head retraining after the LSTM broadcast (0 = none).
    head_epochs: usize;
    /// Early-stopping patience in epochs.
    patience: usize;
    /// LSTM hidden neurons.
    hidden: usize;
    /// Mini-batch size.
    batch_size: usize;
    /// Adam learning rate.
    learning_rate: f64;
    /// Global gradient-norm clip (0 = off).
    clip_norm: f64;
    /// Fraction of training windows held out (from the end) for early stopping.
    val_fraction: f64;
    /// Initial forget-gate bias.
    forget_bias: f64;
    /// Client noise variance in the matching cost.
    sigma_sq: f64;
    /// Prior variance in the matching cost.
    sigma0_sq: f64;
    /// Multiplier on the median match cost used as the new-neuron threshold.
    eps_scale: f64;
    /// Slope of the log growth penalty on new neurons.
    penalty_kappa: f64;
    /// Matching sweeps over all clients.
    match_passes: usize;
    /// per_match (1/n_i) or uniform_j (1/J).
    avg_mode: AvgMode;
    /// Sliding-window length (noncyclic).
    window: usize;
    /// Sliding-window step (noncyclic).
    window_step: usize;
    /// RUL cap before degradation onset.
    rul_cap: usize;
    /// heterogeneous (by lifespan bucket) or homogeneous (seeded even split).
    partition: PartitionMode;
    /// Synthetic clients (cyclic).
    #[arg(alias = "clients")]
    n_clients: usize;
    /// Synthetic discharge cycles per client.
    cycles_per_client: usize;
    /// Synthetic fade-rate spread across clients, in [0, 1].
    heterogeneity: f64;
    /// Synthetic engines (noncyclic).
    #[arg(alias = "engines")]
    n_engines: usize;
    /// Shortest synthetic engine lifespan.
    lifespan_min: usize;
    /// Longest synthetic engine lifespan.
    lifespan_max: usize;
    /// Mean degradation onset as a fraction of lifespan.
    knee_fraction: f64;
}

//! Experiment drivers: local-only and central baselines, FedAvg rounds and FedMA rounds.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::client::{evaluate_rmse, ClientState};
use crate::data::{
    gen_synthetic_cyclic, gen_synthetic_noncyclic, load_cyclic_dir, load_engine_csv, load_engine_test,
    partition_clients, prepare_cyclic_client, prepare_engine_client, truncate_for_test, ClientData, CyclicRecord,
    EngineRecord, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::matching::{
    average_output_layer, fedavg_aggregate, match_lstm_layers, matched_average_layer, permute_dense, permute_layer,
    sample_fractions, MatchResult,
};
use crate::nn::{init_model_with, InitOptions, ModelMeta, ModelParams};
use crate::orchestrator::checkpoint::{save_checkpoint, Checkpoint};
use crate::orchestrator::config::{Algo, ExperimentConfig, Task};
use crate::orchestrator::metrics::{best_round, write_metrics_csv, RoundRecord};

/// Per-client train/test windows plus the shared model shape.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub clients: Vec<ClientData>,
    pub meta: ModelMeta,
}

/// Synthetic run-to-failure training engines and truncated test engines.
pub fn synthetic_engines(cfg: &ExperimentConfig) -> Result<(Vec<EngineRecord>, Vec<EngineRecord>)> {
    let synth = cfg.synthetic();
    let train = gen_synthetic_noncyclic(&synth)?;
    let test_full = gen_synthetic_noncyclic(&SyntheticConfig {
        seed: synth.seed.wrapping_add(1),
        ..synth
    })?;
    let test = truncate_for_test(&test_full, synth.seed.wrapping_add(2), cfg.window);
    Ok((train, test))
}

/// Cyclic records per client, from `data_dir` or the synthetic generator.
pub fn cyclic_records(cfg: &ExperimentConfig) -> Result<Vec<Vec<CyclicRecord>>> {
    match &cfg.data_dir {
        Some(dir) => Ok(load_cyclic_dir(dir)?.into_iter().map(|(_, r)| r).collect()),
        None => gen_synthetic_cyclic(&cfg.synthetic()),
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let labels = cfg.labels()?;
    let (clients, seq_len) = match cfg.task {
        Task::Cyclic => {
            let records = cyclic_records(cfg)?;
            // One sequence length for every client: the shortest cycle anywhere.
            let seq_len = records
                .iter()
                .flatten()
                .map(CyclicRecord::len)
                .min()
                .ok_or_else(|| Error::Empty("no discharge cycles".into()))?;
            let clients = records
                .iter()
                .map(|r| prepare_cyclic_client(r, seq_len, labels))
                .collect::<Result<Vec<_>>>()?;
            (clients, seq_len)
        }
        Task::Noncyclic => {
            let (train, test) = match (&cfg.train_csv, &cfg.test_csv, &cfg.rul_file) {
                (Some(tr), Some(te), Some(rul)) => {
                    (load_engine_csv(tr, cfg.rul_cap)?, load_engine_test(te, rul, cfg.rul_cap)?)
                }
                (None, None, None) => synthetic_engines(cfg)?,
                _ => return Err(Error::Config("train_csv, test_csv and rul_file must be given together".into())),
            };
            let train_parts = partition_clients(&train, cfg.partition, &cfg.boundaries, cfg.seed)?;
            let test_parts = partition_clients(&test, cfg.partition, &cfg.boundaries, cfg.seed.wrapping_add(1))?;
            let clients = train_parts
                .iter()
                .zip(&test_parts)
                .map(|(tr, te)| prepare_engine_client(tr, te, cfg.window, cfg.window_step, labels))
                .collect::<Result<Vec<_>>>()?;
            (clients, cfg.window)
        }
    };
    if let Some((j, _)) = clients.iter().enumerate().find(|(_, c)| c.test.is_empty()) {
        return Err(Error::Empty(format!("client {j} has no test windows")));
    }
    let d_in = clients[0].train.n_features;
    Ok(PreparedData {
        clients,
        meta: ModelMeta {
            d_in,
            hidden: cfg.hidden,
            seq_len,
        },
    })
}

fn init_for(cfg: &ExperimentConfig, meta: ModelMeta, seed: u64) -> ModelParams<f64> {
    init_model_with(
        meta.d_in,
        meta.hidden,
        meta.seq_len,
        seed,
        InitOptions {
            forget_bias: cfg.forget_bias,
        },
    )
}

/// Client states; `shared_init` gives every client the same starting model,
/// otherwise client `j` starts from seed `seed + j`.
pub fn make_clients(cfg: &ExperimentConfig, data: &PreparedData, shared_init: bool) -> Result<Vec<ClientState<f64>>> {
    data.clients
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let seed = if shared_init { cfg.seed } else { cfg.seed.wrapping_add(j as u64) };
            ClientState::new(j, init_for(cfg, data.meta, seed), d, cfg.seed, cfg.train_config())
        })
        .collect()
}

fn train_all(clients: &mut [ClientState<f64>], epochs: usize, patience: Option<usize>) -> Result<()> {
    clients
        .par_iter_mut()
        .map(|c| c.train_local(epochs, patience).map(|_| ()))
        .collect()
}

fn evaluate_all(model: &ModelParams<f64>, clients: &[ClientState<f64>]) -> Result<Vec<f64>> {
    clients.iter().map(|c| evaluate_rmse(model, &c.test)).collect()
}

#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub clients: Vec<ClientState<f64>>,
    pub rmse: Vec<f64>,
}

/// Each client trains alone on its own data.
pub fn run_local_only(cfg: &ExperimentConfig, data: &PreparedData) -> Result<LocalOutcome> {
    let mut clients = make_clients(cfg, data, false)?;
    train_all(&mut clients, cfg.initial_epochs, Some(cfg.patience))?;
    let rmse = clients.iter().map(ClientState::evaluate_test).collect::<Result<Vec<_>>>()?;
    Ok(LocalOutcome { clients, rmse })
}

#[derive(Clone, Debug)]
pub struct CentralOutcome {
    pub model: ModelParams<f64>,
    pub rmse: Vec<f64>,
}

/// One model trained on every client's windows pooled together.
pub fn run_central(cfg: &ExperimentConfig, data: &PreparedData) -> Result<CentralOutcome> {
    let clients = make_clients(cfg, data, true)?;
    let mut pooled = clients[0].clone();
    for c in &clients[1..] {
        pooled.train.extend(&c.train)?;
        pooled.validation.extend(&c.validation)?;
    }
    pooled.train_local(cfg.initial_epochs, Some(cfg.patience))?;
    let rmse = evaluate_all(&pooled.model, &clients)?;
    Ok(CentralOutcome {
        model: pooled.model,
        rmse,
    })
}

#[derive(Clone, Debug)]
pub struct FlOutcome {
    pub records: Vec<RoundRecord>,
    pub best_model: ModelParams<f64>,
    /// Round number (1-based) of `best_model`.
    pub best_round: usize,
    pub final_model: ModelParams<f64>,
    pub clients: Vec<ClientState<f64>>,
}

struct BestTracker {
    records: Vec<RoundRecord>,
    best: Option<(f64, usize, ModelParams<f64>)>,
}

impl BestTracker {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            best: None,
        }
    }

    fn push(&mut self, record: RoundRecord, model: &ModelParams<f64>) {
        if self.best.as_ref().is_none_or(|(r, _, _)| record.fed_rmse < *r) {
            self.best = Some((record.fed_rmse, record.round, model.clone()));
        }
        self.records.push(record);
    }

    fn finish(self, final_model: ModelParams<f64>, clients: Vec<ClientState<f64>>) -> FlOutcome {
        let (_, best_round, best_model) = self.best.expect("at least one round");
        debug_assert_eq!(self.records[best_round_index(&self.records)].round, best_round);
        FlOutcome {
            records: self.records,
            best_model,
            best_round,
            final_model,
            clients,
        }
    }
}

fn best_round_index(records: &[RoundRecord]) -> usize {
    best_round(records).expect("non-empty")
}

fn elapsed(cfg: &ExperimentConfig, start: Instant) -> f64 {
    if cfg.timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

/// Coordinate-wise averaging: every round, clients train `local_epochs` from the
/// current federated weights and the server averages them by sample fraction.
pub fn run_fedavg(cfg: &ExperimentConfig, data: &PreparedData, baseline: Option<&[f64]>) -> Result<FlOutcome> {
    cfg.validate()?;
    let mut clients = make_clients(cfg, data, true)?;
    let fractions = sample_fractions(&clients.iter().map(|c| c.train.len()).collect::<Vec<_>>())?;
    let mut tracker = BestTracker::new();
    let mut fed = clients[0].model.clone();
    for round in 1..=cfg.rounds {
        let start = Instant::now();
        train_all(&mut clients, cfg.local_epochs, None)?;
        let models: Vec<_> = clients.iter().map(|c| c.model.clone()).collect();
        fed = fedavg_aggregate(&models, &fractions)?;
        for c in clients.iter_mut() {
            c.set_model(fed.clone());
        }
        let mut rec = RoundRecord::new(round, Algo::Fedavg, evaluate_all(&fed, &clients)?, fed.meta.hidden, baseline);
        rec.seconds = elapsed(cfg, start);
        log::info!("fedavg round {round}: rmse {:.5}", rec.fed_rmse);
        tracker.push(rec, &fed);
    }
    Ok(tracker.finish(fed, clients))
}

#[derive(Clone, Debug)]
pub struct FedmaRound {
    pub model: ModelParams<f64>,
    pub matching: MatchResult,
}

/// One layer-wise matched-averaging round over already trained clients.
///
/// The LSTM layer is matched, permuted and averaged, then broadcast; each
/// client's head is scattered to the global neuron order and retrained with
/// the LSTM frozen; finally the heads are averaged and the full model is
/// broadcast. Adam state is reset at each broadcast.
pub fn run_fedma_round(clients: &mut [ClientState<f64>], cfg: &ExperimentConfig, round: usize) -> Result<FedmaRound> {
    let layers: Vec<_> = clients.iter().map(|c| &c.model.lstm).collect();
    let matching = match_lstm_layers(&layers, &cfg.match_config(round))?;
    let permuted = clients
        .iter()
        .zip(&matching.assignments)
        .map(|(c, a)| permute_layer(&c.model.lstm, a))
        .collect::<Result<Vec<_>>>()?;
    let lstm = matched_average_layer(&permuted, &matching.assignments, cfg.avg_mode)?;
    let meta = ModelMeta {
        hidden: lstm.hidden(),
        ..clients[0].model.meta
    };

    let heads = clients
        .iter()
        .zip(&matching.assignments)
        .map(|(c, a)| permute_dense(&c.model.dense, a))
        .collect::<Result<Vec<_>>>()?;
    for (c, dense) in clients.iter_mut().zip(heads) {
        c.set_model(ModelParams {
            lstm: lstm.clone(),
            dense,
            meta,
        });
    }
    if cfg.head_epochs > 0 {
        clients
            .par_iter_mut()
            .map(|c| c.retrain_frozen_prefix(1, cfg.head_epochs, Some(cfg.patience)).map(|_| ()))
            .collect::<Result<()>>()?;
    }
    let heads: Vec<_> = clients.iter().map(|c| c.model.dense.clone()).collect();
    let dense = average_output_layer(&heads, &matching.assignments, cfg.avg_mode)?;
    let model = ModelParams { lstm, dense, meta };
    model.validate()?;
    for c in clients.iter_mut() {
        c.set_model(model.clone());
    }
    debug_assert!(clients.iter().all(|c| c.model == model));
    Ok(FedmaRound { model, matching })
}

/// FedMA rounds. `initial` supplies already trained local clients (for
/// example from [`run_local_only`]); otherwise they are trained here.
pub fn run_fedma(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    initial: Option<Vec<ClientState<f64>>>,
    baseline: Option<&[f64]>,
) -> Result<FlOutcome> {
    cfg.validate()?;
    let mut clients = match initial {
        Some(c) => c,
        None => {
            let mut c = make_clients(cfg, data, false)?;
            train_all(&mut c, cfg.initial_epochs, Some(cfg.patience))?;
            c
        }
    };
    let mut tracker = BestTracker::new();
    let mut fed = clients[0].model.clone();
    for round in 1..=cfg.rounds {
        let start = Instant::now();
        if round > 1 && cfg.retrain_epochs > 0 {
            train_all(&mut clients, cfg.retrain_epochs, Some(cfg.patience))?;
        }
        fed = run_fedma_round(&mut clients, cfg, round)?.model;
        let mut rec = RoundRecord::new(round, Algo::Fedma, evaluate_all(&fed, &clients)?, fed.meta.hidden, baseline);
        rec.seconds = elapsed(cfg, start);
        log::info!("fedma round {round}: rmse {:.5}, hidden {}", rec.fed_rmse, rec.hidden_size);
        tracker.push(rec, &fed);
    }
    Ok(tracker.finish(fed, clients))
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub best_model: ModelParams<f64>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Runs `cfg.algo` end to end and writes `metrics.csv`, `best_model.json`
/// and `config.toml` into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;

    let run = || -> Result<(Vec<RoundRecord>, ModelParams<f64>, usize)> {
        let data = prepare_data(cfg)?;
        let local = run_local_only(cfg, &data)?;
        let hidden = data.meta.hidden;
        Ok(match cfg.algo {
            Algo::Local => {
                let best = (0..local.rmse.len())
                    .min_by(|&a, &b| local.rmse[a].total_cmp(&local.rmse[b]))
                    .expect("at least one client");
                let model = local.clients[best].model.clone();
                (vec![RoundRecord::new(0, Algo::Local, local.rmse, hidden, None)], model, 0)
            }
            Algo::Central => {
                let c = run_central(cfg, &data)?;
                (vec![RoundRecord::new(0, Algo::Central, c.rmse, hidden, Some(&local.rmse))], c.model, 0)
            }
            Algo::Fedavg => {
                let o = run_fedavg(cfg, &data, Some(&local.rmse))?;
                (o.records, o.best_model, o.best_round)
            }
            Algo::Fedma => {
                let baseline = local.rmse.clone();
                let o = run_fedma(cfg, &data, Some(local.clients), Some(&baseline))?;
                (o.records, o.best_model, o.best_round)
            }
        })
    };
    let (records, best_model, round) = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };

    let metrics_path = out.join("metrics.csv");
    write_metrics_csv(&metrics_path, &records)?;
    let checkpoint_path = out.join("best_model.json");
    save_checkpoint(
        &checkpoint_path,
        &Checkpoint {
            model: best_model.clone(),
            task: cfg.task,
            round,
            seed: cfg.seed,
        },
    )?;
    Ok(ExperimentOutcome {
        records,
        best_model,
        metrics_path,
        checkpoint_path,
    })
}

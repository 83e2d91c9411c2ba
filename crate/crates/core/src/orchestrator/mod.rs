//! Multi-round federated training, evaluation, metrics and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{Algo, ExperimentConfig, Task};
pub use metrics::{best_round, improvement, read_metrics_csv, write_metrics_csv, RoundRecord, METRICS_HEADER};
pub use run::{
    cyclic_records, make_clients, prepare_data, run_central, run_experiment, run_fedavg, run_fedma, run_fedma_round,
    run_local_only, synthetic_engines, CentralOutcome, ExperimentOutcome, FedmaRound, FlOutcome, LocalOutcome,
    PreparedData,
};

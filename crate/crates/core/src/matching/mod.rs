//! Aggregation: coordinate-wise FedAvg and neuron-matched averaging.

pub mod average;
pub mod bbp;
pub mod fedavg;
pub mod hungarian;
pub mod neurons;

pub use average::{
    average_output_layer, matched_aggregate, matched_average_layer, permute_dense, permute_hidden_hidden, permute_input_hidden,
    permute_layer, AvgMode, InputBlocks,
};
pub use bbp::{
    assignment_cost_matrix, bbp_map_match, match_lstm_layers, AssignmentMatrix, GlobalNeuronPool, MatchConfig,
    MatchResult,
};
pub use fedavg::{fedavg_aggregate, sample_fractions};
pub use hungarian::{hungarian_solve, AssignCost, Assignment};
pub use neurons::{extract_neuron_vectors, neuron_dim, rebuild_input_side, NeuronVector};

//! Iterative neuron matching against a global pool (BBP-MAP as a sequence of assignment problems).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::hungarian::hungarian_solve;
use crate::matching::neurons::{extract_neuron_vectors, NeuronVector};
use crate::nn::LstmLayer;
use crate::scalar::Scalar;
use crate::tensor::Tensor2D;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Client noise variance σ².
    pub sigma_sq: f64,
    /// Prior variance σ₀².
    pub sigma0_sq: f64,
    /// ε = eps_scale × median existing-column cost.
    pub eps_scale: f64,
    /// Slope κ of the growth penalty κ·ln(i).
    pub penalty_kappa: f64,
    pub passes: usize,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            sigma_sq: 1.0,
            sigma0_sq: 10.0,
            eps_scale: 1.0,
            penalty_kappa: 1.0,
            passes: 2,
            seed: 0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0 && self.sigma0_sq > 0.0) {
            return Err(Error::Config("matching variances must be positive".into()));
        }
        if !(self.eps_scale >= 0.0 && self.penalty_kappa >= 0.0) {
            return Err(Error::Config("eps_scale and penalty_kappa must be non-negative".into()));
        }
        if self.passes == 0 {
            return Err(Error::Config("at least one matching pass is required".into()));
        }
        Ok(())
    }
}

/// Compact form of Π_j: local neuron `l` sits at global index `mapping[l]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub client_id: usize,
    pub mapping: Vec<usize>,
    pub global_size: usize,
}

impl AssignmentMatrix {
    pub fn identity(client_id: usize, size: usize) -> Self {
        Self {
            client_id,
            mapping: (0..size).collect(),
            global_size: size,
        }
    }

    pub fn local_size(&self) -> usize {
        self.mapping.len()
    }

    /// Injective with image inside `[0, global_size)`.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.global_size];
        for (l, &i) in self.mapping.iter().enumerate() {
            if i >= self.global_size || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!(
                    "client {}: neuron {l} maps to invalid or repeated global index {i}",
                    self.client_id
                )));
            }
        }
        Ok(())
    }

    /// Which global neurons this client owns.
    pub fn owned(&self) -> Vec<bool> {
        let mut owned = vec![false; self.global_size];
        for &i in &self.mapping {
            owned[i] = true;
        }
        owned
    }

    /// Dense `L_j × L′` 0/1 matrix.
    pub fn to_dense(&self) -> Tensor2D<f64> {
        let mut p = Tensor2D::zeros(self.local_size(), self.global_size);
        for (l, &i) in self.mapping.iter().enumerate() {
            p.set(l, i, 1.0);
        }
        p
    }
}

/// Global neuron means θ_i with match counts n_i.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GlobalNeuronPool {
    pub thetas: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl GlobalNeuronPool {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// Means over the placed clients, summed in client order.
    fn from_assignments(vectors: &[Vec<NeuronVector>], maps: &[Option<Vec<usize>>], size: usize, dim: usize) -> Self {
        let mut sums = vec![vec![0.0; dim]; size];
        let mut counts = vec![0; size];
        for (vs, map) in vectors.iter().zip(maps) {
            let Some(map) = map else { continue };
            for (v, &i) in vs.iter().zip(map) {
                for (s, &x) in sums[i].iter_mut().zip(&v.values) {
                    *s += x;
                }
                counts[i] += 1;
            }
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            if n > 0 {
                s.iter_mut().for_each(|x| *x /= n as f64);
            }
        }
        Self { thetas: sums, counts }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `L_j × (L + L_j)` costs. Column `i < L` is the posterior distance to θ_i;
/// column `L + k` opens a new neuron at cost `ε + κ·ln(L + k + 1)`.
pub fn assignment_cost_matrix(vectors: &[NeuronVector], pool: &GlobalNeuronPool, cfg: &MatchConfig) -> Result<Tensor2D<f64>> {
    let (lj, l) = (vectors.len(), pool.len());
    if lj == 0 && l == 0 {
        return Err(Error::Empty("nothing to match: empty pool and empty client".into()));
    }
    let denoms: Vec<f64> = pool
        .counts
        .iter()
        .map(|&n| cfg.sigma_sq + cfg.sigma0_sq / (1.0 + n as f64 * cfg.sigma0_sq / cfg.sigma_sq))
        .collect();
    let rows: Vec<Vec<f64>> = vectors
        .par_iter()
        .map(|w| {
            pool.thetas
                .iter()
                .zip(&denoms)
                .map(|(theta, &den)| {
                    let d: f64 = w.values.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum();
                    d / den
                })
                .collect()
        })
        .collect();
    let eps = cfg.eps_scale * median(rows.iter().flatten().copied().collect());
    let mut cost = Tensor2D::zeros(lj, l + lj);
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteCost { row: r, col: c });
            }
            cost.set(r, c, v);
        }
        for k in 0..lj {
            cost.set(r, l + k, eps + cfg.penalty_kappa * ((l + k + 1) as f64).ln());
        }
    }
    Ok(cost)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub assignments: Vec<AssignmentMatrix>,
    pub pool: GlobalNeuronPool,
    /// Sweeps actually run (early exit once nothing changes).
    pub passes_run: usize,
}

impl MatchResult {
    pub fn global_size(&self) -> usize {
        self.pool.len()
    }
}

/// Drops unowned global indices, keeping relative order. Returns the new size.
fn compact(maps: &mut [Option<Vec<usize>>], size: usize) -> usize {
    let mut owned = vec![false; size];
    for i in maps.iter().flatten().flatten() {
        owned[*i] = true;
    }
    let mut remap = vec![usize::MAX; size];
    let mut next = 0;
    for (i, o) in owned.iter().enumerate() {
        if *o {
            remap[i] = next;
            next += 1;
        }
    }
    for i in maps.iter_mut().flatten().flatten() {
        *i = remap[*i];
    }
    next
}

/// Relabels global indices by first appearance (clients in id order, neurons in order).
fn canonical(maps: &[Option<Vec<usize>>], size: usize) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; size];
    let mut next = 0;
    maps.iter()
        .map(|m| {
            m.iter()
                .flatten()
                .map(|&i| {
                    if label[i] == usize::MAX {
                        label[i] = next;
                        next += 1;
                    }
                    label[i]
                })
                .collect()
        })
        .collect()
}

/// Matches every client's neurons into a shared pool.
///
/// Each sweep visits clients in a seeded random order; a client's own
/// contributions are removed from the pool before it is re-matched. New neurons
/// are appended in increasing column order. Sweeps stop early once a full sweep
/// leaves every assignment unchanged.
pub fn bbp_map_match(clients: &[Vec<NeuronVector>], cfg: &MatchConfig) -> Result<MatchResult> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::Empty("no clients to match".into()));
    }
    let dim = clients
        .iter()
        .flatten()
        .map(|v| v.values.len())
        .next()
        .ok_or_else(|| Error::Empty("nothing to match: every client is empty".into()))?;
    if clients.iter().flatten().any(|v| v.values.len() != dim) {
        return Err(Error::ShapeMismatch("neuron vectors differ in length".into()));
    }

    let j = clients.len();
    let mut maps: Vec<Option<Vec<usize>>> = vec![None; j];
    let mut size = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..j).collect();
    let mut passes_run = 0;

    for _ in 0..cfg.passes {
        let before = canonical(&maps, size);
        order.shuffle(&mut rng);
        for &c in &order {
            maps[c] = None;
            size = compact(&mut maps, size);
            let pool = GlobalNeuronPool::from_assignments(clients, &maps, size, dim);
            let vectors = &clients[c];
            let mapping: Vec<usize> = if pool.is_empty() {
                (0..vectors.len()).collect()
            } else {
                let cost = assignment_cost_matrix(vectors, &pool, cfg)?;
                let cols = hungarian_solve(&cost)?.row_to_col;
                let mut fresh: Vec<usize> = cols.iter().copied().filter(|&col| col >= size).collect();
                fresh.sort_unstable();
                cols.iter()
                    .map(|&col| {
                        if col < size {
                            col
                        } else {
                            size + fresh.binary_search(&col).expect("fresh column present")
                        }
                    })
                    .collect()
            };
            let grown = mapping.iter().filter(|&&i| i >= size).count();
            debug_assert!(grown <= vectors.len());
            size += grown;
            maps[c] = Some(mapping);
        }
        passes_run += 1;
        if canonical(&maps, size) == before {
            break;
        }
    }

    let pool = GlobalNeuronPool::from_assignments(clients, &maps, size, dim);
    debug_assert!(pool.counts.iter().all(|&n| n >= 1));
    let assignments = maps
        .into_iter()
        .enumerate()
        .map(|(c, m)| AssignmentMatrix {
            client_id: c,
            mapping: m.expect("every client placed"),
            global_size: size,
        })
        .collect();
    Ok(MatchResult {
        assignments,
        pool,
        passes_run,
    })
}

/// Extracts neuron vectors from each client's LSTM layer and matches them.
pub fn match_lstm_layers<T: Scalar>(layers: &[&LstmLayer<T>], cfg: &MatchConfig) -> Result<MatchResult> {
    let vectors: Vec<Vec<NeuronVector>> = layers
        .iter()
        .enumerate()
        .map(|(c, l)| extract_neuron_vectors(*l, c))
        .collect();
    bbp_map_match(&vectors, cfg)
}

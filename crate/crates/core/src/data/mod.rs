//! Degradation data: records, standardization, windowing, synthetic generators
//! and client partitioning.
//!
//! Raw records are always `f64`; [`SequenceDataset`] is generic so training can
//! run in either precision.

pub mod io;
pub mod partition;
pub mod prepare;
pub mod segment;
pub mod standardize;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Sample;
use crate::scalar::Scalar;
use crate::tensor::Tensor2D;

pub use io::{
    load_cyclic_csv, load_cyclic_dir, load_engine_csv, load_engine_test, load_rul_file,
    write_cyclic_csv, write_engine_csv, write_rul_file, DROPPED_SENSORS, RAW_SENSORS,
};
pub use partition::{partition_clients, PartitionMode};
pub use prepare::{prepare_cyclic_client, prepare_engine_client, ClientData};
pub use segment::{piecewise_rul_labels, segment_cycles, segment_cycles_to, sliding_windows, final_window};
pub use standardize::StandardizationStats;
pub use synth::{gen_synthetic_cyclic, gen_synthetic_noncyclic, truncate_for_test, SyntheticConfig};

/// Default cap of the piecewise-linear RUL target.
pub const RUL_CAP: usize = 130;

/// One discharge cycle of a cyclically degrading asset.
#[derive(Clone, Debug, PartialEq)]
pub struct CyclicRecord {
    pub client_id: usize,
    pub cycle: usize,
    pub timestamps: Vec<f64>,
    /// `T_s × M`, time-major.
    pub features: Tensor2D<f64>,
    /// Capacity measured at the end of the cycle (Ah).
    pub capacity: f64,
}

impl CyclicRecord {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn standardized(&self, stats: &StandardizationStats) -> Result<Self> {
        Ok(Self {
            features: stats.apply(&self.features)?,
            ..self.clone()
        })
    }
}

/// Run of one engine, either to failure (training) or truncated (test).
#[derive(Clone, Debug, PartialEq)]
pub struct EngineRecord {
    pub engine_id: usize,
    /// `𝒯 × M`, time-major.
    pub features: Tensor2D<f64>,
    /// Total lifespan in cycles. For test engines this is observed length + true RUL.
    pub lifespan: usize,
    /// One RUL label per observed row.
    pub rul: Vec<f64>,
}

impl EngineRecord {
    pub fn observed(&self) -> usize {
        self.features.rows()
    }

    pub fn standardized(&self, stats: &StandardizationStats) -> Result<Self> {
        Ok(Self {
            features: stats.apply(&self.features)?,
            ..self.clone()
        })
    }
}

/// Fixed affine map between raw label units and the training target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScale {
    pub offset: f64,
    pub scale: f64,
}

impl LabelScale {
    pub const IDENTITY: LabelScale = LabelScale {
        offset: 0.0,
        scale: 1.0,
    };

    pub fn new(offset: f64, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0 && offset.is_finite()) {
            return Err(Error::Config(format!("label scale must be positive, got {scale}")));
        }
        Ok(Self { offset, scale })
    }

    #[inline]
    pub fn encode(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    #[inline]
    pub fn decode(&self, y: f64) -> f64 {
        y * self.scale + self.offset
    }
}

impl Default for LabelScale {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Fixed-length windows paired with (encoded) scalar labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset<T> {
    pub samples: Vec<Sample<T>>,
    pub seq_len: usize,
    pub n_features: usize,
    pub stats: StandardizationStats,
    pub labels: LabelScale,
}

impl<T: Scalar> SequenceDataset<T> {
    pub fn empty(seq_len: usize, n_features: usize) -> Self {
        Self {
            samples: Vec::new(),
            seq_len,
            n_features,
            stats: StandardizationStats::identity(n_features),
            labels: LabelScale::IDENTITY,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample<T>) -> Result<()> {
        if sample.x.shape() != (self.seq_len, self.n_features) {
            return Err(Error::ShapeMismatch(format!(
                "window {:?} does not fit dataset {}x{}",
                sample.x.shape(),
                self.seq_len,
                self.n_features
            )));
        }
        if !sample.y.is_finite() {
            return Err(Error::DataQuality("non-finite label".into()));
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Splits off the last `ceil(fraction·n)` windows, keeping chronological order.
    pub fn split_tail(&self, fraction: f64) -> (Self, Self) {
        let n = self.samples.len();
        let tail = ((n as f64) * fraction).ceil() as usize;
        let tail = tail.min(n.saturating_sub(1));
        let cut = n - tail;
        let mut head = self.clone();
        let mut rest = self.clone();
        head.samples.truncate(cut);
        rest.samples.drain(..cut);
        (head, rest)
    }

    pub fn extend(&mut self, other: &Self) -> Result<()> {
        if (other.seq_len, other.n_features) != (self.seq_len, self.n_features) {
            return Err(Error::ShapeMismatch("cannot concatenate datasets of different window shapes".into()));
        }
        self.samples.extend(other.samples.iter().cloned());
        Ok(())
    }

    /// Raw-unit labels.
    pub fn decoded_labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| self.labels.decode(s.y.as_f64())).collect()
    }

    pub fn cast<U: Scalar>(&self) -> SequenceDataset<U> {
        SequenceDataset {
            samples: self.samples.iter().map(Sample::cast).collect(),
            seq_len: self.seq_len,
            n_features: self.n_features,
            stats: self.stats.clone(),
            labels: self.labels,
        }
    }
}

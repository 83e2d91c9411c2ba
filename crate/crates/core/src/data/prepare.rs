//! Per-client train/test preparation: split, fit stats on train, standardize, window, encode labels.

use crate::data::segment::{encode_labels, final_window, segment_cycles_to, sliding_windows};
use crate::data::{CyclicRecord, EngineRecord, LabelScale, SequenceDataset, StandardizationStats};
use crate::error::{Error, Result};

/// Fraction of a client's cycles (in chronological order) used for training.
pub const CYCLIC_TRAIN_FRACTION: f64 = 0.7;

#[derive(Clone, Debug, PartialEq)]
pub struct ClientData {
    pub train: SequenceDataset<f64>,
    pub test: SequenceDataset<f64>,
}

impl ClientData {
    pub fn stats(&self) -> &StandardizationStats {
        &self.train.stats
    }
}

/// Number of leading cycles that go to training: `round(0.7·n)`, keeping at least one on each side.
pub fn cyclic_train_count(n: usize) -> usize {
    ((n as f64 * CYCLIC_TRAIN_FRACTION).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Chronological 70/30 split of one client's cycles, both sides cut to `seq_len`.
pub fn prepare_cyclic_client(records: &[CyclicRecord], seq_len: usize, labels: LabelScale) -> Result<ClientData> {
    if records.len() < 2 {
        return Err(Error::Empty(format!(
            "a client needs at least 2 cycles for a train/test split, got {}",
            records.len()
        )));
    }
    let cut = cyclic_train_count(records.len());
    let (train_recs, test_recs) = records.split_at(cut);
    let stats = StandardizationStats::fit(train_recs.iter().map(|r| &r.features))?;
    let standardize = |recs: &[CyclicRecord]| -> Result<Vec<CyclicRecord>> {
        recs.iter().map(|r| r.standardized(&stats)).collect()
    };
    let mut train = segment_cycles_to(&standardize(train_recs)?, seq_len)?;
    let mut test = segment_cycles_to(&standardize(test_recs)?, seq_len)?;
    encode_labels(&mut train, stats.clone(), labels);
    encode_labels(&mut test, stats, labels);
    Ok(ClientData { train, test })
}

/// Sliding windows over the training engines and the final window of each test engine.
///
/// Engines shorter than `window` are skipped with a warning.
pub fn prepare_engine_client(
    train_engines: &[EngineRecord],
    test_engines: &[EngineRecord],
    window: usize,
    step: usize,
    labels: LabelScale,
) -> Result<ClientData> {
    let stats = StandardizationStats::fit(train_engines.iter().map(|e| &e.features))?;
    let m = stats.n_features();
    let mut train = SequenceDataset::empty(window, m);
    let mut skipped = 0;
    for e in train_engines {
        match sliding_windows(&e.standardized(&stats)?, window, step) {
            Ok(ds) => train.extend(&ds)?,
            Err(Error::TooShort { .. }) => skipped += 1,
            Err(other) => return Err(other),
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} training engines shorter than window {window} were excluded");
    }
    if train.is_empty() {
        return Err(Error::Empty(format!("no training engine reaches window length {window}")));
    }

    let mut test = SequenceDataset::empty(window, m);
    let mut skipped = 0;
    for e in test_engines {
        match final_window(&e.standardized(&stats)?, window) {
            Ok(s) => test.push(s)?,
            Err(Error::TooShort { .. }) => skipped += 1,
            Err(other) => return Err(other),
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} test engines shorter than window {window} were excluded");
    }
    encode_labels(&mut train, stats.clone(), labels);
    encode_labels(&mut test, stats, labels);
    Ok(ClientData { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::segment::piecewise_rul_labels;
    use crate::tensor::Tensor2D;

    fn cycles(n: usize) -> Vec<CyclicRecord> {
        (0..n)
            .map(|s| CyclicRecord {
                client_id: 0,
                cycle: s + 1,
                timestamps: (0..6).map(|t| t as f64).collect(),
                features: Tensor2D::from_fn(6, 2, |r, c| (s * 6 + r) as f64 * (c + 1) as f64),
                capacity: 2.0 - 0.01 * s as f64,
            })
            .collect()
    }

    fn engine(id: usize, lifespan: usize) -> EngineRecord {
        EngineRecord {
            engine_id: id,
            features: Tensor2D::from_fn(lifespan, 2, |r, c| r as f64 + c as f64 * 0.5 * id as f64),
            lifespan,
            rul: piecewise_rul_labels(lifespan, 130),
        }
    }

    #[test]
    fn cyclic_split_is_chronological_and_train_fitted() {
        let recs = cycles(10);
        let labels = LabelScale::new(1.5, 0.25).unwrap();
        let d = prepare_cyclic_client(&recs, 4, labels).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (7, 3));
        assert_eq!(d.train.seq_len, 4);
        let decoded = d.test.decoded_labels();
        assert!((decoded[0] - recs[7].capacity).abs() < 1e-12);
        // Test features come from later cycles, so their standardized mean sits well above 0.
        let mean: f64 = d.test.samples.iter().flat_map(|s| s.x.column(0)).sum::<f64>() / (3.0 * 4.0);
        assert!(mean > 1.0);
        let expected = StandardizationStats::fit(recs[..7].iter().map(|r| &r.features)).unwrap();
        assert_eq!(d.stats(), &expected);
    }

    #[test]
    fn cyclic_needs_two_cycles() {
        assert!(prepare_cyclic_client(&cycles(1), 4, LabelScale::IDENTITY).is_err());
        let d = prepare_cyclic_client(&cycles(2), 4, LabelScale::IDENTITY).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (1, 1));
    }

    #[test]
    fn engines_shorter_than_window_are_skipped() {
        let train = vec![engine(1, 60), engine(2, 40)];
        let test = vec![engine(3, 55), engine(4, 30)];
        let d = prepare_engine_client(&train, &test, 50, 1, LabelScale::IDENTITY).unwrap();
        assert_eq!(d.train.len(), 11);
        assert_eq!(d.test.len(), 1);
        assert_eq!(d.test.samples[0].y, 0.0);
    }

    #[test]
    fn all_engines_too_short_is_an_error() {
        let train = vec![engine(1, 20)];
        assert!(prepare_engine_client(&train, &[], 50, 1, LabelScale::IDENTITY).is_err());
    }
}

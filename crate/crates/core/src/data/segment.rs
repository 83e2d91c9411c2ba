//! Turning records into fixed-length training windows.

use crate::data::{CyclicRecord, EngineRecord, LabelScale, SequenceDataset, StandardizationStats};
use crate::error::{Error, Result};
use crate::nn::Sample;

/// Segments cycles to the shortest cycle length among `records`.
pub fn segment_cycles(records: &[CyclicRecord]) -> Result<SequenceDataset<f64>> {
    let seq_len = records
        .iter()
        .map(CyclicRecord::len)
        .min()
        .ok_or_else(|| Error::Empty("no cycles to segment".into()))?;
    segment_cycles_to(records, seq_len)
}

/// Each cycle contributes its last `seq_len` steps, paired with its end-of-cycle capacity.
pub fn segment_cycles_to(records: &[CyclicRecord], seq_len: usize) -> Result<SequenceDataset<f64>> {
    let first = records
        .first()
        .ok_or_else(|| Error::Empty("no cycles to segment".into()))?;
    if seq_len == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    let m = first.features.cols();
    let mut out = SequenceDataset::empty(seq_len, m);
    for rec in records {
        if rec.len() < seq_len {
            return Err(Error::TooShort {
                length: rec.len(),
                window: seq_len,
            });
        }
        let x = rec.features.slice_rows(rec.len() - seq_len, rec.len());
        out.push(Sample::new(x, rec.capacity))?;
    }
    Ok(out)
}

/// Windows `X[τ..τ+λ)` for `τ = 0, Δτ, 2Δτ, …`, labelled with the RUL at the window's last row.
pub fn sliding_windows(record: &EngineRecord, window: usize, step: usize) -> Result<SequenceDataset<f64>> {
    if window == 0 || step == 0 {
        return Err(Error::Config("window length and step must be positive".into()));
    }
    let n = record.observed();
    if n < window {
        return Err(Error::TooShort { length: n, window });
    }
    let mut out = SequenceDataset::empty(window, record.features.cols());
    let mut start = 0;
    while start + window <= n {
        let x = record.features.slice_rows(start, start + window);
        out.push(Sample::new(x, record.rul[start + window - 1]))?;
        start += step;
    }
    Ok(out)
}

/// The last `window` rows of an engine with the RUL at its final observed cycle.
pub fn final_window(record: &EngineRecord, window: usize) -> Result<Sample<f64>> {
    let n = record.observed();
    if n < window || window == 0 {
        return Err(Error::TooShort { length: n, window });
    }
    Ok(Sample::new(
        record.features.slice_rows(n - window, n),
        record.rul[n - 1],
    ))
}

/// `label(t) = min(cap, lifespan − t)` for `t = 1..=lifespan`.
pub fn piecewise_rul_labels(lifespan: usize, cap: usize) -> Vec<f64> {
    (1..=lifespan).map(|t| cap.min(lifespan - t) as f64).collect()
}

pub(crate) fn encode_labels(ds: &mut SequenceDataset<f64>, stats: StandardizationStats, labels: LabelScale) {
    for s in ds.samples.iter_mut() {
        s.y = labels.encode(s.y);
    }
    ds.stats = stats;
    ds.labels = labels;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor2D;
    use proptest::prelude::*;

    fn cycle(len: usize, capacity: f64) -> CyclicRecord {
        CyclicRecord {
            client_id: 0,
            cycle: 0,
            timestamps: (0..len).map(|t| t as f64).collect(),
            features: Tensor2D::from_fn(len, 2, |r, c| (r * 10 + c) as f64),
            capacity,
        }
    }

    fn engine(lifespan: usize) -> EngineRecord {
        EngineRecord {
            engine_id: 1,
            features: Tensor2D::from_fn(lifespan, 3, |r, c| (r * 3 + c) as f64),
            lifespan,
            rul: piecewise_rul_labels(lifespan, 130),
        }
    }

    #[test]
    fn shortest_cycle_sets_length_and_tail_is_kept() {
        let recs = vec![cycle(5, 1.9), cycle(3, 1.8), cycle(4, 1.7)];
        let ds = segment_cycles(&recs).unwrap();
        assert_eq!(ds.seq_len, 3);
        assert_eq!(ds.len(), 3);
        // Last three rows of the 5-step cycle start at row 2.
        assert_eq!(ds.samples[0].x.get(0, 0), 20.0);
        assert_eq!(ds.samples[1].x.get(0, 0), 0.0);
        assert_eq!(ds.samples.iter().map(|s| s.y).collect::<Vec<_>>(), vec![1.9, 1.8, 1.7]);
    }

    #[test]
    fn single_cycle_keeps_full_length() {
        let ds = segment_cycles(&[cycle(7, 1.0)]).unwrap();
        assert_eq!((ds.len(), ds.seq_len), (1, 7));
        assert_eq!(ds.samples[0].x, cycle(7, 1.0).features);
    }

    #[test]
    fn empty_cycles_and_too_long_target_rejected() {
        assert!(matches!(segment_cycles(&[]), Err(Error::Empty(_))));
        assert!(matches!(
            segment_cycles_to(&[cycle(3, 1.0)], 4),
            Err(Error::TooShort { length: 3, window: 4 })
        ));
    }

    #[test]
    fn window_counts_at_boundaries() {
        assert_eq!(sliding_windows(&engine(52), 50, 1).unwrap().len(), 3);
        assert_eq!(sliding_windows(&engine(50), 50, 1).unwrap().len(), 1);
        assert!(matches!(
            sliding_windows(&engine(49), 50, 1),
            Err(Error::TooShort { length: 49, window: 50 })
        ));
        assert_eq!(sliding_windows(&engine(60), 50, 5).unwrap().len(), 3);
    }

    #[test]
    fn rul_reference_points() {
        let r = piecewise_rul_labels(200, 130);
        assert_eq!(r[0], 130.0);
        assert_eq!(r[149], 50.0);
        assert_eq!(r[199], 0.0);
        assert_eq!(piecewise_rul_labels(100, 130)[0], 99.0);
    }

    #[test]
    fn final_window_takes_the_tail() {
        let e = engine(60);
        let s = final_window(&e, 50).unwrap();
        assert_eq!(s.x, e.features.slice_rows(10, 60));
        assert_eq!(s.y, 0.0);
    }

    proptest! {
        #[test]
        fn windows_align_with_labels(lifespan in 1usize..120, window in 1usize..40, step in 1usize..4) {
            let e = engine(lifespan);
            match sliding_windows(&e, window, step) {
                Err(Error::TooShort { .. }) => prop_assert!(lifespan < window),
                Err(other) => prop_assert!(false, "unexpected {other}"),
                Ok(ds) => {
                    prop_assert_eq!(ds.len(), (lifespan - window) / step + 1);
                    for (i, s) in ds.samples.iter().enumerate() {
                        let end = i * step + window - 1;
                        prop_assert_eq!(s.x.shape(), (window, 3));
                        prop_assert_eq!(s.x.row(window - 1), e.features.row(end));
                        prop_assert_eq!(s.y, e.rul[end]);
                    }
                }
            }
        }

        #[test]
        fn rul_is_non_increasing_with_capped_prefix(lifespan in 1usize..600, cap in 1usize..300) {
            let r = piecewise_rul_labels(lifespan, cap);
            prop_assert_eq!(r.len(), lifespan);
            prop_assert!(r.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(r[0] == cap as f64, lifespan > cap);
        }
    }
}

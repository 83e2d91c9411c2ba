//! Client-side training, frozen-prefix retraining and evaluation.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClientData, SequenceDataset};
use crate::error::{Error, Result};
use crate::nn::lstm::head;
use crate::nn::{
    adam_step, backward_with, clip_global_norm, final_hidden, predict, AdamConfig, AdamState, BackwardOptions,
    ModelParams, Sample, LAYERS,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor2D;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Global-norm clip over trainable blocks; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Chronological tail of the training windows held out for early stopping.
    pub val_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            clip_norm: Some(5.0),
            val_fraction: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch whose weights were kept; 0 means the starting weights.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

#[derive(Clone, Debug)]
pub struct ClientState<T> {
    pub client_id: usize,
    pub model: ModelParams<T>,
    pub optimizer: AdamState<T>,
    pub train: SequenceDataset<T>,
    pub validation: SequenceDataset<T>,
    pub test: SequenceDataset<T>,
    /// `base_seed + client_id`; seeds the batch-shuffling stream.
    pub rng_seed: u64,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ClientState<T> {
    /// Holds out the validation tail of `data.train` and seeds the shuffle stream.
    pub fn new(client_id: usize, model: ModelParams<T>, data: &ClientData, base_seed: u64, config: TrainConfig) -> Result<Self> {
        if data.train.is_empty() {
            return Err(Error::Empty(format!("client {client_id} has no training windows")));
        }
        let (train, validation) = data.train.split_tail(config.val_fraction);
        let state = Self::from_parts(client_id, model, train.cast(), validation.cast(), data.test.cast(), base_seed, config);
        state.check_shapes()?;
        Ok(state)
    }

    pub fn from_parts(
        client_id: usize,
        model: ModelParams<T>,
        train: SequenceDataset<T>,
        validation: SequenceDataset<T>,
        test: SequenceDataset<T>,
        base_seed: u64,
        config: TrainConfig,
    ) -> Self {
        let rng_seed = base_seed.wrapping_add(client_id as u64);
        Self {
            client_id,
            optimizer: AdamState::new(&model, config.adam),
            model,
            train,
            validation,
            test,
            rng_seed,
            config,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        self.model.validate()?;
        let meta = self.model.meta;
        for ds in [&self.train, &self.validation, &self.test] {
            if ds.n_features != meta.d_in || ds.seq_len != meta.seq_len {
                return Err(Error::ShapeMismatch(format!(
                    "client {}: windows {}x{} do not fit model {}x{}",
                    self.client_id, ds.seq_len, ds.n_features, meta.seq_len, meta.d_in
                )));
            }
            if ds.samples.iter().any(|s| !s.x.is_finite()) {
                return Err(Error::DataQuality(format!("client {}: non-finite input window", self.client_id)));
            }
        }
        Ok(())
    }

    /// Replaces the model (e.g. after a broadcast) and resets Adam.
    pub fn set_model(&mut self, model: ModelParams<T>) {
        self.optimizer.reset(&model);
        self.model = model;
    }

    /// Full training. With `patience = Some(p)` training stops once validation
    /// loss has not improved for `p` epochs and the best snapshot is kept;
    /// with `None` all epochs run and the final weights are kept.
    pub fn train_local(&mut self, epochs: usize, patience: Option<usize>) -> Result<TrainReport> {
        self.run(0, epochs, patience)
    }

    /// Trains only the layers after the first `frozen_layers`; frozen blocks stay bitwise unchanged.
    pub fn retrain_frozen_prefix(&mut self, frozen_layers: usize, epochs: usize, patience: Option<usize>) -> Result<TrainReport> {
        if frozen_layers >= LAYERS {
            return Err(Error::Config(format!(
                "freezing {frozen_layers} of {LAYERS} layers leaves nothing to train"
            )));
        }
        self.run(frozen_layers, epochs, patience)
    }

    fn run(&mut self, frozen: usize, epochs: usize, patience: Option<usize>) -> Result<TrainReport> {
        if self.train.is_empty() {
            return Err(Error::Empty(format!("client {} has no training windows", self.client_id)));
        }
        self.check_shapes()?;
        let mut report = TrainReport::default();
        if epochs == 0 {
            return Ok(report);
        }
        let mut trainer = if frozen >= 1 {
            Trainer::Cached(CachedHead::new(&self.model, &self.train, &self.validation)?)
        } else {
            Trainer::Full
        };
        let early = patience.is_some();
        let mut best_model = self.model.clone();
        let mut best = if early { trainer.val_loss(self, 0)? } else { f64::INFINITY };
        report.best_val_loss = best;
        let mut since_best = 0;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let opts = BackwardOptions {
            frozen_layers: frozen,
            clip_norm: self.config.clip_norm.map(T::lit),
        };
        let batch_size = self.config.batch_size.max(1);

        for epoch in 1..=epochs {
            order.shuffle(&mut self.rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(batch_size) {
                let loss = trainer.step(self, batch, opts, epoch)?;
                epoch_loss += loss * batch.len() as f64;
            }
            epoch_loss /= order.len() as f64;
            report.train_loss.push(epoch_loss);
            if !early {
                continue;
            }
            let val = trainer.val_loss(self, epoch)?;
            report.val_loss.push(val);
            if val < best {
                best = val;
                best_model = self.model.clone();
                report.best_epoch = epoch;
                report.best_val_loss = val;
                since_best = 0;
            } else {
                since_best += 1;
                if patience.is_some_and(|p| since_best >= p) {
                    report.stopped_early = epoch < epochs;
                    break;
                }
            }
        }
        if early {
            self.model = best_model;
        } else {
            report.best_epoch = report.epochs_run();
            report.best_val_loss = trainer.val_loss(self, report.epochs_run())?;
        }
        Ok(report)
    }

    pub fn evaluate_test(&self) -> Result<f64> {
        evaluate_rmse(&self.model, &self.test)
    }
}

enum Trainer<T> {
    Full,
    /// LSTM frozen: final hidden states are computed once and only the head is trained.
    Cached(CachedHead<T>),
}

struct CachedHead<T> {
    train_h: Vec<Vec<T>>,
    val_h: Vec<Vec<T>>,
}

impl<T: Scalar> CachedHead<T> {
    fn new(model: &ModelParams<T>, train: &SequenceDataset<T>, val: &SequenceDataset<T>) -> Result<Self> {
        let hs = |ds: &SequenceDataset<T>| -> Result<Vec<Vec<T>>> {
            ds.samples.iter().map(|s| final_hidden(model, &s.x)).collect()
        };
        Ok(Self {
            train_h: hs(train)?,
            val_h: hs(val)?,
        })
    }
}

impl<T: Scalar> Trainer<T> {
    fn step(&mut self, state: &mut ClientState<T>, batch: &[usize], opts: BackwardOptions<T>, epoch: usize) -> Result<f64> {
        let (loss, grads) = match self {
            Trainer::Full => {
                let samples: Vec<&Sample<T>> = batch.iter().map(|&i| &state.train.samples[i]).collect();
                match backward_with(&state.model, &samples, opts) {
                    Err(Error::DataQuality(_)) => return Err(Error::NonFiniteLoss { epoch }),
                    other => other?,
                }
            }
            Trainer::Cached(cache) => {
                // Same arithmetic, in the same order, as the dense part of `backward_with`.
                let n = T::from_count(batch.len());
                let two = T::lit(2.0);
                let mut grads = state.model.zeros_like();
                let mut loss = T::zero();
                for &i in batch {
                    let h = &cache.train_h[i];
                    let resid = head(&state.model, h) - state.train.samples[i].y;
                    loss += resid * resid;
                    let d_out = two * resid / n;
                    for (g, &hv) in grads.dense.w.row_mut(0).iter_mut().zip(h) {
                        *g += d_out * hv;
                    }
                    grads.dense.b[0] += d_out;
                }
                loss /= n;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                if let Some(max) = opts.clip_norm {
                    clip_global_norm(&mut grads, max, opts.frozen_layers);
                }
                (loss, grads)
            }
        };
        adam_step(&mut state.optimizer, &mut state.model, &grads, opts.frozen_layers)?;
        Ok(loss.as_f64())
    }

    /// Mean squared error on the validation windows (training windows if none are held out).
    fn val_loss(&self, state: &ClientState<T>, epoch: usize) -> Result<f64> {
        let use_train = state.validation.is_empty();
        let ds = if use_train { &state.train } else { &state.validation };
        let mut sum = T::zero();
        for (i, s) in ds.samples.iter().enumerate() {
            let pred = match self {
                Trainer::Full => predict(&state.model, &s.x)?,
                Trainer::Cached(c) => {
                    let h = if use_train { &c.train_h[i] } else { &c.val_h[i] };
                    head(&state.model, h)
                }
            };
            let r = pred - s.y;
            sum += r * r;
        }
        let loss = (sum / T::from_count(ds.len())).as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        Ok(loss)
    }
}

/// Root mean squared error in raw label units.
pub fn evaluate_rmse<T: Scalar>(model: &ModelParams<T>, data: &SequenceDataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("cannot evaluate on an empty dataset".into()));
    }
    let mut sum = 0.0;
    for s in &data.samples {
        let pred = data.labels.decode(predict(model, &s.x)?.as_f64());
        let truth = data.labels.decode(s.y.as_f64());
        sum += (pred - truth) * (pred - truth);
    }
    Ok((sum / data.len() as f64).sqrt())
}

/// Final hidden activations `h_T[neuron]` for every window, one row per window.
pub fn dump_feature_extractors<T: Scalar>(
    model: &ModelParams<T>,
    windows: &[Sample<T>],
    neurons: &[usize],
) -> Result<Tensor2D<f64>> {
    let l = model.meta.hidden;
    if let Some(&bad) = neurons.iter().find(|&&n| n >= l) {
        return Err(Error::Config(format!("neuron index {bad} out of range for hidden size {l}")));
    }
    let mut out = Tensor2D::zeros(windows.len(), neurons.len());
    for (r, s) in windows.iter().enumerate() {
        let h = final_hidden(model, &s.x)?;
        for (c, &n) in neurons.iter().enumerate() {
            out.set(r, c, h[n].as_f64());
        }
    }
    Ok(out)
}

/// Writes a dump as CSV with header `window_index,neuron_<i>...`.
pub fn write_feature_csv(path: impl AsRef<Path>, activations: &Tensor2D<f64>, neurons: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = String::from("window_index");
    for n in neurons {
        header.push_str(&format!(",neuron_{n}"));
    }
    let mut body = header + "\n";
    for r in 0..activations.rows() {
        body.push_str(&r.to_string());
        for v in activations.row(r) {
            body.push_str(&format!(",{v}"));
        }
        body.push('\n');
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelScale;
    use crate::nn::{init_model, ModelMeta};
    use rand::Rng;

    fn dataset(n: usize, seq_len: usize, d: usize, seed: u64, label: impl Fn(&Tensor2D<f64>) -> f64) -> SequenceDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = SequenceDataset::empty(seq_len, d);
        for _ in 0..n {
            let x = Tensor2D::from_fn(seq_len, d, |_, _| rng.random_range(-1.0..1.0));
            let y = label(&x);
            ds.push(Sample::new(x, y)).unwrap();
        }
        ds
    }

    fn client(seed: u64, label: impl Fn(&Tensor2D<f64>) -> f64 + Copy) -> ClientState<f64> {
        let data = ClientData {
            train: dataset(60, 4, 2, seed, label),
            test: dataset(10, 4, 2, seed + 100, label),
        };
        ClientState::new(0, init_model(2, 5, 4, seed), &data, 3, TrainConfig::default()).unwrap()
    }

    fn sum_label(x: &Tensor2D<f64>) -> f64 {
        x.as_slice().iter().sum::<f64>() * 0.2
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let mut c = client(1, sum_label);
        let before = c.model.clone();
        let r = c.train_local(0, Some(10)).unwrap();
        assert_eq!(r.epochs_run(), 0);
        assert_eq!(c.model, before);
    }

    #[test]
    fn constant_labels_fit_by_bias() {
        let mut c = client(2, |_| 0.7);
        // Zero model: only the bias can move the output, so the optimum is the label mean.
        c.set_model(ModelParams::zeros(c.model.meta));
        c.config.adam.lr = 0.05;
        c.optimizer = AdamState::new(&c.model, c.config.adam);
        let r = c.train_local(400, None).unwrap();
        assert!(*r.train_loss.last().unwrap() < 1e-6, "{:?}", r.train_loss.last());
        assert!((c.model.dense.b[0] - 0.7).abs() < 1e-3);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let mut a = client(3, sum_label);
        let mut b = a.clone();
        let ra = a.train_local(15, Some(10)).unwrap();
        let rb = b.train_local(15, Some(10)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(ra, rb);
        assert!(ra.train_loss.last().unwrap() < &ra.train_loss[0]);
    }

    #[test]
    fn seeds_follow_client_id() {
        let data = ClientData {
            train: dataset(20, 4, 2, 1, sum_label),
            test: dataset(5, 4, 2, 2, sum_label),
        };
        let c = ClientState::new(4, init_model::<f64>(2, 3, 4, 0), &data, 10, TrainConfig::default()).unwrap();
        assert_eq!(c.rng_seed, 14);
        assert_eq!((c.train.len(), c.validation.len()), (18, 2));
    }

    #[test]
    fn early_stopping_keeps_best_snapshot() {
        let mut c = client(4, sum_label);
        c.config.adam.lr = 0.05;
        c.optimizer = AdamState::new(&c.model, c.config.adam);
        let r = c.train_local(60, Some(3)).unwrap();
        let min = r.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(r.best_val_loss <= min);
        let mut s = 0.0;
        for smp in &c.validation.samples {
            let p = predict(&c.model, &smp.x).unwrap();
            s += (p - smp.y).powi(2);
        }
        assert!((s / c.validation.len() as f64 - r.best_val_loss).abs() < 1e-12);
    }

    #[test]
    fn frozen_retraining_leaves_lstm_bitwise_unchanged() {
        let mut c = client(5, sum_label);
        let before = c.model.clone();
        c.retrain_frozen_prefix(1, 5, None).unwrap();
        assert_eq!(c.model.lstm, before.lstm);
        assert_ne!(c.model.dense, before.dense);
        assert!(matches!(c.retrain_frozen_prefix(2, 5, None), Err(Error::Config(_))));
    }

    #[test]
    fn frozen_fast_path_matches_full_backward_with_lstm_gradients_discarded() {
        let c = client(6, sum_label);
        let mut fast = c.clone();
        fast.retrain_frozen_prefix(1, 2, None).unwrap();

        // Reference: full BPTT every step, LSTM gradients dropped before Adam.
        let mut slow = c.clone();
        let mut order: Vec<usize> = (0..slow.train.len()).collect();
        for _ in 0..2 {
            order.shuffle(&mut slow.rng);
            for batch in order.chunks(32) {
                let samples: Vec<&Sample<f64>> = batch.iter().map(|&i| &slow.train.samples[i]).collect();
                let opts = BackwardOptions { frozen_layers: 0, clip_norm: None };
                let (_, mut g) = backward_with(&slow.model, &samples, opts).unwrap();
                g.lstm = crate::nn::LstmLayer::zeros(2, 5);
                clip_global_norm(&mut g, 5.0, 1);
                adam_step(&mut slow.optimizer, &mut slow.model, &g, 1).unwrap();
            }
        }
        assert_eq!(fast.model, slow.model);
    }

    #[test]
    fn freezing_nothing_is_train_local() {
        let mut a = client(7, sum_label);
        let mut b = a.clone();
        a.train_local(3, None).unwrap();
        b.retrain_frozen_prefix(0, 3, None).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn nan_loss_reports_epoch() {
        let mut c = client(8, sum_label);
        c.model.dense.w.set(0, 0, f64::INFINITY);
        c.model.lstm.w_ih.as_mut_slice().iter_mut().for_each(|v| *v = 50.0);
        match c.train_local(3, None) {
            Err(Error::NonFiniteLoss { epoch }) => assert_eq!(epoch, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rmse_reference_values() {
        let meta = ModelMeta { d_in: 1, hidden: 2, seq_len: 1 };
        let mut m = ModelParams::<f64>::zeros(meta);
        m.dense.b[0] = 3.0;
        let mut ds = SequenceDataset::empty(1, 1);
        for y in [4.0, 2.0] {
            ds.push(Sample::new(Tensor2D::zeros(1, 1), y)).unwrap();
        }
        assert!((evaluate_rmse(&m, &ds).unwrap() - 1.0).abs() < 1e-15);
        // Hand-checked: constant 0 vs labels 1,2,3,4,5 → sqrt(55/5).
        let mut ds = SequenceDataset::empty(1, 1);
        for y in 1..=5 {
            ds.push(Sample::new(Tensor2D::zeros(1, 1), y as f64)).unwrap();
        }
        m.dense.b[0] = 0.0;
        assert!((evaluate_rmse(&m, &ds).unwrap() - 11f64.sqrt()).abs() < 1e-12);
        // Encoded labels are decoded before scoring.
        ds.labels = LabelScale::new(10.0, 2.0).unwrap();
        let raw: f64 = (1..=5).map(|y| (2.0 * y as f64).powi(2)).sum::<f64>() / 5.0;
        assert!((evaluate_rmse(&m, &ds).unwrap() - raw.sqrt()).abs() < 1e-12);
        assert!(evaluate_rmse(&m, &SequenceDataset::empty(1, 1)).is_err());
    }

    #[test]
    fn rmse_is_order_invariant() {
        let c = client(9, sum_label);
        let mut rev = c.test.clone();
        rev.samples.reverse();
        let a = evaluate_rmse(&c.model, &c.test).unwrap();
        let b = evaluate_rmse(&c.model, &rev).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn feature_dump_shapes_and_zero_model() {
        let c = client(10, sum_label);
        let d = dump_feature_extractors(&c.model, &c.test.samples, &(0..5).collect::<Vec<_>>()).unwrap();
        assert_eq!(d.shape(), (10, 5));
        let zero = ModelParams::<f64>::zeros(c.model.meta);
        let z = dump_feature_extractors(&zero, &c.test.samples, &[0, 1]).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        assert!(dump_feature_extractors(&c.model, &c.test.samples, &[5]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_feature_csv(&p, &z, &[0, 1]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("window_index,neuron_0,neuron_1\n0,0,0\n"));
    }
}

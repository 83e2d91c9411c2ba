//! JSON checkpoints: shape metadata plus flat parameter arrays, nothing derived from data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, LstmLayer, ModelMeta, ModelParams, GATE_ORDER};
use crate::orchestrator::config::Task;
use crate::tensor::Tensor2D;

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk layout. Matrices are flattened row-major; gates are stacked along
/// the rows of `lstm_w_ih`, `lstm_w_hh` and the biases in `gate_order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    task: Task,
    d_in: usize,
    hidden: usize,
    seq_len: usize,
    gate_order: Vec<String>,
    lstm_w_ih: Vec<f64>,
    lstm_w_hh: Vec<f64>,
    lstm_b_ih: Vec<f64>,
    lstm_b_hh: Vec<f64>,
    dense_w: Vec<f64>,
    dense_b: Vec<f64>,
    round: usize,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams<f64>,
    pub task: Task,
    pub round: usize,
    pub seed: u64,
}

fn gate_names() -> Vec<String> {
    GATE_ORDER.iter().map(|g| g.as_str().to_string()).collect()
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let m = &ckpt.model;
    m.validate()?;
    if !m.is_finite() {
        return Err(Error::DataQuality("refusing to checkpoint non-finite parameters".into()));
    }
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        task: ckpt.task,
        d_in: m.meta.d_in,
        hidden: m.meta.hidden,
        seq_len: m.meta.seq_len,
        gate_order: gate_names(),
        lstm_w_ih: m.lstm.w_ih.as_slice().to_vec(),
        lstm_w_hh: m.lstm.w_hh.as_slice().to_vec(),
        lstm_b_ih: m.lstm.b_ih.clone(),
        lstm_b_hh: m.lstm.b_hh.clone(),
        dense_w: m.dense.w.as_slice().to_vec(),
        dense_b: m.dense.b.clone(),
        round: ckpt.round,
        seed: ckpt.seed,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(path, &text)
}

fn parse_checkpoint(path: &Path, text: &str) -> Result<Checkpoint> {
    let parse_err = |e: serde_json::Error| Error::CheckpointParse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    // Check the version before the full schema so a newer file is refused by name.
    let raw: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    if let Some(found) = raw.get("version").and_then(serde_json::Value::as_u64) {
        if found != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::CheckpointVersion {
                found: found.try_into().unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
    }
    let file: CheckpointFile = serde_json::from_str(text).map_err(parse_err)?;
    if file.gate_order != gate_names() {
        return Err(Error::ShapeMismatch(format!(
            "{}: gate order {:?} is not {:?}",
            path.display(),
            file.gate_order,
            gate_names()
        )));
    }
    let (d, l) = (file.d_in, file.hidden);
    let g = GATE_ORDER.len();
    let shape = |what: &str, e: Error| Error::ShapeMismatch(format!("{}: {what}: {e}", path.display()));
    let bias = |what: &str, v: Vec<f64>, n: usize| -> Result<Vec<f64>> {
        if v.len() != n {
            return Err(Error::ShapeMismatch(format!("{}: {what} has {} values, expected {n}", path.display(), v.len())));
        }
        Ok(v)
    };
    let model = ModelParams {
        lstm: LstmLayer {
            w_ih: Tensor2D::from_vec(g * l, d, file.lstm_w_ih).map_err(|e| shape("lstm_w_ih", e))?,
            w_hh: Tensor2D::from_vec(g * l, l, file.lstm_w_hh).map_err(|e| shape("lstm_w_hh", e))?,
            b_ih: bias("lstm_b_ih", file.lstm_b_ih, g * l)?,
            b_hh: bias("lstm_b_hh", file.lstm_b_hh, g * l)?,
        },
        dense: DenseLayer {
            w: Tensor2D::from_vec(1, l, file.dense_w).map_err(|e| shape("dense_w", e))?,
            b: bias("dense_b", file.dense_b, 1)?,
        },
        meta: ModelMeta {
            d_in: d,
            hidden: l,
            seq_len: file.seq_len,
        },
    };
    model.validate()?;
    Ok(Checkpoint {
        model,
        task: file.task,
        round: file.round,
        seed: file.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_model;

    fn ckpt() -> Checkpoint {
        let mut model = init_model::<f64>(3, 5, 7, 11);
        model.lstm.b_ih[2] = 1e-300;
        model.dense.b[0] = -0.1 + 0.2;
        Checkpoint {
            model,
            task: Task::Noncyclic,
            round: 4,
            seed: 11,
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let c = ckpt();
        save_checkpoint(&p, &c).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.model.blocks().iter().zip(c.model.blocks()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let text = std::fs::read_to_string(&p).unwrap();
        for key in ["\"version\"", "\"gate_order\"", "\"lstm_w_hh\"", "\"dense_b\"", "\"seed\""] {
            assert!(text.contains(key));
        }
    }

    #[test]
    fn truncated_file_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_checkpoint(&p, &ckpt()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, &text[..text.len() / 2]).unwrap();
        match load_checkpoint(&p) {
            Err(Error::CheckpointParse { line, .. }) => assert!(line > 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_checkpoint(&p, &ckpt()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace("\"version\": 1", "\"version\": 9");
        std::fs::write(&p, text).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(matches!(err, Error::CheckpointVersion { found: 9, expected: 1 }));
        let msg = err.to_string();
        assert!(msg.contains('9') && msg.contains('1'));
    }

    #[test]
    fn wrong_lengths_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_checkpoint(&p, &ckpt()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace("\"hidden\": 5", "\"hidden\": 6");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::ShapeMismatch(_))));
    }
}

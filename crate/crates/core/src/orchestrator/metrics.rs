use std::path::Path;

use crate::error::{Error, Result};
use crate::orchestrator::config::Algo;

pub const METRICS_HEADER: [&str; 8] = [
    "round",
    "algo",
    "client_id",
    "client_rmse",
    "fed_rmse",
    "hidden_size",
    "imp",
    "seconds",
];

/// Outcome of one communication round (round 0 for local-only and central runs).
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub algo: Algo,
    /// Test RMSE of the federated model on each client, raw label units.
    pub client_rmse: Vec<f64>,
    /// Mean of `client_rmse`.
    pub fed_rmse: f64,
    pub hidden_size: usize,
    /// Relative improvement over the local-only baseline, per client.
    pub imp: Option<Vec<f64>>,
    pub seconds: f64,
}

impl RoundRecord {
    pub fn new(round: usize, algo: Algo, client_rmse: Vec<f64>, hidden_size: usize, baseline: Option<&[f64]>) -> Self {
        let fed_rmse = mean(&client_rmse);
        let imp = baseline.map(|b| b.iter().zip(&client_rmse).map(|(&l, &f)| improvement(l, f)).collect());
        Self {
            round,
            algo,
            client_rmse,
            fed_rmse,
            hidden_size,
            imp,
            seconds: 0.0,
        }
    }

    pub fn mean_imp(&self) -> Option<f64> {
        self.imp.as_deref().map(mean)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// `(local − federated) / local`.
pub fn improvement(local: f64, federated: f64) -> f64 {
    (local - federated) / local
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn split(field: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field.split(';').map(str::parse).collect()
}

/// One row per round; per-client values are `;`-joined in client order.
pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[RoundRecord]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in records {
        let ids: Vec<String> = (0..r.client_rmse.len()).map(|i| i.to_string()).collect();
        w.write_record([
            r.round.to_string(),
            r.algo.as_str().to_string(),
            ids.join(";"),
            join(&r.client_rmse),
            r.fed_rmse.to_string(),
            r.hidden_size.to_string(),
            r.imp.as_deref().map(join).unwrap_or_default(),
            r.seconds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<RoundRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != METRICS_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {}", METRICS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| row[k].parse::<f64>().map_err(|e| bad(format!("{}: {e}", METRICS_HEADER[k])));
        let int = |k: usize| row[k].parse::<usize>().map_err(|e| bad(format!("{}: {e}", METRICS_HEADER[k])));
        let list = |k: usize| split(&row[k]).map_err(|e| bad(format!("{}: {e}", METRICS_HEADER[k])));
        let imp = list(6)?;
        out.push(RoundRecord {
            round: int(0)?,
            algo: row[1].parse().map_err(|e: Error| bad(e.to_string()))?,
            client_rmse: list(3)?,
            fed_rmse: num(4)?,
            hidden_size: int(5)?,
            imp: (!imp.is_empty()).then_some(imp),
            seconds: num(7)?,
        });
    }
    Ok(out)
}

/// Index of the round with the lowest mean client RMSE (first on ties).
pub fn best_round(records: &[RoundRecord]) -> Option<usize> {
    (0..records.len()).min_by(|&a, &b| records[a].fed_rmse.total_cmp(&records[b].fed_rmse))
}

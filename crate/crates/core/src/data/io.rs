//! CSV ingestion and export.
//!
//! Cyclic files: `client_id,cycle,t,feat_1..feat_M,label`, one row per time step,
//! label repeated on every row of a cycle.
//!
//! Engine files: `engine_id,cycle,setting_1..setting_3,sensor_1..sensor_21`.
//! Sensors listed in [`DROPPED_SENSORS`] and the settings are discarded on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::data::segment::piecewise_rul_labels;
use crate::data::{CyclicRecord, EngineRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

pub const RAW_SENSORS: usize = 21;
pub const RAW_SETTINGS: usize = 3;

/// 1-based sensor indices that carry no usable degradation signal.
pub const DROPPED_SENSORS: [usize; 7] = [1, 5, 6, 10, 16, 18, 19];

/// 1-based indices of the sensors kept as features.
pub fn kept_sensors() -> Vec<usize> {
    (1..=RAW_SENSORS).filter(|s| !DROPPED_SENSORS.contains(s)).collect()
}

fn open(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

fn headers(path: &Path, rdr: &mut csv::Reader<fs::File>) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
        return Err(parse_err(path, 1, "file is empty"));
    }
    Ok(h.iter().map(str::to_owned).collect())
}

fn expect_column(path: &Path, headers: &[String], idx: usize, name: &str) -> Result<()> {
    if headers.get(idx).map(String::as_str) != Some(name) {
        return Err(Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_owned(),
        });
    }
    Ok(())
}

fn field<F: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<F> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing field `{name}`")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse `{raw}` as {name}")))
}

fn finite(path: &Path, line: u64, v: f64, name: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("non-finite {name}")))
    }
}

struct CycleBuilder {
    client_id: usize,
    cycle: usize,
    label: f64,
    timestamps: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl CycleBuilder {
    fn finish(self) -> Result<CyclicRecord> {
        Ok(CyclicRecord {
            client_id: self.client_id,
            cycle: self.cycle,
            timestamps: self.timestamps,
            features: Tensor2D::from_rows(&self.rows)?,
            capacity: self.label,
        })
    }
}

/// Parses a cyclic CSV into one record per `(client_id, cycle)` run of rows.
pub fn load_cyclic_csv(path: impl AsRef<Path>) -> Result<Vec<CyclicRecord>> {
    let path = path.as_ref();
    let mut rdr = open(path)?;
    let h = headers(path, &mut rdr)?;
    expect_column(path, &h, 0, "client_id")?;
    expect_column(path, &h, 1, "cycle")?;
    expect_column(path, &h, 2, "t")?;
    if h.last().map(String::as_str) != Some("label") || h.len() < 5 {
        return Err(Error::MissingColumn {
            path: path.to_path_buf(),
            column: "label".into(),
        });
    }
    let m = h.len() - 4;
    for i in 0..m {
        expect_column(path, &h, 3 + i, &format!("feat_{}", i + 1))?;
    }

    let mut out = Vec::new();
    let mut cur: Option<CycleBuilder> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != h.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", h.len(), rec.len())));
        }
        let client_id: usize = field(path, line, &rec, 0, "client_id")?;
        let cycle: usize = field(path, line, &rec, 1, "cycle")?;
        let t = finite(path, line, field(path, line, &rec, 2, "t")?, "t")?;
        let label = finite(path, line, field(path, line, &rec, h.len() - 1, "label")?, "label")?;
        if label <= 0.0 {
            return Err(parse_err(path, line, "capacity label must be positive"));
        }
        let mut row = Vec::with_capacity(m);
        for i in 0..m {
            row.push(finite(path, line, field(path, line, &rec, 3 + i, "feature")?, "feature")?);
        }
        let same = cur.as_ref().is_some_and(|c| c.client_id == client_id && c.cycle == cycle);
        if !same {
            if let Some(done) = cur.take() {
                out.push(done.finish()?);
            }
            cur = Some(CycleBuilder {
                client_id,
                cycle,
                label,
                timestamps: Vec::new(),
                rows: Vec::new(),
            });
        }
        let c = cur.as_mut().expect("builder exists");
        if c.label != label {
            return Err(parse_err(path, line, "label changes within a cycle"));
        }
        c.timestamps.push(t);
        c.rows.push(row);
    }
    if let Some(done) = cur.take() {
        out.push(done.finish()?);
    }
    if out.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Ok(out)
}

fn csv_files(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `client_*.csv` under `dir`, grouped by `client_id` (ascending).
pub fn load_cyclic_dir(dir: impl AsRef<Path>) -> Result<Vec<(usize, Vec<CyclicRecord>)>> {
    let dir = dir.as_ref();
    let files = csv_files(dir, "client_")?;
    if files.is_empty() {
        return Err(Error::Empty(format!("no client_*.csv files in {}", dir.display())));
    }
    let mut by_client: BTreeMap<usize, Vec<CyclicRecord>> = BTreeMap::new();
    for f in files {
        for rec in load_cyclic_csv(&f)? {
            by_client.entry(rec.client_id).or_default().push(rec);
        }
    }
    Ok(by_client.into_iter().collect())
}

pub fn write_cyclic_csv(path: impl AsRef<Path>, records: &[CyclicRecord]) -> Result<()> {
    let path = path.as_ref();
    let m = records.first().map_or(0, |r| r.features.cols());
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header = vec!["client_id".to_owned(), "cycle".into(), "t".into()];
    header.extend((1..=m).map(|i| format!("feat_{i}")));
    header.push("label".into());
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(&header).map_err(io)?;
    for rec in records {
        for (r, &t) in rec.timestamps.iter().enumerate() {
            let mut row = vec![rec.client_id.to_string(), rec.cycle.to_string(), t.to_string()];
            row.extend(rec.features.row(r).iter().map(f64::to_string));
            row.push(rec.capacity.to_string());
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct RawEngine {
    engine_id: usize,
    last_cycle: usize,
    rows: Vec<Vec<f64>>,
}

fn load_engine_rows(path: &Path) -> Result<Vec<RawEngine>> {
    let mut rdr = open(path)?;
    let h = headers(path, &mut rdr)?;
    expect_column(path, &h, 0, "engine_id")?;
    expect_column(path, &h, 1, "cycle")?;
    for i in 0..RAW_SETTINGS {
        expect_column(path, &h, 2 + i, &format!("setting_{}", i + 1))?;
    }
    for i in 0..RAW_SENSORS {
        expect_column(path, &h, 2 + RAW_SETTINGS + i, &format!("sensor_{}", i + 1))?;
    }
    let width = 2 + RAW_SETTINGS + RAW_SENSORS;
    let kept = kept_sensors();

    let mut out: Vec<RawEngine> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(path, line, format!("expected {width} fields, found {}", rec.len())));
        }
        let engine_id: usize = field(path, line, &rec, 0, "engine_id")?;
        let cycle: usize = field(path, line, &rec, 1, "cycle")?;
        let mut row = Vec::with_capacity(kept.len());
        for &s in &kept {
            let v: f64 = field(path, line, &rec, 1 + RAW_SETTINGS + s, "sensor")?;
            row.push(finite(path, line, v, "sensor")?);
        }
        match out.last_mut() {
            Some(e) if e.engine_id == engine_id => {
                if cycle != e.last_cycle + 1 {
                    return Err(parse_err(path, line, format!("cycle {cycle} does not follow {}", e.last_cycle)));
                }
                e.last_cycle = cycle;
                e.rows.push(row);
            }
            _ => {
                if cycle != 1 {
                    return Err(parse_err(path, line, "engine runs must start at cycle 1"));
                }
                out.push(RawEngine {
                    engine_id,
                    last_cycle: cycle,
                    rows: vec![row],
                });
            }
        }
    }
    if out.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Ok(out)
}

/// Run-to-failure engines; lifespan is the last cycle, labels are piecewise RUL capped at `cap`.
pub fn load_engine_csv(path: impl AsRef<Path>, cap: usize) -> Result<Vec<EngineRecord>> {
    load_engine_rows(path.as_ref())?
        .into_iter()
        .map(|e| {
            let lifespan = e.last_cycle;
            Ok(EngineRecord {
                engine_id: e.engine_id,
                features: Tensor2D::from_rows(&e.rows)?,
                lifespan,
                rul: piecewise_rul_labels(lifespan, cap),
            })
        })
        .collect()
}

/// One non-negative integer per line.
pub fn load_rul_file(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse()
                .map_err(|_| parse_err(path, i as u64 + 1, format!("cannot parse `{line}` as RUL")))?,
        );
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, "file is empty"));
    }
    Ok(out)
}

/// Truncated test engines plus their ground-truth RUL at the last observed cycle.
pub fn load_engine_test(path: impl AsRef<Path>, rul_path: impl AsRef<Path>, cap: usize) -> Result<Vec<EngineRecord>> {
    let raw = load_engine_rows(path.as_ref())?;
    let truth = load_rul_file(rul_path.as_ref())?;
    if truth.len() != raw.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} test engines but {} ground-truth values",
            raw.len(),
            truth.len()
        )));
    }
    raw.into_iter()
        .zip(truth)
        .map(|(e, rul_end)| {
            let observed = e.last_cycle;
            let lifespan = observed + rul_end;
            Ok(EngineRecord {
                engine_id: e.engine_id,
                features: Tensor2D::from_rows(&e.rows)?,
                lifespan,
                rul: piecewise_rul_labels(lifespan, cap)[..observed].to_vec(),
            })
        })
        .collect()
}

/// Writes engines in the raw 21-sensor layout; dropped sensors and settings are constant.
pub fn write_engine_csv(path: impl AsRef<Path>, engines: &[EngineRecord]) -> Result<()> {
    let path = path.as_ref();
    let kept = kept_sensors();
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["engine_id".to_owned(), "cycle".into()];
    header.extend((1..=RAW_SETTINGS).map(|i| format!("setting_{i}")));
    header.extend((1..=RAW_SENSORS).map(|i| format!("sensor_{i}")));
    w.write_record(&header).map_err(io)?;
    for e in engines {
        if e.features.cols() != kept.len() {
            warn!("engine {} has {} features, expected {}", e.engine_id, e.features.cols(), kept.len());
            return Err(Error::ShapeMismatch("engine feature count".into()));
        }
        for r in 0..e.observed() {
            let mut row = vec![e.engine_id.to_string(), (r + 1).to_string()];
            row.extend(std::iter::repeat_n("0".to_owned(), RAW_SETTINGS));
            let mut sensors = [1.0f64; RAW_SENSORS];
            for (k, &s) in kept.iter().enumerate() {
                sensors[s - 1] = e.features.get(r, k);
            }
            row.extend(sensors.iter().map(f64::to_string));
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_rul_file(path: impl AsRef<Path>, engines: &[EngineRecord]) -> Result<()> {
    let path = path.as_ref();
    let text: String = engines
        .iter()
        .map(|e| format!("{}\n", e.lifespan - e.observed()))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

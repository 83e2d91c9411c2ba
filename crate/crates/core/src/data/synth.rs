//! Seeded synthetic degradation data.
//!
//! Cyclic data mimics constant-current battery discharge: a capacity fade
//! curve with periodic regeneration bumps, and voltage/temperature traces
//! that follow one curve over the depth of discharge, so a smaller capacity
//! shows up as a shorter, steeper trace. Non-cyclic data mimics run-to-failure
//! engines: sensors are flat until a knee point, then drift toward failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::io::kept_sensors;
use crate::data::segment::piecewise_rul_labels;
use crate::data::{CyclicRecord, EngineRecord, RUL_CAP};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Rated capacity of the synthetic cells (Ah).
pub const RATED_CAPACITY: f64 = 2.0;
/// Discharge steps per Ah of capacity.
const STEPS_PER_AH: f64 = 12.0;
const MIN_CAPACITY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_clients: usize,
    pub cycles_per_client: usize,
    pub seed: u64,
    /// 0 draws every client from one distribution; 1 spreads fade rates by ±50%.
    pub heterogeneity: f64,
    pub n_engines: usize,
    pub lifespan_min: usize,
    pub lifespan_max: usize,
    /// Mean degradation onset as a fraction of lifespan.
    pub knee_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_clients: 3,
            cycles_per_client: 100,
            seed: 7,
            heterogeneity: 1.0,
            n_engines: 90,
            lifespan_min: 128,
            lifespan_max: 543,
            knee_fraction: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.cycles_per_client == 0 || self.n_engines == 0 {
            return Err(Error::Config("synthetic counts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(Error::Config("heterogeneity must lie in [0, 1]".into()));
        }
        if self.lifespan_min == 0 || self.lifespan_min > self.lifespan_max {
            return Err(Error::Config("need 1 <= lifespan_min <= lifespan_max".into()));
        }
        if !(self.knee_fraction > 0.0 && self.knee_fraction < 1.0) {
            return Err(Error::Config("knee_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

fn client_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Relative fade-rate offset of client `c` in `[-1, 1]`.
fn client_shift(c: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * c as f64 / (n - 1) as f64 - 1.0
    }
}

/// Capacity trajectory of one cell.
fn capacity_curve(rng: &mut ChaCha8Rng, cycles: usize, fade: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.004).expect("valid normal");
    let c0 = RATED_CAPACITY + rng.random_range(-0.04..0.04);
    let period = rng.random_range(12..=20usize);
    let phase = rng.random_range(0..period);
    let mut bump = 0.0;
    (0..cycles)
        .map(|s| {
            if s > 0 && (s + phase) % period == 0 {
                bump = rng.random_range(0.02..0.04);
            } else {
                bump *= 0.55;
            }
            let frac = s as f64 / cycles.max(1) as f64;
            let cap = c0 * (1.0 - fade * frac.powf(1.2)) + bump + noise.sample(rng);
            cap.max(MIN_CAPACITY)
        })
        .collect()
}

fn discharge_cycle(rng: &mut ChaCha8Rng, client_id: usize, cycle: usize, capacity: f64) -> CyclicRecord {
    let v_noise = Normal::new(0.0, 0.005).expect("valid normal");
    let t_noise = Normal::new(0.0, 0.05).expect("valid normal");
    // Constant current: a smaller cell runs through the same curve in fewer steps.
    let span = STEPS_PER_AH * capacity;
    let steps = (span.floor() as usize).max(2);
    let mut timestamps = Vec::with_capacity(steps);
    let mut rows = Vec::with_capacity(steps * 2);
    for t in 0..steps {
        let u = ((t + 1) as f64 / span).min(1.0);
        let volts = 4.2 - 0.6 * u - 0.5 * u.powi(6) + v_noise.sample(rng);
        let temp = 24.0 + 10.0 * u * u + t_noise.sample(rng);
        timestamps.push(10.0 * t as f64);
        rows.push(volts);
        rows.push(temp);
    }
    CyclicRecord {
        client_id,
        cycle,
        timestamps,
        features: Tensor2D::from_vec(steps, 2, rows).expect("consistent shape"),
        capacity,
    }
}

/// Per-client discharge cycles. Client `c` fades by `0.2·(1 + 0.5·h·shift_c)` of rated capacity.
pub fn gen_synthetic_cyclic(cfg: &SyntheticConfig) -> Result<Vec<Vec<CyclicRecord>>> {
    cfg.validate()?;
    Ok((0..cfg.n_clients)
        .map(|c| {
            let mut rng = client_rng(cfg.seed, c as u64);
            let fade = 0.2 * (1.0 + 0.5 * cfg.heterogeneity * client_shift(c, cfg.n_clients));
            let caps = capacity_curve(&mut rng, cfg.cycles_per_client, fade);
            caps.into_iter()
                .enumerate()
                .map(|(s, cap)| discharge_cycle(&mut rng, c, s + 1, cap))
                .collect()
        })
        .collect())
}

/// Degradation onset cycle (1-based) for an engine of the given lifespan.
pub(crate) fn knee_point(rng: &mut ChaCha8Rng, lifespan: usize, knee_fraction: f64) -> usize {
    let f = (knee_fraction * rng.random_range(0.8..1.2)).clamp(0.05, 0.95);
    ((lifespan as f64 * f).round() as usize).clamp(1, lifespan)
}

/// Run-to-failure engines with lifespans drawn uniformly in `[lifespan_min, lifespan_max]`.
pub fn gen_synthetic_noncyclic(cfg: &SyntheticConfig) -> Result<Vec<EngineRecord>> {
    cfg.validate()?;
    let m = kept_sensors().len();
    // Shared sensor physics: baseline, drift direction and noise level per sensor.
    let mut physics = client_rng(cfg.seed, u64::MAX);
    let sensors: Vec<(f64, f64, f64)> = (0..m)
        .map(|_| {
            let base = physics.random_range(-5.0..5.0);
            let drift = physics.random_range(0.5..2.0) * if physics.random_bool(0.5) { 1.0 } else { -1.0 };
            let sigma = physics.random_range(0.05..0.25);
            (base, drift, sigma)
        })
        .collect();

    Ok((0..cfg.n_engines)
        .map(|e| {
            let mut rng = client_rng(cfg.seed, e as u64);
            let lifespan = rng.random_range(cfg.lifespan_min..=cfg.lifespan_max);
            let knee = knee_point(&mut rng, lifespan, cfg.knee_fraction);
            let mut data = Vec::with_capacity(lifespan * m);
            for t in 1..=lifespan {
                let health = if t <= knee {
                    0.0
                } else {
                    ((t - knee) as f64 / (lifespan - knee).max(1) as f64).powf(1.5)
                };
                for &(base, drift, sigma) in &sensors {
                    let n = Normal::new(0.0, sigma).expect("valid normal");
                    data.push(base + drift * health + n.sample(&mut rng));
                }
            }
            EngineRecord {
                engine_id: e + 1,
                features: Tensor2D::from_vec(lifespan, m, data).expect("consistent shape"),
                lifespan,
                rul: piecewise_rul_labels(lifespan, RUL_CAP),
            }
        })
        .collect())
}

/// Cuts each engine at a seeded point, keeping at least `min_observed` rows and at least one cycle of RUL.
pub fn truncate_for_test(engines: &[EngineRecord], seed: u64, min_observed: usize) -> Vec<EngineRecord> {
    let mut rng = client_rng(seed, 1 << 32);
    engines
        .iter()
        .map(|e| {
            let hi = e.lifespan.saturating_sub(1).max(1);
            let lo = min_observed.max(e.lifespan * 3 / 10).min(hi);
            let cut = rng.random_range(lo..=hi);
            EngineRecord {
                engine_id: e.engine_id,
                features: e.features.slice_rows(0, cut),
                lifespan: e.lifespan,
                rul: e.rul[..cut].to_vec(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SyntheticConfig {
        SyntheticConfig {
            n_clients: 3,
            cycles_per_client: 60,
            n_engines: 20,
            lifespan_min: 150,
            lifespan_max: 300,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn cyclic_is_reproducible_and_positive() {
        let a = gen_synthetic_cyclic(&cfg()).unwrap();
        let b = gen_synthetic_cyclic(&cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for client in &a {
            assert_eq!(client.len(), 60);
            for rec in client {
                assert!(rec.capacity > 0.0);
                assert!(rec.features.is_finite());
                assert_eq!(rec.timestamps.len(), rec.len());
            }
        }
        let other = gen_synthetic_cyclic(&SyntheticConfig { seed: 8, ..cfg() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn capacity_stays_positive_under_extreme_fade() {
        let c = SyntheticConfig {
            cycles_per_client: 400,
            ..cfg()
        };
        for client in gen_synthetic_cyclic(&c).unwrap() {
            assert!(client.iter().all(|r| r.capacity >= MIN_CAPACITY));
        }
    }

    #[test]
    fn heterogeneity_controls_fade_spread() {
        let end_fade = |h: f64| -> Vec<f64> {
            let c = SyntheticConfig { heterogeneity: h, ..cfg() };
            gen_synthetic_cyclic(&c)
                .unwrap()
                .iter()
                .map(|cl| {
                    let head: f64 = cl[..5].iter().map(|r| r.capacity).sum::<f64>() / 5.0;
                    let tail: f64 = cl[cl.len() - 5..].iter().map(|r| r.capacity).sum::<f64>() / 5.0;
                    head - tail
                })
                .collect()
        };
        let spread = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        let homo = end_fade(0.0);
        let het = end_fade(1.0);
        assert!(spread(&het) > 0.15, "{het:?}");
        assert!(spread(&homo) < 0.08, "{homo:?}");
        assert!(het[0] < het[1] && het[1] < het[2]);
    }

    #[test]
    fn cycle_length_tracks_capacity() {
        let data = gen_synthetic_cyclic(&cfg()).unwrap();
        let first = &data[2][0];
        let last = &data[2][59];
        assert!(first.len() > last.len());
    }

    #[test]
    fn engines_respect_range_and_knee() {
        let c = cfg();
        let engines = gen_synthetic_noncyclic(&c).unwrap();
        assert_eq!(engines, gen_synthetic_noncyclic(&c).unwrap());
        for e in &engines {
            assert!((c.lifespan_min..=c.lifespan_max).contains(&e.lifespan));
            assert_eq!(e.features.shape(), (e.lifespan, 14));
            assert_eq!(e.rul.len(), e.lifespan);
        }
        // Reconstruct each knee and check the sensors are stationary before it and drift after.
        for (i, e) in engines.iter().enumerate() {
            let mut rng = client_rng(c.seed, i as u64);
            let _ = rng.random_range(c.lifespan_min..=c.lifespan_max);
            let knee = knee_point(&mut rng, e.lifespan, c.knee_fraction);
            assert!(knee >= 1 && knee <= e.lifespan);
            let mean_dev = |rows: std::ops::Range<usize>| -> f64 {
                let base = e.features.row(0);
                let n = rows.len() as f64;
                rows.map(|r| {
                    e.features.row(r).iter().zip(base).map(|(a, b)| (a - b).abs()).sum::<f64>()
                })
                .sum::<f64>()
                    / n
            };
            let before = mean_dev(0..knee);
            let after = mean_dev(e.lifespan - 5..e.lifespan);
            assert!(after > 2.0 * before, "engine {i}: {before} vs {after}");
        }
    }

    #[test]
    fn truncation_keeps_prefix() {
        let engines = gen_synthetic_noncyclic(&cfg()).unwrap();
        let test = truncate_for_test(&engines, 3, 50);
        for (full, cut) in engines.iter().zip(&test) {
            assert!(cut.observed() >= 50 && cut.observed() < full.lifespan);
            assert_eq!(cut.features, full.features.slice_rows(0, cut.observed()));
            assert!(*cut.rul.last().unwrap() >= 1.0);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(gen_synthetic_cyclic(&SyntheticConfig { n_clients: 0, ..cfg() }).is_err());
        assert!(gen_synthetic_noncyclic(&SyntheticConfig { lifespan_min: 400, lifespan_max: 300, ..cfg() }).is_err());
    }
}

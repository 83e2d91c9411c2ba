use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EngineRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    /// One client per lifespan bucket.
    Heterogeneous,
    /// Seeded shuffle into equally sized clients.
    Homogeneous,
}

impl std::fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Heterogeneous => "heterogeneous",
            Self::Homogeneous => "homogeneous",
        })
    }
}

impl std::str::FromStr for PartitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heterogeneous" => Ok(Self::Heterogeneous),
            "homogeneous" => Ok(Self::Homogeneous),
            other => Err(Error::Config(format!("unknown partition mode `{other}`"))),
        }
    }
}

/// Bucket of a lifespan given boundaries `b_0 < … < b_{k-1}`.
///
/// Inner boundaries are lower-inclusive and the last one is upper-inclusive,
/// so with `(200, 350)` the buckets are `<200`, `200..=350` and `>350`.
pub fn lifespan_bucket(lifespan: usize, boundaries: &[usize]) -> usize {
    let Some((&last, inner)) = boundaries.split_last() else {
        return 0;
    };
    inner.iter().filter(|&&b| lifespan >= b).count() + usize::from(lifespan > last)
}

fn bucket_name(i: usize, boundaries: &[usize]) -> String {
    let k = boundaries.len();
    match i {
        0 if k == 0 => "all".to_string(),
        0 => format!("<{}", boundaries[0]),
        i if i == k => format!(">{}", boundaries[k - 1]),
        i if i == k - 1 => format!("{}..={}", boundaries[i - 1], boundaries[i]),
        i => format!("{}..{}", boundaries[i - 1], boundaries[i]),
    }
}

/// Splits engines into `boundaries.len() + 1` clients.
///
/// Heterogeneous mode buckets by lifespan; homogeneous mode shuffles with `seed`
/// and deals equal parts, any remainder going to the first parts. Engine order
/// within a heterogeneous bucket follows the input.
pub fn partition_clients(
    engines: &[EngineRecord],
    mode: PartitionMode,
    boundaries: &[usize],
    seed: u64,
) -> Result<Vec<Vec<EngineRecord>>> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("boundaries {boundaries:?} must be strictly increasing")));
    }
    let k = boundaries.len() + 1;
    let mut parts: Vec<Vec<EngineRecord>> = vec![Vec::new(); k];
    match mode {
        PartitionMode::Heterogeneous => {
            for e in engines {
                parts[lifespan_bucket(e.lifespan, boundaries)].push(e.clone());
            }
        }
        PartitionMode::Homogeneous => {
            let mut order: Vec<usize> = (0..engines.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let base = engines.len() / k;
            let extra = engines.len() % k;
            let mut it = order.into_iter();
            for (i, part) in parts.iter_mut().enumerate() {
                let size = base + usize::from(i < extra);
                part.extend(it.by_ref().take(size).map(|j| engines[j].clone()));
            }
        }
    }
    if let Some(i) = parts.iter().position(Vec::is_empty) {
        let name = match mode {
            PartitionMode::Heterogeneous => bucket_name(i, boundaries),
            PartitionMode::Homogeneous => format!("part {i}"),
        };
        return Err(Error::EmptyBucket(name));
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor2D;
    use proptest::prelude::*;

    fn engine(id: usize, lifespan: usize) -> EngineRecord {
        EngineRecord {
            engine_id: id,
            features: Tensor2D::zeros(1, 1),
            lifespan,
            rul: vec![0.0],
        }
    }

    fn sizes(p: &[Vec<EngineRecord>]) -> Vec<usize> {
        p.iter().map(Vec::len).collect()
    }

    #[test]
    fn one_engine_per_bucket() {
        let es = vec![engine(1, 150), engine(2, 250), engine(3, 400)];
        let p = partition_clients(&es, PartitionMode::Heterogeneous, &[200, 350], 0).unwrap();
        assert_eq!(sizes(&p), vec![1, 1, 1]);
        assert_eq!(p[2][0].engine_id, 3);
    }

    #[test]
    fn boundary_values_fall_in_the_moderate_bucket() {
        assert_eq!(lifespan_bucket(199, &[200, 350]), 0);
        assert_eq!(lifespan_bucket(200, &[200, 350]), 1);
        assert_eq!(lifespan_bucket(350, &[200, 350]), 1);
        assert_eq!(lifespan_bucket(351, &[200, 350]), 2);
    }

    #[test]
    fn empty_bucket_is_named() {
        let es = vec![engine(1, 150), engine(2, 400)];
        match partition_clients(&es, PartitionMode::Heterogeneous, &[200, 350], 0) {
            Err(Error::EmptyBucket(name)) => assert_eq!(name, "200..=350"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_increasing_boundaries_rejected() {
        let es = vec![engine(1, 150)];
        assert!(matches!(
            partition_clients(&es, PartitionMode::Heterogeneous, &[350, 200], 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn homogeneous_249_into_three() {
        let es: Vec<_> = (0..249).map(|i| engine(i, 128 + i)).collect();
        let p = partition_clients(&es, PartitionMode::Homogeneous, &[200, 350], 11).unwrap();
        assert_eq!(sizes(&p), vec![83, 83, 83]);
        let again = partition_clients(&es, PartitionMode::Homogeneous, &[200, 350], 11).unwrap();
        assert_eq!(p, again);
        let other = partition_clients(&es, PartitionMode::Homogeneous, &[200, 350], 12).unwrap();
        assert_ne!(p, other);
    }

    proptest! {
        #[test]
        fn partitions_are_exact_covers(
            lifespans in prop::collection::vec(100usize..600, 3..80),
            homogeneous in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let es: Vec<_> = lifespans.iter().enumerate().map(|(i, &l)| engine(i, l)).collect();
            let mode = if homogeneous { PartitionMode::Homogeneous } else { PartitionMode::Heterogeneous };
            if let Ok(p) = partition_clients(&es, mode, &[200, 350], seed) {
                let mut ids: Vec<usize> = p.iter().flatten().map(|e| e.engine_id).collect();
                ids.sort_unstable();
                prop_assert_eq!(ids, (0..es.len()).collect::<Vec<_>>());
                if !homogeneous {
                    for (b, part) in p.iter().enumerate() {
                        prop_assert!(part.iter().all(|e| lifespan_bucket(e.lifespan, &[200, 350]) == b));
                    }
                } else {
                    let s = sizes(&p);
                    prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
                }
            }
        }
    }
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    /// Fraction of each batch drawn from source samples. `None` keeps the
    /// dataset's own source/target proportion.
    pub source_share: Option<f64>,
    pub seed: u64,
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self {
            batch_size: 32,
            source_share: None,
            seed: 0,
        }
    }
}

/// One optimizer step's worth of sample indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.source.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Source indices followed by target indices.
    pub fn indices(&self) -> Vec<usize> {
        self.source.iter().chain(&self.target).copied().collect()
    }
}

/// Shuffles source and target pools separately, interleaves them at the
/// planned share, and cuts the stream into batches of `batch_size`.
///
/// A trailing batch without source samples is merged into its predecessor.
pub fn make_batches(ds: &Dataset, plan: &BatchPlan, epoch: u64) -> Result<Vec<Batch>> {
    if ds.is_empty() {
        return Err(Error::Degenerate("cannot batch an empty dataset".into()));
    }
    if plan.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let mut source = ds.source_indices();
    let mut target = ds.target_indices();
    if source.is_empty() {
        return Err(Error::Degenerate("dataset has no source samples".into()));
    }
    let share = match plan.source_share {
        Some(s) if s > 0.0 && s <= 1.0 => s,
        Some(s) => return Err(Error::config("source_share", format!("must be in (0, 1], got {s}"))),
        None => source.len() as f64 / ds.len() as f64,
    };

    let mut rng = seed::rng_indexed(plan.seed, "shuffle", epoch);
    source.shuffle(&mut rng);
    target.shuffle(&mut rng);

    let total = source.len() + target.len();
    let mut stream = Vec::with_capacity(total);
    let (mut si, mut ti) = (0, 0);
    for pos in 0..total {
        let want_source = (si as f64) < share * (pos + 1) as f64;
        let take_source = ti >= target.len() || (want_source && si < source.len());
        if take_source {
            stream.push((true, source[si]));
            si += 1;
        } else {
            stream.push((false, target[ti]));
            ti += 1;
        }
    }

    let mut batches: Vec<Batch> = Vec::new();
    for chunk in stream.chunks(plan.batch_size) {
        let mut b = Batch {
            source: Vec::new(),
            target: Vec::new(),
        };
        for &(is_src, idx) in chunk {
            if is_src {
                b.source.push(idx);
            } else {
                b.target.push(idx);
            }
        }
        match batches.last_mut() {
            Some(prev) if b.source.is_empty() => prev.target.extend(b.target),
            _ => batches.push(b),
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn dataset(n_source: usize, n_target: usize) -> Dataset {
        let rows = (0..n_source + n_target)
            .map(|i| Sample {
                id: i as u64,
                features: vec![i as f64],
                domain: usize::from(i >= n_source),
                label: (i < n_source).then_some(0),
            })
            .collect();
        Dataset::new(2, 2, 1, 1, rows).unwrap()
    }

    fn plan(batch_size: usize, share: Option<f64>) -> BatchPlan {
        BatchPlan {
            batch_size,
            source_share: share,
            seed: 9,
        }
    }

    #[test]
    fn partition_sizes() {
        let ds = dataset(100, 0);
        let sizes: Vec<usize> = make_batches(&ds, &plan(32, None), 0)
            .unwrap()
            .iter()
            .map(Batch::len)
            .collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
    }

    #[test]
    fn every_sample_once() {
        let ds = dataset(75, 25);
        let batches = make_batches(&ds, &plan(32, None), 3).unwrap();
        let mut seen: Vec<usize> = batches.iter().flat_map(Batch::indices).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| !b.source.is_empty()));
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        let ds = dataset(60, 40);
        let a = make_batches(&ds, &plan(16, None), 1).unwrap();
        assert_eq!(a, make_batches(&ds, &plan(16, None), 1).unwrap());
        assert_ne!(a, make_batches(&ds, &plan(16, None), 2).unwrap());
    }

    #[test]
    fn balanced_mix_differs_by_at_most_one() {
        let ds = dataset(50, 50);
        for epoch in 0..5 {
            for b in make_batches(&ds, &plan(15, Some(0.5)), epoch).unwrap() {
                assert!(b.source.len().abs_diff(b.target.len()) <= 1, "{b:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_plans() {
        let ds = dataset(10, 10);
        assert!(make_batches(&ds, &plan(0, None), 0).is_err());
        assert!(make_batches(&ds, &plan(4, Some(0.0)), 0).is_err());
        assert!(make_batches(&dataset(0, 5), &plan(4, None), 0).is_err());
    }
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::WindowedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
    /// Assign whole repetitions to one side instead of individual windows.
    pub by_repetition: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.6,
            seed: 0,
            stratified: true,
            by_repetition: false,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..Self::default()
        }
    }
}

fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

/// Train and test row indices, each sorted ascending.
pub fn split_indices(ds: &WindowedDataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    if ds.is_empty() {
        return Err(Error::EmptyOutput("cannot split an empty dataset".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();

    if spec.by_repetition {
        let mut reps: Vec<u32> = ds.provenance.iter().map(|p| p.repetition).collect();
        reps.sort_unstable();
        reps.dedup();
        if reps.len() < 2 {
            return Err(Error::Config(
                "repetition-wise split needs at least 2 distinct repetitions".into(),
            ));
        }
        reps.shuffle(&mut rng);
        let k = train_count(reps.len(), spec.train_fraction).clamp(1, reps.len() - 1);
        let train_reps = &reps[..k];
        for (i, p) in ds.provenance.iter().enumerate() {
            if train_reps.contains(&p.repetition) {
                train.push(i);
            } else {
                test.push(i);
            }
        }
    } else if spec.stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in ds.labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        for (&class, idx) in by_class.iter_mut() {
            if idx.len() < 2 {
                return Err(Error::Stratify {
                    class,
                    count: idx.len(),
                });
            }
            idx.shuffle(&mut rng);
            let k = train_count(idx.len(), spec.train_fraction).clamp(1, idx.len() - 1);
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut rng);
        let k = train_count(idx.len(), spec.train_fraction);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Partitions a dataset into (train, test).
pub fn split(ds: &WindowedDataset, spec: &SplitSpec) -> Result<(WindowedDataset, WindowedDataset)> {
    let (train, test) = split_indices(ds, spec)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Provenance;
    use proptest::prelude::*;

    fn dataset(labels: &[usize]) -> WindowedDataset {
        let mut ds = WindowedDataset::default();
        for (i, &l) in labels.iter().enumerate() {
            ds.push(
                vec![i as f64],
                l,
                "s",
                Provenance {
                    recording: 0,
                    start: i,
                    repetition: (i % 5) as u32 + 1,
                },
            );
        }
        ds
    }

    #[test]
    fn sixty_forty() {
        let ds = dataset(&[0; 100]);
        let (tr, te) = split(&ds, &SplitSpec::with_seed(3)).unwrap();
        assert_eq!((tr.len(), te.len()), (60, 40));
        let spec = SplitSpec {
            stratified: false,
            ..SplitSpec::with_seed(3)
        };
        let (tr, te) = split(&ds, &spec).unwrap();
        assert_eq!((tr.len(), te.len()), (60, 40));
    }

    #[test]
    fn stratified_exact() {
        let labels: Vec<usize> = (0..100).map(|i| i / 10).collect();
        let ds = dataset(&labels);
        let (tr, te) = split(&ds, &SplitSpec::with_seed(11)).unwrap();
        for c in 0..10 {
            assert_eq!(tr.labels.iter().filter(|&&l| l == c).count(), 6);
            assert_eq!(te.labels.iter().filter(|&&l| l == c).count(), 4);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let labels: Vec<usize> = (0..57).map(|i| i % 4).collect();
        let ds = dataset(&labels);
        let a = split_indices(&ds, &SplitSpec::with_seed(5)).unwrap();
        let b = split_indices(&ds, &SplitSpec::with_seed(5)).unwrap();
        let c = split_indices(&ds, &SplitSpec::with_seed(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn singleton_class_rejected() {
        let ds = dataset(&[0, 0, 0, 1]);
        assert!(matches!(
            split(&ds, &SplitSpec::with_seed(1)),
            Err(Error::Stratify { class: 1, count: 1 })
        ));
    }

    #[test]
    fn by_repetition_keeps_repetitions_whole() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let ds = dataset(&labels);
        let spec = SplitSpec {
            by_repetition: true,
            ..SplitSpec::with_seed(9)
        };
        let (tr, te) = split(&ds, &spec).unwrap();
        assert_eq!(tr.len() + te.len(), 50);
        for p in &tr.provenance {
            assert!(te.provenance.iter().all(|q| q.repetition != p.repetition));
        }
        // 5 repetitions -> 3 train, 2 test
        assert_eq!(tr.len(), 30);
    }

    proptest! {
        #[test]
        fn split_partitions(labels in prop::collection::vec(0usize..5, 2..200), seed: u64) {
            let ds = dataset(&labels);
            let spec = SplitSpec { stratified: false, ..SplitSpec::with_seed(seed) };
            let (tr, te) = split_indices(&ds, &spec).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        }

        #[test]
        fn stratified_within_one(labels in prop::collection::vec(0usize..4, 2..200), seed: u64) {
            let ds = dataset(&labels);
            match split_indices(&ds, &SplitSpec::with_seed(seed)) {
                Ok((tr, te)) => {
                    prop_assert_eq!(tr.len() + te.len(), labels.len());
                    for c in 0..4 {
                        let n = labels.iter().filter(|&&l| l == c).count();
                        let k = tr.iter().filter(|&&i| labels[i] == c).count();
                        prop_assert!((k as f64 - 0.6 * n as f64).abs() <= 1.0);
                    }
                }
                Err(Error::Stratify { count, .. }) => prop_assert!(count < 2),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}

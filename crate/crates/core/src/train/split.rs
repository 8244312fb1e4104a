use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::eeg_io::Outcome;

const SPLIT_STREAM: u64 = 1;

/// Patient-level split, stratified by outcome. Within each class the ids are
/// shuffled with a seeded RNG and the first `round(ratio·n)` go to training;
/// a class with at least two patients keeps at least one on each side.
/// Both returned lists are sorted.
pub fn split_patients(patients: &[(String, Outcome)], ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>), TrainError> {
    if patients.len() < 2 {
        return Err(TrainError::TooFewPatients(patients.len()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainError::InvalidConfig(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [Outcome::Good, Outcome::Poor] {
        let mut ids: Vec<&String> = patients.iter().filter(|(_, o)| *o == class).map(|(id, _)| id).collect();
        ids.sort();
        ids.shuffle(&mut rng);
        let n = ids.len();
        let mut n_train = (ratio * n as f64).round() as usize;
        if n >= 2 {
            n_train = n_train.clamp(1, n - 1);
        }
        train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        val.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    train.sort();
    val.sort();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn cohort(good: usize, poor: usize) -> Vec<(String, Outcome)> {
        (0..good)
            .map(|i| (format!("g{i:02}"), Outcome::Good))
            .chain((0..poor).map(|i| (format!("p{i:02}"), Outcome::Poor)))
            .collect()
    }

    #[test]
    fn ten_patients_split_eight_two() {
        let (train, val) = split_patients(&cohort(5, 5), 0.8, 3).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        assert!(val.iter().any(|v| v.starts_with('g')) && val.iter().any(|v| v.starts_with('p')));
    }

    #[test]
    fn seeded_and_seed_sensitive() {
        let c = cohort(12, 12);
        assert_eq!(split_patients(&c, 0.8, 1).unwrap(), split_patients(&c, 0.8, 1).unwrap());
        let distinct: BTreeSet<_> = (0..20).map(|s| split_patients(&c, 0.8, s).unwrap().1).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn partition_for_many_seeds() {
        let c = cohort(7, 4);
        let all: BTreeSet<String> = c.iter().map(|(id, _)| id.clone()).collect();
        for seed in 0..100 {
            let (train, val) = split_patients(&c, 0.8, seed).unwrap();
            let t: BTreeSet<String> = train.into_iter().collect();
            let v: BTreeSet<String> = val.into_iter().collect();
            assert!(t.is_disjoint(&v));
            assert_eq!(t.union(&v).cloned().collect::<BTreeSet<_>>(), all);
            for prefix in ['g', 'p'] {
                assert!(t.iter().any(|s| s.starts_with(prefix)) && v.iter().any(|s| s.starts_with(prefix)));
            }
        }
    }

    #[test]
    fn too_few_patients() {
        assert!(matches!(split_patients(&cohort(1, 0), 0.8, 0), Err(TrainError::TooFewPatients(1))));
        assert!(split_patients(&cohort(2, 2), 1.0, 0).is_err());
    }
}

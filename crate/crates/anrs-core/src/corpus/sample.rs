//! Negative-sampled training instances and the validation split.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImpressionRecord;
use crate::hash::fnv1a64;
use crate::init::stream_rng;

/// One positive candidate paired with its sampled negatives. History and
/// negatives always come from the same impression as the positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// News indices, most recent last, capped.
    pub history: Vec<u32>,
    pub positive: u32,
    /// Exactly the configured ratio of label-0 news indices.
    pub negatives: Vec<u32>,
}

/// Expand impressions into per-positive samples with `ratio` negatives each.
///
/// Negatives are drawn uniformly without replacement from the impression's
/// label-0 candidates, falling back to replacement when fewer than `ratio`
/// exist. Impressions without any negative are skipped and counted.
pub fn make_training_samples(
    impressions: &[ImpressionRecord],
    ratio: usize,
    history_cap: usize,
    seed: u64,
) -> (Vec<TrainingSample>, usize) {
    assert!(ratio >= 1, "negative ratio must be at least 1");
    let mut rng = stream_rng(seed, "negative-sampling");
    let mut samples = Vec::new();
    let mut skipped = 0usize;

    for imp in impressions {
        let negatives_pool: Vec<u32> =
            imp.candidates.iter().filter(|(_, l)| *l == 0).map(|(i, _)| *i).collect();
        let history: Vec<u32> = if imp.history.len() > history_cap {
            imp.history[imp.history.len() - history_cap..].to_vec()
        } else {
            imp.history.clone()
        };
        for &(positive, label) in &imp.candidates {
            if label != 1 {
                continue;
            }
            if negatives_pool.is_empty() {
                skipped += 1;
                continue;
            }
            let negatives = if negatives_pool.len() >= ratio {
                let mut pool = negatives_pool.clone();
                pool.shuffle(&mut rng);
                pool.truncate(ratio);
                pool
            } else {
                (0..ratio)
                    .map(|_| negatives_pool[rng.random_range(0..negatives_pool.len())])
                    .collect()
            };
            samples.push(TrainingSample { history: history.clone(), positive, negatives });
        }
    }
    (samples, skipped)
}

/// Deterministic 90/10 split by impression-id hash. Returns
/// `(train, validation)` index lists into `impressions`.
pub fn split_validation(impressions: &[ImpressionRecord]) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, imp) in impressions.iter().enumerate() {
        if fnv1a64(imp.impression_id.as_bytes()) % 10 == 0 {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impression(history: &[u32], candidates: &[(u32, u8)]) -> ImpressionRecord {
        ImpressionRecord {
            impression_id: "1".into(),
            user_id: "U1".into(),
            history: history.to_vec(),
            candidates: candidates.to_vec(),
        }
    }

    #[test]
    fn exact_pool_is_used_fully() {
        let imp = impression(
            &[9],
            &[(0, 1), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0), (6, 0)],
        );
        let (samples, skipped) = make_training_samples(&[imp], 6, 50, 3);
        assert_eq!(skipped, 0);
        assert_eq!(samples.len(), 1);
        let mut negs = samples[0].negatives.clone();
        negs.sort_unstable();
        assert_eq!(negs, vec![1, 2, 3, 4, 5, 6]);

        // Order is shuffled by the seed and stable across runs.
        let imp2 = impression(
            &[9],
            &[(0, 1), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0), (6, 0)],
        );
        let (again, _) = make_training_samples(&[imp2], 6, 50, 3);
        assert_eq!(again[0].negatives, samples[0].negatives);
    }

    #[test]
    fn short_pool_samples_with_replacement() {
        let imp = impression(&[], &[(0, 1), (1, 0), (2, 0)]);
        let (samples, _) = make_training_samples(&[imp], 6, 50, 1);
        assert_eq!(samples[0].negatives.len(), 6);
        assert!(samples[0].negatives.iter().all(|&n| n == 1 || n == 2));
    }

    #[test]
    fn multiple_positives_share_history() {
        let imp = impression(&[7, 8], &[(0, 1), (1, 1), (2, 0)]);
        let (samples, _) = make_training_samples(&[imp], 2, 50, 1);
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].history, samples[1].history);
        assert_eq!(samples[0].positive, 0);
        assert_eq!(samples[1].positive, 1);
    }

    #[test]
    fn no_negatives_skips_and_counts() {
        let imp = impression(&[], &[(0, 1)]);
        let (samples, skipped) = make_training_samples(&[imp], 6, 50, 1);
        assert!(samples.is_empty());
        assert_eq!(skipped, 1);
    }

    #[test]
    fn history_capped_to_most_recent() {
        let imp = impression(&[1, 2, 3, 4, 5], &[(0, 1), (9, 0)]);
        let (samples, _) = make_training_samples(&[imp], 1, 3, 1);
        assert_eq!(samples[0].history, vec![3, 4, 5]);
    }

    #[test]
    fn validation_split_is_deterministic_and_partitioned() {
        let imps: Vec<ImpressionRecord> = (0..200)
            .map(|i| ImpressionRecord {
                impression_id: format!("imp{i}"),
                user_id: "u".into(),
                history: vec![],
                candidates: vec![(0, 1)],
            })
            .collect();
        let (train, val) = split_validation(&imps);
        let (train2, val2) = split_validation(&imps);
        assert_eq!(train, train2);
        assert_eq!(val, val2);
        assert_eq!(train.len() + val.len(), imps.len());
        assert!(!val.is_empty() && val.len() < imps.len() / 5);
    }
}

//! Impression-grouped ranking metrics: AUC, MRR, nDCG@5 and nDCG@10,
//! averaged uniformly across impressions.
//!
//! Tie handling is documented and deterministic: AUC counts tied pairs as
//! one half; MRR and nDCG order ties by original candidate index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ImpressionRecord, NewsRecord};
use crate::model::{bind, encode_news_values, encode_user_values, EncodedNews, ModelParams};
use crate::tensor::{Tape, TensorError};
use crate::train::click_score;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty evaluation set")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("impression references news index {index} outside the news table")]
    BadNewsIndex { index: u32 },
}

/// Scores and binary labels for one impression's candidates.
#[derive(Clone, Debug)]
pub struct RankedImpression {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl RankedImpression {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Self {
        assert_eq!(scores.len(), labels.len(), "scores and labels must align");
        RankedImpression { scores, labels }
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Probability a random positive outranks a random negative, ties at one
/// half, computed exactly via the rank-sum identity. `None` when the
/// impression lacks a positive or a negative.
pub fn auc(imp: &RankedImpression) -> Option<f64> {
    let p = imp.positives();
    let n = imp.labels.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    // Average ranks (1-based) with ties sharing their mean rank.
    let mut order: Vec<usize> = (0..imp.scores.len()).collect();
    order.sort_by(|&a, &b| imp.scores[a].partial_cmp(&imp.scores[b]).unwrap());
    let mut ranks = vec![0.0f64; imp.scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && imp.scores[order[j + 1]] == imp.scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 =
        imp.labels.iter().zip(&ranks).filter(|(&l, _)| l == 1).map(|(_, &r)| r).sum();
    let u = pos_rank_sum - (p * (p + 1)) as f64 / 2.0;
    Some(u / (p * n) as f64)
}

/// Candidate order under descending score, ties by original index.
fn ranking(imp: &RankedImpression) -> Vec<usize> {
    let mut order: Vec<usize> = (0..imp.scores.len()).collect();
    order.sort_by(|&a, &b| {
        imp.scores[b].partial_cmp(&imp.scores[a]).unwrap().then_with(|| a.cmp(&b))
    });
    order
}

/// Mean reciprocal rank over the positives. `None` without a positive.
pub fn mrr(imp: &RankedImpression) -> Option<f64> {
    if imp.positives() == 0 {
        return None;
    }
    let order = ranking(imp);
    let mut total = 0.0;
    let mut count = 0usize;
    for (rank0, &idx) in order.iter().enumerate() {
        if imp.labels[idx] == 1 {
            total += 1.0 / (rank0 + 1) as f64;
            count += 1;
        }
    }
    Some(total / count as f64)
}

/// Normalized discounted cumulative gain at `k` with gain `2^label − 1` and
/// `log2(rank+1)` discount. `None` without a positive.
pub fn ndcg_at_k(imp: &RankedImpression, k: usize) -> Option<f64> {
    if imp.positives() == 0 {
        return None;
    }
    let gain = |label: u8| -> f64 { (1u64 << label) as f64 - 1.0 };
    let order = ranking(imp);
    let dcg: f64 = order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &idx)| gain(imp.labels[idx]) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u8> = imp.labels.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &l)| gain(l) / ((i + 2) as f64).log2())
        .sum();
    Some(dcg / idcg)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: Option<f64>,
    pub mrr: Option<f64>,
    pub ndcg5: Option<f64>,
    pub ndcg10: Option<f64>,
    /// Impressions seen.
    pub impressions: usize,
    /// Impressions excluded from AUC (no positive or no negative).
    pub auc_excluded: usize,
    /// Impressions excluded from MRR/nDCG (no positive).
    pub rank_excluded: usize,
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fn cell(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
        }
        write!(
            f,
            "AUC {}  MRR {}  nDCG@5 {}  nDCG@10 {}  (impressions {}, auc-excluded {}, rank-excluded {})",
            cell(self.auc),
            cell(self.mrr),
            cell(self.ndcg5),
            cell(self.ndcg10),
            self.impressions,
            self.auc_excluded,
            self.rank_excluded
        )
    }
}

/// Kahan-compensated accumulator; order-independent up to rounding.
#[derive(Default)]
struct KahanMean {
    sum: f64,
    comp: f64,
    count: usize,
}

impl KahanMean {
    fn add(&mut self, x: f64) {
        self.count += 1;
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Average per-impression metrics uniformly across impressions.
pub fn aggregate(impressions: &[RankedImpression]) -> Result<MetricReport, EvalError> {
    if impressions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut auc_mean = KahanMean::default();
    let mut mrr_mean = KahanMean::default();
    let mut ndcg5_mean = KahanMean::default();
    let mut ndcg10_mean = KahanMean::default();
    let mut auc_excluded = 0usize;
    let mut rank_excluded = 0usize;

    for imp in impressions {
        match auc(imp) {
            Some(v) => auc_mean.add(v),
            None => auc_excluded += 1,
        }
        match (mrr(imp), ndcg_at_k(imp, 5), ndcg_at_k(imp, 10)) {
            (Some(m), Some(n5), Some(n10)) => {
                mrr_mean.add(m);
                ndcg5_mean.add(n5);
                ndcg10_mean.add(n10);
            }
            _ => rank_excluded += 1,
        }
    }
    Ok(MetricReport {
        auc: auc_mean.mean(),
        mrr: mrr_mean.mean(),
        ndcg5: ndcg5_mean.mean(),
        ndcg10: ndcg10_mean.mean(),
        impressions: impressions.len(),
        auc_excluded,
        rank_excluded,
    })
}

/// Score every impression with the model and aggregate. News referenced by
/// the impressions are encoded once each.
pub fn evaluate_model(
    params: &ModelParams,
    news: &[NewsRecord],
    impressions: &[ImpressionRecord],
) -> Result<MetricReport, EvalError> {
    if impressions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut needed: Vec<u32> = impressions
        .iter()
        .flat_map(|imp| {
            imp.history.iter().copied().chain(imp.candidates.iter().map(|(i, _)| *i))
        })
        .collect();
    needed.sort_unstable();
    needed.dedup();

    let mut encoded: std::collections::HashMap<u32, EncodedNews> =
        std::collections::HashMap::with_capacity(needed.len());
    for idx in needed {
        let record = news
            .get(idx as usize)
            .ok_or(EvalError::BadNewsIndex { index: idx })?;
        encoded.insert(idx, encode_news_values(params, record)?);
    }

    // One tape bound once; user encodings roll the tape back each time.
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let mut ranked = Vec::with_capacity(impressions.len());
    for imp in impressions {
        let history: Vec<&EncodedNews> = imp.history.iter().map(|i| &encoded[i]).collect();
        let user = encode_user_values(&mut tape, &bound, params, &history)?;
        let mut scores = Vec::with_capacity(imp.candidates.len());
        let mut labels = Vec::with_capacity(imp.candidates.len());
        for &(idx, label) in &imp.candidates {
            scores.push(click_score(&user, &encoded[&idx].n)?);
            labels.push(label);
        }
        ranked.push(RankedImpression::new(scores, labels));
    }
    aggregate(&ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imp(scores: &[f64], labels: &[u8]) -> RankedImpression {
        RankedImpression::new(scores.to_vec(), labels.to_vec())
    }

    #[test]
    fn separated_pair_scores_one() {
        assert_eq!(auc(&imp(&[0.9, 0.1], &[1, 0])), Some(1.0));
        assert_eq!(auc(&imp(&[0.1, 0.9], &[1, 0])), Some(0.0));
    }

    #[test]
    fn full_ties_score_half() {
        assert_eq!(auc(&imp(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0])), Some(0.5));
    }

    #[test]
    fn degenerate_impressions_are_excluded() {
        assert_eq!(auc(&imp(&[0.5, 0.2], &[1, 1])), None);
        assert_eq!(auc(&imp(&[0.5], &[0])), None);
        assert_eq!(mrr(&imp(&[0.5], &[0])), None);
        assert_eq!(ndcg_at_k(&imp(&[0.5], &[0]), 5), None);
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        // Direct definition: average over all positive/negative pairs.
        fn oracle(imp: &RankedImpression) -> f64 {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for (i, &li) in imp.labels.iter().enumerate() {
                if li != 1 {
                    continue;
                }
                for (j, &lj) in imp.labels.iter().enumerate() {
                    if lj != 0 {
                        continue;
                    }
                    pairs += 1;
                    total += if imp.scores[i] > imp.scores[j] {
                        1.0
                    } else if imp.scores[i] == imp.scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            total / pairs as f64
        }
        let cases = [
            imp(&[0.3, 0.1, 0.3, 0.9, 0.2, 0.3], &[1, 0, 0, 1, 0, 0]),
            imp(&[0.5, 0.5, 0.1, 0.9, 0.5, 0.0], &[0, 1, 1, 0, 1, 0]),
            imp(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[0, 1, 0, 1, 1, 0]),
        ];
        for c in &cases {
            let got = auc(c).unwrap();
            let want = oracle(c);
            assert!((got - want).abs() < 1e-12, "got {got}, oracle {want}");
        }
    }

    #[test]
    fn mrr_of_first_and_second_ranked_positive()
    {
        assert_eq!(mrr(&imp(&[0.9, 0.1], &[1, 0])), Some(1.0));
        assert_eq!(mrr(&imp(&[0.9, 0.1], &[0, 1])), Some(0.5));
        // Positives at ranks 1 and 3.
        let m = mrr(&imp(&[0.9, 0.5, 0.4], &[1, 0, 1])).unwrap();
        assert!((m - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ndcg_known_values() {
        assert_eq!(ndcg_at_k(&imp(&[0.9, 0.1], &[1, 0]), 5), Some(1.0));
        let n = ndcg_at_k(&imp(&[0.2, 0.1], &[0, 1]), 5).unwrap();
        assert!((n - 1.0 / 3.0f64.log2()).abs() < 1e-12);
        // k beyond the list reduces to full-list nDCG.
        let a = ndcg_at_k(&imp(&[0.3, 0.2, 0.1], &[0, 1, 1]), 10).unwrap();
        let b = ndcg_at_k(&imp(&[0.3, 0.2, 0.1], &[0, 1, 1]), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ties_break_by_original_index() {
        // Both candidates score 0.5; the positive sits at index 1, so rank 2.
        assert_eq!(mrr(&imp(&[0.5, 0.5], &[0, 1])), Some(0.5));
        assert_eq!(mrr(&imp(&[0.5, 0.5], &[1, 0])), Some(1.0));
    }

    #[test]
    fn aggregate_counts_exclusions_and_rejects_empty() {
        assert!(matches!(aggregate(&[]), Err(EvalError::Empty)));
        let report = aggregate(&[
            imp(&[0.9, 0.1], &[1, 0]),
            imp(&[0.9, 0.1], &[0, 0]), // no positive: excluded everywhere
            imp(&[0.9, 0.1], &[1, 1]), // no negative: AUC-excluded only
        ])
        .unwrap();
        assert_eq!(report.impressions, 3);
        assert_eq!(report.auc_excluded, 2);
        assert_eq!(report.rank_excluded, 1);
        assert_eq!(report.auc, Some(1.0));
        // MRR averages the two impressions that have a positive: the
        // all-positive one contributes (1 + 1/2)/2 = 0.75.
        assert_eq!(report.mrr, Some(0.875));
    }

    #[test]
    fn perfect_scorer_reaches_one_everywhere() {
        let imps: Vec<RankedImpression> = (0..50)
            .map(|i| {
                let n = 3 + (i % 4);
                let mut scores = vec![0.1; n];
                let mut labels = vec![0u8; n];
                scores[i % n] = 0.9;
                labels[i % n] = 1;
                RankedImpression::new(scores, labels)
            })
            .collect();
        let report = aggregate(&imps).unwrap();
        assert_eq!(report.auc, Some(1.0));
        assert_eq!(report.mrr, Some(1.0));
        assert_eq!(report.ndcg5, Some(1.0));
        assert_eq!(report.ndcg10, Some(1.0));
    }
}

//! Synthetic two-cluster corpus generator.
//!
//! Builds a small news universe whose vocabulary splits into two disjoint
//! word clusters with well-separated pretrained embeddings, plus users who
//! each prefer one cluster. Written in the standard TSV/embedding formats so
//! the regular pipeline (parse → vocabulary → train → evaluate) runs on it
//! unchanged. Used by separability and aspect-recovery experiments.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::init::{normal, stream_rng};

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub words_per_cluster: usize,
    pub news_count: usize,
    pub user_count: usize,
    pub embedding_dim: usize,
    pub title_words: usize,
    pub abstract_words: usize,
    pub history_len: usize,
    pub train_impressions_per_user: usize,
    pub test_impressions_per_user: usize,
    /// Candidates per impression, including the single positive.
    pub candidates_per_impression: usize,
    /// How many negatives come from the user's preferred cluster; the rest
    /// come from the other cluster. Same-cluster negatives keep the task
    /// from being solvable by cluster identity alone.
    pub same_cluster_negatives: usize,
    /// Probability that history entries and positives follow the user's
    /// preferred cluster.
    pub preference_strength: f64,
    /// Distance between the two cluster embedding means.
    pub cluster_separation: f64,
    /// Per-coordinate embedding noise around the cluster mean.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            words_per_cluster: 200,
            news_count: 500,
            user_count: 200,
            embedding_dim: 32,
            title_words: 5,
            abstract_words: 7,
            history_len: 6,
            train_impressions_per_user: 8,
            test_impressions_per_user: 4,
            candidates_per_impression: 8,
            same_cluster_negatives: 1,
            preference_strength: 1.0,
            cluster_separation: 0.8,
            noise: 0.35,
            seed: 7,
        }
    }
}

#[derive(Debug)]
pub struct SyntheticFiles {
    pub news: PathBuf,
    pub train_behaviors: PathBuf,
    pub test_behaviors: PathBuf,
    pub embeddings: PathBuf,
    pub cluster_a_words: Vec<String>,
    pub cluster_b_words: Vec<String>,
}

/// Generate the corpus files under `dir`.
pub fn generate(dir: &Path, spec: &SyntheticSpec) -> std::io::Result<SyntheticFiles> {
    assert!(spec.candidates_per_impression >= 2, "need at least one negative per impression");
    assert!(spec.same_cluster_negatives < spec.candidates_per_impression);
    let mut rng = stream_rng(spec.seed, "synthetic");

    let cluster_a_words: Vec<String> =
        (0..spec.words_per_cluster).map(|i| format!("alpha{i:03}")).collect();
    let cluster_b_words: Vec<String> =
        (0..spec.words_per_cluster).map(|i| format!("beta{i:03}")).collect();

    // Antipodal cluster means along a random direction.
    let dim = spec.embedding_dim;
    let mut direction: Vec<f64> = (0..dim).map(|_| normal(&mut rng, 1.0)).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    for d in &mut direction {
        *d /= norm;
    }
    let half = spec.cluster_separation / 2.0;

    let embeddings = dir.join("embeddings.txt");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&embeddings)?);
        for (words, sign) in [(&cluster_a_words, 1.0), (&cluster_b_words, -1.0)] {
            for w in words.iter() {
                write!(f, "{w}")?;
                for direction_d in direction.iter().take(dim) {
                    let v = sign * half * direction_d + normal(&mut rng, spec.noise);
                    write!(f, " {v:.6}")?;
                }
                writeln!(f)?;
            }
        }
        // Neutral category words sit at the origin.
        for w in ["general", "stories"] {
            write!(f, "{w}")?;
            for _ in 0..dim {
                write!(f, " 0.0")?;
            }
            writeln!(f)?;
        }
    }

    // News drawn from alternating clusters; cluster of news i is i % 2 == 0 → A.
    let news = dir.join("news.tsv");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&news)?);
        for i in 0..spec.news_count {
            let words = if i % 2 == 0 { &cluster_a_words } else { &cluster_b_words };
            let pick = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> String {
                (0..n)
                    .map(|_| words[rng.random_range(0..words.len())].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let title = pick(&mut rng, spec.title_words);
            let abstract_text = pick(&mut rng, spec.abstract_words);
            writeln!(f, "S{i:04}\tgeneral\tstories\t{title}\t{abstract_text}\turl\t[]\t[]")?;
        }
    }

    let news_of_cluster = |cluster: usize, rng: &mut rand_chacha::ChaCha8Rng| -> usize {
        2 * rng.random_range(0..spec.news_count / 2) + cluster
    };

    let train_behaviors = dir.join("behaviors_train.tsv");
    let test_behaviors = dir.join("behaviors_test.tsv");
    let mut train_f = std::io::BufWriter::new(std::fs::File::create(&train_behaviors)?);
    let mut test_f = std::io::BufWriter::new(std::fs::File::create(&test_behaviors)?);
    let mut impression_counter = 0usize;

    for u in 0..spec.user_count {
        let preferred = u % 2;
        let other = 1 - preferred;
        let pick_news = |cluster_bias: f64, rng: &mut rand_chacha::ChaCha8Rng| -> usize {
            let c = if rng.random::<f64>() < cluster_bias { preferred } else { other };
            news_of_cluster(c, rng)
        };
        let history: Vec<String> = (0..spec.history_len)
            .map(|_| format!("S{:04}", pick_news(spec.preference_strength, &mut rng)))
            .collect();
        let history_text = history.join(" ");

        for (count, file, tag) in [
            (spec.train_impressions_per_user, &mut train_f, "T"),
            (spec.test_impressions_per_user, &mut test_f, "E"),
        ] {
            for _ in 0..count {
                impression_counter += 1;
                let positive = pick_news(spec.preference_strength, &mut rng);
                let mut candidates: Vec<(usize, u8)> = vec![(positive, 1)];
                let negs = spec.candidates_per_impression - 1;
                for j in 0..negs {
                    let cluster = if j < spec.same_cluster_negatives { preferred } else { other };
                    candidates.push((news_of_cluster(cluster, &mut rng), 0));
                }
                candidates.shuffle(&mut rng);
                let cand_text = candidates
                    .iter()
                    .map(|(n, l)| format!("S{n:04}-{l}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                writeln!(
                    file,
                    "{tag}{impression_counter}\tU{u:03}\t11/15/2019 10:22:32 AM\t{history_text}\t{cand_text}"
                )?;
            }
        }
    }
    train_f.flush()?;
    test_f.flush()?;

    Ok(SyntheticFiles {
        news,
        train_behaviors,
        test_behaviors,
        embeddings,
        cluster_a_words,
        cluster_b_words,
    })
}

/// Cluster of a synthetic word, if it is one ("alphaNNN" → 0, "betaNNN" → 1).
pub fn word_cluster(word: &str) -> Option<usize> {
    if word.starts_with("alpha") {
        Some(0)
    } else if word.starts_with("beta") {
        Some(1)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_behaviors, parse_news};

    #[test]
    fn generated_files_parse_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            news_count: 40,
            user_count: 10,
            words_per_cluster: 30,
            ..Default::default()
        };
        let files = generate(dir.path(), &spec).unwrap();

        let news = parse_news(&files.news).unwrap();
        assert_eq!(news.records.len(), 40);
        assert_eq!(news.malformed, 0);

        let train = parse_behaviors(&files.train_behaviors).unwrap();
        assert_eq!(train.records.len(), 10 * spec.train_impressions_per_user);
        assert!(train.rejected.is_empty());
        assert_eq!(train.clicks, train.records.len());

        let test = parse_behaviors(&files.test_behaviors).unwrap();
        assert_eq!(test.records.len(), 10 * spec.test_impressions_per_user);

        // Titles stay inside one cluster per news.
        for rec in &news.records {
            let clusters: Vec<usize> =
                rec.title_words.iter().filter_map(|w| word_cluster(w)).collect();
            assert!(clusters.windows(2).all(|w| w[0] == w[1]), "mixed-cluster title");
        }
    }

    #[test]
    fn same_seed_reproduces_identical_files() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            news_count: 20,
            user_count: 4,
            words_per_cluster: 10,
            ..Default::default()
        };
        let a = generate(dir_a.path(), &spec).unwrap();
        let b = generate(dir_b.path(), &spec).unwrap();
        assert_eq!(std::fs::read(&a.news).unwrap(), std::fs::read(&b.news).unwrap());
        assert_eq!(
            std::fs::read(&a.train_behaviors).unwrap(),
            std::fs::read(&b.train_behaviors).unwrap()
        );
        assert_eq!(
            std::fs::read(&a.embeddings).unwrap(),
            std::fs::read(&b.embeddings).unwrap()
        );
    }
}

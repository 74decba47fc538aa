//! Pretrained word-embedding loading.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Vocabulary, PAD_ID, UNK_ID};
use crate::init::{normal, stream_rng};
use crate::tensor::Tensor;

/// The word-embedding matrix W, one row per vocabulary id.
///
/// Row 0 (padding) is all zeros and stays that way: optimizers must exclude
/// it from updates so padded positions never acquire content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub table: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row(&self, id: u32) -> &[f64] {
        self.table.row(id as usize)
    }
}

/// Load `word f_1 … f_D` lines, copying rows for in-vocabulary words.
/// Out-of-vocabulary rows are drawn from a seeded N(0, 0.1²); the padding
/// row is zeroed. Returns the table and the fraction of non-reserved
/// vocabulary words found in the file.
pub fn load_pretrained_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingTable, f64), CorpusError> {
    let file = std::fs::File::open(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let reader = BufReader::new(file);

    let v = vocab.len();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; v];
    for (idx, line) in reader.lines().enumerate() {
        let line = line
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = match parts.next() {
            Some(w) => w,
            None => continue,
        };
        let id = vocab.id(word);
        if id == UNK_ID && word != super::vocab::UNK_TOKEN {
            // Not in vocabulary; still validate the dimension on first lines.
            if idx < 16 {
                let n = parts.count();
                if n != dim {
                    return Err(CorpusError::DimensionMismatch { found: n, expected: dim });
                }
            }
            continue;
        }
        let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| CorpusError::BadLine {
            path: path.display().to_string(),
            line: idx + 1,
            reason: format!("bad float: {e}"),
        })?;
        if values.len() != dim {
            return Err(CorpusError::DimensionMismatch { found: values.len(), expected: dim });
        }
        rows[id as usize] = Some(values);
    }

    // Fill in vocabulary-id order so the result is independent of file order.
    let mut rng = stream_rng(seed, "oov-embeddings");
    let mut covered = 0usize;
    let mut values = Vec::with_capacity(v * dim);
    for id in 0..v {
        match (&rows[id], id as u32) {
            (_, PAD_ID) => values.extend(std::iter::repeat(0.0).take(dim)),
            (Some(row), _) => {
                covered += 1;
                values.extend_from_slice(row);
            }
            (None, _) => values.extend((0..dim).map(|_| normal(&mut rng, 0.1))),
        }
    }
    let real_words = v.saturating_sub(2);
    let coverage = if real_words == 0 { 0.0 } else { covered as f64 / real_words as f64 };
    let table = EmbeddingTable { table: Tensor::matrix(v, dim, values), trainable: true };
    Ok((table, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use std::io::Write;

    fn vocab_of(words: &[&str]) -> Vocabulary {
        let lists: Vec<Vec<String>> =
            vec![words.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        build_vocabulary(lists.iter().map(|l| l.as_slice()), 1).unwrap()
    }

    fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn in_vocab_rows_copied_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = vocab_of(&["cat", "dog"]);
        let path = write_file(dir.path(), "emb.txt", "cat 0.5 -1.0\nbird 9 9\ndog 2.0 3.5\n");
        let (table, coverage) = load_pretrained_embeddings(&path, &vocab, 2, 1).unwrap();
        assert_eq!(table.row(vocab.id("cat")), &[0.5, -1.0]);
        assert_eq!(table.row(vocab.id("dog")), &[2.0, 3.5]);
        assert_eq!(coverage, 1.0);
        assert_eq!(table.row(PAD_ID), &[0.0, 0.0]);
    }

    #[test]
    fn oov_rows_are_seeded_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = vocab_of(&["cat", "dog"]);
        let path = write_file(dir.path(), "emb.txt", "cat 0.5 -1.0\n");
        let (a, cov_a) = load_pretrained_embeddings(&path, &vocab, 2, 7).unwrap();
        let (b, _) = load_pretrained_embeddings(&path, &vocab, 2, 7).unwrap();
        let (c, _) = load_pretrained_embeddings(&path, &vocab, 2, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.row(vocab.id("dog")), c.row(vocab.id("dog")));
        assert!((cov_a - 0.5).abs() < 1e-12);
        // OOV rows have modest scale.
        assert!(a.row(vocab.id("dog")).iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn dimension_mismatch_fails() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = vocab_of(&["cat"]);
        let path = write_file(dir.path(), "emb.txt", "cat 1 2 3\n");
        assert!(matches!(
            load_pretrained_embeddings(&path, &vocab, 300, 1),
            Err(CorpusError::DimensionMismatch { found: 3, expected: 300 })
        ));
    }
}

//! Corpus ingestion: news and click-log parsing, vocabulary and embedding
//! construction, negative-sampled training instances, and the preprocessed
//! cache.

mod cache;
mod embedding;
mod mind;
mod sample;
pub mod synthetic;
mod tokenize;
mod vocab;

pub use cache::{load_cache, save_cache, CACHE_VERSION};
pub use embedding::{load_pretrained_embeddings, EmbeddingTable};
pub use mind::{parse_behaviors, parse_news, ParsedBehaviors, ParsedNews, RawImpression, RawNews};
pub use sample::{make_training_samples, split_validation, TrainingSample};
pub use tokenize::tokenize;
pub use vocab::{build_vocabulary, Vocabulary, PAD_ID, UNK_ID};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing required input: {0}")]
    MissingInput(&'static str),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {malformed} of {total} lines malformed (over the 1% limit)")]
    TooManyMalformed { path: String, malformed: usize, total: usize },
    #[error("empty corpus: no tokens survived preprocessing")]
    EmptyCorpus,
    #[error("embedding dimension mismatch: file has {found}, configured {expected}")]
    DimensionMismatch { found: usize, expected: usize },
    #[error("{path} line {line}: {reason}")]
    BadLine { path: String, line: usize, reason: String },
    #[error(transparent)]
    Bin(#[from] crate::binio::BinError),
}

/// Interned categorical labels. Id 0 is the reserved "other" bucket for
/// labels unseen at preprocessing time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryVocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for CategoryVocab {
    fn default() -> Self {
        Self::new()
    }
}

impl CategoryVocab {
    pub fn new() -> Self {
        let mut v = CategoryVocab { names: Vec::new(), index: HashMap::new() };
        v.intern("<other>");
        v
    }

    pub fn from_names(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        CategoryVocab { names, index }
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> u32 {
        self.index.get(name).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A news article after vocabulary indexing. Token sequences are padded or
/// truncated to the configured lengths; category name tokens are kept
/// unpadded for the aspect word sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewsRecord {
    pub news_id: String,
    pub category: u32,
    pub subcategory: u32,
    pub title_tokens: Vec<u32>,
    pub abstract_tokens: Vec<u32>,
    pub category_tokens: Vec<u32>,
    pub subcategory_tokens: Vec<u32>,
}

/// One impression linked against the news table: candidate and history
/// entries are indices into `Corpus::news`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub impression_id: String,
    pub user_id: String,
    /// Browsed news, most recent last. May be empty (cold user).
    pub history: Vec<u32>,
    /// `(news index, label)` with label in {0, 1}; never empty.
    pub candidates: Vec<(u32, u8)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub news_parsed: usize,
    pub news_malformed: usize,
    pub impressions_parsed: usize,
    pub impressions_rejected: usize,
    pub clicks: usize,
    pub unresolved_news_refs: usize,
    pub embedding_coverage: f64,
}

/// The preprocessed bundle consumed by training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub categories: CategoryVocab,
    pub subcategories: CategoryVocab,
    pub news: Vec<NewsRecord>,
    pub train_impressions: Vec<ImpressionRecord>,
    pub embeddings: EmbeddingTable,
    pub stats: CorpusStats,
}

impl Corpus {
    pub fn news_index(&self) -> HashMap<&str, u32> {
        self.news.iter().enumerate().map(|(i, n)| (n.news_id.as_str(), i as u32)).collect()
    }
}

/// Map tokenized words to padded id sequences using `vocab`.
pub fn index_news(
    raw: &[RawNews],
    vocab: &Vocabulary,
    categories: &CategoryVocab,
    subcategories: &CategoryVocab,
    title_len: usize,
    abstract_len: usize,
) -> Vec<NewsRecord> {
    raw.iter()
        .map(|r| {
            let title_tokens = pad_truncate(vocab.ids_of(&r.title_words), title_len);
            let abstract_tokens = pad_truncate(vocab.ids_of(&r.abstract_words), abstract_len);
            NewsRecord {
                news_id: r.news_id.clone(),
                category: categories.get(&r.category),
                subcategory: subcategories.get(&r.subcategory),
                title_tokens,
                abstract_tokens,
                category_tokens: vocab.ids_of(&tokenize(&r.category)),
                subcategory_tokens: vocab.ids_of(&tokenize(&r.subcategory)),
            }
        })
        .collect()
}

fn pad_truncate(mut ids: Vec<u32>, len: usize) -> Vec<u32> {
    ids.truncate(len);
    ids.resize(len, PAD_ID);
    ids
}

/// Resolve raw impressions against the news table. Unresolvable history or
/// candidate entries are dropped (counted); impressions left with no
/// candidates are dropped entirely.
pub fn link_impressions(
    raw: &[RawImpression],
    index: &HashMap<&str, u32>,
) -> (Vec<ImpressionRecord>, usize) {
    let mut unresolved = 0;
    let mut out = Vec::with_capacity(raw.len());
    for imp in raw {
        let history: Vec<u32> = imp
            .history
            .iter()
            .filter_map(|id| {
                let hit = index.get(id.as_str()).copied();
                if hit.is_none() {
                    unresolved += 1;
                }
                hit
            })
            .collect();
        let candidates: Vec<(u32, u8)> = imp
            .candidates
            .iter()
            .filter_map(|(id, label)| {
                let hit = index.get(id.as_str()).copied();
                if hit.is_none() {
                    unresolved += 1;
                }
                hit.map(|i| (i, *label))
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        out.push(ImpressionRecord {
            impression_id: imp.impression_id.clone(),
            user_id: imp.user_id.clone(),
            history,
            candidates,
        });
    }
    (out, unresolved)
}

/// Everything `preprocess` produced beyond the corpus itself.
pub struct PreprocessOutcome {
    pub corpus: Corpus,
    /// `(line number, reason)` for rejected behavior lines.
    pub behaviors_rejected: Vec<(usize, String)>,
}

/// Full ingestion pipeline: parse news and behaviors, build the vocabulary
/// over titles, abstracts and category names, load pretrained embeddings,
/// index and link everything into a [`Corpus`].
pub fn preprocess(cfg: &crate::config::Config) -> Result<PreprocessOutcome, CorpusError> {
    use std::path::Path;
    let news_path = cfg.news_path.as_deref().ok_or(CorpusError::MissingInput("news"))?;
    let behaviors_path =
        cfg.behaviors_path.as_deref().ok_or(CorpusError::MissingInput("behaviors"))?;
    let embeddings_path =
        cfg.embeddings_path.as_deref().ok_or(CorpusError::MissingInput("embeddings"))?;

    let parsed = parse_news(Path::new(news_path))?;
    let behaviors = parse_behaviors(Path::new(behaviors_path))?;

    let mut token_lists: Vec<Vec<String>> = Vec::with_capacity(parsed.records.len() * 3);
    for rec in &parsed.records {
        token_lists.push(rec.title_words.clone());
        token_lists.push(rec.abstract_words.clone());
        let mut names = tokenize(&rec.category);
        names.extend(tokenize(&rec.subcategory));
        token_lists.push(names);
    }
    let vocab = build_vocabulary(token_lists.iter().map(|l| l.as_slice()), cfg.min_count)?;

    let (embeddings, coverage) = load_pretrained_embeddings(
        Path::new(embeddings_path),
        &vocab,
        cfg.embedding_dim,
        cfg.seed,
    )?;

    let news = index_news(
        &parsed.records,
        &vocab,
        &parsed.categories,
        &parsed.subcategories,
        cfg.title_len,
        cfg.abstract_len,
    );
    let index: HashMap<&str, u32> =
        news.iter().enumerate().map(|(i, n)| (n.news_id.as_str(), i as u32)).collect();
    let (train_impressions, unresolved) = link_impressions(&behaviors.records, &index);

    let stats = CorpusStats {
        news_parsed: news.len(),
        news_malformed: parsed.malformed,
        impressions_parsed: train_impressions.len(),
        impressions_rejected: behaviors.rejected.len(),
        clicks: behaviors.clicks,
        unresolved_news_refs: unresolved,
        embedding_coverage: coverage,
    };
    Ok(PreprocessOutcome {
        corpus: Corpus {
            vocab,
            categories: parsed.categories,
            subcategories: parsed.subcategories,
            news,
            train_impressions,
            embeddings,
            stats,
        },
        behaviors_rejected: behaviors.rejected,
    })
}

/// Parse an extra behaviors file (e.g. a held-out test split) against an
/// existing corpus.
pub fn load_impressions(
    corpus: &Corpus,
    behaviors_path: &std::path::Path,
) -> Result<(Vec<ImpressionRecord>, Vec<(usize, String)>), CorpusError> {
    let behaviors = parse_behaviors(behaviors_path)?;
    let index = corpus.news_index();
    let (impressions, _) = link_impressions(&behaviors.records, &index);
    Ok((impressions, behaviors.rejected))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_vocab_reserves_other() {
        let mut v = CategoryVocab::new();
        assert_eq!(v.get("missing"), 0);
        let id = v.intern("sports");
        assert_eq!(id, 1);
        assert_eq!(v.get("sports"), 1);
        assert_eq!(v.name(0), "<other>");
    }

    #[test]
    fn pad_truncate_fixes_length() {
        assert_eq!(pad_truncate(vec![5, 6], 4), vec![5, 6, 0, 0]);
        assert_eq!(pad_truncate(vec![5, 6, 7, 8, 9], 3), vec![5, 6, 7]);
    }
}

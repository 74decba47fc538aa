//! Word vocabulary with dense ids. Id 0 is padding, id 1 the unknown word;
//! real words start at 2, ordered by frequency (descending) then
//! lexicographically, which fixes ids deterministically.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::hash::{fnv1a64_with, FNV_OFFSET};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    id_to_word: Vec<String>,
    #[serde(skip)]
    word_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_words(mut id_to_word: Vec<String>) -> Self {
        if id_to_word.len() < 2 {
            id_to_word = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        }
        let word_to_id =
            id_to_word.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Vocabulary { id_to_word, word_to_id }
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.word_to_id.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.id_to_word[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    pub fn ids_of(&self, words: &[String]) -> Vec<u32> {
        words.iter().map(|w| self.id(w)).collect()
    }

    /// Stable fingerprint of the exact id ordering, for checkpoint
    /// compatibility checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for w in &self.id_to_word {
            h = fnv1a64_with(h, w.as_bytes());
            h = fnv1a64_with(h, &[0]);
        }
        h
    }
}

/// Count tokens across the corpus and keep those with frequency at least
/// `min_count`. Fails on a corpus with no tokens at all.
pub fn build_vocabulary<'a, I>(token_lists: I, min_count: usize) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut any = false;
    for list in token_lists {
        for tok in list {
            any = true;
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> =
        counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut id_to_word = Vec::with_capacity(kept.len() + 2);
    id_to_word.push(PAD_TOKEN.to_string());
    id_to_word.push(UNK_TOKEN.to_string());
    id_to_word.extend(kept.into_iter().map(|(w, _)| w.to_string()));
    Ok(Vocabulary::from_words(id_to_word))
}

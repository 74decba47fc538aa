//! Versioned binary cache of the preprocessed corpus.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{
    CategoryVocab, Corpus, CorpusError, CorpusStats, EmbeddingTable, ImpressionRecord,
    NewsRecord, Vocabulary,
};
use crate::binio::{BinReader, BinWriter};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"ANRC";
pub const CACHE_VERSION: u32 = 1;

/// Persist the corpus together with the preprocess-config hash that
/// produced it.
pub fn save_cache(path: &Path, corpus: &Corpus, preprocess_hash: u64) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let mut w = BinWriter::new(BufWriter::new(file));
    w.header(MAGIC, CACHE_VERSION)?;
    w.u64(preprocess_hash)?;

    let write_names = |w: &mut BinWriter<_>, names: &[String]| -> Result<(), CorpusError> {
        w.u64(names.len() as u64)?;
        for n in names {
            w.str(n)?;
        }
        Ok(())
    };
    write_names(&mut w, corpus.vocab.words())?;
    write_names(&mut w, corpus.categories.names())?;
    write_names(&mut w, corpus.subcategories.names())?;

    w.u8(corpus.embeddings.trainable as u8)?;
    w.u64(corpus.embeddings.vocab_size() as u64)?;
    w.u64(corpus.embeddings.dim() as u64)?;
    w.f64_slice(corpus.embeddings.table.values())?;

    w.u64(corpus.news.len() as u64)?;
    for n in &corpus.news {
        w.str(&n.news_id)?;
        w.u32(n.category)?;
        w.u32(n.subcategory)?;
        w.u32_slice(&n.title_tokens)?;
        w.u32_slice(&n.abstract_tokens)?;
        w.u32_slice(&n.category_tokens)?;
        w.u32_slice(&n.subcategory_tokens)?;
    }

    w.u64(corpus.train_impressions.len() as u64)?;
    for imp in &corpus.train_impressions {
        w.str(&imp.impression_id)?;
        w.str(&imp.user_id)?;
        w.u32_slice(&imp.history)?;
        w.u64(imp.candidates.len() as u64)?;
        for &(idx, label) in &imp.candidates {
            w.u32(idx)?;
            w.u8(label)?;
        }
    }

    let s = &corpus.stats;
    w.u64(s.news_parsed as u64)?;
    w.u64(s.news_malformed as u64)?;
    w.u64(s.impressions_parsed as u64)?;
    w.u64(s.impressions_rejected as u64)?;
    w.u64(s.clicks as u64)?;
    w.u64(s.unresolved_news_refs as u64)?;
    w.f64(s.embedding_coverage)?;
    w.finish()?;
    Ok(())
}

/// Load a cache, returning the corpus and the stored preprocess hash.
pub fn load_cache(path: &Path) -> Result<(Corpus, u64), CorpusError> {
    let file = std::fs::File::open(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let mut r = BinReader::new(BufReader::new(file));
    r.expect_header(MAGIC, CACHE_VERSION)?;
    let preprocess_hash = r.u64()?;

    let read_names = |r: &mut BinReader<_>| -> Result<Vec<String>, CorpusError> {
        let n = r.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(r.str()?);
        }
        Ok(out)
    };
    let vocab = Vocabulary::from_words(read_names(&mut r)?);
    let categories = CategoryVocab::from_names(read_names(&mut r)?);
    let subcategories = CategoryVocab::from_names(read_names(&mut r)?);

    let trainable = r.u8()? != 0;
    let rows = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let values = r.f64_vec()?;
    let embeddings = EmbeddingTable { table: Tensor::matrix(rows, dim, values), trainable };

    let n_news = r.u64()? as usize;
    let mut news = Vec::with_capacity(n_news);
    for _ in 0..n_news {
        news.push(NewsRecord {
            news_id: r.str()?,
            category: r.u32()?,
            subcategory: r.u32()?,
            title_tokens: r.u32_vec()?,
            abstract_tokens: r.u32_vec()?,
            category_tokens: r.u32_vec()?,
            subcategory_tokens: r.u32_vec()?,
        });
    }

    let n_imps = r.u64()? as usize;
    let mut train_impressions = Vec::with_capacity(n_imps);
    for _ in 0..n_imps {
        let impression_id = r.str()?;
        let user_id = r.str()?;
        let history = r.u32_vec()?;
        let n_cands = r.u64()? as usize;
        let mut candidates = Vec::with_capacity(n_cands);
        for _ in 0..n_cands {
            let idx = r.u32()?;
            let label = r.u8()?;
            candidates.push((idx, label));
        }
        train_impressions.push(ImpressionRecord { impression_id, user_id, history, candidates });
    }

    let stats = CorpusStats {
        news_parsed: r.u64()? as usize,
        news_malformed: r.u64()? as usize,
        impressions_parsed: r.u64()? as usize,
        impressions_rejected: r.u64()? as usize,
        clicks: r.u64()? as usize,
        unresolved_news_refs: r.u64()? as usize,
        embedding_coverage: r.f64()?,
    };

    Ok((
        Corpus { vocab, categories, subcategories, news, train_impressions, embeddings, stats },
        preprocess_hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> Corpus {
        let vocab = Vocabulary::from_words(vec![
            "<pad>".into(),
            "<unk>".into(),
            "storm".into(),
            "wins".into(),
        ]);
        let mut categories = CategoryVocab::new();
        categories.intern("weather");
        let mut subcategories = CategoryVocab::new();
        subcategories.intern("storms");
        let embeddings = EmbeddingTable {
            table: Tensor::matrix(4, 2, vec![0.0, 0.0, 0.1, -0.1, 0.5, 0.25, -1.0, 2.0]),
            trainable: true,
        };
        let news = vec![NewsRecord {
            news_id: "N1".into(),
            category: 1,
            subcategory: 1,
            title_tokens: vec![2, 3, 0, 0],
            abstract_tokens: vec![3, 0],
            category_tokens: vec![2],
            subcategory_tokens: vec![2, 3],
        }];
        let train_impressions = vec![ImpressionRecord {
            impression_id: "77".into(),
            user_id: "U9".into(),
            history: vec![0],
            candidates: vec![(0, 1)],
        }];
        Corpus {
            vocab,
            categories,
            subcategories,
            news,
            train_impressions,
            embeddings,
            stats: CorpusStats {
                news_parsed: 1,
                clicks: 1,
                embedding_coverage: 0.5,
                ..Default::default()
            },
        }
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.cache");
        let corpus = tiny_corpus();
        save_cache(&path, &corpus, 0xfeed).unwrap();
        let (loaded, hash) = load_cache(&path).unwrap();
        assert_eq!(hash, 0xfeed);
        assert_eq!(loaded, corpus);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.cache");
        let corpus = tiny_corpus();
        save_cache(&path, &corpus, 1).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_cache(&path).is_err());
    }
}

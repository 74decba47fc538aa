//! End-to-end pipeline checks on a small synthetic corpus: preprocess from
//! files, cache round-trip, deterministic training, and checkpointing.

use anrs_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use anrs_core::config::Config;
use anrs_core::corpus::{load_cache, load_impressions, preprocess, save_cache, synthetic};
use anrs_core::eval::evaluate_model;
use anrs_core::init::stream_rng;
use anrs_core::model::{ModelDims, ModelParams};
use anrs_core::train::{initialize_aspects, train};

fn small_spec() -> synthetic::SyntheticSpec {
    synthetic::SyntheticSpec {
        words_per_cluster: 40,
        news_count: 60,
        user_count: 16,
        embedding_dim: 8,
        title_words: 4,
        abstract_words: 5,
        history_len: 4,
        train_impressions_per_user: 6,
        test_impressions_per_user: 2,
        candidates_per_impression: 5,
        same_cluster_negatives: 1,
        ..Default::default()
    }
}

fn small_config(files: &synthetic::SyntheticFiles) -> Config {
    Config {
        news_path: Some(files.news.display().to_string()),
        behaviors_path: Some(files.train_behaviors.display().to_string()),
        embeddings_path: Some(files.embeddings.display().to_string()),
        embedding_dim: 8,
        cnn_filters: 8,
        window: 3,
        category_dim: 4,
        attention_hidden: 8,
        aspect_count: 2,
        title_len: 6,
        abstract_len: 8,
        history_cap: 10,
        min_count: 1,
        negative_ratio: 3,
        aspect_negative_ratio: 2,
        batch_size: 32,
        dropout: 0.2,
        epochs: 2,
        learning_rate: 1e-3,
        seed: 11,
        ..Config::default()
    }
}

#[test]
fn preprocess_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let files = synthetic::generate(dir.path(), &small_spec()).unwrap();
    let config = small_config(&files);

    let outcome = preprocess(&config).unwrap();
    let corpus = outcome.corpus;
    assert_eq!(corpus.news.len(), 60);
    assert!(outcome.behaviors_rejected.is_empty());
    assert!(corpus.stats.embedding_coverage > 0.9, "coverage {}", corpus.stats.embedding_coverage);

    // Cache round-trips to an identical corpus.
    let cache_path = dir.path().join("corpus.cache");
    save_cache(&cache_path, &corpus, config.preprocess_hash()).unwrap();
    let (reloaded, hash) = load_cache(&cache_path).unwrap();
    assert_eq!(hash, config.preprocess_hash());
    assert_eq!(reloaded, corpus);

    // Train a few epochs.
    let dims = ModelDims::from_config(
        &config,
        corpus.vocab.len(),
        corpus.categories.len(),
        corpus.subcategories.len(),
    );
    let mut params =
        ModelParams::init(dims, &corpus.embeddings, &mut stream_rng(config.seed, "model-init"));
    initialize_aspects(&mut params, &corpus, config.seed).unwrap();
    let outcome = train(&config, &corpus, params, |log| {
        assert!(log.total.is_finite());
        assert!(log.recommendation >= 0.0 && log.aspect_hinge >= 0.0 && log.orthogonality >= 0.0);
    })
    .unwrap();
    assert_eq!(outcome.epoch_logs.len(), 2);
    assert!(outcome.samples > 0);

    // Loss goes down across epochs on this easy corpus.
    let first = outcome.epoch_logs.first().unwrap().total;
    let last = outcome.epoch_logs.last().unwrap().total;
    assert!(last < first, "epoch loss did not decrease: {first} -> {last}");

    // Evaluate on the held-out behaviors.
    let (test_imps, rejected) = load_impressions(&corpus, &files.test_behaviors).unwrap();
    assert!(rejected.is_empty());
    let report = evaluate_model(&outcome.best_params, &corpus.news, &test_imps).unwrap();
    assert!(report.auc.is_some());
    assert_eq!(report.impressions, test_imps.len());

    // Checkpoint round-trip reproduces identical evaluation results.
    let ckpt_path = dir.path().join("model.ckpt");
    save_checkpoint(
        &ckpt_path,
        &Checkpoint {
            config: config.clone(),
            vocab_fingerprint: corpus.vocab.fingerprint(),
            best_epoch: outcome.best_epoch,
            best_val_auc: outcome.best_val_auc,
            params: outcome.best_params,
        },
    )
    .unwrap();
    let loaded = load_checkpoint(&ckpt_path).unwrap();
    assert_eq!(loaded.vocab_fingerprint, corpus.vocab.fingerprint());
    let report2 = evaluate_model(&loaded.params, &corpus.news, &test_imps).unwrap();
    assert_eq!(report.auc, report2.auc);
    assert_eq!(report.ndcg10, report2.ndcg10);
}

#[test]
fn training_is_deterministic_under_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let files = synthetic::generate(dir.path(), &small_spec()).unwrap();
    let mut config = small_config(&files);
    config.epochs = 1;

    let run = || {
        let corpus = preprocess(&config).unwrap().corpus;
        let dims = ModelDims::from_config(
            &config,
            corpus.vocab.len(),
            corpus.categories.len(),
            corpus.subcategories.len(),
        );
        let mut params = ModelParams::init(
            dims,
            &corpus.embeddings,
            &mut stream_rng(config.seed, "model-init"),
        );
        initialize_aspects(&mut params, &corpus, config.seed).unwrap();
        let outcome = train(&config, &corpus, params, |_| {}).unwrap();
        (
            outcome.epoch_logs[0].recommendation,
            outcome.epoch_logs[0].total,
            outcome.params.word_emb.values().to_vec(),
        )
    };
    let (u1, t1, w1) = run();
    let (u2, t2, w2) = run();
    assert_eq!(u1, u2, "epoch-1 ranking loss must be bit-identical");
    assert_eq!(t1, t2, "epoch-1 total loss must be bit-identical");
    assert_eq!(w1, w2, "trained embeddings must be bit-identical");
}

#[test]
fn disabled_aspects_zero_the_extra_terms() {
    let dir = tempfile::tempdir().unwrap();
    let files = synthetic::generate(dir.path(), &small_spec()).unwrap();
    let mut config = small_config(&files);
    config.aspects_enabled = false;
    config.epochs = 1;

    let corpus = preprocess(&config).unwrap().corpus;
    let dims = ModelDims::from_config(
        &config,
        corpus.vocab.len(),
        corpus.categories.len(),
        corpus.subcategories.len(),
    );
    let mut params =
        ModelParams::init(dims, &corpus.embeddings, &mut stream_rng(config.seed, "model-init"));
    assert!(params.aspect.is_none());
    initialize_aspects(&mut params, &corpus, config.seed).unwrap();
    let outcome = train(&config, &corpus, params, |_| {}).unwrap();
    let log = &outcome.epoch_logs[0];
    assert_eq!(log.aspect_hinge, 0.0);
    assert_eq!(log.orthogonality, 0.0);
    assert_eq!(log.total, log.recommendation);
}

//! Operator surface: preprocess raw data, train, evaluate, and inspect
//! aspects, all driven by a `key=value` config file with flag overrides.
//!
//! Exit codes: 0 success, 2 input error, 3 compatibility error,
//! 4 numerical abort.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use anrs_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use anrs_core::config::{Config, InputViews};
use anrs_core::corpus::{load_cache, load_impressions, preprocess, save_cache, Corpus};
use anrs_core::eval::evaluate_model;
use anrs_core::init::stream_rng;
use anrs_core::model::{aspect_top_words, ModelDims, ModelParams};
use anrs_core::train::{initialize_aspects, train, TrainError};

const EXIT_INPUT: i32 = 2;
const EXIT_COMPAT: i32 = 3;
const EXIT_NUMERIC: i32 = 4;

#[derive(Parser)]
#[command(name = "anrs", version, about = "Aspect-driven news recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse news/behaviors/embeddings and write the corpus cache.
    Preprocess(CommonArgs),
    /// Train on the cached corpus; writes checkpoints and a training log.
    Train(CommonArgs),
    /// Score a behaviors file with a checkpoint and report AUC/MRR/nDCG.
    Eval(EvalArgs),
    /// List each aspect's nearest vocabulary words.
    InspectAspects(InspectArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file with key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for caches, checkpoints, logs and reports.
    #[arg(long, default_value = "run")]
    run_dir: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Input views, comma separated: title,abstract,category.
    #[arg(long)]
    views: Option<String>,
    /// Disable every aspect-level component (ablation variant).
    #[arg(long)]
    no_aspects: bool,
    /// Force the strictly sequential deterministic mode (the default; kept
    /// for config echoing).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to evaluate (default: <run-dir>/checkpoints/best.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Behaviors TSV to score (default: the config's eval_behaviors).
    #[arg(long)]
    behaviors: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to inspect (default: <run-dir>/checkpoints/best.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Words to list per aspect.
    #[arg(long, default_value_t = 10)]
    top_n: usize,
}

/// Guard file preventing concurrent writers in one run directory.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(run_dir: &Path) -> anyhow::Result<RunLock> {
        fs::create_dir_all(run_dir)
            .with_context(|| format!("cannot create run directory {}", run_dir.display()))?;
        let path = run_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(anyhow!(
                "run directory {} is locked by another command (remove {} if stale)",
                run_dir.display(),
                path.display()
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn load_config(args: &CommonArgs) -> anyhow::Result<Config> {
    let mut cfg = match &args.config {
        Some(path) => Config::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(views) = &args.views {
        cfg.input_views = InputViews::parse(views).map_err(|e| anyhow!("--views: {e}"))?;
    }
    if args.no_aspects {
        cfg.aspects_enabled = false;
    }
    if args.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;
    Ok(cfg)
}

fn cache_path(run_dir: &Path) -> PathBuf {
    run_dir.join("corpus.cache")
}

fn default_checkpoint(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints").join("best.ckpt")
}

fn cmd_preprocess(args: &CommonArgs) -> anyhow::Result<i32> {
    let cfg = load_config(args)?;
    let _lock = RunLock::acquire(&args.run_dir)?;
    let cache = cache_path(&args.run_dir);
    let wanted_hash = cfg.preprocess_hash();

    if cache.exists() {
        if let Ok((_, stored)) = load_cache(&cache) {
            if stored == wanted_hash {
                println!("cache hit: {} already matches this config", cache.display());
                return Ok(0);
            }
            println!("cache stale (config changed), rebuilding");
        } else {
            println!("cache unreadable, rebuilding");
        }
    }

    let outcome = preprocess(&cfg)?;
    if let Some((line, reason)) = outcome.behaviors_rejected.first() {
        return Err(anyhow!(
            "behaviors file is corrupt: line {line}: {reason} ({} lines rejected)",
            outcome.behaviors_rejected.len()
        ));
    }
    let corpus = &outcome.corpus;
    save_cache(&cache, corpus, wanted_hash)?;
    println!(
        "parsed {} news ({} malformed), {} impressions, {} clicks",
        corpus.stats.news_parsed,
        corpus.stats.news_malformed,
        corpus.stats.impressions_parsed,
        corpus.stats.clicks
    );
    println!(
        "vocabulary {} words, embedding coverage {:.1}%, {} unresolved news references",
        corpus.vocab.len(),
        corpus.stats.embedding_coverage * 100.0,
        corpus.stats.unresolved_news_refs
    );
    println!("cache written to {}", cache.display());
    Ok(0)
}

fn load_corpus_checked(run_dir: &Path, cfg: &Config) -> anyhow::Result<Corpus> {
    let cache = cache_path(run_dir);
    let (corpus, stored_hash) = load_cache(&cache)
        .with_context(|| format!("loading cache {} (run preprocess first)", cache.display()))?;
    if stored_hash != cfg.preprocess_hash() {
        return Err(Compat(format!(
            "cache {} was built from a different preprocessing config; rerun preprocess",
            cache.display()
        ))
        .into());
    }
    Ok(corpus)
}

/// Compatibility refusals exit with code 3.
#[derive(Debug)]
struct Compat(String);

impl std::fmt::Display for Compat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Compat {}

fn cmd_train(args: &CommonArgs) -> anyhow::Result<i32> {
    let cfg = load_config(args)?;
    let _lock = RunLock::acquire(&args.run_dir)?;
    let corpus = load_corpus_checked(&args.run_dir, &cfg)?;

    let effective = args.run_dir.join("config.effective");
    fs::write(&effective, cfg.to_key_values())?;
    println!("effective config echoed to {}", effective.display());

    let dims = ModelDims::from_config(
        &cfg,
        corpus.vocab.len(),
        corpus.categories.len(),
        corpus.subcategories.len(),
    );
    println!(
        "model: views={}, aspects={}, news dim {}, vocab {}",
        cfg.input_views,
        cfg.aspects_enabled,
        dims.news_dim(),
        corpus.vocab.len()
    );
    let mut params =
        ModelParams::init(dims, &corpus.embeddings, &mut stream_rng(cfg.seed, "model-init"));
    initialize_aspects(&mut params, &corpus, cfg.seed)?;

    let log_path = args.run_dir.join("train.log");
    let mut log_file = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    let outcome = train(&cfg, &corpus, params, |log| {
        let line = serde_json::to_string(log).expect("epoch log serializes");
        let _ = writeln!(log_file, "{line}");
        match &log.val {
            Some(v) => println!(
                "epoch {}: loss {:.4} (U {:.4}, J {:.4}, F {:.4}) | val {} | {:.1}s",
                log.epoch, log.total, log.recommendation, log.aspect_hinge, log.orthogonality,
                v, log.wall_secs
            ),
            None => println!(
                "epoch {}: loss {:.4} (U {:.4}, J {:.4}, F {:.4}) | {:.1}s",
                log.epoch, log.total, log.recommendation, log.aspect_hinge, log.orthogonality,
                log.wall_secs
            ),
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::NonFiniteLoss { epoch, batch }) => {
            eprintln!("numerical abort: non-finite loss in epoch {epoch}, batch {batch}");
            return Ok(EXIT_NUMERIC);
        }
        Err(e) => return Err(e.into()),
    };

    let ckpt_dir = args.run_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let fingerprint = corpus.vocab.fingerprint();
    save_checkpoint(
        &ckpt_dir.join("best.ckpt"),
        &Checkpoint {
            config: cfg.clone(),
            vocab_fingerprint: fingerprint,
            best_epoch: outcome.best_epoch,
            best_val_auc: outcome.best_val_auc,
            params: outcome.best_params,
        },
    )?;
    save_checkpoint(
        &ckpt_dir.join("final.ckpt"),
        &Checkpoint {
            config: cfg,
            vocab_fingerprint: fingerprint,
            best_epoch: outcome.epoch_logs.len(),
            best_val_auc: outcome.best_val_auc,
            params: outcome.params,
        },
    )?;
    println!(
        "trained on {} samples ({} skipped); best epoch {} (val AUC {})",
        outcome.samples,
        outcome.skipped_samples,
        outcome.best_epoch,
        outcome.best_val_auc.map_or_else(|| "-".into(), |a| format!("{a:.4}"))
    );
    println!("checkpoints in {}", ckpt_dir.display());
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<i32> {
    let _lock = RunLock::acquire(&args.common.run_dir)?;
    let ckpt_path =
        args.checkpoint.clone().unwrap_or_else(|| default_checkpoint(&args.common.run_dir));
    let ckpt = load_checkpoint(&ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;

    // The cache must hold the vocabulary that trained this checkpoint.
    let cache = cache_path(&args.common.run_dir);
    let (corpus, _) = load_cache(&cache)
        .with_context(|| format!("loading cache {} (run preprocess first)", cache.display()))?;
    if corpus.vocab.fingerprint() != ckpt.vocab_fingerprint {
        return Err(Compat(format!(
            "vocabulary fingerprint mismatch: cache {} vs checkpoint {}",
            corpus.vocab.fingerprint(),
            ckpt.vocab_fingerprint
        ))
        .into());
    }

    let behaviors = match (&args.behaviors, &ckpt.config.eval_behaviors_path) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(anyhow!("no behaviors file: pass --behaviors or set eval_behaviors"))
        }
    };
    let (impressions, rejected) = load_impressions(&corpus, &behaviors)?;
    if let Some((line, reason)) = rejected.first() {
        return Err(anyhow!("behaviors file is corrupt: line {line}: {reason}"));
    }

    let report = evaluate_model(&ckpt.params, &corpus.news, &impressions)?;
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!("AUC\tMRR\tnDCG@5\tnDCG@10");
    println!(
        "{}\t{}\t{}\t{}",
        cell(report.auc),
        cell(report.mrr),
        cell(report.ndcg5),
        cell(report.ndcg10)
    );
    println!(
        "impressions {} (auc-excluded {}, rank-excluded {})",
        report.impressions, report.auc_excluded, report.rank_excluded
    );
    let report_path = args.common.run_dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    println!("report written to {}", report_path.display());
    Ok(0)
}

fn cmd_inspect_aspects(args: &InspectArgs) -> anyhow::Result<i32> {
    let _lock = RunLock::acquire(&args.common.run_dir)?;
    let ckpt_path =
        args.checkpoint.clone().unwrap_or_else(|| default_checkpoint(&args.common.run_dir));
    let ckpt = load_checkpoint(&ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
    let Some(aspect) = &ckpt.params.aspect else {
        return Err(Compat("checkpoint was trained without aspects".into()).into());
    };

    let cache = cache_path(&args.common.run_dir);
    let (corpus, _) = load_cache(&cache)
        .with_context(|| format!("loading cache {} (run preprocess first)", cache.display()))?;
    if corpus.vocab.fingerprint() != ckpt.vocab_fingerprint {
        return Err(Compat("vocabulary fingerprint mismatch with checkpoint".into()).into());
    }

    let top = aspect_top_words(&aspect.aspects, &ckpt.params.word_emb, &corpus.vocab, args.top_n);
    for (i, words) in top.iter().enumerate() {
        let rendered: Vec<String> =
            words.iter().map(|(w, s)| format!("{w} ({s:.3})")).collect();
        println!("aspect {i:02}: {}", rendered.join(", "));
    }
    let report_path = args.common.run_dir.join("aspects.json");
    fs::write(&report_path, serde_json::to_string_pretty(&top)?)?;
    println!("aspect report written to {}", report_path.display());
    Ok(0)
}

fn classify_exit(err: &anyhow::Error) -> i32 {
    use anrs_core::corpus::CorpusError;
    use anrs_core::tensor::TensorError;
    for cause in err.chain() {
        if cause.downcast_ref::<Compat>().is_some() {
            return EXIT_COMPAT;
        }
        if cause.downcast_ref::<TensorError>().is_some() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::NonFiniteLoss { .. } | TrainError::Tensor(_) => EXIT_NUMERIC,
                _ => EXIT_INPUT,
            };
        }
        if cause.downcast_ref::<CorpusError>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_INPUT
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::InspectAspects(args) => cmd_inspect_aspects(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(classify_exit(&err));
        }
    }
}

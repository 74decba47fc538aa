//! Mini-batch training of the full objective
//! `total = U + J + λ·F` with Adam and per-epoch validation.

mod adam;
mod loss;

pub use adam::Adam;
pub use loss::{
    aspect_hinge_loss, click_probability, click_score, hinge_terms, orthogonality_penalty,
    orthogonality_reg, recommendation_loss, sample_loss,
};

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::corpus::{make_training_samples, split_validation};
use crate::corpus::{Corpus, ImpressionRecord, TrainingSample};
use crate::eval::{evaluate_model, EvalError, MetricReport};
use crate::init::stream_rng;
use crate::model::aspect::KmeansError;
use crate::model::{
    bind, encode_news, harvest_gradients, init_aspect_matrix, BoundModel, ModelParams,
    NewsForward,
};
use crate::tensor::{Tape, Tensor, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no training samples (every impression lacked positives or negatives)")]
    NoSamples,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("aspect matrix initialization failed: {0}")]
    Kmeans(#[from] KmeansError),
}

/// Loss components of one batch. `total` is exactly `u + j + lambda·f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recommendation: f64,
    pub aspect_hinge: f64,
    pub orthogonality: f64,
    pub lambda: f64,
    pub total: f64,
}

/// One structured training-log line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub batches: usize,
    /// Epoch sums of the loss components.
    pub recommendation: f64,
    pub aspect_hinge: f64,
    pub orthogonality: f64,
    pub total: f64,
    pub val: Option<MetricReport>,
    pub wall_secs: f64,
}

pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub params: ModelParams,
    /// Parameters at the best validation AUC (final ones when no validation
    /// impressions exist).
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub epoch_logs: Vec<EpochLog>,
    pub samples: usize,
    pub skipped_samples: usize,
}

/// Compute news mean embeddings (aspect word sequences averaged) and run
/// k-means to initialize the aspect matrix. No-op when aspects are disabled.
pub fn initialize_aspects(
    params: &mut ModelParams,
    corpus: &Corpus,
    seed: u64,
) -> Result<(), TrainError> {
    let dim = params.dims.embedding_dim;
    let views = params.dims.views;
    let k = params.dims.aspect_count;
    if params.aspect.is_none() {
        return Ok(());
    }
    let table = params.word_emb.values();
    let mut means = Vec::new();
    for record in &corpus.news {
        let seq = crate::model::aspect::aspect_word_sequence(record, &views);
        if seq.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; dim];
        for &t in &seq {
            for (m, &x) in mean.iter_mut().zip(&table[t * dim..(t + 1) * dim]) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= seq.len() as f64;
        }
        means.push(mean);
    }
    let aspects = init_aspect_matrix(&means, k, seed)?;
    let aspect = params.aspect.as_mut().expect("checked above");
    // Prototype routing: score z against the centroids themselves so the
    // probability head picks the nearest aspect before any training. Scaled
    // to put typical logit gaps at O(1) given the centroid magnitudes.
    let k_rows = aspects.shape()[0];
    let mean_sq_norm: f64 = (0..k_rows)
        .map(|r| aspects.row(r).iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        / k_rows as f64;
    let scale = if mean_sq_norm > 0.0 { 3.0 / mean_sq_norm } else { 1.0 };
    let proj_values: Vec<f64> = aspects.values().iter().map(|&x| scale * x).collect();
    aspect.proj = Tensor::new(aspects.shape().to_vec(), proj_values);
    aspect.aspects = aspects;
    Ok(())
}

/// Build the full batch loss graph on `tape`. Returns the breakdown and the
/// total-loss node. Dropout runs only when `dropout_rng` is provided; aspect
/// negatives are drawn from `negative_rng` (mean embeddings of other
/// in-batch news).
fn build_batch_loss(
    tape: &mut Tape,
    bound: &BoundModel,
    config: &Config,
    corpus: &Corpus,
    params: &ModelParams,
    samples: &[&TrainingSample],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    negative_rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, TensorId), TrainError> {
    // Encode each distinct news once; representation nodes are shared.
    let mut distinct: BTreeSet<u32> = BTreeSet::new();
    for sample in samples {
        distinct.insert(sample.positive);
        distinct.extend(sample.negatives.iter());
        distinct.extend(sample.history.iter());
    }
    let mut forwards: HashMap<u32, NewsForward> = HashMap::with_capacity(distinct.len());
    for &idx in &distinct {
        let record = &corpus.news[idx as usize];
        let rng = dropout_rng.as_mut().map(|r| &mut **r);
        forwards.insert(idx, encode_news(tape, bound, params, record, rng)?);
    }

    // Ranking loss U over all samples.
    let mut sample_losses = Vec::with_capacity(samples.len());
    for sample in samples {
        let browsed: Vec<TensorId> = sample.history.iter().map(|i| forwards[i].n).collect();
        let (_, user) = crate::model::encode_user(tape, bound, params, &browsed)?;
        let negatives: Vec<TensorId> =
            sample.negatives.iter().map(|i| forwards[i].n).collect();
        sample_losses.push(sample_loss(tape, user, forwards[&sample.positive].n, &negatives));
    }
    let u_total = {
        let v = tape.concat(&sample_losses);
        tape.sum(v)
    };

    // Aspect hinge loss J.
    let mut hinge = Vec::new();
    let aspect_news: Vec<u32> =
        distinct.iter().copied().filter(|i| forwards[i].aspect.is_some()).collect();
    if params.dims.aspects_enabled && aspect_news.len() > 1 {
        for &idx in &aspect_news {
            let own = forwards[&idx].aspect.as_ref().expect("filtered to Some");
            let pool: Vec<u32> = aspect_news.iter().copied().filter(|&j| j != idx).collect();
            let negatives: Vec<TensorId> = (0..config.aspect_negative_ratio)
                .map(|_| {
                    let pick = pool[negative_rng.random_range(0..pool.len())];
                    forwards[&pick].aspect.as_ref().expect("pool is Some-only").mean
                })
                .collect();
            hinge.extend(hinge_terms(tape, own.reconstruction, own.attended, &negatives));
        }
    }
    let j_total = if hinge.is_empty() {
        tape.scalar(0.0)
    } else {
        let v = tape.concat(&hinge);
        tape.sum(v)
    };

    // Orthogonality penalty F on the aspect matrix.
    let f_total = match bound.maybe_id("aspect.aspects") {
        Some(aspects) => orthogonality_penalty(tape, aspects)?,
        None => tape.scalar(0.0),
    };

    let lambda = config.ortho_weight;
    let uj = tape.add(u_total, j_total);
    let weighted_f = tape.scale(f_total, lambda);
    let total = tape.add(uj, weighted_f);

    Ok((
        LossBreakdown {
            recommendation: tape.item(u_total),
            aspect_hinge: tape.item(j_total),
            orthogonality: tape.item(f_total),
            lambda,
            total: tape.item(total),
        },
        total,
    ))
}

/// One forward/backward pass over a batch, writing gradients into `params`.
fn run_batch(
    config: &Config,
    corpus: &Corpus,
    params: &mut ModelParams,
    batch: &[&TrainingSample],
    dropout_rng: &mut ChaCha8Rng,
    negative_rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown, TrainError> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let dropout = if config.dropout > 0.0 { Some(&mut *dropout_rng) } else { None };
    let (breakdown, total) = build_batch_loss(
        &mut tape,
        &bound,
        config,
        corpus,
        params,
        batch,
        dropout,
        negative_rng,
    )?;
    if !breakdown.total.is_finite() {
        return Err(TrainError::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    tape.backward(total)?;
    harvest_gradients(&tape, &bound, params);
    Ok(breakdown)
}

/// Train on the corpus's impressions (90/10 train/validation split by
/// impression-id hash), checkpointing the best validation AUC in memory.
/// `on_epoch` fires after each epoch with the structured log line.
pub fn train(
    config: &Config,
    corpus: &Corpus,
    mut params: ModelParams,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    let (train_idx, val_idx) = split_validation(&corpus.train_impressions);
    let train_imps: Vec<ImpressionRecord> =
        train_idx.iter().map(|&i| corpus.train_impressions[i].clone()).collect();
    let val_imps: Vec<ImpressionRecord> =
        val_idx.iter().map(|&i| corpus.train_impressions[i].clone()).collect();

    let (samples, skipped) = make_training_samples(
        &train_imps,
        config.negative_ratio,
        config.history_cap,
        config.seed,
    );
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }

    let mut shuffle_rng = stream_rng(config.seed, "batch-shuffle");
    let mut dropout_rng = stream_rng(config.seed, "dropout");
    let mut negative_rng = stream_rng(config.seed, "aspect-negatives");

    let mut adam = Adam::new(config.learning_rate, config.grad_clip);
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_val_auc: Option<f64> = None;
    let mut epoch_logs = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut sums = LossBreakdown { lambda: config.ortho_weight, ..Default::default() };
        let mut batches = 0usize;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let breakdown = run_batch(
                config,
                corpus,
                &mut params,
                &batch,
                &mut dropout_rng,
                &mut negative_rng,
            )
            .map_err(|e| match e {
                TrainError::NonFiniteLoss { .. } => {
                    TrainError::NonFiniteLoss { epoch, batch: batch_no }
                }
                other => other,
            })?;
            adam.step(&mut params);
            sums.recommendation += breakdown.recommendation;
            sums.aspect_hinge += breakdown.aspect_hinge;
            sums.orthogonality += breakdown.orthogonality;
            sums.total += breakdown.total;
            batches += 1;
        }

        let val = if val_imps.is_empty() {
            None
        } else {
            Some(evaluate_model(&params, &corpus.news, &val_imps)?)
        };
        if let Some(auc) = val.as_ref().and_then(|v| v.auc) {
            if best_val_auc.is_none() || auc > best_val_auc.unwrap() {
                best_val_auc = Some(auc);
                best_epoch = epoch;
                best_params = params.clone();
            }
        }

        let log = EpochLog {
            epoch,
            batches,
            recommendation: sums.recommendation,
            aspect_hinge: sums.aspect_hinge,
            orthogonality: sums.orthogonality,
            total: sums.total,
            val,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        epoch_logs.push(log);
    }

    if best_val_auc.is_none() {
        best_params = params.clone();
        best_epoch = config.epochs;
    }
    Ok(TrainOutcome {
        params,
        best_params,
        best_epoch,
        best_val_auc,
        epoch_logs,
        samples: samples.len(),
        skipped_samples: skipped,
    })
}

/// One optimizer step over an explicit sample list. Exposed for overfitting
/// harnesses that drive the step loop themselves.
pub fn train_single_batch(
    config: &Config,
    corpus: &Corpus,
    params: &mut ModelParams,
    samples: &[TrainingSample],
    adam: &mut Adam,
    dropout_rng: &mut ChaCha8Rng,
    negative_rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown, TrainError> {
    let batch: Vec<&TrainingSample> = samples.iter().collect();
    let breakdown = run_batch(config, corpus, params, &batch, dropout_rng, negative_rng)?;
    adam.step(params);
    Ok(breakdown)
}

/// Forward-only batch loss (no dropout, no update) with the tape left
/// intact. Gradient-check harnesses run `backward` on the returned node and
/// compare against finite differences of this same builder.
pub fn batch_loss_forward(
    config: &Config,
    corpus: &Corpus,
    params: &ModelParams,
    samples: &[TrainingSample],
    negative_seed: u64,
) -> Result<(LossBreakdown, Tape, BoundModel, TensorId), TrainError> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let mut negative_rng = stream_rng(negative_seed, "aspect-negatives");
    let batch: Vec<&TrainingSample> = samples.iter().collect();
    let (breakdown, total) = build_batch_loss(
        &mut tape,
        &bound,
        config,
        corpus,
        params,
        &batch,
        None,
        &mut negative_rng,
    )?;
    Ok((breakdown, tape, bound, total))
}

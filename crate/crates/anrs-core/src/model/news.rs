//! Multi-view news encoding.
//!
//! Each enabled channel produces a view vector: titles and abstracts go
//! through embedding → CNN → word attention, categories through an embedding
//! and a ReLU dense layer. A view-level attention softmax weights the views,
//! and the weighted views are concatenated into the fused vector r. With
//! aspects enabled, the aspect extractor's reconstruction r_d is appended:
//! n = [r; r_d].

use rand_chacha::ChaCha8Rng;

use super::aspect::{aspect_word_sequence, attend, reconstruct};
use super::{BoundModel, ModelParams};
use crate::corpus::NewsRecord;
use crate::tensor::{Tape, TensorError, TensorId};

/// Tape handles produced while encoding one news article. Attention-weight
/// handles are exposed so normalization checks can read every softmax the
/// model emits.
pub struct NewsForward {
    /// Final representation n (fused views, plus reconstruction if enabled).
    pub n: TensorId,
    /// Fused multi-view vector r.
    pub fused: TensorId,
    /// View-attention weights (one per enabled view).
    pub view_weights: TensorId,
    pub title_attention: Option<TensorId>,
    pub abstract_attention: Option<TensorId>,
    pub aspect: Option<AspectForward>,
}

/// Aspect extractor outputs for one news article.
pub struct AspectForward {
    /// Mean token embedding y.
    pub mean: TensorId,
    /// Word-attention weights over the aspect token sequence.
    pub weights: TensorId,
    /// Attended embedding z_d.
    pub attended: TensorId,
    /// Aspect probabilities p (simplex over aspects).
    pub probs: TensorId,
    /// Reconstruction r_d = Aᵀ·p.
    pub reconstruction: TensorId,
}

fn non_padding(tokens: &[u32]) -> Vec<usize> {
    tokens.iter().filter(|&&t| t != 0).map(|&t| t as usize).collect()
}

/// Embedding → dropout → CNN → dropout → word attention for one text channel.
/// All-padding input yields a zero vector and no attention weights.
fn encode_text_channel(
    tape: &mut Tape,
    bound: &BoundModel,
    prefix: &str,
    tokens: &[u32],
    filters: usize,
    dropout: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<(Option<TensorId>, TensorId), TensorError> {
    let real = non_padding(tokens);
    if real.is_empty() {
        return Ok((None, tape.leaf_values(vec![0.0; filters], vec![filters])));
    }
    let mut x = tape.gather(bound.word_emb, &real);
    if let Some(r) = rng {
        x = tape.dropout(x, dropout, r);
    }
    let kernel = bound.id(&format!("{prefix}.kernel"));
    let kbias = bound.id(&format!("{prefix}.kernel_bias"));
    let mut conv = tape.conv1d_same(x, kernel, kbias)?;
    if let Some(r) = rng {
        conv = tape.dropout(conv, dropout, r);
    }
    let query = bound.id(&format!("{prefix}.attn.query"));
    let proj = bound.id(&format!("{prefix}.attn.proj"));
    let bias = bound.id(&format!("{prefix}.attn.bias"));
    let (weights, pooled) = tape.additive_attention_pool(conv, query, proj, bias)?;
    Ok((Some(weights), pooled))
}

/// ReLU dense layer over a categorical embedding row. Out-of-range ids fall
/// back to the reserved "other" row 0.
fn encode_category_channel(
    tape: &mut Tape,
    bound: &BoundModel,
    prefix: &str,
    id: u32,
) -> TensorId {
    let table = bound.id(&format!("{prefix}.embedding"));
    let rows = tape.shape(table)[0];
    let idx = if (id as usize) < rows { id as usize } else { 0 };
    let e = tape.gather_row(table, idx);
    let proj = bound.id(&format!("{prefix}.proj"));
    let bias = bound.id(&format!("{prefix}.bias"));
    let h = tape.matvec(proj, e);
    let h = tape.add(h, bias);
    tape.relu(h)
}

/// Score one view vector with the shared (query, bias) and its per-view
/// projection: `qᵀ·tanh(P·r + b)`.
fn view_score(
    tape: &mut Tape,
    bound: &BoundModel,
    proj_name: &str,
    view: TensorId,
) -> TensorId {
    let proj = bound.id(proj_name);
    let query = bound.id("view.query");
    let bias = bound.id("view.bias");
    let h = tape.matvec(proj, view);
    let h = tape.add(h, bias);
    let h = tape.tanh(h);
    tape.dot(query, h)
}

/// Encode one news article. `rng` enables dropout (training mode).
pub fn encode_news(
    tape: &mut Tape,
    bound: &BoundModel,
    params: &ModelParams,
    record: &NewsRecord,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<NewsForward, TensorError> {
    let dims = &params.dims;
    let mut views: Vec<(TensorId, TensorId)> = Vec::new(); // (score, vector)
    let mut title_attention = None;
    let mut abstract_attention = None;

    if dims.views.title {
        let (attn, repr) = encode_text_channel(
            tape,
            bound,
            "title",
            &record.title_tokens,
            dims.cnn_filters,
            dims.dropout,
            &mut rng,
        )?;
        title_attention = attn;
        let score = view_score(tape, bound, "view.title_proj", repr);
        views.push((score, repr));
    }
    if dims.views.abstract_text {
        let (attn, repr) = encode_text_channel(
            tape,
            bound,
            "abstract",
            &record.abstract_tokens,
            dims.cnn_filters,
            dims.dropout,
            &mut rng,
        )?;
        abstract_attention = attn;
        let score = view_score(tape, bound, "view.abstract_proj", repr);
        views.push((score, repr));
    }
    if dims.views.category {
        let r_c = encode_category_channel(tape, bound, "category", record.category);
        let score = view_score(tape, bound, "view.category_proj", r_c);
        views.push((score, r_c));
        let r_sc = encode_category_channel(tape, bound, "subcategory", record.subcategory);
        let score = view_score(tape, bound, "view.subcategory_proj", r_sc);
        views.push((score, r_sc));
    }

    let scores: Vec<TensorId> = views.iter().map(|(s, _)| *s).collect();
    let score_vec = tape.concat(&scores);
    let view_weights = tape.softmax(score_vec)?;
    let weighted: Vec<TensorId> = views
        .iter()
        .enumerate()
        .map(|(i, (_, v))| {
            let w = tape.index(view_weights, i);
            tape.scale_by_scalar(*v, w)
        })
        .collect();
    let fused = tape.concat(&weighted);

    let (n, aspect) = if dims.aspects_enabled {
        let seq = aspect_word_sequence(record, &dims.views);
        if seq.is_empty() {
            // Degenerate news with no real tokens: zero reconstruction.
            let zero = tape.leaf_values(vec![0.0; dims.embedding_dim], vec![dims.embedding_dim]);
            (tape.concat(&[fused, zero]), None)
        } else {
            let tokens = tape.gather(bound.word_emb, &seq);
            let bilinear = bound.id("aspect.bilinear");
            let (mean, weights, attended) = attend(tape, tokens, bilinear)?;
            let proj = bound.id("aspect.proj");
            let proj_bias = bound.id("aspect.proj_bias");
            let aspects = bound.id("aspect.aspects");
            let (probs, reconstruction) =
                reconstruct(tape, attended, proj, proj_bias, aspects)?;
            (
                tape.concat(&[fused, reconstruction]),
                Some(AspectForward { mean, weights, attended, probs, reconstruction }),
            )
        }
    } else {
        (fused, None)
    };

    Ok(NewsForward { n, fused, view_weights, title_attention, abstract_attention, aspect })
}

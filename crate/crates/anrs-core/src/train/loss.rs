//! Click scoring and the three loss terms.
//!
//! The ranking term U is the negative log-likelihood of each positive
//! against its sampled negatives; J is a max-margin reconstruction loss
//! pulling each news's aspect reconstruction toward its attended embedding
//! and away from other news; F penalizes departure of the normalized aspect
//! Gram matrix from the identity.
//!
//! Each term exists twice: as plain float functions (metric-grade, used in
//! reports and as test oracles) and as tape builders used during training.

use crate::tensor::{Tape, Tensor, TensorError, TensorId};

/// Inner-product click score.
pub fn click_score(user: &[f64], news: &[f64]) -> Result<f64, TensorError> {
    if user.len() != news.len() {
        return Err(TensorError::ShapeMismatch {
            op: "click_score",
            detail: format!("user dim {} vs news dim {}", user.len(), news.len()),
        });
    }
    Ok(user.iter().zip(news).map(|(&u, &n)| u * n).sum())
}

/// Probability of the positive against its negatives,
/// `exp(ŷ⁺)/(exp(ŷ⁺)+Σ exp(ŷ⁻))`, computed shift-stably.
pub fn click_probability(pos_score: f64, neg_scores: &[f64]) -> f64 {
    let m = neg_scores.iter().cloned().fold(pos_score, f64::max);
    let pos = (pos_score - m).exp();
    let denom: f64 = pos + neg_scores.iter().map(|&s| (s - m).exp()).sum::<f64>();
    pos / denom
}

/// Negative log-likelihood over a batch of positive-sample probabilities.
/// Probabilities that underflowed to zero are clamped at 1e-12 and counted.
pub fn recommendation_loss(probabilities: &[f64]) -> (f64, usize) {
    let mut clamped = 0usize;
    let mut total = 0.0;
    for &p in probabilities {
        let p = if p <= 0.0 {
            clamped += 1;
            1e-12
        } else {
            p
        };
        total -= p.ln();
    }
    (total, clamped)
}

/// Margin terms for one news: `Σ_j max(0, 1 − r_d·z_d + r_d·n_j)`.
pub fn aspect_hinge_loss(
    reconstruction: &[f64],
    attended: &[f64],
    negatives: &[&[f64]],
) -> f64 {
    let pos: f64 = reconstruction.iter().zip(attended).map(|(&r, &z)| r * z).sum();
    negatives
        .iter()
        .map(|neg| {
            let n: f64 = reconstruction.iter().zip(*neg).map(|(&r, &x)| r * x).sum();
            (1.0 - pos + n).max(0.0)
        })
        .sum()
}

/// Frobenius norm of `A_n·A_nᵀ − I` for the row-normalized aspect matrix.
pub fn orthogonality_reg(aspects: &Tensor) -> Result<f64, TensorError> {
    let shape = aspects.shape();
    assert_eq!(shape.len(), 2, "orthogonality_reg: matrix expected");
    let (k, d) = (shape[0], shape[1]);
    let values = aspects.values();
    let mut normed = vec![0.0; k * d];
    for i in 0..k {
        let row = &values[i * d..(i + 1) * d];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(TensorError::ZeroRow { op: "orthogonality_reg", row: i });
        }
        for j in 0..d {
            normed[i * d + j] = row[j] / norm;
        }
    }
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            let g: f64 = (0..d).map(|c| normed[i * d + c] * normed[j * d + c]).sum();
            let diff = g - if i == j { 1.0 } else { 0.0 };
            acc += diff * diff;
        }
    }
    Ok(acc.sqrt())
}

// ── tape builders ────────────────────────────────────────────────────

/// Per-sample ranking loss `−log p` as `logsumexp(scores) − scores[0]`
/// with the positive score first. Equal in value to
/// `−ln(click_probability(…))` but stable for any score gap.
pub fn sample_loss(
    tape: &mut Tape,
    user: TensorId,
    positive: TensorId,
    negatives: &[TensorId],
) -> TensorId {
    let mut scores = Vec::with_capacity(1 + negatives.len());
    scores.push(tape.dot(user, positive));
    for &n in negatives {
        scores.push(tape.dot(user, n));
    }
    let vec = tape.concat(&scores);
    let lse = tape.logsumexp(vec);
    let pos = tape.index(vec, 0);
    tape.sub(lse, pos)
}

/// Tape version of the margin terms for one news.
pub fn hinge_terms(
    tape: &mut Tape,
    reconstruction: TensorId,
    attended: TensorId,
    negatives: &[TensorId],
) -> Vec<TensorId> {
    let pos = tape.dot(reconstruction, attended);
    negatives
        .iter()
        .map(|&neg| {
            let n = tape.dot(reconstruction, neg);
            let diff = tape.sub(n, pos);
            let margin = tape.add_scalar(diff, 1.0);
            tape.relu(margin)
        })
        .collect()
}

/// Tape version of the orthogonality penalty.
pub fn orthogonality_penalty(
    tape: &mut Tape,
    aspects: TensorId,
) -> Result<TensorId, TensorError> {
    let k = tape.shape(aspects)[0];
    let normed = tape.row_normalize(aspects)?;
    let gram = tape.matmul_tb(normed, normed);
    let mut eye = vec![0.0; k * k];
    for i in 0..k {
        eye[i * k + i] = 1.0;
    }
    let identity = tape.leaf_values(eye, vec![k, k]);
    let diff = tape.sub(gram, identity);
    let sq = tape.mul(diff, diff);
    let total = tape.sum(sq);
    Ok(tape.sqrt(total))
}

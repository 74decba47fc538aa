//! Aspect-level feature extraction.
//!
//! A news article's token sequence (title, abstract, category names) is
//! attended against its own mean embedding through a bilinear map, producing
//! the attended embedding z_d. A softmax head turns z_d into aspect
//! probabilities p, and the reconstruction r_d = Aᵀ·p expresses the news as
//! a convex combination of aspect embeddings. A is initialized with k-means
//! centroids of the news mean embeddings.

use thiserror::Error;

use crate::config::InputViews;
use crate::corpus::{NewsRecord, Vocabulary};
use crate::init::stream_rng;
use crate::tensor::{Tape, Tensor, TensorError, TensorId};
use rand::Rng;

/// Token ids feeding the aspect extractor: non-padding title tokens, then
/// abstract tokens, then category and subcategory name tokens, honoring the
/// enabled input views. May be empty for content-free news.
pub fn aspect_word_sequence(record: &NewsRecord, views: &InputViews) -> Vec<usize> {
    let mut seq = Vec::new();
    let push_real = |seq: &mut Vec<usize>, tokens: &[u32]| {
        seq.extend(tokens.iter().filter(|&&t| t != 0).map(|&t| t as usize));
    };
    if views.title {
        push_real(&mut seq, &record.title_tokens);
    }
    if views.abstract_text {
        push_real(&mut seq, &record.abstract_tokens);
    }
    if views.category {
        push_real(&mut seq, &record.category_tokens);
        push_real(&mut seq, &record.subcategory_tokens);
    }
    seq
}

/// Attention over the token matrix [n, D] against its own mean:
/// `y = mean(rows)`, `h_i = e_iᵀ·H·y`, `α' = softmax(h)`, `z_d = Σ α'_i e_i`.
/// Returns `(y, α', z_d)`.
pub fn attend(
    tape: &mut Tape,
    tokens: TensorId,
    bilinear: TensorId,
) -> Result<(TensorId, TensorId, TensorId), TensorError> {
    let shape = tape.shape(tokens);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(TensorError::Empty { op: "aspect_attend" });
    }
    let mean = tape.mean_rows(tokens);
    let mapped = tape.matvec(bilinear, mean);
    let scores = tape.matvec(tokens, mapped);
    let weights = tape.softmax(scores)?;
    let attended = tape.vecmat(weights, tokens);
    Ok((mean, weights, attended))
}

/// Aspect probabilities and reconstruction:
/// `p = softmax(W_p·z_d + b)`, `r_d = Aᵀ·p`.
pub fn reconstruct(
    tape: &mut Tape,
    attended: TensorId,
    proj: TensorId,
    proj_bias: TensorId,
    aspects: TensorId,
) -> Result<(TensorId, TensorId), TensorError> {
    let logits = tape.matvec(proj, attended);
    let logits = tape.add(logits, proj_bias);
    let probs = tape.softmax(logits)?;
    let reconstruction = tape.vecmat(probs, aspects);
    Ok((probs, reconstruction))
}

#[derive(Debug, Error)]
pub enum KmeansError {
    #[error("k-means needs at least {k} distinct vectors, got {distinct}")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("k-means needs nonempty input vectors")]
    Empty,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Runs at most `max_iters`
/// iterations or until the largest centroid shift drops below `tol`.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<Vec<Vec<f64>>, KmeansError> {
    if points.is_empty() || points[0].is_empty() {
        return Err(KmeansError::Empty);
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| q.as_slice() == p.as_slice()) {
            distinct.push(p);
        }
        if distinct.len() > k {
            break;
        }
    }
    if distinct.len() < k {
        return Err(KmeansError::TooFewDistinct { k, distinct: distinct.len() });
    }

    let mut rng = stream_rng(seed, "kmeans");
    let dim = points[0].len();

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut min_d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass on existing centroids; pick any point not
            // yet chosen (distinct count ≥ k guarantees one exists).
            points
                .iter()
                .find(|p| !centroids.iter().any(|c| c.as_slice() == p.as_slice()))
                .expect("a distinct point must remain")
                .clone()
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d2) in min_d2.iter().enumerate() {
                target -= d2;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            points[chosen].clone()
        };
        for (d2, p) in min_d2.iter_mut().zip(points) {
            *d2 = d2.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }

    // Lloyd iterations.
    let mut assignment = vec![0usize; points.len()];
    for _ in 0..max_iters {
        for (a, p) in assignment.iter_mut().zip(points) {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (ci, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            *a = best;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        // Empty clusters grab the point farthest from its current centroid.
        for ci in 0..k {
            if counts[ci] > 0 {
                continue;
            }
            let far = assignment
                .iter()
                .zip(points)
                .enumerate()
                .max_by(|(_, (&a, p)), (_, (&b, q))| {
                    sq_dist(p, &centroids[a])
                        .partial_cmp(&sq_dist(q, &centroids[b]))
                        .unwrap()
                })
                .map(|(i, _)| i)
                .expect("points is nonempty");
            let old = assignment[far];
            counts[old] -= 1;
            for (s, &x) in sums[old].iter_mut().zip(&points[far]) {
                *s -= x;
            }
            assignment[far] = ci;
            counts[ci] = 1;
            sums[ci] = points[far].clone();
        }

        let mut shift = 0.0f64;
        for ci in 0..k {
            let inv = 1.0 / counts[ci] as f64;
            let new: Vec<f64> = sums[ci].iter().map(|&s| s * inv).collect();
            shift = shift.max(sq_dist(&new, &centroids[ci]).sqrt());
            centroids[ci] = new;
        }
        if shift < tol {
            break;
        }
    }
    Ok(centroids)
}

/// Aspect matrix from k-means centroids of news mean embeddings.
pub fn init_aspect_matrix(
    mean_embeddings: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<Tensor, KmeansError> {
    let centroids = kmeans(mean_embeddings, k, seed, 100, 1e-4)?;
    let dim = centroids[0].len();
    let values: Vec<f64> = centroids.into_iter().flatten().collect();
    Ok(Tensor::matrix(k, dim, values))
}

/// Top-n vocabulary words by cosine similarity to each aspect row,
/// excluding padding and the unknown token. Ties break on vocabulary id.
pub fn aspect_top_words(
    aspects: &Tensor,
    word_emb: &Tensor,
    vocab: &Vocabulary,
    n: usize,
) -> Vec<Vec<(String, f64)>> {
    let k = aspects.shape()[0];
    let dim = aspects.shape()[1];
    assert_eq!(word_emb.shape()[1], dim, "embedding dim mismatch");
    let v = word_emb.shape()[0].min(vocab.len());

    let norms: Vec<f64> = (0..v)
        .map(|i| word_emb.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    (0..k)
        .map(|ai| {
            let a = aspects.row(ai);
            let a_norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut scored: Vec<(u32, f64)> = (2..v)
                .map(|wi| {
                    let denom = a_norm * norms[wi];
                    let cos = if denom > 0.0 {
                        a.iter().zip(word_emb.row(wi)).map(|(&x, &y)| x * y).sum::<f64>() / denom
                    } else {
                        0.0
                    };
                    (wi as u32, cos)
                })
                .collect();
            scored.sort_by(|x, y| {
                y.1.partial_cmp(&x.1).unwrap().then_with(|| x.0.cmp(&y.0))
            });
            scored
                .into_iter()
                .take(n)
                .map(|(id, sim)| (vocab.word(id).to_string(), sim))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::normal;

    #[test]
    fn sequence_counts_real_tokens_in_order() {
        let rec = NewsRecord {
            news_id: "N".into(),
            category: 1,
            subcategory: 1,
            title_tokens: vec![5, 6, 7, 0, 0],
            abstract_tokens: vec![0, 0],
            category_tokens: vec![9],
            subcategory_tokens: vec![],
        };
        let seq = aspect_word_sequence(&rec, &InputViews::all());
        assert_eq!(seq, vec![5, 6, 7, 9]);

        let rec_empty = NewsRecord {
            title_tokens: vec![0],
            abstract_tokens: vec![],
            category_tokens: vec![],
            subcategory_tokens: vec![],
            ..rec
        };
        assert!(aspect_word_sequence(&rec_empty, &InputViews::all()).is_empty());
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut tape = Tape::new();
        let tokens = tape.leaf_values(vec![0.5, -1.0, 2.0], vec![1, 3]);
        let bilinear = tape.leaf_values(vec![0.3; 9], vec![3, 3]);
        let (mean, weights, attended) = attend(&mut tape, tokens, bilinear).unwrap();
        assert_eq!(tape.values(weights), &[1.0]);
        assert_eq!(tape.values(attended), &[0.5, -1.0, 2.0]);
        assert_eq!(tape.values(mean), tape.values(attended));
    }

    #[test]
    fn zero_bilinear_gives_uniform_attention() {
        let mut tape = Tape::new();
        let tokens = tape.leaf_values(vec![1.0, 0.0, 3.0, 2.0], vec![2, 2]);
        let bilinear = tape.leaf_values(vec![0.0; 4], vec![2, 2]);
        let (mean, weights, attended) = attend(&mut tape, tokens, bilinear).unwrap();
        assert_eq!(tape.values(weights), &[0.5, 0.5]);
        assert_eq!(tape.values(attended), tape.values(mean));
        assert_eq!(tape.values(attended), &[2.0, 1.0]);
    }

    #[test]
    fn attend_matches_direct_formula() {
        let mut rng = stream_rng(3, "attend-oracle");
        let (n, d) = (3, 4);
        let toks: Vec<f64> = (0..n * d).map(|_| normal(&mut rng, 0.8)).collect();
        let h: Vec<f64> = (0..d * d).map(|_| normal(&mut rng, 0.8)).collect();

        // Direct evaluation.
        let mut y = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                y[j] += toks[i * d + j] / n as f64;
            }
        }
        let mut hy = vec![0.0; d];
        for r in 0..d {
            for c in 0..d {
                hy[r] += h[r * d + c] * y[c];
            }
        }
        let scores: Vec<f64> =
            (0..n).map(|i| (0..d).map(|j| toks[i * d + j] * hy[j]).sum()).collect();
        let exps: Vec<f64> = scores.iter().map(|&s| s.exp()).collect();
        let z: f64 = exps.iter().sum();
        let alphas: Vec<f64> = exps.iter().map(|&e| e / z).collect();
        let mut expected = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                expected[j] += alphas[i] * toks[i * d + j];
            }
        }

        let mut tape = Tape::new();
        let tokens = tape.leaf_values(toks, vec![n, d]);
        let bilinear = tape.leaf_values(h, vec![d, d]);
        let (_, weights, attended) = attend(&mut tape, tokens, bilinear).unwrap();
        for (a, e) in tape.values(weights).iter().zip(&alphas) {
            assert!((a - e).abs() < 1e-9);
        }
        for (a, e) in tape.values(attended).iter().zip(&expected) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn single_aspect_reconstructs_that_row() {
        let mut tape = Tape::new();
        let attended = tape.leaf_values(vec![0.2, 0.4], vec![2]);
        let proj = tape.leaf_values(vec![1.0, -1.0], vec![1, 2]);
        let bias = tape.leaf_values(vec![0.0], vec![1]);
        let aspects = tape.leaf_values(vec![7.0, -3.0], vec![1, 2]);
        let (probs, recon) = reconstruct(&mut tape, attended, proj, bias, aspects).unwrap();
        assert_eq!(tape.values(probs), &[1.0]);
        assert_eq!(tape.values(recon), &[7.0, -3.0]);
    }

    #[test]
    fn identical_aspect_rows_make_reconstruction_constant() {
        let mut tape = Tape::new();
        let attended = tape.leaf_values(vec![0.9, -0.6, 0.1], vec![3]);
        let proj = tape.leaf_values(vec![0.4, 0.0, 1.0, -0.2, 0.5, 0.3], vec![2, 3]);
        let bias = tape.leaf_values(vec![0.1, -0.1], vec![2]);
        let aspects = tape.leaf_values(vec![1.5, 0.5, -2.0, 1.5, 0.5, -2.0], vec![2, 3]);
        let (_, recon) = reconstruct(&mut tape, attended, proj, bias, aspects).unwrap();
        for (got, want) in tape.values(recon).iter().zip(&[1.5, 0.5, -2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruct_matches_direct_formula() {
        let mut rng = stream_rng(8, "recon-oracle");
        let (k, d) = (3, 4);
        let z: Vec<f64> = (0..d).map(|_| normal(&mut rng, 1.0)).collect();
        let wp: Vec<f64> = (0..k * d).map(|_| normal(&mut rng, 1.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| normal(&mut rng, 1.0)).collect();
        let a: Vec<f64> = (0..k * d).map(|_| normal(&mut rng, 1.0)).collect();

        let logits: Vec<f64> = (0..k)
            .map(|r| (0..d).map(|c| wp[r * d + c] * z[c]).sum::<f64>() + b[r])
            .collect();
        let exps: Vec<f64> = logits.iter().map(|&x| x.exp()).collect();
        let total: f64 = exps.iter().sum();
        let p: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        let mut rd = vec![0.0; d];
        for r in 0..k {
            for c in 0..d {
                rd[c] += p[r] * a[r * d + c];
            }
        }

        let mut tape = Tape::new();
        let zi = tape.leaf_values(z, vec![d]);
        let wpi = tape.leaf_values(wp, vec![k, d]);
        let bi = tape.leaf_values(b, vec![k]);
        let ai = tape.leaf_values(a, vec![k, d]);
        let (probs, recon) = reconstruct(&mut tape, zi, wpi, bi, ai).unwrap();
        for (got, want) in tape.values(probs).iter().zip(&p) {
            assert!((got - want).abs() < 1e-9);
        }
        for (got, want) in tape.values(recon).iter().zip(&rd) {
            assert!((got - want).abs() < 1e-9);
        }
        let sum: f64 = tape.values(probs).iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kmeans_fixed_point_on_exact_k_points() {
        let points = vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![-3.0, 4.0]];
        let mut centroids = kmeans(&points, 3, 1, 100, 1e-4).unwrap();
        centroids.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(centroids, vec![vec![-3.0, 4.0], vec![0.0, 0.0], vec![5.0, 5.0]]);
    }

    #[test]
    fn kmeans_recovers_two_blobs() {
        let mut rng = stream_rng(4, "blobs");
        let mut points = Vec::new();
        for _ in 0..60 {
            points.push(vec![2.0 + normal(&mut rng, 0.05), normal(&mut rng, 0.05)]);
        }
        for _ in 0..60 {
            points.push(vec![-2.0 + normal(&mut rng, 0.05), normal(&mut rng, 0.05)]);
        }
        let mut centroids = kmeans(&points, 2, 9, 100, 1e-4).unwrap();
        centroids.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((centroids[0][0] + 2.0).abs() < 0.1, "centroid {:?}", centroids[0]);
        assert!((centroids[1][0] - 2.0).abs() < 0.1, "centroid {:?}", centroids[1]);
    }

    #[test]
    fn kmeans_rejects_too_few_distinct_points() {
        let points = vec![vec![1.0, 1.0]; 10];
        assert!(matches!(
            kmeans(&points, 2, 1, 10, 1e-4),
            Err(KmeansError::TooFewDistinct { k: 2, distinct: 1 })
        ));
    }

    #[test]
    fn top_words_rank_exact_match_first() {
        let vocab = Vocabulary::from_words(vec![
            "<pad>".into(),
            "<unk>".into(),
            "storm".into(),
            "sunny".into(),
            "rain".into(),
        ]);
        let word_emb = Tensor::matrix(
            5,
            2,
            vec![0.0, 0.0, 0.3, 0.3, 1.0, 0.0, 0.0, 1.0, 0.9, 0.1],
        );
        let aspects = Tensor::matrix(1, 2, vec![1.0, 0.0]);
        let top = aspect_top_words(&aspects, &word_emb, &vocab, 2);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0][0].0, "storm");
        assert!((top[0][0].1 - 1.0).abs() < 1e-12);
        assert_eq!(top[0][1].0, "rain");
    }

    #[test]
    fn duplicate_embeddings_tie_break_by_id() {
        let vocab = Vocabulary::from_words(vec![
            "<pad>".into(),
            "<unk>".into(),
            "first".into(),
            "second".into(),
        ]);
        let word_emb = Tensor::matrix(4, 2, vec![0.0, 0.0, 0.1, 0.1, 2.0, 0.0, 2.0, 0.0]);
        let aspects = Tensor::matrix(1, 2, vec![1.0, 0.0]);
        let top = aspect_top_words(&aspects, &word_emb, &vocab, 2);
        assert_eq!(top[0][0].0, "first");
        assert_eq!(top[0][1].0, "second");
    }
}

//! User encoding: news-level additive attention over the browsed-news
//! representations, sharing the news encoder end to end with the candidate
//! path. An empty history yields the zero vector, so cold users score every
//! candidate 0 and ties resolve by candidate order.

use super::{BoundModel, ModelParams};
use crate::tensor::{Tape, TensorError, TensorId};

/// Pool browsed-news vectors into the user representation u.
/// Returns `(attention weights, u)`; no weights for an empty history.
pub fn encode_user(
    tape: &mut Tape,
    bound: &BoundModel,
    params: &ModelParams,
    browsed: &[TensorId],
) -> Result<(Option<TensorId>, TensorId), TensorError> {
    let dim = params.dims.news_dim();
    if browsed.is_empty() {
        return Ok((None, tape.leaf_values(vec![0.0; dim], vec![dim])));
    }
    let stacked = tape.stack_rows(browsed);
    let query = bound.id("user.query");
    let proj = bound.id("user.proj");
    let bias = bound.id("user.bias");
    let (weights, pooled) = tape.additive_attention_pool(stacked, query, proj, bias)?;
    Ok((Some(weights), pooled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::corpus::EmbeddingTable;
    use crate::init::stream_rng;
    use crate::model::{bind, ModelDims, ModelParams};
    use crate::tensor::Tensor;

    fn params() -> ModelParams {
        let cfg = Config {
            embedding_dim: 2,
            cnn_filters: 2,
            window: 3,
            category_dim: 2,
            attention_hidden: 2,
            aspect_count: 2,
            dropout: 0.0,
            ..Config::default()
        };
        let dims = ModelDims::from_config(&cfg, 4, 2, 2);
        let table =
            EmbeddingTable { table: Tensor::matrix(4, 2, vec![0.0; 8]), trainable: true };
        ModelParams::init(dims, &table, &mut stream_rng(2, "u"))
    }

    #[test]
    fn empty_history_is_zero_vector() {
        let p = params();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let (w, u) = encode_user(&mut tape, &bound, &p, &[]).unwrap();
        assert!(w.is_none());
        assert_eq!(tape.numel(u), p.dims.news_dim());
        assert!(tape.values(u).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_item_history_passes_through() {
        let p = params();
        let dim = p.dims.news_dim();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let v: Vec<f64> = (0..dim).map(|i| i as f64 * 0.25 - 0.5).collect();
        let row = tape.leaf_values(v.clone(), vec![dim]);
        let (w, u) = encode_user(&mut tape, &bound, &p, &[row]).unwrap();
        assert_eq!(tape.values(w.unwrap()), &[1.0]);
        assert_eq!(tape.values(u), v.as_slice());
    }

    #[test]
    fn user_vector_is_permutation_invariant() {
        let p = params();
        let dim = p.dims.news_dim();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..dim).map(|i| ((r * dim + i) as f64).sin()).collect())
            .collect();
        let run = |order: &[usize]| -> Vec<f64> {
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &p);
            let ids: Vec<_> = order
                .iter()
                .map(|&i| tape.leaf_values(rows[i].clone(), vec![dim]))
                .collect();
            let (_, u) = encode_user(&mut tape, &bound, &p, &ids).unwrap();
            tape.values(u).to_vec()
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

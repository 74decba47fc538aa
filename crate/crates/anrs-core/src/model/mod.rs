//! The two-level recommendation model: a multi-view news encoder, an
//! aspect-level feature extractor and an attention-pooled user encoder.

pub mod aspect;
pub mod news;
pub mod user;

pub use aspect::{aspect_top_words, init_aspect_matrix, kmeans};
pub use news::{encode_news, AspectForward, NewsForward};
pub use user::encode_user;

use rand::Rng;

use crate::config::{Config, InputViews};
use crate::corpus::{EmbeddingTable, NewsRecord};
use crate::init::glorot_vec;
use crate::tensor::{Tape, Tensor, TensorError, TensorId};

/// Dimension and variant switches frozen at model construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub cnn_filters: usize,
    pub window: usize,
    pub category_dim: usize,
    pub attention_hidden: usize,
    pub aspect_count: usize,
    pub n_categories: usize,
    pub n_subcategories: usize,
    pub views: InputViews,
    pub aspects_enabled: bool,
    pub dropout: f64,
}

impl ModelDims {
    pub fn from_config(
        cfg: &Config,
        vocab_size: usize,
        n_categories: usize,
        n_subcategories: usize,
    ) -> Self {
        ModelDims {
            vocab_size,
            embedding_dim: cfg.embedding_dim,
            cnn_filters: cfg.cnn_filters,
            window: cfg.window,
            category_dim: cfg.category_dim,
            attention_hidden: cfg.attention_hidden,
            aspect_count: cfg.aspect_count,
            n_categories,
            n_subcategories,
            views: cfg.input_views,
            aspects_enabled: cfg.aspects_enabled,
            dropout: cfg.dropout,
        }
    }

    /// Width of the fused multi-view vector r (enabled blocks only).
    pub fn fused_dim(&self) -> usize {
        let mut d = 0;
        if self.views.title {
            d += self.cnn_filters;
        }
        if self.views.abstract_text {
            d += self.cnn_filters;
        }
        if self.views.category {
            d += 2 * self.category_dim;
        }
        d
    }

    /// Width of the final news representation n (and of u).
    pub fn news_dim(&self) -> usize {
        self.fused_dim() + if self.aspects_enabled { self.embedding_dim } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query: Tensor,
    pub proj: Tensor,
    pub bias: Tensor,
}

impl AttentionParams {
    fn init<R: Rng>(rng: &mut R, hidden: usize, input_dim: usize) -> Self {
        AttentionParams {
            query: Tensor::new(vec![hidden], glorot_vec(rng, hidden, 1, hidden)),
            proj: Tensor::new(vec![hidden, input_dim], glorot_vec(rng, input_dim, hidden, hidden * input_dim)),
            bias: Tensor::zeros(vec![hidden]),
        }
    }
}

/// CNN plus word attention for one text channel (title or abstract).
#[derive(Clone, Debug)]
pub struct TextChannelParams {
    pub kernel: Tensor,
    pub kernel_bias: Tensor,
    pub attention: AttentionParams,
}

impl TextChannelParams {
    fn init<R: Rng>(rng: &mut R, dims: &ModelDims) -> Self {
        let (f, w, d) = (dims.cnn_filters, dims.window, dims.embedding_dim);
        TextChannelParams {
            kernel: Tensor::new(vec![f, w, d], glorot_vec(rng, w * d, f, f * w * d)),
            kernel_bias: Tensor::zeros(vec![f]),
            attention: AttentionParams::init(rng, dims.attention_hidden, f),
        }
    }
}

/// Embedding plus ReLU dense layer for one categorical channel.
#[derive(Clone, Debug)]
pub struct CategoryChannelParams {
    pub embedding: Tensor,
    pub proj: Tensor,
    pub bias: Tensor,
}

impl CategoryChannelParams {
    fn init<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> Self {
        CategoryChannelParams {
            embedding: Tensor::new(vec![rows, dim], crate::init::normal_vec(rng, rows * dim, 0.1)),
            proj: Tensor::new(vec![dim, dim], glorot_vec(rng, dim, dim, dim * dim)),
            bias: Tensor::zeros(vec![dim]),
        }
    }
}

/// Scoring parameters for view-level attention: one shared query and bias
/// over a common hidden space, with a per-view input projection.
#[derive(Clone, Debug)]
pub struct ViewFusionParams {
    pub query: Tensor,
    pub bias: Tensor,
    pub title_proj: Option<Tensor>,
    pub abstract_proj: Option<Tensor>,
    pub category_proj: Option<Tensor>,
    pub subcategory_proj: Option<Tensor>,
}

/// Aspect extractor parameters: bilinear attention map H, aspect-probability
/// projection (W_p, b) and the aspect embedding matrix A.
#[derive(Clone, Debug)]
pub struct AspectParams {
    pub bilinear: Tensor,
    pub proj: Tensor,
    pub proj_bias: Tensor,
    pub aspects: Tensor,
}

/// Every learnable tensor in the model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub word_emb: Tensor,
    pub title: Option<TextChannelParams>,
    pub abstract_channel: Option<TextChannelParams>,
    pub category: Option<CategoryChannelParams>,
    pub subcategory: Option<CategoryChannelParams>,
    pub view_fusion: ViewFusionParams,
    pub aspect: Option<AspectParams>,
    pub user_attention: AttentionParams,
}

impl ModelParams {
    /// Fresh parameters: word embeddings copied from the pretrained table,
    /// weights Glorot-initialized, biases zero. The aspect matrix starts as
    /// small noise; real runs overwrite it via k-means (see
    /// [`aspect::init_aspect_matrix`]).
    pub fn init<R: Rng>(dims: ModelDims, embeddings: &EmbeddingTable, rng: &mut R) -> Self {
        assert_eq!(embeddings.vocab_size(), dims.vocab_size, "embedding rows vs vocab");
        assert_eq!(embeddings.dim(), dims.embedding_dim, "embedding dim");
        let h = dims.attention_hidden;
        let mk_view_proj = |rng: &mut R, enabled: bool, in_dim: usize| -> Option<Tensor> {
            enabled
                .then(|| Tensor::new(vec![h, in_dim], glorot_vec(rng, in_dim, h, h * in_dim)))
        };

        let title = dims.views.title.then(|| TextChannelParams::init(rng, &dims));
        let abstract_channel =
            dims.views.abstract_text.then(|| TextChannelParams::init(rng, &dims));
        let (category, subcategory) = if dims.views.category {
            (
                Some(CategoryChannelParams::init(rng, dims.n_categories, dims.category_dim)),
                Some(CategoryChannelParams::init(rng, dims.n_subcategories, dims.category_dim)),
            )
        } else {
            (None, None)
        };
        let view_fusion = ViewFusionParams {
            query: Tensor::new(vec![h], glorot_vec(rng, h, 1, h)),
            bias: Tensor::zeros(vec![h]),
            title_proj: mk_view_proj(rng, dims.views.title, dims.cnn_filters),
            abstract_proj: mk_view_proj(rng, dims.views.abstract_text, dims.cnn_filters),
            category_proj: mk_view_proj(rng, dims.views.category, dims.category_dim),
            subcategory_proj: mk_view_proj(rng, dims.views.category, dims.category_dim),
        };
        let aspect = dims.aspects_enabled.then(|| {
            let (k, d) = (dims.aspect_count, dims.embedding_dim);
            AspectParams {
                bilinear: Tensor::new(vec![d, d], glorot_vec(rng, d, d, d * d)),
                proj: Tensor::new(vec![k, d], glorot_vec(rng, d, k, k * d)),
                proj_bias: Tensor::zeros(vec![k]),
                aspects: Tensor::new(vec![k, d], crate::init::normal_vec(rng, k * d, 0.1)),
            }
        });
        let user_attention = AttentionParams::init(rng, h, dims.news_dim());

        ModelParams {
            dims,
            word_emb: embeddings.table.clone(),
            title,
            abstract_channel,
            category,
            subcategory,
            view_fusion,
            aspect,
            user_attention,
        }
    }

    /// All parameters in a fixed order, as `(name, tensor)`.
    pub fn visit(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("word_emb".into(), &self.word_emb));
        fn push_attn<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, a: &'a AttentionParams) {
            out.push((format!("{prefix}.query"), &a.query));
            out.push((format!("{prefix}.proj"), &a.proj));
            out.push((format!("{prefix}.bias"), &a.bias));
        }
        fn push_text<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, t: &'a TextChannelParams) {
            out.push((format!("{prefix}.kernel"), &t.kernel));
            out.push((format!("{prefix}.kernel_bias"), &t.kernel_bias));
            push_attn(out, &format!("{prefix}.attn"), &t.attention);
        }
        fn push_cat<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, c: &'a CategoryChannelParams) {
            out.push((format!("{prefix}.embedding"), &c.embedding));
            out.push((format!("{prefix}.proj"), &c.proj));
            out.push((format!("{prefix}.bias"), &c.bias));
        }
        if let Some(t) = &self.title {
            push_text(&mut out, "title", t);
        }
        if let Some(t) = &self.abstract_channel {
            push_text(&mut out, "abstract", t);
        }
        if let Some(c) = &self.category {
            push_cat(&mut out, "category", c);
        }
        if let Some(c) = &self.subcategory {
            push_cat(&mut out, "subcategory", c);
        }
        out.push(("view.query".into(), &self.view_fusion.query));
        out.push(("view.bias".into(), &self.view_fusion.bias));
        if let Some(p) = &self.view_fusion.title_proj {
            out.push(("view.title_proj".into(), p));
        }
        if let Some(p) = &self.view_fusion.abstract_proj {
            out.push(("view.abstract_proj".into(), p));
        }
        if let Some(p) = &self.view_fusion.category_proj {
            out.push(("view.category_proj".into(), p));
        }
        if let Some(p) = &self.view_fusion.subcategory_proj {
            out.push(("view.subcategory_proj".into(), p));
        }
        if let Some(a) = &self.aspect {
            out.push(("aspect.bilinear".into(), &a.bilinear));
            out.push(("aspect.proj".into(), &a.proj));
            out.push(("aspect.proj_bias".into(), &a.proj_bias));
            out.push(("aspect.aspects".into(), &a.aspects));
        }
        push_attn(&mut out, "user", &self.user_attention);
        out
    }

    /// Mutable variant of [`ModelParams::visit`], same order.
    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("word_emb".into(), &mut self.word_emb));
        fn push_attn<'a>(
            out: &mut Vec<(String, &'a mut Tensor)>,
            prefix: &str,
            a: &'a mut AttentionParams,
        ) {
            out.push((format!("{prefix}.query"), &mut a.query));
            out.push((format!("{prefix}.proj"), &mut a.proj));
            out.push((format!("{prefix}.bias"), &mut a.bias));
        }
        fn push_text<'a>(
            out: &mut Vec<(String, &'a mut Tensor)>,
            prefix: &str,
            t: &'a mut TextChannelParams,
        ) {
            out.push((format!("{prefix}.kernel"), &mut t.kernel));
            out.push((format!("{prefix}.kernel_bias"), &mut t.kernel_bias));
            push_attn(out, &format!("{prefix}.attn"), &mut t.attention);
        }
        fn push_cat<'a>(
            out: &mut Vec<(String, &'a mut Tensor)>,
            prefix: &str,
            c: &'a mut CategoryChannelParams,
        ) {
            out.push((format!("{prefix}.embedding"), &mut c.embedding));
            out.push((format!("{prefix}.proj"), &mut c.proj));
            out.push((format!("{prefix}.bias"), &mut c.bias));
        }
        if let Some(t) = &mut self.title {
            push_text(&mut out, "title", t);
        }
        if let Some(t) = &mut self.abstract_channel {
            push_text(&mut out, "abstract", t);
        }
        if let Some(c) = &mut self.category {
            push_cat(&mut out, "category", c);
        }
        if let Some(c) = &mut self.subcategory {
            push_cat(&mut out, "subcategory", c);
        }
        out.push(("view.query".into(), &mut self.view_fusion.query));
        out.push(("view.bias".into(), &mut self.view_fusion.bias));
        if let Some(p) = &mut self.view_fusion.title_proj {
            out.push(("view.title_proj".into(), p));
        }
        if let Some(p) = &mut self.view_fusion.abstract_proj {
            out.push(("view.abstract_proj".into(), p));
        }
        if let Some(p) = &mut self.view_fusion.category_proj {
            out.push(("view.category_proj".into(), p));
        }
        if let Some(p) = &mut self.view_fusion.subcategory_proj {
            out.push(("view.subcategory_proj".into(), p));
        }
        if let Some(a) = &mut self.aspect {
            out.push(("aspect.bilinear".into(), &mut a.bilinear));
            out.push(("aspect.proj".into(), &mut a.proj));
            out.push(("aspect.proj_bias".into(), &mut a.proj_bias));
            out.push(("aspect.aspects".into(), &mut a.aspects));
        }
        push_attn(&mut out, "user", &mut self.user_attention);
        out
    }

    pub fn total_parameters(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Tape ids of every bound parameter, in [`ModelParams::visit`] order.
pub struct BoundModel {
    pub ids: Vec<(String, TensorId)>,
    pub word_emb: TensorId,
}

/// Register all parameters on a tape.
pub fn bind(tape: &mut Tape, params: &ModelParams) -> BoundModel {
    let mut ids = Vec::new();
    for (name, tensor) in params.visit() {
        ids.push((name, tape.param(tensor)));
    }
    let word_emb = ids[0].1;
    BoundModel { ids, word_emb }
}

impl BoundModel {
    pub fn id(&self, name: &str) -> TensorId {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .unwrap_or_else(|| panic!("no bound parameter named {name}"))
    }

    pub fn maybe_id(&self, name: &str) -> Option<TensorId> {
        self.ids.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }
}

/// Copy gradients off the tape into `params` (zeros where no gradient
/// reached a parameter).
pub fn harvest_gradients(tape: &Tape, bound: &BoundModel, params: &mut ModelParams) {
    let targets = params.visit_mut();
    assert_eq!(targets.len(), bound.ids.len(), "binding/parameter mismatch");
    for ((name, tensor), (bound_name, id)) in targets.into_iter().zip(&bound.ids) {
        debug_assert_eq!(&name, bound_name);
        match tape.grad(*id) {
            Some(g) => tensor.set_grad(g.to_vec()),
            None => tensor.set_grad(vec![0.0; tensor.numel()]),
        }
    }
}

/// A news representation captured as plain values for evaluation.
#[derive(Clone, Debug)]
pub struct EncodedNews {
    pub n: Vec<f64>,
    /// Mean token embedding (aspect input), present when aspects run.
    pub mean: Option<Vec<f64>>,
}

/// Forward-only encoding of one news article (no dropout, fresh tape).
pub fn encode_news_values(
    params: &ModelParams,
    record: &NewsRecord,
) -> Result<EncodedNews, TensorError> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let fwd = encode_news(&mut tape, &bound, params, record, None)?;
    Ok(EncodedNews {
        n: tape.values(fwd.n).to_vec(),
        mean: fwd.aspect.as_ref().map(|a| tape.values(a.mean).to_vec()),
    })
}

/// Forward-only user vector from encoded history, reusing a caller-provided
/// tape bound to the model (see [`bind`]); the tape is rolled back after.
pub fn encode_user_values(
    tape: &mut Tape,
    bound: &BoundModel,
    params: &ModelParams,
    history: &[&EncodedNews],
) -> Result<Vec<f64>, TensorError> {
    let mark = tape.num_nodes();
    let rows: Vec<TensorId> = history
        .iter()
        .map(|e| tape.leaf_values(e.n.clone(), vec![e.n.len()]))
        .collect();
    let (_, u) = encode_user(tape, bound, params, &rows)?;
    let values = tape.values(u).to_vec();
    tape.truncate(mark);
    Ok(values)
}

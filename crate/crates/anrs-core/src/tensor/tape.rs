//! Reverse-mode gradients via an operation tape.
//!
//! Forward values are computed eagerly as ops are recorded; `backward`
//! replays the record in reverse, accumulating adjoints. A tape is confined
//! to one computation: register leaves, build the graph, call `backward`
//! once on a scalar, read gradients out. Repeated `backward` calls reset
//! accumulators first, so replaying is deterministic.

use rand::Rng;

use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// out[i, :] = table[indices[i], :]
    Gather { table: TensorId, indices: Vec<usize> },
    /// Zero-padded same-length 1-D convolution, no bias or activation.
    /// input [t, d], kernel [f, 2k+1, d] -> [t, f]
    Conv1d { input: TensorId, kernel: TensorId, half_window: usize },
    /// a [n, m] + b [m] broadcast over rows.
    AddRowBroadcast { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: f64 },
    /// out = a * s where s is a scalar node.
    ScaleByScalar { a: TensorId, s: TensorId },
    AddScalar { a: TensorId, #[allow(dead_code)] c: f64 },
    Relu { a: TensorId },
    Tanh { a: TensorId },
    /// a [m, k] · b [k, n] -> [m, n]
    Matmul { a: TensorId, b: TensorId },
    /// a [m, k] · bᵀ, b [n, k] -> [m, n]
    MatmulTransposeB { a: TensorId, b: TensorId },
    /// m [r, c] · v [c] -> [r]
    MatVec { m: TensorId, v: TensorId },
    /// vᵀ [r] · m [r, c] -> [c]
    VecMat { v: TensorId, m: TensorId },
    Dot { a: TensorId, b: TensorId },
    /// Shift-stable softmax over a 1-D vector.
    Softmax { a: TensorId },
    /// Shift-stable log(Σ exp) over a 1-D vector -> scalar.
    LogSumExp { a: TensorId },
    /// Single element of a 1-D vector -> scalar.
    Index { a: TensorId, i: usize },
    /// Inputs flattened and concatenated -> 1-D.
    Concat { inputs: Vec<TensorId> },
    /// n equal-length 1-D vectors stacked -> [n, d].
    StackRows { inputs: Vec<TensorId> },
    /// Mean over rows of [n, d] -> [d].
    MeanRows { a: TensorId },
    /// Sum of all elements -> scalar.
    Sum { a: TensorId },
    /// Scalar square root.
    Sqrt { a: TensorId },
    /// Each row scaled to unit Euclidean norm.
    RowNormalize { a: TensorId },
}

struct Node {
    values: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    op: Op,
}

impl Node {
    fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Record of executed operations with enough structure to replay adjoints.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, values: Vec<f64>, shape: Vec<usize>, op: Op) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node { values, shape, grad: None, op });
        TensorId(self.nodes.len() - 1)
    }

    /// Register a constant or input. The data is snapshotted.
    pub fn leaf(&mut self, t: &Tensor) -> TensorId {
        self.push(t.values().to_vec(), t.shape().to_vec(), Op::Leaf)
    }

    pub fn leaf_values(&mut self, values: Vec<f64>, shape: Vec<usize>) -> TensorId {
        self.push(values, shape, Op::Leaf)
    }

    pub fn scalar(&mut self, x: f64) -> TensorId {
        self.push(vec![x], vec![], Op::Leaf)
    }

    /// Register a trainable parameter. Identical to [`Tape::leaf`]; the
    /// caller keeps the id to read the gradient back after `backward`.
    pub fn param(&mut self, t: &Tensor) -> TensorId {
        self.leaf(t)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Roll the tape back to `len` nodes (from [`Tape::num_nodes`]). Only
    /// valid between complete computations; ids issued past `len` become
    /// invalid. Lets evaluation reuse one tape's parameter bindings across
    /// many small forward passes.
    pub fn truncate(&mut self, len: usize) {
        debug_assert!(len <= self.nodes.len());
        self.nodes.truncate(len);
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].numel()
    }

    pub fn item(&self, id: TensorId) -> f64 {
        assert_eq!(self.nodes[id.0].numel(), 1, "item() on non-scalar node");
        self.nodes[id.0].values[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Snapshot a node into a standalone [`Tensor`] (gradient included if set).
    pub fn tensor(&self, id: TensorId) -> Tensor {
        let n = &self.nodes[id.0];
        let mut t = Tensor::new(n.shape.clone(), n.values.clone());
        if let Some(g) = &n.grad {
            t.set_grad(g.clone());
        }
        t
    }

    // ── op builders ──────────────────────────────────────────────

    pub fn gather(&mut self, table: TensorId, indices: &[usize]) -> TensorId {
        let shape = self.shape(table);
        assert_eq!(shape.len(), 2, "gather: table must be 2-D");
        let (v, d) = (shape[0], shape[1]);
        let tv = &self.nodes[table.0].values;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < v, "gather: index {} out of range {}", i, v);
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        self.push(out, vec![indices.len(), d], Op::Gather { table, indices: indices.to_vec() })
    }

    /// Single row of a 2-D table as a 1-D vector.
    pub fn gather_row(&mut self, table: TensorId, index: usize) -> TensorId {
        let shape = self.shape(table);
        assert_eq!(shape.len(), 2, "gather_row: table must be 2-D");
        let (v, d) = (shape[0], shape[1]);
        assert!(index < v, "gather_row: index {} out of range {}", index, v);
        let row = self.nodes[table.0].values[index * d..(index + 1) * d].to_vec();
        self.push(row, vec![d], Op::Gather { table, indices: vec![index] })
    }

    /// Same-length 1-D convolution with zero padding, bias add and ReLU.
    /// input [t, d], kernel [f, 2k+1, d], bias [f] -> [t, f].
    pub fn conv1d_same(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: TensorId,
    ) -> Result<TensorId, TensorError> {
        let ishape = self.shape(input).to_vec();
        let kshape = self.shape(kernel).to_vec();
        if ishape.len() != 2 || kshape.len() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_same",
                detail: format!("input {:?}, kernel {:?}", ishape, kshape),
            });
        }
        let (t, d) = (ishape[0], ishape[1]);
        let (f, w, kd) = (kshape[0], kshape[1], kshape[2]);
        if kd != d {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_same",
                detail: format!("kernel depth {} vs input dim {}", kd, d),
            });
        }
        if w % 2 == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_same",
                detail: format!("window {} must be odd", w),
            });
        }
        if t == 0 {
            return Err(TensorError::Empty { op: "conv1d_same" });
        }
        if self.shape(bias) != [f] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_same",
                detail: format!("bias {:?} vs {} filters", self.shape(bias), f),
            });
        }
        let k = w / 2;
        let conv = {
            let iv = &self.nodes[input.0].values;
            let kv = &self.nodes[kernel.0].values;
            let mut out = vec![0.0; t * f];
            for i in 0..t {
                for fi in 0..f {
                    let mut acc = 0.0;
                    for j in 0..w {
                        let pos = i as isize + j as isize - k as isize;
                        if pos < 0 || pos >= t as isize {
                            continue;
                        }
                        let pos = pos as usize;
                        let krow = &kv[(fi * w + j) * d..(fi * w + j + 1) * d];
                        let irow = &iv[pos * d..(pos + 1) * d];
                        for c in 0..d {
                            acc += krow[c] * irow[c];
                        }
                    }
                    out[i * f + fi] = acc;
                }
            }
            out
        };
        let pre = self.push(conv, vec![t, f], Op::Conv1d { input, kernel, half_window: k });
        let biased = self.add_row_broadcast(pre, bias);
        Ok(self.relu(biased))
    }

    pub fn add_row_broadcast(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let ash = self.shape(a).to_vec();
        assert_eq!(ash.len(), 2, "add_row_broadcast: a must be 2-D");
        assert_eq!(self.shape(b), [ash[1]], "add_row_broadcast: widths differ");
        let (n, m) = (ash[0], ash[1]);
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(av[i * m + j] + bv[j]);
            }
        }
        self.push(out, vec![n, m], Op::AddRowBroadcast { a, b })
    }

    fn zip_op(&mut self, a: TensorId, b: TensorId, op: Op, f: impl Fn(f64, f64) -> f64) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "elementwise op: shape mismatch");
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, op)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip_op(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip_op(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip_op(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| c * x).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Scale { a, c })
    }

    /// Multiply every element of `a` by the scalar node `s`.
    pub fn scale_by_scalar(&mut self, a: TensorId, s: TensorId) -> TensorId {
        assert_eq!(self.numel(s), 1, "scale_by_scalar: s must be scalar");
        let sv = self.nodes[s.0].values[0];
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| sv * x).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::ScaleByScalar { a, s })
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x + c).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::AddScalar { a, c })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Relu { a })
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Tanh { a })
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(ash.len() == 2 && bsh.len() == 2 && ash[1] == bsh[0], "matmul: {:?}·{:?}", ash, bsh);
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        self.push(out, vec![m, n], Op::Matmul { a, b })
    }

    pub fn matmul_tb(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            ash.len() == 2 && bsh.len() == 2 && ash[1] == bsh[1],
            "matmul_tb: {:?}·{:?}ᵀ",
            ash,
            bsh
        );
        let (m, k, n) = (ash[0], ash[1], bsh[0]);
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += arow[p] * brow[p];
                }
                out[i * n + j] = acc;
            }
        }
        self.push(out, vec![m, n], Op::MatmulTransposeB { a, b })
    }

    pub fn matvec(&mut self, m: TensorId, v: TensorId) -> TensorId {
        let msh = self.shape(m).to_vec();
        assert!(msh.len() == 2 && self.shape(v) == [msh[1]], "matvec: {:?}·{:?}", msh, self.shape(v));
        let (r, c) = (msh[0], msh[1]);
        let mv = &self.nodes[m.0].values;
        let vv = &self.nodes[v.0].values;
        let out: Vec<f64> = (0..r)
            .map(|i| mv[i * c..(i + 1) * c].iter().zip(vv).map(|(&x, &y)| x * y).sum())
            .collect();
        self.push(out, vec![r], Op::MatVec { m, v })
    }

    pub fn vecmat(&mut self, v: TensorId, m: TensorId) -> TensorId {
        let msh = self.shape(m).to_vec();
        assert!(msh.len() == 2 && self.shape(v) == [msh[0]], "vecmat: {:?}·{:?}", self.shape(v), msh);
        let (r, c) = (msh[0], msh[1]);
        let mv = &self.nodes[m.0].values;
        let vv = &self.nodes[v.0].values;
        let mut out = vec![0.0; c];
        for i in 0..r {
            let x = vv[i];
            if x == 0.0 {
                continue;
            }
            let mrow = &mv[i * c..(i + 1) * c];
            for j in 0..c {
                out[j] += x * mrow[j];
            }
        }
        self.push(out, vec![c], Op::VecMat { v, m })
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "dot: shape mismatch");
        let s: f64 =
            self.nodes[a.0].values.iter().zip(&self.nodes[b.0].values).map(|(&x, &y)| x * y).sum();
        self.push(vec![s], vec![], Op::Dot { a, b })
    }

    /// Shift-stable softmax over a 1-D score vector.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let sh = self.shape(a).to_vec();
        if sh.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax",
                detail: format!("expected 1-D scores, got {:?}", sh),
            });
        }
        if sh[0] == 0 {
            return Err(TensorError::Empty { op: "softmax" });
        }
        let xs = &self.nodes[a.0].values;
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
        Ok(self.push(out, sh, Op::Softmax { a }))
    }

    /// Shift-stable `log Σ exp` of a 1-D vector.
    pub fn logsumexp(&mut self, a: TensorId) -> TensorId {
        let sh = self.shape(a).to_vec();
        assert!(sh.len() == 1 && sh[0] > 0, "logsumexp: need nonempty 1-D input");
        let xs = &self.nodes[a.0].values;
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
        self.push(vec![m + s.ln()], vec![], Op::LogSumExp { a })
    }

    pub fn index(&mut self, a: TensorId, i: usize) -> TensorId {
        let sh = self.shape(a).to_vec();
        assert!(sh.len() == 1 && i < sh[0], "index: {} out of {:?}", i, sh);
        let x = self.nodes[a.0].values[i];
        self.push(vec![x], vec![], Op::Index { a, i })
    }

    /// Flatten-and-concatenate into a 1-D vector.
    pub fn concat(&mut self, inputs: &[TensorId]) -> TensorId {
        assert!(!inputs.is_empty(), "concat: no inputs");
        let mut out = Vec::new();
        for &id in inputs {
            out.extend_from_slice(&self.nodes[id.0].values);
        }
        let n = out.len();
        self.push(out, vec![n], Op::Concat { inputs: inputs.to_vec() })
    }

    /// Stack equal-length 1-D vectors into an [n, d] matrix.
    pub fn stack_rows(&mut self, inputs: &[TensorId]) -> TensorId {
        assert!(!inputs.is_empty(), "stack_rows: no inputs");
        let d = self.numel(inputs[0]);
        let mut out = Vec::with_capacity(inputs.len() * d);
        for &id in inputs {
            assert_eq!(self.numel(id), d, "stack_rows: ragged rows");
            out.extend_from_slice(&self.nodes[id.0].values);
        }
        self.push(out, vec![inputs.len(), d], Op::StackRows { inputs: inputs.to_vec() })
    }

    pub fn mean_rows(&mut self, a: TensorId) -> TensorId {
        let sh = self.shape(a).to_vec();
        assert!(sh.len() == 2 && sh[0] > 0, "mean_rows: need nonempty 2-D input");
        let (n, d) = (sh[0], sh[1]);
        let av = &self.nodes[a.0].values;
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += av[i * d + j];
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        self.push(out, vec![d], Op::MeanRows { a })
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].values.iter().sum();
        self.push(vec![s], vec![], Op::Sum { a })
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        assert_eq!(self.numel(a), 1, "sqrt: scalar only");
        let x = self.nodes[a.0].values[0];
        self.push(vec![x.sqrt()], vec![], Op::Sqrt { a })
    }

    /// Scale each row of a 2-D tensor to unit Euclidean norm.
    pub fn row_normalize(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let sh = self.shape(a).to_vec();
        if sh.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "row_normalize",
                detail: format!("expected 2-D, got {:?}", sh),
            });
        }
        let (n, d) = (sh[0], sh[1]);
        let av = &self.nodes[a.0].values;
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = &av[i * d..(i + 1) * d];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(TensorError::ZeroRow { op: "row_normalize", row: i });
            }
            out.extend(row.iter().map(|x| x / norm));
        }
        Ok(self.push(out, sh, Op::RowNormalize { a }))
    }

    /// Word-level additive attention: score each row of `vectors` [n, d] with
    /// `qᵀ·tanh(proj·row + bias)`, softmax the scores and pool the rows.
    /// Returns `(weights [n], pooled [d])`.
    pub fn additive_attention_pool(
        &mut self,
        vectors: TensorId,
        query: TensorId,
        proj: TensorId,
        bias: TensorId,
    ) -> Result<(TensorId, TensorId), TensorError> {
        let vsh = self.shape(vectors).to_vec();
        if vsh.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "additive_attention_pool",
                detail: format!("expected [n, d] vectors, got {:?}", vsh),
            });
        }
        if vsh[0] == 0 {
            return Err(TensorError::Empty { op: "additive_attention_pool" });
        }
        let psh = self.shape(proj).to_vec();
        if psh.len() != 2 || psh[1] != vsh[1] {
            return Err(TensorError::ShapeMismatch {
                op: "additive_attention_pool",
                detail: format!("proj {:?} vs vectors {:?}", psh, vsh),
            });
        }
        if self.shape(query) != [psh[0]] || self.shape(bias) != [psh[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "additive_attention_pool",
                detail: format!(
                    "query {:?} / bias {:?} vs hidden {}",
                    self.shape(query),
                    self.shape(bias),
                    psh[0]
                ),
            });
        }
        let hidden = self.matmul_tb(vectors, proj);
        let hidden = self.add_row_broadcast(hidden, bias);
        let hidden = self.tanh(hidden);
        let scores = self.matvec(hidden, query);
        let weights = self.softmax(scores)?;
        let pooled = self.vecmat(weights, vectors);
        Ok((weights, pooled))
    }

    /// Inverted dropout: multiplies by a mask of `0` or `1/(1-rate)`.
    /// `rate == 0` is the identity.
    pub fn dropout<R: Rng>(&mut self, a: TensorId, rate: f64, rng: &mut R) -> TensorId {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        if rate == 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.numel(a);
        let mask: Vec<f64> =
            (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let shape = self.shape(a).to_vec();
        let mask_id = self.push(mask, shape, Op::Leaf);
        self.mul(a, mask_id)
    }

    /// Smallest |pre-activation| among inputs of all ReLU ops on the tape.
    /// Used by gradient-check harnesses to resample away from kinks.
    pub fn min_abs_relu_input(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for node in &self.nodes {
            if let Op::Relu { a } = node.op {
                for &x in &self.nodes[a.0].values {
                    let m = x.abs();
                    if best.map_or(true, |b| m < b) {
                        best = Some(m);
                    }
                }
            }
        }
        best
    }

    // ── backward ─────────────────────────────────────────────────

    fn acc(&mut self, id: TensorId, delta: &[f64]) {
        let node = &mut self.nodes[id.0];
        debug_assert_eq!(node.numel(), delta.len());
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta.to_vec()),
        }
    }

    /// Populate gradients of every node reachable from `out`.
    ///
    /// `out` must be a scalar produced on this tape. Existing gradients are
    /// cleared first, so calling this twice yields identical results.
    pub fn backward(&mut self, out: TensorId) -> Result<(), TensorError> {
        if self.nodes[out.0].numel() != 1 {
            return Err(TensorError::NonScalarOutput { shape: self.shape(out).to_vec() });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[out.0].grad = Some(vec![1.0]);

        for idx in (0..=out.0).rev() {
            let d_out = match &self.nodes[idx].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Gather { table, indices } => {
                    let d = self.shape(table)[1];
                    let mut dt = vec![0.0; self.numel(table)];
                    for (r, &i) in indices.iter().enumerate() {
                        for c in 0..d {
                            dt[i * d + c] += d_out[r * d + c];
                        }
                    }
                    self.acc(table, &dt);
                }
                Op::Conv1d { input, kernel, half_window: k } => {
                    let (t, d) = (self.shape(input)[0], self.shape(input)[1]);
                    let (f, w) = (self.shape(kernel)[0], self.shape(kernel)[1]);
                    let iv = self.nodes[input.0].values.clone();
                    let kv = self.nodes[kernel.0].values.clone();
                    let mut di = vec![0.0; t * d];
                    let mut dk = vec![0.0; f * w * d];
                    for i in 0..t {
                        for fi in 0..f {
                            let g = d_out[i * f + fi];
                            if g == 0.0 {
                                continue;
                            }
                            for j in 0..w {
                                let pos = i as isize + j as isize - k as isize;
                                if pos < 0 || pos >= t as isize {
                                    continue;
                                }
                                let pos = pos as usize;
                                for c in 0..d {
                                    di[pos * d + c] += g * kv[(fi * w + j) * d + c];
                                    dk[(fi * w + j) * d + c] += g * iv[pos * d + c];
                                }
                            }
                        }
                    }
                    self.acc(input, &di);
                    self.acc(kernel, &dk);
                }
                Op::AddRowBroadcast { a, b } => {
                    let (n, m) = (self.shape(a)[0], self.shape(a)[1]);
                    self.acc(a, &d_out);
                    let mut db = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            db[j] += d_out[i * m + j];
                        }
                    }
                    self.acc(b, &db);
                }
                Op::Add { a, b } => {
                    self.acc(a, &d_out);
                    self.acc(b, &d_out);
                }
                Op::Sub { a, b } => {
                    self.acc(a, &d_out);
                    let neg: Vec<f64> = d_out.iter().map(|x| -x).collect();
                    self.acc(b, &neg);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> =
                        d_out.iter().zip(&self.nodes[b.0].values).map(|(&g, &y)| g * y).collect();
                    let db: Vec<f64> =
                        d_out.iter().zip(&self.nodes[a.0].values).map(|(&g, &x)| g * x).collect();
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::Scale { a, c } => {
                    let da: Vec<f64> = d_out.iter().map(|&g| c * g).collect();
                    self.acc(a, &da);
                }
                Op::ScaleByScalar { a, s } => {
                    let sv = self.nodes[s.0].values[0];
                    let da: Vec<f64> = d_out.iter().map(|&g| sv * g).collect();
                    let ds: f64 =
                        d_out.iter().zip(&self.nodes[a.0].values).map(|(&g, &x)| g * x).sum();
                    self.acc(a, &da);
                    self.acc(s, &[ds]);
                }
                Op::AddScalar { a, .. } => {
                    self.acc(a, &d_out);
                }
                Op::Relu { a } => {
                    let da: Vec<f64> = d_out
                        .iter()
                        .zip(&self.nodes[a.0].values)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    self.acc(a, &da);
                }
                Op::Tanh { a } => {
                    let da: Vec<f64> = d_out
                        .iter()
                        .zip(&self.nodes[idx].values)
                        .map(|(&g, &y)| g * (1.0 - y * y))
                        .collect();
                    self.acc(a, &da);
                }
                Op::Matmul { a, b } => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    let av = self.nodes[a.0].values.clone();
                    let bv = self.nodes[b.0].values.clone();
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += d_out[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    for p in 0..k {
                        for i in 0..m {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += x * d_out[i * n + j];
                            }
                        }
                    }
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::MatmulTransposeB { a, b } => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[0];
                    let av = self.nodes[a.0].values.clone();
                    let bv = self.nodes[b.0].values.clone();
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = d_out[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += g * bv[j * k + p];
                                db[j * k + p] += g * av[i * k + p];
                            }
                        }
                    }
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::MatVec { m, v } => {
                    let (r, c) = (self.shape(m)[0], self.shape(m)[1]);
                    let mv = self.nodes[m.0].values.clone();
                    let vv = self.nodes[v.0].values.clone();
                    let mut dm = vec![0.0; r * c];
                    let mut dv = vec![0.0; c];
                    for i in 0..r {
                        let g = d_out[i];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            dm[i * c + j] += g * vv[j];
                            dv[j] += g * mv[i * c + j];
                        }
                    }
                    self.acc(m, &dm);
                    self.acc(v, &dv);
                }
                Op::VecMat { v, m } => {
                    let (r, c) = (self.shape(m)[0], self.shape(m)[1]);
                    let mv = self.nodes[m.0].values.clone();
                    let vv = self.nodes[v.0].values.clone();
                    let mut dv = vec![0.0; r];
                    let mut dm = vec![0.0; r * c];
                    for i in 0..r {
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += d_out[j] * mv[i * c + j];
                            dm[i * c + j] += vv[i] * d_out[j];
                        }
                        dv[i] = acc;
                    }
                    self.acc(v, &dv);
                    self.acc(m, &dm);
                }
                Op::Dot { a, b } => {
                    let g = d_out[0];
                    let da: Vec<f64> = self.nodes[b.0].values.iter().map(|&y| g * y).collect();
                    let db: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| g * x).collect();
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::Softmax { a } => {
                    let y = self.nodes[idx].values.clone();
                    let dot: f64 = d_out.iter().zip(&y).map(|(&g, &yi)| g * yi).sum();
                    let da: Vec<f64> =
                        d_out.iter().zip(&y).map(|(&g, &yi)| yi * (g - dot)).collect();
                    self.acc(a, &da);
                }
                Op::LogSumExp { a } => {
                    let g = d_out[0];
                    let xs = self.nodes[a.0].values.clone();
                    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let da: Vec<f64> = exps.iter().map(|&e| g * e / sum).collect();
                    self.acc(a, &da);
                }
                Op::Index { a, i } => {
                    let mut da = vec![0.0; self.numel(a)];
                    da[i] = d_out[0];
                    self.acc(a, &da);
                }
                Op::Concat { inputs } => {
                    let mut offset = 0;
                    for &inp in &inputs {
                        let n = self.numel(inp);
                        let slice = d_out[offset..offset + n].to_vec();
                        self.acc(inp, &slice);
                        offset += n;
                    }
                }
                Op::StackRows { inputs } => {
                    let d = self.numel(inputs[0]);
                    for (r, &inp) in inputs.iter().enumerate() {
                        let slice = d_out[r * d..(r + 1) * d].to_vec();
                        self.acc(inp, &slice);
                    }
                }
                Op::MeanRows { a } => {
                    let (n, d) = (self.shape(a)[0], self.shape(a)[1]);
                    let inv = 1.0 / n as f64;
                    let mut da = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..d {
                            da[i * d + j] = d_out[j] * inv;
                        }
                    }
                    self.acc(a, &da);
                }
                Op::Sum { a } => {
                    let g = d_out[0];
                    let da = vec![g; self.numel(a)];
                    self.acc(a, &da);
                }
                Op::Sqrt { a } => {
                    let y = self.nodes[idx].values[0];
                    // Subgradient 0 at the origin keeps orthonormal inputs finite.
                    let da = if y > 1e-12 { vec![d_out[0] / (2.0 * y)] } else { vec![0.0] };
                    self.acc(a, &da);
                }
                Op::RowNormalize { a } => {
                    let (n, d) = (self.shape(a)[0], self.shape(a)[1]);
                    let xv = self.nodes[a.0].values.clone();
                    let yv = self.nodes[idx].values.clone();
                    let mut da = vec![0.0; n * d];
                    for i in 0..n {
                        let x = &xv[i * d..(i + 1) * d];
                        let y = &yv[i * d..(i + 1) * d];
                        let g = &d_out[i * d..(i + 1) * d];
                        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let proj: f64 = y.iter().zip(g).map(|(&yi, &gi)| yi * gi).sum();
                        for j in 0..d {
                            da[i * d + j] = (g[j] - y[j] * proj) / norm;
                        }
                    }
                    self.acc(a, &da);
                }
            }
        }
        Ok(())
    }
}

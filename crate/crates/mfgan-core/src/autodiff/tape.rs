//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Forward ops execute eagerly and record themselves as nodes; `backward`
//! replays the tape in reverse, accumulating gradients for every leaf that
//! was registered as a named parameter. A tape is single-use: one forward
//! graph, one backward pass.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Additive mask constant: masked attention logits are set to this value so
/// their post-softmax weight underflows to zero.
pub const MASK_FILL: f32 = -1e9;

const LAYER_NORM_EPS: f32 = 1e-5;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// Gradients keyed by parameter name. Absent names mean zero gradient.
#[derive(Clone, Debug, Default)]
pub struct GradientSet {
    grads: HashMap<String, Tensor>,
}

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    /// Insert a gradient, accumulating if the name is already present.
    pub fn accumulate(&mut self, name: &str, grad: Tensor) {
        match self.grads.get_mut(name) {
            Some(existing) => {
                debug_assert_eq!(existing.shape(), grad.shape());
                for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *e += *g;
                }
            }
            None => {
                self.grads.insert(name.to_string(), grad);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Names in sorted order (for deterministic reporting).
    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.grads.keys().map(|s| s.as_str()).collect();
        names.sort_unstable();
        names
    }
}

enum Op {
    Leaf,
    Matmul(ValueId, ValueId),
    Transpose(ValueId),
    Add(ValueId, ValueId),
    AddBias(ValueId, ValueId),
    Scale(ValueId, f32),
    Relu(ValueId),
    Dropout(ValueId, Vec<f32>),
    SoftmaxRows(ValueId),
    LogSoftmaxRows(ValueId),
    MaskedFill(ValueId, Vec<bool>),
    Lookup(ValueId, Vec<usize>),
    SliceRows(ValueId, usize, usize),
    ConcatCols(Vec<ValueId>),
    LayerNormRows {
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
        row_stats: Vec<(f32, f32)>, // (mean, inv_std)
    },
    Sigmoid(ValueId),
    LogSigmoid(ValueId),
    SelectEntries(ValueId, Vec<(usize, usize)>),
    Sum(ValueId),
    Mean(ValueId),
    DotConst(ValueId, Vec<f32>),
}

struct Node {
    op: Op,
    value: Tensor,
    param: Option<String>,
    // f64 view of scalar reductions, carried through scalar add/scale so that
    // loss values can be read without the final f32 rounding.
    fscalar: Option<f64>,
}

/// Single-use computation tape.
pub struct Tape {
    nodes: Vec<Node>,
    training: bool,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Tape {
    /// Tape for inference: dropout is the identity.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), training: false, dropout_rng: None }
    }

    /// Tape for training: dropout masks are drawn from a stream seeded here.
    pub fn training(dropout_seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            training: true,
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Inspect a recorded value.
    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value at f64 precision where the producing op tracked one
    /// (reductions and scalar arithmetic on them), else the f32 value widened.
    pub fn scalar_value(&self, id: ValueId) -> f64 {
        let node = &self.nodes[id.0];
        node.fscalar.unwrap_or_else(|| node.value.item() as f64)
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        debug_assert!(value.is_finite(), "non-finite forward value");
        self.nodes.push(Node { op, value, param: None, fscalar: None });
        ValueId(self.nodes.len() - 1)
    }

    fn push_scalar(&mut self, op: Op, value: f64) -> ValueId {
        let id = self.push(op, Tensor::scalar(value as f32));
        self.nodes[id.0].fscalar = Some(value);
        id
    }

    /// Record a constant leaf (no gradient tracked).
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf, value)
    }

    /// Record a named parameter leaf; `backward` will report its gradient.
    pub fn param(&mut self, name: &str, value: &Tensor) -> ValueId {
        let id = self.push(Op::Leaf, value.clone());
        self.nodes[id.0].param = Some(name.to_string());
        id
    }

    /// `A[m×k] · B[k×n]`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = matmul_raw(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        if self.value(x).shape().len() != 2 {
            return Err(Error::shape("transpose expects a matrix"));
        }
        let value = self.value(x).transposed();
        Ok(self.push(Op::Transpose(x), value))
    }

    /// Elementwise sum of two equally-shaped tensors.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "add {:?} + {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let fscalar = match (self.nodes[a.0].fscalar, self.nodes[b.0].fscalar) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        };
        let id = self.push(Op::Add(a, b), value);
        self.nodes[id.0].fscalar = fscalar;
        Ok(id)
    }

    /// `X[m×n] + b[n]` broadcast over rows.
    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.shape() != [tx.cols()] {
            return Err(Error::shape(format!(
                "add_bias {:?} + {:?}",
                tx.shape(),
                tb.shape()
            )));
        }
        let n = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % n])
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::AddBias(x, bias), value))
    }

    /// Multiply every entry by a constant.
    pub fn scale(&mut self, x: ValueId, c: f32) -> ValueId {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let fscalar = self.nodes[x.0].fscalar.map(|v| v * c as f64);
        let id = self.push(Op::Scale(x, c), value);
        self.nodes[id.0].fscalar = fscalar;
        id
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Relu(x), value)
    }

    /// Inverted dropout: keeps each entry with probability `1 - p`, scaling
    /// survivors by `1/(1-p)`. Identity when the tape is not training or
    /// `p == 0`.
    pub fn dropout(&mut self, x: ValueId, p: f32) -> Result<ValueId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout p={p} outside [0,1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let numel = self.value(x).numel();
        let rng = self.dropout_rng.as_mut().expect("training tape has rng");
        let mask: Vec<f32> = (0..numel)
            .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::Dropout(x, mask), value))
    }

    /// Row-wise softmax, stabilized by subtracting each row's max.
    pub fn softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::shape("softmax_rows expects a matrix"));
        }
        let (m, n) = (tx.rows(), tx.cols());
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            let row = tx.row(i);
            let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0f64;
            for (j, &v) in row.iter().enumerate() {
                let e = ((v - max) as f64).exp();
                data[i * n + j] = e as f32;
                denom += e;
            }
            for j in 0..n {
                data[i * n + j] = (data[i * n + j] as f64 / denom) as f32;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::SoftmaxRows(x), value))
    }

    /// Row-wise log-softmax (stable log-sum-exp).
    pub fn log_softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::shape("log_softmax_rows expects a matrix"));
        }
        let (m, n) = (tx.rows(), tx.cols());
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            let row = tx.row(i);
            let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0f64;
            for &v in row {
                denom += ((v - max) as f64).exp();
            }
            let lse = max as f64 + denom.ln();
            for (j, &v) in row.iter().enumerate() {
                data[i * n + j] = (v as f64 - lse) as f32;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::LogSoftmaxRows(x), value))
    }

    /// Set masked entries to [`MASK_FILL`]; gradients there are dropped.
    pub fn masked_fill(&mut self, x: ValueId, mask: &[bool]) -> Result<ValueId> {
        let tx = self.value(x);
        if mask.len() != tx.numel() {
            return Err(Error::shape(format!(
                "mask length {} vs tensor {:?}",
                mask.len(),
                tx.shape()
            )));
        }
        let data = tx
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { MASK_FILL } else { v })
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::MaskedFill(x, mask.to_vec()), value))
    }

    /// Gather rows of `table` by id; backward scatter-adds into the table.
    pub fn lookup(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::shape("lookup expects a matrix table"));
        }
        let (rows, d) = (tt.rows(), tt.cols());
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::index(format!("lookup id {bad} >= table rows {rows}")));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(tt.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(Op::Lookup(table, ids.to_vec()), value))
    }

    /// Contiguous row slice `[start, start+len)`.
    pub fn slice_rows(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || start + len > tx.rows() {
            return Err(Error::shape(format!(
                "slice_rows [{start}, {}) of {:?}",
                start + len,
                tx.shape()
            )));
        }
        let n = tx.cols();
        let data = tx.data()[start * n..(start + len) * n].to_vec();
        let value = Tensor::new(vec![len, n], data)?;
        Ok(self.push(Op::SliceRows(x, start, len), value))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero parts"));
        }
        let m = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != m) {
            return Err(Error::shape("concat_cols row mismatch"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm_rows(
        &mut self,
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
    ) -> Result<ValueId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::shape("layer_norm_rows expects a matrix"));
        }
        let (m, n) = (tx.rows(), tx.cols());
        if self.value(gain).shape() != [n] || self.value(bias).shape() != [n] {
            return Err(Error::shape("layer norm gain/bias must match row width"));
        }
        let mut data = vec![0.0f32; m * n];
        let mut row_stats = Vec::with_capacity(m);
        for i in 0..m {
            let row = self.value(x).row(i);
            let mean = (row.iter().map(|&v| v as f64).sum::<f64>() / n as f64) as f32;
            let var = (row
                .iter()
                .map(|&v| ((v - mean) as f64) * ((v - mean) as f64))
                .sum::<f64>()
                / n as f64) as f32;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row_stats.push((mean, inv_std));
            for j in 0..n {
                let xn = (row[j] - mean) * inv_std;
                data[i * n + j] = self.value(gain).data()[j] * xn + self.value(bias).data()[j];
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::LayerNormRows { x, gain, bias, row_stats }, value))
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let tx = self.value(x);
        let data = tx
            .data()
            .iter()
            .map(|&v| (1.0 / (1.0 + (-v as f64).exp())) as f32)
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Sigmoid(x), value)
    }

    /// `log(sigmoid(x))` evaluated stably as `-softplus(-x)`.
    pub fn log_sigmoid(&mut self, x: ValueId) -> ValueId {
        let tx = self.value(x);
        let data = tx
            .data()
            .iter()
            .map(|&v| {
                let v = v as f64;
                let out = if v >= 0.0 { -((-v).exp()).ln_1p() } else { v - v.exp().ln_1p() };
                out as f32
            })
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::LogSigmoid(x), value)
    }

    /// Pick entries `(row, col)` of a matrix into a vector; repeated
    /// coordinates accumulate gradient additively.
    pub fn select_entries(&mut self, x: ValueId, coords: &[(usize, usize)]) -> Result<ValueId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::shape("select_entries expects a matrix"));
        }
        let (m, n) = (tx.rows(), tx.cols());
        if let Some(&(r, c)) = coords.iter().find(|&&(r, c)| r >= m || c >= n) {
            return Err(Error::index(format!("entry ({r},{c}) outside {m}x{n}")));
        }
        let data = coords.iter().map(|&(r, c)| tx.at2(r, c)).collect();
        let value = Tensor::new(vec![coords.len()], data)?;
        Ok(self.push(Op::SelectEntries(x, coords.to_vec()), value))
    }

    /// Sum of all entries (f64 accumulation).
    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let total: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push_scalar(Op::Sum(x), total)
    }

    /// Mean of all entries (f64 accumulation).
    pub fn mean(&mut self, x: ValueId) -> ValueId {
        let numel = self.value(x).numel();
        let total: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push_scalar(Op::Mean(x), total / numel as f64)
    }

    /// Inner product with a constant weight vector: `Σ w_i · x_i`.
    pub fn dot_const(&mut self, x: ValueId, weights: &[f32]) -> Result<ValueId> {
        let tx = self.value(x);
        if weights.len() != tx.numel() {
            return Err(Error::shape(format!(
                "dot_const weights {} vs tensor {:?}",
                weights.len(),
                tx.shape()
            )));
        }
        let total: f64 = tx
            .data()
            .iter()
            .zip(weights)
            .map(|(&v, &w)| v as f64 * w as f64)
            .sum();
        Ok(self.push_scalar(Op::DotConst(x, weights.to_vec()), total))
    }

    /// Reverse pass from a scalar loss. Consumes the tape; returns gradients
    /// for every named parameter leaf.
    pub fn backward(self, loss: ValueId) -> Result<GradientSet> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), 1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy); // keep for parameter collection
                }
                Op::Matmul(a, b) => {
                    let ta = self.nodes[a.0].value.clone();
                    let tb = self.nodes[b.0].value.clone();
                    let da = matmul_raw(&dy, &tb.transposed())?;
                    let db = matmul_raw(&ta.transposed(), &dy)?;
                    accumulate(&mut grads, a.0, da);
                    accumulate(&mut grads, b.0, db);
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads, x.0, dy.transposed());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a.0, dy.clone());
                    accumulate(&mut grads, b.0, dy);
                }
                Op::AddBias(x, bias) => {
                    let n = dy.cols();
                    let mut db = vec![0.0f64; n];
                    for i in 0..dy.rows() {
                        for j in 0..n {
                            db[j] += dy.at2(i, j) as f64;
                        }
                    }
                    let db: Vec<f32> = db.into_iter().map(|v| v as f32).collect();
                    accumulate(&mut grads, bias.0, Tensor::new(vec![n], db)?);
                    accumulate(&mut grads, x.0, dy);
                }
                Op::Scale(x, c) => {
                    let data = dy.data().iter().map(|v| v * c).collect();
                    accumulate(&mut grads, x.0, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::Relu(x) => {
                    let tx = &self.nodes[x.0].value;
                    let data = dy
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x.0, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::Dropout(x, mask) => {
                    let data = dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    accumulate(&mut grads, x.0, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::SoftmaxRows(x) => {
                    // dx_j = y_j (dy_j - Σ_k dy_k y_k) per row
                    let y = &node.value;
                    let (m, n) = (y.rows(), y.cols());
                    let mut dx = vec![0.0f32; m * n];
                    for i in 0..m {
                        let mut dot = 0.0f64;
                        for j in 0..n {
                            dot += dy.at2(i, j) as f64 * y.at2(i, j) as f64;
                        }
                        for j in 0..n {
                            dx[i * n + j] =
                                (y.at2(i, j) as f64 * (dy.at2(i, j) as f64 - dot)) as f32;
                        }
                    }
                    accumulate(&mut grads, x.0, Tensor::new(vec![m, n], dx)?);
                }
                Op::LogSoftmaxRows(x) => {
                    // dx_j = dy_j - softmax_j · Σ_k dy_k, softmax = exp(out)
                    let out = &node.value;
                    let (m, n) = (out.rows(), out.cols());
                    let mut dx = vec![0.0f32; m * n];
                    for i in 0..m {
                        let total: f64 = (0..n).map(|j| dy.at2(i, j) as f64).sum();
                        for j in 0..n {
                            let s = (out.at2(i, j) as f64).exp();
                            dx[i * n + j] = (dy.at2(i, j) as f64 - s * total) as f32;
                        }
                    }
                    accumulate(&mut grads, x.0, Tensor::new(vec![m, n], dx)?);
                }
                Op::MaskedFill(x, mask) => {
                    let data = dy
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(&g, &m)| if m { 0.0 } else { g })
                        .collect();
                    accumulate(&mut grads, x.0, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::Lookup(table, ids) => {
                    let tt = &self.nodes[table.0].value;
                    let d = tt.cols();
                    let mut dt = Tensor::zeros(vec![tt.rows(), d]);
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt.data_mut()[id * d + j] += dy.at2(i, j);
                        }
                    }
                    accumulate(&mut grads, table.0, dt);
                }
                Op::SliceRows(x, start, len) => {
                    let tx = &self.nodes[x.0].value;
                    let n = tx.cols();
                    let mut dx = Tensor::zeros(vec![tx.rows(), n]);
                    dx.data_mut()[start * n..(start + len) * n].copy_from_slice(dy.data());
                    accumulate(&mut grads, x.0, dx);
                }
                Op::ConcatCols(parts) => {
                    let m = dy.rows();
                    let mut col = 0usize;
                    for &p in parts {
                        let w = self.nodes[p.0].value.cols();
                        let mut dp = vec![0.0f32; m * w];
                        for i in 0..m {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&dy.row(i)[col..col + w]);
                        }
                        accumulate(&mut grads, p.0, Tensor::new(vec![m, w], dp)?);
                        col += w;
                    }
                }
                Op::LayerNormRows { x, gain, bias, row_stats } => {
                    let tx = &self.nodes[x.0].value;
                    let tg = &self.nodes[gain.0].value;
                    let (m, n) = (tx.rows(), tx.cols());
                    let mut dx = vec![0.0f32; m * n];
                    let mut dg = vec![0.0f64; n];
                    let mut db = vec![0.0f64; n];
                    for i in 0..m {
                        let (mean, inv_std) = row_stats[i];
                        let row = tx.row(i);
                        // dxhat, plus its sums for the mean/variance terms
                        let mut sum_dxhat = 0.0f64;
                        let mut sum_dxhat_xhat = 0.0f64;
                        let mut dxhat = vec![0.0f64; n];
                        for j in 0..n {
                            let xhat = ((row[j] - mean) * inv_std) as f64;
                            let g = dy.at2(i, j) as f64;
                            dg[j] += g * xhat;
                            db[j] += g;
                            let dh = g * tg.data()[j] as f64;
                            dxhat[j] = dh;
                            sum_dxhat += dh;
                            sum_dxhat_xhat += dh * xhat;
                        }
                        for j in 0..n {
                            let xhat = ((row[j] - mean) * inv_std) as f64;
                            dx[i * n + j] = (inv_std as f64 / n as f64
                                * (n as f64 * dxhat[j] - sum_dxhat - xhat * sum_dxhat_xhat))
                                as f32;
                        }
                    }
                    let dg: Vec<f32> = dg.into_iter().map(|v| v as f32).collect();
                    let db: Vec<f32> = db.into_iter().map(|v| v as f32).collect();
                    accumulate(&mut grads, x.0, Tensor::new(vec![m, n], dx)?);
                    accumulate(&mut grads, gain.0, Tensor::new(vec![n], dg)?);
                    accumulate(&mut grads, bias.0, Tensor::new(vec![n], db)?);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let data = dy
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads, x.0, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::LogSigmoid(x) => {
                    // d/dx log σ(x) = σ(-x)
                    let tx = &self.nodes[x.0].value;
                    let data = dy
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(&g, &v)| {
                            let s_neg = 1.0 / (1.0 + (v as f64).exp());
                            (g as f64 * s_neg) as f32
                        })
                        .collect();
                    accumulate(&mut grads, x.0, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::SelectEntries(x, coords) => {
                    let tx = &self.nodes[x.0].value;
                    let n = tx.cols();
                    let mut dx = Tensor::zeros(vec![tx.rows(), n]);
                    for (k, &(r, c)) in coords.iter().enumerate() {
                        dx.data_mut()[r * n + c] += dy.data()[k];
                    }
                    accumulate(&mut grads, x.0, dx);
                }
                Op::Sum(x) => {
                    let tx = &self.nodes[x.0].value;
                    accumulate(
                        &mut grads,
                        x.0,
                        Tensor::full(tx.shape().to_vec(), dy.item()),
                    );
                }
                Op::Mean(x) => {
                    let tx = &self.nodes[x.0].value;
                    let g = dy.item() / tx.numel() as f32;
                    accumulate(&mut grads, x.0, Tensor::full(tx.shape().to_vec(), g));
                }
                Op::DotConst(x, weights) => {
                    let g = dy.item();
                    let data = weights.iter().map(|&w| w * g).collect();
                    let tx = &self.nodes[x.0].value;
                    accumulate(&mut grads, x.0, Tensor::new(tx.shape().to_vec(), data)?);
                }
            }
        }

        let mut set = GradientSet::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some(name), Some(grad)) = (&node.param, grads[idx].take()) {
                set.accumulate(name, grad);
            }
        }
        Ok(set)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, grad: Tensor) {
    match &mut grads[idx] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), grad.shape());
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += *g;
            }
        }
        slot => *slot = Some(grad),
    }
}

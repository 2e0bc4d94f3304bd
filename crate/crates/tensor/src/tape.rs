use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::sparse::SparseMatrix;
use crate::tensor::Tensor;

/// Index of a node on the tape.
pub type NodeId = usize;

/// Forward execution mode. Train mode draws dropout masks from the supplied
/// stream; eval mode makes every op deterministic given parameters and inputs.
pub enum Mode {
    Train { dropout: f64, rng: ChaCha8Rng },
    Eval,
}

enum Op {
    Param(ParamId),
    Input,
    Matmul(NodeId, NodeId),
    SparseMatmul {
        matrix: Rc<SparseMatrix>,
        transpose: bool,
        dense: NodeId,
    },
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRowBias {
        x: NodeId,
        bias: NodeId,
    },
    AddScalar(NodeId),
    MulScalar {
        x: NodeId,
        factor: f64,
    },
    Exp(NodeId),
    Ln(NodeId),
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    ClampMin {
        x: NodeId,
        floor: f64,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    SumAxis {
        x: NodeId,
        axis: usize,
    },
    MeanAxis {
        x: NodeId,
        axis: usize,
    },
    SumAll(NodeId),
    MeanAll(NodeId),
    ConcatCols(Vec<NodeId>),
    GatherRows {
        x: NodeId,
        indices: Rc<Vec<usize>>,
    },
    Dropout {
        x: NodeId,
        // Mask entries are 0 or 1/keep, so forward and backward share them.
        mask: Tensor,
    },
    BceWithLogits {
        logits: NodeId,
        labels: Tensor,
    },
}

/// Dynamic Wengert tape: records one forward pass, then replays it in reverse
/// to accumulate parameter gradients. A fresh tape is built every step, so
/// shapes may change freely between passes.
pub struct Tape<'a> {
    params: &'a ParamStore,
    values: Vec<Tensor>,
    ops: Vec<Op>,
    mode: Mode,
    consumed: bool,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore, mode: Mode) -> Self {
        Tape {
            params,
            values: Vec::new(),
            ops: Vec::new(),
            mode,
            consumed: false,
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self.mode, Mode::Train { .. })
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn param_shape(&self, id: ParamId) -> [usize; 2] {
        self.params.get(id).shape()
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.values[id].item()
    }

    fn push(&mut self, op: &'static str, value: Tensor, node: Op) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        self.values.push(value);
        self.ops.push(node);
        Ok(self.values.len() - 1)
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if !self.values[a].same_shape(&self.values[b]) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.values[a].shape().to_vec(),
                rhs: self.values[b].shape().to_vec(),
            });
        }
        Ok(())
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Leaf node reading the current value of a trainable parameter.
    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        let value = self.params.get(id).clone();
        self.push("param", value, Op::Param(id))
    }

    /// Constant leaf; gradients do not flow into inputs.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push("input", value, Op::Input)
    }

    // ── Linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.values[a].matmul(&self.values[b])?;
        self.push("matmul", value, Op::Matmul(a, b))
    }

    /// `matrix * dense`, or `matrix^T * dense` when `transpose` is set. The
    /// sparse side is constant; gradients flow only into the dense operand.
    pub fn sparse_matmul(
        &mut self,
        matrix: &Rc<SparseMatrix>,
        dense: NodeId,
        transpose: bool,
    ) -> Result<NodeId> {
        let value = matrix.matmul_dense(&self.values[dense], transpose)?;
        self.push(
            "sparse_matmul",
            value,
            Op::SparseMatmul {
                matrix: Rc::clone(matrix),
                transpose,
                dense,
            },
        )
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.values[x].transpose();
        self.push("transpose", value, Op::Transpose(x))
    }

    // ── Elementwise binary ───────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let value = zip_map(&self.values[a], &self.values[b], |x, y| x + y);
        self.push("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let value = zip_map(&self.values[a], &self.values[b], |x, y| x - y);
        self.push("sub", value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let value = zip_map(&self.values[a], &self.values[b], |x, y| x * y);
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("div", a, b)?;
        let value = zip_map(&self.values[a], &self.values[b], |x, y| x / y);
        self.push("div", value, Op::Div(a, b))
    }

    /// Broadcast a `[1, m]` bias over every row of `x`.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (&self.values[x], &self.values[bias]);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut value = xv.clone();
        let cols = value.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % cols];
        }
        self.push("add_row_bias", value, Op::AddRowBias { x, bias })
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let value = self.values[x].map(|v| v + c);
        self.push("add_scalar", value, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let value = self.values[x].map(|v| v * factor);
        self.push("mul_scalar", value, Op::MulScalar { x, factor })
    }

    // ── Elementwise unary ────────────────────────────────────────────

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.values[x].map(f64::exp);
        self.push("exp", value, Op::Exp(x))
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.values[x].map(f64::ln);
        self.push("ln", value, Op::Ln(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let value = self.values[x].map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", value, Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.values[x].map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.values[x].map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.values[x].map(softplus);
        self.push("softplus", value, Op::Softplus(x))
    }

    /// Elementwise `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: NodeId, floor: f64) -> Result<NodeId> {
        let value = self.values[x].map(|v| v.max(floor));
        self.push("clamp_min", value, Op::ClampMin { x, floor })
    }

    // ── Structured ops ───────────────────────────────────────────────

    /// Numerically stable softmax along `axis` (0 = down columns, 1 = across rows).
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        if axis > 1 {
            return Err(TensorError::Invalid(format!("softmax axis {axis} out of range")));
        }
        let value = softmax_tensor(&self.values[x], axis);
        self.push("softmax", value, Op::Softmax { x, axis })
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let value = reduce_axis(&self.values[x], axis, false)?;
        self.push("sum_axis", value, Op::SumAxis { x, axis })
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let value = reduce_axis(&self.values[x], axis, true)?;
        self.push("mean_axis", value, Op::MeanAxis { x, axis })
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.values[x].data().iter().sum());
        self.push("sum_all", value, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let v = &self.values[x];
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / v.numel() as f64);
        self.push("mean_all", value, Op::MeanAll(x))
    }

    /// Concatenate along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat_cols of zero tensors".into()));
        }
        let rows = self.values[parts[0]].rows();
        for &p in parts {
            if self.values[p].rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.values[parts[0]].shape().to_vec(),
                    rhs: self.values[p].shape().to_vec(),
                });
            }
        }
        let total_cols: usize = parts.iter().map(|&p| self.values[p].cols()).sum();
        let mut out = Tensor::zeros(rows, total_cols);
        let mut offset = 0;
        for &p in parts {
            let src = &self.values[p];
            let c = src.cols();
            for r in 0..rows {
                let dst_start = r * total_cols + offset;
                out.data_mut()[dst_start..dst_start + c].copy_from_slice(src.row(r));
            }
            offset += c;
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    /// Select rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, x: NodeId, indices: &Rc<Vec<usize>>) -> Result<NodeId> {
        let src = &self.values[x];
        let cols = src.cols();
        let mut out = Tensor::zeros(indices.len(), cols);
        for (r, &i) in indices.iter().enumerate() {
            if i >= src.rows() {
                return Err(TensorError::Invalid(format!(
                    "gather_rows index {i} out of range for {} rows",
                    src.rows()
                )));
            }
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(src.row(i));
        }
        self.push(
            "gather_rows",
            out,
            Op::GatherRows {
                x,
                indices: Rc::clone(indices),
            },
        )
    }

    /// Inverted dropout: train mode zeroes entries with probability `rate` and
    /// rescales survivors by `1/(1-rate)` so the expected output equals the
    /// input; eval mode is the identity.
    pub fn dropout(&mut self, x: NodeId) -> Result<NodeId> {
        let (rate, rng) = match &mut self.mode {
            Mode::Eval => return Ok(x),
            Mode::Train { dropout, rng } => (*dropout, rng),
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let shape = self.values[x].shape();
        let mask_data: Vec<f64> = (0..shape[0] * shape[1])
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mask = Tensor::new(shape[0], shape[1], mask_data)?;
        let value = zip_map(&self.values[x], &mask, |v, m| v * m);
        self.push("dropout", value, Op::Dropout { x, mask })
    }

    /// Per-entry binary cross-entropy from raw scores, computed in the stable
    /// form `max(s,0) - s*y + ln(1 + exp(-|s|))`. Labels are constants.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &Tensor) -> Result<NodeId> {
        let lv = &self.values[logits];
        if !lv.same_shape(labels) {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: lv.shape().to_vec(),
                rhs: labels.shape().to_vec(),
            });
        }
        let value = zip_map(lv, labels, |s, y| {
            s.max(0.0) - s * y + (-s.abs()).exp().ln_1p()
        });
        self.push(
            "bce_with_logits",
            value,
            Op::BceWithLogits {
                logits,
                labels: labels.clone(),
            },
        )
    }

    // ── Reverse pass ─────────────────────────────────────────────────

    /// Accumulate gradients of a scalar `loss` into every reachable parameter.
    /// Consumes the recorded pass: a second call without a new forward errors.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_shape = self.values[loss].shape();
        if self.values[loss].numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_shape.to_vec(),
            });
        }
        self.consumed = true;

        let mut node_grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        node_grads[loss] = Some(Tensor::scalar(1.0));
        let mut grads = Gradients::new(self.params.len());

        for id in (0..=loss).rev() {
            let Some(grad) = node_grads[id].take() else {
                continue;
            };
            match &self.ops[id] {
                Op::Param(pid) => grads.accumulate(*pid, &grad),
                Op::Input => {}
                Op::Matmul(a, b) => {
                    let da = grad.matmul(&self.values[*b].transpose())?;
                    let db = self.values[*a].transpose().matmul(&grad)?;
                    accumulate(&mut node_grads, *a, da);
                    accumulate(&mut node_grads, *b, db);
                }
                Op::SparseMatmul {
                    matrix,
                    transpose,
                    dense,
                } => {
                    let dd = matrix.matmul_dense(&grad, !transpose)?;
                    accumulate(&mut node_grads, *dense, dd);
                }
                Op::Transpose(a) => accumulate(&mut node_grads, *a, grad.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut node_grads, *a, grad.clone());
                    accumulate(&mut node_grads, *b, grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut node_grads, *a, grad.clone());
                    accumulate(&mut node_grads, *b, grad.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&grad, &self.values[*b], |g, y| g * y);
                    let db = zip_map(&grad, &self.values[*a], |g, x| g * x);
                    accumulate(&mut node_grads, *a, da);
                    accumulate(&mut node_grads, *b, db);
                }
                Op::Div(a, b) => {
                    let da = zip_map(&grad, &self.values[*b], |g, y| g / y);
                    let db3 = zip3_map(&grad, &self.values[id], &self.values[*b], |g, out, y| {
                        -g * out / y
                    });
                    accumulate(&mut node_grads, *a, da);
                    accumulate(&mut node_grads, *b, db3);
                }
                Op::AddRowBias { x, bias } => {
                    let cols = grad.cols();
                    let mut db = Tensor::zeros(1, cols);
                    for (i, &g) in grad.data().iter().enumerate() {
                        db.data_mut()[i % cols] += g;
                    }
                    accumulate(&mut node_grads, *x, grad);
                    accumulate(&mut node_grads, *bias, db);
                }
                Op::AddScalar(x) => accumulate(&mut node_grads, *x, grad),
                Op::MulScalar { x, factor } => {
                    let f = *factor;
                    accumulate(&mut node_grads, *x, grad.map(|g| g * f));
                }
                Op::Exp(x) => {
                    let dx = zip_map(&grad, &self.values[id], |g, y| g * y);
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::Ln(x) => {
                    let dx = zip_map(&grad, &self.values[*x], |g, v| g / v);
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::LeakyRelu { x, slope } => {
                    let s = *slope;
                    let dx = zip_map(&grad, &self.values[*x], |g, v| {
                        if v > 0.0 {
                            g
                        } else {
                            g * s
                        }
                    });
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::Relu(x) => {
                    let dx = zip_map(&grad, &self.values[*x], |g, v| if v > 0.0 { g } else { 0.0 });
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = zip_map(&grad, &self.values[id], |g, y| g * y * (1.0 - y));
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::Softplus(x) => {
                    let dx = zip_map(&grad, &self.values[*x], |g, v| g * sigmoid(v));
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::ClampMin { x, floor } => {
                    let f = *floor;
                    let dx = zip_map(&grad, &self.values[*x], |g, v| if v > f { g } else { 0.0 });
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::Softmax { x, axis } => {
                    let dx = softmax_backward(&grad, &self.values[id], *axis);
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::SumAxis { x, axis } => {
                    let dx = broadcast_reduce_grad(&grad, &self.values[*x], *axis, 1.0);
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::MeanAxis { x, axis } => {
                    let extent = if *axis == 0 {
                        self.values[*x].rows()
                    } else {
                        self.values[*x].cols()
                    };
                    let dx =
                        broadcast_reduce_grad(&grad, &self.values[*x], *axis, 1.0 / extent as f64);
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::SumAll(x) => {
                    let g = grad.item();
                    let shape = self.values[*x].shape();
                    accumulate(&mut node_grads, *x, Tensor::full(shape[0], shape[1], g));
                }
                Op::MeanAll(x) => {
                    let shape = self.values[*x].shape();
                    let g = grad.item() / self.values[*x].numel() as f64;
                    accumulate(&mut node_grads, *x, Tensor::full(shape[0], shape[1], g));
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let total_cols = grad.cols();
                    let rows = grad.rows();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.values[p].cols();
                        let mut dp = Tensor::zeros(rows, c);
                        for r in 0..rows {
                            let src_start = r * total_cols + offset;
                            dp.data_mut()[r * c..(r + 1) * c]
                                .copy_from_slice(&grad.data()[src_start..src_start + c]);
                        }
                        accumulate(&mut node_grads, p, dp);
                        offset += c;
                    }
                }
                Op::GatherRows { x, indices } => {
                    let src_shape = self.values[*x].shape();
                    let cols = src_shape[1];
                    let mut dx = Tensor::zeros(src_shape[0], src_shape[1]);
                    for (r, &i) in indices.iter().enumerate() {
                        let dst = &mut dx.data_mut()[i * cols..(i + 1) * cols];
                        for (d, &g) in dst.iter_mut().zip(grad.row(r)) {
                            *d += g;
                        }
                    }
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let dx = zip_map(&grad, mask, |g, m| g * m);
                    accumulate(&mut node_grads, *x, dx);
                }
                Op::BceWithLogits { logits, labels } => {
                    let dl = zip3_map(&grad, &self.values[*logits], labels, |g, s, y| {
                        g * (sigmoid(s) - y)
                    });
                    accumulate(&mut node_grads, *logits, dl);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, grad: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&grad),
        slot => *slot = Some(grad),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert!(a.same_shape(b));
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape preserved")
}

fn zip3_map(a: &Tensor, b: &Tensor, c: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape preserved")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_tensor(x: &Tensor, axis: usize) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = x.clone();
    let slices: Vec<Vec<(usize, f64)>> = if axis == 1 {
        (0..rows)
            .map(|r| (0..cols).map(|c| (r * cols + c, x.get(r, c))).collect())
            .collect()
    } else {
        (0..cols)
            .map(|c| (0..rows).map(|r| (r * cols + c, x.get(r, c))).collect())
            .collect()
    };
    for slice in slices {
        let max = slice
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = slice.iter().map(|&(_, v)| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (&(idx, _), e) in slice.iter().zip(exps) {
            out.data_mut()[idx] = e / total;
        }
    }
    out
}

fn softmax_backward(grad: &Tensor, y: &Tensor, axis: usize) -> Tensor {
    let (rows, cols) = (y.rows(), y.cols());
    let mut dx = Tensor::zeros(rows, cols);
    let slice_count = if axis == 1 { rows } else { cols };
    for s in 0..slice_count {
        let idx: Vec<usize> = if axis == 1 {
            (0..cols).map(|c| s * cols + c).collect()
        } else {
            (0..rows).map(|r| r * cols + s).collect()
        };
        let dot: f64 = idx.iter().map(|&i| grad.data()[i] * y.data()[i]).sum();
        for &i in &idx {
            dx.data_mut()[i] = y.data()[i] * (grad.data()[i] - dot);
        }
    }
    dx
}

fn reduce_axis(x: &Tensor, axis: usize, mean: bool) -> Result<Tensor> {
    let (rows, cols) = (x.rows(), x.cols());
    match axis {
        0 => {
            let mut out = Tensor::zeros(1, cols);
            for r in 0..rows {
                for c in 0..cols {
                    out.data_mut()[c] += x.get(r, c);
                }
            }
            if mean {
                for v in out.data_mut() {
                    *v /= rows as f64;
                }
            }
            Ok(out)
        }
        1 => {
            let mut out = Tensor::zeros(rows, 1);
            for r in 0..rows {
                let sum: f64 = x.row(r).iter().sum();
                out.data_mut()[r] = if mean { sum / cols as f64 } else { sum };
            }
            Ok(out)
        }
        _ => Err(TensorError::Invalid(format!("axis {axis} out of range"))),
    }
}

fn broadcast_reduce_grad(grad: &Tensor, input: &Tensor, axis: usize, scale: f64) -> Tensor {
    let (rows, cols) = (input.rows(), input.cols());
    let mut dx = Tensor::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let g = if axis == 0 {
                grad.data()[c]
            } else {
                grad.data()[r]
            };
            dx.data_mut()[r * cols + c] = g * scale;
        }
    }
    dx
}

//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass, then
//! replays the tape in reverse to accumulate exact gradients. Tensors on the
//! tape are immutable: each op produces a fresh value, so snapshots of
//! intermediate state (decoder memory, coverage) are just ids.
//!
//! The op set is deliberately small and auditable: 2-D matmul, elementwise
//! arithmetic with scalar broadcasting, concat, the activations the model
//! needs, row softmax, embedding lookup, transpose, norms, reductions and
//! mask-fill. Anything fancier is composed from these.
//!
//! One graph serves one forward/backward cycle. Parameters are snapshotted
//! into the graph by name; [`Graph::grad`] hands back their gradients and
//! consumes the tape.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

/// The recorded operation kinds.
#[derive(Clone, Debug)]
pub enum Op {
    /// `[m,k] @ [k,n] -> [m,n]`
    MatMul,
    /// Elementwise; one operand may be a scalar (numel 1).
    Add,
    Sub,
    Mul,
    Div,
    /// Concatenate along `axis` (0 = rows, 1 = cols).
    Concat { axis: usize },
    Tanh,
    Sigmoid,
    Log,
    /// Softmax over the last axis, per row. Stable; errors on an all-`-inf` row.
    Softmax,
    /// Select rows of a `[v,d]` table; backward scatter-adds.
    EmbedLookup { indices: Vec<usize> },
    Transpose,
    /// `sum(x^2)` -> scalar.
    FrobNormSq,
    /// `sqrt(sum(x^2))` -> scalar.
    L2Norm,
    Mean,
    Sum,
    /// `out[i] = mask[i] != 0 ? x[i] : fill`; inputs `(x, mask)`.
    MaskFill { fill: f64 },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Concat { .. } => "concat",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Log => "log",
            Op::Softmax => "softmax",
            Op::EmbedLookup { .. } => "embedding-lookup",
            Op::Transpose => "transpose",
            Op::FrobNormSq => "frobenius-norm-squared",
            Op::L2Norm => "l2-norm",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::MaskFill { .. } => "mask-fill",
        }
    }
}

#[derive(Clone, Debug)]
struct Record {
    op: Op,
    inputs: Vec<TensorId>,
    output: TensorId,
}

#[derive(Default)]
pub struct Graph {
    vals: Vec<Tensor>,
    records: Vec<Record>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, TensorId)>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push_val(&mut self, t: Tensor) -> TensorId {
        let id = TensorId(self.vals.len());
        self.vals.push(t);
        self.grads.push(None);
        id
    }

    /// A non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> TensorId {
        self.push_val(t)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push_val(Tensor::scalar(v))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> TensorId {
        self.push_val(Tensor::zeros(shape))
    }

    /// Snapshot a named trainable parameter into the graph.
    pub fn param(&mut self, name: &str, t: &Tensor) -> TensorId {
        let id = self.push_val(t.clone().with_grad());
        self.params.push((name.to_string(), id));
        id
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.vals[id.0]
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.vals[id.0].data()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.vals[id.0].shape()
    }

    pub fn num_nodes(&self) -> usize {
        self.vals.len()
    }

    /// Gradient buffer of a value after [`Graph::grad`] ran. `None` when no
    /// gradient flowed to it.
    pub fn grad_of(&self, id: TensorId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    // ── generic apply ───────────────────────────────────────────────

    /// Apply an op to operands, record it, and return the output id.
    pub fn apply(&mut self, op: Op, inputs: &[TensorId]) -> Result<TensorId> {
        let out = self.forward(&op, inputs)?;
        let output = self.push_val(out);
        self.records.push(Record { op, inputs: inputs.to_vec(), output });
        Ok(output)
    }

    // ── typed wrappers ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(Op::Div, &[a, b])
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        self.apply(Op::Concat { axis: 0 }, parts)
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        self.apply(Op::Concat { axis: 1 }, parts)
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(Op::Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn log(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(Op::Log, &[x])
    }

    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn embed_lookup(&mut self, table: TensorId, indices: &[usize]) -> Result<TensorId> {
        self.apply(Op::EmbedLookup { indices: indices.to_vec() }, &[table])
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(Op::Transpose, &[x])
    }

    pub fn frob_norm_sq(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(Op::FrobNormSq, &[x])
    }

    pub fn l2_norm(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(Op::L2Norm, &[x])
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(Op::Mean, &[x])
    }

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        self.apply(Op::Sum, &[x])
    }

    pub fn mask_fill(&mut self, x: TensorId, mask: TensorId, fill: f64) -> Result<TensorId> {
        self.apply(Op::MaskFill { fill }, &[x, mask])
    }

    // ── composed helpers ────────────────────────────────────────────

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: TensorId) -> Result<TensorId> {
        let one = self.scalar(1.0);
        self.sub(one, x)
    }

    /// Repeat a `[1,d]` row `n` times into `[n,d]` (via ones-matmul, so the
    /// gradient of the row is the column sum).
    pub fn tile_rows(&mut self, row: TensorId, n: usize) -> Result<TensorId> {
        let ones = self.constant(Tensor::ones(vec![n, 1]));
        self.matmul(ones, row)
    }

    /// `x + bias` where `bias` is a `[1,d]` row added to every row of `x`.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (rows, _) = self.value(x).dims2();
        if rows == 1 {
            return self.add(x, bias);
        }
        let tiled = self.tile_rows(bias, rows)?;
        self.add(x, tiled)
    }

    /// Linear map `x @ w^T` for `x: [n,in]`, `w: [out,in]`.
    pub fn linear(&mut self, x: TensorId, w: TensorId) -> Result<TensorId> {
        let wt = self.transpose(w)?;
        self.matmul(x, wt)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// registered parameter. Parameters the loss does not reach get zero
    /// gradients. Consumes the tape: calling twice is an error.
    pub fn grad(&mut self, loss: TensorId) -> Result<BTreeMap<String, Tensor>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.vals[loss.0].numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "grad",
                detail: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        self.consumed = true;
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..self.records.len()).rev() {
            let rec = self.records[i].clone();
            if self.grads[rec.output.0].is_some() {
                self.backward_record(&rec);
            }
        }
        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            let t = &self.vals[id.0];
            let g = match &self.grads[id.0] {
                Some(g) => g.clone(),
                None => vec![0.0; t.numel()],
            };
            out.insert(name.clone(), Tensor::new(t.shape().to_vec(), g)?);
        }
        Ok(out)
    }

    fn acc(&mut self, id: TensorId, contribution: Vec<f64>) {
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot => *slot = Some(contribution),
        }
    }

    // ── forward implementations ─────────────────────────────────────

    fn forward(&self, op: &Op, inputs: &[TensorId]) -> Result<Tensor> {
        let t = |id: &TensorId| &self.vals[id.0];
        match op {
            Op::MatMul => {
                let (a, b) = binary(op, inputs)?;
                let (a, b) = (t(&a), t(&b));
                let (m, k) = a.dims2();
                let (k2, n) = b.dims2();
                if k != k2 {
                    return Err(shape_err(op, a, b));
                }
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = a.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &b.data()[p * n..(p + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for j in 0..n {
                            orow[j] += av * brow[j];
                        }
                    }
                }
                Tensor::new(vec![m, n], out)
            }
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let (a, b) = binary(op, inputs)?;
                let (a, b) = (t(&a), t(&b));
                elementwise(op, a, b)
            }
            Op::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(Error::ShapeMismatch { op: "concat", detail: "no operands".into() });
                }
                concat_forward(*axis, &inputs.iter().map(t).collect::<Vec<_>>())
            }
            Op::Tanh | Op::Sigmoid | Op::Log => {
                let x = unary(op, inputs)?;
                let x = t(&x);
                let data: Result<Vec<f64>> = x
                    .data()
                    .iter()
                    .map(|&v| match op {
                        Op::Tanh => Ok(v.tanh()),
                        Op::Sigmoid => Ok(1.0 / (1.0 + (-v).exp())),
                        _ => {
                            if v <= 0.0 {
                                Err(Error::Domain { op: "log", detail: format!("log({v})") })
                            } else {
                                Ok(v.ln())
                            }
                        }
                    })
                    .collect();
                Tensor::new(x.shape().to_vec(), data?)
            }
            Op::Softmax => {
                let x = unary(op, inputs)?;
                softmax_forward(t(&x))
            }
            Op::EmbedLookup { indices } => {
                let table = unary(op, inputs)?;
                let table = t(&table);
                if table.shape().len() != 2 {
                    return Err(Error::ShapeMismatch {
                        op: "embedding-lookup",
                        detail: format!("table must be rank 2, got {:?}", table.shape()),
                    });
                }
                let (v, d) = table.dims2();
                let mut out = Vec::with_capacity(indices.len() * d);
                for &idx in indices {
                    if idx >= v {
                        return Err(Error::InvalidInput(format!(
                            "embedding index {idx} out of range for table with {v} rows"
                        )));
                    }
                    out.extend_from_slice(&table.data()[idx * d..(idx + 1) * d]);
                }
                Tensor::new(vec![indices.len(), d], out)
            }
            Op::Transpose => {
                let x = unary(op, inputs)?;
                let x = t(&x);
                let (m, n) = x.dims2();
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = x.data()[i * n + j];
                    }
                }
                Tensor::new(vec![n, m], out)
            }
            Op::FrobNormSq => {
                let x = unary(op, inputs)?;
                Ok(Tensor::scalar(t(&x).data().iter().map(|v| v * v).sum()))
            }
            Op::L2Norm => {
                let x = unary(op, inputs)?;
                let ss: f64 = t(&x).data().iter().map(|v| v * v).sum();
                Ok(Tensor::scalar(ss.sqrt()))
            }
            Op::Mean => {
                let x = unary(op, inputs)?;
                let x = t(&x);
                if x.numel() == 0 {
                    return Err(Error::Domain { op: "mean", detail: "empty tensor".into() });
                }
                Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64))
            }
            Op::Sum => {
                let x = unary(op, inputs)?;
                Ok(Tensor::scalar(t(&x).data().iter().sum()))
            }
            Op::MaskFill { fill } => {
                let (x, mask) = binary(op, inputs)?;
                let (x, mask) = (t(&x), t(&mask));
                if x.shape() != mask.shape() {
                    return Err(shape_err(op, x, mask));
                }
                let data = x
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(&v, &m)| if m != 0.0 { v } else { *fill })
                    .collect();
                Tensor::new(x.shape().to_vec(), data)
            }
        }
    }

    // ── backward implementations ────────────────────────────────────

    fn backward_record(&mut self, rec: &Record) {
        let d_out = self.grads[rec.output.0].clone().expect("checked by caller");
        match &rec.op {
            Op::MatMul => {
                let (a, b) = (rec.inputs[0], rec.inputs[1]);
                let (m, k) = self.vals[a.0].dims2();
                let (_, n) = self.vals[b.0].dims2();
                // dA = d @ B^T
                let mut da = vec![0.0; m * k];
                {
                    let bd = self.vals[b.0].data();
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += d_out[i * n + j] * bd[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                }
                // dB = A^T @ d
                let mut db = vec![0.0; k * n];
                {
                    let ad = self.vals[a.0].data();
                    for p in 0..k {
                        for i in 0..m {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += av * d_out[i * n + j];
                            }
                        }
                    }
                }
                self.acc(a, da);
                self.acc(b, db);
            }
            Op::Add | Op::Sub => {
                let (a, b) = (rec.inputs[0], rec.inputs[1]);
                let sign = if matches!(rec.op, Op::Sub) { -1.0 } else { 1.0 };
                self.acc_broadcast(a, &d_out, 1.0);
                self.acc_broadcast(b, &d_out, sign);
            }
            Op::Mul => {
                let (a, b) = (rec.inputs[0], rec.inputs[1]);
                let da = self.elementwise_grad_factor(&d_out, b, a);
                let db = self.elementwise_grad_factor(&d_out, a, b);
                self.acc(a, da);
                self.acc(b, db);
            }
            Op::Div => {
                // out = a / b; da = d / b; db = -d * a / b^2
                let (a, b) = (rec.inputs[0], rec.inputs[1]);
                let ad = self.vals[a.0].data().to_vec();
                let bd = self.vals[b.0].data().to_vec();
                let na = ad.len();
                let nb = bd.len();
                let n = na.max(nb);
                let mut da = vec![0.0; na];
                let mut db = vec![0.0; nb];
                for i in 0..n {
                    let av = ad[if na == 1 { 0 } else { i }];
                    let bv = bd[if nb == 1 { 0 } else { i }];
                    let d = d_out[i];
                    da[if na == 1 { 0 } else { i }] += d / bv;
                    db[if nb == 1 { 0 } else { i }] += -d * av / (bv * bv);
                }
                self.acc(a, da);
                self.acc(b, db);
            }
            Op::Concat { axis } => {
                let shapes: Vec<(usize, usize)> =
                    rec.inputs.iter().map(|id| self.vals[id.0].dims2()).collect();
                if *axis == 0 {
                    let mut offset = 0;
                    for (idx, &(r, c)) in rec.inputs.iter().zip(&shapes) {
                        let len = r * c;
                        self.acc(*idx, d_out[offset..offset + len].to_vec());
                        offset += len;
                    }
                } else {
                    let rows = shapes[0].0;
                    let total_cols: usize = shapes.iter().map(|s| s.1).sum();
                    let mut col_off = 0;
                    for (idx, &(r, c)) in rec.inputs.iter().zip(&shapes) {
                        let mut part = vec![0.0; r * c];
                        for i in 0..rows {
                            for j in 0..c {
                                part[i * c + j] = d_out[i * total_cols + col_off + j];
                            }
                        }
                        self.acc(*idx, part);
                        col_off += c;
                    }
                }
            }
            Op::Tanh => {
                let x = rec.inputs[0];
                let y = self.vals[rec.output.0].data();
                let dx: Vec<f64> =
                    d_out.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect();
                self.acc(x, dx);
            }
            Op::Sigmoid => {
                let x = rec.inputs[0];
                let y = self.vals[rec.output.0].data();
                let dx: Vec<f64> = d_out.iter().zip(y).map(|(d, y)| d * y * (1.0 - y)).collect();
                self.acc(x, dx);
            }
            Op::Log => {
                let x = rec.inputs[0];
                let xd = self.vals[x.0].data();
                let dx: Vec<f64> = d_out.iter().zip(xd).map(|(d, x)| d / x).collect();
                self.acc(x, dx);
            }
            Op::Softmax => {
                let x = rec.inputs[0];
                let y = self.vals[rec.output.0].clone();
                let (rows, cols) = y.dims2();
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    let yrow = &y.data()[i * cols..(i + 1) * cols];
                    let drow = &d_out[i * cols..(i + 1) * cols];
                    let dot: f64 = yrow.iter().zip(drow).map(|(y, d)| y * d).sum();
                    for j in 0..cols {
                        dx[i * cols + j] = yrow[j] * (drow[j] - dot);
                    }
                }
                self.acc(x, dx);
            }
            Op::EmbedLookup { indices } => {
                let table = rec.inputs[0];
                let (_, d) = self.vals[table.0].dims2();
                let mut dt = vec![0.0; self.vals[table.0].numel()];
                for (row, &idx) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[idx * d + j] += d_out[row * d + j];
                    }
                }
                self.acc(table, dt);
            }
            Op::Transpose => {
                let x = rec.inputs[0];
                let (m, n) = self.vals[x.0].dims2();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = d_out[j * m + i];
                    }
                }
                self.acc(x, dx);
            }
            Op::FrobNormSq => {
                let x = rec.inputs[0];
                let d = d_out[0];
                let dx: Vec<f64> = self.vals[x.0].data().iter().map(|v| 2.0 * v * d).collect();
                self.acc(x, dx);
            }
            Op::L2Norm => {
                let x = rec.inputs[0];
                let norm = self.vals[rec.output.0].data()[0];
                if norm > 0.0 {
                    let d = d_out[0];
                    let dx: Vec<f64> =
                        self.vals[x.0].data().iter().map(|v| d * v / norm).collect();
                    self.acc(x, dx);
                }
            }
            Op::Mean => {
                let x = rec.inputs[0];
                let n = self.vals[x.0].numel() as f64;
                let d = d_out[0] / n;
                self.acc(x, vec![d; self.vals[x.0].numel()]);
            }
            Op::Sum => {
                let x = rec.inputs[0];
                let d = d_out[0];
                self.acc(x, vec![d; self.vals[x.0].numel()]);
            }
            Op::MaskFill { .. } => {
                let (x, mask) = (rec.inputs[0], rec.inputs[1]);
                let md = self.vals[mask.0].data();
                let dx: Vec<f64> = d_out
                    .iter()
                    .zip(md)
                    .map(|(d, m)| if *m != 0.0 { *d } else { 0.0 })
                    .collect();
                self.acc(x, dx);
            }
        }
    }

    /// Accumulate `sign * d` into `id`, summing when `id` is a broadcast scalar.
    fn acc_broadcast(&mut self, id: TensorId, d_out: &[f64], sign: f64) {
        let n = self.vals[id.0].numel();
        if n == 1 && d_out.len() > 1 {
            self.acc(id, vec![sign * d_out.iter().sum::<f64>()]);
        } else {
            self.acc(id, d_out.iter().map(|d| sign * d).collect());
        }
    }

    /// Gradient of `mul`: `d * other`, reduced to `target`'s shape.
    fn elementwise_grad_factor(
        &self,
        d_out: &[f64],
        other: TensorId,
        target: TensorId,
    ) -> Vec<f64> {
        let od = self.vals[other.0].data();
        let nt = self.vals[target.0].numel();
        let no = od.len();
        if nt == 1 && d_out.len() > 1 {
            // target was broadcast: sum d*other over all positions
            let s = d_out
                .iter()
                .enumerate()
                .map(|(i, d)| d * od[if no == 1 { 0 } else { i }])
                .sum();
            vec![s]
        } else {
            d_out
                .iter()
                .enumerate()
                .map(|(i, d)| d * od[if no == 1 { 0 } else { i }])
                .collect()
        }
    }
}

// ── shared forward helpers ──────────────────────────────────────────

fn unary(op: &Op, inputs: &[TensorId]) -> Result<TensorId> {
    if inputs.len() != 1 {
        return Err(Error::ShapeMismatch {
            op: op.name(),
            detail: format!("expects 1 operand, got {}", inputs.len()),
        });
    }
    Ok(inputs[0])
}

fn binary(op: &Op, inputs: &[TensorId]) -> Result<(TensorId, TensorId)> {
    if inputs.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: op.name(),
            detail: format!("expects 2 operands, got {}", inputs.len()),
        });
    }
    Ok((inputs[0], inputs[1]))
}

fn shape_err(op: &Op, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        detail: format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape()),
    }
}

fn elementwise(op: &Op, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let compatible = a.shape() == b.shape() || a.is_scalar() || b.is_scalar();
    if !compatible {
        return Err(shape_err(op, a, b));
    }
    let n = a.numel().max(b.numel());
    let shape = if a.numel() >= b.numel() { a.shape() } else { b.shape() };
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let av = ad[if na == 1 { 0 } else { i }];
        let bv = bd[if nb == 1 { 0 } else { i }];
        out.push(match op {
            Op::Add => av + bv,
            Op::Sub => av - bv,
            Op::Mul => av * bv,
            _ => av / bv,
        });
    }
    Tensor::new(shape.to_vec(), out)
}

fn concat_forward(axis: usize, parts: &[&Tensor]) -> Result<Tensor> {
    if axis == 0 {
        let rank1 = parts.iter().all(|t| t.shape().len() == 1);
        if rank1 {
            let mut data = Vec::new();
            for t in parts {
                data.extend_from_slice(t.data());
            }
            let n = data.len();
            return Tensor::new(vec![n], data);
        }
        let cols = parts[0].dims2().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for t in parts {
            let (r, c) = t.dims2();
            if c != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    detail: format!("row concat wants {cols} cols, got {:?}", t.shape()),
                });
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        Tensor::new(vec![rows, cols], data)
    } else {
        let rows = parts[0].dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|t| {
                let (r, c) = t.dims2();
                if r != rows {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        detail: format!("col concat wants {rows} rows, got {:?}", t.shape()),
                    });
                }
                Ok(c)
            })
            .collect::<Result<_>>()?;
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (t, &w) in parts.iter().zip(&widths) {
            for i in 0..rows {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
            off += w;
        }
        Tensor::new(vec![rows, total], data)
    }
}

fn softmax_forward(x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2();
    if cols == 0 {
        return Err(Error::ShapeMismatch { op: "softmax", detail: "zero-width row".into() });
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &x.data()[i * cols..(i + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::AllMasked { row: i });
        }
        let mut sum = 0.0;
        for j in 0..cols {
            let e = (row[j] - max).exp();
            out[i * cols + j] = e;
            sum += e;
        }
        for j in 0..cols {
            out[i * cols + j] /= sum;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

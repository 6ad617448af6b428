use rand::Rng;

use super::gru::GruCache;
use super::{axis_split, numel, Real, Tensor};
use crate::error::{Error, Result};

/// How a per-position loss is reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    /// Mean over the positions that carry a label.
    Mean,
}

pub(crate) enum Op<F: Real> {
    Leaf,
    Matmul(Tensor<F>, Tensor<F>),
    Transpose(Tensor<F>),
    Add(Tensor<F>, Tensor<F>),
    Sub(Tensor<F>, Tensor<F>),
    Mul(Tensor<F>, Tensor<F>),
    Scale(Tensor<F>, F),
    Sigmoid(Tensor<F>),
    Tanh(Tensor<F>),
    Relu(Tensor<F>),
    Softmax {
        x: Tensor<F>,
        axis: usize,
    },
    MaxReduce {
        x: Tensor<F>,
        argmax: Vec<usize>,
    },
    SumAxis {
        x: Tensor<F>,
        axis: usize,
    },
    SumAll(Tensor<F>),
    Concat {
        parts: Vec<Tensor<F>>,
        axis: usize,
    },
    Narrow {
        x: Tensor<F>,
        axis: usize,
        start: usize,
    },
    Reshape(Tensor<F>),
    GatherRows {
        table: Tensor<F>,
        rows: Vec<Option<usize>>,
    },
    CrossEntropy {
        logits: Tensor<F>,
        targets: Vec<Option<usize>>,
        probs: Vec<F>,
        scale: F,
    },
    BinaryCrossEntropy {
        logits: Tensor<F>,
        targets: Vec<Option<F>>,
        scale: F,
    },
    GruScan {
        xw: Tensor<F>,
        w_hh: Tensor<F>,
        cache: GruCache<F>,
    },
}

impl<F: Real> Op<F> {
    pub(crate) fn inputs(&self) -> Vec<&Tensor<F>> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::SumAll(x)
            | Op::Reshape(x) => vec![x],
            Op::Softmax { x, .. }
            | Op::MaxReduce { x, .. }
            | Op::SumAxis { x, .. }
            | Op::Narrow { x, .. } => vec![x],
            Op::Concat { parts, .. } => parts.iter().collect(),
            Op::GatherRows { table, .. } => vec![table],
            Op::CrossEntropy { logits, .. } | Op::BinaryCrossEntropy { logits, .. } => vec![logits],
            Op::GruScan { xw, w_hh, .. } => vec![xw, w_hh],
        }
    }
}

/// Broadcast shape of two operands. Ranks are aligned on the right by
/// prepending length-1 axes; an axis either matches or one side is 1.
fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| -> Vec<usize> {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(op, a, b)),
        })
        .collect()
}

/// For each flat output index, the flat index of the broadcast input.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut padded = vec![1; rank - input.len()];
    padded.extend_from_slice(input);
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for ax in (0..rank).rev() {
        strides[ax] = if padded[ax] == 1 { 0 } else { acc };
        acc *= padded[ax];
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..total {
        map.push(flat);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            flat += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            flat -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn binary<F: Real>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    name: &'static str,
    f: impl Fn(F, F) -> F,
    op: fn(Tensor<F>, Tensor<F>) -> Op<F>,
) -> Result<Tensor<F>> {
    let out_shape = broadcast_shape(a.shape(), b.shape(), name)?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<F> = if a.shape() == b.shape() {
        ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let ma = broadcast_map(&out_shape, a.shape());
        let mb = broadcast_map(&out_shape, b.shape());
        ma.iter().zip(&mb).map(|(&i, &j)| f(ad[i], bd[j])).collect()
    };
    drop((ad, bd));
    Ok(Tensor::from_op(data, out_shape, op(a.clone(), b.clone())))
}

/// Accumulates an output-shaped gradient into a possibly broadcast input.
fn reduce_broadcast<F: Real>(input: &Tensor<F>, out_shape: &[usize], g: &[F]) {
    if !input.requires_grad() {
        return;
    }
    if input.shape() == out_shape {
        input.accumulate_grad(g);
        return;
    }
    let map = broadcast_map(out_shape, input.shape());
    let mut acc = vec![F::zero(); input.numel()];
    for (&j, &v) in map.iter().zip(g) {
        acc[j] += v;
    }
    input.accumulate_grad(&acc);
}

fn unary<F: Real>(x: &Tensor<F>, f: impl Fn(F) -> F, op: fn(Tensor<F>) -> Op<F>) -> Tensor<F> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(data, x.shape().to_vec(), op(x.clone()))
}

fn sigmoid_scalar<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

fn check_axis<F: Real>(x: &Tensor<F>, axis: usize, op: &'static str) -> Result<()> {
    if axis >= x.rank() {
        return Err(Error::shape(op, x.shape(), &[axis]));
    }
    Ok(())
}

fn check_finite<F: Real>(data: &[F], op: &'static str) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            op,
            detail: format!("non-finite input at flat index {pos}"),
        });
    }
    Ok(())
}

impl<F: Real> Tensor<F> {
    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if self.rank() != 2 || other.rank() != 2 || self.dim(1) != other.dim(0) {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.dim(0), self.dim(1), other.dim(1));
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m,
            k,
            n,
            &self.data(),
            (k, 1),
            &other.data(),
            (n, 1),
            F::zero(),
            &mut out,
        );
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor<F>> {
        if self.rank() != 2 {
            return Err(Error::shape("transpose", self.shape(), &[2]));
        }
        let (r, c) = (self.dim(0), self.dim(1));
        let d = self.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            out,
            vec![c, r],
            Op::Transpose(self.clone()),
        ))
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(self, other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(self, other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(self, other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&self, s: F) -> Tensor<F> {
        let data = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Scale(self.clone(), s))
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        unary(self, sigmoid_scalar, Op::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor<F> {
        unary(self, |v| v.tanh(), Op::Tanh)
    }

    pub fn relu(&self) -> Tensor<F> {
        if super::kinks::enabled() {
            super::kinks::record(self.data().iter().map(|&v| (v > F::zero()) as u64));
        }
        unary(
            self,
            |v| if v > F::zero() { v } else { F::zero() },
            Op::Relu,
        )
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<F>> {
        check_axis(self, axis, "softmax")?;
        let d = self.data();
        check_finite(&d, "softmax")?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut out = vec![F::zero(); d.len()];
        for o in 0..outer {
            for k in 0..inner {
                let at = |i: usize| (o * len + i) * inner + k;
                let mut max = d[at(0)];
                for i in 1..len {
                    max = max.max(d[at(i)]);
                }
                let mut total = F::zero();
                for i in 0..len {
                    let e = (d[at(i)] - max).exp();
                    out[at(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    out[at(i)] = out[at(i)] / total;
                }
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::Softmax {
                x: self.clone(),
                axis,
            },
        ))
    }

    /// Maximum along `axis`, keeping it as a length-1 axis. The gradient goes
    /// to the lowest-index maximiser.
    pub fn max_reduce(&self, axis: usize) -> Result<Tensor<F>> {
        check_axis(self, axis, "max_reduce")?;
        let d = self.data();
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for k in 0..inner {
                let mut best = o * len * inner + k;
                for i in 1..len {
                    let at = (o * len + i) * inner + k;
                    if d[at] > d[best] {
                        best = at;
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
        drop(d);
        if super::kinks::enabled() {
            super::kinks::record(argmax.iter().map(|&i| i as u64));
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::MaxReduce {
                x: self.clone(),
                argmax,
            },
        ))
    }

    /// Sum along `axis`, keeping it as a length-1 axis.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<F>> {
        check_axis(self, axis, "sum_axis")?;
        let d = self.data();
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..len {
                for k in 0..inner {
                    out[o * inner + k] += d[(o * len + i) * inner + k];
                }
            }
        }
        drop(d);
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::SumAxis {
                x: self.clone(),
                axis,
            },
        ))
    }

    pub fn sum(&self) -> Tensor<F> {
        let total = self.data().iter().copied().sum();
        Tensor::from_op(vec![total], vec![1], Op::SumAll(self.clone()))
    }

    pub fn mean(&self) -> Tensor<F> {
        let n = F::lit(self.numel() as f64);
        self.sum().scale(F::one() / n)
    }

    /// Joins tensors along `axis`; every other axis must agree.
    pub fn concat(parts: &[Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        check_axis(first, axis, "concat")?;
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        if parts.len() == 1 {
            return Ok(first.clone());
        }
        let (outer, _, inner) = axis_split(first.shape(), axis);
        let total_len: usize = parts.iter().map(|p| p.dim(axis)).sum();
        let mut out = Vec::with_capacity(outer * total_len * inner);
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (p, d) in parts.iter().zip(&datas) {
                let block = p.dim(axis) * inner;
                out.extend_from_slice(&d[o * block..(o + 1) * block]);
            }
        }
        drop(datas);
        let mut shape = first.shape().to_vec();
        shape[axis] = total_len;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
        check_axis(self, axis, "narrow")?;
        if len == 0 || start + len > self.dim(axis) {
            return Err(Error::shape("narrow", self.shape(), &[start, len]));
        }
        let (outer, full, inner) = axis_split(self.shape(), axis);
        let d = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        drop(d);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Narrow {
                x: self.clone(),
                axis,
                start,
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Row gather from a rank-2 table. `None` yields a zero row that
    /// receives no gradient.
    pub fn gather_rows(&self, rows: &[Option<usize>]) -> Result<Tensor<F>> {
        if self.rank() != 2 {
            return Err(Error::shape("gather_rows", self.shape(), &[2]));
        }
        let (n, w) = (self.dim(0), self.dim(1));
        if let Some(bad) = rows.iter().flatten().find(|&&r| r >= n) {
            return Err(Error::Data(format!(
                "row id {bad} out of range for table with {n} rows"
            )));
        }
        if rows.is_empty() {
            return Err(Error::shape("gather_rows", self.shape(), &[0]));
        }
        let d = self.data();
        let mut out = Vec::with_capacity(rows.len() * w);
        for r in rows {
            match r {
                Some(r) => out.extend_from_slice(&d[r * w..(r + 1) * w]),
                None => out.extend(std::iter::repeat_n(F::zero(), w)),
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            out,
            vec![rows.len(), w],
            Op::GatherRows {
                table: self.clone(),
                rows: rows.to_vec(),
            },
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)` so evaluation
    /// needs no rescaling. Identity when not training or `rate == 0`.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Tensor<F>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Usage(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = F::lit(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.numel())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        self.mul(&Tensor::new(mask, self.shape())?)
    }

    /// Softmax cross-entropy of `n×c` logits against class targets; rows
    /// with `None` targets contribute nothing.
    pub fn cross_entropy(
        &self,
        targets: &[Option<usize>],
        reduction: Reduction,
    ) -> Result<Tensor<F>> {
        if self.rank() != 2 || targets.len() != self.dim(0) {
            return Err(Error::shape(
                "cross_entropy",
                self.shape(),
                &[targets.len()],
            ));
        }
        let c = self.dim(1);
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::Label(format!(
                "target class {bad} out of range for {c} classes"
            )));
        }
        let probs = self.softmax(1)?.detach().to_vec();
        let d = self.data();
        let labelled = targets.iter().flatten().count();
        let scale = match reduction {
            Reduction::Sum => F::one(),
            Reduction::Mean if labelled > 0 => F::one() / F::lit(labelled as f64),
            Reduction::Mean => F::zero(),
        };
        let mut total = F::zero();
        for (row, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let logits = &d[row * c..(row + 1) * c];
                let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
                let lse = logits.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
                total += lse - logits[t];
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            vec![total * scale],
            vec![1],
            Op::CrossEntropy {
                logits: self.clone(),
                targets: targets.to_vec(),
                probs,
                scale,
            },
        ))
    }

    /// Sigmoid binary cross-entropy per element; `None` targets are masked.
    pub fn binary_cross_entropy(
        &self,
        targets: &[Option<F>],
        reduction: Reduction,
    ) -> Result<Tensor<F>> {
        if targets.len() != self.numel() {
            return Err(Error::shape(
                "binary_cross_entropy",
                self.shape(),
                &[targets.len()],
            ));
        }
        if let Some(bad) = targets
            .iter()
            .flatten()
            .find(|y| **y < F::zero() || **y > F::one())
        {
            return Err(Error::Label(format!("binary target {bad} outside [0, 1]")));
        }
        let labelled = targets.iter().flatten().count();
        let scale = match reduction {
            Reduction::Sum => F::one(),
            Reduction::Mean if labelled > 0 => F::one() / F::lit(labelled as f64),
            Reduction::Mean => F::zero(),
        };
        let d = self.data();
        let mut total = F::zero();
        for (&x, y) in d.iter().zip(targets) {
            if let Some(y) = *y {
                total += x.max(F::zero()) - x * y + (F::one() + (-x.abs()).exp()).ln();
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            vec![total * scale],
            vec![1],
            Op::BinaryCrossEntropy {
                logits: self.clone(),
                targets: targets.to_vec(),
                scale,
            },
        ))
    }
}

pub(crate) fn backward_op<F: Real>(node: &Tensor<F>, g: &[F]) {
    match &node.0.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
            if a.requires_grad() {
                // dA = dC · Bᵀ
                let mut da = vec![F::zero(); m * k];
                F::gemm(m, n, k, g, (n, 1), &b.data(), (1, n), F::zero(), &mut da);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                // dB = Aᵀ · dC
                let mut db = vec![F::zero(); k * n];
                F::gemm(k, m, n, &a.data(), (1, k), g, (n, 1), F::zero(), &mut db);
                b.accumulate_grad(&db);
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (x.dim(0), x.dim(1));
            let mut dx = vec![F::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    dx[i * c + j] = g[j * r + i];
                }
            }
            x.accumulate_grad(&dx);
        }
        Op::Add(a, b) => {
            reduce_broadcast(a, node.shape(), g);
            reduce_broadcast(b, node.shape(), g);
        }
        Op::Sub(a, b) => {
            reduce_broadcast(a, node.shape(), g);
            let neg: Vec<F> = g.iter().map(|&v| -v).collect();
            reduce_broadcast(b, node.shape(), &neg);
        }
        Op::Mul(a, b) => {
            let out = node.shape();
            let (ad, bd) = (a.data(), b.data());
            let (ga, gb): (Vec<F>, Vec<F>) = if a.shape() == b.shape() {
                g.iter()
                    .zip(ad.iter().zip(bd.iter()))
                    .map(|(&gv, (&x, &y))| (gv * y, gv * x))
                    .unzip()
            } else {
                let ma = broadcast_map(out, a.shape());
                let mb = broadcast_map(out, b.shape());
                g.iter()
                    .zip(ma.iter().zip(&mb))
                    .map(|(&gv, (&i, &j))| (gv * bd[j], gv * ad[i]))
                    .unzip()
            };
            drop((ad, bd));
            reduce_broadcast(a, out, &ga);
            reduce_broadcast(b, out, &gb);
        }
        Op::Scale(x, s) => {
            let dx: Vec<F> = g.iter().map(|&v| v * *s).collect();
            x.accumulate_grad(&dx);
        }
        Op::Sigmoid(x) => {
            let y = node.data();
            let dx: Vec<F> = g
                .iter()
                .zip(y.iter())
                .map(|(&gv, &s)| gv * s * (F::one() - s))
                .collect();
            drop(y);
            x.accumulate_grad(&dx);
        }
        Op::Tanh(x) => {
            let y = node.data();
            let dx: Vec<F> = g
                .iter()
                .zip(y.iter())
                .map(|(&gv, &t)| gv * (F::one() - t * t))
                .collect();
            drop(y);
            x.accumulate_grad(&dx);
        }
        Op::Relu(x) => {
            let xd = x.data();
            let dx: Vec<F> = g
                .iter()
                .zip(xd.iter())
                .map(|(&gv, &v)| if v > F::zero() { gv } else { F::zero() })
                .collect();
            drop(xd);
            x.accumulate_grad(&dx);
        }
        Op::Softmax { x, axis } => {
            let y = node.data();
            let (outer, len, inner) = axis_split(node.shape(), *axis);
            let mut dx = vec![F::zero(); y.len()];
            for o in 0..outer {
                for k in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + k;
                    let dot: F = (0..len).map(|i| g[at(i)] * y[at(i)]).sum();
                    for i in 0..len {
                        dx[at(i)] = y[at(i)] * (g[at(i)] - dot);
                    }
                }
            }
            drop(y);
            x.accumulate_grad(&dx);
        }
        Op::MaxReduce { x, argmax } => {
            let mut dx = vec![F::zero(); x.numel()];
            for (&src, &gv) in argmax.iter().zip(g) {
                dx[src] += gv;
            }
            x.accumulate_grad(&dx);
        }
        Op::SumAxis { x, axis } => {
            let (outer, len, inner) = axis_split(x.shape(), *axis);
            let mut dx = vec![F::zero(); x.numel()];
            for o in 0..outer {
                for i in 0..len {
                    for k in 0..inner {
                        dx[(o * len + i) * inner + k] = g[o * inner + k];
                    }
                }
            }
            x.accumulate_grad(&dx);
        }
        Op::SumAll(x) => {
            x.accumulate_grad(&vec![g[0]; x.numel()]);
        }
        Op::Concat { parts, axis } => {
            let (outer, _, inner) = axis_split(parts[0].shape(), *axis);
            let total_len = node.dim(*axis);
            let mut offset = 0;
            for p in parts {
                let block = p.dim(*axis) * inner;
                if p.requires_grad() {
                    let mut dp = Vec::with_capacity(p.numel());
                    for o in 0..outer {
                        let base = o * total_len * inner + offset;
                        dp.extend_from_slice(&g[base..base + block]);
                    }
                    p.accumulate_grad(&dp);
                }
                offset += block;
            }
        }
        Op::Narrow { x, axis, start } => {
            let (outer, full, inner) = axis_split(x.shape(), *axis);
            let len = node.dim(*axis);
            let mut dx = vec![F::zero(); x.numel()];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                dx[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            x.accumulate_grad(&dx);
        }
        Op::Reshape(x) => x.accumulate_grad(g),
        Op::GatherRows { table, rows } => {
            let w = table.dim(1);
            let mut dt = vec![F::zero(); table.numel()];
            for (i, r) in rows.iter().enumerate() {
                if let Some(r) = r {
                    for k in 0..w {
                        dt[r * w + k] += g[i * w + k];
                    }
                }
            }
            table.accumulate_grad(&dt);
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
            scale,
        } => {
            let c = logits.dim(1);
            let mut dx = vec![F::zero(); logits.numel()];
            let coef = g[0] * *scale;
            for (row, t) in targets.iter().enumerate() {
                if let Some(t) = *t {
                    for j in 0..c {
                        dx[row * c + j] = coef * probs[row * c + j];
                    }
                    dx[row * c + t] -= coef;
                }
            }
            logits.accumulate_grad(&dx);
        }
        Op::BinaryCrossEntropy {
            logits,
            targets,
            scale,
        } => {
            let coef = g[0] * *scale;
            let xd = logits.data();
            let dx: Vec<F> = xd
                .iter()
                .zip(targets)
                .map(|(&x, y)| match y {
                    Some(y) => coef * (sigmoid_scalar(x) - *y),
                    None => F::zero(),
                })
                .collect();
            drop(xd);
            logits.accumulate_grad(&dx);
        }
        Op::GruScan { xw, w_hh, cache } => cache.backward(xw, w_hh, g),
    }
}

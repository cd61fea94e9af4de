//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Learnable
//! tensors live in a [`ParamStore`]; [`Tape::backward`] walks the record in
//! reverse and adds `d loss / d param` into the store's gradient slots, so two
//! backward passes without [`ParamStore::zero_grad`] accumulate.
//!
//! Conventions at non-smooth points: ReLU and |x| have derivative 0 at 0,
//! LeakyReLU uses the negative slope at 0.

use std::cell::{Ref, RefCell};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a learnable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named learnable tensors and their accumulated gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry { name, value, grad });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    /// Replace a parameter value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{}' has shape {:?} in the model but {:?} was supplied",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = Tensor::zeros(e.value.shape());
        }
    }

    fn accumulate(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        self.entries[id.0].grad.add_assign(g)
    }
}

/// Handle to a recorded value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor<T>),
    Scale(Var, T),
    Transpose(Var),
    AddRow(Var, Var),
    Relu(Var),
    LnFloor(Var, T),
    Powf(Var, T),
    LeakyRelu(Var, T),
    Elu(Var, T),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
    },
    Sum(Var),
    AbsSum(Var),
    Frobenius(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Nll {
        probs: Var,
        target: Vec<T>,
        floor: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of a forward computation. Confined to one thread.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Borrow a recorded value.
    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(&self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(&self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(&self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(&self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise product with a fixed (non-differentiated) tensor.
    pub fn mul_const(&self, a: Var, c: Tensor<T>) -> Result<Var> {
        let v = self.value(a).hadamard(&c)?;
        Ok(self.push(v, Op::MulConst(a, c)))
    }

    pub fn scale(&self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Row-wise bias addition, the only broadcast supported.
    pub fn add_row(&self, x: Var, bias: Var) -> Result<Var> {
        let v = self.value(x).add_row(&self.value(bias))?;
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn relu(&self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        self.push(v, Op::Relu(x))
    }

    /// `ln(max(x, floor))`; zero derivative where the floor is active.
    pub fn ln_floor(&self, x: Var, floor: T) -> Var {
        let v = self.value(x).map(|a| at_least(a, floor).ln());
        self.push(v, Op::LnFloor(x, floor))
    }

    /// Elementwise `x^p` for positive `x`.
    pub fn powf(&self, x: Var, p: T) -> Var {
        let v = self.value(x).map(|a| a.powf(p));
        self.push(v, Op::Powf(x, p))
    }

    pub fn leaky_relu(&self, x: Var, slope: T) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { a * slope });
        self.push(v, Op::LeakyRelu(x, slope))
    }

    pub fn elu(&self, x: Var, alpha: T) -> Var {
        let v = self
            .value(x)
            .map(|a| if a > T::zero() { a } else { alpha * (a.exp() - T::one()) });
        self.push(v, Op::Elu(x, alpha))
    }

    /// Softmax along each row. Entries where `mask` is false get probability
    /// zero; a fully masked row is all zeros.
    pub fn softmax_rows(&self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let v = {
            let xv = self.value(x);
            if let Some(m) = &mask {
                if m.len() != xv.len() {
                    return Err(Error::Dimension {
                        op: "softmax_rows mask",
                        left: xv.shape().to_vec(),
                        right: vec![m.len()],
                    });
                }
            }
            softmax_rows_value(&xv, mask.as_deref())
        };
        Ok(self.push(v, Op::SoftmaxRows(x)))
    }

    /// Layer normalization over each row with per-column scale and shift.
    pub fn layer_norm_rows(&self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, normalized, inv_std) = {
            let xv = self.value(x);
            let g = self.value(gamma);
            let b = self.value(beta);
            let c = xv.cols();
            if g.len() != c || b.len() != c {
                return Err(Error::Dimension {
                    op: "layer_norm_rows",
                    left: xv.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let n = T::of(c as f64);
            let mut normalized = xv.clone();
            let mut inv_std = Vec::with_capacity(xv.rows());
            for i in 0..xv.rows() {
                let row = xv.row(i);
                let mean = row.iter().copied().sum::<T>() / n;
                let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
                let is = T::one() / (var + eps).sqrt();
                inv_std.push(is);
                for j in 0..c {
                    normalized.set(i, j, (row[j] - mean) * is);
                }
            }
            let mut out = normalized.clone();
            for i in 0..out.rows() {
                for j in 0..c {
                    let v = normalized.get(i, j) * g.as_slice()[j] + b.as_slice()[j];
                    out.set(i, j, v);
                }
            }
            (out, normalized, inv_std)
        };
        Ok(self.push(
            out,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    pub fn sum(&self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Entrywise L1 norm.
    pub fn abs_sum(&self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).as_slice().iter().map(|a| a.abs()).sum());
        self.push(v, Op::AbsSum(x))
    }

    /// Entrywise L2 (Frobenius) norm.
    pub fn frobenius(&self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).frobenius());
        self.push(v, Op::Frobenius(x))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let v = {
            let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let rows = vals.first().map_or(0, |v| v.rows());
            if let Some(bad) = vals.iter().find(|v| v.rows() != rows) {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: vals[0].shape().to_vec(),
                    right: bad.shape().to_vec(),
                });
            }
            let cols: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(i));
                }
            }
            Tensor::new(vec![rows, cols], data)?
        };
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = {
            let xv = self.value(x);
            if start > end || end > xv.cols() {
                return Err(Error::contract(format!(
                    "column slice {start}..{end} out of range for {:?}",
                    xv.shape()
                )));
            }
            xv.submatrix(0..xv.rows(), start..end)
        };
        Ok(self.push(v, Op::SliceCols(x, start, end)))
    }

    /// `-sum_c target_c * ln(max(p_c, floor))` for a probability row.
    pub fn nll(&self, probs: Var, target: &[T], floor: T) -> Result<Var> {
        let v = {
            let p = self.value(probs);
            if p.len() != target.len() {
                return Err(Error::Dimension {
                    op: "nll",
                    left: p.shape().to_vec(),
                    right: vec![target.len()],
                });
            }
            let loss: T = p
                .as_slice()
                .iter()
                .zip(target)
                .map(|(&pc, &y)| if y == T::zero() { T::zero() } else { -y * at_least(pc, floor).ln() })
                .sum();
            Tensor::scalar(loss)
        };
        Ok(self.push(
            v,
            Op::Nll {
                probs,
                target: target.to_vec(),
                floor,
            },
        ))
    }

    /// Back-propagate from a scalar `loss`, adding parameter gradients into
    /// `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(nodes[loss.0].value.shape()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let val = |v: Var| &nodes[v.0].value;
            let mut send = |v: Var, d: Tensor<T>| -> Result<()> {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => {
                        *slot = Some(d);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate(*id, &g)?,
                Op::MatMul(a, b) => {
                    send(*a, g.matmul(&val(*b).transpose())?.reshape(val(*a).shape())?)?;
                    send(*b, val(*a).transpose().matmul(&g)?.reshape(val(*b).shape())?)?;
                }
                Op::Add(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g.scale(-T::one()))?;
                }
                Op::Mul(a, b) => {
                    send(*a, g.hadamard(val(*b))?)?;
                    send(*b, g.hadamard(val(*a))?)?;
                }
                Op::MulConst(a, c) => send(*a, g.hadamard(c)?)?,
                Op::Scale(a, s) => send(*a, g.scale(*s))?,
                Op::Transpose(a) => send(*a, g.transpose().reshape(val(*a).shape())?)?,
                Op::AddRow(x, b) => {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for i in 0..g.rows() {
                        for (acc, &v) in db.iter_mut().zip(g.row(i)) {
                            *acc = *acc + v;
                        }
                    }
                    send(*b, Tensor::new(val(*b).shape().to_vec(), db)?)?;
                    send(*x, g)?;
                }
                Op::Relu(x) => {
                    let d = val(*x).map(|a| if a > T::zero() { T::one() } else { T::zero() });
                    send(*x, g.hadamard(&d)?)?;
                }
                Op::LnFloor(x, floor) => {
                    let d = val(*x).map(|a| if a > *floor { T::one() / a } else { T::zero() });
                    send(*x, g.hadamard(&d)?)?;
                }
                Op::Powf(x, p) => {
                    let d = val(*x).map(|a| *p * a.powf(*p - T::one()));
                    send(*x, g.hadamard(&d)?)?;
                }
                Op::LeakyRelu(x, s) => {
                    let d = val(*x).map(|a| if a > T::zero() { T::one() } else { *s });
                    send(*x, g.hadamard(&d)?)?;
                }
                Op::Elu(x, alpha) => {
                    let d = val(*x).map(|a| if a > T::zero() { T::one() } else { *alpha * a.exp() });
                    send(*x, g.hadamard(&d)?)?;
                }
                Op::SoftmaxRows(x) => {
                    let p = &node.value;
                    let mut d = Tensor::zeros(p.shape());
                    for i in 0..p.rows() {
                        let dot: T = p.row(i).iter().zip(g.row(i)).map(|(&a, &b)| a * b).sum();
                        for j in 0..p.cols() {
                            d.set(i, j, p.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    send(*x, d)?;
                }
                Op::LayerNormRows {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let gam = val(*gamma).as_slice();
                    let (r, c) = (g.rows(), g.cols());
                    let n = T::of(c as f64);
                    let mut dg = vec![T::zero(); c];
                    let mut db = vec![T::zero(); c];
                    let mut dx = Tensor::zeros(val(*x).shape());
                    for i in 0..r {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..c {
                            let gij = g.get(i, j);
                            let h = normalized.get(i, j);
                            dg[j] = dg[j] + gij * h;
                            db[j] = db[j] + gij;
                            let dh = gij * gam[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * h;
                        }
                        for j in 0..c {
                            let h = normalized.get(i, j);
                            let dh = g.get(i, j) * gam[j];
                            dx.set(i, j, inv_std[i] / n * (n * dh - sum_dh - h * sum_dh_h));
                        }
                    }
                    send(*x, dx)?;
                    send(*gamma, Tensor::new(val(*gamma).shape().to_vec(), dg)?)?;
                    send(*beta, Tensor::new(val(*beta).shape().to_vec(), db)?)?;
                }
                Op::Sum(x) => {
                    let s = g.item()?;
                    send(*x, Tensor::full(val(*x).shape(), s))?;
                }
                Op::AbsSum(x) => {
                    let s = g.item()?;
                    let d = val(*x).map(|a| {
                        if a > T::zero() {
                            s
                        } else if a < T::zero() {
                            -s
                        } else {
                            T::zero()
                        }
                    });
                    send(*x, d)?;
                }
                Op::Frobenius(x) => {
                    let s = g.item()?;
                    let norm = node.value.item()?;
                    let d = if norm > T::zero() {
                        val(*x).scale(s / norm)
                    } else {
                        Tensor::zeros(val(*x).shape())
                    };
                    send(*x, d)?;
                }
                Op::Reshape(x) => send(*x, g.reshape(val(*x).shape())?)?,
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = val(p).cols();
                        let piece = g.submatrix(0..g.rows(), offset..offset + c);
                        send(p, piece.reshape(val(p).shape())?)?;
                        offset += c;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let xv = val(*x);
                    let mut d = Tensor::zeros(xv.shape());
                    for i in 0..xv.rows() {
                        for j in *start..*end {
                            d.set(i, j, g.get(i, j - start));
                        }
                    }
                    send(*x, d)?;
                }
                Op::Nll {
                    probs,
                    target,
                    floor,
                } => {
                    let s = g.item()?;
                    let p = val(*probs);
                    let d: Vec<T> = p
                        .as_slice()
                        .iter()
                        .zip(target)
                        .map(|(&pc, &y)| if pc > *floor { -s * y / pc } else { T::zero() })
                        .collect();
                    send(*probs, Tensor::new(p.shape().to_vec(), d)?)?;
                }
            }
        }
        Ok(())
    }
}

/// Row-wise (optionally masked) softmax without recording.
/// `max(a, floor)` that keeps NaN, so a floored log cannot hide divergence.
fn at_least<T: Scalar>(a: T, floor: T) -> T {
    if a < floor {
        floor
    } else {
        a
    }
}

pub fn softmax_rows_value<T: Scalar>(x: &Tensor<T>, mask: Option<&[bool]>) -> Tensor<T> {
    let (r, c) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(x.shape());
    for i in 0..r {
        let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
        let mut max = T::neg_infinity();
        for j in 0..c {
            if keep(j) && x.get(i, j) > max {
                max = x.get(i, j);
            }
        }
        if max == T::neg_infinity() {
            continue;
        }
        let mut total = T::zero();
        for j in 0..c {
            if keep(j) {
                let e = (x.get(i, j) - max).exp();
                out.set(i, j, e);
                total = total + e;
            }
        }
        for j in 0..c {
            out.set(i, j, out.get(i, j) / total);
        }
    }
    out
}

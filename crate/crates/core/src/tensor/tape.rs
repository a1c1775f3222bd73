use std::cell::RefCell;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{matmul_acc, matmul_at_acc, matmul_bt_acc, strides};
use super::{Float, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

/// Second argument of [`Tape::elementwise`].
#[derive(Clone, Copy, Debug)]
pub enum Operand<T> {
    None,
    Var(Var),
    Scalar(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Relu,
    Scale,
}

impl FromStr for ElementwiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "add" => Self::Add,
            "sub" => Self::Sub,
            "mul" => Self::Mul,
            "tanh" => Self::Tanh,
            "sigmoid" => Self::Sigmoid,
            "relu" => Self::Relu,
            "scale" => Self::Scale,
            other => return Err(Error::Usage(format!("unknown elementwise kind `{other}`"))),
        })
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    /// Output element `i` reads input element `map[i]`.
    Remap {
        input: usize,
        map: Vec<usize>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    GatherRows {
        input: usize,
        rows: Vec<Option<usize>>,
    },
    SoftmaxMasked(usize),
    MaxMasked {
        input: usize,
        argmax: Vec<usize>,
    },
    Sum(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// A tape is single-threaded; build one per forward pass (or per minibatch)
/// and drop it after [`Tape::backward`].
pub struct Tape<T: Float> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf; it is differentiable iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        let mut value = tensor;
        value.zero_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&self, tensor: Tensor<T>) -> Var {
        let mut value = tensor;
        value.set_requires_grad(false);
        value.zero_grad();
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.with_value(v, Tensor::clone)
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        self.assert_owned(v);
        f(&self.nodes.borrow()[v.id].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.with_value(v, |t| t.shape().to_vec())
    }

    /// First element of `v`, for scalar results.
    pub fn scalar(&self, v: Var) -> T {
        self.with_value(v, |t| t.data()[0])
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.assert_owned(v);
        self.nodes.borrow()[v.id].requires_grad
    }

    fn assert_owned(&self, v: Var) {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id {
            return Err(Error::Usage("variable belongs to a different tape".into()));
        }
        Ok(())
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            id: nodes.len() - 1,
        }
    }

    fn any_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Matrix product of `[m, k] × [k, n]`, or batched `[b, m, k] × [b, k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (value, batch, m, k, n) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.id].value, &nodes[b.id].value);
            let (sa, sb) = (ta.shape(), tb.shape());
            let (batch, m, k, n, out_shape) = match (sa, sb) {
                (&[m, k], &[k2, n]) if k == k2 => (1, m, k, n, vec![m, n]),
                (&[b1, m, k], &[b2, k2, n]) if b1 == b2 && k == k2 => (b1, m, k, n, vec![b1, m, n]),
                _ => return Err(Error::dimension("matmul", sa, sb)),
            };
            let mut out = vec![T::zero(); batch * m * n];
            for bi in 0..batch {
                matmul_acc(
                    &ta.data()[bi * m * k..(bi + 1) * m * k],
                    &tb.data()[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            (Tensor::new(&out_shape, out)?, batch, m, k, n)
        };
        let rg = self.any_grad(&[a.id, b.id]);
        Ok(self.push(
            value,
            Op::MatMul {
                a: a.id,
                b: b.id,
                batch,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check(a)?;
        self.check(b)?;
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.id].value, &nodes[b.id].value);
        if ta.shape() != tb.shape() {
            return Err(Error::dimension(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
        self.check(a)?;
        let nodes = self.nodes.borrow();
        let ta = &nodes[a.id].value;
        Tensor::new(ta.shape(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a.id, b.id), self.any_grad(&[a.id, b.id])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a.id, b.id), self.any_grad(&[a.id, b.id])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a.id, b.id), self.any_grad(&[a.id, b.id])))
    }

    pub fn scale(&self, a: Var, s: T) -> Result<Var> {
        let v = self.unary(a, |x| x * s)?;
        Ok(self.push(v, Op::Scale(a.id, s), self.any_grad(&[a.id])))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let v = self.unary(a, T::tanh)?;
        Ok(self.push(v, Op::Tanh(a.id), self.any_grad(&[a.id])))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let v = self.unary(a, sigmoid)?;
        Ok(self.push(v, Op::Sigmoid(a.id), self.any_grad(&[a.id])))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let v = self.unary(a, |x| if x > T::zero() { x } else { T::zero() })?;
        Ok(self.push(v, Op::Relu(a.id), self.any_grad(&[a.id])))
    }

    /// Dispatches an elementwise operation by kind.
    pub fn elementwise(&self, kind: ElementwiseKind, a: Var, b: Operand<T>) -> Result<Var> {
        use ElementwiseKind::*;
        match (kind, b) {
            (Add, Operand::Var(b)) => self.add(a, b),
            (Sub, Operand::Var(b)) => self.sub(a, b),
            (Mul, Operand::Var(b)) => self.mul(a, b),
            (Scale, Operand::Scalar(s)) | (Mul, Operand::Scalar(s)) => self.scale(a, s),
            (Tanh, Operand::None) => self.tanh(a),
            (Sigmoid, Operand::None) => self.sigmoid(a),
            (Relu, Operand::None) => self.relu(a),
            (kind, _) => Err(Error::Usage(format!("operand does not fit elementwise kind {kind:?}"))),
        }
    }

    /// Broadcasts size-1 axes of `a` up to `shape` (same rank required).
    pub fn expand(&self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let (value, map) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let src = ta.shape();
            if src.len() != shape.len() || src.iter().zip(shape).any(|(&s, &d)| s != d && s != 1) {
                return Err(Error::dimension("expand", src, shape));
            }
            let in_strides = strides(src);
            let bstrides: Vec<usize> = src
                .iter()
                .zip(&in_strides)
                .map(|(&s, &st)| if s == 1 { 0 } else { st })
                .collect();
            let map = remap_indices(shape, &bstrides);
            let data = map.iter().map(|&i| ta.data()[i]).collect();
            (Tensor::new(shape, data)?, map)
        };
        Ok(self.push(value, Op::Remap { input: a.id, map }, self.any_grad(&[a.id])))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (value, map) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let &[r, c] = ta.shape() else {
                return Err(Error::Usage(format!(
                    "transpose needs a 2-D tensor, got {:?}",
                    ta.shape()
                )));
            };
            let map = remap_indices(&[c, r], &[1, c]);
            let data = map.iter().map(|&i| ta.data()[i]).collect();
            (Tensor::new(&[c, r], data)?, map)
        };
        Ok(self.push(value, Op::Remap { input: a.id, map }, self.any_grad(&[a.id])))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.with_value(a, |t| t.clone().reshaped(shape))?;
        Ok(self.push(value, Op::Reshape(a.id), self.any_grad(&[a.id])))
    }

    /// Concatenates along `axis`; shapes must agree on every other axis.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        for &p in parts {
            self.check(p)?;
        }
        let value = {
            let nodes = self.nodes.borrow();
            let base = nodes[first.id].value.shape();
            if axis >= base.len() {
                return Err(Error::Usage(format!("concat axis {axis} out of range for {base:?}")));
            }
            let mut out_shape = base.to_vec();
            out_shape[axis] = 0;
            for &p in parts {
                let s = nodes[p.id].value.shape();
                let compatible =
                    s.len() == base.len() && s.iter().zip(base).enumerate().all(|(i, (x, y))| i == axis || x == y);
                if !compatible {
                    return Err(Error::dimension("concat", base, s));
                }
                out_shape[axis] += s[axis];
            }
            let outer: usize = base[..axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let mut data = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for &p in parts {
                    let t = &nodes[p.id].value;
                    let block = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                }
            }
            Tensor::new(&out_shape, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.any_grad(&ids);
        Ok(self.push(value, Op::Concat { inputs: ids, axis }, rg))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let s = ta.shape();
            if axis >= s.len() || len == 0 || start + len > s[axis] {
                return Err(Error::Usage(format!(
                    "slice [{start}, {}) on axis {axis} out of range for {s:?}",
                    start + len
                )));
            }
            let outer: usize = s[..axis].iter().product();
            let inner: usize = s[axis + 1..].iter().product();
            let mut out_shape = s.to_vec();
            out_shape[axis] = len;
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * s[axis] * inner + start * inner;
                data.extend_from_slice(&ta.data()[base..base + len * inner]);
            }
            Tensor::new(&out_shape, data)?
        };
        Ok(self.push(
            value,
            Op::Slice {
                input: a.id,
                axis,
                start,
            },
            self.any_grad(&[a.id]),
        ))
    }

    /// Selects rows of a 2-D tensor; `None` yields an all-zero row.
    pub fn gather_rows(&self, a: Var, rows: &[Option<usize>]) -> Result<Var> {
        self.check(a)?;
        if rows.is_empty() {
            return Err(Error::Usage("gather_rows with no rows".into()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let &[n_rows, cols] = ta.shape() else {
                return Err(Error::Usage(format!(
                    "gather_rows needs a 2-D tensor, got {:?}",
                    ta.shape()
                )));
            };
            let mut data = Vec::with_capacity(rows.len() * cols);
            for r in rows {
                match *r {
                    Some(i) if i < n_rows => data.extend_from_slice(ta.row(i)),
                    Some(i) => {
                        return Err(Error::Usage(format!("row {i} out of range for {n_rows} rows")));
                    }
                    None => data.extend(std::iter::repeat_n(T::zero(), cols)),
                }
            }
            Tensor::new(&[rows.len(), cols], data)?
        };
        Ok(self.push(
            value,
            Op::GatherRows {
                input: a.id,
                rows: rows.to_vec(),
            },
            self.any_grad(&[a.id]),
        ))
    }

    /// Softmax over the last axis restricted to `mask`-true entries.
    ///
    /// Masked entries come out exactly zero. A row without any true entry is
    /// rejected as degenerate.
    pub fn softmax_masked(&self, a: Var, mask: &[bool]) -> Result<Var> {
        self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            if mask.len() != ta.len() {
                return Err(Error::dimension("softmax_masked", ta.shape(), &[mask.len()]));
            }
            let n = *ta.shape().last().expect("rank >= 1");
            let mut out = vec![T::zero(); ta.len()];
            for (r, (row, mrow)) in ta.data().chunks(n).zip(mask.chunks(n)).enumerate() {
                let max = row
                    .iter()
                    .zip(mrow)
                    .filter(|(_, &m)| m)
                    .map(|(&x, _)| x)
                    .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))))
                    .ok_or_else(|| Error::Degenerate(format!("softmax row {r} is fully masked")))?;
                let orow = &mut out[r * n..(r + 1) * n];
                let mut total = T::zero();
                for ((o, &x), &m) in orow.iter_mut().zip(row).zip(mrow) {
                    if m {
                        *o = (x - max).exp();
                        total += *o;
                    }
                }
                orow.iter_mut().for_each(|o| *o = *o / total);
            }
            Tensor::new(ta.shape(), out)?
        };
        Ok(self.push(value, Op::SoftmaxMasked(a.id), self.any_grad(&[a.id])))
    }

    /// Maximum over the last axis restricted to `mask`-true entries.
    pub fn max_masked(&self, a: Var, mask: &[bool]) -> Result<Var> {
        self.check(a)?;
        let (value, argmax) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            if mask.len() != ta.len() {
                return Err(Error::dimension("max_masked", ta.shape(), &[mask.len()]));
            }
            let s = ta.shape();
            let n = s[s.len() - 1];
            let mut argmax = Vec::with_capacity(ta.len() / n);
            let mut out = Vec::with_capacity(ta.len() / n);
            for (r, (row, mrow)) in ta.data().chunks(n).zip(mask.chunks(n)).enumerate() {
                let mut best: Option<usize> = None;
                for (j, (&x, &m)) in row.iter().zip(mrow).enumerate() {
                    if m && best.is_none_or(|b| x > row[b]) {
                        best = Some(j);
                    }
                }
                let j = best.ok_or_else(|| Error::Degenerate(format!("max row {r} is fully masked")))?;
                argmax.push(r * n + j);
                out.push(row[j]);
            }
            let out_shape = if s.len() == 1 {
                vec![1]
            } else {
                s[..s.len() - 1].to_vec()
            };
            (Tensor::new(&out_shape, out)?, argmax)
        };
        Ok(self.push(value, Op::MaxMasked { input: a.id, argmax }, self.any_grad(&[a.id])))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let total = self.with_value(a, |t| t.data().iter().copied().sum::<T>());
        Ok(self.push(Tensor::scalar(total), Op::Sum(a.id), self.any_grad(&[a.id])))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.with_value(a, Tensor::len);
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::from_usize(n).expect("length fits"))
    }

    /// Back-propagates from a scalar `loss` and returns gradients for every
    /// differentiable node reachable from it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.id).map(|_| None).collect();
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, &node.op, &node.value, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

/// Gradients produced by [`Tape::backward`], keyed by leaf variable.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a leaf; `None` when the leaf does not influence the loss
    /// or does not require grad.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient of a leaf, zeros if it received none.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}

fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// For every output position (row-major over `shape`), the flat input index
/// under the given input strides.
fn remap_indices(shape: &[usize], in_strides: &[usize]) -> Vec<usize> {
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut counter = vec![0usize; shape.len()];
    for _ in 0..numel {
        map.push(counter.iter().zip(in_strides).map(|(c, s)| c * s).sum());
        for ax in (0..shape.len()).rev() {
            counter[ax] += 1;
            if counter[ax] < shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    map
}

fn grad_slot<'a, T: Float>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], id: usize) -> Option<&'a mut Vec<T>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); len]))
}

fn propagate<T: Float>(nodes: &[Node<T>], op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let val = |id: usize| nodes[id].value.data();
    match *op {
        Op::Leaf => {}
        Op::MatMul { a, b, batch, m, k, n } => {
            if let Some(ga) = grad_slot(nodes, grads, a) {
                for bi in 0..batch {
                    matmul_bt_acc(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &val(b)[bi * k * n..(bi + 1) * k * n],
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
            }
            if let Some(gb) = grad_slot(nodes, grads, b) {
                for bi in 0..batch {
                    matmul_at_acc(
                        &val(a)[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(op, Op::Sub(..)) { -T::one() } else { T::one() };
            if let Some(ga) = grad_slot(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            if let Some(gb) = grad_slot(nodes, grads, b) {
                gb.iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
            }
        }
        Op::Mul(a, b) => {
            if let Some(ga) = grad_slot(nodes, grads, a) {
                for ((x, &y), &bv) in ga.iter_mut().zip(g).zip(val(b)) {
                    *x += y * bv;
                }
            }
            if let Some(gb) = grad_slot(nodes, grads, b) {
                for ((x, &y), &av) in gb.iter_mut().zip(g).zip(val(a)) {
                    *x += y * av;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = grad_slot(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * s);
            }
        }
        Op::Tanh(a) => {
            if let Some(ga) = grad_slot(nodes, grads, a) {
                for ((x, &y), &o) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * (T::one() - o * o);
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = grad_slot(nodes, grads, a) {
                for ((x, &y), &o) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * o * (T::one() - o);
                }
            }
        }
        Op::Relu(a) => {
            if let Some(ga) = grad_slot(nodes, grads, a) {
                for ((x, &y), &o) in ga.iter_mut().zip(g).zip(out.data()) {
                    if o > T::zero() {
                        *x += y;
                    }
                }
            }
        }
        Op::Remap { input, ref map } => {
            if let Some(ga) = grad_slot(nodes, grads, input) {
                for (&src, &y) in map.iter().zip(g) {
                    ga[src] += y;
                }
            }
        }
        Op::Concat { ref inputs, axis } => {
            let s = out.shape();
            let outer: usize = s[..axis].iter().product();
            let inner: usize = s[axis + 1..].iter().product();
            let out_block = s[axis] * inner;
            let mut offset = 0;
            for &p in inputs {
                let block = nodes[p].value.shape()[axis] * inner;
                if let Some(gp) = grad_slot(nodes, grads, p) {
                    for o in 0..outer {
                        let src = &g[o * out_block + offset..o * out_block + offset + block];
                        gp[o * block..(o + 1) * block]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, &y)| *x += y);
                    }
                }
                offset += block;
            }
        }
        Op::Slice { input, axis, start } => {
            let in_shape = nodes[input].value.shape().to_vec();
            let len = out.shape()[axis];
            let outer: usize = in_shape[..axis].iter().product();
            let inner: usize = in_shape[axis + 1..].iter().product();
            if let Some(ga) = grad_slot(nodes, grads, input) {
                for o in 0..outer {
                    let base = o * in_shape[axis] * inner + start * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    ga[base..base + len * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(x, &y)| *x += y);
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = grad_slot(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
        }
        Op::GatherRows { input, ref rows } => {
            let cols = out.shape()[1];
            if let Some(ga) = grad_slot(nodes, grads, input) {
                for (r, src) in rows.iter().zip(g.chunks(cols)) {
                    if let Some(i) = *r {
                        ga[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, &y)| *x += y);
                    }
                }
            }
        }
        Op::SoftmaxMasked(a) => {
            let n = *out.shape().last().expect("rank >= 1");
            if let Some(ga) = grad_slot(nodes, grads, a) {
                for ((gx, gy), y) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                    let dot: T = gy.iter().zip(y).map(|(&a, &b)| a * b).sum();
                    for ((x, &gi), &yi) in gx.iter_mut().zip(gy).zip(y) {
                        *x += yi * (gi - dot);
                    }
                }
            }
        }
        Op::MaxMasked { input, ref argmax } => {
            if let Some(ga) = grad_slot(nodes, grads, input) {
                for (&src, &y) in argmax.iter().zip(g) {
                    ga[src] += y;
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = grad_slot(nodes, grads, a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn basis_selection() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1, 2], &[1., 0.]));
        let b = tape.constant(t(&[2, 1], &[5., 7.]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[5.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn elementwise_basics() {
        let tape = Tape::new();
        let z = tape.constant(t(&[1], &[0.]));
        assert_eq!(tape.scalar(tape.sigmoid(z).unwrap()), 0.5);
        assert_eq!(tape.scalar(tape.tanh(z).unwrap()), 0.0);

        let a = tape.leaf(t(&[2], &[2., 3.]).with_requires_grad(true));
        let b = tape.constant(t(&[2], &[4., 5.]));
        let p = tape.elementwise(ElementwiseKind::Mul, a, Operand::Var(b)).unwrap();
        assert_eq!(tape.value(p).data(), &[8., 15.]);
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[4., 5.]);
    }

    #[test]
    fn elementwise_errors() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2], &[1., 2.]));
        let b = tape.constant(t(&[3], &[1., 2., 3.]));
        assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
        assert!(matches!("cube".parse::<ElementwiseKind>(), Err(Error::Usage(_))));
        assert!(tape.elementwise(ElementwiseKind::Tanh, a, Operand::Var(b)).is_err());
    }

    #[test]
    fn softmax_cases() {
        let tape = Tape::new();
        let x = tape.constant(t(&[3], &[0., 0., 0.]));
        let y = tape.value(tape.softmax_masked(x, &[true; 3]).unwrap());
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(t(&[1], &[-123.4]));
        assert_eq!(tape.value(tape.softmax_masked(x, &[true]).unwrap()).data(), &[1.0]);

        // 64-bit direct evaluation with max subtraction: 1 / (1 + e) and e / (1 + e).
        let e = std::f64::consts::E;
        let x = tape.constant(t(&[2], &[1000., 1001.]));
        let y = tape.value(tape.softmax_masked(x, &[true, true]).unwrap());
        assert!((y.data()[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((y.data()[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((y.data()[0] - 0.2689).abs() < 1e-4);

        let x = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        assert!(matches!(
            tape.softmax_masked(x, &[true, false, false, false]),
            Err(Error::Degenerate(_))
        ));
        let y = tape.value(tape.softmax_masked(x, &[true, false, false, true]).unwrap());
        assert_eq!(y.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_cases() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1, 1], &[1.]));
        let b = tape.constant(t(&[1, 1], &[2.]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), vec![1, 2]);
        assert_eq!(tape.value(c).data(), &[1., 2.]);

        let one = tape.concat(&[a], 0).unwrap();
        assert_eq!(tape.value(one), tape.value(a));

        let blocks: Vec<Var> = (0..4).map(|_| tape.constant(Tensor::zeros(&[7, 100]))).collect();
        assert_eq!(tape.shape(tape.concat(&blocks, 1).unwrap()), vec![7, 400]);

        let bad = tape.constant(Tensor::zeros(&[2, 1]));
        assert!(matches!(tape.concat(&[a, bad], 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_basics() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1., 2., 3.]).with_requires_grad(true));
        let grads = tape.backward(tape.sum(x).unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1., 1., 1.]);

        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]).with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let grads = tape.backward(tape.sum(sq).unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2., 4.]);

        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn foreign_variable_rejected() {
        let t1 = Tape::<f64>::new();
        let t2 = Tape::<f64>::new();
        let x = t1.constant(Tensor::scalar(1.0));
        assert!(t2.sum(t2.constant(Tensor::scalar(1.0))).is_ok());
        assert!(matches!(t2.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn expand_and_transpose() {
        let tape = Tape::new();
        let b = tape.leaf(t(&[1, 3], &[1., 2., 3.]).with_requires_grad(true));
        let e = tape.expand(b, &[2, 3]).unwrap();
        assert_eq!(tape.value(e).data(), &[1., 2., 3., 1., 2., 3.]);
        let tr = tape.transpose(e).unwrap();
        assert_eq!(tape.value(tr).data(), &[1., 1., 2., 2., 3., 3.]);
        let grads = tape.backward(tape.sum(tr).unwrap()).unwrap();
        assert_eq!(grads.get(b).unwrap(), &[2., 2., 2.]);
        assert!(tape.expand(b, &[2, 4]).is_err());
    }

    #[test]
    fn max_masked_routes_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1., 5., 2., 9., 0., 3.]).with_requires_grad(true));
        let m = tape.max_masked(x, &[true, true, true, false, true, true]).unwrap();
        assert_eq!(tape.value(m).data(), &[5., 3.]);
        let grads = tape.backward(tape.sum(m).unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0., 1., 0., 0., 0., 1.]);
    }
}

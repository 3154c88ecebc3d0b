//! Append-only computation tape with reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and records its inputs; `backward`
//! walks the tape once in reverse. `detach` is a forward identity whose
//! backward contribution is zero, which is how the attribution mode turns
//! attention maps and normalization scales into constants.

use std::str::FromStr;
use std::sync::Arc;

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Transpose,
    Reshape(Vec<usize>),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    SumAxis(usize),
    MeanAxis(usize),
    MaxAxis(usize),
    Exp,
    Log,
    Sqrt,
    Relu,
    /// Softmax along `axis`; entries whose position along the last axis is
    /// `false` in `mask` are excluded and come out as exact zeros.
    Softmax { axis: usize, mask: Option<Arc<[bool]>> },
    Scale(f64),
    Broadcast(Vec<usize>),
    GatherRows(Arc<[usize]>),
    Detach,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Div => "div",
            Self::Matmul => "matmul",
            Self::Transpose => "transpose",
            Self::Reshape(_) => "reshape",
            Self::Concat { .. } => "concat",
            Self::Slice { .. } => "slice",
            Self::SumAxis(_) => "sum-over-axis",
            Self::MeanAxis(_) => "mean-over-axis",
            Self::MaxAxis(_) => "max-over-axis",
            Self::Exp => "exp",
            Self::Log => "log",
            Self::Sqrt => "sqrt",
            Self::Relu => "relu",
            Self::Softmax { .. } => "softmax-over-axis",
            Self::Scale(_) => "scale",
            Self::Broadcast(_) => "broadcast",
            Self::GatherRows(_) => "gather-rows",
            Self::Detach => "detach",
        }
    }
}

impl FromStr for Primitive {
    type Err = Error;

    /// Parses the parameter-free primitives by name.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "add" => Self::Add,
            "sub" => Self::Sub,
            "mul" => Self::Mul,
            "div" => Self::Div,
            "matmul" => Self::Matmul,
            "transpose" => Self::Transpose,
            "exp" => Self::Exp,
            "log" => Self::Log,
            "sqrt" => Self::Sqrt,
            "relu" => Self::Relu,
            "detach" => Self::Detach,
            other => return Err(Error::UnknownPrimitive(other.to_string())),
        })
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<Primitive>,
    inputs: Vec<Var>,
    requires_grad: bool,
    /// Argmax positions for `MaxAxis`.
    argmax: Option<Vec<usize>>,
}

/// Single-writer record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

/// `(outer, len, inner)` such that flat index = `(o * len + k) * inner + i`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every flat index of `target`, the flat index of `source` it reads
/// under right-aligned broadcasting.
fn broadcast_map(source: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    if source.len() > target.len() {
        return Err(Error::Shape(format!("cannot broadcast {source:?} to {target:?}")));
    }
    let offset = target.len() - source.len();
    for (i, &s) in source.iter().enumerate() {
        if s != 1 && s != target[offset + i] {
            return Err(Error::Shape(format!("cannot broadcast {source:?} to {target:?}")));
        }
    }
    let src_strides = strides(source);
    // Stride of each target axis in the source (0 where broadcast).
    let step: Vec<usize> = (0..target.len())
        .map(|d| if d >= offset && source[d - offset] != 1 { src_strides[d - offset] } else { 0 })
        .collect();
    let numel: usize = target.iter().product();
    let mut map = Vec::with_capacity(numel);
    if numel == 0 {
        return Ok(map);
    }
    let rank = target.len();
    let mut coord = vec![0; rank];
    let mut src = 0;
    loop {
        map.push(src);
        // Odometer increment over the target coordinates.
        let mut d = rank;
        loop {
            if d == 0 {
                return Ok(map);
            }
            d -= 1;
            coord[d] += 1;
            src += step[d];
            if coord[d] < target[d] {
                break;
            }
            src -= step[d] * coord[d];
            coord[d] = 0;
        }
    }
}

fn shape_of(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Option<Primitive>, inputs: Vec<Var>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, inputs, requires_grad, argmax: None });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable input (parameter or attributed feature).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated for `v` by the last backward pass, if any
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `v` when nothing reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    /// Clears gradient buffers so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Evaluates `op` on `inputs` and records the result.
    pub fn apply(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div | Primitive::Matmul => Some(2),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        };
        match arity {
            Some(n) if inputs.len() != n => {
                return Err(Error::InvalidArgument(format!(
                    "{} takes {n} inputs, got {}",
                    op.name(),
                    inputs.len()
                )))
            }
            None if inputs.is_empty() => {
                return Err(Error::InvalidArgument("concat of zero inputs".into()))
            }
            _ => {}
        }
        let (value, argmax) = self.eval(&op, inputs)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad =
            !matches!(op, Primitive::Detach) && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let var = self.push(value, Some(op), inputs.to_vec(), requires_grad);
        self.nodes[var.0].argmax = argmax;
        Ok(var)
    }

    fn eval(&self, op: &Primitive, inputs: &[Var]) -> Result<(Tensor, Option<Vec<usize>>)> {
        let x = &self.nodes[inputs[0].0].value;
        let out = match op {
            Primitive::Add => x.zip_map(self.value(inputs[1]), |a, b| a + b)?,
            Primitive::Sub => x.zip_map(self.value(inputs[1]), |a, b| a - b)?,
            Primitive::Mul => x.zip_map(self.value(inputs[1]), |a, b| a * b)?,
            Primitive::Div => x.zip_map(self.value(inputs[1]), |a, b| a / b)?,
            Primitive::Matmul => {
                let y = self.value(inputs[1]);
                let (m, k) = x.dims2()?;
                let (k2, n) = y.dims2()?;
                if k != k2 {
                    return Err(Error::Shape(format!(
                        "matmul {:?} × {:?}",
                        x.shape(),
                        y.shape()
                    )));
                }
                Tensor::new(vec![m, n], tensor::matmul(x.data(), y.data(), m, k, n))?
            }
            Primitive::Transpose => {
                let (r, c) = x.dims2()?;
                Tensor::new(vec![c, r], tensor::transpose(x.data(), r, c))?
            }
            Primitive::Reshape(shape) => Tensor::new(shape.clone(), x.data().to_vec())?,
            Primitive::Concat { axis } => {
                let parts: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                concat(&parts, *axis)?
            }
            Primitive::Slice { axis, start, end } => {
                let (outer, len, inner) = axis_split(x.shape(), *axis)?;
                if start > end || *end > len {
                    return Err(Error::Shape(format!(
                        "slice {start}..{end} out of range for axis of length {len}"
                    )));
                }
                let w = end - start;
                let mut data = Vec::with_capacity(outer * w * inner);
                for o in 0..outer {
                    let base = (o * len + start) * inner;
                    data.extend_from_slice(&x.data()[base..base + w * inner]);
                }
                let mut shape = x.shape().to_vec();
                shape[*axis] = w;
                Tensor::new(shape, data)?
            }
            Primitive::SumAxis(axis) | Primitive::MeanAxis(axis) => {
                let (outer, len, inner) = axis_split(x.shape(), *axis)?;
                let mut data = vec![0.0; outer * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let src = &x.data()[(o * len + k) * inner..(o * len + k + 1) * inner];
                        for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if matches!(op, Primitive::MeanAxis(_)) {
                    if len == 0 {
                        return Err(Error::Shape("mean over an empty axis".into()));
                    }
                    let inv = len as f64;
                    data.iter_mut().for_each(|d| *d /= inv);
                }
                Tensor::new(shape_of(x.shape(), *axis), data)?
            }
            Primitive::MaxAxis(axis) => {
                let (outer, len, inner) = axis_split(x.shape(), *axis)?;
                if len == 0 {
                    return Err(Error::Shape("max over an empty axis".into()));
                }
                let mut data = vec![f64::NEG_INFINITY; outer * inner];
                let mut arg = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        for k in 0..len {
                            let v = x.data()[(o * len + k) * inner + i];
                            if v > data[o * inner + i] {
                                data[o * inner + i] = v;
                                arg[o * inner + i] = (o * len + k) * inner + i;
                            }
                        }
                    }
                }
                return Ok((Tensor::new(shape_of(x.shape(), *axis), data)?, Some(arg)));
            }
            Primitive::Exp => x.map(f64::exp),
            Primitive::Log => x.map(f64::ln),
            Primitive::Sqrt => x.map(f64::sqrt),
            Primitive::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            Primitive::Softmax { axis, mask } => softmax(x, *axis, mask.as_deref())?,
            Primitive::Scale(c) => x.map(|v| v * c),
            Primitive::Broadcast(shape) => {
                let map = broadcast_map(x.shape(), shape)?;
                let data = map.iter().map(|&i| x.data()[i]).collect();
                Tensor::new(shape.clone(), data)?
            }
            Primitive::GatherRows(rows) => {
                let (n, cols) = x.dims2()?;
                let mut data = Vec::with_capacity(rows.len() * cols);
                for &r in rows.iter() {
                    if r >= n {
                        return Err(Error::Shape(format!("gather row {r} out of {n}")));
                    }
                    data.extend_from_slice(x.row(r));
                }
                Tensor::new(vec![rows.len(), cols], data)?
            }
            Primitive::Detach => x.clone(),
        };
        Ok((out, None))
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let shape = self.shape(output).to_vec();
        if self.value(output).numel() != 1 {
            return Err(Error::NotScalar(shape));
        }
        self.backward_with_seed(output, Tensor::full(&shape, 1.0))
    }

    /// Backpropagates an explicit upstream gradient `seed` from `output`.
    pub fn backward_with_seed(&mut self, output: Var, seed: Tensor) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if seed.shape() != self.shape(output) {
            return Err(Error::Shape(format!(
                "seed shape {:?} does not match output {:?}",
                seed.shape(),
                self.shape(output)
            )));
        }
        self.backward_done = true;
        self.grads[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let Some(g) = self.grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                if let Some(op) = &self.nodes[id].op {
                    let contributions = self.input_grads(id, op, &g)?;
                    for (input, contrib) in self.nodes[id].inputs.clone().into_iter().zip(contributions) {
                        let Some(contrib) = contrib else { continue };
                        if !self.nodes[input.0].requires_grad {
                            continue;
                        }
                        match &mut self.grads[input.0] {
                            Some(acc) => acc.add_assign(&contrib),
                            slot @ None => *slot = Some(contrib),
                        }
                    }
                }
            }
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn input_grads(&self, id: usize, op: &Primitive, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let node = &self.nodes[id];
        let x = self.value(node.inputs[0]);
        let y = &node.value;
        Ok(match op {
            Primitive::Add => vec![Some(g.clone()), Some(g.clone())],
            Primitive::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Primitive::Mul => {
                let b = self.value(node.inputs[1]);
                let wants = |v: Var| self.nodes[v.0].requires_grad;
                let ga = wants(node.inputs[0]).then(|| g.zip_map(b, |g, b| g * b)).transpose()?;
                let gb = wants(node.inputs[1]).then(|| g.zip_map(x, |g, a| g * a)).transpose()?;
                vec![ga, gb]
            }
            Primitive::Div => {
                let b = self.value(node.inputs[1]);
                let ga = g.zip_map(b, |g, b| g / b)?;
                let gb = ga.zip_map(y, |q, y| -q * y)?;
                vec![Some(ga), Some(gb)]
            }
            Primitive::Matmul => {
                let b = self.value(node.inputs[1]);
                let (m, k) = x.dims2()?;
                let n = b.dims2()?.1;
                let wants = |v: Var| self.nodes[v.0].requires_grad;
                let ga = wants(node.inputs[0])
                    .then(|| Tensor::new(vec![m, k], tensor::matmul_bt(g.data(), b.data(), m, n, k)))
                    .transpose()?;
                let gb = wants(node.inputs[1])
                    .then(|| Tensor::new(vec![k, n], tensor::matmul_at(x.data(), g.data(), m, k, n)))
                    .transpose()?;
                vec![ga, gb]
            }
            Primitive::Transpose => {
                let (r, c) = x.dims2()?;
                vec![Some(Tensor::new(vec![r, c], tensor::transpose(g.data(), c, r))?)]
            }
            Primitive::Reshape(_) => vec![Some(g.clone().reshaped(x.shape().to_vec()))],
            Primitive::Concat { axis } => {
                let (outer, total, inner) = axis_split(g.shape(), *axis)?;
                let mut offset = 0;
                let mut out = Vec::with_capacity(node.inputs.len());
                for v in &node.inputs {
                    let part = self.value(*v);
                    let w = part.shape()[*axis];
                    let mut data = Vec::with_capacity(part.numel());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + w * inner]);
                    }
                    out.push(Some(Tensor::new(part.shape().to_vec(), data)?));
                    offset += w;
                }
                out
            }
            Primitive::Slice { axis, start, end } => {
                let (outer, len, inner) = axis_split(x.shape(), *axis)?;
                let w = end - start;
                let mut data = vec![0.0; x.numel()];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    let src = o * w * inner;
                    data[dst..dst + w * inner].copy_from_slice(&g.data()[src..src + w * inner]);
                }
                vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
            }
            Primitive::SumAxis(axis) | Primitive::MeanAxis(axis) => {
                let (outer, len, inner) = axis_split(x.shape(), *axis)?;
                let scale = if matches!(op, Primitive::MeanAxis(_)) { 1.0 / len as f64 } else { 1.0 };
                let mut data = vec![0.0; x.numel()];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            data[(o * len + k) * inner + i] = g.data()[o * inner + i] * scale;
                        }
                    }
                }
                vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
            }
            Primitive::MaxAxis(_) => {
                let arg = node.argmax.as_ref().expect("max node saves argmax");
                let mut data = vec![0.0; x.numel()];
                for (gi, &src) in g.data().iter().zip(arg) {
                    data[src] += gi;
                }
                vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
            }
            Primitive::Exp => vec![Some(g.zip_map(y, |g, y| g * y)?)],
            Primitive::Log => vec![Some(g.zip_map(x, |g, x| g / x)?)],
            Primitive::Sqrt => vec![Some(g.zip_map(y, |g, y| g / (2.0 * y))?)],
            Primitive::Relu => vec![Some(g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 })?)],
            Primitive::Softmax { axis, .. } => {
                let (outer, len, inner) = axis_split(y.shape(), *axis)?;
                let mut data = vec![0.0; y.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g.data()[idx(k)] * y.data()[idx(k)]).sum();
                        for k in 0..len {
                            data[idx(k)] = y.data()[idx(k)] * (g.data()[idx(k)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(y.shape().to_vec(), data)?)]
            }
            Primitive::Scale(c) => vec![Some(g.map(|v| v * c))],
            Primitive::Broadcast(shape) => {
                let map = broadcast_map(x.shape(), shape)?;
                let mut data = vec![0.0; x.numel()];
                for (gi, &src) in g.data().iter().zip(&map) {
                    data[src] += gi;
                }
                vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
            }
            Primitive::GatherRows(rows) => {
                let cols = x.dims2()?.1;
                let mut data = vec![0.0; x.numel()];
                for (i, &r) in rows.iter().enumerate() {
                    for (d, s) in data[r * cols..(r + 1) * cols].iter_mut().zip(g.row(i)) {
                        *d += s;
                    }
                }
                vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
            }
            Primitive::Detach => vec![None],
        })
    }

    // Convenience wrappers.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Matmul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, end }, &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::SumAxis(axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::MeanAxis(axis), &[a])
    }

    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::MaxAxis(axis), &[a])
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n])?;
        self.sum_axis(flat, 0)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sqrt, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Softmax { axis, mask: None }, &[a])
    }

    pub fn masked_softmax(&mut self, a: Var, axis: usize, mask: Arc<[bool]>) -> Result<Var> {
        self.apply(Primitive::Softmax { axis, mask: Some(mask) }, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Broadcast(shape.to_vec()), &[a])
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        self.apply(Primitive::GatherRows(rows.into()), &[table])
    }

    pub fn detach(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Detach, &[a])
    }

    /// `a + b` with `b` broadcast to the shape of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) == self.shape(b) {
            return self.add(a, b);
        }
        let shape = self.shape(a).to_vec();
        let bb = self.broadcast(b, &shape)?;
        self.add(a, bb)
    }
}

fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts[0].shape();
    for p in parts {
        let ok = p.rank() == first.len()
            && p.shape().iter().zip(first).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(Error::Shape(format!("concat {:?} with {:?} on axis {axis}", first, p.shape())));
        }
    }
    let (outer, _, inner) = axis_split(first, axis)?;
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let w = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    Tensor::new(shape, data)
}

fn softmax(x: &Tensor, axis: usize, mask: Option<&[bool]>) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let last = *x.shape().last().unwrap_or(&1);
    if let Some(m) = mask {
        if m.len() != last {
            return Err(Error::Shape(format!("softmax mask of {} for last axis {last}", m.len())));
        }
    }
    let keep = |flat: usize| mask.is_none_or(|m| m[flat % last]);
    let mut data = vec![0.0; x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                if keep(idx(k)) {
                    max = max.max(x.data()[idx(k)]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::Shape("softmax over a fully masked slice".into()));
            }
            let mut total = 0.0;
            for k in 0..len {
                if keep(idx(k)) {
                    let e = (x.data()[idx(k)] - max).exp();
                    data[idx(k)] = e;
                    total += e;
                }
            }
            for k in 0..len {
                data[idx(k)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_by_hand() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = t.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 7.0]);
        assert_eq!(t.shape(c), &[2, 1]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = t.softmax(x, 0).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn masked_softmax_zeroes_excluded_entries() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let y = t.masked_softmax(x, 1, vec![true, true, false].into()).unwrap();
        let v = t.value(y).data();
        assert_eq!(v[2], 0.0);
        assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn detach_is_forward_identity() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -2.0, 3.25]));
        let d = t.detach(x).unwrap();
        assert_eq!(t.value(d), t.value(x));
    }

    #[test]
    fn linear_gradient() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::vector(vec![2.0, -1.0]));
        let x = t.leaf(Tensor::vector(vec![1.0, 4.0]));
        let p = t.mul(w, x).unwrap();
        let y = t.sum_all(p).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, -1.0]);
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(-1.0));
        let s = t.scale(x, 2.0).unwrap();
        let y = t.relu(s).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 0.0);
    }

    #[test]
    fn detached_factor_is_a_constant() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![3.0]));
        let d = t.detach(x).unwrap();
        let p = t.mul(d, x).unwrap();
        let y = t.sum_all(p).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn gradient_through_detach_alone_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let d = t.detach(x).unwrap();
        let e = t.exp(d).unwrap();
        let y = t.sum_all(e).unwrap();
        t.backward(y).unwrap();
        assert!(t.grad(x).is_none());
        assert_eq!(t.grad_or_zeros(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t.exp(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::NotScalar(_))));
        t.backward_with_seed(y, Tensor::vector(vec![1.0, 0.0])).unwrap();
    }

    #[test]
    fn backward_twice_needs_reset() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert!(matches!(t.backward(y), Err(Error::BackwardTwice)));
        t.zero_grad();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 4.0);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0]));
        assert!(matches!(t.log(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]));
        let b = t.leaf(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape(_))));
        let v = t.leaf(Tensor::zeros(&[3]));
        assert!(t.add(a, v).is_err());
    }

    #[test]
    fn unknown_primitive_name() {
        assert!(matches!("conv2d".parse::<Primitive>(), Err(Error::UnknownPrimitive(_))));
        assert_eq!("matmul".parse::<Primitive>().unwrap(), Primitive::Matmul);
    }

    #[test]
    fn broadcast_row_and_column() {
        let mut t = Tape::new();
        let row = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = t.broadcast(row, &[2, 3]).unwrap();
        assert_eq!(t.value(b).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let col = t.leaf(Tensor::new(vec![2, 1], vec![5.0, 7.0]).unwrap());
        let c = t.broadcast(col, &[2, 3]).unwrap();
        assert_eq!(t.value(c).data(), &[5.0, 5.0, 5.0, 7.0, 7.0, 7.0]);
    }
}

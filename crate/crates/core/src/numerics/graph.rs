//! Define-by-run computation record with reverse-mode gradients.
//!
//! Every primitive appends one node whose value is computed eagerly. The
//! record is append-only, so node order is already a topological order and
//! [`Graph::backward`] simply walks it in reverse.
//!
//! The primitive set is deliberately small: `matmul`, `add`, the elementwise
//! nonlinearities (`sigmoid`, `tanh`, `relu`), `hadamard`, `concat`, `slice`,
//! `sum` and `abs`. Everything else (negation, subtraction, scaling, means)
//! is composed from those in [`Graph`]'s helper methods.

use std::collections::BTreeMap;
use std::ops::Range;

use super::tensor::{gemm, Tensor};
use super::NumericsError;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named set of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique within the store.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn element_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), NumericsError> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let src = other
                .id_of(name)
                .ok_or_else(|| NumericsError::MissingParam(name.clone()))?;
            let src = other.get(src);
            if src.shape() != value.shape() {
                return Err(NumericsError::ParamShape {
                    name: name.clone(),
                    expected: value.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            *value = src.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradient accumulators, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            grads: params
                .values
                .iter()
                .map(|t| Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).expect("param shape"))
                .collect(),
        }
    }

    pub fn from_tensors(grads: Vec<Tensor>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.grads.iter().position(|g| !g.is_finite()).map(ParamId)
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in &mut self.grads {
                for x in g.data_mut() {
                    *x *= s;
                }
            }
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Broadcast {
    None,
    Row,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId, Broadcast),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Hadamard(NodeId, NodeId, Broadcast),
    Concat(Vec<NodeId>, Axis),
    Slice {
        src: NodeId,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    Sum(NodeId),
    Abs(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Hadamard(..) => "hadamard",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(_) => "sum",
            Op::Abs(_) => "abs",
        }
    }
}

struct Node {
    op: Op,
    // `None` for parameter leaves, whose values live in the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Computation record over a borrowed parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    inputs: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.params.get(*p),
            (_, Some(v)) => v,
            (_, None) => unreachable!("non-param node without value"),
        }
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<NodeId, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFiniteValue {
                node: self.nodes.len(),
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &'static str, detail: String) -> NumericsError {
        NumericsError::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn matrix_dims(&self, op: &'static str, id: NodeId) -> Result<(usize, usize), NumericsError> {
        let v = self.value(id);
        if !v.is_matrix() {
            return Err(self.shape_err(op, format!("operand {} has rank {}", id.0, v.shape().len())));
        }
        Ok(v.dims())
    }

    /// Named external input. Re-declaring a name is rejected.
    pub fn input(&mut self, name: &str, value: Tensor) -> Result<NodeId, NumericsError> {
        if self.inputs.contains_key(name) {
            return Err(NumericsError::DuplicateInput(name.to_string()));
        }
        let id = self.push(Op::Input, value, false)?;
        self.inputs.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    /// Anonymous non-trainable leaf (dropout masks, frozen weights, padding).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
            .expect("constants must be finite")
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn set_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn output(&self, name: &str) -> Option<&Tensor> {
        self.outputs.get(name).map(|&id| self.value(id))
    }

    pub fn outputs(&self) -> BTreeMap<String, Tensor> {
        self.outputs
            .iter()
            .map(|(k, &id)| (k.clone(), self.value(id).clone()))
            .collect()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(self.shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), value, rg)
    }

    fn broadcast_kind(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<Broadcast, NumericsError> {
        let (ar, ac) = self.matrix_dims(op, a)?;
        let (br, bc) = self.matrix_dims(op, b)?;
        if (ar, ac) == (br, bc) {
            Ok(Broadcast::None)
        } else if (br, bc) == (1, 1) {
            Ok(Broadcast::Scalar)
        } else if br == 1 && bc == ac {
            Ok(Broadcast::Row)
        } else {
            Err(self.shape_err(op, format!("[{ar}, {ac}] vs [{br}, {bc}]")))
        }
    }

    fn zip_broadcast(&self, a: NodeId, b: NodeId, bc: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        let cols = av.cols();
        let data = match bc {
            Broadcast::None => av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => {
                let y = bv.data()[0];
                av.data().iter().map(|&x| f(x, y)).collect()
            }
            Broadcast::Row => av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv.data()[i % cols]))
                .collect(),
        };
        Tensor::matrix(av.rows(), cols, data)
    }

    /// Elementwise sum. `b` may also be a `[1, n]` row or a `[1, 1]` scalar,
    /// broadcast over `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let bc = self.broadcast_kind("add", a, b)?;
        let value = self.zip_broadcast(a, b, bc, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b, bc), value, rg)
    }

    /// Elementwise product, same broadcasting as [`Graph::add`].
    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let bc = self.broadcast_kind("hadamard", a, b)?;
        let value = self.zip_broadcast(a, b, bc, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Hadamard(a, b, bc), value, rg)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId, NumericsError> {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// Sum of all elements as a `[1, 1]` scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), value, rg)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId, NumericsError> {
        if parts.is_empty() {
            return Err(self.shape_err("concat", "no operands".into()));
        }
        let dims = parts
            .iter()
            .map(|&p| self.matrix_dims("concat", p))
            .collect::<Result<Vec<_>, _>>()?;
        let value = match axis {
            Axis::Rows => {
                let cols = dims[0].1;
                if let Some((r, c)) = dims.iter().find(|d| d.1 != cols) {
                    return Err(self.shape_err("concat", format!("row concat of [{r}, {c}] onto width {cols}")));
                }
                let rows = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(rows, cols, data)
            }
            Axis::Cols => {
                let rows = dims[0].0;
                if let Some((r, c)) = dims.iter().find(|d| d.0 != rows) {
                    return Err(self.shape_err("concat", format!("column concat of [{r}, {c}] onto height {rows}")));
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::matrix(rows, cols, data)
            }
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::Concat(parts.to_vec(), axis), value, rg)
    }

    pub fn slice(&mut self, src: NodeId, rows: Range<usize>, cols: Range<usize>) -> Result<NodeId, NumericsError> {
        let (r, c) = self.matrix_dims("slice", src)?;
        if rows.start >= rows.end || cols.start >= cols.end || rows.end > r || cols.end > c {
            return Err(self.shape_err("slice", format!("rows {rows:?} cols {cols:?} of [{r}, {c}]")));
        }
        let v = self.value(src);
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            data.extend_from_slice(&v.row_slice(i)[cols.clone()]);
        }
        let value = Tensor::matrix(rows.len(), cols.len(), data);
        let rg = self.rg(src);
        self.push(Op::Slice { src, rows, cols }, value, rg)
    }

    pub fn slice_rows(&mut self, src: NodeId, rows: Range<usize>) -> Result<NodeId, NumericsError> {
        let c = self.value(src).cols();
        self.slice(src, rows, 0..c)
    }

    pub fn slice_cols(&mut self, src: NodeId, cols: Range<usize>) -> Result<NodeId, NumericsError> {
        let r = self.value(src).rows();
        self.slice(src, 0..r, cols)
    }

    // ---- composites ----

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId, NumericsError> {
        let k = self.constant(Tensor::scalar(s));
        self.hadamard(a, k)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.scale(a, -1.0)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> Result<NodeId, NumericsError> {
        let k = self.constant(Tensor::scalar(s));
        self.add(a, k)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let n = self.neg(a)?;
        self.add_scalar(n, 1.0)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Affine map `x · w + b` with `b` a `[1, n]` row.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Reverse sweep from a scalar node. Parameters not reachable from `loss`
    /// get all-zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumericsError> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input | Op::Constant => {}
                Op::Param(p) => out.grads[p.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = av.dims();
                    let n = bv.cols();
                    if self.rg(*a) {
                        let da = slot(&mut grads, *a, m, k);
                        // dA = dC · Bᵀ
                        gemm(m, n, k, (g.data(), n as isize, 1), (bv.data(), 1, n as isize), da.data_mut(), 1.0);
                    }
                    if self.rg(*b) {
                        let db = slot(&mut grads, *b, k, n);
                        // dB = Aᵀ · dC
                        gemm(k, m, n, (av.data(), 1, k as isize), (g.data(), n as isize, 1), db.data_mut(), 1.0);
                    }
                }
                Op::Add(a, b, bc) => {
                    if self.rg(*a) {
                        let (r, c) = g.dims();
                        slot(&mut grads, *a, r, c).add_assign(&g);
                    }
                    if self.rg(*b) {
                        let (r, c) = self.value(*b).dims();
                        reduce_into(slot(&mut grads, *b, r, c), &g, *bc, |x, _| x, None);
                    }
                }
                Op::Hadamard(a, b, bc) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.rg(*a) {
                        let (r, c) = g.dims();
                        let cols = c;
                        let da = slot(&mut grads, *a, r, c);
                        let d = da.data_mut();
                        for (idx, (dst, &gi)) in d.iter_mut().zip(g.data()).enumerate() {
                            let y = match bc {
                                Broadcast::None => bv.data()[idx],
                                Broadcast::Scalar => bv.data()[0],
                                Broadcast::Row => bv.data()[idx % cols],
                            };
                            *dst += gi * y;
                        }
                    }
                    if self.rg(*b) {
                        let (r, c) = bv.dims();
                        reduce_into(slot(&mut grads, *b, r, c), &g, *bc, |gi, x| gi * x, Some(av));
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("value");
                    let (r, c) = g.dims();
                    let d = slot(&mut grads, *a, r, c).data_mut();
                    for ((dst, &gi), &yi) in d.iter_mut().zip(g.data()).zip(y.data()) {
                        *dst += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("value");
                    let (r, c) = g.dims();
                    let d = slot(&mut grads, *a, r, c).data_mut();
                    for ((dst, &gi), &yi) in d.iter_mut().zip(g.data()).zip(y.data()) {
                        *dst += gi * (1.0 - yi * yi);
                    }
                }
                Op::Relu(a) | Op::Abs(a) => {
                    let relu = matches!(node.op, Op::Relu(_));
                    let x = self.value(*a);
                    let (r, c) = g.dims();
                    let d = slot(&mut grads, *a, r, c).data_mut();
                    for ((dst, &gi), &xi) in d.iter_mut().zip(g.data()).zip(x.data()) {
                        let dydx = if relu {
                            if xi > 0.0 { 1.0 } else { 0.0 }
                        } else if xi > 0.0 {
                            1.0
                        } else if xi < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *dst += gi * dydx;
                    }
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    let (r, c) = self.value(*a).dims();
                    for dst in slot(&mut grads, *a, r, c).data_mut() {
                        *dst += s;
                    }
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = self.value(p).dims();
                        if self.rg(p) {
                            let dst = slot(&mut grads, p, pr, pc);
                            match axis {
                                Axis::Rows => {
                                    let src = &g.data()[offset * pc..(offset + pr) * pc];
                                    for (d, s) in dst.data_mut().iter_mut().zip(src) {
                                        *d += s;
                                    }
                                }
                                Axis::Cols => {
                                    for r in 0..pr {
                                        let src = &g.row_slice(r)[offset..offset + pc];
                                        let row = &mut dst.data_mut()[r * pc..(r + 1) * pc];
                                        for (d, s) in row.iter_mut().zip(src) {
                                            *d += s;
                                        }
                                    }
                                }
                            }
                        }
                        offset += match axis {
                            Axis::Rows => pr,
                            Axis::Cols => pc,
                        };
                    }
                }
                Op::Slice { src, rows, cols } => {
                    let (sr, sc) = self.value(*src).dims();
                    let dst = slot(&mut grads, *src, sr, sc);
                    let w = cols.len();
                    for (k, r) in rows.clone().enumerate() {
                        let row = &mut dst.data_mut()[r * sc + cols.start..r * sc + cols.end];
                        for (d, s) in row.iter_mut().zip(&g.data()[k * w..(k + 1) * w]) {
                            *d += s;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn slot(grads: &mut [Option<Tensor>], id: NodeId, rows: usize, cols: usize) -> &mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

/// Accumulates `f(g, other)` into `dst`, summing over broadcast dimensions.
fn reduce_into(
    dst: &mut Tensor,
    g: &Tensor,
    bc: Broadcast,
    f: impl Fn(f64, f64) -> f64,
    other: Option<&Tensor>,
) {
    let cols = g.cols();
    let term = |i: usize| f(g.data()[i], other.map_or(0.0, |o| o.data()[i]));
    match bc {
        Broadcast::None => {
            for (i, d) in dst.data_mut().iter_mut().enumerate() {
                *d += term(i);
            }
        }
        Broadcast::Scalar => {
            let s: f64 = (0..g.len()).map(term).sum();
            dst.data_mut()[0] += s;
        }
        Broadcast::Row => {
            let d = dst.data_mut();
            for i in 0..g.len() {
                d[i % cols] += term(i);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(w: Tensor) -> (ParamStore, ParamId) {
        let mut ps = ParamStore::new();
        let id = ps.add("w", w);
        (ps, id)
    }

    #[test]
    fn identity_graph_returns_input() {
        let ps = ParamStore::new();
        let mut g = Graph::new(&ps);
        let x = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.5, 0.0]);
        let xi = g.input("x", x.clone()).unwrap();
        g.set_output("y", xi);
        assert_eq!(g.outputs()["y"], x);
    }

    #[test]
    fn zero_weight_matmul_annihilates() {
        let (ps, w) = store_with(Tensor::zeros(3, 2));
        let mut g = Graph::new(&ps);
        let x = g.input("x", Tensor::matrix(1, 3, vec![4.0, -1.0, 9.0])).unwrap();
        let wn = g.param(w);
        let y = g.matmul(x, wn).unwrap();
        assert_eq!(g.value(y), &Tensor::zeros(1, 2));
    }

    #[test]
    fn shape_mismatch_names_node() {
        let ps = ParamStore::new();
        let mut g = Graph::new(&ps);
        let a = g.input("a", Tensor::zeros(2, 3)).unwrap();
        let b = g.input("b", Tensor::zeros(2, 3)).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        match err {
            NumericsError::Shape { node, op, .. } => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(g.input("a", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn linear_map_gradient_is_input_broadcast_per_column() {
        // loss = sum(x · W): dL/dW[i][j] = x[i] for every j.
        let (ps, w) = store_with(Tensor::matrix(3, 2, vec![0.3, -0.1, 0.2, 0.5, -0.7, 0.9]));
        let mut g = Graph::new(&ps);
        let x = g.input("x", Tensor::row(&[1.5, -2.0, 0.25])).unwrap();
        let wn = g.param(w);
        let y = g.matmul(x, wn).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).data(), &[1.5, 1.5, -2.0, -2.0, 0.25, 0.25]);
    }

    #[test]
    fn unreachable_param_has_zero_gradient() {
        let mut ps = ParamStore::new();
        let a = ps.add("a", Tensor::row(&[1.0, 2.0]));
        let p = ps.add("p", Tensor::row(&[3.0, 4.0]));
        let mut g = Graph::new(&ps);
        let an = g.param(a);
        let _pn = g.param(p);
        let l = g.sum(an).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).data(), &[0.0, 0.0]);
        assert_eq!(grads.get(a).data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (ps, w) = store_with(Tensor::zeros(2, 2));
        let mut g = Graph::new(&ps);
        let wn = g.param(w);
        assert!(matches!(g.backward(wn), Err(NumericsError::NonScalarLoss(_))));
    }

    #[test]
    fn broadcast_add_reduces_gradient_over_rows() {
        let mut ps = ParamStore::new();
        let b = ps.add("b", Tensor::row(&[0.0, 0.0]));
        let mut g = Graph::new(&ps);
        let x = g.input("x", Tensor::zeros(3, 2)).unwrap();
        let bn = g.param(b);
        let y = g.add(x, bn).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn slice_and_concat_route_gradients() {
        let mut ps = ParamStore::new();
        let p = ps.add("p", Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let mut g = Graph::new(&ps);
        let pn = g.param(p);
        let s = g.slice(pn, 1..2, 1..3).unwrap();
        assert_eq!(g.value(s).data(), &[5.0, 6.0]);
        let c = g.concat(&[s, s], Axis::Rows).unwrap();
        let l = g.sum(c).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn non_finite_forward_is_rejected() {
        let ps = ParamStore::new();
        let mut g = Graph::new(&ps);
        let a = g.input("a", Tensor::scalar(1e300)).unwrap();
        let err = g.hadamard(a, a).unwrap_err();
        assert!(matches!(err, NumericsError::NonFiniteValue { op: "hadamard", .. }));
    }
}

//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] is an append-only arena of primitive operations. Values are
//! computed eagerly as nodes are recorded (so recording doubles as the
//! forward pass), and [`Tape::backward`] walks the arena once in reverse to
//! accumulate gradients into parameter slots.
//!
//! The op set is deliberately small: what a feed-forward network, its input
//! gradient, and a batched Lagrangian need, nothing more. All reductions use
//! a fixed sequential summation order so a seed pins results to the bit.

use thiserror::Error;

pub mod adam;
pub(crate) mod simd;

/// y = x·Wᵀ + b through the SIMD dispatcher; the weight transpose is
/// materialized per call so inner loops stream contiguously.
pub(crate) fn affine_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<f64> {
    let mut wt = vec![0.0; d_in * d_out];
    for o in 0..d_out {
        for k in 0..d_in {
            wt[k * d_out + o] = w[o * d_in + k];
        }
    }
    let mut out = vec![0.0; n * d_out];
    simd::affine_forward(x, &wt, b, &mut out, n, d_in, d_out);
    out
}

/// Dot product with eight independent accumulators. The grouping is fixed,
/// so results are reproducible run to run; the unrolling exists because a
/// single-accumulator reduction cannot be vectorized under strict FP rules.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 8;
    let mut acc = [0.0f64; 8];
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    (((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))) + tail
}

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in node {node} ({op}): {detail}")]
    ShapeMismatch { node: usize, op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got {len} elements")]
    LossNotScalar { len: usize },
    #[error("NaN encountered in backward at node {node} ({op})")]
    NanInBackward { node: usize, op: &'static str },
    #[error("invalid array: shape {shape:?} does not hold {len} values")]
    BadArray { shape: Vec<usize>, len: usize },
}

/// Dense row-major array of 64-bit floats. A scalar has the empty shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(AutodiffError::BadArray { shape, len: data.len() });
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Array { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Array { shape: vec![], data: vec![v] }
    }

    /// Column vector of batch values, shape `[n]`.
    pub fn vector(data: Vec<f64>) -> Self {
        Array { shape: vec![data.len()], data }
    }

    /// Matrix from rows, shape `[rows, cols]`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Array::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1
    }

    /// The single value of a scalar (or length-1) array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Rows/cols of a 2-D array.
    pub fn dims2(&self) -> (usize, usize) {
        debug_assert_eq!(self.shape.len(), 2);
        (self.shape[0], self.shape[1])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Slot a trainable parameter was bound to; gradients are returned per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot(usize);

impl ParamSlot {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamSlot),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    /// Derivative-of-relu step function; its own input derivative is zero,
    /// so backward needs no reference to the input.
    ReluStep,
    Tanh(NodeId),
    Square(NodeId),
    Matmul(NodeId, NodeId),
    Affine { x: NodeId, w: NodeId, b: NodeId },
    BroadcastRow { src: NodeId, rows: usize },
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    RowNorm(NodeId),
    Cols { src: NodeId, cols: Vec<usize> },
    GatherRows { src: NodeId, rows: Vec<usize> },
    ConcatRows(Vec<NodeId>),
    ClampCols { src: NodeId, lo: Vec<f64>, hi: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::ReluStep => "relu_step",
            Op::Tanh(_) => "tanh",
            Op::Square(_) => "square",
            Op::Matmul(..) => "matmul",
            Op::Affine { .. } => "affine",
            Op::BroadcastRow { .. } => "broadcast_row",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::RowNorm(_) => "row_norm",
            Op::Cols { .. } => "cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::ClampCols { .. } => "clamp_cols",
        }
    }
}

struct Node {
    op: Op,
    value: Array,
}

/// Gradients produced by a backward pass, indexed by [`ParamSlot`].
#[derive(Debug)]
pub struct Gradients {
    by_slot: Vec<Array>,
}

impl Gradients {
    pub fn slot(&self, slot: ParamSlot) -> &Array {
        &self.by_slot[slot.0]
    }
}

/// Append-only computation arena.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    slot_nodes: Vec<NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Array) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn mismatch(&self, op: &'static str, detail: String) -> AutodiffError {
        AutodiffError::ShapeMismatch { node: self.nodes.len(), op, detail }
    }

    /// Constant leaf: no gradient flows out of it.
    pub fn input(&mut self, value: Array) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Trainable leaf. Gradients for it come back under the returned slot.
    pub fn param(&mut self, value: Array) -> (NodeId, ParamSlot) {
        let slot = ParamSlot(self.slot_nodes.len());
        let id = self.push(Op::Param(slot), value);
        self.slot_nodes.push(id);
        (id, slot)
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape != vb.shape {
            return Err(self.mismatch(name, format!("{:?} vs {:?}", va.shape, vb.shape)));
        }
        let data = va
            .data
            .iter()
            .zip(&vb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Array { shape: va.shape.clone(), data };
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let va = &self.nodes[a.0].value;
        let value = Array {
            shape: va.shape.clone(),
            data: va.data.iter().map(|&x| f(x)).collect(),
        };
        self.push(op, value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Positive part, derivative 0 at the kink.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// Step function `1{x > 0}`, treated as locally constant by backward.
    pub fn relu_step(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| if x > 0.0 { 1.0 } else { 0.0 }, Op::ReluStep)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `a (n×k) · b (k×m)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape.len() != 2 || vb.shape.len() != 2 || va.shape[1] != vb.shape[0] {
            return Err(self.mismatch("matmul", format!("{:?} x {:?}", va.shape, vb.shape)));
        }
        let (n, k) = (va.shape[0], va.shape[1]);
        let m = vb.shape[1];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &va.data[i * k..(i + 1) * k];
            let orow = &mut out[i * m..(i + 1) * m];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &vb.data[p * m..(p + 1) * m];
                for (o, &bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        let value = Array { shape: vec![n, m], data: out };
        Ok(self.push(Op::Matmul(a, b), value))
    }

    /// `x (n×in) · wᵀ (in×out) + b`, the dense-layer primitive.
    /// `w` has shape `[out, in]`, `b` has shape `[out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (vx, vw, vb) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        if vx.shape.len() != 2 || vw.shape.len() != 2 {
            return Err(self.mismatch("affine", format!("x {:?}, w {:?}", vx.shape, vw.shape)));
        }
        let (n, d_in) = (vx.shape[0], vx.shape[1]);
        let (d_out, w_in) = (vw.shape[0], vw.shape[1]);
        if w_in != d_in || vb.shape != [d_out] {
            return Err(self.mismatch(
                "affine",
                format!("x {:?}, w {:?}, b {:?}", vx.shape, vw.shape, vb.shape),
            ));
        }
        let out = affine_forward(&vx.data, &vw.data, &vb.data, n, d_in, d_out);
        let value = Array { shape: vec![n, d_out], data: out };
        Ok(self.push(Op::Affine { x, w, b }, value))
    }

    /// Repeat a `[d]` or `[1, d]` array as `rows` identical rows.
    pub fn broadcast_row(&mut self, src: NodeId, rows: usize) -> Result<NodeId, AutodiffError> {
        let vs = &self.nodes[src.0].value;
        let d = match vs.shape.as_slice() {
            [d] => *d,
            [1, d] => *d,
            other => {
                return Err(self.mismatch("broadcast_row", format!("source shape {other:?}")))
            }
        };
        let mut data = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            data.extend_from_slice(&vs.data);
        }
        let value = Array { shape: vec![rows, d], data };
        Ok(self.push(Op::BroadcastRow { src, rows }, value))
    }

    /// Sum of all entries, scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Op::Sum(a), Array::scalar(total))
    }

    /// Mean of all entries, scalar.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let total: f64 = v.data.iter().sum();
        let m = total / v.data.len() as f64;
        self.push(Op::Mean(a), Array::scalar(m))
    }

    /// Per-row sum of an `n×d` array, shape `[n]`.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let v = &self.nodes[a.0].value;
        if v.shape.len() != 2 {
            return Err(self.mismatch("row_sum", format!("{:?}", v.shape)));
        }
        let (n, d) = (v.shape[0], v.shape[1]);
        let data = (0..n)
            .map(|i| v.data[i * d..(i + 1) * d].iter().sum())
            .collect();
        Ok(self.push(Op::RowSum(a), Array::vector(data)))
    }

    /// Per-row Euclidean norm of an `n×d` array, shape `[n]`.
    pub fn row_norm(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let v = &self.nodes[a.0].value;
        if v.shape.len() != 2 {
            return Err(self.mismatch("row_norm", format!("{:?}", v.shape)));
        }
        let (n, d) = (v.shape[0], v.shape[1]);
        let data = (0..n)
            .map(|i| {
                v.data[i * d..(i + 1) * d]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        Ok(self.push(Op::RowNorm(a), Array::vector(data)))
    }

    /// Select columns of an `n×d` array.
    pub fn cols(&mut self, src: NodeId, cols: Vec<usize>) -> Result<NodeId, AutodiffError> {
        let v = &self.nodes[src.0].value;
        if v.shape.len() != 2 {
            return Err(self.mismatch("cols", format!("{:?}", v.shape)));
        }
        let (n, d) = (v.shape[0], v.shape[1]);
        if let Some(&bad) = cols.iter().find(|&&c| c >= d) {
            return Err(self.mismatch("cols", format!("column {bad} out of {d}")));
        }
        let k = cols.len();
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = &v.data[i * d..(i + 1) * d];
            data.extend(cols.iter().map(|&c| row[c]));
        }
        let value = Array { shape: vec![n, k], data };
        Ok(self.push(Op::Cols { src, cols }, value))
    }

    /// Pick rows of an `n×d` array in the given order (repeats allowed).
    pub fn gather_rows(&mut self, src: NodeId, rows: Vec<usize>) -> Result<NodeId, AutodiffError> {
        let v = &self.nodes[src.0].value;
        if v.shape.len() != 2 {
            return Err(self.mismatch("gather_rows", format!("{:?}", v.shape)));
        }
        let (n, d) = (v.shape[0], v.shape[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(self.mismatch("gather_rows", format!("row {bad} out of {n}")));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            data.extend_from_slice(&v.data[r * d..(r + 1) * d]);
        }
        let value = Array { shape: vec![rows.len(), d], data };
        Ok(self.push(Op::GatherRows { src, rows }, value))
    }

    /// Stack 2-D arrays with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> Result<NodeId, AutodiffError> {
        if parts.is_empty() {
            return Err(self.mismatch("concat_rows", "no parts".into()));
        }
        let d = self.nodes[parts[0].0].value.shape[1];
        let mut data = Vec::new();
        let mut n = 0;
        for &p in &parts {
            let v = &self.nodes[p.0].value;
            if v.shape.len() != 2 || v.shape[1] != d {
                return Err(self.mismatch("concat_rows", format!("{:?} vs cols {d}", v.shape)));
            }
            n += v.shape[0];
            data.extend_from_slice(&v.data);
        }
        let value = Array { shape: vec![n, d], data };
        Ok(self.push(Op::ConcatRows(parts), value))
    }

    /// Clamp each column of an `n×d` array into its interval. The gradient is
    /// the identity inside the interval and zero outside.
    pub fn clamp_cols(
        &mut self,
        src: NodeId,
        lo: Vec<f64>,
        hi: Vec<f64>,
    ) -> Result<NodeId, AutodiffError> {
        let v = &self.nodes[src.0].value;
        if v.shape.len() != 2 || lo.len() != v.shape[1] || hi.len() != v.shape[1] {
            return Err(self.mismatch(
                "clamp_cols",
                format!("{:?} with {} bounds", v.shape, lo.len()),
            ));
        }
        let (n, d) = (v.shape[0], v.shape[1]);
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                data.push(v.data[i * d + j].clamp(lo[j], hi[j]));
            }
        }
        let value = Array { shape: vec![n, d], data };
        Ok(self.push(Op::ClampCols { src, lo, hi }, value))
    }

    /// True per node iff a parameter is reachable through its inputs, i.e.
    /// its gradient is worth computing at all. Frozen weights (plain inputs)
    /// and subtrees hanging only off them are masked out, which skips the
    /// dead half of the work on alternating-player graphs without changing
    /// any parameter gradient.
    fn needs_grad(&self) -> Vec<bool> {
        let mut needs = vec![false; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            needs[idx] = match &node.op {
                Op::Param(_) => true,
                Op::Input | Op::ReluStep => false,
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => {
                    needs[a.0] || needs[b.0]
                }
                Op::Affine { x, w, b } => needs[x.0] || needs[w.0] || needs[b.0],
                Op::Scale(a, _)
                | Op::AddScalar(a)
                | Op::Relu(a)
                | Op::Tanh(a)
                | Op::Square(a)
                | Op::Sum(a)
                | Op::Mean(a)
                | Op::RowSum(a)
                | Op::RowNorm(a) => needs[a.0],
                Op::BroadcastRow { src, .. }
                | Op::Cols { src, .. }
                | Op::GatherRows { src, .. }
                | Op::ClampCols { src, .. } => needs[src.0],
                Op::ConcatRows(parts) => parts.iter().any(|p| needs[p.0]),
            };
        }
        needs
    }

    /// Reverse pass from a scalar loss. Returns one gradient array per
    /// parameter slot (zeros for slots the loss does not depend on).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let lv = &self.nodes[loss.0].value;
        if lv.data.len() != 1 {
            return Err(AutodiffError::LossNotScalar { len: lv.data.len() });
        }
        let needs = self.needs_grad();
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if needs[i] || i == loss.0 {
                    vec![0.0; n.value.data.len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        grads[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if !needs[idx] && idx != loss.0 {
                continue;
            }
            let mut all_zero = true;
            for &gv in &grads[idx] {
                if gv != 0.0 {
                    all_zero = false;
                    if gv.is_nan() {
                        return Err(AutodiffError::NanInBackward {
                            node: idx,
                            op: self.nodes[idx].op.name(),
                        });
                    }
                }
            }
            if all_zero {
                continue;
            }
            // Leaves keep their gradient (params are collected below); the
            // step function contributes nothing to its input.
            if matches!(self.nodes[idx].op, Op::Input | Op::Param(_) | Op::ReluStep) {
                continue;
            }
            // Take the node's gradient out so inputs can be borrowed mutably.
            let g = std::mem::take(&mut grads[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) | Op::ReluStep => unreachable!(),
                Op::Add(a, b) => {
                    if needs[a.0] {
                        for (ga, gi) in grads[a.0].iter_mut().zip(&g) {
                            *ga += gi;
                        }
                    }
                    if needs[b.0] {
                        for (gb, gi) in grads[b.0].iter_mut().zip(&g) {
                            *gb += gi;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if needs[a.0] {
                        for (ga, gi) in grads[a.0].iter_mut().zip(&g) {
                            *ga += gi;
                        }
                    }
                    if needs[b.0] {
                        for (gb, gi) in grads[b.0].iter_mut().zip(&g) {
                            *gb -= gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if needs[a.0] {
                        for i in 0..g.len() {
                            grads[a.0][i] += g[i] * self.nodes[b.0].value.data[i];
                        }
                    }
                    if needs[b.0] {
                        for i in 0..g.len() {
                            grads[b.0][i] += g[i] * self.nodes[a.0].value.data[i];
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if needs[a.0] {
                        for (ga, gi) in grads[a.0].iter_mut().zip(&g) {
                            *ga += c * gi;
                        }
                    }
                }
                Op::AddScalar(a) => {
                    if needs[a.0] {
                        for (ga, gi) in grads[a.0].iter_mut().zip(&g) {
                            *ga += gi;
                        }
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    if needs[a.0] {
                        for i in 0..g.len() {
                            if self.nodes[a.0].value.data[i] > 0.0 {
                                grads[a.0][i] += g[i];
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    if needs[a.0] {
                        for i in 0..g.len() {
                            let y = node.value.data[i];
                            grads[a.0][i] += g[i] * (1.0 - y * y);
                        }
                    }
                }
                Op::Square(a) => {
                    let a = *a;
                    if needs[a.0] {
                        for i in 0..g.len() {
                            grads[a.0][i] += g[i] * 2.0 * self.nodes[a.0].value.data[i];
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (n, k) = self.nodes[a.0].value.dims2();
                    let m = self.nodes[b.0].value.shape[1];
                    if needs[a.0] {
                        let vb = &self.nodes[b.0].value.data;
                        let ga = &mut grads[a.0];
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            let garow = &mut ga[i * k..(i + 1) * k];
                            for p in 0..k {
                                garow[p] += dot(grow, &vb[p * m..(p + 1) * m]);
                            }
                        }
                    }
                    if needs[b.0] {
                        let va = &self.nodes[a.0].value.data;
                        let gb = &mut grads[b.0];
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            let arow = &va[i * k..(i + 1) * k];
                            for (p, &aip) in arow.iter().enumerate() {
                                if aip == 0.0 {
                                    continue;
                                }
                                let gbrow = &mut gb[p * m..(p + 1) * m];
                                for (gbj, gj) in gbrow.iter_mut().zip(grow) {
                                    *gbj += aip * gj;
                                }
                            }
                        }
                    }
                }
                Op::Affine { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (n, d_in) = self.nodes[x.0].value.dims2();
                    let d_out = self.nodes[w.0].value.shape[0];
                    if needs[x.0] {
                        let vw = &self.nodes[w.0].value.data;
                        simd::backward_input(&g, vw, &mut grads[x.0], n, d_in, d_out);
                    }
                    if needs[w.0] {
                        let vx = &self.nodes[x.0].value.data;
                        simd::backward_weight(&g, vx, &mut grads[w.0], n, d_in, d_out);
                    }
                    if needs[b.0] {
                        let gb = &mut grads[b.0];
                        for i in 0..n {
                            let grow = &g[i * d_out..(i + 1) * d_out];
                            for (gbo, go) in gb.iter_mut().zip(grow) {
                                *gbo += go;
                            }
                        }
                    }
                }
                Op::BroadcastRow { src, rows } => {
                    if needs[src.0] {
                        let d = grads[src.0].len();
                        for r in 0..*rows {
                            let grow = &g[r * d..(r + 1) * d];
                            for (gs, gi) in grads[src.0].iter_mut().zip(grow) {
                                *gs += gi;
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if needs[a.0] {
                        for ga in grads[a.0].iter_mut() {
                            *ga += g[0];
                        }
                    }
                }
                Op::Mean(a) => {
                    if needs[a.0] {
                        let scale = g[0] / grads[a.0].len() as f64;
                        for ga in grads[a.0].iter_mut() {
                            *ga += scale;
                        }
                    }
                }
                Op::RowSum(a) => {
                    let a = *a;
                    if !needs[a.0] {
                        continue;
                    }
                    let (n, d) = self.nodes[a.0].value.dims2();
                    for i in 0..n {
                        let garow = &mut grads[a.0][i * d..(i + 1) * d];
                        for ga in garow.iter_mut() {
                            *ga += g[i];
                        }
                    }
                }
                Op::RowNorm(a) => {
                    let a = *a;
                    if !needs[a.0] {
                        continue;
                    }
                    let (n, d) = self.nodes[a.0].value.dims2();
                    for i in 0..n {
                        let norm = node.value.data[i];
                        if norm == 0.0 {
                            continue;
                        }
                        let scale = g[i] / norm;
                        let row = &self.nodes[a.0].value.data[i * d..(i + 1) * d];
                        let garow = &mut grads[a.0][i * d..(i + 1) * d];
                        for (ga, &x) in garow.iter_mut().zip(row) {
                            *ga += scale * x;
                        }
                    }
                }
                Op::Cols { src, cols } => {
                    let src = *src;
                    if !needs[src.0] {
                        continue;
                    }
                    let d = self.nodes[src.0].value.shape[1];
                    let k = cols.len();
                    let n = node.value.shape[0];
                    for i in 0..n {
                        for (c, &col) in cols.iter().enumerate() {
                            grads[src.0][i * d + col] += g[i * k + c];
                        }
                    }
                }
                Op::GatherRows { src, rows } => {
                    let src = *src;
                    if !needs[src.0] {
                        continue;
                    }
                    let d = self.nodes[src.0].value.shape[1];
                    for (k, &r) in rows.iter().enumerate() {
                        let grow = &g[k * d..(k + 1) * d];
                        let garow = &mut grads[src.0][r * d..(r + 1) * d];
                        for (ga, gi) in garow.iter_mut().zip(grow) {
                            *ga += gi;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.data.len();
                        if needs[p.0] {
                            let gpart = &g[offset..offset + len];
                            for (gp, gi) in grads[p.0].iter_mut().zip(gpart) {
                                *gp += gi;
                            }
                        }
                        offset += len;
                    }
                }
                Op::ClampCols { src, lo, hi } => {
                    let src = *src;
                    if !needs[src.0] {
                        continue;
                    }
                    let (n, d) = self.nodes[src.0].value.dims2();
                    for i in 0..n {
                        for j in 0..d {
                            let x = self.nodes[src.0].value.data[i * d + j];
                            if x >= lo[j] && x <= hi[j] {
                                grads[src.0][i * d + j] += g[i * d + j];
                            }
                        }
                    }
                }
            }
        }

        let mut by_slot: Vec<Array> = self
            .slot_nodes
            .iter()
            .map(|&nid| Array::zeros(self.nodes[nid.0].value.shape.clone()))
            .collect();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(slot) = node.op {
                by_slot[slot.0].data = std::mem::take(&mut grads[idx]);
            }
        }
        Ok(Gradients { by_slot })
    }
}

/// Trainable value with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Array,
    pub grad: Array,
}

impl Parameter {
    pub fn new(value: Array) -> Self {
        let grad = Array::zeros(value.shape().to_vec());
        Parameter { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Copy slot gradients into the parameters' accumulators (zeroing first).
pub fn assign_grads(params: &mut [&mut Parameter], slots: &[ParamSlot], grads: &Gradients) {
    debug_assert_eq!(params.len(), slots.len());
    for (p, &slot) in params.iter_mut().zip(slots) {
        p.zero_grad();
        let src = grads.slot(slot);
        debug_assert_eq!(src.shape(), p.grad.shape());
        p.grad.data_mut().copy_from_slice(src.data());
    }
}

use rand::Rng;

use super::{NumericError, ParamGrads, ParamId, ParamStore, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Whether stochastic operations (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

enum Payload<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    /// C = A B for matrices [m,k] x [k,n].
    MatMul(NodeId, NodeId),
    /// row vector times matrix: v[m] M[m,n] -> [n].
    VecMat(NodeId, NodeId),
    /// W x + b -> vector.
    Affine { w: NodeId, x: NodeId, b: NodeId },
    Add(NodeId, NodeId),
    /// matrix plus a column vector broadcast across columns.
    AddCol(NodeId, NodeId),
    Scale(NodeId, T),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    /// elementwise product, same shape.
    Mul(NodeId, NodeId),
    /// vectors end to end into one vector.
    Concat(Vec<NodeId>),
    /// equal-length vectors as the columns of a matrix.
    HStack(Vec<NodeId>),
    Slice { x: NodeId, start: usize },
    Column { m: NodeId, col: usize },
    Gather { x: NodeId, indices: Vec<usize> },
    Softmax(NodeId),
    /// natural log of one probability: ln p[i] -> scalar.
    LogPick { p: NodeId, index: usize },
    Sum(NodeId),
    Mean(NodeId),
    /// inverted dropout; factors hold 0 or 1/(1-rate) per element.
    Dropout { x: NodeId, factors: Tensor<T> },
}

struct Node<T> {
    payload: Payload<T>,
    op: Op<T>,
}

/// Eager computation tape. Every operation computes its result immediately
/// and records its inputs; [`Tape::backward`] walks the records in reverse
/// execution order, which visits each node only after all of its consumers,
/// and accumulates parameter gradients into a [`ParamGrads`].
pub struct Tape<'p, T: Real> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, n: NodeId) -> &Tensor<T> {
        match &self.nodes[n.0].payload {
            Payload::Owned(t) => t,
            Payload::Param(id) => self.store.get(*id),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node {
            payload: Payload::Owned(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.constant(Tensor::zeros(shape))
    }

    /// Node view of a stored parameter. Repeated calls for the same
    /// parameter return the same node, so its gradient accumulates in one
    /// place.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        self.nodes.push(Node {
            payload: Payload::Param(id),
            op: Op::Leaf,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(n);
        n
    }

    fn want_rank(&self, op: &'static str, n: NodeId, rank: usize) -> Result<(), NumericError> {
        let shape = self.value(n).shape();
        if shape.len() != rank {
            return Err(NumericError::BadRank {
                op,
                expected: rank,
                shape: shape.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.want_rank("matmul", a, 2)?;
        self.want_rank("matmul", b, 2)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for l in 0..k {
                let ail = va.at2(i, l);
                for j in 0..n {
                    let v = out.at2(i, j) + ail * vb.at2(l, j);
                    out.set2(i, j, v);
                }
            }
        }
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> Result<NodeId, NumericError> {
        self.want_rank("vecmat", v, 1)?;
        self.want_rank("vecmat", m, 2)?;
        let (vv, vm) = (self.value(v), self.value(m));
        if vv.len() != vm.rows() {
            return Err(NumericError::ShapeMismatch {
                op: "vecmat",
                lhs: vv.shape().to_vec(),
                rhs: vm.shape().to_vec(),
            });
        }
        let (rows, cols) = (vm.rows(), vm.cols());
        let mut out = vec![T::zero(); cols];
        for i in 0..rows {
            let vi = vv.at(i);
            for j in 0..cols {
                out[j] = out[j] + vi * vm.at2(i, j);
            }
        }
        Ok(self.push(Tensor::vector(out), Op::VecMat(v, m)))
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.want_rank("affine", w, 2)?;
        self.want_rank("affine", x, 1)?;
        self.want_rank("affine", b, 1)?;
        let (vw, vx, vb) = (self.value(w), self.value(x), self.value(b));
        if vw.cols() != vx.len() {
            return Err(NumericError::ShapeMismatch {
                op: "affine",
                lhs: vw.shape().to_vec(),
                rhs: vx.shape().to_vec(),
            });
        }
        if vw.rows() != vb.len() {
            return Err(NumericError::ShapeMismatch {
                op: "affine",
                lhs: vw.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (rows, cols) = (vw.rows(), vw.cols());
        let mut out = vec![T::zero(); rows];
        for i in 0..rows {
            let mut acc = vb.at(i);
            for j in 0..cols {
                acc = acc + vw.at2(i, j) * vx.at(j);
            }
            out[i] = acc;
        }
        Ok(self.push(Tensor::vector(out), Op::Affine { w, x, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_vec(va.shape(), data);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn add_col(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, NumericError> {
        self.want_rank("add_col", m, 2)?;
        self.want_rank("add_col", v, 1)?;
        let (vm, vv) = (self.value(m), self.value(v));
        if vm.rows() != vv.len() {
            return Err(NumericError::ShapeMismatch {
                op: "add_col",
                lhs: vm.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let (rows, cols) = (vm.rows(), vm.cols());
        let mut out = Tensor::zeros(&[rows, cols]);
        for i in 0..rows {
            let vi = vv.at(i);
            for j in 0..cols {
                out.set2(i, j, vm.at2(i, j) + vi);
            }
        }
        Ok(self.push(out, Op::AddCol(m, v)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let c = T::from_f64(c);
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x * c).collect();
        let out = Tensor::from_vec(va.shape(), data);
        self.push(out, Op::Scale(a, c))
    }

    fn map(&mut self, a: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_vec(va.shape(), data);
        self.push(out, op)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let one = T::one();
        self.map(a, |x| one / (one + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(va.shape(), data);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericError> {
        if parts.is_empty() {
            return Err(NumericError::EmptyInput { op: "concat" });
        }
        let mut data = Vec::new();
        for &p in parts {
            self.want_rank("concat", p, 1)?;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec())))
    }

    pub fn hstack(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericError> {
        if parts.is_empty() {
            return Err(NumericError::EmptyInput { op: "hstack" });
        }
        self.want_rank("hstack", parts[0], 1)?;
        let rows = self.value(parts[0]).len();
        for &p in parts {
            self.want_rank("hstack", p, 1)?;
            if self.value(p).len() != rows {
                return Err(NumericError::ShapeMismatch {
                    op: "hstack",
                    lhs: vec![rows],
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let cols = parts.len();
        let mut out = Tensor::zeros(&[rows, cols]);
        for (j, &p) in parts.iter().enumerate() {
            let vp = self.value(p);
            for i in 0..rows {
                out.set2(i, j, vp.at(i));
            }
        }
        Ok(self.push(out, Op::HStack(parts.to_vec())))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NumericError> {
        self.want_rank("slice", x, 1)?;
        let vx = self.value(x);
        if start + len > vx.len() || len == 0 {
            return Err(NumericError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                size: vx.len(),
            });
        }
        let data = vx.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice { x, start }))
    }

    pub fn column(&mut self, m: NodeId, col: usize) -> Result<NodeId, NumericError> {
        self.want_rank("column", m, 2)?;
        let vm = self.value(m);
        if col >= vm.cols() {
            return Err(NumericError::IndexOutOfRange {
                op: "column",
                index: col,
                size: vm.cols(),
            });
        }
        let data = (0..vm.rows()).map(|i| vm.at2(i, col)).collect();
        Ok(self.push(Tensor::vector(data), Op::Column { m, col }))
    }

    pub fn gather(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId, NumericError> {
        self.want_rank("gather", x, 1)?;
        if indices.is_empty() {
            return Err(NumericError::EmptyInput { op: "gather" });
        }
        let vx = self.value(x);
        for &i in indices {
            if i >= vx.len() {
                return Err(NumericError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    size: vx.len(),
                });
            }
        }
        let data = indices.iter().map(|&i| vx.at(i)).collect();
        Ok(self.push(
            Tensor::vector(data),
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Numerically stable softmax over a vector: the maximum is subtracted
    /// before exponentiation, so a uniform shift of the input leaves the
    /// output unchanged.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, NumericError> {
        self.want_rank("softmax", x, 1)?;
        let vx = self.value(x);
        let mut max = vx.at(0);
        for &v in vx.data() {
            if v > max {
                max = v;
            }
        }
        let exps: Vec<T> = vx.data().iter().map(|&v| (v - max).exp()).collect();
        let mut z = T::zero();
        for &e in &exps {
            z = z + e;
        }
        let data = exps.into_iter().map(|e| e / z).collect();
        Ok(self.push(Tensor::vector(data), Op::Softmax(x)))
    }

    pub fn log_pick(&mut self, p: NodeId, index: usize) -> Result<NodeId, NumericError> {
        self.want_rank("log_pick", p, 1)?;
        let vp = self.value(p);
        if index >= vp.len() {
            return Err(NumericError::IndexOutOfRange {
                op: "log_pick",
                index,
                size: vp.len(),
            });
        }
        let out = Tensor::scalar(vp.at(index).ln());
        Ok(self.push(out, Op::LogPick { p, index }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let mut acc = T::zero();
        for &v in self.value(x).data() {
            acc = acc + v;
        }
        self.push(Tensor::scalar(acc), Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let n = T::from_f64(vx.len() as f64);
        let mut acc = T::zero();
        for &v in vx.data() {
            acc = acc + v;
        }
        self.push(Tensor::scalar(acc / n), Op::Mean(x))
    }

    /// Inverted dropout. In `Infer` mode or at rate 0 the input node is
    /// returned untouched; in `Train` mode each element is zeroed with
    /// probability `rate` and survivors are scaled by 1/(1-rate), so the
    /// expected value of every element is preserved.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<NodeId, NumericError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericError::BadDropoutRate { rate });
        }
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - rate));
        let vx = self.value(x);
        let factors: Vec<T> = (0..vx.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let factors = Tensor::from_vec(vx.shape(), factors);
        let data = vx.data().iter().zip(factors.data()).map(|(&a, &f)| a * f).collect();
        let out = Tensor::from_vec(vx.shape(), data);
        Ok(self.push(out, Op::Dropout { x, factors }))
    }

    /// Reverse sweep from a scalar loss. Gradients of parameter nodes are
    /// added into `grads`; parameters the loss does not depend on are left
    /// untouched (zero if `grads` was fresh). Repeated calls on different
    /// tapes accumulate, which is how a batch sums its sentence gradients.
    pub fn backward(&self, loss: NodeId, grads: &mut ParamGrads<T>) -> Result<(), NumericError> {
        let loss_shape = self.value(loss).shape();
        if loss_shape != [1] {
            return Err(NumericError::NonScalarLoss {
                shape: loss_shape.to_vec(),
            });
        }
        let mut node_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    if let Payload::Param(id) = self.nodes[i].payload {
                        grads.accumulate(id, &g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    {
                        let da = ensure(&mut node_grads[a.0], va.shape());
                        // dA += g B^T
                        for r in 0..va.rows() {
                            for c in 0..va.cols() {
                                let mut acc = da.at2(r, c);
                                for j in 0..vb.cols() {
                                    acc = acc + g.at2(r, j) * vb.at2(c, j);
                                }
                                da.set2(r, c, acc);
                            }
                        }
                    }
                    let db = ensure(&mut node_grads[b.0], vb.shape());
                    // dB += A^T g
                    for r in 0..vb.rows() {
                        for c in 0..vb.cols() {
                            let mut acc = db.at2(r, c);
                            for j in 0..va.rows() {
                                acc = acc + va.at2(j, r) * g.at2(j, c);
                            }
                            db.set2(r, c, acc);
                        }
                    }
                }
                Op::VecMat(v, m) => {
                    let (vv, vm) = (self.value(*v), self.value(*m));
                    {
                        let dv = ensure(&mut node_grads[v.0], vv.shape());
                        for i2 in 0..vm.rows() {
                            let mut acc = dv.at(i2);
                            for j in 0..vm.cols() {
                                acc = acc + vm.at2(i2, j) * g.at(j);
                            }
                            dv.data_mut()[i2] = acc;
                        }
                    }
                    let dm = ensure(&mut node_grads[m.0], vm.shape());
                    for i2 in 0..vm.rows() {
                        let vi = vv.at(i2);
                        for j in 0..vm.cols() {
                            let cur = dm.at2(i2, j);
                            dm.set2(i2, j, cur + vi * g.at(j));
                        }
                    }
                }
                Op::Affine { w, x, b } => {
                    let (vw, vx) = (self.value(*w), self.value(*x));
                    {
                        let dw = ensure(&mut node_grads[w.0], vw.shape());
                        for r in 0..vw.rows() {
                            let gr = g.at(r);
                            for c in 0..vw.cols() {
                                let cur = dw.at2(r, c);
                                dw.set2(r, c, cur + gr * vx.at(c));
                            }
                        }
                    }
                    {
                        let dx = ensure(&mut node_grads[x.0], vx.shape());
                        for c in 0..vw.cols() {
                            let mut acc = dx.at(c);
                            for r in 0..vw.rows() {
                                acc = acc + vw.at2(r, c) * g.at(r);
                            }
                            dx.data_mut()[c] = acc;
                        }
                    }
                    let db = ensure(&mut node_grads[b.0], &[vw.rows()]);
                    for r in 0..vw.rows() {
                        db.data_mut()[r] = db.at(r) + g.at(r);
                    }
                }
                Op::Add(a, b) => {
                    add_grad(&mut node_grads[a.0], &g);
                    add_grad(&mut node_grads[b.0], &g);
                }
                Op::AddCol(m, v) => {
                    add_grad(&mut node_grads[m.0], &g);
                    let dv = ensure(&mut node_grads[v.0], &[g.rows()]);
                    for r in 0..g.rows() {
                        let mut acc = dv.at(r);
                        for c in 0..g.cols() {
                            acc = acc + g.at2(r, c);
                        }
                        dv.data_mut()[r] = acc;
                    }
                }
                Op::Scale(a, c) => {
                    let da = ensure(&mut node_grads[a.0], g.shape());
                    for (d, &gi) in da.data_mut().iter_mut().zip(g.data()) {
                        *d = *d + *c * gi;
                    }
                }
                Op::Tanh(a) => {
                    let y = owned(&self.nodes[i].payload);
                    let da = ensure(&mut node_grads[a.0], g.shape());
                    for ((d, &gi), &yi) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d = *d + gi * (T::one() - yi * yi);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = owned(&self.nodes[i].payload);
                    let da = ensure(&mut node_grads[a.0], g.shape());
                    for ((d, &gi), &yi) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d = *d + gi * yi * (T::one() - yi);
                    }
                }
                Op::Relu(a) => {
                    let y = owned(&self.nodes[i].payload);
                    let da = ensure(&mut node_grads[a.0], g.shape());
                    for ((d, &gi), &yi) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if yi > T::zero() {
                            *d = *d + gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    {
                        let da = ensure(&mut node_grads[a.0], va.shape());
                        for ((d, &gi), &bi) in da.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                            *d = *d + gi * bi;
                        }
                    }
                    let db = ensure(&mut node_grads[b.0], vb.shape());
                    for ((d, &gi), &ai) in db.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *d = *d + gi * ai;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        let dp = ensure(&mut node_grads[p.0], &[len]);
                        for k in 0..len {
                            dp.data_mut()[k] = dp.at(k) + g.at(offset + k);
                        }
                        offset += len;
                    }
                }
                Op::HStack(parts) => {
                    for (j, &p) in parts.iter().enumerate() {
                        let len = self.value(p).len();
                        let dp = ensure(&mut node_grads[p.0], &[len]);
                        for r in 0..len {
                            dp.data_mut()[r] = dp.at(r) + g.at2(r, j);
                        }
                    }
                }
                Op::Slice { x, start } => {
                    let len = self.value(*x).len();
                    let dx = ensure(&mut node_grads[x.0], &[len]);
                    for k in 0..g.len() {
                        dx.data_mut()[start + k] = dx.at(start + k) + g.at(k);
                    }
                }
                Op::Column { m, col } => {
                    let shape = self.value(*m).shape();
                    let dm = ensure(&mut node_grads[m.0], shape);
                    for r in 0..g.len() {
                        let cur = dm.at2(r, *col);
                        dm.set2(r, *col, cur + g.at(r));
                    }
                }
                Op::Gather { x, indices } => {
                    let len = self.value(*x).len();
                    let dx = ensure(&mut node_grads[x.0], &[len]);
                    for (k, &src) in indices.iter().enumerate() {
                        dx.data_mut()[src] = dx.at(src) + g.at(k);
                    }
                }
                Op::Softmax(x) => {
                    let y = owned(&self.nodes[i].payload);
                    let mut dot = T::zero();
                    for (&gi, &yi) in g.data().iter().zip(y.data()) {
                        dot = dot + gi * yi;
                    }
                    let dx = ensure(&mut node_grads[x.0], g.shape());
                    for ((d, &gi), &yi) in dx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d = *d + yi * (gi - dot);
                    }
                }
                Op::LogPick { p, index } => {
                    let pi = self.value(*p).at(*index);
                    let len = self.value(*p).len();
                    let dp = ensure(&mut node_grads[p.0], &[len]);
                    dp.data_mut()[*index] = dp.at(*index) + g.at(0) / pi;
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape();
                    let dx = ensure(&mut node_grads[x.0], shape);
                    let g0 = g.at(0);
                    for d in dx.data_mut() {
                        *d = *d + g0;
                    }
                }
                Op::Mean(x) => {
                    let shape = self.value(*x).shape();
                    let n = self.value(*x).len();
                    let dx = ensure(&mut node_grads[x.0], shape);
                    let g0 = g.at(0) / T::from_f64(n as f64);
                    for d in dx.data_mut() {
                        *d = *d + g0;
                    }
                }
                Op::Dropout { x, factors } => {
                    let dx = ensure(&mut node_grads[x.0], g.shape());
                    for ((d, &gi), &fi) in dx.data_mut().iter_mut().zip(g.data()).zip(factors.data()) {
                        *d = *d + gi * fi;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Get the gradient tensor for a node, creating it as zeros on first touch.
fn ensure<'a, T: Real>(slot: &'a mut Option<Tensor<T>>, shape: &[usize]) -> &'a mut Tensor<T> {
    slot.get_or_insert_with(|| Tensor::zeros(shape))
}

fn add_grad<T: Real>(slot: &mut Option<Tensor<T>>, g: &Tensor<T>) {
    let t = ensure(slot, g.shape());
    for (d, &gi) in t.data_mut().iter_mut().zip(g.data()) {
        *d = *d + gi;
    }
}

fn owned<T: Real>(p: &Payload<T>) -> &Tensor<T> {
    match p {
        Payload::Owned(t) => t,
        Payload::Param(_) => unreachable!("non-leaf nodes own their value"),
    }
}

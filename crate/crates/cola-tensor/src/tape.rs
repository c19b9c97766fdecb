use crate::tensor::{cross_entropy_slices, is_distribution, softmax_row, Tensor, CE_CLAMP};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    StopGrad,
    Add(NodeId, NodeId),
    /// `[rows x n] + [n]`, bias broadcast across rows.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Elu(NodeId),
    Abs(NodeId),
    /// Rowwise `Softmax((x - offset) / tau)`; offset is rank 1 or absent.
    SoftmaxTemp { x: NodeId, offset: Option<NodeId>, tau: f64 },
    /// Rowwise `-sum(p * ln(q + clamp))` -> `[rows x 1]`.
    CrossEntropyRows { p: NodeId, q: NodeId },
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    ConcatCols(Vec<NodeId>),
    /// Same data, new shape.
    Reshape(NodeId),
    /// Row gather: `out[i] = src[idx[i]]`. Backward scatter-adds.
    GatherRows { src: NodeId, idx: Vec<usize> },
    /// Per-row column pick: `out[i, 0] = x[i, idx[i]]`.
    SelectCols { x: NodeId, idx: Vec<usize> },
    /// Per-row vector-matrix product: `out[b, j] = sum_i vecs[b, i] * mats[b, i * m + j]`.
    RowwiseVecMat { vecs: NodeId, mats: NodeId, m: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`]; indexed by [`NodeId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`, if any path reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Like [`Gradients::get`] but materializes zeros for unreached nodes.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        self.grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Records a forward computation and replays it in reverse for gradients.
///
/// A tape is rebuilt for every training step; nodes own their forward
/// values, so tensors fed to [`Tape::leaf`] are copied in.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(value.all_finite(), "tape op produced non-finite values");
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Introduces an input (parameter or constant) node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Forward identity whose backward contributes nothing to its parent.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.push(v, Op::StopGrad)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xb = self.value(x);
        let b = self.value(bias);
        assert!(
            b.rank() == 1 && b.cols() == xb.cols(),
            "add_row: bias {:?} does not match rows of {:?}",
            b.shape(),
            xb.shape()
        );
        let mut v = xb.clone();
        for i in 0..v.rows() {
            for (o, &bv) in v.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(v, Op::AddRow(x, bias))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).mul(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let v = self.value(x).scale(s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            av.rank() == 2 && bv.rank() == 2,
            "tape matmul wants rank-2 operands, got {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let v = av.matmul(bv);
        self.push(v, Op::Matmul(a, b))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|t| 1.0 / (1.0 + (-t).exp()));
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|t| t.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|t| if t > 0.0 { t } else { t.exp_m1() });
        self.push(v, Op::Elu(x))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::abs);
        self.push(v, Op::Abs(x))
    }

    /// Rowwise temperature softmax with optional rank-1 centering offset.
    pub fn softmax_with_temperature(
        &mut self,
        x: NodeId,
        offset: Option<NodeId>,
        tau: f64,
    ) -> NodeId {
        assert!(tau > 0.0, "softmax temperature must be > 0, got {tau}");
        let zeros;
        let off = match offset {
            Some(o) => {
                let ov = self.value(o);
                assert!(
                    ov.rank() == 1 && ov.cols() == self.value(x).cols(),
                    "softmax offset {:?} does not match logits {:?}",
                    ov.shape(),
                    self.value(x).shape()
                );
                ov.data().to_vec()
            }
            None => {
                zeros = vec![0.0; self.value(x).cols()];
                zeros
            }
        };
        let mut v = self.value(x).clone();
        for i in 0..v.rows() {
            softmax_row(v.row_mut(i), &off, tau);
        }
        self.push(v, Op::SoftmaxTemp { x, offset, tau })
    }

    /// Rowwise cross-entropy `-sum(p ln(q + clamp))` producing a `[rows x 1]` column.
    pub fn cross_entropy_rows(&mut self, p: NodeId, q: NodeId) -> NodeId {
        let (pv, qv) = (self.value(p), self.value(q));
        assert!(
            pv.shape() == qv.shape(),
            "cross_entropy: shape mismatch {:?} vs {:?}",
            pv.shape(),
            qv.shape()
        );
        let rows = pv.rows();
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            debug_assert!(is_distribution(pv.row(i)), "cross_entropy: p row {i} not a distribution");
            debug_assert!(is_distribution(qv.row(i)), "cross_entropy: q row {i} not a distribution");
            out.push(cross_entropy_slices(pv.row(i), qv.row(i)));
        }
        self.push(Tensor::new(&[rows, 1], out), Op::CrossEntropyRows { p, q })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push(v, Op::Mean(x))
    }

    /// Sums each row of a rank-2 tensor into a `[rows x 1]` column.
    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            out.push(xv.row(i).iter().sum());
        }
        self.push(Tensor::new(&[rows, 1], out), Op::RowSum(x))
    }

    /// Reinterprets the same row-major data under a new shape.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let xv = self.value(x);
        let n: usize = shape.iter().product();
        assert!(
            n == xv.len(),
            "reshape {:?} -> {:?} changes element count",
            xv.shape(),
            shape
        );
        let v = Tensor::new(shape, xv.data().to_vec());
        self.push(v, Op::Reshape(x))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(&[rows, total]);
        let mut col = 0;
        for &p in parts {
            let pv = self.value(p);
            assert!(
                pv.rows() == rows,
                "concat_cols: row mismatch {:?} vs {} rows",
                pv.shape(),
                rows
            );
            for i in 0..rows {
                let c = pv.cols();
                out.row_mut(i)[col..col + c].copy_from_slice(pv.row(i));
            }
            col += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Gathers rows of `src` by index, with repetition allowed.
    pub fn gather_rows(&mut self, src: NodeId, idx: &[usize]) -> NodeId {
        let sv = self.value(src);
        let cols = sv.cols();
        let mut out = Tensor::zeros(&[idx.len(), cols]);
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < sv.rows(), "gather_rows: index {r} out of range for {:?}", sv.shape());
            out.row_mut(i).copy_from_slice(sv.row(r));
        }
        self.push(out, Op::GatherRows { src, idx: idx.to_vec() })
    }

    /// Picks one column per row: `out[i, 0] = x[i, idx[i]]`.
    pub fn select_cols(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let xv = self.value(x);
        assert!(
            idx.len() == xv.rows(),
            "select_cols: {} indices for {} rows",
            idx.len(),
            xv.rows()
        );
        let mut out = Vec::with_capacity(idx.len());
        for (i, &j) in idx.iter().enumerate() {
            assert!(j < xv.cols(), "select_cols: column {j} out of range for {:?}", xv.shape());
            out.push(xv.get2(i, j));
        }
        self.push(Tensor::new(&[idx.len(), 1], out), Op::SelectCols { x, idx: idx.to_vec() })
    }

    /// Per-row vector–matrix product with row-local weights.
    ///
    /// `vecs` is `[B x n]`, `mats` is `[B x (n*m)]` holding a row-major
    /// `n x m` matrix per row; result is `[B x m]`.
    pub fn rowwise_vec_mat(&mut self, vecs: NodeId, mats: NodeId, m: usize) -> NodeId {
        let (vv, mv) = (self.value(vecs), self.value(mats));
        let (b, n) = (vv.rows(), vv.cols());
        assert!(
            mv.rows() == b && mv.cols() == n * m,
            "rowwise_vec_mat: vecs {:?} incompatible with mats {:?} (m = {m})",
            vv.shape(),
            mv.shape()
        );
        let mut out = Tensor::zeros(&[b, m]);
        for i in 0..b {
            let vrow = vv.row(i);
            let mrow = mv.row(i);
            let orow = out.row_mut(i);
            for (l, &v) in vrow.iter().enumerate() {
                let wrow = &mrow[l * m..(l + 1) * m];
                for (o, &w) in orow.iter_mut().zip(wrow) {
                    *o += v * w;
                }
            }
        }
        self.push(out, Op::RowwiseVecMat { vecs, mats, m })
    }

    /// Reverse accumulation from a scalar root. `d(root)/d(root) = 1`.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert!(
            self.value(root).is_scalar(),
            "backward root must be scalar, got shape {:?}",
            self.value(root).shape()
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::Add(a, b) => {
                add_grad(grads, *a, g.clone());
                add_grad(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                add_grad(grads, *x, g.clone());
                let cols = g.cols();
                let mut bg = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (acc, &gv) in bg.iter_mut().zip(g.row(r)) {
                        *acc += gv;
                    }
                }
                add_grad(grads, *bias, Tensor::new(&[cols], bg));
            }
            Op::Sub(a, b) => {
                add_grad(grads, *a, g.clone());
                add_grad(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                add_grad(grads, *a, g.mul(self.value(*b)));
                add_grad(grads, *b, g.mul(self.value(*a)));
            }
            Op::Scale(x, s) => add_grad(grads, *x, g.scale(*s)),
            Op::Matmul(a, b) => {
                add_grad(grads, *a, g.matmul_nt(self.value(*b)));
                add_grad(grads, *b, self.value(*a).matmul_tn(g));
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let d = g.mul(&y.map(|v| v * (1.0 - v)));
                add_grad(grads, *x, d);
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let d = g.mul(&y.map(|v| 1.0 - v * v));
                add_grad(grads, *x, d);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = g.mul(&xv.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
                add_grad(grads, *x, d);
            }
            Op::Elu(x) => {
                let xv = self.value(*x);
                let d = g.mul(&xv.map(|v| if v > 0.0 { 1.0 } else { v.exp() }));
                add_grad(grads, *x, d);
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                let d = g.mul(&xv.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }));
                add_grad(grads, *x, d);
            }
            Op::SoftmaxTemp { x, offset, tau } => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    let dr = dx.row_mut(r);
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot) / tau;
                    }
                }
                if let Some(o) = offset {
                    let cols = dx.cols();
                    let mut dof = vec![0.0; cols];
                    for r in 0..dx.rows() {
                        for (acc, &dv) in dof.iter_mut().zip(dx.row(r)) {
                            *acc -= dv;
                        }
                    }
                    add_grad(grads, *o, Tensor::new(&[cols], dof));
                }
                add_grad(grads, *x, dx);
            }
            Op::CrossEntropyRows { p, q } => {
                let (pv, qv) = (self.value(*p), self.value(*q));
                let mut dp = Tensor::zeros(pv.shape());
                let mut dq = Tensor::zeros(qv.shape());
                for r in 0..pv.rows() {
                    let gr = g.get2(r, 0);
                    let (pr, qr) = (pv.row(r), qv.row(r));
                    for j in 0..pr.len() {
                        dp.row_mut(r)[j] = -gr * (qr[j] + CE_CLAMP).ln();
                        dq.row_mut(r)[j] = -gr * pr[j] / (qr[j] + CE_CLAMP);
                    }
                }
                add_grad(grads, *p, dp);
                add_grad(grads, *q, dq);
            }
            Op::Sum(x) => {
                let s = g.item();
                add_grad(grads, *x, Tensor::full(self.value(*x).shape(), s));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let s = g.item() / xv.len() as f64;
                add_grad(grads, *x, Tensor::full(xv.shape(), s));
            }
            Op::RowSum(x) => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.shape());
                for r in 0..xv.rows() {
                    let gv = g.get2(r, 0);
                    for v in d.row_mut(r) {
                        *v = gv;
                    }
                }
                add_grad(grads, *x, d);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                add_grad(grads, *x, Tensor::new(&shape, g.data().to_vec()));
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    let mut d = Tensor::zeros(pv.shape());
                    for r in 0..pv.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[col..col + c]);
                    }
                    add_grad(grads, p, d);
                    col += c;
                }
            }
            Op::GatherRows { src, idx } => {
                let sv = self.value(*src);
                let mut d = Tensor::zeros(sv.shape());
                for (i, &r) in idx.iter().enumerate() {
                    let gr = g.row(i);
                    for (acc, &gv) in d.row_mut(r).iter_mut().zip(gr) {
                        *acc += gv;
                    }
                }
                add_grad(grads, *src, d);
            }
            Op::SelectCols { x, idx } => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.shape());
                for (i, &j) in idx.iter().enumerate() {
                    d.row_mut(i)[j] = g.get2(i, 0);
                }
                add_grad(grads, *x, d);
            }
            Op::RowwiseVecMat { vecs, mats, m } => {
                let (vv, mv) = (self.value(*vecs), self.value(*mats));
                let n = vv.cols();
                let mut dv = Tensor::zeros(vv.shape());
                let mut dm = Tensor::zeros(mv.shape());
                for b in 0..vv.rows() {
                    let gr = g.row(b);
                    let vrow = vv.row(b);
                    let mrow = mv.row(b);
                    let dvrow = dv.row_mut(b);
                    for l in 0..n {
                        let wrow = &mrow[l * m..(l + 1) * m];
                        let mut acc = 0.0;
                        for (gv, wv) in gr.iter().zip(wrow) {
                            acc += gv * wv;
                        }
                        dvrow[l] = acc;
                    }
                    let dmrow = dm.row_mut(b);
                    for (l, &v) in vrow.iter().enumerate() {
                        let drow = &mut dmrow[l * m..(l + 1) * m];
                        for (d, &gv) in drow.iter_mut().zip(gr) {
                            *d += gv * v;
                        }
                    }
                }
                add_grad(grads, *vecs, dv);
                add_grad(grads, *mats, dm);
            }
        }
    }
}

fn add_grad(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(g) => g.axpy(&delta, 1.0),
        slot @ None => *slot = Some(delta),
    }
}

//! Dense `f64` tensors with tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as an append-only list
//! of nodes; `backward` then runs one reverse sweep over that list. The tape is
//! rebuilt from scratch for each forward pass (dynamic graph), which keeps the
//! engine trivial to reason about: node ids are plain indices, and an op can
//! only ever reference earlier nodes, so creation order *is* topological order.
//!
//! Parameters share their storage with the parameter store via `Rc`, so
//! binding a model onto a fresh tape copies no data.
//!
//! Any non-finite value produced by an op is a hard error: training code is
//! expected to catch the panic and report which sample triggered it rather
//! than silently continuing with NaNs.

use std::rc::Rc;

/// Index of a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul(NodeId, NodeId),
    /// `[r,c] x [c] -> [r]`
    MatVec(NodeId, NodeId),
    /// `[r] x [r,c] -> [c]` (row vector times matrix)
    VecMat(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// element-wise product
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// row-wise softmax; a 1-D input is treated as a single row
    SoftmaxRows(NodeId),
    Transpose(NodeId),
    /// copy of row `i` of a matrix
    Row(NodeId, usize),
    /// stack equal-length vectors into a matrix, one per row
    StackRows(Vec<NodeId>),
    /// concatenate vectors end to end
    ConcatVec(Vec<NodeId>),
    /// columns `[start, start+len)` of a matrix
    SliceCols(NodeId, usize, usize),
    /// concatenate matrices with equal row counts along columns
    ConcatCols(Vec<NodeId>),
    /// sum of the table rows picked by `indices`
    EmbeddingSum(NodeId, Vec<usize>),
    /// full reduction to a scalar
    SumAll(NodeId),
    /// summed binary cross-entropy on logits against fixed 0/1 targets,
    /// computed in the overflow-safe form `max(z,0) - z*y + ln(1 + e^{-|z|})`
    BceWithLogits { logits: NodeId, targets: Vec<f64> },
    /// pairwise hinge between every label and the labels predicted positive at
    /// forward time; `predicted` is frozen when the node is created so the
    /// backward pass replays exactly the same pair set
    MultiLabelMargin {
        probs: NodeId,
        predicted: Vec<usize>,
        inv_norm: f64,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record. See module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn assert_finite(op: &str, data: &[f64]) {
    for &v in data {
        assert!(v.is_finite(), "{op}: produced non-finite value {v}");
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> NodeId {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            data: Rc::new(data),
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    // ── Leaves ──────────────────────────────────────────────────────────────

    /// Fixed input; receives no parameter updates but still carries gradient
    /// during the reverse sweep (needed when constants sit between parameters).
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> NodeId {
        assert_eq!(
            numel(shape),
            data.len(),
            "constant: shape {shape:?} does not hold {} values",
            data.len()
        );
        assert_finite("constant", &data);
        self.push(shape.to_vec(), data, Op::Leaf, false)
    }

    /// Trainable leaf sharing storage with the caller.
    pub fn param(&mut self, shape: &[usize], data: Rc<Vec<f64>>) -> NodeId {
        assert_eq!(
            numel(shape),
            data.len(),
            "param: shape {shape:?} does not hold {} values",
            data.len()
        );
        self.nodes.push(Node {
            shape: shape.to_vec(),
            data,
            grad: None,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(&[1], vec![v])
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.constant(shape, vec![0.0; numel(shape)])
    }

    pub fn ones(&mut self, shape: &[usize]) -> NodeId {
        self.constant(shape, vec![1.0; numel(shape)])
    }

    // ── Accessors ───────────────────────────────────────────────────────────

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let n = &self.nodes[id.0];
        assert_eq!(n.shape, [1], "scalar_value: node has shape {:?}", n.shape);
        n.data[0]
    }

    /// Gradient of the last `backward` target w.r.t. this node, if computed.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn dims2(&self, id: NodeId, op: &str) -> (usize, usize) {
        let s = self.shape(id);
        assert!(s.len() == 2, "{op}: expected a matrix, got shape {s:?}");
        (s[0], s[1])
    }

    fn dims1(&self, id: NodeId, op: &str) -> usize {
        let s = self.shape(id);
        assert!(s.len() == 1, "{op}: expected a vector, got shape {s:?}");
        s[0]
    }

    // ── Linear algebra ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.dims2(a, "matmul");
        let (k2, n) = self.dims2(b, "matmul");
        assert_eq!(
            k, k2,
            "matmul: inner dimensions disagree: {:?} x {:?}",
            self.shape(a),
            self.shape(b)
        );
        let (av, bv) = (self.value(a).to_vec(), self.value(b).to_vec());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let x = av[i * k + l];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[l * n..(l + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        assert_finite("matmul", &out);
        self.push(vec![m, n], out, Op::MatMul(a, b), false)
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (r, c) = self.dims2(m, "matvec");
        let lv = self.dims1(v, "matvec");
        assert_eq!(
            c, lv,
            "matvec: dimensions disagree: {:?} x {:?}",
            self.shape(m),
            self.shape(v)
        );
        let (mv, vv) = (self.value(m).to_vec(), self.value(v).to_vec());
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &mv[i * c..(i + 1) * c];
            out[i] = row.iter().zip(&vv).map(|(a, b)| a * b).sum();
        }
        assert_finite("matvec", &out);
        self.push(vec![r], out, Op::MatVec(m, v), false)
    }

    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> NodeId {
        let lv = self.dims1(v, "vecmat");
        let (r, c) = self.dims2(m, "vecmat");
        assert_eq!(
            lv, r,
            "vecmat: dimensions disagree: {:?} x {:?}",
            self.shape(v),
            self.shape(m)
        );
        let (vv, mv) = (self.value(v).to_vec(), self.value(m).to_vec());
        let mut out = vec![0.0; c];
        for i in 0..r {
            let x = vv[i];
            if x == 0.0 {
                continue;
            }
            let row = &mv[i * c..(i + 1) * c];
            for j in 0..c {
                out[j] += x * row[j];
            }
        }
        assert_finite("vecmat", &out);
        self.push(vec![c], out, Op::VecMat(v, m), false)
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims2(x, "transpose");
        let xv = self.value(x).to_vec();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xv[i * n + j];
            }
        }
        self.push(vec![n, m], out, Op::Transpose(x), false)
    }

    // ── Element-wise ────────────────────────────────────────────────────────

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, op_name: &str) -> Vec<usize> {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op_name}: shapes disagree: {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        self.shape(a).to_vec()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_same_shape(a, b, "add");
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(x, y)| x + y)
            .collect();
        assert_finite("add", &out);
        self.push(shape, out, Op::Add(a, b), false)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_same_shape(a, b, "sub");
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(x, y)| x - y)
            .collect();
        assert_finite("sub", &out);
        self.push(shape, out, Op::Sub(a, b), false)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_same_shape(a, b, "mul");
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(x, y)| x * y)
            .collect();
        assert_finite("mul", &out);
        self.push(shape, out, Op::Mul(a, b), false)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        assert_finite("scale", &out);
        self.push(shape, out, Op::Scale(x, c), false)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let out: Vec<f64> = self.value(x).iter().map(|&v| stable_sigmoid(v)).collect();
        assert_finite("sigmoid", &out);
        self.push(shape, out, Op::Sigmoid(x), false)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let out: Vec<f64> = self.value(x).iter().map(|v| v.tanh()).collect();
        assert_finite("tanh", &out);
        self.push(shape, out, Op::Tanh(x), false)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let out: Vec<f64> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        self.push(shape, out, Op::Relu(x), false)
    }

    /// Row-wise softmax with max-subtraction for stability. A vector is one row.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let (rows, cols) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => panic!("softmax_rows: expected vector or matrix, got shape {shape:?}"),
        };
        assert!(cols > 0, "softmax_rows: empty rows in shape {shape:?}");
        let xv = self.value(x).to_vec();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..cols {
                let e = (row[j] - max).exp();
                out[r * cols + j] = e;
                sum += e;
            }
            for j in 0..cols {
                out[r * cols + j] /= sum;
            }
        }
        assert_finite("softmax_rows", &out);
        self.push(shape, out, Op::SoftmaxRows(x), false)
    }

    // ── Shape manipulation ──────────────────────────────────────────────────

    pub fn row(&mut self, x: NodeId, i: usize) -> NodeId {
        let (m, n) = self.dims2(x, "row");
        assert!(i < m, "row: index {i} out of range for shape [{m}, {n}]");
        let out = self.value(x)[i * n..(i + 1) * n].to_vec();
        self.push(vec![n], out, Op::Row(x, i), false)
    }

    pub fn stack_rows(&mut self, rows: &[NodeId]) -> NodeId {
        assert!(!rows.is_empty(), "stack_rows: no rows given");
        let n = self.dims1(rows[0], "stack_rows");
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let ln = self.dims1(r, "stack_rows");
            assert_eq!(ln, n, "stack_rows: row lengths disagree: {n} vs {ln}");
            out.extend_from_slice(self.value(r));
        }
        self.push(vec![rows.len(), n], out, Op::StackRows(rows.to_vec()), false)
    }

    pub fn concat_vec(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_vec: no parts given");
        let mut out = Vec::new();
        for &p in parts {
            self.dims1(p, "concat_vec");
            out.extend_from_slice(self.value(p));
        }
        let total = out.len();
        self.push(vec![total], out, Op::ConcatVec(parts.to_vec()), false)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = self.dims2(x, "slice_cols");
        assert!(
            start + len <= n,
            "slice_cols: columns [{start}, {}) out of range for shape [{m}, {n}]",
            start + len
        );
        let xv = self.value(x);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        self.push(vec![m, len], out, Op::SliceCols(x, start, len), false)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: no parts given");
        let (m, _) = self.dims2(parts[0], "concat_cols");
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pm, pn) = self.dims2(p, "concat_cols");
                assert_eq!(
                    pm,
                    m,
                    "concat_cols: row counts disagree: {:?} vs {:?}",
                    self.shape(parts[0]),
                    self.shape(p)
                );
                pn
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push(vec![m, total], out, Op::ConcatCols(parts.to_vec()), false)
    }

    // ── Embedding and reductions ────────────────────────────────────────────

    /// Sum of the `table` rows selected by `indices` (multi-hot row lookup).
    /// The gradient scatters back into exactly those rows.
    pub fn embedding_sum(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let (v, d) = self.dims2(table, "embedding_sum");
        assert!(!indices.is_empty(), "embedding_sum: empty index set");
        let tv = self.value(table);
        let mut out = vec![0.0; d];
        for &idx in indices {
            assert!(idx < v, "embedding_sum: index {idx} out of range for table [{v}, {d}]");
            let row = &tv[idx * d..(idx + 1) * d];
            for j in 0..d {
                out[j] += row[j];
            }
        }
        assert_finite("embedding_sum", &out);
        self.push(vec![d], out, Op::EmbeddingSum(table, indices.to_vec()), false)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).iter().sum();
        assert_finite("sum_all", &[s]);
        self.push(vec![1], vec![s], Op::SumAll(x), false)
    }

    /// Dot product of two equal-length vectors, as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let prod = self.mul(a, b);
        self.sum_all(prod)
    }

    // ── Loss primitives ─────────────────────────────────────────────────────

    /// Summed binary cross-entropy of `logits` against fixed multi-hot
    /// `targets`, in the overflow-safe form. Backward is the closed form
    /// `sigmoid(z) - y`, so no intermediate sigmoid node is needed.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[f64]) -> NodeId {
        let n = self.dims1(logits, "bce_with_logits");
        assert_eq!(
            n,
            targets.len(),
            "bce_with_logits: {n} logits vs {} targets",
            targets.len()
        );
        for &y in targets {
            assert!(y == 0.0 || y == 1.0, "bce_with_logits: target {y} is not 0/1");
        }
        let mut total = 0.0;
        for (&z, &y) in self.value(logits).iter().zip(targets) {
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        assert_finite("bce_with_logits", &[total]);
        self.push(
            vec![1],
            vec![total],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            false,
        )
    }

    /// Pairwise ranking hinge over probabilities: for every label `i` and every
    /// label `j` predicted positive (prob > `threshold` at forward time),
    /// accumulate `max(0, 1 - (p_j - p_i))`, normalized by
    /// `truth_len * label_count`. Zero when nothing crosses the threshold.
    pub fn multi_label_margin(
        &mut self,
        probs: NodeId,
        truth_len: usize,
        threshold: f64,
    ) -> NodeId {
        let n = self.dims1(probs, "multi_label_margin");
        assert!(truth_len > 0, "multi_label_margin: empty ground-truth set");
        let pv = self.value(probs);
        let predicted: Vec<usize> = (0..n).filter(|&j| pv[j] > threshold).collect();
        let inv_norm = 1.0 / (truth_len * n) as f64;
        let mut total = 0.0;
        for &j in &predicted {
            let pj = pv[j];
            for &pi in pv.iter() {
                total += (1.0 - (pj - pi)).max(0.0);
            }
        }
        total *= inv_norm;
        assert_finite("multi_label_margin", &[total]);
        self.push(
            vec![1],
            vec![total],
            Op::MultiLabelMargin {
                probs,
                predicted,
                inv_norm,
            },
            false,
        )
    }

    // ── Backward ────────────────────────────────────────────────────────────

    /// Reverse sweep from `target`, which must be a scalar. Every node on the
    /// tape gets a gradient buffer; leaves not reached by any path keep zeros.
    pub fn backward(&mut self, target: NodeId) {
        assert_eq!(
            self.nodes[target.0].shape,
            [1],
            "backward: target must be a scalar, got shape {:?}",
            self.nodes[target.0].shape
        );
        for node in self.nodes.iter_mut() {
            node.grad = Some(vec![0.0; node.data.len()]);
        }
        self.nodes[target.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=target.0).rev() {
            let g = self.nodes[i].grad.clone().unwrap();
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[1];
                    let av = Rc::clone(&self.nodes[a.0].data);
                    let bv = Rc::clone(&self.nodes[b.0].data);
                    {
                        let da = self.nodes[a.0].grad.as_mut().unwrap();
                        for x in 0..m {
                            for l in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[x * n + j] * bv[l * n + j];
                                }
                                da[x * k + l] += acc;
                            }
                        }
                    }
                    let db = self.nodes[b.0].grad.as_mut().unwrap();
                    for l in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for x in 0..m {
                                acc += av[x * k + l] * g[x * n + j];
                            }
                            db[l * n + j] += acc;
                        }
                    }
                }
                Op::MatVec(m_id, v_id) => {
                    let (r, c) = (self.nodes[m_id.0].shape[0], self.nodes[m_id.0].shape[1]);
                    let mv = Rc::clone(&self.nodes[m_id.0].data);
                    let vv = Rc::clone(&self.nodes[v_id.0].data);
                    {
                        let dm = self.nodes[m_id.0].grad.as_mut().unwrap();
                        for i2 in 0..r {
                            for j in 0..c {
                                dm[i2 * c + j] += g[i2] * vv[j];
                            }
                        }
                    }
                    let dv = self.nodes[v_id.0].grad.as_mut().unwrap();
                    for i2 in 0..r {
                        let gi = g[i2];
                        if gi == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            dv[j] += mv[i2 * c + j] * gi;
                        }
                    }
                }
                Op::VecMat(v_id, m_id) => {
                    let (r, c) = (self.nodes[m_id.0].shape[0], self.nodes[m_id.0].shape[1]);
                    let mv = Rc::clone(&self.nodes[m_id.0].data);
                    let vv = Rc::clone(&self.nodes[v_id.0].data);
                    {
                        let dv = self.nodes[v_id.0].grad.as_mut().unwrap();
                        for i2 in 0..r {
                            let mut acc = 0.0;
                            for j in 0..c {
                                acc += mv[i2 * c + j] * g[j];
                            }
                            dv[i2] += acc;
                        }
                    }
                    let dm = self.nodes[m_id.0].grad.as_mut().unwrap();
                    for i2 in 0..r {
                        let x = vv[i2];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            dm[i2 * c + j] += x * g[j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_assign(self.nodes[a.0].grad.as_mut().unwrap(), &g, 1.0);
                    add_assign(self.nodes[b.0].grad.as_mut().unwrap(), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_assign(self.nodes[a.0].grad.as_mut().unwrap(), &g, 1.0);
                    add_assign(self.nodes[b.0].grad.as_mut().unwrap(), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let av = Rc::clone(&self.nodes[a.0].data);
                    let bv = Rc::clone(&self.nodes[b.0].data);
                    {
                        let da = self.nodes[a.0].grad.as_mut().unwrap();
                        for (k, gv) in g.iter().enumerate() {
                            da[k] += gv * bv[k];
                        }
                    }
                    let db = self.nodes[b.0].grad.as_mut().unwrap();
                    for (k, gv) in g.iter().enumerate() {
                        db[k] += gv * av[k];
                    }
                }
                Op::Scale(x, c) => {
                    add_assign(self.nodes[x.0].grad.as_mut().unwrap(), &g, c);
                }
                Op::Sigmoid(x) => {
                    let out = Rc::clone(&self.nodes[i].data);
                    let dx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (k, gv) in g.iter().enumerate() {
                        dx[k] += gv * out[k] * (1.0 - out[k]);
                    }
                }
                Op::Tanh(x) => {
                    let out = Rc::clone(&self.nodes[i].data);
                    let dx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (k, gv) in g.iter().enumerate() {
                        dx[k] += gv * (1.0 - out[k] * out[k]);
                    }
                }
                Op::Relu(x) => {
                    let xv = Rc::clone(&self.nodes[x.0].data);
                    let dx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (k, gv) in g.iter().enumerate() {
                        if xv[k] > 0.0 {
                            dx[k] += gv;
                        }
                    }
                }
                Op::SoftmaxRows(x) => {
                    let shape = &self.nodes[i].shape;
                    let (rows, cols) = if shape.len() == 1 {
                        (1, shape[0])
                    } else {
                        (shape[0], shape[1])
                    };
                    let out = Rc::clone(&self.nodes[i].data);
                    let dx = self.nodes[x.0].grad.as_mut().unwrap();
                    for r2 in 0..rows {
                        let s = &out[r2 * cols..(r2 + 1) * cols];
                        let gr = &g[r2 * cols..(r2 + 1) * cols];
                        let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dx[r2 * cols + j] += s[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::Transpose(x) => {
                    let (n, m) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let dx = self.nodes[x.0].grad.as_mut().unwrap();
                    for r2 in 0..n {
                        for c2 in 0..m {
                            dx[c2 * n + r2] += g[r2 * m + c2];
                        }
                    }
                }
                Op::Row(x, r2) => {
                    let n = self.nodes[i].shape[0];
                    let dx = self.nodes[x.0].grad.as_mut().unwrap();
                    for j in 0..n {
                        dx[r2 * n + j] += g[j];
                    }
                }
                Op::StackRows(rows) => {
                    let n = self.nodes[i].shape[1];
                    for (r2, &rid) in rows.iter().enumerate() {
                        let dr = self.nodes[rid.0].grad.as_mut().unwrap();
                        for j in 0..n {
                            dr[j] += g[r2 * n + j];
                        }
                    }
                }
                Op::ConcatVec(parts) => {
                    let mut off = 0;
                    for &p in &parts {
                        let len = self.nodes[p.0].data.len();
                        let dp = self.nodes[p.0].grad.as_mut().unwrap();
                        for j in 0..len {
                            dp[j] += g[off + j];
                        }
                        off += len;
                    }
                }
                Op::SliceCols(x, start, len) => {
                    let m = self.nodes[i].shape[0];
                    let n = self.nodes[x.0].shape[1];
                    let dx = self.nodes[x.0].grad.as_mut().unwrap();
                    for r2 in 0..m {
                        for j in 0..len {
                            dx[r2 * n + start + j] += g[r2 * len + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let m = self.nodes[i].shape[0];
                    let total = self.nodes[i].shape[1];
                    let mut off = 0;
                    for &p in &parts {
                        let w = self.nodes[p.0].shape[1];
                        let dp = self.nodes[p.0].grad.as_mut().unwrap();
                        for r2 in 0..m {
                            for j in 0..w {
                                dp[r2 * w + j] += g[r2 * total + off + j];
                            }
                        }
                        off += w;
                    }
                }
                Op::EmbeddingSum(table, indices) => {
                    let d = self.nodes[i].shape[0];
                    let dt = self.nodes[table.0].grad.as_mut().unwrap();
                    for &idx in &indices {
                        for j in 0..d {
                            dt[idx * d + j] += g[j];
                        }
                    }
                }
                Op::SumAll(x) => {
                    let gi = g[0];
                    for slot in self.nodes[x.0].grad.as_mut().unwrap() {
                        *slot += gi;
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    let zv = Rc::clone(&self.nodes[logits.0].data);
                    let dz = self.nodes[logits.0].grad.as_mut().unwrap();
                    for (k, &y) in targets.iter().enumerate() {
                        dz[k] += g[0] * (stable_sigmoid(zv[k]) - y);
                    }
                }
                Op::MultiLabelMargin {
                    probs,
                    predicted,
                    inv_norm,
                } => {
                    let pv = Rc::clone(&self.nodes[probs.0].data);
                    let dp = self.nodes[probs.0].grad.as_mut().unwrap();
                    let gn = g[0] * inv_norm;
                    for &j in &predicted {
                        let pj = pv[j];
                        for (i2, &pi) in pv.iter().enumerate() {
                            if 1.0 - (pj - pi) > 0.0 {
                                dp[j] -= gn;
                                dp[i2] += gn;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_assign(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * factor;
    }
}

// ── Tests ───────────────────────────────────────────────────────────────────

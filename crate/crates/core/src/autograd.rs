//! Tape-based reverse-mode automatic differentiation.
//!
//! Every primitive evaluates eagerly and appends one node to the [`Tape`].
//! Nodes are only ever appended, so the node list is already in topological
//! order and [`Tape::backward`] is a single reverse sweep.
//!
//! Leaves are either differentiable ([`Tape::param`]) or constant
//! ([`Tape::constant`]). Nodes whose inputs are all constant are marked as not
//! requiring a gradient and are skipped during the backward sweep, which is
//! what keeps input-gradient computations for attacks from paying for weight
//! gradients they never use.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn tape_id(&self) -> u64 {
        self.tape
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    BiasAdd(usize, usize),
    MatMul { a: usize, b: usize, transpose_b: bool },
    Conv2d { input: usize, weight: usize, padding: usize },
    Relu(usize),
    MaxPool2 { input: usize, argmax: Vec<usize> },
    Reshape(usize),
    SoftmaxCe { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
    CwMargin { logits: usize, labels: Vec<usize>, runner_up: Vec<usize> },
    L2SqDist(usize, usize),
    Sqrt(usize),
    Mean(usize),
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of primitive evaluations.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Records a leaf; `requires_grad` marks it differentiable.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(Op::Leaf, value, requires_grad, "leaf")
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(name, ia, ib)?;
        let value = self.nodes[ia].value.zip_map(&self.nodes[ib].value, f)?;
        let rg = self.rg(ia) || self.rg(ib);
        self.push(op(ia, ib), value, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("subtract", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("multiply", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|v| v * c);
        let rg = self.rg(ia);
        self.push(Op::Scale(ia, c), value, rg, "scalar-multiply")
    }

    /// Adds `bias` (shape `[C]`) along axis 1 of `a`, broadcasting over every other axis.
    pub fn bias_add(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(bias)?);
        let shape = self.nodes[ia].value.shape().to_vec();
        let bshape = self.nodes[ib].value.shape();
        if shape.len() < 2 || bshape != [shape[1]] {
            return Err(Error::shape("bias-add", format!("{shape:?} + {bshape:?}")));
        }
        let channels = shape[1];
        let inner: usize = shape[2..].iter().product();
        let b = self.nodes[ib].value.data();
        let mut out = self.nodes[ia].value.data().to_vec();
        for (k, chunk) in out.chunks_mut(inner).enumerate() {
            let bv = b[k % channels];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::BiasAdd(ia, ib), Tensor::from_parts(shape, out), rg, "bias-add")
    }

    /// Matrix product `a · b` (or `a · bᵀ` when `transpose_b`), both rank 2.
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matrix-multiply", format!("{sa:?} x {sb:?}")));
        }
        let (n, k) = (sa[0], sa[1]);
        let (kb, m) = if transpose_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            let t = if transpose_b { "ᵀ" } else { "" };
            return Err(Error::shape("matrix-multiply", format!("{sa:?} x {sb:?}{t}")));
        }
        let av = MatRef::row_major(self.nodes[ia].value.data(), n, k);
        let bv = if transpose_b {
            MatRef::transposed(self.nodes[ib].value.data(), m, k)
        } else {
            MatRef::row_major(self.nodes[ib].value.data(), k, m)
        };
        let mut out = vec![0.0; n * m];
        gemm(av, bv, &mut out, 0.0);
        let rg = self.rg(ia) || self.rg(ib);
        self.push(
            Op::MatMul {
                a: ia,
                b: ib,
                transpose_b,
            },
            Tensor::from_parts(vec![n, m], out),
            rg,
            "matrix-multiply",
        )
    }

    /// Stride-1 2-D convolution (cross-correlation) of `input` `[B,C,H,W]` with
    /// `weight` `[O,C,k,k]` and `padding` zeros on every border. No bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, padding: usize) -> Result<Var> {
        let (ix, iw) = (self.idx(input)?, self.idx(weight)?);
        let xs = self.nodes[ix].value.shape().to_vec();
        let ws = self.nodes[iw].value.shape().to_vec();
        let geom = ConvGeom::new(&xs, &ws, padding)?;
        let x = self.nodes[ix].value.data();
        let w = self.nodes[iw].value.data();
        let mut out = vec![0.0; geom.batch * geom.out_ch * geom.out_area()];
        let mut cols = vec![0.0; geom.patch() * geom.out_area()];
        for (b, out_b) in out.chunks_mut(geom.out_ch * geom.out_area()).enumerate() {
            geom.im2col(&x[b * geom.in_len()..(b + 1) * geom.in_len()], &mut cols);
            gemm(
                MatRef::row_major(w, geom.out_ch, geom.patch()),
                MatRef::row_major(&cols, geom.patch(), geom.out_area()),
                out_b,
                0.0,
            );
        }
        let shape = vec![geom.batch, geom.out_ch, geom.out_h, geom.out_w];
        let rg = self.rg(ix) || self.rg(iw);
        self.push(
            Op::Conv2d {
                input: ix,
                weight: iw,
                padding,
            },
            Tensor::from_parts(shape, out),
            rg,
            "conv2d",
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(ia);
        self.push(Op::Relu(ia), value, rg, "relu")
    }

    /// 2×2 max-pooling with stride 2 over `[B,C,H,W]`; odd trailing rows/columns are dropped.
    pub fn maxpool2(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.shape().to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::shape("maxpool2", format!("{s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let x = self.nodes[ia].value.data();
        let planes = s[0] * s[1];
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[j] > x[best] {
                            best = j;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(ia);
        self.push(
            Op::MaxPool2 { input: ia, argmax },
            Tensor::from_parts(vec![s[0], s[1], oh, ow], out),
            rg,
            "maxpool2",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.clone().reshape(shape)?;
        let rg = self.rg(ia);
        self.push(Op::Reshape(ia), value, rg, "reshape")
    }

    /// Collapses every axis after the first: `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.shape();
        if s.is_empty() {
            return Err(Error::shape("flatten", "scalar input"));
        }
        let shape = [s[0], s[1..].iter().product()];
        self.reshape(a, &shape)
    }

    fn check_logits(&self, op: &'static str, il: usize, labels: &[usize]) -> Result<(usize, usize)> {
        let s = self.nodes[il].value.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(op, format!("logits {s:?} with {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= s[1]) {
            return Err(Error::shape(op, format!("label {bad} out of range for {} classes", s[1])));
        }
        Ok((s[0], s[1]))
    }

    /// Per-example softmax cross-entropy, shape `[B]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let (n, c) = self.check_logits("softmax-cross-entropy", il, labels)?;
        let z = self.nodes[il].value.data();
        let mut probs = vec![0.0; n * c];
        let mut loss = Vec::with_capacity(n);
        for i in 0..n {
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (p, &v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - max).exp();
                total += *p;
            }
            probs[i * c..(i + 1) * c].iter_mut().for_each(|p| *p /= total);
            // log-sum-exp minus the true logit; never negative up to rounding
            loss.push((max + total.ln() - row[labels[i]]).max(0.0));
        }
        let rg = self.rg(il);
        self.push(
            Op::SoftmaxCe {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::from_parts(vec![n], loss),
            rg,
            "softmax-cross-entropy",
        )
    }

    /// Per-example untargeted margin `max_{j≠y} z_j − z_y`, shape `[B]`.
    pub fn cw_margin(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let (n, c) = self.check_logits("cw-margin", il, labels)?;
        if c < 2 {
            return Err(Error::shape("cw-margin", "needs at least two classes"));
        }
        let z = self.nodes[il].value.data();
        let mut runner_up = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for (i, &y) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let r = (0..c)
                .filter(|&j| j != y)
                .fold(None, |best: Option<usize>, j| match best {
                    Some(b) if row[b] >= row[j] => Some(b),
                    _ => Some(j),
                })
                .expect("at least two classes");
            runner_up.push(r);
            out.push(row[r] - row[y]);
        }
        let rg = self.rg(il);
        self.push(
            Op::CwMargin {
                logits: il,
                labels: labels.to_vec(),
                runner_up,
            },
            Tensor::from_parts(vec![n], out),
            rg,
            "cw-margin",
        )
    }

    /// Row-wise squared Euclidean distance over the leading axis, shape `[rows]`.
    pub fn l2_sq_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("l2-squared-distance", ia, ib)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let rows = va.rows();
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                va.row(r)
                    .iter()
                    .zip(vb.row(r))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            })
            .collect();
        let rg = self.rg(ia) || self.rg(ib);
        self.push(
            Op::L2SqDist(ia, ib),
            Tensor::from_parts(vec![rows], out),
            rg,
            "l2-squared-distance",
        )
    }

    /// Elementwise square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        if self.nodes[ia].value.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("sqrt of negative value".into()));
        }
        let value = self.nodes[ia].value.map(f64::sqrt);
        let rg = self.rg(ia);
        self.push(Op::Sqrt(ia), value, rg, "sqrt")
    }

    /// Mean of all entries (used as the mean over a batch of per-example losses).
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let value = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(ia);
        self.push(Op::Mean(ia), value, rg, "mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = Tensor::scalar(self.nodes[ia].value.sum());
        let rg = self.rg(ia);
        self.push(Op::Sum(ia), value, rg, "sum")
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// Every differentiable leaf gets an entry; leaves the root does not
    /// depend on receive zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let ir = self.idx(root)?;
        let rv = &self.nodes[ir].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; ir + 1];
        grads[ir] = Some(Tensor::full(rv.shape(), 1.0));
        for i in (0..=ir).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        let mut out = Vec::with_capacity(ir + 1);
        for (i, node) in self.nodes.iter().enumerate().take(ir + 1) {
            let leaf_grad = match node.op {
                Op::Leaf if node.requires_grad => Some(
                    grads[i]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(node.value.shape())),
                ),
                _ => None,
            };
            out.push(leaf_grad);
        }
        for (i, node) in self.nodes.iter().enumerate().skip(ir + 1) {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                out.resize(i + 1, None);
                out[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(grads, a, || gd.to_vec());
                self.accumulate(grads, b, || gd.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, || gd.to_vec());
                self.accumulate(grads, b, || gd.iter().map(|v| -v).collect());
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                self.accumulate(grads, a, || gd.iter().zip(vb).map(|(g, y)| g * y).collect());
                self.accumulate(grads, b, || gd.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            &Op::Scale(a, c) => {
                self.accumulate(grads, a, || gd.iter().map(|v| v * c).collect());
            }
            &Op::BiasAdd(a, b) => {
                self.accumulate(grads, a, || gd.to_vec());
                self.accumulate(grads, b, || {
                    let shape = self.nodes[a].value.shape();
                    let channels = shape[1];
                    let inner: usize = shape[2..].iter().product();
                    let mut gb = vec![0.0; channels];
                    for (k, chunk) in gd.chunks(inner).enumerate() {
                        gb[k % channels] += chunk.iter().sum::<f64>();
                    }
                    gb
                });
            }
            &Op::MatMul { a, b, transpose_b } => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                let (n, k) = (va.shape()[0], va.shape()[1]);
                let m = g.shape()[1];
                let gmat = MatRef::row_major(gd, n, m);
                self.accumulate(grads, a, || {
                    // dA = G · Bᵀ (or G · B when B was used transposed)
                    let bt = if transpose_b {
                        MatRef::row_major(vb.data(), m, k)
                    } else {
                        MatRef::transposed(vb.data(), k, m)
                    };
                    let mut out = vec![0.0; n * k];
                    gemm(gmat, bt, &mut out, 0.0);
                    out
                });
                self.accumulate(grads, b, || {
                    let at = MatRef::transposed(va.data(), n, k);
                    if transpose_b {
                        // dB (m×k) = Gᵀ · A
                        let mut out = vec![0.0; m * k];
                        gemm(MatRef::transposed(gd, n, m), MatRef::row_major(va.data(), n, k), &mut out, 0.0);
                        out
                    } else {
                        // dB (k×m) = Aᵀ · G
                        let mut out = vec![0.0; k * m];
                        gemm(at, gmat, &mut out, 0.0);
                        out
                    }
                });
            }
            &Op::Conv2d {
                input,
                weight,
                padding,
            } => {
                let (vx, vw) = (&self.nodes[input].value, &self.nodes[weight].value);
                let geom = ConvGeom::new(vx.shape(), vw.shape(), padding)
                    .expect("conv geometry validated in forward");
                let need_x = self.rg(input);
                let need_w = self.rg(weight);
                let mut gx = if need_x { vec![0.0; vx.len()] } else { Vec::new() };
                let mut gw = if need_w { vec![0.0; vw.len()] } else { Vec::new() };
                let mut cols = vec![0.0; geom.patch() * geom.out_area()];
                let out_len = geom.out_ch * geom.out_area();
                for b in 0..geom.batch {
                    let g_b = MatRef::row_major(&gd[b * out_len..(b + 1) * out_len], geom.out_ch, geom.out_area());
                    if need_w {
                        geom.im2col(&vx.data()[b * geom.in_len()..(b + 1) * geom.in_len()], &mut cols);
                        gemm(
                            g_b,
                            MatRef::transposed(&cols, geom.patch(), geom.out_area()),
                            &mut gw,
                            1.0,
                        );
                    }
                    if need_x {
                        gemm(
                            MatRef::transposed(vw.data(), geom.out_ch, geom.patch()),
                            g_b,
                            &mut cols,
                            0.0,
                        );
                        geom.col2im(&cols, &mut gx[b * geom.in_len()..(b + 1) * geom.in_len()]);
                    }
                }
                if need_x {
                    self.accumulate(grads, input, || gx);
                }
                if need_w {
                    self.accumulate(grads, weight, || gw);
                }
            }
            &Op::Relu(a) => {
                let va = self.nodes[a].value.data();
                self.accumulate(grads, a, || {
                    gd.iter()
                        .zip(va)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect()
                });
            }
            Op::MaxPool2 { input, argmax } => {
                let len = self.nodes[*input].value.len();
                self.accumulate(grads, *input, || {
                    let mut out = vec![0.0; len];
                    for (&j, &gv) in argmax.iter().zip(gd) {
                        out[j] += gv;
                    }
                    out
                });
            }
            &Op::Reshape(a) => {
                self.accumulate(grads, a, || gd.to_vec());
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let c = self.nodes[*logits].value.shape()[1];
                self.accumulate(grads, *logits, || {
                    let mut out = probs.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        out[i * c + y] -= 1.0;
                        out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= gd[i]);
                    }
                    out
                });
            }
            Op::CwMargin {
                logits,
                labels,
                runner_up,
            } => {
                let shape = self.nodes[*logits].value.shape();
                let c = shape[1];
                self.accumulate(grads, *logits, || {
                    let mut out = vec![0.0; shape[0] * c];
                    for (i, (&y, &r)) in labels.iter().zip(runner_up).enumerate() {
                        out[i * c + r] += gd[i];
                        out[i * c + y] -= gd[i];
                    }
                    out
                });
            }
            &Op::L2SqDist(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                let row_len = va.row_len();
                let diff = |sign: f64| -> Vec<f64> {
                    va.data()
                        .iter()
                        .zip(vb.data())
                        .enumerate()
                        .map(|(j, (x, y))| sign * 2.0 * gd[j / row_len] * (x - y))
                        .collect()
                };
                self.accumulate(grads, a, || diff(1.0));
                self.accumulate(grads, b, || diff(-1.0));
            }
            &Op::Sqrt(a) => {
                let out = self.nodes[i].value.data();
                self.accumulate(grads, a, || {
                    gd.iter()
                        .zip(out)
                        .map(|(&g, &s)| if s > 0.0 { g / (2.0 * s) } else { 0.0 })
                        .collect()
                });
            }
            &Op::Mean(a) => {
                let len = self.nodes[a].value.len();
                let v = gd[0] / len as f64;
                self.accumulate(grads, a, || vec![v; len]);
            }
            &Op::Sum(a) => {
                let len = self.nodes[a].value.len();
                self.accumulate(grads, a, || vec![gd[0]; len]);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: usize, make: impl FnOnce() -> Vec<f64>) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let contribution = make();
        match &mut grads[target] {
            Some(existing) => existing
                .data_mut()
                .iter_mut()
                .zip(&contribution)
                .for_each(|(e, c)| *e += c),
            slot @ None => {
                *slot = Some(Tensor::from_parts(
                    self.nodes[target].value.shape().to_vec(),
                    contribution,
                ))
            }
        }
    }
}

/// Gradients of a backward sweep, keyed by leaf [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a differentiable leaf; `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(|g| g.take())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    out_ch: usize,
    kernel: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn new(xs: &[usize], ws: &[usize], padding: usize) -> Result<Self> {
        let bad = || Error::shape("conv2d", format!("input {xs:?}, weight {ws:?}, padding {padding}"));
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] {
            return Err(bad());
        }
        let k = ws[2];
        if xs[2] + 2 * padding < k || xs[3] + 2 * padding < k {
            return Err(bad());
        }
        Ok(ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_ch: ws[0],
            kernel: k,
            padding,
            out_h: xs[2] + 2 * padding - k + 1,
            out_w: xs[3] + 2 * padding - k + 1,
        })
    }

    fn in_len(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Visits every in-bounds run of taps as
    /// `(column offset, input offset, run length)`; a run is a contiguous
    /// span of output columns reading a contiguous span of one input row.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        let p = self.padding;
        let area = self.out_area();
        for c in 0..self.in_ch {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    // ox must satisfy 0 <= ox + kj - p < in_w
                    let ox_lo = p.saturating_sub(kj);
                    let ox_hi = (self.in_w + p).saturating_sub(kj).min(self.out_w);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let run = ox_hi - ox_lo;
                    for oy in 0..self.out_h {
                        let iy = oy + ki;
                        if iy < p || iy - p >= self.in_h {
                            continue;
                        }
                        let src = (c * self.in_h + iy - p) * self.in_w + ox_lo + kj - p;
                        f(row * area + oy * self.out_w + ox_lo, src, run);
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        if self.padding > 0 {
            cols.iter_mut().for_each(|v| *v = 0.0);
        }
        self.for_each_run(|dst, src, n| cols[dst..dst + n].copy_from_slice(&x[src..src + n]));
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        self.for_each_run(|dst, src, n| {
            for (g, c) in gx[src..src + n].iter_mut().zip(&cols[dst..dst + n]) {
                *g += c;
            }
        });
    }
}

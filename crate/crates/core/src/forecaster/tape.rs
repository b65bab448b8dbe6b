//! Reverse-mode automatic differentiation over small dense row-major matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`] walks
//! the nodes in reverse and accumulates parameter gradients into a flat
//! buffer that mirrors the model's parameter vector.

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { offset: usize },
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    /// Adds a constant matrix; gradient passes straight through.
    AddConst(Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Sigmoid(Var),
    Elu(Var),
    SoftmaxRows(Var),
    LayerNormRows { a: Var, inv_std: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Gru { xp: Var, u: Var, cache: GruCache },
    MonotoneQuantiles { raw: Var, center: usize },
    Pinball { pred: Var, target: Vec<f64>, quantiles: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param { .. } => Vec::new(),
            Op::MatMul(a, b) | Op::MatMulBt(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MulCol(a, b) | Op::MulRow(a, b) => vec![*a, *b],
            Op::AddConst(a) | Op::MulConst(a, _) | Op::Scale(a, _) | Op::Sigmoid(a) | Op::Elu(a) => vec![*a],
            Op::SoftmaxRows(a) | Op::LayerNormRows { a, .. } | Op::SliceCols { a, .. } | Op::SliceRows { a, .. } => {
                vec![*a]
            }
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::Gru { xp, u, .. } => vec![*xp, *u],
            Op::MonotoneQuantiles { raw, .. } => vec![*raw],
            Op::Pinball { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug)]
struct GruCache {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    hu_n: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    /// Whether any parameter feeds this node.
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `out += a (m×k) * b (k×n)`
fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for (arow, row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)).take(m) {
        for (&aip, brow) in arow.iter().zip(b.chunks_exact(n)) {
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// `out += a (m×k) * b^T` where `b` is `n×k`
fn matmul_bt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    if k >= 16 {
        for (arow, row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)).take(m) {
            for (o, brow) in row.iter_mut().zip(b.chunks_exact(k)) {
                *o += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    } else {
        // short dot products vectorise badly; go through b^T instead
        matmul_acc(out, a, &transpose(b, n, k), m, k, n);
    }
}

/// `out += a^T * b` where `a` is `k×m` and `b` is `k×n`
fn matmul_at_acc(out: &mut [f64], a: &[f64], b: &[f64], k: usize, m: usize, n: usize) {
    if n >= m || n >= 16 {
        for (acol, brow) in a.chunks_exact(m).zip(b.chunks_exact(n)).take(k) {
            for (&api, row) in acol.iter().zip(out.chunks_exact_mut(n)) {
                if api == 0.0 {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += api * bv;
                }
            }
        }
    } else {
        // narrow output: build its transpose (b^T a) with long rows
        let mut t = vec![0.0; n * m];
        matmul_acc(&mut t, &transpose(b, k, n), a, n, k, m);
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += t[j * m + i];
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param { .. } => true,
            op => op.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { rows, cols, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape");
        self.push(rows, cols, value, Op::Constant)
    }

    /// A trainable block copied from `params[offset..offset + rows*cols]`.
    pub fn param(&mut self, params: &[f64], offset: usize, rows: usize, cols: usize) -> Var {
        let value = params[offset..offset + rows * cols].to_vec();
        self.push(rows, cols, value, Op::Param { offset })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![0.0; m * n];
        matmul_acc(&mut out, self.value(a), self.value(b), m, k, n);
        self.push(m, n, out, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_bt inner dimension");
        let mut out = vec![0.0; m * n];
        matmul_bt_acc(&mut out, self.value(a), self.value(b), m, k, n);
        self.push(m, n, out, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(r, c, out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shape");
        let rv = self.value(row);
        let out = self.value(a).chunks(c).flat_map(|x| x.iter().zip(rv).map(|(p, q)| p + q)).collect();
        self.push(r, c, out, Op::AddRow(a, row))
    }

    pub fn add_const(&mut self, a: Var, offset: &[f64]) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(offset.len(), r * c, "add_const shape");
        let out = self.value(a).iter().zip(offset).map(|(x, y)| x + y).collect();
        self.push(r, c, out, Op::AddConst(a))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(r, c, out, Op::Mul(a, b))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "mul_col shape");
        let cv = self.value(col);
        let out = self.value(a).chunks(c).zip(cv).flat_map(|(x, &s)| x.iter().map(move |v| v * s)).collect();
        self.push(r, c, out, Op::MulCol(a, col))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row shape");
        let rv = self.value(row);
        let out = self.value(a).chunks(c).flat_map(|x| x.iter().zip(rv).map(|(p, q)| p * q)).collect();
        self.push(r, c, out, Op::MulRow(a, row))
    }

    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(factor.len(), r * c, "mul_const shape");
        let out = self.value(a).iter().zip(&factor).map(|(x, y)| x * y).collect();
        self.push(r, c, out, Op::MulConst(a, factor))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(r, c, out, Op::Sigmoid(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { x.exp_m1() }).collect();
        self.push(r, c, out, Op::Elu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = if *v == f64::NEG_INFINITY { 0.0 } else { (*v - max).exp() };
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(r, c, out, Op::SoftmaxRows(a))
    }

    /// Zero-mean, unit-variance rows (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        let mut inv_std = Vec::with_capacity(r);
        for row in out.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv_std.push(s);
        }
        self.push(r, c, out, Op::LayerNormRows { a, inv_std })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        assert!(parts.iter().all(|&p| self.shape(p).0 == r), "concat_cols rows");
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push(r, c, out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.shape(parts[0]).1;
        assert!(parts.iter().all(|&p| self.shape(p).1 == c), "concat_rows cols");
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let r = out.len() / c;
        self.push(r, c, out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + width <= c, "slice_cols range");
        let out = self.value(a).chunks(c).flat_map(|row| row[start..start + width].iter().copied()).collect();
        self.push(r, width, out, Op::SliceCols { a, start })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + count <= r, "slice_rows range");
        let out = self.value(a)[start * c..(start + count) * c].to_vec();
        self.push(count, c, out, Op::SliceRows { a, start })
    }

    /// GRU over all rows of `xp` (T×3H, input projections plus bias, gate
    /// order update|reset|candidate) with recurrent weights `u` (H×3H) and a
    /// zero initial state. Returns the hidden states (T×H).
    pub fn gru(&mut self, xp: Var, u: Var) -> Var {
        let (t_len, three_h) = self.shape(xp);
        let h = three_h / 3;
        assert_eq!(self.shape(u), (h, three_h), "gru recurrent shape");
        let xv = self.value(xp);
        let uv = self.value(u);
        let mut out = vec![0.0; t_len * h];
        let mut cache = GruCache {
            z: vec![0.0; t_len * h],
            r: vec![0.0; t_len * h],
            n: vec![0.0; t_len * h],
            hu_n: vec![0.0; t_len * h],
        };
        let mut hu = vec![0.0; three_h];
        let mut prev = vec![0.0; h];
        for t in 0..t_len {
            hu.iter_mut().for_each(|v| *v = 0.0);
            matmul_acc(&mut hu, &prev, uv, 1, h, three_h);
            let x = &xv[t * three_h..(t + 1) * three_h];
            for j in 0..h {
                let z = sigmoid(x[j] + hu[j]);
                let r = sigmoid(x[h + j] + hu[h + j]);
                let n = (x[2 * h + j] + r * hu[2 * h + j]).tanh();
                let k = t * h + j;
                cache.z[k] = z;
                cache.r[k] = r;
                cache.n[k] = n;
                cache.hu_n[k] = hu[2 * h + j];
                out[k] = (1.0 - z) * n + z * prev[j];
            }
            prev.copy_from_slice(&out[t * h..(t + 1) * h]);
        }
        self.push(t_len, h, out, Op::Gru { xp, u, cache })
    }

    /// Non-crossing quantiles from raw head outputs: column `center` is kept,
    /// columns above add softplus increments, columns below subtract them.
    pub fn monotone_quantiles(&mut self, raw: Var, center: usize) -> Var {
        let (r, q) = self.shape(raw);
        assert!(center < q, "center column");
        let rv = self.value(raw);
        let mut out = vec![0.0; r * q];
        for i in 0..r {
            let x = &rv[i * q..(i + 1) * q];
            let o = &mut out[i * q..(i + 1) * q];
            o[center] = x[center];
            for k in center + 1..q {
                o[k] = o[k - 1] + softplus(x[k]);
            }
            for k in (0..center).rev() {
                o[k] = o[k + 1] - softplus(x[k]);
            }
        }
        self.push(r, q, out, Op::MonotoneQuantiles { raw, center })
    }

    /// Mean pinball loss of `pred` (rows = steps, cols = quantile levels)
    /// against one target per row; a 1×1 node.
    pub fn pinball(&mut self, pred: Var, target: Vec<f64>, quantiles: Vec<f64>) -> Var {
        let (r, q) = self.shape(pred);
        assert_eq!(target.len(), r, "pinball target length");
        assert_eq!(quantiles.len(), q, "pinball quantile count");
        let pv = self.value(pred);
        let mut total = 0.0;
        for i in 0..r {
            for (k, &level) in quantiles.iter().enumerate() {
                let e = target[i] - pv[i * q + k];
                total += if e >= 0.0 { level * e } else { (level - 1.0) * e };
            }
        }
        let loss = total / (r * q) as f64;
        self.push(1, 1, vec![loss], Op::Pinball { pred, target, quantiles })
    }

    /// Back-propagates from the scalar `root`, adding parameter gradients to
    /// `param_grad` at each parameter node's offset.
    pub fn backward(&self, root: Var, param_grad: &mut [f64]) {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (rows, cols) = (node.rows, node.cols);
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let n = &self.nodes[v.0];
                if !n.needs_grad {
                    return;
                }
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.rows * n.cols]);
                f(buf);
            };
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => add_into(&mut param_grad[*offset..*offset + g.len()], &g),
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &mut |buf| matmul_bt_acc(buf, &g, bv, m, n, k));
                    acc(*b, &mut |buf| matmul_at_acc(buf, av, &g, m, k, n));
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &mut |buf| matmul_acc(buf, &g, bv, m, n, k));
                    acc(*b, &mut |buf| matmul_at_acc(buf, &g, av, m, n, k));
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |buf| add_into(buf, &g));
                    acc(*b, &mut |buf| add_into(buf, &g));
                }
                Op::AddRow(a, row) => {
                    acc(*a, &mut |buf| add_into(buf, &g));
                    acc(*row, &mut |buf| g.chunks(cols).for_each(|gr| add_into(buf, gr)));
                }
                Op::AddConst(a) => acc(*a, &mut |buf| add_into(buf, &g)),
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &mut |buf| buf.iter_mut().zip(&g).zip(bv).for_each(|((d, g), y)| *d += g * y));
                    acc(*b, &mut |buf| buf.iter_mut().zip(&g).zip(av).for_each(|((d, g), x)| *d += g * x));
                }
                Op::MulCol(a, col) => {
                    let (av, cv) = (self.value(*a), self.value(*col));
                    acc(*a, &mut |buf| {
                        for (i, &s) in cv.iter().enumerate() {
                            for j in 0..cols {
                                buf[i * cols + j] += g[i * cols + j] * s;
                            }
                        }
                    });
                    acc(*col, &mut |buf| {
                        for (i, d) in buf.iter_mut().enumerate() {
                            *d += (0..cols).map(|j| g[i * cols + j] * av[i * cols + j]).sum::<f64>();
                        }
                    });
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    acc(*a, &mut |buf| {
                        for (k, d) in buf.iter_mut().enumerate() {
                            *d += g[k] * rv[k % cols];
                        }
                    });
                    acc(*row, &mut |buf| {
                        for (k, (&gk, &x)) in g.iter().zip(av).enumerate() {
                            buf[k % cols] += gk * x;
                        }
                    });
                }
                Op::MulConst(a, factor) => {
                    acc(*a, &mut |buf| buf.iter_mut().zip(&g).zip(factor).for_each(|((d, g), f)| *d += g * f));
                }
                Op::Scale(a, s) => acc(*a, &mut |buf| buf.iter_mut().zip(&g).for_each(|(d, g)| *d += g * s)),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &mut |buf| {
                        buf.iter_mut().zip(&g).zip(y).for_each(|((d, g), y)| *d += g * y * (1.0 - y))
                    });
                }
                Op::Elu(a) => {
                    let (x, y) = (self.value(*a), &node.value);
                    acc(*a, &mut |buf| {
                        for k in 0..buf.len() {
                            buf[k] += g[k] * if x[k] > 0.0 { 1.0 } else { y[k] + 1.0 };
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    acc(*a, &mut |buf| {
                        for i in 0..rows {
                            let yr = &y[i * cols..(i + 1) * cols];
                            let gr = &g[i * cols..(i + 1) * cols];
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                buf[i * cols + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
                Op::LayerNormRows { a, inv_std } => {
                    let y = &node.value;
                    acc(*a, &mut |buf| {
                        let c = cols as f64;
                        for i in 0..rows {
                            let yr = &y[i * cols..(i + 1) * cols];
                            let gr = &g[i * cols..(i + 1) * cols];
                            let mean_g = gr.iter().sum::<f64>() / c;
                            let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                            for j in 0..cols {
                                buf[i * cols + j] += inv_std[i] * (gr[j] - mean_g - yr[j] * mean_gy);
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(p, &mut |buf| {
                            for i in 0..rows {
                                add_into(&mut buf[i * w..(i + 1) * w], &g[i * cols + start..i * cols + start + w]);
                            }
                        });
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        acc(p, &mut |buf| add_into(buf, &g[start..start + len]));
                        start += len;
                    }
                }
                Op::SliceCols { a, start } => {
                    let src_cols = self.shape(*a).1;
                    acc(*a, &mut |buf| {
                        for i in 0..rows {
                            add_into(&mut buf[i * src_cols + start..i * src_cols + start + cols], &g[i * cols..(i + 1) * cols]);
                        }
                    });
                }
                Op::SliceRows { a, start } => {
                    acc(*a, &mut |buf| add_into(&mut buf[start * cols..(start + rows) * cols], &g));
                }
                Op::Gru { xp, u, cache } => {
                    let h = cols;
                    let three_h = 3 * h;
                    let ut = transpose(self.value(*u), h, three_h);
                    let out = &node.value;
                    let mut dxp = vec![0.0; rows * three_h];
                    let mut du = vec![0.0; h * three_h];
                    let mut dh_next = vec![0.0; h];
                    let mut dhu = vec![0.0; three_h];
                    let zeros = vec![0.0; h];
                    for t in (0..rows).rev() {
                        let prev = if t == 0 { &zeros[..] } else { &out[(t - 1) * h..t * h] };
                        let mut dh_prev = vec![0.0; h];
                        for j in 0..h {
                            let k = t * h + j;
                            let (z, r, n, hu_n) = (cache.z[k], cache.r[k], cache.n[k], cache.hu_n[k]);
                            let dh = g[k] + dh_next[j];
                            let dn = dh * (1.0 - z);
                            let dz = dh * (prev[j] - n);
                            dh_prev[j] = dh * z;
                            let da_n = dn * (1.0 - n * n);
                            let dr = da_n * hu_n;
                            let da_z = dz * z * (1.0 - z);
                            let da_r = dr * r * (1.0 - r);
                            let row = &mut dxp[t * three_h..(t + 1) * three_h];
                            row[j] = da_z;
                            row[h + j] = da_r;
                            row[2 * h + j] = da_n;
                            dhu[j] = da_z;
                            dhu[h + j] = da_r;
                            dhu[2 * h + j] = da_n * r;
                        }
                        matmul_at_acc(&mut du, prev, &dhu, 1, h, three_h);
                        matmul_acc(&mut dh_prev, &dhu, &ut, 1, three_h, h);
                        dh_next = dh_prev;
                    }
                    acc(*xp, &mut |buf| add_into(buf, &dxp));
                    acc(*u, &mut |buf| add_into(buf, &du));
                }
                Op::MonotoneQuantiles { raw, center } => {
                    let rv = self.value(*raw);
                    let c = *center;
                    acc(*raw, &mut |buf| {
                        for i in 0..rows {
                            let x = &rv[i * cols..(i + 1) * cols];
                            let gr = &g[i * cols..(i + 1) * cols];
                            let d = &mut buf[i * cols..(i + 1) * cols];
                            d[c] += gr.iter().sum::<f64>();
                            let mut tail = 0.0;
                            for k in (c + 1..cols).rev() {
                                tail += gr[k];
                                d[k] += tail * sigmoid(x[k]);
                            }
                            let mut head = 0.0;
                            for k in 0..c {
                                head += gr[k];
                                d[k] -= head * sigmoid(x[k]);
                            }
                        }
                    });
                }
                Op::Pinball { pred, target, quantiles } => {
                    let pv = self.value(*pred);
                    let q = quantiles.len();
                    let scale = g[0] / (target.len() * q) as f64;
                    acc(*pred, &mut |buf| {
                        for (i, &y) in target.iter().enumerate() {
                            for (k, &level) in quantiles.iter().enumerate() {
                                let e = y - pv[i * q + k];
                                // zero is in the subdifferential at an exact hit
                                let d = if e > 0.0 {
                                    -level
                                } else if e < 0.0 {
                                    1.0 - level
                                } else {
                                    0.0
                                };
                                buf[i * q + k] += scale * d;
                            }
                        }
                    });
                }
            }
        }
    }
}

//! Tape-based reverse-mode autodiff over row-major matrices.
//!
//! Every op records its inputs and whatever it needs for the backward pass.
//! When gradients are disabled the same forward code runs without saving
//! backward state.

use super::mat::gemm;
use super::{Grads, Mat, ParamId, ParamStore, Scalar};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Half-open key range `[lo, hi)` visible to one attention query row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub lo: u32,
    pub hi: u32,
}

impl Span {
    pub fn new(lo: usize, hi: usize) -> Self {
        debug_assert!(lo < hi, "empty attention span");
        Self { lo: lo as u32, hi: hi as u32 }
    }

    pub fn len(self) -> usize {
        (self.hi - self.lo) as usize
    }

    pub fn is_empty(self) -> bool {
        self.hi <= self.lo
    }
}

enum Value<F> {
    Owned(Mat<F>),
    Param(ParamId),
}

enum Op<F> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Silu(Var),
    Gelu(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, F, F),
    Minimum(Var, Var),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<F> },
    LayerNorm { x: Var, gain: Var, bias: Var, inv_std: Vec<F> },
    Attention { q: Var, k: Var, v: Var, heads: usize, spans: Vec<Span>, probs: Vec<F>, offsets: Vec<usize> },
    Rope { x: Var, heads: usize, positions: Vec<u32>, base: F },
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    LogSoftmax(Var),
    Pick { x: Var, cols: Vec<usize> },
    SumRows(Var),
    MeanAll(Var),
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Computation tape borrowing a parameter store.
pub struct Graph<'p, F: Scalar> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    grad_enabled: bool,
}

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self { params, nodes: Vec::new(), grad_enabled: true }
    }

    /// Tape that records no backward state.
    pub fn inference(params: &'p ParamStore<F>) -> Self {
        Self { params, nodes: Vec::new(), grad_enabled: false }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn needs(&self, v: Var) -> bool {
        self.grad_enabled && self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad: needs_grad && self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat<F>) -> Var {
        self.push(m, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), needs_grad: self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(am.rows(), bm.cols());
        gemm(am, false, bm, false, &mut out, F::one(), F::zero());
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `x·w + b` with `w: in×out` and `b: 1×out`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Broadcast-add a `1×m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.shape(), (1, am.cols()), "add_row expects a 1x{} row", am.cols());
        let mut out = am.clone();
        let r = rm.row(0);
        for i in 0..out.rows() {
            for (x, &b) in out.row_mut(i).iter_mut().zip(r) {
                *x = *x + b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.needs(a);
        self.push(out, Op::Silu(a), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| gelu(x).0);
        let ng = self.needs(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(F::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let ng = self.needs(a);
        self.push(out, Op::Square(a), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        let ng = self.needs(a);
        self.push(out, Op::Clamp(a, lo, hi), ng)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), F::min);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Minimum(a, b), ng)
    }

    pub fn rms_norm(&mut self, x: Var, gain: ParamId, eps: F) -> Var {
        let gain = self.param(gain);
        let (xm, gm) = (self.value(x), self.value(gain));
        let cols = xm.cols();
        let mut out = Mat::zeros(xm.rows(), cols);
        let mut inv = Vec::with_capacity(xm.rows());
        let n = F::lit(cols as f64);
        for r in 0..xm.rows() {
            let row = xm.row(r);
            let ms = row.iter().map(|&v| v * v).sum::<F>() / n;
            let ir = F::one() / (ms + eps).sqrt();
            inv.push(ir);
            for ((o, &v), &g) in out.row_mut(r).iter_mut().zip(row).zip(gm.row(0)) {
                *o = v * ir * g;
            }
        }
        let ng = self.needs(x) || self.needs(gain);
        let inv_rms = if ng { inv } else { Vec::new() };
        self.push(out, Op::RmsNorm { x, gain, inv_rms }, ng)
    }

    pub fn layer_norm(&mut self, x: Var, gain: ParamId, bias: ParamId, eps: F) -> Var {
        let gain = self.param(gain);
        let bias = self.param(bias);
        let (xm, gm, bm) = (self.value(x), self.value(gain), self.value(bias));
        let cols = xm.cols();
        let n = F::lit(cols as f64);
        let mut out = Mat::zeros(xm.rows(), cols);
        let mut inv = Vec::with_capacity(xm.rows());
        for r in 0..xm.rows() {
            let row = xm.row(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            inv.push(is);
            for (((o, &v), &g), &b) in out.row_mut(r).iter_mut().zip(row).zip(gm.row(0)).zip(bm.row(0)) {
                *o = (v - mean) * is * g + b;
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        let inv_std = if ng { inv } else { Vec::new() };
        self.push(out, Op::LayerNorm { x, gain, bias, inv_std }, ng)
    }

    /// Multi-head scaled dot-product attention. Query row `i` attends to key
    /// rows `spans[i]` of `k`/`v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, spans: Vec<Span>) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qm.rows(), spans.len(), "one span per query row");
        assert_eq!(km.shape(), vm.shape());
        assert_eq!(qm.cols(), km.cols());
        let d = qm.cols();
        assert_eq!(d % heads, 0, "heads must divide width");
        let hd = d / heads;
        let scale = F::one() / F::lit(hd as f64).sqrt();
        let mut offsets = Vec::with_capacity(spans.len() + 1);
        let mut total = 0;
        for s in &spans {
            assert!(s.hi as usize <= km.rows() && s.lo < s.hi, "bad attention span {s:?}");
            offsets.push(total);
            total += s.len() * heads;
        }
        offsets.push(total);
        let mut probs = vec![F::zero(); total];
        let mut out = Mat::zeros(qm.rows(), d);
        for (i, s) in spans.iter().enumerate() {
            let qrow = qm.row(i);
            let base = offsets[i];
            let n = s.len();
            for h in 0..heads {
                let p = &mut probs[base + h * n..base + (h + 1) * n];
                let qh = &qrow[h * hd..(h + 1) * hd];
                softmax_scores(qh, km, s, h * hd, scale, p);
                let orow = &mut out.row_mut(i)[h * hd..(h + 1) * hd];
                for (j, &pj) in p.iter().enumerate() {
                    let vrow = &vm.row(s.lo as usize + j)[h * hd..(h + 1) * hd];
                    for (o, &vv) in orow.iter_mut().zip(vrow) {
                        *o = *o + pj * vv;
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        let (probs, offsets) = if ng { (probs, offsets) } else { (Vec::new(), Vec::new()) };
        self.push(out, Op::Attention { q, k, v, heads, spans, probs, offsets }, ng)
    }

    /// Rotary position embedding applied per head on consecutive column pairs.
    pub fn rope(&mut self, x: Var, heads: usize, positions: Vec<u32>, base: F) -> Var {
        let xm = self.value(x);
        assert_eq!(xm.rows(), positions.len());
        let mut out = xm.clone();
        for (r, &pos) in positions.iter().enumerate() {
            rope_row(out.row_mut(r), heads, pos, base, false);
        }
        let ng = self.needs(x);
        self.push(out, Op::Rope { x, heads, positions, base }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Mat::vstack(&mats);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xm = self.value(x);
        let cols = xm.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(xm.row(i));
        }
        let out = Mat::from_vec(idx.len(), cols, data);
        let ng = self.needs(x);
        self.push(out, Op::GatherRows { x, idx }, ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        self.gather_rows(x, (start..end).collect())
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut out = xm.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        let ng = self.needs(x);
        self.push(out, Op::LogSoftmax(x), ng)
    }

    /// `out[i] = x[i, cols[i]]` as an `n×1` column.
    pub fn pick(&mut self, x: Var, cols: Vec<usize>) -> Var {
        let xm = self.value(x);
        assert_eq!(xm.rows(), cols.len());
        let out = Mat::from_vec(cols.len(), 1, cols.iter().enumerate().map(|(r, &c)| xm.get(r, c)).collect());
        let ng = self.needs(x);
        self.push(out, Op::Pick { x, cols }, ng)
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let out = Mat::from_vec(xm.rows(), 1, (0..xm.rows()).map(|r| xm.row(r).iter().copied().sum()).collect());
        let ng = self.needs(x);
        self.push(out, Op::SumRows(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let out = Mat::scalar(xm.sum() / F::lit(xm.len().max(1) as f64));
        let ng = self.needs(x);
        self.push(out, Op::MeanAll(x), ng)
    }

    /// Reverse pass from a `1×1` output; returns gradients for every parameter.
    pub fn backward(&self, loss: Var) -> Grads<F> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar output");
        let mut grads = self.params.zeros_like();
        let mut adj: Vec<Option<Mat<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Mat::scalar(F::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, idx, g, &mut adj, &mut grads);
        }
        grads
    }

    fn accum(&self, adj: &mut [Option<Mat<F>>], v: Var, g: Mat<F>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn accum_with(&self, adj: &mut [Option<Mat<F>>], v: Var, f: impl FnOnce(&mut Mat<F>)) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let (r, c) = self.shape(v);
        let slot = adj[v.0].get_or_insert_with(|| Mat::zeros(r, c));
        f(slot);
    }

    fn backprop_node(&self, node: &Node<F>, idx: usize, g: Mat<F>, adj: &mut [Option<Mat<F>>], grads: &mut Grads<F>) {
        let out = self.value(Var(idx));
        match &node.op {
            Op::Input => {}
            Op::Param(id) => grads.get_mut(*id).add_assign(&g),
            Op::MatMul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                self.accum_with(adj, *a, |da| gemm(&g, false, bm, true, da, F::one(), F::one()));
                self.accum_with(adj, *b, |db| gemm(am, true, &g, false, db, F::one(), F::one()));
            }
            Op::Add(a, b) => {
                self.accum(adj, *b, g.clone());
                self.accum(adj, *a, g);
            }
            Op::Sub(a, b) => {
                self.accum(adj, *b, g.map(|x| -x));
                self.accum(adj, *a, g);
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                self.accum(adj, *a, zip_map(&g, bm, |x, y| x * y));
                self.accum(adj, *b, zip_map(&g, am, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                self.accum_with(adj, *row, |dr| {
                    for r in 0..g.rows() {
                        for (d, &x) in dr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d = *d + x;
                        }
                    }
                });
                self.accum(adj, *a, g);
            }
            Op::Scale(a, s) => self.accum(adj, *a, g.map(|x| x * *s)),
            Op::Silu(a) => {
                let am = self.value(*a);
                self.accum(
                    adj,
                    *a,
                    zip_map(&g, am, |dy, x| {
                        let s = sigmoid(x);
                        dy * s * (F::one() + x * (F::one() - s))
                    }),
                );
            }
            Op::Gelu(a) => {
                let am = self.value(*a);
                self.accum(adj, *a, zip_map(&g, am, |dy, x| dy * gelu(x).1));
            }
            Op::Exp(a) => self.accum(adj, *a, zip_map(&g, out, |dy, y| dy * y)),
            Op::Square(a) => {
                let am = self.value(*a);
                let two = F::lit(2.0);
                self.accum(adj, *a, zip_map(&g, am, |dy, x| dy * two * x));
            }
            Op::Clamp(a, lo, hi) => {
                let am = self.value(*a);
                self.accum(adj, *a, zip_map(&g, am, |dy, x| if x >= *lo && x <= *hi { dy } else { F::zero() }));
            }
            Op::Minimum(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let ga = Mat::from_vec(g.rows(), g.cols(), g.data().iter().zip(am.data().iter().zip(bm.data())).map(|(&dy, (&x, &y))| if x <= y { dy } else { F::zero() }).collect());
                let gb = Mat::from_vec(g.rows(), g.cols(), g.data().iter().zip(am.data().iter().zip(bm.data())).map(|(&dy, (&x, &y))| if x <= y { F::zero() } else { dy }).collect());
                self.accum(adj, *a, ga);
                self.accum(adj, *b, gb);
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (xm, gm) = (self.value(*x), self.value(*gain));
                let cols = xm.cols();
                let n = F::lit(cols as f64);
                let mut dx = Mat::zeros(xm.rows(), cols);
                let mut dgain = vec![F::zero(); cols];
                for r in 0..xm.rows() {
                    let ir = inv_rms[r];
                    let (xr, gr) = (xm.row(r), g.row(r));
                    let mut dot = F::zero();
                    for c in 0..cols {
                        let xhat = xr[c] * ir;
                        dgain[c] = dgain[c] + gr[c] * xhat;
                        dot = dot + gr[c] * gm.get(0, c) * xhat;
                    }
                    let mean = dot / n;
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        let xhat = xr[c] * ir;
                        *d = ir * (gr[c] * gm.get(0, c) - xhat * mean);
                    }
                }
                self.accum(adj, *gain, Mat::from_vec(1, cols, dgain));
                self.accum(adj, *x, dx);
            }
            Op::LayerNorm { x, gain, bias, inv_std } => {
                let (xm, gm) = (self.value(*x), self.value(*gain));
                let cols = xm.cols();
                let n = F::lit(cols as f64);
                let mut dx = Mat::zeros(xm.rows(), cols);
                let mut dgain = vec![F::zero(); cols];
                let mut dbias = vec![F::zero(); cols];
                let mut xhat = vec![F::zero(); cols];
                for r in 0..xm.rows() {
                    let is = inv_std[r];
                    let (xr, gr) = (xm.row(r), g.row(r));
                    let mean = xr.iter().copied().sum::<F>() / n;
                    let mut sum_d = F::zero();
                    let mut sum_dx = F::zero();
                    for c in 0..cols {
                        xhat[c] = (xr[c] - mean) * is;
                        dgain[c] = dgain[c] + gr[c] * xhat[c];
                        dbias[c] = dbias[c] + gr[c];
                        let dxh = gr[c] * gm.get(0, c);
                        sum_d = sum_d + dxh;
                        sum_dx = sum_dx + dxh * xhat[c];
                    }
                    let (md, mdx) = (sum_d / n, sum_dx / n);
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = is * (gr[c] * gm.get(0, c) - md - xhat[c] * mdx);
                    }
                }
                self.accum(adj, *gain, Mat::from_vec(1, cols, dgain));
                self.accum(adj, *bias, Mat::from_vec(1, cols, dbias));
                self.accum(adj, *x, dx);
            }
            Op::Attention { q, k, v, heads, spans, probs, offsets } => {
                let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qm.cols();
                let hd = d / heads;
                let scale = F::one() / F::lit(hd as f64).sqrt();
                let mut dq = Mat::zeros(qm.rows(), d);
                let mut dk = Mat::zeros(km.rows(), d);
                let mut dv = Mat::zeros(vm.rows(), d);
                let mut dp = Vec::new();
                for (i, s) in spans.iter().enumerate() {
                    let n = s.len();
                    let lo = s.lo as usize;
                    for h in 0..*heads {
                        let cols = h * hd..(h + 1) * hd;
                        let p = &probs[offsets[i] + h * n..offsets[i] + (h + 1) * n];
                        let go = &g.row(i)[cols.clone()];
                        dp.clear();
                        let mut dot = F::zero();
                        for (j, &pj) in p.iter().enumerate() {
                            let vrow = &vm.row(lo + j)[cols.clone()];
                            let dpj: F = go.iter().zip(vrow).map(|(&a, &b)| a * b).sum();
                            dot = dot + pj * dpj;
                            dp.push(dpj);
                            for (dvv, &gg) in dv.row_mut(lo + j)[cols.clone()].iter_mut().zip(go) {
                                *dvv = *dvv + pj * gg;
                            }
                        }
                        let qh: Vec<F> = qm.row(i)[cols.clone()].to_vec();
                        for (j, &pj) in p.iter().enumerate() {
                            let ds = pj * (dp[j] - dot) * scale;
                            if ds == F::zero() {
                                continue;
                            }
                            let krow = &km.row(lo + j)[cols.clone()];
                            for (dqq, &kk) in dq.row_mut(i)[cols.clone()].iter_mut().zip(krow) {
                                *dqq = *dqq + ds * kk;
                            }
                            for (dkk, &qq) in dk.row_mut(lo + j)[cols.clone()].iter_mut().zip(&qh) {
                                *dkk = *dkk + ds * qq;
                            }
                        }
                    }
                }
                self.accum(adj, *q, dq);
                self.accum(adj, *k, dk);
                self.accum(adj, *v, dv);
            }
            Op::Rope { x, heads, positions, base } => {
                let mut dx = g;
                for (r, &pos) in positions.iter().enumerate() {
                    rope_row(dx.row_mut(r), *heads, pos, *base, true);
                }
                self.accum(adj, *x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    self.accum(adj, p, g.slice_rows(start, start + rows));
                    start += rows;
                }
            }
            Op::GatherRows { x, idx } => {
                self.accum_with(adj, *x, |dx| {
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, &v) in dx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *d = *d + v;
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    let total: F = g.row(r).iter().copied().sum();
                    for (d, &y) in dx.row_mut(r).iter_mut().zip(out.row(r)) {
                        *d = *d - y.exp() * total;
                    }
                }
                self.accum(adj, *x, dx);
            }
            Op::Pick { x, cols } => {
                self.accum_with(adj, *x, |dx| {
                    for (r, &c) in cols.iter().enumerate() {
                        let cur = dx.get(r, c);
                        dx.set(r, c, cur + g.get(r, 0));
                    }
                });
            }
            Op::SumRows(x) => {
                let (r, c) = self.shape(*x);
                self.accum(adj, *x, Mat::from_fn(r, c, |i, _| g.get(i, 0)));
            }
            Op::MeanAll(x) => {
                let (r, c) = self.shape(*x);
                let v = g.get(0, 0) / F::lit((r * c).max(1) as f64);
                self.accum(adj, *x, Mat::filled(r, c, v));
            }
        }
    }
}

fn zip_map<F: Scalar>(a: &Mat<F>, b: &Mat<F>, f: impl Fn(F, F) -> F) -> Mat<F> {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Mat::from_vec(a.rows(), a.cols(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// tanh-approximated GELU and its derivative.
pub(crate) fn gelu<F: Scalar>(x: F) -> (F, F) {
    let c = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = F::lit(0.044715);
    let half = F::lit(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (F::one() + t);
    let dinner = c * (F::one() + F::lit(3.0) * a * x * x);
    let dy = half * (F::one() + t) + half * x * (F::one() - t * t) * dinner;
    (y, dy)
}

pub(crate) fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln()
}

/// Softmax over `q·k_j * scale` for keys in `span`, reading key columns at `col0`.
pub(crate) fn softmax_scores<F: Scalar>(qh: &[F], km: &Mat<F>, span: &Span, col0: usize, scale: F, out: &mut [F]) {
    let hd = qh.len();
    let mut max = F::neg_infinity();
    for (j, o) in out.iter_mut().enumerate() {
        let krow = &km.row(span.lo as usize + j)[col0..col0 + hd];
        let s: F = qh.iter().zip(krow).map(|(&a, &b)| a * b).sum::<F>() * scale;
        *o = s;
        max = max.max(s);
    }
    let mut total = F::zero();
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Rotate consecutive pairs of each head by `pos * base^(-2i/hd)`; `inverse` rotates back.
pub(crate) fn rope_row<F: Scalar>(row: &mut [F], heads: usize, pos: u32, base: F, inverse: bool) {
    let hd = row.len() / heads;
    let half = hd / 2;
    let p = F::lit(pos as f64);
    for h in 0..heads {
        let seg = &mut row[h * hd..(h + 1) * hd];
        for i in 0..half {
            let freq = base.powf(-F::lit((2 * i) as f64) / F::lit(hd as f64));
            let theta = p * freq;
            let (s, c) = theta.sin_cos();
            let s = if inverse { -s } else { s };
            let (a, b) = (seg[2 * i], seg[2 * i + 1]);
            seg[2 * i] = a * c - b * s;
            seg[2 * i + 1] = a * s + b * c;
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::params::normal_mat;

    /// Central finite differences of `f` w.r.t. every parameter scalar.
    fn check_grads(store: &mut ParamStore<f64>, f: impl Fn(&mut Graph<f64>) -> Var) {
        let analytic = {
            let mut g = Graph::new(store);
            let out = f(&mut g);
            g.backward(out)
        };
        let eps = 1e-6;
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data()[k];
                store.get_mut(id).data_mut()[k] = orig + eps;
                let plus = {
                    let mut g = Graph::inference(store);
                    let o = f(&mut g);
                    g.value(o).get(0, 0)
                };
                store.get_mut(id).data_mut()[k] = orig - eps;
                let minus = {
                    let mut g = Graph::inference(store);
                    let o = f(&mut g);
                    g.value(o).get(0, 0)
                };
                store.get_mut(id).data_mut()[k] = orig;
                let fd = (plus - minus) / (2.0 * eps);
                let an = analytic.get(id).data()[k];
                let tol = 1e-6 * (1.0 + fd.abs().max(an.abs()));
                assert!((fd - an).abs() < tol, "{} [{k}]: fd {fd} vs analytic {an}", store.name(id));
            }
        }
    }

    #[test]
    fn elementwise_and_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", normal_mat(&mut rng, 3, 4, 1.0));
        let w = store.add("w", normal_mat(&mut rng, 4, 4, 0.5));
        let b = store.add("b", normal_mat(&mut rng, 1, 4, 0.5));
        let gain = store.add("gain", normal_mat(&mut rng, 1, 4, 1.0));
        let gain2 = store.add("gain2", normal_mat(&mut rng, 1, 4, 1.0));
        let bias2 = store.add("bias2", normal_mat(&mut rng, 1, 4, 1.0));
        check_grads(&mut store, |g| {
            let xv = g.param(x);
            let h = g.linear(xv, w, b);
            let n = g.rms_norm(h, gain, 1e-6);
            let s = g.silu(n);
            let l = g.layer_norm(s, gain2, bias2, 1e-5);
            let ge = g.gelu(l);
            let e = g.exp(ge);
            let c = g.clamp(e, 0.5, 2.0);
            let m = g.minimum(c, ge);
            let sq = g.square(m);
            let ls = g.log_softmax(sq);
            let p = g.pick(ls, vec![0, 3, 1]);
            let sr = g.sum_rows(l);
            let t = g.mul(p, sr);
            g.mean_all(t)
        });
    }

    #[test]
    fn attention_rope_gather_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", normal_mat(&mut rng, 5, 8, 1.0));
        let wq = store.add("wq", normal_mat(&mut rng, 8, 8, 0.4));
        let wk = store.add("wk", normal_mat(&mut rng, 8, 8, 0.4));
        let wv = store.add("wv", normal_mat(&mut rng, 8, 8, 0.4));
        let spans = vec![Span::new(0, 1), Span::new(0, 2), Span::new(2, 3), Span::new(2, 4), Span::new(0, 5)];
        check_grads(&mut store, |g| {
            let xv = g.param(x);
            let (wq, wk, wv) = (g.param(wq), g.param(wk), g.param(wv));
            let q = g.matmul(xv, wq);
            let k = g.matmul(xv, wk);
            let v = g.matmul(xv, wv);
            let q = g.rope(q, 2, vec![0, 1, 0, 1, 4], 10000.0);
            let k = g.rope(k, 2, vec![0, 1, 0, 1, 4], 10000.0);
            let a = g.attention(q, k, v, 2, spans.clone());
            let gathered = g.gather_rows(a, vec![4, 1, 1]);
            let cat = g.concat_rows(&[gathered, xv]);
            let sq = g.square(cat);
            g.mean_all(sq)
        });
    }

    #[test]
    fn rope_is_inverse_consistent() {
        let mut row = vec![0.3f64, -1.2, 0.7, 2.0];
        let orig = row.clone();
        rope_row(&mut row, 1, 7, 10000.0, false);
        rope_row(&mut row, 1, 7, 10000.0, true);
        for (a, b) in row.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

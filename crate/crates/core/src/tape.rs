//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during a forward pass. Ops are
//! appended in execution order, so inputs always precede their consumers and
//! [`Tape::backward`] can walk the node list once, in reverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{
    check_perm, gemm_new, gemm_new_into, gemm_tn_new, inverse_perm, numel, permute_data,
    transpose_into, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulNt { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    Softmax { x: Var, axis: usize },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Silu { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Gather { table: Var, ids: Vec<usize> },
    Repeat { x: Var, times: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient, kept only for leaves.
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Batch layout shared by the two matmul flavours: `a` is `[batch.., m, k]`,
/// `b` is either `[batch.., rows, cols]` or a shared rank-2 matrix.
struct MatLayout {
    batch: usize,
    m: usize,
    k: usize,
    p: usize,
    shared_b: bool,
    out_shape: Vec<usize>,
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

    /// Registers a leaf. Gradients are tracked when the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let value = Tensor::from_raw(t.shape().to_vec(), t.data().to_vec());
        self.push(value, Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, t: &Tensor) -> Var {
        let value = Tensor::from_raw(t.shape().to_vec(), t.data().to_vec());
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after one or more [`Tape::backward`] calls.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn mat_layout(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        transposed_b: bool,
    ) -> Result<MatLayout> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let err = || Error::Shape {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (br, bc) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (bk, p) = if transposed_b { (bc, br) } else { (br, bc) };
        if bk != k {
            return Err(err());
        }
        let lead_a = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2;
        if !shared_b && lead_a != &sb[..sb.len() - 2] {
            return Err(err());
        }
        let mut out_shape = lead_a.to_vec();
        out_shape.extend_from_slice(&[m, p]);
        Ok(MatLayout {
            batch: numel(lead_a),
            m,
            k,
            p,
            shared_b,
            out_shape,
        })
    }

    /// Batched `a · b`. `b` may be a shared rank-2 matrix or carry the same
    /// leading dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let l = self.mat_layout("matmul", a, b, false)?;
        let out = mm_nn(
            self.data(a),
            self.data(b),
            l.batch,
            l.m,
            l.k,
            l.p,
            l.shared_b,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_raw(l.out_shape, out), Op::MatMul { a, b }, rg))
    }

    /// Batched `a · bᵀ` with `b` shaped `[batch.., p, k]` or shared `[p, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let l = self.mat_layout("matmul_nt", a, b, true)?;
        let out = mm_nt(
            self.data(a),
            self.data(b),
            l.batch,
            l.m,
            l.k,
            l.p,
            l.shared_b,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::from_raw(l.out_shape, out),
            Op::MatMulNt { a, b },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_raw(shape, out), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a rank-1 `bias` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let d = sb[0];
        let bd = self.data(bias);
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % d])
            .collect();
        let shape = sx.to_vec();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::from_raw(shape, out), Op::AddBias { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_raw(shape, out), Op::Scale { x, factor }, rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis {
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        if inner == 1 {
            for (row, orow) in xd.chunks_exact(len).zip(out.chunks_exact_mut(len)) {
                softmax_row(row, orow);
            }
            let rg = self.rg(&[x]);
            return Ok(self.push(Tensor::from_raw(shape, out), Op::Softmax { x, axis }, rg));
        }
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..len {
                    mx = mx.max(xd[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = crate::fastmath::exp(xd[base + j * inner] - mx);
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_raw(shape, out), Op::Softmax { x, axis }, rg))
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let axis = self.shape(x).len().saturating_sub(1);
        self.softmax(x, axis)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.data(x).len();
        if numel(shape) != n || shape.iter().any(|&d| d == 0) {
            return Err(Error::Count {
                op: "reshape",
                expected: n,
                shape: shape.to_vec(),
            });
        }
        let data = self.data(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_raw(shape.to_vec(), data),
            Op::Reshape { x },
            rg,
        ))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        check_perm(perm, self.shape(x).len())?;
        let (shape, data) = permute_data(self.data(x), self.shape(x), perm);
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_raw(shape, data),
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&1);
        let xd = self.data(x);
        let rows = xd.len() / d;
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / libm::sqrt(var + LN_EPS);
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_raw(shape, out),
            Op::LayerNorm { x, inv_std },
            rg,
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_raw(shape, out), Op::Silu { x }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().fold(0.0, |acc, v| acc + v);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().fold(0.0, |acc, v| acc + v) / d.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean { x }, rg)
    }

    /// Row lookup into a rank-2 `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || ids.iter().any(|&i| i >= st[0]) || ids.is_empty() {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: st,
                rhs: ids.to_vec(),
            });
        }
        let d = st[1];
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::from_raw(vec![ids.len(), d], out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks `times` copies of `x` along a new leading axis.
    pub fn repeat(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Count {
                op: "repeat",
                expected: 0,
                shape: self.shape(x).to_vec(),
            });
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(xd.len() * times);
        for _ in 0..times {
            out.extend_from_slice(xd);
        }
        let mut shape = vec![times];
        shape.extend_from_slice(self.shape(x));
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_raw(shape, out), Op::Repeat { x, times }, rg))
    }

    /// Linear layer `x · w (+ b)` with `w: [d_in, d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Propagates d`loss` back to every leaf that requires gradients.
    /// Leaf gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if numel(ls) != 1 {
            return Err(Error::NotScalar(ls.to_vec()));
        }
        if !self.nodes[loss.0].value.all_finite() {
            return Err(Error::NonFinite(format!("loss node {}", loss.0)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let l = self
                    .mat_layout("matmul", *a, *b, false)
                    .expect("validated in forward");
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.requires_grad(*a) {
                    // ga = g · bᵀ
                    deposit(grads, *a, mm_nt(g, bd, l.batch, l.m, l.p, l.k, l.shared_b));
                }
                if self.requires_grad(*b) {
                    // gb = aᵀ · g, summed over the batch when b is shared
                    deposit(grads, *b, mm_tn(ad, g, l.batch, l.m, l.k, l.p, l.shared_b));
                }
            }
            Op::MatMulNt { a, b } => {
                // y = a · bᵀ, b is [p, k]
                let l = self
                    .mat_layout("matmul_nt", *a, *b, true)
                    .expect("validated in forward");
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.requires_grad(*a) {
                    // ga = g · b
                    deposit(grads, *a, mm_nn(g, bd, l.batch, l.m, l.p, l.k, l.shared_b));
                }
                if self.requires_grad(*b) {
                    // gb = gᵀ · a
                    deposit(grads, *b, mm_tn(g, ad, l.batch, l.m, l.p, l.k, l.shared_b));
                }
            }
            Op::Add(a, b) => {
                self.acc_scaled(grads, *a, g, 1.0);
                self.acc_scaled(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_scaled(grads, *a, g, 1.0);
                self.acc_scaled(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let bd = self.data(*b);
                    let ga = slot(grads, *a, g.len());
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *o += gv * bv;
                    }
                }
                if self.requires_grad(*b) {
                    let ad = self.data(*a);
                    let gb = slot(grads, *b, g.len());
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(ad) {
                        *o += gv * av;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                self.acc_scaled(grads, *x, g, 1.0);
                if self.requires_grad(*bias) {
                    let d = self.shape(*bias)[0];
                    let gb = slot(grads, *bias, d);
                    for row in g.chunks_exact(d) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Scale { x, factor } => self.acc_scaled(grads, *x, g, *factor),
            Op::Softmax { x, axis } => {
                if self.requires_grad(*x) {
                    let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                    let gx = slot(grads, *x, g.len());
                    if inner == 1 {
                        let rows = g.chunks_exact(len).zip(y.chunks_exact(len));
                        for ((gr, yr), xr) in rows.zip(gx.chunks_exact_mut(len)) {
                            let dot = gr.iter().zip(yr).fold(0.0, |acc, (a, b)| acc + a * b);
                            for ((o, gv), yv) in xr.iter_mut().zip(gr).zip(yr) {
                                *o += yv * (gv - dot);
                            }
                        }
                        return;
                    }
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut dot = 0.0;
                            for j in 0..len {
                                dot += g[base + j * inner] * y[base + j * inner];
                            }
                            for j in 0..len {
                                let at = base + j * inner;
                                gx[at] += y[at] * (g[at] - dot);
                            }
                        }
                    }
                }
            }
            Op::Reshape { x } => self.acc_scaled(grads, *x, g, 1.0),
            Op::Permute { x, perm } => {
                if self.requires_grad(*x) {
                    let inv = inverse_perm(perm);
                    let (_, back) = permute_data(g, node.value.shape(), &inv);
                    let gx = slot(grads, *x, back.len());
                    for (o, v) in gx.iter_mut().zip(&back) {
                        *o += v;
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if self.requires_grad(*x) {
                    let d = *node.value.shape().last().unwrap_or(&1);
                    let gx = slot(grads, *x, g.len());
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let yr = &y[r * d..(r + 1) * d];
                        let mg = gr.iter().sum::<f64>() / d as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += is * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                }
            }
            Op::Silu { x } => {
                if self.requires_grad(*x) {
                    let xd = self.data(*x);
                    let gx = slot(grads, *x, g.len());
                    for ((o, gv), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        let s = sigmoid(xv);
                        *o += gv * s * (1.0 + xv * (1.0 - s));
                    }
                }
            }
            Op::Sum { x } => {
                if self.requires_grad(*x) {
                    let n = self.data(*x).len();
                    let gx = slot(grads, *x, n);
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean { x } => {
                if self.requires_grad(*x) {
                    let n = self.data(*x).len();
                    let gx = slot(grads, *x, n);
                    let v = g[0] / n as f64;
                    gx.iter_mut().for_each(|o| *o += v);
                }
            }
            Op::Gather { table, ids } => {
                if self.requires_grad(*table) {
                    let st = self.shape(*table);
                    let d = st[1];
                    let gt = slot(grads, *table, st[0] * d);
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::Repeat { x, times } => {
                if self.requires_grad(*x) {
                    let n = g.len() / times;
                    let gx = slot(grads, *x, n);
                    for chunk in g.chunks_exact(n) {
                        for (o, v) in gx.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }

    fn acc_scaled(&self, grads: &mut [Option<Vec<f64>>], x: Var, g: &[f64], factor: f64) {
        if !self.requires_grad(x) {
            return;
        }
        if grads[x.0].is_none() {
            let fresh = if factor == 1.0 {
                g.to_vec()
            } else {
                g.iter().map(|v| v * factor).collect()
            };
            grads[x.0] = Some(fresh);
            return;
        }
        let gx = slot(grads, x, g.len());
        if factor == 1.0 {
            gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
        } else {
            gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * factor);
        }
    }
}

/// `x[batch, m, k] · y` with `y` shaped `[batch, k, p]` or shared `[k, p]`.
fn mm_nn(
    x: &[f64],
    y: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    p: usize,
    shared: bool,
) -> Vec<f64> {
    if shared {
        return gemm_new(x, y, batch * m, k, p);
    }
    let mut out = Vec::with_capacity(batch * m * p);
    for (xs, ys) in x.chunks_exact(m * k).zip(y.chunks_exact(k * p)) {
        gemm_new_into(xs, ys, &mut out, m, k, p);
    }
    out
}

/// `x[batch, m, k] · yᵀ` with `y` shaped `[batch, p, k]` or shared `[p, k]`.
fn mm_nt(
    x: &[f64],
    y: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    p: usize,
    shared: bool,
) -> Vec<f64> {
    let mut yt = vec![0.0; y.len()];
    for (src, dst) in y.chunks_exact(p * k).zip(yt.chunks_exact_mut(p * k)) {
        transpose_into(src, dst, p, k);
    }
    mm_nn(x, &yt, batch, m, k, p, shared)
}

/// `xᵀ · y` for `x[batch, m, k]`, `y[batch, m, p]`: one `[k, p]` block per
/// batch entry, or a single block summed over all rows when `shared`.
fn mm_tn(
    x: &[f64],
    y: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    p: usize,
    shared: bool,
) -> Vec<f64> {
    if shared {
        return gemm_tn_new(x, y, batch * m, k, p);
    }
    let mut out = Vec::with_capacity(batch * k * p);
    for (xs, ys) in x.chunks_exact(m * k).zip(y.chunks_exact(m * p)) {
        out.extend_from_slice(&gemm_tn_new(xs, ys, m, k, p));
    }
    out
}

/// Adds a gradient contribution, taking ownership when the slot is empty.
fn deposit(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        empty => *empty = Some(contribution),
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, n: usize) -> &'a mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

/// Contiguous softmax with the same operation order as the strided path.
fn softmax_row(row: &[f64], out: &mut [f64]) {
    let mx = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    for (o, &v) in out.iter_mut().zip(row) {
        *o = crate::fastmath::exp(v - mx);
    }
    let sum = out.iter().fold(0.0, |acc, v| acc + v);
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// Logistic function; both branches are evaluated so the loop vectorizes.
#[inline(always)]
pub(crate) fn sigmoid(x: f64) -> f64 {
    let e = crate::fastmath::exp(-x.abs());
    let d = 1.0 + e;
    if x >= 0.0 {
        1.0 / d
    } else {
        e / d
    }
}

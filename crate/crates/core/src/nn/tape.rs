//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] is built fresh for every mini-batch: each operation appends a
//! node holding its forward value, and [`Tape::backward`] walks the nodes in
//! reverse accumulating adjoints. Parameter leaves are tagged with a slot so
//! gradients for several parameter stores can be collected from one tape.
//! Everything is `f64` so finite-difference checks are meaningful.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param {
        slot: usize,
        id: usize,
    },
    Gather {
        src: Var,
        idx: Rc<Vec<usize>>,
    },
    VConcat(Vec<Var>),
    HConcat(Vec<Var>),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    RowSum(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        groups: Rc<Vec<Vec<usize>>>,
        heads: usize,
        probs: Vec<Mat>,
    },
    Bilinear {
        t: Var,
        z: Var,
        out: usize,
    },
    SoftmaxCe {
        logits: Var,
        targets: Rc<Vec<usize>>,
        weights: Option<Rc<Vec<f64>>>,
        probs: Mat,
    },
    BceLogits {
        logits: Var,
        targets: Rc<Vec<f64>>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param { .. } => vec![],
            Op::Gather { src, .. } => vec![*src],
            Op::VConcat(p) | Op::HConcat(p) => p.clone(),
            Op::MatMul(a, b) | Op::AddRow(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Gelu(a) | Op::Relu(a) | Op::Tanh(a) | Op::RowSum(a) | Op::Sum(a) => {
                vec![*a]
            }
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Bilinear { t, z, .. } => vec![*t, *z],
            Op::SoftmaxCe { logits, .. } | Op::BceLogits { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients produced by [`Tape::backward`], keyed by slot.
pub struct Gradients {
    slots: Vec<Vec<Option<Mat>>>,
}

impl Gradients {
    /// Dense gradients for every parameter in `store` bound under `slot`.
    /// Parameters that never reached the loss get zeros.
    pub fn for_store(&self, slot: usize, store: &ParamStore) -> Vec<Mat> {
        let found = self.slots.get(slot);
        (0..store.len())
            .map(|i| {
                found
                    .and_then(|s| s.get(i))
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Mat::zeros(store.get(ParamId(i)).raw_dim()))
            })
            .collect()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param { .. } => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant)
    }

    /// Trainable leaf. Gradients are reported under `slot`.
    pub fn param(&mut self, slot: usize, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param { slot, id: id.0 })
    }

    /// Frozen leaf: same value as [`Tape::param`] but no gradient flows out.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Constant)
    }

    /// Row gather, `out[i] = src[idx[i]]`. Used for embedding lookups and
    /// for slicing per-domain rows out of a batch.
    pub fn gather(&mut self, src: Var, idx: Vec<usize>) -> Var {
        let s = &self.nodes[src.0].value;
        let mut out = Mat::zeros((idx.len(), s.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&s.row(i));
        }
        self.push(out, Op::Gather { src, idx: Rc::new(idx) })
    }

    pub fn vconcat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("vconcat column mismatch");
        self.push(out, Op::VConcat(parts.to_vec()))
    }

    pub fn hconcat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("hconcat row mismatch");
        self.push(out, Op::HConcat(parts.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a + bias` where `bias` is a single row broadcast over `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let out = &self.nodes[a.0].value + &self.nodes[bias.0].value;
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = &self.nodes[a.0].value * k;
        self.push(out, Op::Scale(a, k))
    }

    /// Dense layer `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::RowSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.sum();
        self.push(Mat::from_elem((1, 1), total), Op::Sum(a))
    }

    /// Row-wise layer normalisation with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let cols = xv.ncols() as f64;
        let mut xhat = Mat::zeros(xv.raw_dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (c, v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * is;
            }
        }
        let out = &(&xhat * &self.nodes[gain.0].value) + &self.nodes[bias.0].value;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention. `groups` lists the rows
    /// that form one sequence; attention never crosses groups and carries no
    /// notion of order within a group.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: Rc<Vec<Vec<usize>>>, heads: usize) -> Var {
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let vv = &self.nodes[v.0].value;
        let width = qv.ncols();
        assert!(width.is_multiple_of(heads), "attention width not divisible by heads");
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(qv.raw_dim());
        let mut probs = Vec::with_capacity(groups.len() * heads);
        for rows in groups.iter() {
            let len = rows.len();
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let mut p = Mat::zeros((len, len));
                for (a, &ra) in rows.iter().enumerate() {
                    let qa = qv.slice(s![ra, cols.clone()]);
                    let mut max = f64::NEG_INFINITY;
                    for (b, &rb) in rows.iter().enumerate() {
                        let sc = qa.dot(&kv.slice(s![rb, cols.clone()])) * scale;
                        p[[a, b]] = sc;
                        max = max.max(sc);
                    }
                    let mut z = 0.0;
                    for b in 0..len {
                        let e = (p[[a, b]] - max).exp();
                        p[[a, b]] = e;
                        z += e;
                    }
                    for b in 0..len {
                        p[[a, b]] /= z;
                    }
                    let mut orow = out.slice_mut(s![ra, cols.clone()]);
                    for (b, &rb) in rows.iter().enumerate() {
                        orow.scaled_add(p[[a, b]], &vv.slice(s![rb, cols.clone()]));
                    }
                }
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                probs,
            },
        )
    }

    /// Bilinear contraction. `t` is `x·W` with `W` laid out as
    /// `p × (out·q)`; the result is `y[r,k] = Σ_c t[r, k·q + c]·z[r, c]`.
    pub fn bilinear(&mut self, t: Var, z: Var, out: usize) -> Var {
        let tv = &self.nodes[t.0].value;
        let zv = &self.nodes[z.0].value;
        let q = zv.ncols();
        assert_eq!(tv.ncols(), out * q, "bilinear width mismatch");
        let mut y = Mat::zeros((tv.nrows(), out));
        for r in 0..tv.nrows() {
            for k in 0..out {
                y[[r, k]] = tv.slice(s![r, k * q..(k + 1) * q]).dot(&zv.row(r));
            }
        }
        self.push(y, Op::Bilinear { t, z, out })
    }

    /// Summed softmax cross-entropy of each row of `logits` against its
    /// target class, optionally weighted per row. Returns a 1×1 node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Option<Vec<f64>>) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.nrows(), targets.len());
        let mut probs = Mat::zeros(lv.raw_dim());
        let mut loss = 0.0;
        for (r, row) in lv.rows().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + z.ln();
            for (c, v) in row.iter().enumerate() {
                probs[[r, c]] = (v - log_z).exp();
            }
            let w = weights.as_ref().map_or(1.0, |w| w[r]);
            loss += w * (log_z - row[targets[r]]);
        }
        self.push(
            Mat::from_elem((1, 1), loss),
            Op::SoftmaxCe {
                logits,
                targets: Rc::new(targets),
                weights: weights.map(Rc::new),
                probs,
            },
        )
    }

    /// Summed binary cross-entropy on an `n×1` column of logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.ncols(), 1);
        assert_eq!(lv.nrows(), targets.len());
        let loss: f64 = lv
            .column(0)
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| softplus(x) - y * x)
            .sum();
        self.push(
            Mat::from_elem((1, 1), loss),
            Op::BceLogits {
                logits,
                targets: Rc::new(targets),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.dim(), (1, 1), "loss must be scalar");
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        let mut slots: Vec<Vec<Option<Mat>>> = Vec::new();

        let rg: Vec<bool> = self.nodes.iter().map(|n| n.requires_grad).collect();
        let acc = |adj: &mut [Option<Mat>], v: Var, g: Mat| {
            if !rg[v.0] {
                return;
            }
            match &mut adj[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param { slot, id } => {
                    if slots.len() <= *slot {
                        slots.resize_with(slot + 1, Vec::new);
                    }
                    let s = &mut slots[*slot];
                    if s.len() <= *id {
                        s.resize_with(id + 1, || None);
                    }
                    match &mut s[*id] {
                        Some(existing) => *existing += &g,
                        e @ None => *e = Some(g),
                    }
                }
                Op::Gather { src, idx } if self.rg(*src) => {
                    let mut d = Mat::zeros(self.nodes[src.0].value.raw_dim());
                    for (r, &j) in idx.iter().enumerate() {
                        let mut row = d.row_mut(j);
                        row += &g.row(r);
                    }
                    acc(&mut adj, *src, d);
                }
                Op::VConcat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.nrows();
                        acc(&mut adj, *p, g.slice(s![start..start + n, ..]).to_owned());
                        start += n;
                    }
                }
                Op::HConcat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.ncols();
                        acc(&mut adj, *p, g.slice(s![.., start..start + n]).to_owned());
                        start += n;
                    }
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.rg(*a) {
                        acc(&mut adj, *a, g.dot(&bv.t()));
                    }
                    if self.rg(*b) {
                        acc(&mut adj, *b, av.t().dot(&g));
                    }
                }
                Op::AddRow(a, b) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *a, g);
                    acc(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Scale(a, k) => acc(&mut adj, *a, g * *k),
                Op::Gather { .. } => {}
                Op::Gelu(a) => {
                    let d = &g * &self.nodes[a.0].value.mapv(gelu_grad);
                    acc(&mut adj, *a, d);
                }
                Op::Relu(a) => {
                    let mask = self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut adj, *a, g * mask);
                }
                Op::Tanh(a) => {
                    let d = &g * &node.value.mapv(|t| 1.0 - t * t);
                    acc(&mut adj, *a, d);
                }
                Op::RowSum(a) => {
                    let cols = self.nodes[a.0].value.ncols();
                    let d = g.broadcast((g.nrows(), cols)).expect("row-sum broadcast").to_owned();
                    acc(&mut adj, *a, d);
                }
                Op::Sum(a) => {
                    let d = Mat::from_elem(self.nodes[a.0].value.raw_dim(), g[[0, 0]]);
                    acc(&mut adj, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = &self.nodes[gain.0].value;
                    let dgain = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gv;
                    let cols = xhat.ncols() as f64;
                    let mut dx = Mat::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let mean_d = dr.sum() / cols;
                        let mean_dx = dr.dot(&xr) / cols;
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = inv_std[r] * (dr[c] - mean_d - xr[c] * mean_dx);
                        }
                    }
                    acc(&mut adj, *x, dx);
                    acc(&mut adj, *gain, dgain);
                    acc(&mut adj, *bias, dbias);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    groups,
                    heads,
                    probs,
                } => {
                    let qv = &self.nodes[q.0].value;
                    let kv = &self.nodes[k.0].value;
                    let vv = &self.nodes[v.0].value;
                    let dh = qv.ncols() / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Mat::zeros(qv.raw_dim());
                    let mut dk = Mat::zeros(kv.raw_dim());
                    let mut dv = Mat::zeros(vv.raw_dim());
                    let mut pi = 0;
                    for rows in groups.iter() {
                        let len = rows.len();
                        for h in 0..*heads {
                            let cols = h * dh..(h + 1) * dh;
                            let p = &probs[pi];
                            pi += 1;
                            for (a, &ra) in rows.iter().enumerate() {
                                let go = g.slice(s![ra, cols.clone()]);
                                // dP[a,b] = dO[a]·V[b]
                                let dp: Vec<f64> =
                                    rows.iter().map(|&rb| go.dot(&vv.slice(s![rb, cols.clone()]))).collect();
                                let inner: f64 = (0..len).map(|b| dp[b] * p[[a, b]]).sum();
                                for (b, &rb) in rows.iter().enumerate() {
                                    dv.slice_mut(s![rb, cols.clone()]).scaled_add(p[[a, b]], &go);
                                    let ds = p[[a, b]] * (dp[b] - inner) * scale;
                                    dq.slice_mut(s![ra, cols.clone()])
                                        .scaled_add(ds, &kv.slice(s![rb, cols.clone()]));
                                    dk.slice_mut(s![rb, cols.clone()])
                                        .scaled_add(ds, &qv.slice(s![ra, cols.clone()]));
                                }
                            }
                        }
                    }
                    acc(&mut adj, *q, dq);
                    acc(&mut adj, *k, dk);
                    acc(&mut adj, *v, dv);
                }
                Op::Bilinear { t, z, out } => {
                    let tv = &self.nodes[t.0].value;
                    let zv = &self.nodes[z.0].value;
                    let qd = zv.ncols();
                    let mut dt = Mat::zeros(tv.raw_dim());
                    let mut dz = Mat::zeros(zv.raw_dim());
                    for r in 0..tv.nrows() {
                        for k in 0..*out {
                            let gk = g[[r, k]];
                            dt.slice_mut(s![r, k * qd..(k + 1) * qd]).scaled_add(gk, &zv.row(r));
                            dz.row_mut(r).scaled_add(gk, &tv.slice(s![r, k * qd..(k + 1) * qd]));
                        }
                    }
                    acc(&mut adj, *t, dt);
                    acc(&mut adj, *z, dz);
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let go = g[[0, 0]];
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d[[r, t]] -= 1.0;
                        let w = weights.as_ref().map_or(1.0, |w| w[r]);
                        d.row_mut(r).mapv_inplace(|x| x * w * go);
                    }
                    acc(&mut adj, *logits, d);
                }
                Op::BceLogits { logits, targets } => {
                    let go = g[[0, 0]];
                    let lv = &self.nodes[logits.0].value;
                    let mut d = Mat::zeros(lv.raw_dim());
                    for (r, &y) in targets.iter().enumerate() {
                        d[[r, 0]] = (sigmoid(lv[[r, 0]]) - y) * go;
                    }
                    acc(&mut adj, *logits, d);
                }
            }
        }
        Gradients { slots }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_gradients_match, GRAD_TOL};
    use crate::nn::params::ParamStore;
    use crate::rng;

    fn random_store(shapes: &[(usize, usize)], seed: u64) -> ParamStore {
        let mut r = rng::rng(seed);
        let mut store = ParamStore::new();
        for (i, &(a, b)) in shapes.iter().enumerate() {
            store.add_normal(&format!("p{i}"), a, b, 0.7, &mut r);
        }
        store
    }

    fn check(store: &ParamStore, f: impl Fn(&mut Tape, &[Var]) -> Var) {
        assert_gradients_match(store, GRAD_TOL, |store, tape| {
            let vars: Vec<Var> = (0..store.len()).map(|i| tape.param(0, store, ParamId(i))).collect();
            f(tape, &vars)
        });
    }

    #[test]
    fn elementwise_and_dense_ops_match_finite_differences() {
        let store = random_store(&[(4, 3), (3, 5), (1, 5), (4, 5)], 1);
        check(&store, |t, v| {
            let h = t.linear(v[0], v[1], v[2]);
            let g = t.gelu(h);
            let r = t.relu(v[3]);
            let m = t.mul(g, r);
            let th = t.tanh(m);
            let a = t.add(th, g);
            let s = t.scale(a, 0.3);
            let rs = t.row_sum(s);
            t.sum(rs)
        });
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let store = random_store(&[(5, 3), (2, 3), (1, 3), (1, 3)], 2);
        check(&store, |t, v| {
            let g = t.gather(v[0], vec![4, 0, 0, 2]);
            let c = t.vconcat(&[g, v[1]]);
            let h = t.hconcat(&[c, c]);
            let ln_in = t.gather(h, vec![0, 1, 2, 3, 4, 5]);
            let gain = t.hconcat(&[v[2], v[2]]);
            let bias = t.hconcat(&[v[3], v[3]]);
            let ln = t.layer_norm(ln_in, gain, bias);
            let sq = t.mul(ln, ln);
            let w = t.mul(sq, ln);
            t.sum(w)
        });
    }

    #[test]
    fn attention_matches_finite_differences() {
        let store = random_store(&[(6, 4), (6, 4), (6, 4), (6, 4)], 3);
        let groups = Rc::new(vec![vec![0, 2, 4], vec![1, 3, 5]]);
        check(&store, |t, v| {
            let a = t.attention(v[0], v[1], v[2], groups.clone(), 2);
            let m = t.mul(a, v[3]);
            t.sum(m)
        });
    }

    #[test]
    fn bilinear_and_losses_match_finite_differences() {
        let store = random_store(&[(3, 4), (4, 2 * 3), (3, 3), (3, 5)], 4);
        check(&store, |t, v| {
            let tx = t.matmul(v[0], v[1]);
            let y = t.bilinear(tx, v[2], 2);
            let col = t.row_sum(y);
            let bce = t.bce_with_logits(col, vec![1.0, 0.0, 1.0]);
            let ce = t.softmax_cross_entropy(v[3], vec![0, 4, 2], Some(vec![1.0, 0.5, 2.0]));
            t.add(bce, ce)
        });
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut tape = Tape::new();
        let q = tape.constant(Mat::from_shape_fn((3, 2), |(i, j)| (i + j) as f64));
        let v = tape.constant(Mat::from_elem((3, 2), 2.5));
        let out = tape.attention(q, q, v, Rc::new(vec![vec![0, 1, 2]]), 1);
        for x in tape.value(out).iter() {
            assert!((x - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_cross_entropy_of_uniform_logits_is_log_classes() {
        let mut tape = Tape::new();
        let l = tape.constant(Mat::zeros((2, 4)));
        let ce = tape.softmax_cross_entropy(l, vec![1, 3], None);
        assert!((tape.scalar(ce) - 2.0 * 4f64.ln()).abs() < 1e-12);
    }
}

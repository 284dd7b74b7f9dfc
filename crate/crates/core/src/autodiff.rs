//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! Values are row-major matrices; a 1-D tensor of length `m` acts as a
//! single row. Every operation appends a node holding its output; nodes that
//! depend on no trainable leaf are marked constant and receive no gradient.

use crate::attention::{mvpa_core_backward, mvpa_core_forward, AttentionConfig, Geometry, OpCounters, Projections};
use crate::objectives::{contrastive_loss_grad, ContrastiveConfig};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::wavelet::inv_rms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Tensor inputs of one attention call, as graph variables.
#[derive(Debug, Clone, Copy)]
pub struct MvpaVars {
    pub w_q: Var,
    pub w_ke: Var,
    pub w_kt: Var,
    pub w_kc: Var,
    pub w_v: Var,
    pub time_codebook: Var,
    pub channel_codebook: Var,
    pub u_content: Var,
    pub v_time: Var,
    pub w_channel: Var,
}

#[derive(Debug)]
struct MvpaNode {
    x: Var,
    vars: MvpaVars,
    geometry: Geometry,
    cfg: AttentionConfig,
    keep: Option<Vec<bool>>,
    proj: Projections,
    weights: Vec<f64>,
}

#[derive(Debug)]
struct ContrastiveNode {
    pred: Var,
    target: Var,
    /// Row pairs `(prediction row, target row)`.
    pairs: Vec<(usize, usize)>,
    negatives: Vec<Vec<Vec<f64>>>,
    cfg: ContrastiveConfig,
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x[n × k] · w[m × k]ᵀ`
    Linear(Var, Var),
    /// `x[n × m] + b[m]` on every row.
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant.
    MaskMul(Var, Vec<f64>),
    RmsNorm {
        x: Var,
        gain: Var,
        inv: Vec<f64>,
    },
    Silu(Var),
    /// `w + scale · b · a`
    LoraMerge {
        w: Var,
        a: Var,
        b: Var,
        scale: f64,
    },
    Mvpa(Box<MvpaNode>),
    Rows(Var, Vec<usize>),
    MeanRows(Var),
    Reshape(Var),
    Contrastive(Box<ContrastiveNode>),
    /// Mean cross-entropy of row-wise softmax; keeps the probabilities.
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        x: Var,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for constants and for nodes the loss does not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn silu(x: f64) -> f64 {
    x * crate::attention::sigmoid(x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that is held fixed.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn linear(&mut self, x: Var, w: Var) -> Var {
        let (n, k) = self.dims(x);
        let (m, kw) = self.dims(w);
        assert_eq!(k, kw, "linear: input width {k} vs weight width {kw}");
        let out = matmul_nt(self.data(x), self.data(w), n, k, m);
        self.push(Tensor::from_vec(&[n, m], out).unwrap(), Op::Linear(x, w), &[x, w])
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (n, m) = self.dims(x);
        assert_eq!(self.value(b).len(), m, "add_row: bias length");
        let bias = self.data(b);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        self.push(Tensor::from_vec(&[n, m], out).unwrap(), Op::AddRow(x, b), &[x, b])
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "elementwise shape mismatch");
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::from_vec(&shape, out).unwrap(), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.data(x).iter().map(|v| f(*v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::from_vec(&shape, out).unwrap(), op, &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| s * v, Op::Scale(x, s))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.map(x, silu, Op::Silu(x))
    }

    /// Elementwise product with a fixed factor, e.g. an inverted-dropout mask.
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Var {
        assert_eq!(mask.len(), self.value(x).len(), "mask length");
        let out = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::from_vec(&shape, out).unwrap(), Op::MaskMul(x, mask), &[x])
    }

    /// Row-wise `gain ⊙ x / sqrt(mean(x²) + eps)`.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Var {
        let (n, m) = self.dims(x);
        assert_eq!(self.value(gain).len(), m, "rms_norm: gain length");
        let g = self.data(gain);
        let mut inv = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * m);
        for row in self.data(x).chunks(m) {
            let s = inv_rms(row, eps);
            inv.push(s);
            out.extend(row.iter().zip(g).map(|(v, gv)| gv * v * s));
        }
        self.push(Tensor::from_vec(&[n, m], out).unwrap(), Op::RmsNorm { x, gain, inv }, &[x, gain])
    }

    /// `w + scale · b · a` with `a: [r × k]`, `b: [m × r]`.
    pub fn lora_merge(&mut self, w: Var, a: Var, b: Var, scale: f64) -> Var {
        let (m, k) = self.dims(w);
        let (r, ka) = self.dims(a);
        let (mb, rb) = self.dims(b);
        assert!(ka == k && mb == m && rb == r, "lora shapes");
        let ba = matmul_nn(self.data(b), self.data(a), m, r, k);
        let out = self.data(w).iter().zip(&ba).map(|(wv, d)| wv + scale * d).collect();
        self.push(Tensor::from_vec(&[m, k], out).unwrap(), Op::LoraMerge { w, a, b, scale }, &[w, a, b])
    }

    /// Multi-variate attention of the rows of `x` (a `[C·T × d]` grid in
    /// channel-major order) before the output projection; `[C·T × H·d_h]`.
    pub(crate) fn mvpa(
        &mut self,
        x: Var,
        vars: MvpaVars,
        geometry: Geometry,
        cfg: AttentionConfig,
        keep: Option<Vec<bool>>,
    ) -> Var {
        let (n, d) = self.dims(x);
        assert_eq!(n, geometry.cells(), "mvpa: grid rows");
        let proj = {
            let lin = |w: Var| {
                let (m, _) = self.dims(w);
                matmul_nt(self.data(x), self.data(w), n, d, m)
            };
            let code = |cb: Var, w: Var| {
                let (rows, _) = self.dims(cb);
                let (m, _) = self.dims(w);
                matmul_nt(self.data(cb), self.data(w), rows, d, m)
            };
            Projections::from_parts(
                lin(vars.w_q),
                lin(vars.w_ke),
                lin(vars.w_v),
                code(vars.time_codebook, vars.w_kt),
                code(vars.channel_codebook, vars.w_kc),
                self.data(vars.u_content).to_vec(),
                self.data(vars.v_time).to_vec(),
                self.data(vars.w_channel).to_vec(),
            )
        };
        let mut counters = OpCounters::default();
        let (out, weights) = mvpa_core_forward(&geometry, &proj.view(), &cfg, keep.as_deref(), &mut counters);
        let inputs = [
            x,
            vars.w_q,
            vars.w_ke,
            vars.w_kt,
            vars.w_kc,
            vars.w_v,
            vars.time_codebook,
            vars.channel_codebook,
            vars.u_content,
            vars.v_time,
            vars.w_channel,
        ];
        let node = MvpaNode { x, vars, geometry, cfg, keep, proj, weights };
        self.push(Tensor::from_vec(&[n, geometry.q_width()], out).unwrap(), Op::Mvpa(Box::new(node)), &inputs)
    }

    /// Selected rows, in the given order.
    pub fn rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let (_, m) = self.dims(x);
        let src = self.data(x);
        let out: Vec<f64> = rows.iter().flat_map(|&r| src[r * m..(r + 1) * m].iter().copied()).collect();
        self.push(Tensor::from_vec(&[rows.len(), m], out).unwrap(), Op::Rows(x, rows), &[x])
    }

    /// Column means, `[1 × m]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (n, m) = self.dims(x);
        let mut out = vec![0.0; m];
        for row in self.data(x).chunks(m) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        self.push(Tensor::from_vec(&[1, m], out).unwrap(), Op::MeanRows(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshape(shape).expect("reshape keeps size");
        self.push(t, Op::Reshape(x), &[x])
    }

    /// Summed contrastive loss over `(prediction row, target row)` pairs, each
    /// with its own constant negatives.
    pub fn contrastive(
        &mut self,
        pred: Var,
        target: Var,
        pairs: Vec<(usize, usize)>,
        negatives: Vec<Vec<Vec<f64>>>,
        cfg: ContrastiveConfig,
    ) -> Var {
        assert_eq!(pairs.len(), negatives.len(), "one negative set per pair");
        let p = self.value(pred);
        let t = self.value(target);
        let mut loss = 0.0;
        for (&(i, j), negs) in pairs.iter().zip(&negatives) {
            loss += contrastive_loss_grad(p.row(i), t.row(j), negs, &cfg).0;
        }
        let node = ContrastiveNode { pred, target, pairs, negatives, cfg };
        self.push(Tensor::scalar(loss), Op::Contrastive(Box::new(node)), &[pred, target])
    }

    /// Mean over rows of `−log softmax(logits)[target]`.
    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let (n, k) = self.dims(logits);
        assert_eq!(targets.len(), n, "one target per row");
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = 0.0;
        for (row, &y) in self.data(logits).chunks(k).zip(&targets) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            loss += z.ln() + m - row[y];
            probs.extend(row.iter().map(|v| (v - m).exp() / z));
        }
        self.push(Tensor::scalar(loss / n as f64), Op::SoftmaxXent { logits, targets, probs }, &[logits])
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: Vec<f64>) -> Var {
        assert_eq!(target.len(), self.value(x).len(), "mse target length");
        let n = target.len() as f64;
        let loss = self.data(x).iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        self.push(Tensor::scalar(loss), Op::Mse { x, target }, &[x])
    }

    /// Gradients of the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| g.map(|d| Tensor::from_vec(n.value.shape(), d).unwrap()))
                .collect(),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: impl FnOnce() -> Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let d = delta();
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, x)| *a += x),
            slot => *slot = Some(d),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Linear(x, w) => {
                let (n, k) = self.dims(*x);
                let (m, _) = self.dims(*w);
                self.accumulate(grads, *x, || matmul_nn(g, self.data(*w), n, m, k));
                self.accumulate(grads, *w, || matmul_tn(g, self.data(*x), n, m, k));
            }
            Op::AddRow(x, b) => {
                let (_, m) = self.dims(*x);
                self.accumulate(grads, *x, || g.to_vec());
                self.accumulate(grads, *b, || {
                    let mut s = vec![0.0; m];
                    for row in g.chunks(m) {
                        s.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    s
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.to_vec());
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, || g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect());
                self.accumulate(grads, *b, || g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect());
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, || g.iter().map(|v| v * s).collect()),
            Op::MaskMul(x, mask) => self.accumulate(grads, *x, || g.iter().zip(mask).map(|(v, m)| v * m).collect()),
            Op::Silu(x) => self.accumulate(grads, *x, || {
                g.iter()
                    .zip(self.data(*x))
                    .map(|(gv, &v)| {
                        let s = crate::attention::sigmoid(v);
                        gv * (s + v * s * (1.0 - s))
                    })
                    .collect()
            }),
            Op::RmsNorm { x, gain, inv } => {
                let (_, m) = self.dims(*x);
                let xs = self.data(*x);
                let gn = self.data(*gain);
                self.accumulate(grads, *x, || {
                    let mut out = Vec::with_capacity(xs.len());
                    for ((row, grow), &s) in xs.chunks(m).zip(g.chunks(m)).zip(inv) {
                        // y = γ x s, s = (mean x² + eps)^(-1/2)
                        let gx: f64 = row.iter().zip(grow).zip(gn).map(|((xv, gv), gm)| gv * gm * xv).sum();
                        let k = s * s * s * gx / m as f64;
                        out.extend(row.iter().zip(grow).zip(gn).map(|((xv, gv), gm)| gv * gm * s - k * xv));
                    }
                    out
                });
                self.accumulate(grads, *gain, || {
                    let mut out = vec![0.0; m];
                    for ((row, grow), &s) in xs.chunks(m).zip(g.chunks(m)).zip(inv) {
                        for ((o, xv), gv) in out.iter_mut().zip(row).zip(grow) {
                            *o += gv * xv * s;
                        }
                    }
                    out
                });
            }
            Op::LoraMerge { w, a, b, scale } => {
                let (m, k) = self.dims(*w);
                let (r, _) = self.dims(*a);
                self.accumulate(grads, *w, || g.to_vec());
                self.accumulate(grads, *b, || {
                    matmul_nt(g, self.data(*a), m, k, r).into_iter().map(|v| v * scale).collect()
                });
                self.accumulate(grads, *a, || {
                    matmul_tn(self.data(*b), g, m, r, k).into_iter().map(|v| v * scale).collect()
                });
            }
            Op::Mvpa(node) => self.mvpa_backward(node, g, grads),
            Op::Rows(x, rows) => {
                let (_, m) = self.dims(*x);
                let len = self.value(*x).len();
                self.accumulate(grads, *x, || {
                    let mut out = vec![0.0; len];
                    for (gr, &r) in g.chunks(m).zip(rows) {
                        out[r * m..(r + 1) * m].iter_mut().zip(gr).for_each(|(o, v)| *o += v);
                    }
                    out
                });
            }
            Op::MeanRows(x) => {
                let (n, _) = self.dims(*x);
                self.accumulate(grads, *x, || (0..n).flat_map(|_| g.iter().map(|v| v / n as f64)).collect());
            }
            Op::Reshape(x) => self.accumulate(grads, *x, || g.to_vec()),
            Op::Contrastive(node) => {
                let seed = g[0];
                let p = self.value(node.pred);
                let t = self.value(node.target);
                let d = p.cols();
                let mut dp = vec![0.0; p.len()];
                let mut dt = vec![0.0; t.len()];
                for (&(i, j), negs) in node.pairs.iter().zip(&node.negatives) {
                    let (_, go, gt) = contrastive_loss_grad(p.row(i), t.row(j), negs, &node.cfg);
                    dp[i * d..(i + 1) * d].iter_mut().zip(&go).for_each(|(a, v)| *a += seed * v);
                    dt[j * d..(j + 1) * d].iter_mut().zip(&gt).for_each(|(a, v)| *a += seed * v);
                }
                self.accumulate(grads, node.pred, || dp);
                self.accumulate(grads, node.target, || dt);
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                let (n, k) = self.dims(*logits);
                let s = g[0] / n as f64;
                self.accumulate(grads, *logits, || {
                    let mut out: Vec<f64> = probs.iter().map(|p| p * s).collect();
                    for (r, &y) in targets.iter().enumerate() {
                        out[r * k + y] -= s;
                    }
                    out
                });
            }
            Op::Mse { x, target } => {
                let s = 2.0 * g[0] / target.len() as f64;
                self.accumulate(grads, *x, || self.data(*x).iter().zip(target).map(|(a, b)| s * (a - b)).collect());
            }
        }
    }

    fn mvpa_backward(&self, node: &MvpaNode, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let geo = &node.geometry;
        let cg = mvpa_core_backward(geo, &node.proj.view(), &node.cfg, node.keep.as_deref(), &node.weights, g);
        let (n, d) = self.dims(node.x);
        let v = node.vars;
        let hd = geo.q_width();
        let gd = geo.kv_width();
        let x = self.data(node.x);
        self.accumulate(grads, node.x, || {
            let mut dx = matmul_nn(&cg.q, self.data(v.w_q), n, hd, d);
            for (dk, w) in [(&cg.k, v.w_ke), (&cg.v, v.w_v)] {
                let part = matmul_nn(dk, self.data(w), n, gd, d);
                dx.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
            }
            dx
        });
        self.accumulate(grads, v.w_q, || matmul_tn(&cg.q, x, n, hd, d));
        self.accumulate(grads, v.w_ke, || matmul_tn(&cg.k, x, n, gd, d));
        self.accumulate(grads, v.w_v, || matmul_tn(&cg.v, x, n, gd, d));
        let rows_t = self.dims(v.time_codebook).0;
        let rows_c = self.dims(v.channel_codebook).0;
        self.accumulate(grads, v.time_codebook, || matmul_nn(&cg.time, self.data(v.w_kt), rows_t, gd, d));
        self.accumulate(grads, v.w_kt, || matmul_tn(&cg.time, self.data(v.time_codebook), rows_t, gd, d));
        self.accumulate(grads, v.channel_codebook, || matmul_nn(&cg.channel, self.data(v.w_kc), rows_c, gd, d));
        self.accumulate(grads, v.w_kc, || matmul_tn(&cg.channel, self.data(v.channel_codebook), rows_c, gd, d));
        self.accumulate(grads, v.u_content, || cg.u.clone());
        self.accumulate(grads, v.v_time, || cg.vt.clone());
        self.accumulate(grads, v.w_channel, || cg.wc.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor {
        Tensor::randn(shape, 1.0, &mut rng::seeded(seed))
    }

    /// Central differences of `f` around every entry of `inputs[which]`.
    fn fd_check(inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[Var]) -> Var, tol: f64) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss);
        let eval = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let vs: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
            let l = build(&mut g, &vs);
            g.value(l).data()[0]
        };
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            let an = grads.get(vars[k]).expect("gradient present");
            for i in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = an.data()[i];
                assert!((fd - a).abs() <= tol * (1.0 + fd.abs()), "input {k} entry {i}: fd {fd} vs {a}");
            }
        }
    }

    #[test]
    fn half_square_norm_gradient_is_identity() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let loss = g.mse(x, vec![0.0; 3]);
        let loss = g.scale(loss, 1.5);
        let grads = g.backward(loss);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn dense_ops_gradients() {
        let inputs = [rand_t(&[3, 4], 1), rand_t(&[5, 4], 2), rand_t(&[5], 3), rand_t(&[3, 5], 4)];
        fd_check(
            &inputs,
            &|g, v| {
                let y = g.linear(v[0], v[1]);
                let y = g.add_row(y, v[2]);
                let s = g.silu(y);
                let p = g.mul(s, v[3]);
                let z = g.add(p, y);
                let z = g.mask_mul(z, (0..15).map(|i| (i % 3) as f64).collect());
                g.mse(z, vec![0.3; 15])
            },
            1e-7,
        );
    }

    #[test]
    fn rms_norm_and_lora_gradients() {
        let inputs = [rand_t(&[4, 6], 5), rand_t(&[6], 6), rand_t(&[3, 6], 7), rand_t(&[2, 6], 8), rand_t(&[3, 2], 9)];
        fd_check(
            &inputs,
            &|g, v| {
                let z = g.rms_norm(v[0], v[1], 1e-6);
                let w = g.lora_merge(v[2], v[3], v[4], 2.0);
                let y = g.linear(z, w);
                let r = g.rows(y, vec![3, 0, 0]);
                let m = g.mean_rows(r);
                let r = g.reshape(r, &[1, 9]);
                let a = g.mse(r, (0..9).map(|i| i as f64 * 0.1).collect());
                let b = g.mse(m, vec![0.2; 3]);
                g.add(a, b)
            },
            1e-7,
        );
    }

    #[test]
    fn softmax_xent_gradient() {
        let inputs = [rand_t(&[4, 3], 10)];
        fd_check(&inputs, &|g, v| g.softmax_xent(v[0], vec![0, 2, 1, 2]), 1e-7);
    }

    #[test]
    fn contrastive_gradient() {
        let negs: Vec<Vec<Vec<f64>>> =
            (0..3).map(|i| (0..4).map(|j| rand_t(&[5], 100 + i * 10 + j).into_data()).collect()).collect();
        let inputs = [rand_t(&[3, 5], 11), rand_t(&[3, 5], 12)];
        fd_check(
            &inputs,
            &|g, v| g.contrastive(v[0], v[1], vec![(0, 1), (1, 2), (2, 2)], negs.clone(), ContrastiveConfig::default()),
            1e-6,
        );
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(rand_t(&[2, 3], 1));
        let w = g.param(rand_t(&[2, 3], 2));
        let y = g.linear(x, w);
        let l = g.mse(y, vec![0.0; 4]);
        let grads = g.backward(l);
        assert!(grads.get(x).is_none());
        assert!(grads.get(w).is_some());
    }
}

//! Shared forward/backward kernel over already-projected tensors.

use super::mask::in_window;
use super::shift::{channel_column, shift_channel, shift_time, time_column};
use super::{gqa_kv_index, Activation, AttentionConfig, OpCounters};
use crate::tensor::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub times: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
    pub max_times: usize,
    pub max_channels: usize,
}

impl Geometry {
    pub fn cells(&self) -> usize {
        self.channels * self.times
    }

    pub fn q_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn kv_width(&self) -> usize {
        self.kv_heads * self.head_dim
    }

    /// Row of the projected channel codebook for offset `c − c'`.
    fn channel_row(&self, offset: isize) -> usize {
        (self.max_channels as isize - 1 + offset) as usize
    }
}

/// Projected inputs of the attention kernel.
///
/// `q` is `[N × H·d_h]`; `k`, `v` are `[N × G·d_h]`; `time` is the projected
/// time codebook `[T_max × G·d_h]`; `channel` the projected channel codebook
/// `[(2C_max − 1) × G·d_h]`; the three biases are `[G·d_h]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Projected<'a> {
    pub q: &'a [f64],
    pub k: &'a [f64],
    pub v: &'a [f64],
    pub time: &'a [f64],
    pub channel: &'a [f64],
    pub u: &'a [f64],
    pub vt: &'a [f64],
    pub wc: &'a [f64],
}

impl<'a> Projected<'a> {
    #[inline]
    fn q_head(&self, g: &Geometry, cell: usize, h: usize) -> &'a [f64] {
        let o = cell * g.q_width() + h * g.head_dim;
        &self.q[o..o + g.head_dim]
    }

    #[inline]
    fn kv_row(buf: &'a [f64], g: &Geometry, row: usize, grp: usize) -> &'a [f64] {
        let o = row * g.kv_width() + grp * g.head_dim;
        &buf[o..o + g.head_dim]
    }

    #[inline]
    fn bias(buf: &'a [f64], g: &Geometry, grp: usize) -> &'a [f64] {
        &buf[grp * g.head_dim..(grp + 1) * g.head_dim]
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Pairwise time scores `[C × T × T]` and channel scores `[T × C × C]` for one
/// query head, computed once per relative offset and shifted into place.
pub(crate) fn head_tables(
    g: &Geometry,
    p: &Projected<'_>,
    h: usize,
    counters: &mut OpCounters,
) -> (Vec<f64>, Vec<f64>) {
    let (cn, tn) = (g.channels, g.times);
    let grp = gqa_kv_index(h, g.heads, g.kv_heads);
    let vt = Projected::bias(p.vt, g, grp);
    let wc = Projected::bias(p.wc, g, grp);

    let mut raw_time = vec![0.0; cn * tn * tn];
    for c in 0..cn {
        for t in 0..tn {
            let qv = add(p.q_head(g, c * tn + t, h), vt);
            let row = &mut raw_time[(c * tn + t) * tn..(c * tn + t + 1) * tn];
            for off in 0..tn {
                row[time_column(tn, off)] = dot(&qv, Projected::kv_row(p.time, g, off, grp));
            }
        }
    }
    counters.time_dots += (cn * tn * tn) as u64;

    let width = 2 * cn - 1;
    let mut raw_chan = vec![0.0; tn * cn * width];
    for t in 0..tn {
        for c in 0..cn {
            let qw = add(p.q_head(g, c * tn + t, h), wc);
            let row = &mut raw_chan[(t * cn + c) * width..(t * cn + c + 1) * width];
            for off in -(cn as isize - 1)..cn as isize {
                let code = Projected::kv_row(p.channel, g, g.channel_row(off), grp);
                row[channel_column(cn, off)] = dot(&qw, code);
            }
        }
    }
    counters.channel_dots += (tn * cn * width) as u64;

    (shift_time(&raw_time, tn), shift_channel(&raw_chan, cn))
}

/// Writes the combined logits of query `(c, t)` for every causal key into
/// `row` (length `N`), or `None`-marks excluded keys via `allowed`.
#[allow(clippy::too_many_arguments)]
fn query_logits(
    g: &Geometry,
    p: &Projected<'_>,
    cfg: &AttentionConfig,
    keep: Option<&[bool]>,
    h: usize,
    (c, t): (usize, usize),
    time_tab: &[f64],
    chan_tab: &[f64],
    row: &mut [f64],
    allowed: &mut [bool],
    counters: &mut OpCounters,
) {
    let (cn, tn) = (g.channels, g.times);
    let grp = gqa_kv_index(h, g.heads, g.kv_heads);
    let qu = add(p.q_head(g, c * tn + t, h), Projected::bias(p.u, g, grp));
    allowed.iter_mut().for_each(|a| *a = false);
    for ck in 0..cn {
        for tk in 0..=t {
            let key = ck * tn + tk;
            if keep.is_some_and(|m| !m[key]) {
                continue;
            }
            let mut s = time_tab[(c * tn + t) * tn + tk] + chan_tab[(t * cn + c) * cn + ck];
            if in_window(t, tk, cfg.local_window) {
                s += dot(&qu, Projected::kv_row(p.k, g, key, grp));
                counters.content_dots += 1;
            }
            row[key] = s;
            allowed[key] = true;
        }
    }
}

/// Turns one logit row into attention weights in place.
fn activate(row: &mut [f64], allowed: &[bool], cfg: &AttentionConfig) {
    match cfg.activation {
        Activation::Softmax => {
            let mut max = f64::NEG_INFINITY;
            for (&s, &a) in row.iter().zip(allowed) {
                if a {
                    max = max.max(cfg.scale * s);
                }
            }
            if max == f64::NEG_INFINITY {
                row.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let mut sum = 0.0;
            for (s, &a) in row.iter_mut().zip(allowed) {
                *s = if a { (cfg.scale * *s - max).exp() } else { 0.0 };
                sum += *s;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Activation::Sigmoid => {
            for (s, &a) in row.iter_mut().zip(allowed) {
                *s = if a { sigmoid(cfg.scale * *s) } else { 0.0 };
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Attention output `[N × H·d_h]` and weights `[H × N × N]`.
///
/// `keep` masks key cells removed by structured dropout. A query whose keys
/// are all masked produces a zero output row.
pub(crate) fn mvpa_core_forward(
    g: &Geometry,
    p: &Projected<'_>,
    cfg: &AttentionConfig,
    keep: Option<&[bool]>,
    counters: &mut OpCounters,
) -> (Vec<f64>, Vec<f64>) {
    let n = g.cells();
    let dh = g.head_dim;
    let mut out = vec![0.0; n * g.q_width()];
    let mut weights = vec![0.0; g.heads * n * n];
    let mut allowed = vec![false; n];
    for h in 0..g.heads {
        let grp = gqa_kv_index(h, g.heads, g.kv_heads);
        let (time_tab, chan_tab) = head_tables(g, p, h, counters);
        for c in 0..g.channels {
            for t in 0..g.times {
                let qi = c * g.times + t;
                let row = &mut weights[(h * n + qi) * n..(h * n + qi + 1) * n];
                query_logits(g, p, cfg, keep, h, (c, t), &time_tab, &chan_tab, row, &mut allowed, counters);
                activate(row, &allowed, cfg);
                let o = &mut out[qi * g.q_width() + h * dh..qi * g.q_width() + (h + 1) * dh];
                for (key, &a) in row.iter().enumerate() {
                    if allowed[key] && a != 0.0 {
                        axpy(a, Projected::kv_row(p.v, g, key, grp), o);
                    }
                }
            }
        }
    }
    (out, weights)
}

/// Gradients with respect to every [`Projected`] input.
#[derive(Debug, Clone)]
pub(crate) struct CoreGrads {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub time: Vec<f64>,
    pub channel: Vec<f64>,
    pub u: Vec<f64>,
    pub vt: Vec<f64>,
    pub wc: Vec<f64>,
}

/// Reverse pass of [`mvpa_core_forward`] given its attention weights.
pub(crate) fn mvpa_core_backward(
    g: &Geometry,
    p: &Projected<'_>,
    cfg: &AttentionConfig,
    keep: Option<&[bool]>,
    weights: &[f64],
    d_out: &[f64],
) -> CoreGrads {
    let (cn, tn) = (g.channels, g.times);
    let n = g.cells();
    let dh = g.head_dim;
    let mut gr = CoreGrads {
        q: vec![0.0; p.q.len()],
        k: vec![0.0; p.k.len()],
        v: vec![0.0; p.v.len()],
        time: vec![0.0; p.time.len()],
        channel: vec![0.0; p.channel.len()],
        u: vec![0.0; p.u.len()],
        vt: vec![0.0; p.vt.len()],
        wc: vec![0.0; p.wc.len()],
    };
    let kvw = g.kv_width();
    let mut d_logit = vec![0.0; n];
    let mut d_time = vec![0.0; tn];
    let mut d_chan = vec![0.0; 2 * cn - 1];

    for h in 0..g.heads {
        let grp = gqa_kv_index(h, g.heads, g.kv_heads);
        let gs = grp * dh..(grp + 1) * dh;
        let u = Projected::bias(p.u, g, grp);
        let vt = Projected::bias(p.vt, g, grp);
        let wc = Projected::bias(p.wc, g, grp);
        for c in 0..cn {
            for t in 0..tn {
                let qi = c * tn + t;
                let qs = qi * g.q_width() + h * dh..qi * g.q_width() + (h + 1) * dh;
                let dout = &d_out[qs.clone()];
                let row = &weights[(h * n + qi) * n..(h * n + qi + 1) * n];

                // d weights, and value gradients
                let mut weighted = 0.0;
                for ck in 0..cn {
                    for tk in 0..=t {
                        let key = ck * tn + tk;
                        if keep.is_some_and(|m| !m[key]) {
                            d_logit[key] = 0.0;
                            continue;
                        }
                        let a = row[key];
                        let da = dot(dout, Projected::kv_row(p.v, g, key, grp));
                        d_logit[key] = da;
                        weighted += a * da;
                        axpy(a, dout, &mut gr.v[key * kvw + gs.start..key * kvw + gs.end]);
                    }
                }

                let q = p.q_head(g, qi, h);
                let qu = add(q, u);
                d_time.iter_mut().for_each(|v| *v = 0.0);
                d_chan.iter_mut().for_each(|v| *v = 0.0);
                let mut dq = vec![0.0; dh];
                for ck in 0..cn {
                    for tk in 0..=t {
                        let key = ck * tn + tk;
                        if keep.is_some_and(|m| !m[key]) {
                            continue;
                        }
                        let a = row[key];
                        let dz = match cfg.activation {
                            Activation::Softmax => a * (d_logit[key] - weighted),
                            Activation::Sigmoid => d_logit[key] * a * (1.0 - a),
                        };
                        let ds = cfg.scale * dz;
                        if ds == 0.0 {
                            continue;
                        }
                        if in_window(t, tk, cfg.local_window) {
                            let kk = Projected::kv_row(p.k, g, key, grp);
                            axpy(ds, kk, &mut dq);
                            axpy(ds, kk, &mut gr.u[gs.clone()]);
                            axpy(ds, &qu, &mut gr.k[key * kvw + gs.start..key * kvw + gs.end]);
                        }
                        d_time[t - tk] += ds;
                        d_chan[(ck as isize - c as isize + cn as isize - 1) as usize] += ds;
                    }
                }

                let qv = add(q, vt);
                for (off, &dt) in d_time.iter().enumerate().take(t + 1) {
                    if dt == 0.0 {
                        continue;
                    }
                    let code = Projected::kv_row(p.time, g, off, grp);
                    axpy(dt, code, &mut dq);
                    axpy(dt, code, &mut gr.vt[gs.clone()]);
                    let o = off * kvw + gs.start;
                    axpy(dt, &qv, &mut gr.time[o..o + dh]);
                }
                let qw = add(q, wc);
                for (j, &dc) in d_chan.iter().enumerate() {
                    if dc == 0.0 {
                        continue;
                    }
                    // d_chan index j stores offset c − c' = (C − 1) − j
                    let off = cn as isize - 1 - j as isize;
                    let row_idx = g.channel_row(off);
                    let code = Projected::kv_row(p.channel, g, row_idx, grp);
                    axpy(dc, code, &mut dq);
                    axpy(dc, code, &mut gr.wc[gs.clone()]);
                    let o = row_idx * kvw + gs.start;
                    axpy(dc, &qw, &mut gr.channel[o..o + dh]);
                }
                axpy(1.0, &dq, &mut gr.q[qs]);
            }
        }
    }
    gr
}

use super::core::head_tables;
use super::forward::{geometry, project};
use super::mask::{causal_window_mask, in_window};
use super::{gqa_kv_index, AttentionConfig, AttentionLogits, MvpaParams, OpCounters};
use crate::error::Result;
use crate::tensor::{dot, EmbeddingGrid};

fn empty_logits(e: &EmbeddingGrid, heads: usize, window: usize) -> AttentionLogits {
    let n = e.cells();
    let mask = causal_window_mask(e.times(), e.channels(), window);
    AttentionLogits {
        heads,
        channels: e.channels(),
        times: e.times(),
        content: vec![0.0; heads * n * n],
        time: vec![0.0; heads * n * n],
        channel: vec![0.0; heads * n * n],
        combined: vec![f64::NEG_INFINITY; heads * n * n],
        mask: mask.causal,
        content_mask: mask.content,
    }
}

/// `Mᵀ_h · N_g` for row blocks of two stacked projections: a `[d × d]`
/// bilinear form between query head `h` and key group `g`.
fn bilinear(w_left: &[f64], w_right: &[f64], h: usize, grp: usize, dh: usize, d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for k in 0..dh {
        let l = &w_left[(h * dh + k) * d..(h * dh + k + 1) * d];
        let r = &w_right[(grp * dh + k) * d..(grp * dh + k + 1) * d];
        for a in 0..d {
            for b in 0..d {
                m[a * d + b] += l[a] * r[b];
            }
        }
    }
    m
}

/// `Nᵀ_g · bias_g`, a `[d]` vector.
fn bias_form(w: &[f64], bias: &[f64], grp: usize, dh: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for k in 0..dh {
        let r = &w[(grp * dh + k) * d..(grp * dh + k + 1) * d];
        let b = bias[grp * dh + k];
        for a in 0..d {
            out[a] += b * r[a];
        }
    }
    out
}

/// `xᵀ M` for a `[d × d]` form.
fn left_apply(x: &[f64], m: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for a in 0..d {
        for b in 0..d {
            out[b] += x[a] * m[a * d + b];
        }
    }
    out
}

/// Reference logits evaluated pair by pair from the expanded bilinear forms
/// `xᵀ W_qᵀ W_k y + biasᵀ W_k y`, without projections, shifts or
/// broadcasting. Content is evaluated for every causal pair and then
/// zeroed outside the local window.
pub fn naive_mvpa_logits(e: &EmbeddingGrid, params: &MvpaParams, cfg: &AttentionConfig) -> Result<AttentionLogits> {
    params.check_grid(e)?;
    cfg.validate()?;
    let dims = params.dims;
    let (d, dh) = (dims.embed_dim, params.head_dim());
    let (cn, tn) = (e.channels(), e.times());
    let n = e.cells();
    let mut out = empty_logits(e, dims.n_heads, cfg.local_window);

    for h in 0..dims.n_heads {
        let grp = gqa_kv_index(h, dims.n_heads, dims.n_kv_heads);
        let ae = bilinear(params.w_q.data(), params.w_ke.data(), h, grp, dh, d);
        let at = bilinear(params.w_q.data(), params.w_kt.data(), h, grp, dh, d);
        let ac = bilinear(params.w_q.data(), params.w_kc.data(), h, grp, dh, d);
        let be = bias_form(params.w_ke.data(), params.u_content.data(), grp, dh, d);
        let bt = bias_form(params.w_kt.data(), params.v_time.data(), grp, dh, d);
        let bc = bias_form(params.w_kc.data(), params.w_channel.data(), grp, dh, d);
        for c in 0..cn {
            for t in 0..tn {
                let x = e.cell(c, t);
                let xe = left_apply(x, &ae, d);
                let xt = left_apply(x, &at, d);
                let xc = left_apply(x, &ac, d);
                let qi = e.index(c, t);
                for ck in 0..cn {
                    for tk in 0..=t {
                        let y = e.cell(ck, tk);
                        let tcode = params.time_codebook.row(t - tk);
                        let crow = (dims.max_channels as isize - 1 + c as isize - ck as isize) as usize;
                        let ccode = params.channel_codebook.row(crow);
                        let content = dot(&xe, y) + dot(&be, y);
                        let time = dot(&xt, tcode) + dot(&bt, tcode);
                        let channel = dot(&xc, ccode) + dot(&bc, ccode);
                        let idx = (h * n + qi) * n + e.index(ck, tk);
                        let windowed = if in_window(t, tk, cfg.local_window) { content } else { 0.0 };
                        out.content[idx] = windowed;
                        out.time[idx] = time;
                        out.channel[idx] = channel;
                        out.combined[idx] = windowed + time + channel;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Logits via projections, per-offset time/channel tables and the shift
/// re-indexing; content is evaluated only inside the local window.
///
/// `counters` receives `H·C·T²` time dots, `H·T·C·(2C − 1)` channel dots and
/// one content dot per windowed causal pair.
pub fn efficient_mvpa_logits(
    e: &EmbeddingGrid,
    params: &MvpaParams,
    cfg: &AttentionConfig,
    counters: &mut OpCounters,
) -> Result<AttentionLogits> {
    params.check_grid(e)?;
    cfg.validate()?;
    let proj = project(e, params);
    let g = geometry(e, params);
    let p = proj.view();
    let (cn, tn) = (g.channels, g.times);
    let n = g.cells();
    let dh = g.head_dim;
    let mut out = empty_logits(e, g.heads, cfg.local_window);

    for h in 0..g.heads {
        let grp = gqa_kv_index(h, g.heads, g.kv_heads);
        let (time_tab, chan_tab) = head_tables(&g, &p, h, counters);
        let u = &p.u[grp * dh..(grp + 1) * dh];
        for c in 0..cn {
            for t in 0..tn {
                let qi = c * tn + t;
                let qo = qi * g.q_width() + h * dh;
                let qu: Vec<f64> = p.q[qo..qo + dh].iter().zip(u).map(|(a, b)| a + b).collect();
                for ck in 0..cn {
                    // broadcast: time scores ignore c', channel scores ignore t'
                    let ctab = chan_tab[(t * cn + c) * cn + ck];
                    for tk in 0..=t {
                        let key = ck * tn + tk;
                        let idx = (h * n + qi) * n + key;
                        let ttab = time_tab[(c * tn + t) * tn + tk];
                        let content = if in_window(t, tk, cfg.local_window) {
                            counters.content_dots += 1;
                            let ko = key * g.kv_width() + grp * dh;
                            dot(&qu, &p.k[ko..ko + dh])
                        } else {
                            0.0
                        };
                        out.content[idx] = content;
                        out.time[idx] = ttab;
                        out.channel[idx] = ctab;
                        out.combined[idx] = content + ttab + ctab;
                    }
                }
            }
        }
    }
    Ok(out)
}

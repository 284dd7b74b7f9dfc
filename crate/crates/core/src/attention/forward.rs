use super::core::{mvpa_core_forward, Geometry, Projected};
use super::mask::structured_dropout_mask;
use super::{AttentionConfig, MvpaParams, OpCounters};
use crate::error::Result;
use crate::tensor::{matmul_nt, EmbeddingGrid};

/// Projections of one grid through one attention layer.
///
/// `q` is `[N × H·d_h]`, `k`/`v` are `[N × G·d_h]`, `time` is the time
/// codebook through `W_kt` (`[T_max × G·d_h]`) and `channel` the channel
/// codebook through `W_kc` (`[(2·C_max − 1) × G·d_h]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub time: Vec<f64>,
    pub channel: Vec<f64>,
    u: Vec<f64>,
    vt: Vec<f64>,
    wc: Vec<f64>,
}

impl Projections {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        q: Vec<f64>,
        k: Vec<f64>,
        v: Vec<f64>,
        time: Vec<f64>,
        channel: Vec<f64>,
        u: Vec<f64>,
        vt: Vec<f64>,
        wc: Vec<f64>,
    ) -> Self {
        Self { q, k, v, time, channel, u, vt, wc }
    }

    pub(crate) fn view(&self) -> Projected<'_> {
        Projected {
            q: &self.q,
            k: &self.k,
            v: &self.v,
            time: &self.time,
            channel: &self.channel,
            u: &self.u,
            vt: &self.vt,
            wc: &self.wc,
        }
    }
}

/// Projects `e` and both codebooks. The caller is expected to have checked
/// `e` against `params`.
pub fn project(e: &EmbeddingGrid, params: &MvpaParams) -> Projections {
    let d = params.dims.embed_dim;
    let n = e.cells();
    let hd = params.w_q.rows();
    let gd = params.w_ke.rows();
    Projections {
        q: matmul_nt(e.data(), params.w_q.data(), n, d, hd),
        k: matmul_nt(e.data(), params.w_ke.data(), n, d, gd),
        v: matmul_nt(e.data(), params.w_v.data(), n, d, gd),
        time: matmul_nt(params.time_codebook.data(), params.w_kt.data(), params.time_codebook.rows(), d, gd),
        channel: matmul_nt(params.channel_codebook.data(), params.w_kc.data(), params.channel_codebook.rows(), d, gd),
        u: params.u_content.data().to_vec(),
        vt: params.v_time.data().to_vec(),
        wc: params.w_channel.data().to_vec(),
    }
}

pub(super) fn geometry(e: &EmbeddingGrid, params: &MvpaParams) -> Geometry {
    Geometry {
        channels: e.channels(),
        times: e.times(),
        heads: params.dims.n_heads,
        kv_heads: params.dims.n_kv_heads,
        head_dim: params.head_dim(),
        max_times: params.dims.max_times,
        max_channels: params.dims.max_channels,
    }
}

/// Applies one attention layer including the output projection.
///
/// With `dropout_seed` set and a positive dropout rate, whole channels and
/// time steps are removed from the key set using
/// [`structured_dropout_mask`](super::structured_dropout_mask).
pub fn mvpa_forward(
    e: &EmbeddingGrid,
    params: &MvpaParams,
    cfg: &AttentionConfig,
    dropout_seed: Option<u64>,
) -> Result<EmbeddingGrid> {
    let mut counters = OpCounters::default();
    mvpa_forward_counted(e, params, cfg, dropout_seed, &mut counters)
}

/// [`mvpa_forward`] that also tallies the dot products it performs.
pub fn mvpa_forward_counted(
    e: &EmbeddingGrid,
    params: &MvpaParams,
    cfg: &AttentionConfig,
    dropout_seed: Option<u64>,
    counters: &mut OpCounters,
) -> Result<EmbeddingGrid> {
    params.check_grid(e)?;
    cfg.validate()?;
    let keep = match dropout_seed {
        Some(seed) if cfg.dropout_rate > 0.0 => {
            Some(structured_dropout_mask(e.times(), e.channels(), cfg.dropout_rate, seed))
        }
        _ => None,
    };
    let proj = project(e, params);
    let g = geometry(e, params);
    let (heads_out, _) = mvpa_core_forward(&g, &proj.view(), cfg, keep.as_deref(), counters);
    let d = params.dims.embed_dim;
    let out = matmul_nt(&heads_out, params.w_o.data(), g.cells(), g.q_width(), d);
    EmbeddingGrid::from_vec(e.channels(), e.times(), d, out)
}

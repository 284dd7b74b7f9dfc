//! Multi-variate parallel attention.
//!
//! Every query cell `(c, t)` scores every key cell `(c', t')` with the sum of
//! three bilinear terms:
//!
//! ```text
//! content  (q + u)ᵀ W_ke x'          query content vs key content
//! time     (q + v)ᵀ W_kt T[t − t']   query content vs relative time offset
//! channel  (q + w)ᵀ W_kc C[c − c']   query content vs relative channel offset
//! ```
//!
//! where `q = W_q x`. The time term never looks at the key channel and the
//! channel term never looks at the key time, so both are evaluated once per
//! offset and spread over the grid by the shift operations in [`shift`].
//! Content attention is restricted to the last `L` time steps; all terms are
//! causal in time.

mod core;
mod forward;
mod logits;
mod mask;
pub mod shift;

pub(crate) use self::core::{mvpa_core_backward, mvpa_core_forward, sigmoid, Geometry};
pub use self::forward::{mvpa_forward, mvpa_forward_counted, project, Projections};
pub use self::logits::{efficient_mvpa_logits, naive_mvpa_logits};
pub use self::mask::{axis_drop_probability, causal_window_mask, structured_dropout_mask, WindowMask};
pub use self::shift::{corrupt_shift_time, shift_channel, shift_time};

use crate::error::{invalid, shape, Result};
use crate::rng::Rng;
use crate::tensor::{EmbeddingGrid, Tensor};

/// Index of the key/value head shared by query head `h`.
///
/// Consecutive runs of `H / G` query heads share one key/value head.
pub fn gqa_kv_index(h: usize, n_heads: usize, n_kv_heads: usize) -> usize {
    debug_assert!(n_kv_heads > 0 && n_heads.is_multiple_of(n_kv_heads));
    h / (n_heads / n_kv_heads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softmax,
    Sigmoid,
}

impl std::str::FromStr for Activation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "sigmoid" => Ok(Self::Sigmoid),
            _ => Err(invalid(format!("unknown activation {s:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Softmax => "softmax",
            Self::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    /// Content attention sees the `local_window` most recent time steps.
    pub local_window: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    /// Multiplies logits before the activation.
    pub scale: f64,
}

impl AttentionConfig {
    /// Softmax, no dropout, window `local_window` and scale `1/sqrt(d)`.
    pub fn new(embed_dim: usize, local_window: usize) -> Self {
        Self {
            local_window,
            dropout_rate: 0.0,
            activation: Activation::Softmax,
            scale: 1.0 / (embed_dim as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_window == 0 {
            return Err(invalid("local window must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        Ok(())
    }
}

/// Shape of an attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MvpaDims {
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub max_times: usize,
    pub max_channels: usize,
}

impl MvpaDims {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.n_kv_heads == 0 {
            return Err(invalid("head counts must be positive"));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(invalid(format!(
                "{} query heads cannot be grouped over {} key/value heads",
                self.n_heads, self.n_kv_heads
            )));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(invalid(format!("embedding {} is not divisible by {} heads", self.embed_dim, self.n_heads)));
        }
        if self.max_times == 0 || self.max_channels == 0 {
            return Err(invalid("codebook extents must be positive"));
        }
        Ok(())
    }
}

/// Parameters of one attention layer.
///
/// Per-head matrices are stacked along rows: rows `h·d_h .. (h+1)·d_h` of
/// `w_q` belong to query head `h`, and likewise per key/value group for the
/// key, value and bias tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct MvpaParams {
    pub dims: MvpaDims,
    /// `[H·d_h × d]`
    pub w_q: Tensor,
    /// `[G·d_h × d]` key projection for content.
    pub w_ke: Tensor,
    /// `[G·d_h × d]` key projection for the time codebook.
    pub w_kt: Tensor,
    /// `[G·d_h × d]` key projection for the channel codebook.
    pub w_kc: Tensor,
    /// `[G·d_h × d]`
    pub w_v: Tensor,
    /// `[d × H·d_h]`
    pub w_o: Tensor,
    /// `[T_max × d]`, row `k` encodes time offset `t − t' = k`.
    pub time_codebook: Tensor,
    /// `[(2·C_max − 1) × d]`, row `C_max − 1 + δ` encodes `c − c' = δ`.
    pub channel_codebook: Tensor,
    /// `[G × d_h]` content bias (u).
    pub u_content: Tensor,
    /// `[G × d_h]` time bias (v).
    pub v_time: Tensor,
    /// `[G × d_h]` channel bias (w).
    pub w_channel: Tensor,
}

impl MvpaParams {
    /// Gaussian initialisation: projections with `weight_std`, codebooks and
    /// biases with standard deviation 0.02.
    pub fn init(dims: MvpaDims, weight_std: f64, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let d = dims.embed_dim;
        let hd = dims.n_heads * dims.head_dim();
        let gd = dims.n_kv_heads * dims.head_dim();
        Ok(Self {
            dims,
            w_q: Tensor::randn(&[hd, d], weight_std, rng),
            w_ke: Tensor::randn(&[gd, d], weight_std, rng),
            w_kt: Tensor::randn(&[gd, d], weight_std, rng),
            w_kc: Tensor::randn(&[gd, d], weight_std, rng),
            w_v: Tensor::randn(&[gd, d], weight_std, rng),
            w_o: Tensor::randn(&[d, hd], weight_std, rng),
            time_codebook: Tensor::randn(&[dims.max_times, d], 0.02, rng),
            channel_codebook: Tensor::randn(&[2 * dims.max_channels - 1, d], 0.02, rng),
            u_content: Tensor::randn(&[dims.n_kv_heads, dims.head_dim()], 0.02, rng),
            v_time: Tensor::randn(&[dims.n_kv_heads, dims.head_dim()], 0.02, rng),
            w_channel: Tensor::randn(&[dims.n_kv_heads, dims.head_dim()], 0.02, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dims.head_dim()
    }

    /// Checks tensor shapes against `dims`.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let d = self.dims.embed_dim;
        let dh = self.head_dim();
        let hd = self.dims.n_heads * dh;
        let gd = self.dims.n_kv_heads * dh;
        let expect = [
            ("w_q", &self.w_q, [hd, d]),
            ("w_ke", &self.w_ke, [gd, d]),
            ("w_kt", &self.w_kt, [gd, d]),
            ("w_kc", &self.w_kc, [gd, d]),
            ("w_v", &self.w_v, [gd, d]),
            ("w_o", &self.w_o, [d, hd]),
            ("time_codebook", &self.time_codebook, [self.dims.max_times, d]),
            ("channel_codebook", &self.channel_codebook, [2 * self.dims.max_channels - 1, d]),
            ("u_content", &self.u_content, [self.dims.n_kv_heads, dh]),
            ("v_time", &self.v_time, [self.dims.n_kv_heads, dh]),
            ("w_channel", &self.w_channel, [self.dims.n_kv_heads, dh]),
        ];
        for (name, t, s) in expect {
            if t.shape() != s {
                return Err(shape(format!("{name} has shape {:?}, expected {s:?}", t.shape())));
            }
        }
        Ok(())
    }

    pub(crate) fn check_grid(&self, e: &EmbeddingGrid) -> Result<()> {
        self.validate()?;
        if e.dim() != self.dims.embed_dim {
            return Err(shape(format!("embedding dim {} != {}", e.dim(), self.dims.embed_dim)));
        }
        if e.times() > self.dims.max_times || e.channels() > self.dims.max_channels {
            return Err(invalid(format!(
                "grid {}x{} exceeds codebook extents {}x{}",
                e.channels(),
                e.times(),
                self.dims.max_channels,
                self.dims.max_times
            )));
        }
        if e.cells() == 0 {
            return Err(invalid("empty grid"));
        }
        Ok(())
    }

    /// Named views of every tensor, in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &Tensor); 11] {
        [
            ("w_q", &self.w_q),
            ("w_ke", &self.w_ke),
            ("w_kt", &self.w_kt),
            ("w_kc", &self.w_kc),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("time_codebook", &self.time_codebook),
            ("channel_codebook", &self.channel_codebook),
            ("u_content", &self.u_content),
            ("v_time", &self.v_time),
            ("w_channel", &self.w_channel),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 11] {
        [
            ("w_q", &mut self.w_q),
            ("w_ke", &mut self.w_ke),
            ("w_kt", &mut self.w_kt),
            ("w_kc", &mut self.w_kc),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("time_codebook", &mut self.time_codebook),
            ("channel_codebook", &mut self.channel_codebook),
            ("u_content", &mut self.u_content),
            ("v_time", &mut self.v_time),
            ("w_channel", &mut self.w_channel),
        ]
    }
}

/// Per-head logit components for every (query cell, key cell) pair.
///
/// All score tensors are `[H × N × N]` with `N = C·T` cells in channel-major
/// order. Pairs outside `mask` hold 0 in the components and `-inf` in
/// `combined`; the content component is additionally zero outside
/// `content_mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLogits {
    pub heads: usize,
    pub channels: usize,
    pub times: usize,
    pub content: Vec<f64>,
    pub time: Vec<f64>,
    pub channel: Vec<f64>,
    pub combined: Vec<f64>,
    /// `[N × N]` causal support shared by all components.
    pub mask: Vec<bool>,
    /// `[N × N]` causal support restricted to the local window.
    pub content_mask: Vec<bool>,
}

impl AttentionLogits {
    pub fn cells(&self) -> usize {
        self.channels * self.times
    }

    #[inline]
    pub fn index(&self, h: usize, query: usize, key: usize) -> usize {
        let n = self.cells();
        (h * n + query) * n + key
    }
}

/// Dot-product tallies of one efficient evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub content_dots: u64,
    pub time_dots: u64,
    pub channel_dots: u64,
}

impl OpCounters {
    pub fn total(&self) -> u64 {
        self.content_dots + self.time_dots + self.channel_dots
    }
}

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, shape, Error, Result};
use crate::tensor::{matmul_nn, Tensor};

use super::config::ModelConfig;

/// Which attention projection an adapter wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LoraTarget {
    Query,
    Value,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 2] = [LoraTarget::Query, LoraTarget::Value];

    /// Name of the wrapped attention tensor.
    pub fn weight_name(self) -> &'static str {
        match self {
            Self::Query => "w_q",
            Self::Value => "w_v",
        }
    }

    pub(crate) fn key(self) -> &'static str {
        match self {
            Self::Query => "lora_q",
            Self::Value => "lora_v",
        }
    }
}

impl FromStr for LoraTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q_proj" | "q" => Ok(Self::Query),
            "v_proj" | "v" => Ok(Self::Value),
            _ => Err(invalid(format!("unknown LoRA target {s:?}"))),
        }
    }
}

impl fmt::Display for LoraTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Query => "q_proj",
            Self::Value => "v_proj",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 8, alpha: 16.0 }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(invalid("LoRA rank must be at least 1"));
        }
        Ok(())
    }
}

/// Low-rank update `(alpha / rank) · B · A` of one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `[rank × in]`
    pub a: Tensor,
    /// `[out × rank]`, zero at creation.
    pub b: Tensor,
    pub alpha: f64,
    pub target: LoraTarget,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }
}

/// `W + (alpha / rank) · B · A`.
pub fn lora_effective_weight(w: &Tensor, adapter: &LoraAdapter) -> Result<Tensor> {
    let (m, k) = (w.rows(), w.cols());
    let r = adapter.rank();
    if adapter.a.cols() != k || adapter.b.rows() != m || adapter.b.cols() != r {
        return Err(shape(format!(
            "adapter A {:?}, B {:?} do not fit weight {:?}",
            adapter.a.shape(),
            adapter.b.shape(),
            w.shape()
        )));
    }
    let s = adapter.scale();
    let ba = matmul_nn(adapter.b.data(), adapter.a.data(), m, r, k);
    let out = w.data().iter().zip(&ba).map(|(wv, d)| wv + s * d).collect();
    Tensor::from_vec(w.shape(), out)
}

/// Adapter parameters added to `cfg` by rank-`lora.rank` adapters on the
/// query and value projections of every layer.
pub fn lora_census(cfg: &ModelConfig, lora: &LoraConfig) -> usize {
    let d = cfg.embed_dim;
    let q_out = cfg.n_heads * cfg.head_dim();
    let v_out = cfg.n_kv_heads * cfg.head_dim();
    cfg.n_layers * lora.rank * ((d + q_out) + (d + v_out))
}

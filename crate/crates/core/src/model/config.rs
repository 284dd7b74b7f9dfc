use std::fmt;
use std::str::FromStr;

use crate::attention::{Activation, AttentionConfig, MvpaDims};
use crate::error::{invalid, Error, Result};
use crate::wavelet::max_level;

/// How the MLP combines its two inner branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpVariant {
    /// `W_s (W_u z + silu(W_g z))`
    Sum,
    /// `W_s (W_u z ⊙ silu(W_g z))`, the usual gated unit.
    Gated,
}

impl FromStr for MlpVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "gated" => Ok(Self::Gated),
            _ => Err(invalid(format!("unknown mlp variant {s:?}"))),
        }
    }
}

impl fmt::Display for MlpVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::Gated => "gated",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub embed_dim: usize,
    pub n_inner: usize,
    pub dropout: f64,
    pub local_window: usize,
    pub segment_samples: usize,
    pub wavelet_level: usize,
    pub max_times: usize,
    pub max_channels: usize,
    pub activation: Activation,
    pub mlp: MlpVariant,
    /// Standard deviation of decoder weight initialisation.
    pub init_std: f64,
}

impl ModelConfig {
    /// Desk-scale profile used by tests and the quickstart.
    pub fn toy() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            n_kv_heads: 2,
            embed_dim: 32,
            n_inner: 72,
            dropout: 0.1,
            local_window: 4,
            segment_samples: 64,
            wavelet_level: 3,
            max_times: 16,
            max_channels: 8,
            activation: Activation::Softmax,
            mlp: MlpVariant::Sum,
            init_std: 0.1,
        }
    }

    /// The 75M-parameter configuration (5 s segments at 512 Hz).
    pub fn small() -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            n_kv_heads: 4,
            embed_dim: 768,
            n_inner: 1728,
            dropout: 0.1,
            local_window: 10,
            segment_samples: 2560,
            wavelet_level: 8,
            max_times: 100,
            max_channels: 128,
            activation: Activation::Softmax,
            mlp: MlpVariant::Sum,
            init_std: 0.02,
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "small" => Ok(Self::small()),
            _ => Err(invalid(format!("unknown profile {name:?} (expected toy or small)"))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn attention_dims(&self) -> MvpaDims {
        MvpaDims {
            embed_dim: self.embed_dim,
            n_heads: self.n_heads,
            n_kv_heads: self.n_kv_heads,
            max_times: self.max_times,
            max_channels: self.max_channels,
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            local_window: self.local_window,
            dropout_rate: self.dropout,
            activation: self.activation,
            scale: 1.0 / (self.embed_dim as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention_dims().validate()?;
        self.attention().validate()?;
        if self.n_inner == 0 || self.embed_dim == 0 {
            return Err(invalid("embedding and inner widths must be positive"));
        }
        if self.segment_samples == 0 {
            return Err(invalid("segments must hold samples"));
        }
        let admissible = max_level(self.segment_samples);
        if self.wavelet_level > admissible {
            return Err(invalid(format!(
                "wavelet level {} exceeds the admissible {admissible} for {} samples",
                self.wavelet_level, self.segment_samples
            )));
        }
        if !(self.init_std > 0.0) {
            return Err(invalid("init_std must be positive"));
        }
        Ok(())
    }

    /// Sets one `key=value` field. Returns `Ok(false)` for keys that do not
    /// belong to the model so callers can route them elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| invalid(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "n_layers" => self.n_layers = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "n_kv_heads" => self.n_kv_heads = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "n_inner" => self.n_inner = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "local_window" => self.local_window = num(key, value)?,
            "segment_samples" => self.segment_samples = num(key, value)?,
            "wavelet_level" => self.wavelet_level = num(key, value)?,
            "max_times" => self.max_times = num(key, value)?,
            "max_channels" => self.max_channels = num(key, value)?,
            "activation" => self.activation = value.parse()?,
            "mlp" => self.mlp = value.parse()?,
            "init_std" => self.init_std = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every field as `(key, value)`, in a fixed order; [`set`](Self::set)
    /// accepts each pair back.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_layers", self.n_layers.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_kv_heads", self.n_kv_heads.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("n_inner", self.n_inner.to_string()),
            ("dropout", self.dropout.to_string()),
            ("local_window", self.local_window.to_string()),
            ("segment_samples", self.segment_samples.to_string()),
            ("wavelet_level", self.wavelet_level.to_string()),
            ("max_times", self.max_times.to_string()),
            ("max_channels", self.max_channels.to_string()),
            ("activation", self.activation.to_string()),
            ("mlp", self.mlp.to_string()),
            ("init_std", self.init_std.to_string()),
        ]
    }
}

/// Parameter counts by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    pub encoder: usize,
    pub attention_per_layer: usize,
    pub codebooks_per_layer: usize,
    pub mlp_per_layer: usize,
    pub norm_per_layer: usize,
    pub layers: usize,
}

impl Census {
    pub fn per_layer(&self) -> usize {
        self.attention_per_layer + self.codebooks_per_layer + self.mlp_per_layer + self.norm_per_layer
    }

    pub fn total(&self) -> usize {
        self.encoder + self.layers * self.per_layer()
    }
}

/// Parameter count of the base model (no heads, no adapters).
///
/// ```text
/// encoder     d·S + d
/// attention   H·dh·d (q) + 4·G·dh·d (content/time/channel keys, values)
///             + d·H·dh (output) + 3·G·dh (biases)
/// codebooks   (T_max + 2·C_max − 1)·d
/// mlp         3·d·n_inner
/// norm        d
/// ```
pub fn census(cfg: &ModelConfig) -> Census {
    let d = cfg.embed_dim;
    let hd = cfg.n_heads * cfg.head_dim();
    let gd = cfg.n_kv_heads * cfg.head_dim();
    Census {
        encoder: d * cfg.segment_samples + d,
        attention_per_layer: hd * d + 4 * gd * d + d * hd + 3 * gd,
        codebooks_per_layer: (cfg.max_times + 2 * cfg.max_channels - 1) * d,
        mlp_per_layer: 3 * d * cfg.n_inner,
        norm_per_layer: d,
        layers: cfg.n_layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        ModelConfig::toy().validate().unwrap();
        ModelConfig::small().validate().unwrap();
        assert!(ModelConfig::profile("huge").is_err());
    }

    #[test]
    fn small_census_near_75m() {
        let c = census(&ModelConfig::small());
        // hand count: encoder 768·2560 + 768; per layer 1,966,080 attention
        // weights + 768 biases, 272,640 codebooks, 3,981,312 mlp, 768 norm
        assert_eq!(c.encoder, 1_966_848);
        assert_eq!(c.per_layer(), 6_221_568);
        assert_eq!(c.total(), 1_966_848 + 12 * 6_221_568);
        let rel = (c.total() as f64 - 75e6).abs() / 75e6;
        assert!(rel < 0.1, "{}", c.total());
    }

    #[test]
    fn pairs_round_trip() {
        let mut cfg = ModelConfig::toy();
        cfg.mlp = MlpVariant::Gated;
        cfg.activation = Activation::Sigmoid;
        cfg.dropout = 0.25;
        let mut back = ModelConfig::small();
        for (k, v) in cfg.pairs() {
            assert!(back.set(k, &v).unwrap());
        }
        assert_eq!(back, cfg);
        assert!(!back.set("steps", "3").unwrap());
        assert!(back.set("n_layers", "x").is_err());
    }

    #[test]
    fn rejects_excess_wavelet_level() {
        let cfg = ModelConfig { wavelet_level: 4, ..ModelConfig::toy() };
        assert!(cfg.validate().is_err());
    }
}

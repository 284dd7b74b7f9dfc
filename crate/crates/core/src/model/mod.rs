//! Encoder, decoder stack, task heads and low-rank adapters.
//!
//! Parameters live in one name-keyed store so that optimisers, checkpoints
//! and gradient checks can treat them uniformly:
//!
//! ```text
//! encoder.projection, encoder.bias
//! layers.{l}.norm                    rms-norm gain
//! layers.{l}.attn.{w_q, w_ke, ...}   see MvpaParams
//! layers.{l}.mlp.{w_u, w_g, w_s}
//! layers.{l}.lora_q.{a, b}           optional adapters
//! layers.{l}.lora_v.{a, b}
//! head.classify.{weight, bias}       optional heads
//! head.forecast.{weight, bias}
//! ```

mod checkpoint;
mod config;
mod heads;
mod lora;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{census, Census, MlpVariant, ModelConfig};
pub use heads::{classify_head, forecast_head, head_input, softmax, ClassifyMode};
pub use lora::{lora_census, lora_effective_weight, LoraAdapter, LoraConfig, LoraTarget};

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::attention::{structured_dropout_mask, Geometry, MvpaParams};
use crate::autodiff::{Graph, MvpaVars, Var};
use crate::error::{invalid, shape, Result};
use crate::rng;
use crate::series::SegmentGrid;
use crate::tensor::{matmul_nt, EmbeddingGrid, Tensor};
use crate::wavelet::{wavelet_features, DEFAULT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierSpec {
    pub mode: ClassifyMode,
    pub classes: usize,
    /// Channel count the concatenating head was built for.
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
    lora: Option<LoraConfig>,
    classifier: Option<ClassifierSpec>,
    forecast_horizon: Option<usize>,
}

/// Graph variables of every parameter of one model.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Outputs of one forward pass on the graph.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Encoder embeddings `[C·T × d]`.
    pub embeddings: Var,
    /// Decoder output `[C·T × d]`; row `(c, t)` predicts `(c, t + 1)`.
    pub output: Var,
    pub channels: usize,
    pub times: usize,
}

fn attn_key(l: usize, name: &str) -> String {
    format!("layers.{l}.attn.{name}")
}

/// `W_s (W_u z ∘ silu(W_g z))` row by row, with `∘` the sum or the product.
pub fn mlp_block(z: &Tensor, w_u: &Tensor, w_g: &Tensor, w_s: &Tensor, variant: MlpVariant) -> Result<Tensor> {
    let (n, d) = (z.rows(), z.cols());
    let inner = w_u.rows();
    if w_u.cols() != d || w_g.shape() != w_u.shape() || w_s.rows() != d || w_s.cols() != inner {
        return Err(shape("mlp weights do not fit the input width"));
    }
    let u = matmul_nt(z.data(), w_u.data(), n, d, inner);
    let g = matmul_nt(z.data(), w_g.data(), n, d, inner);
    let h: Vec<f64> = u
        .iter()
        .zip(&g)
        .map(|(a, b)| {
            let s = b * crate::attention::sigmoid(*b);
            match variant {
                MlpVariant::Sum => a + s,
                MlpVariant::Gated => a * s,
            }
        })
        .collect();
    Tensor::from_vec(&[n, d], matmul_nt(&h, w_s.data(), n, inner, d))
}

impl Model {
    /// A freshly initialised base model.
    ///
    /// Encoder weights are Gaussian with std `1/sqrt(S)` so embeddings start
    /// at unit scale; decoder weights use `init_std`, codebooks and attention
    /// biases 0.02, norm gains 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let d = config.embed_dim;
        let s = config.segment_samples;
        let mut params = BTreeMap::new();
        params.insert("encoder.projection".into(), Tensor::randn(&[d, s], 1.0 / (s as f64).sqrt(), &mut r));
        params.insert("encoder.bias".into(), Tensor::zeros(&[d]));
        for l in 0..config.n_layers {
            params.insert(format!("layers.{l}.norm"), Tensor::filled(&[d], 1.0));
            let attn = MvpaParams::init(config.attention_dims(), config.init_std, &mut r)?;
            for (name, t) in attn.tensors() {
                params.insert(attn_key(l, name), t.clone());
            }
            let inner = config.n_inner;
            params.insert(format!("layers.{l}.mlp.w_u"), Tensor::randn(&[inner, d], config.init_std, &mut r));
            params.insert(format!("layers.{l}.mlp.w_g"), Tensor::randn(&[inner, d], config.init_std, &mut r));
            params.insert(format!("layers.{l}.mlp.w_s"), Tensor::randn(&[d, inner], config.init_std, &mut r));
        }
        Ok(Self { config, params, lora: None, classifier: None, forecast_horizon: None })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        params: BTreeMap<String, Tensor>,
        lora: Option<LoraConfig>,
        classifier: Option<ClassifierSpec>,
        forecast_horizon: Option<usize>,
    ) -> Result<Self> {
        config.validate()?;
        let m = Self { config, params, lora, classifier, forecast_horizon };
        let fresh = Self::new(m.config.clone(), 0)?;
        for (name, t) in &fresh.params {
            match m.params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => return Err(shape(format!("{name} has shape {:?}, expected {:?}", p.shape(), t.shape()))),
                None => return Err(invalid(format!("missing parameter {name}"))),
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn lora(&self) -> Option<&LoraConfig> {
        self.lora.as_ref()
    }

    pub fn classifier(&self) -> Option<&ClassifierSpec> {
        self.classifier.as_ref()
    }

    pub fn forecast_horizon(&self) -> Option<usize> {
        self.forecast_horizon
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    /// Total number of scalars, optionally restricted by a name filter.
    pub fn count_params(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.params.iter().filter(|(k, _)| filter(k)).map(|(_, t)| t.len()).sum()
    }

    /// Whether a name belongs to the base model (not an adapter or head).
    pub fn is_base_param(name: &str) -> bool {
        !name.contains(".lora_") && !name.starts_with("head.")
    }

    /// Whether a parameter is updated during fine-tuning.
    pub fn is_finetune_param(name: &str) -> bool {
        !Self::is_base_param(name)
    }

    /// Attention parameters of layer `l` as a standalone record.
    pub fn layer_attention(&self, l: usize) -> Result<MvpaParams> {
        if l >= self.config.n_layers {
            return Err(invalid(format!("layer {l} of {}", self.config.n_layers)));
        }
        let get = |n: &str| self.params[&attn_key(l, n)].clone();
        let p = MvpaParams {
            dims: self.config.attention_dims(),
            w_q: get("w_q"),
            w_ke: get("w_ke"),
            w_kt: get("w_kt"),
            w_kc: get("w_kc"),
            w_v: get("w_v"),
            w_o: get("w_o"),
            time_codebook: get("time_codebook"),
            channel_codebook: get("channel_codebook"),
            u_content: get("u_content"),
            v_time: get("v_time"),
            w_channel: get("w_channel"),
        };
        p.validate()?;
        Ok(p)
    }

    /// Adds rank-`cfg.rank` adapters on the query and value projections of
    /// every layer: `A` Gaussian with std `1/sqrt(d)`, `B` zero.
    pub fn attach_lora(&mut self, cfg: LoraConfig, seed: u64) -> Result<()> {
        cfg.validate()?;
        let mut r = rng::stream(seed, 0x10A);
        let d = self.config.embed_dim;
        for l in 0..self.config.n_layers {
            for target in LoraTarget::ALL {
                let out = self.params[&attn_key(l, target.weight_name())].rows();
                let base = format!("layers.{l}.{}", target.key());
                self.params.insert(format!("{base}.a"), Tensor::randn(&[cfg.rank, d], 1.0 / (d as f64).sqrt(), &mut r));
                self.params.insert(format!("{base}.b"), Tensor::zeros(&[out, cfg.rank]));
            }
        }
        self.lora = Some(cfg);
        Ok(())
    }

    /// Adapter of one layer and target, if attached.
    pub fn lora_adapter(&self, l: usize, target: LoraTarget) -> Option<LoraAdapter> {
        let cfg = self.lora?;
        let base = format!("layers.{l}.{}", target.key());
        Some(LoraAdapter {
            a: self.params.get(&format!("{base}.a"))?.clone(),
            b: self.params.get(&format!("{base}.b"))?.clone(),
            alpha: cfg.alpha,
            target,
        })
    }

    /// Adds a zero-initialised linear classification head.
    pub fn attach_classifier(&mut self, mode: ClassifyMode, classes: usize, channels: usize) -> Result<()> {
        if classes < 2 {
            return Err(invalid("a classifier needs at least two classes"));
        }
        let width = match mode {
            ClassifyMode::ChannelMean => self.config.embed_dim,
            ClassifyMode::ChannelConcat => channels * self.config.embed_dim,
        };
        self.params.insert("head.classify.weight".into(), Tensor::zeros(&[classes, width]));
        self.params.insert("head.classify.bias".into(), Tensor::zeros(&[classes]));
        self.classifier = Some(ClassifierSpec { mode, classes, channels });
        Ok(())
    }

    /// Adds a zero-initialised per-channel forecasting head.
    pub fn attach_forecaster(&mut self, horizon: usize) -> Result<()> {
        if horizon == 0 {
            return Err(invalid("forecast horizon must be at least 1"));
        }
        let d = self.config.embed_dim;
        self.params.insert("head.forecast.weight".into(), Tensor::zeros(&[horizon, d]));
        self.params.insert("head.forecast.bias".into(), Tensor::zeros(&[horizon]));
        self.forecast_horizon = Some(horizon);
        Ok(())
    }

    /// Places every parameter on `g`; `trainable` selects the ones that
    /// receive gradients.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) { g.param(t.clone()) } else { g.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    fn check_grid(&self, grid: &SegmentGrid) -> Result<()> {
        let cfg = &self.config;
        if grid.samples != cfg.segment_samples {
            return Err(shape(format!(
                "segments hold {} samples, model expects {}",
                grid.samples, cfg.segment_samples
            )));
        }
        if grid.channels == 0 || grid.times == 0 {
            return Err(invalid("empty window"));
        }
        if grid.times > cfg.max_times || grid.channels > cfg.max_channels {
            return Err(invalid(format!(
                "window {}x{} exceeds the model's {}x{} (channels x times)",
                grid.channels, grid.times, cfg.max_channels, cfg.max_times
            )));
        }
        Ok(())
    }

    /// Encoder on the graph: `projection · features + bias`, `[C·T × d]`.
    pub fn encode_graph(&self, g: &mut Graph, b: &Bound, grid: &SegmentGrid) -> Result<Var> {
        self.check_grid(grid)?;
        let feats = g.constant(wavelet_features(grid, self.config.wavelet_level)?);
        let e = g.linear(feats, b.var("encoder.projection"));
        Ok(g.add_row(e, b.var("encoder.bias")))
    }

    fn projection(&self, g: &mut Graph, b: &Bound, l: usize, target: LoraTarget) -> Var {
        let w = b.var(&attn_key(l, target.weight_name()));
        let base = format!("layers.{l}.{}", target.key());
        match (self.lora, b.get(&format!("{base}.a")), b.get(&format!("{base}.b"))) {
            (Some(cfg), Some(a), Some(bb)) => g.lora_merge(w, a, bb, cfg.scale()),
            _ => w,
        }
    }

    /// One parallel decoder block: `o + dropout(W_o · mvpa(z)) + mlp(z)` with
    /// `z = rmsnorm(o)`. With `dropout_seed` set, structured dropout acts on
    /// the attention keys and inverted dropout on the attention branch.
    pub fn decoder_block_graph(
        &self,
        g: &mut Graph,
        b: &Bound,
        l: usize,
        o: Var,
        (channels, times): (usize, usize),
        dropout_seed: Option<u64>,
    ) -> Var {
        let cfg = &self.config;
        let z = g.rms_norm(o, b.var(&format!("layers.{l}.norm")), DEFAULT_EPS);
        let vars = MvpaVars {
            w_q: self.projection(g, b, l, LoraTarget::Query),
            w_ke: b.var(&attn_key(l, "w_ke")),
            w_kt: b.var(&attn_key(l, "w_kt")),
            w_kc: b.var(&attn_key(l, "w_kc")),
            w_v: self.projection(g, b, l, LoraTarget::Value),
            time_codebook: b.var(&attn_key(l, "time_codebook")),
            channel_codebook: b.var(&attn_key(l, "channel_codebook")),
            u_content: b.var(&attn_key(l, "u_content")),
            v_time: b.var(&attn_key(l, "v_time")),
            w_channel: b.var(&attn_key(l, "w_channel")),
        };
        let geometry = Geometry {
            channels,
            times,
            heads: cfg.n_heads,
            kv_heads: cfg.n_kv_heads,
            head_dim: cfg.head_dim(),
            max_times: cfg.max_times,
            max_channels: cfg.max_channels,
        };
        let training = dropout_seed.filter(|_| cfg.dropout > 0.0);
        let keep =
            training.map(|s| structured_dropout_mask(times, channels, cfg.dropout, rng::derive(s, 2 * l as u64)));
        let heads = g.mvpa(z, vars, geometry, cfg.attention(), keep);
        let mut attn = g.linear(heads, b.var(&attn_key(l, "w_o")));
        if let Some(s) = training {
            let mut r = rng::seeded(rng::derive(s, 2 * l as u64 + 1));
            let keep_scale = 1.0 / (1.0 - cfg.dropout);
            let len = g.value(attn).len();
            let mask = (0..len).map(|_| if r.random::<f64>() < cfg.dropout { 0.0 } else { keep_scale }).collect();
            attn = g.mask_mul(attn, mask);
        }
        let u = g.linear(z, b.var(&format!("layers.{l}.mlp.w_u")));
        let gate = g.linear(z, b.var(&format!("layers.{l}.mlp.w_g")));
        let gate = g.silu(gate);
        let inner = match cfg.mlp {
            MlpVariant::Sum => g.add(u, gate),
            MlpVariant::Gated => g.mul(u, gate),
        };
        let mlp = g.linear(inner, b.var(&format!("layers.{l}.mlp.w_s")));
        let out = g.add(o, attn);
        g.add(out, mlp)
    }

    /// Encoder followed by every decoder block.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        b: &Bound,
        grid: &SegmentGrid,
        dropout_seed: Option<u64>,
    ) -> Result<ForwardVars> {
        let embeddings = self.encode_graph(g, b, grid)?;
        let mut o = embeddings;
        for l in 0..self.config.n_layers {
            let seed = dropout_seed.map(|s| rng::derive(s, l as u64));
            o = self.decoder_block_graph(g, b, l, o, (grid.channels, grid.times), seed);
        }
        Ok(ForwardVars { embeddings, output: o, channels: grid.channels, times: grid.times })
    }

    /// Class logits `[1 × K]` from a forward pass.
    pub fn classify_graph(&self, g: &mut Graph, b: &Bound, fwd: &ForwardVars) -> Result<Var> {
        let spec = self.classifier.ok_or_else(|| invalid("model has no classification head"))?;
        let last: Vec<usize> = (0..fwd.channels).map(|c| c * fwd.times + fwd.times - 1).collect();
        let rows = g.rows(fwd.output, last);
        let x = match spec.mode {
            ClassifyMode::ChannelMean => g.mean_rows(rows),
            ClassifyMode::ChannelConcat => {
                if fwd.channels != spec.channels {
                    return Err(invalid(format!(
                        "concatenating head built for {} channels, window has {}",
                        spec.channels, fwd.channels
                    )));
                }
                g.reshape(rows, &[1, fwd.channels * self.config.embed_dim])
            }
        };
        let y = g.linear(x, b.var("head.classify.weight"));
        Ok(g.add_row(y, b.var("head.classify.bias")))
    }

    /// Per-channel forecast `[C × horizon]` from a forward pass.
    pub fn forecast_graph(&self, g: &mut Graph, b: &Bound, fwd: &ForwardVars) -> Result<Var> {
        if self.forecast_horizon.is_none() {
            return Err(invalid("model has no forecasting head"));
        }
        let last: Vec<usize> = (0..fwd.channels).map(|c| c * fwd.times + fwd.times - 1).collect();
        let rows = g.rows(fwd.output, last);
        let y = g.linear(rows, b.var("head.forecast.weight"));
        Ok(g.add_row(y, b.var("head.forecast.bias")))
    }

    fn grid_of(g: &Graph, v: Var, channels: usize, times: usize) -> Result<EmbeddingGrid> {
        EmbeddingGrid::from_tensor(channels, times, g.value(v).clone())
    }

    /// Encoder embeddings of a window.
    pub fn encode(&self, grid: &SegmentGrid) -> Result<EmbeddingGrid> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let e = self.encode_graph(&mut g, &b, grid)?;
        Self::grid_of(&g, e, grid.channels, grid.times)
    }

    /// Inference: decoder output for every cell.
    pub fn forward(&self, grid: &SegmentGrid) -> Result<EmbeddingGrid> {
        Ok(self.forward_with_embeddings(grid)?.1)
    }

    /// Inference returning `(embeddings, output)`.
    pub fn forward_with_embeddings(&self, grid: &SegmentGrid) -> Result<(EmbeddingGrid, EmbeddingGrid)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let f = self.forward_graph(&mut g, &b, grid, None)?;
        Ok((
            Self::grid_of(&g, f.embeddings, grid.channels, grid.times)?,
            Self::grid_of(&g, f.output, grid.channels, grid.times)?,
        ))
    }

    /// One decoder block applied to an embedding grid.
    pub fn decoder_block(&self, l: usize, e: &EmbeddingGrid, dropout_seed: Option<u64>) -> Result<EmbeddingGrid> {
        if l >= self.config.n_layers {
            return Err(invalid(format!("layer {l} of {}", self.config.n_layers)));
        }
        if e.dim() != self.config.embed_dim {
            return Err(shape(format!("embedding width {} != {}", e.dim(), self.config.embed_dim)));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let o = g.constant(e.to_tensor());
        let out = self.decoder_block_graph(&mut g, &b, l, o, (e.channels(), e.times()), dropout_seed);
        Self::grid_of(&g, out, e.channels(), e.times())
    }

    /// Class probabilities of one window.
    pub fn classify(&self, grid: &SegmentGrid) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let f = self.forward_graph(&mut g, &b, grid, None)?;
        let logits = self.classify_graph(&mut g, &b, &f)?;
        Ok(softmax(g.value(logits).data()))
    }

    /// Forecast `[C × horizon]` of one window (in the window's units).
    pub fn forecast(&self, grid: &SegmentGrid) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let f = self.forward_graph(&mut g, &b, grid, None)?;
        let y = self.forecast_graph(&mut g, &b, &f)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{mvpa_forward, AttentionConfig};
    use crate::wavelet::{encode, EncoderParams};

    fn toy_grid(c: usize, t: usize, seed: u64) -> SegmentGrid {
        let mut r = rng::seeded(seed);
        let cells = (0..c * t * 64).map(|_| r.random_range(-1.0..1.0)).collect();
        SegmentGrid::new(c, t, 64, cells).unwrap()
    }

    #[test]
    fn toy_forward_is_finite_and_deterministic() {
        let m = Model::new(ModelConfig::toy(), 1).unwrap();
        let grid = toy_grid(4, 10, 2);
        let a = m.forward(&grid).unwrap();
        assert!(a.data().iter().all(|v| v.is_finite()));
        assert_eq!(a, Model::new(ModelConfig::toy(), 1).unwrap().forward(&grid).unwrap());
    }

    #[test]
    fn zero_layers_is_encoder() {
        let cfg = ModelConfig { n_layers: 0, ..ModelConfig::toy() };
        let m = Model::new(cfg, 3).unwrap();
        let grid = toy_grid(2, 3, 4);
        let enc = encode(
            &grid,
            &EncoderParams {
                projection: m.param("encoder.projection").unwrap().clone(),
                bias: m.param("encoder.bias").unwrap().data().to_vec(),
                level: 3,
            },
        )
        .unwrap();
        assert_eq!(m.forward(&grid).unwrap(), enc);
    }

    #[test]
    fn zero_branches_make_identity_block() {
        let mut m = Model::new(ModelConfig::toy(), 5).unwrap();
        for name in ["attn.w_o", "mlp.w_s"] {
            m.param_mut(&format!("layers.0.{name}")).unwrap().data_mut().fill(0.0);
        }
        let e = EmbeddingGrid::random(3, 4, 32, 1.0, &mut rng::seeded(6));
        assert_eq!(m.decoder_block(0, &e, None).unwrap(), e);
    }

    #[test]
    fn block_matches_composition() {
        let m = Model::new(ModelConfig::toy(), 7).unwrap();
        let e = EmbeddingGrid::random(3, 5, 32, 1.0, &mut rng::seeded(8));
        let gain = m.param("layers.1.norm").unwrap().data().to_vec();
        let z: Vec<f64> =
            e.data().chunks(32).flat_map(|row| crate::wavelet::rms_norm(row, &gain, DEFAULT_EPS)).collect();
        let zg = EmbeddingGrid::from_vec(3, 5, 32, z.clone()).unwrap();
        let attn_cfg = AttentionConfig::new(32, 4);
        let attn = mvpa_forward(&zg, &m.layer_attention(1).unwrap(), &attn_cfg, None).unwrap();
        let p = |n: &str| m.param(&format!("layers.1.mlp.{n}")).unwrap();
        let mlp =
            mlp_block(&Tensor::from_vec(&[15, 32], z).unwrap(), p("w_u"), p("w_g"), p("w_s"), MlpVariant::Sum).unwrap();
        let got = m.decoder_block(1, &e, None).unwrap();
        for i in 0..e.data().len() {
            let want = e.data()[i] + attn.data()[i] + mlp.data()[i];
            assert!((got.data()[i] - want).abs() < 1e-8);
        }
    }

    #[test]
    fn mlp_matches_scalar_loops() {
        let mut r = rng::seeded(9);
        let (n, d, k) = (3, 4, 5);
        let z = Tensor::randn(&[n, d], 1.0, &mut r);
        let wu = Tensor::randn(&[k, d], 1.0, &mut r);
        let wg = Tensor::randn(&[k, d], 1.0, &mut r);
        let ws = Tensor::randn(&[d, k], 1.0, &mut r);
        for variant in [MlpVariant::Sum, MlpVariant::Gated] {
            let got = mlp_block(&z, &wu, &wg, &ws, variant).unwrap();
            for i in 0..n {
                let mut h = vec![0.0; k];
                for (j, hj) in h.iter_mut().enumerate() {
                    let (mut u, mut g) = (0.0, 0.0);
                    for a in 0..d {
                        u += wu.data()[j * d + a] * z.data()[i * d + a];
                        g += wg.data()[j * d + a] * z.data()[i * d + a];
                    }
                    let s = g / (1.0 + (-g).exp());
                    *hj = if variant == MlpVariant::Sum { u + s } else { u * s };
                }
                for a in 0..d {
                    let want: f64 = (0..k).map(|j| ws.data()[a * k + j] * h[j]).sum();
                    assert!((got.data()[i * d + a] - want).abs() < 1e-10);
                }
            }
        }
        assert!(mlp_block(&Tensor::zeros(&[2, d]), &wu, &wg, &ws, MlpVariant::Sum)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn lora_at_init_is_bitwise_noop() {
        let base = Model::new(ModelConfig::toy(), 11).unwrap();
        let mut tuned = base.clone();
        tuned.attach_lora(LoraConfig::default(), 12).unwrap();
        let grid = toy_grid(3, 6, 13);
        assert_eq!(base.forward(&grid).unwrap(), tuned.forward(&grid).unwrap());
    }

    #[test]
    fn future_perturbation_leaves_past_unchanged() {
        let m = Model::new(ModelConfig::toy(), 14).unwrap();
        let grid = toy_grid(3, 8, 15);
        let base = m.forward(&grid).unwrap();
        let mut g2 = grid.clone();
        g2.segment_mut(1, 5).iter_mut().for_each(|v| *v += 0.7);
        let pert = m.forward(&g2).unwrap();
        for c in 0..3 {
            for t in 0..8 {
                assert_eq!(base.cell(c, t) == pert.cell(c, t), t < 5, "cell ({c},{t})");
            }
        }
    }

    #[test]
    fn heads_attach_and_run() {
        let mut m = Model::new(ModelConfig::toy(), 16).unwrap();
        m.attach_classifier(ClassifyMode::ChannelMean, 2, 4).unwrap();
        m.attach_forecaster(5).unwrap();
        let grid = toy_grid(4, 3, 17);
        assert_eq!(m.classify(&grid).unwrap(), vec![0.5, 0.5]);
        assert_eq!(m.forecast(&grid).unwrap().shape(), &[4, 5]);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let m = Model::new(ModelConfig::toy(), 0).unwrap();
        assert!(m.forward(&toy_grid(9, 2, 0)).is_err());
        assert!(m.forward(&SegmentGrid::new(1, 1, 32, vec![0.0; 32]).unwrap()).is_err());
    }
}

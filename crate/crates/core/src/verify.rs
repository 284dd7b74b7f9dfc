//! The invariant battery behind the `verify` command.
//!
//! Every check is a plain function returning an [`Outcome`] so that tests
//! can call them individually with larger budgets. [`run_battery`] runs the
//! whole list once, in the order of [`CHECKS`].

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;

use crate::attention::{
    axis_drop_probability, efficient_mvpa_logits, naive_mvpa_logits, shift_channel, shift_time,
    structured_dropout_mask, AttentionConfig, AttentionLogits, MvpaDims, MvpaParams, OpCounters,
};
use crate::autodiff::{Graph, MvpaVars, Var};
use crate::error::Result;
use crate::evaluation::{cohen_kappa, episodic_postprocess, kappa_estimate, Event, SecondLabels};
use crate::model::{LoraConfig, Model, ModelConfig};
use crate::objectives::{contrastive_loss, ContrastiveConfig};
use crate::rng;
use crate::series::SegmentGrid;
use crate::tensor::{EmbeddingGrid, Tensor};
use crate::wavelet::{dwt_db4, idwt_db4, max_level};

/// `Ok(detail)` on success, `Err(detail)` on failure.
pub type Outcome = std::result::Result<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Budgets of the randomized checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatteryConfig {
    pub seed: u64,
    /// Random instances per `(T, C)` pair in `1..=6`.
    pub oracle_instances: usize,
    pub causality_trials: usize,
    pub dropout_draws: usize,
    pub postprocess_lists: usize,
    /// Finite-difference probes per parameter tensor of the full model.
    pub gradient_probes: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            oracle_instances: 100,
            causality_trials: 1000,
            dropout_draws: 10_000,
            postprocess_lists: 1000,
            gradient_probes: 4,
        }
    }
}

pub const CHECKS: &[&str] = &[
    "oracle_equivalence",
    "shift_time",
    "shift_channel",
    "gradient_attention",
    "gradient_model",
    "causality",
    "time_toeplitz",
    "channel_time_independence",
    "op_counters",
    "dropout_probability",
    "dropout_fraction",
    "wavelet_energy",
    "wavelet_roundtrip",
    "wavelet_coefficient_count",
    "contrastive_uniform",
    "contrastive_perfect",
    "postprocess_cases",
    "postprocess_idempotence",
    "kappa_identical",
    "kappa_independent",
    "lora_noop",
];

/// Runs one named check.
pub fn run_check(name: &str, cfg: &BatteryConfig) -> Option<CheckResult> {
    let s = cfg.seed;
    let started = Instant::now();
    let outcome = match name {
        "oracle_equivalence" => oracle_equivalence(cfg.oracle_instances, s),
        "shift_time" => shift_time_matches_lookup(s),
        "shift_channel" => shift_channel_matches_lookup(s),
        "gradient_attention" => gradient_attention(s),
        "gradient_model" => gradient_model(cfg.gradient_probes, s),
        "causality" => causality(cfg.causality_trials, s),
        "time_toeplitz" => time_toeplitz(s),
        "channel_time_independence" => channel_time_independence(s),
        "op_counters" => op_counters(s),
        "dropout_probability" => dropout_probability(),
        "dropout_fraction" => dropout_fraction(0.1, cfg.dropout_draws, s),
        "wavelet_energy" => wavelet_energy(s),
        "wavelet_roundtrip" => wavelet_roundtrip(s),
        "wavelet_coefficient_count" => wavelet_coefficient_count(),
        "contrastive_uniform" => contrastive_uniform(),
        "contrastive_perfect" => contrastive_perfect(),
        "postprocess_cases" => postprocess_cases(),
        "postprocess_idempotence" => postprocess_idempotence(cfg.postprocess_lists, s),
        "kappa_identical" => kappa_identical(s),
        "kappa_independent" => kappa_independent(s),
        "lora_noop" => lora_noop(s),
        _ => return None,
    };
    let seconds = started.elapsed().as_secs_f64();
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    let name = CHECKS.iter().find(|&&c| c == name).expect("listed check");
    Some(CheckResult { name, passed, detail, seconds })
}

pub fn run_battery(cfg: &BatteryConfig) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|name| {
            let r = run_check(name, cfg).expect("listed check");
            log::info!("{} {} ({:.2}s) {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.seconds, r.detail);
            r
        })
        .collect()
}

/// `check,status,seconds,detail`
pub fn write_report_csv(results: &[CheckResult], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "check,status,seconds,detail")?;
    for r in results {
        writeln!(
            f,
            "{},{},{:.3},\"{}\"",
            r.name,
            if r.passed { "pass" } else { "fail" },
            r.seconds,
            r.detail.replace('"', "'")
        )?;
    }
    f.flush()?;
    Ok(())
}

fn err(e: crate::Error) -> String {
    e.to_string()
}

/// Attention parameters with every entry drawn at unit scale.
fn random_params(dims: MvpaDims, r: &mut rng::Rng) -> MvpaParams {
    let mut p = MvpaParams::init(dims, 0.5, r).expect("valid dims");
    for (_, t) in p.tensors_mut() {
        let shape = t.shape().to_vec();
        *t = Tensor::randn(&shape, 0.5, r);
    }
    p
}

fn random_dims(r: &mut rng::Rng, max_times: usize, max_channels: usize) -> MvpaDims {
    let (n_heads, n_kv_heads) = [(1, 1), (2, 1), (2, 2), (4, 2), (4, 1)][r.random_range(0..5)];
    MvpaDims { embed_dim: n_heads * r.random_range(2..=4usize), n_heads, n_kv_heads, max_times, max_channels }
}

fn logits_diff(a: &AttentionLogits, b: &AttentionLogits) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, y) in [(&a.content, &b.content), (&a.time, &b.time), (&a.channel, &b.channel), (&a.combined, &b.combined)] {
        for (p, q) in x.iter().zip(y) {
            if p.is_infinite() || q.is_infinite() {
                if p != q {
                    return f64::INFINITY;
                }
            } else {
                worst = worst.max((p - q).abs());
            }
        }
    }
    worst
}

/// Efficient logits equal the pairwise reference on every `(T, C)` in
/// `1..=6`, `instances` random parameter sets each.
pub fn oracle_equivalence(instances: usize, seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 1);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for _ in 0..instances {
        for times in 1..=6 {
            for channels in 1..=6 {
                let dims = random_dims(&mut r, 6, 6);
                let p = random_params(dims, &mut r);
                let e = EmbeddingGrid::random(channels, times, dims.embed_dim, 1.0, &mut r);
                let cfg = AttentionConfig::new(dims.embed_dim, r.random_range(1..=6));
                let naive = naive_mvpa_logits(&e, &p, &cfg).map_err(err)?;
                let fast = efficient_mvpa_logits(&e, &p, &cfg, &mut OpCounters::default()).map_err(err)?;
                if naive.mask != fast.mask || naive.content_mask != fast.content_mask {
                    return Err(format!("masks differ at T={times} C={channels}"));
                }
                worst = worst.max(logits_diff(&naive, &fast));
                runs += 1;
            }
        }
    }
    let detail = format!("max |efficient - naive| = {worst:.3e} over {runs} instances");
    if worst < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Shifted time blocks against a direct lookup of column `T − 1 − (t − t')`.
pub fn shift_time_matches_lookup(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 2);
    for times in 1..=9 {
        let raw: Vec<f64> = (0..3 * times * times).map(|_| r.random::<f64>()).collect();
        let out = shift_time(&raw, times);
        for b in 0..3 {
            let blk = b * times * times;
            for t in 0..times {
                for tk in 0..times {
                    let want = if tk <= t { raw[blk + t * times + times - 1 - (t - tk)] } else { 0.0 };
                    if out[blk + t * times + tk] != want {
                        return Err(format!(
                            "T={times}: entry ({t}, {tk}) is {} not {want}",
                            out[blk + t * times + tk]
                        ));
                    }
                }
            }
        }
    }
    Ok("T = 1..9 exact".into())
}

/// Shifted channel blocks against a direct lookup of column `C − 1 − (c − c')`.
pub fn shift_channel_matches_lookup(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 3);
    for channels in 1..=9usize {
        let width = 2 * channels - 1;
        let raw: Vec<f64> = (0..3 * channels * width).map(|_| r.random::<f64>()).collect();
        let out = shift_channel(&raw, channels);
        for b in 0..3 {
            for c in 0..channels {
                for ck in 0..channels {
                    let col = channels - 1 + ck - c;
                    let want = raw[b * channels * width + c * width + col];
                    let got = out[b * channels * channels + c * channels + ck];
                    if got != want {
                        return Err(format!("C={channels}: entry ({c}, {ck}) is {got} not {want}"));
                    }
                }
            }
        }
    }
    Ok("C = 1..9 exact".into())
}

/// `‖fd − analytic‖ / max(‖fd‖, ‖analytic‖)` over the probed entries.
fn relative_error(fd: &[f64], an: &[f64]) -> f64 {
    let diff = fd.iter().zip(an).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = fd.iter().map(|a| a * a).sum::<f64>().sqrt().max(an.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

const FD_STEP: f64 = 1e-4;

/// One attention layer (softmax, structured dropout, GQA) against central
/// differences on every entry of every input.
pub fn gradient_attention(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 4);
    let dims = MvpaDims { embed_dim: 8, n_heads: 4, n_kv_heads: 2, max_times: 5, max_channels: 4 };
    let (channels, times) = (3, 4);
    let p = random_params(dims, &mut r);
    let x = Tensor::randn(&[channels * times, dims.embed_dim], 1.0, &mut r);
    let target: Vec<f64> = (0..channels * times * dims.embed_dim).map(|_| r.random::<f64>()).collect();
    let mut cfg = AttentionConfig::new(dims.embed_dim, 2);
    cfg.dropout_rate = 0.3;
    let keep = structured_dropout_mask(times, channels, 0.3, 11);
    let geometry = crate::attention::Geometry {
        channels,
        times,
        heads: dims.n_heads,
        kv_heads: dims.n_kv_heads,
        head_dim: dims.head_dim(),
        max_times: dims.max_times,
        max_channels: dims.max_channels,
    };
    let mut inputs: Vec<(&str, Tensor)> = vec![("x", x)];
    inputs.extend(p.tensors().iter().map(|(n, t)| (*n, (*t).clone())));
    let build = |g: &mut Graph, ts: &[Tensor]| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let by = |name: &str| vars[inputs.iter().position(|(n, _)| *n == name).expect("named input")];
        let mv = MvpaVars {
            w_q: by("w_q"),
            w_ke: by("w_ke"),
            w_kt: by("w_kt"),
            w_kc: by("w_kc"),
            w_v: by("w_v"),
            time_codebook: by("time_codebook"),
            channel_codebook: by("channel_codebook"),
            u_content: by("u_content"),
            v_time: by("v_time"),
            w_channel: by("w_channel"),
        };
        let heads = g.mvpa(vars[0], mv, geometry, cfg, Some(keep.clone()));
        let out = g.linear(heads, by("w_o"));
        (g.mse(out, target.clone()), vars)
    };
    let values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut g = Graph::new();
    let (loss, vars) = build(&mut g, &values);
    let grads = g.backward(loss);
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let (l, _) = build(&mut g, ts);
        g.value(l).data()[0]
    };
    let mut worst = (0.0f64, "");
    for (k, (name, t)) in inputs.iter().enumerate() {
        let an = grads.get(vars[k]).ok_or_else(|| format!("{name} has no gradient"))?;
        let mut fd = Vec::with_capacity(t.len());
        for i in 0..t.len() {
            let mut plus = values.clone();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = values.clone();
            minus[k].data_mut()[i] -= FD_STEP;
            fd.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
        }
        let e = relative_error(&fd, an.data());
        if e > worst.0 {
            worst = (e, name);
        }
    }
    let detail = format!("worst relative error {:.3e} ({})", worst.0, worst.1);
    if worst.0 < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_window(channels: usize, times: usize, samples: usize, r: &mut rng::Rng) -> SegmentGrid {
    let cells = (0..channels * times * samples).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
    SegmentGrid::new(channels, times, samples, cells).expect("sized grid")
}

/// Contrastive pre-training loss of a toy model on two windows with fixed
/// negatives, against central differences on `probes` random entries of
/// every parameter tensor.
pub fn gradient_model(probes: usize, seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 5);
    let cfg = ModelConfig::toy();
    let model = Model::new(cfg.clone(), seed).map_err(err)?;
    let windows = [random_window(3, 5, cfg.segment_samples, &mut r), random_window(3, 5, cfg.segment_samples, &mut r)];
    let ccfg = ContrastiveConfig { n_negatives: 6, ..Default::default() };
    let pairs: Vec<(usize, usize)> = (0..3).flat_map(|c| (0..4).map(move |t| (c * 5 + t, c * 5 + t + 1))).collect();
    let dropout = Some(rng::derive(seed, 99));
    // negatives are detached in training, so they are drawn once and held
    let embeddings: Vec<EmbeddingGrid> = windows.iter().map(|w| model.encode(w)).collect::<Result<_>>().map_err(err)?;
    let negatives: Vec<Vec<Vec<Vec<f64>>>> = (0..2)
        .map(|w| {
            let other = &embeddings[1 - w];
            pairs
                .iter()
                .map(|_| {
                    (0..ccfg.n_negatives)
                        .map(|_| other.cell(r.random_range(0..3), r.random_range(0..5)).to_vec())
                        .collect()
                })
                .collect()
        })
        .collect();
    let loss_of = |m: &Model, g: &mut Graph, trainable: bool| -> Result<(Var, crate::model::Bound)> {
        let b = m.bind(g, |_| trainable);
        let mut total: Option<Var> = None;
        for (w, grid) in windows.iter().enumerate() {
            let f = m.forward_graph(g, &b, grid, dropout.map(|s| rng::derive(s, w as u64)))?;
            let l = g.contrastive(f.output, f.embeddings, pairs.clone(), negatives[w].clone(), ccfg);
            total = Some(match total {
                Some(t) => g.add(t, l),
                None => l,
            });
        }
        Ok((total.expect("two windows"), b))
    };
    let mut g = Graph::new();
    let (loss, bound) = loss_of(&model, &mut g, true).map_err(err)?;
    let grads = g.backward(loss);
    let eval = |m: &Model| -> f64 {
        let mut g = Graph::new();
        let (l, _) = loss_of(m, &mut g, false).expect("same shapes");
        g.value(l).data()[0]
    };
    let mut worst = (0.0f64, String::new());
    let mut tensors = 0;
    for (name, v) in bound.iter() {
        let an = grads.get(v).ok_or_else(|| format!("{name} has no gradient"))?;
        let len = an.len();
        let idx: Vec<usize> =
            if len <= probes { (0..len).collect() } else { (0..probes).map(|_| r.random_range(0..len)).collect() };
        let (mut fd, mut ad) = (Vec::new(), Vec::new());
        for &i in &idx {
            let mut plus = model.clone();
            plus.param_mut(name).expect("bound name").data_mut()[i] += FD_STEP;
            let mut minus = model.clone();
            minus.param_mut(name).expect("bound name").data_mut()[i] -= FD_STEP;
            fd.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
            ad.push(an.data()[i]);
        }
        let e = relative_error(&fd, &ad);
        if e > worst.0 {
            worst = (e, name.to_string());
        }
        tensors += 1;
    }
    let detail = format!("worst relative error {:.3e} ({}) over {tensors} tensors", worst.0, worst.1);
    if worst.0 < 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Perturbing segments at `t >= t0` leaves every output before `t0`
/// bit-identical.
pub fn causality(trials: usize, seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 6);
    let cfg = ModelConfig::toy();
    let model = Model::new(cfg.clone(), seed).map_err(err)?;
    for trial in 0..trials {
        let (channels, times) = (r.random_range(1..=4), r.random_range(2..=8));
        let grid = random_window(channels, times, cfg.segment_samples, &mut r);
        let t0 = r.random_range(1..times);
        let mut changed = grid.clone();
        for c in 0..channels {
            for t in t0..times {
                changed.segment_mut(c, t).iter_mut().for_each(|x| *x += r.random::<f64>() * 4.0 - 2.0);
            }
        }
        let (a, b) = (model.forward(&grid).map_err(err)?, model.forward(&changed).map_err(err)?);
        for c in 0..channels {
            for t in 0..t0 {
                if a.cell(c, t).iter().zip(b.cell(c, t)).any(|(x, y)| x.to_bits() != y.to_bits()) {
                    return Err(format!("trial {trial}: output ({c}, {t}) moved when t >= {t0} changed"));
                }
            }
        }
    }
    Ok(format!("{trials} trials bit-identical"))
}

/// With identical content at every cell, time logits depend on `t − t'` only.
pub fn time_toeplitz(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 7);
    for _ in 0..20 {
        let dims = random_dims(&mut r, 8, 5);
        let (channels, times) = (r.random_range(1..=5), r.random_range(2..=8));
        let p = random_params(dims, &mut r);
        let x: Vec<f64> = (0..dims.embed_dim).map(|_| r.random::<f64>()).collect();
        let e = EmbeddingGrid::from_vec(channels, times, dims.embed_dim, x.repeat(channels * times)).map_err(err)?;
        let l = efficient_mvpa_logits(&e, &p, &AttentionConfig::new(dims.embed_dim, 2), &mut OpCounters::default())
            .map_err(err)?;
        for h in 0..dims.n_heads {
            for c in 0..channels {
                for ck in 0..channels {
                    for t in 1..times {
                        for tk in 1..=t {
                            let now = l.time[l.index(h, c * times + t, ck * times + tk)];
                            let before = l.time[l.index(h, c * times + t - 1, ck * times + tk - 1)];
                            if now != before {
                                return Err(format!("head {h}: ({t}, {tk}) != ({}, {})", t - 1, tk - 1));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok("diagonals constant".into())
}

/// Channel logits do not vary with the key's time step.
pub fn channel_time_independence(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 8);
    for _ in 0..20 {
        let dims = random_dims(&mut r, 8, 5);
        let (channels, times) = (r.random_range(1..=5), r.random_range(1..=8));
        let p = random_params(dims, &mut r);
        let e = EmbeddingGrid::random(channels, times, dims.embed_dim, 1.0, &mut r);
        let l = efficient_mvpa_logits(&e, &p, &AttentionConfig::new(dims.embed_dim, 3), &mut OpCounters::default())
            .map_err(err)?;
        for h in 0..dims.n_heads {
            for q in 0..channels * times {
                let t = q % times;
                for ck in 0..channels {
                    let first = &l.channel[l.index(h, q, ck * times)];
                    if (1..=t).any(|tk| l.channel[l.index(h, q, ck * times + tk)] != *first) {
                        return Err(format!("head {h} query {q}: channel logits to channel {ck} vary over time"));
                    }
                }
            }
        }
    }
    Ok("constant over key times".into())
}

/// Dot-product tallies equal their closed forms.
pub fn op_counters(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 9);
    for times in 1..=8u64 {
        for channels in 1..=6u64 {
            for window in 1..=4u64 {
                let dims = random_dims(&mut r, 8, 6);
                let p = random_params(dims, &mut r);
                let e = EmbeddingGrid::random(channels as usize, times as usize, dims.embed_dim, 1.0, &mut r);
                let mut n = OpCounters::default();
                efficient_mvpa_logits(&e, &p, &AttentionConfig::new(dims.embed_dim, window as usize), &mut n)
                    .map_err(err)?;
                let h = dims.n_heads as u64;
                let content: u64 = h * channels * channels * (0..times).map(|t| (t + 1).min(window)).sum::<u64>();
                let ok = n.time_dots == h * channels * times * times
                    && n.channel_dots == h * times * channels * (2 * channels - 1)
                    && n.content_dots == content
                    && n.content_dots <= h * channels * channels * times * window;
                if !ok {
                    return Err(format!("T={times} C={channels} L={window} H={h}: {n:?}"));
                }
            }
        }
    }
    Ok("time H·C·T², channel H·T·C·(2C−1), content ≤ H·C²·T·L".into())
}

pub fn dropout_probability() -> Outcome {
    for i in 0..=18 {
        let rate = i as f64 * 0.05;
        let p = axis_drop_probability(rate);
        if (p - (1.0 - (1.0 - rate).sqrt())).abs() > 1e-12 || ((1.0 - p).powi(2) - (1.0 - rate)).abs() > 1e-12 {
            return Err(format!("rate {rate}: axis probability {p}"));
        }
    }
    Ok("rates 0..0.9 to 1e-12".into())
}

/// Mean dropped-cell fraction of `draws` masks on a 16×16 grid.
pub fn dropout_fraction(rate: f64, draws: usize, seed: u64) -> Outcome {
    let (times, channels) = (16, 16);
    let mut dropped = 0usize;
    for i in 0..draws {
        let keep = structured_dropout_mask(times, channels, rate, rng::derive(seed, i as u64));
        dropped += keep.iter().filter(|k| !**k).count();
    }
    let frac = dropped as f64 / (draws * times * channels) as f64;
    let detail = format!("dropped {frac:.4} for rate {rate} over {draws} draws");
    if (frac - rate).abs() <= 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn wavelet_inputs(seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 10);
    [16usize, 64, 2560].iter().map(|&n| (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).collect()
}

pub fn wavelet_energy(seed: u64) -> Outcome {
    let mut worst: f64 = 0.0;
    for x in wavelet_inputs(seed) {
        let ex: f64 = x.iter().map(|v| v * v).sum();
        for level in 1..=max_level(x.len()) {
            let c = dwt_db4(&x, level).map_err(err)?;
            let ec: f64 = c.flatten().iter().map(|v| v * v).sum();
            worst = worst.max((ec - ex).abs() / ex);
        }
    }
    let detail = format!("worst relative energy change {worst:.3e}");
    if worst < 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn wavelet_roundtrip(seed: u64) -> Outcome {
    let mut worst: f64 = 0.0;
    for x in wavelet_inputs(seed) {
        for level in 1..=max_level(x.len()) {
            let back = idwt_db4(&dwt_db4(&x, level).map_err(err)?).map_err(err)?;
            worst = x.iter().zip(&back).fold(worst, |w, (a, b)| w.max((a - b).abs()));
        }
    }
    let detail = format!("max reconstruction error {worst:.3e}");
    if worst < 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn wavelet_coefficient_count() -> Outcome {
    for n in [16usize, 64, 2560] {
        for level in 1..=max_level(n) {
            let c = dwt_db4(&vec![1.0; n], level).map_err(err)?;
            if c.total_len() != n {
                return Err(format!("n={n} level {level}: {} coefficients", c.total_len()));
            }
        }
    }
    Ok("coefficients = input length (n = 16, 64, 2560)".into())
}

/// All similarities equal: loss `ln(n + 1)`.
pub fn contrastive_uniform() -> Outcome {
    let cfg = ContrastiveConfig::default();
    let v = [0.3, -1.2, 0.7];
    let negs = vec![v.to_vec(); cfg.n_negatives];
    let loss = contrastive_loss(&v, &v, &negs, &cfg);
    let want = ((cfg.n_negatives + 1) as f64).ln();
    let detail = format!("loss {loss:.15} vs ln(31) {want:.15}");
    if (loss - want).abs() <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Exact positive, orthogonal negatives: loss `ln(1 + n·e^{−1/τ})`.
pub fn contrastive_perfect() -> Outcome {
    let cfg = ContrastiveConfig::default();
    let o = [1.0, 0.0];
    let negs = vec![vec![0.0, 2.0]; cfg.n_negatives];
    let loss = contrastive_loss(&o, &o, &negs, &cfg);
    let want = (1.0 + cfg.n_negatives as f64 * (-1.0 / cfg.temperature).exp()).ln();
    let detail = format!("loss {loss:.3e} vs {want:.3e}");
    if (loss - want).abs() <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn postprocess_cases() -> Outcome {
    let ev = Event::new;
    type Case = (&'static str, Vec<Event>, Vec<usize>, Vec<Event>);
    let cases: Vec<Case> = vec![
        ("merge under 5 min", vec![ev(0.0, 30.0), ev(200.0, 240.0)], vec![10, 10], vec![ev(0.0, 240.0)]),
        (
            "keep 5 min apart",
            vec![ev(0.0, 30.0), ev(330.0, 360.0)],
            vec![10, 10],
            vec![ev(0.0, 30.0), ev(330.0, 360.0)],
        ),
        ("drop under 20 s", vec![ev(0.0, 15.0), ev(400.0, 430.0)], vec![15, 15], vec![ev(400.0, 430.0)]),
        ("drop under 5 positives", vec![ev(0.0, 25.0)], vec![4], vec![]),
        ("merge before length", vec![ev(0.0, 12.0), ev(20.0, 32.0)], vec![3, 3], vec![ev(0.0, 32.0)]),
        ("unsorted input", vec![ev(500.0, 530.0), ev(0.0, 40.0)], vec![6, 6], vec![ev(0.0, 40.0), ev(500.0, 530.0)]),
    ];
    for (name, raw, counts, want) in cases {
        let (got, _) = episodic_postprocess(&raw, &counts).map_err(err)?;
        if got != want {
            return Err(format!("{name}: got {got:?}"));
        }
    }
    Ok("6 hand-derived cases".into())
}

pub fn postprocess_idempotence(lists: usize, seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 11);
    for i in 0..lists {
        let n = r.random_range(0..12);
        let mut raw = Vec::with_capacity(n);
        let mut counts = Vec::with_capacity(n);
        for _ in 0..n {
            let s = r.random_range(0.0..3600.0);
            raw.push(Event::new(s, s + r.random_range(1.0..60.0)));
            counts.push(r.random_range(0..12));
        }
        let once = episodic_postprocess(&raw, &counts).map_err(err)?;
        let twice = episodic_postprocess(&once.0, &once.1).map_err(err)?;
        if once != twice {
            return Err(format!("list {i} changed on the second pass"));
        }
    }
    Ok(format!("{lists} random lists"))
}

fn random_bits(n: usize, r: &mut rng::Rng) -> SecondLabels {
    SecondLabels::new((0..n).map(|_| r.random::<bool>() as u8).collect()).expect("binary labels")
}

pub fn kappa_identical(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 12);
    let x = random_bits(5000, &mut r);
    let k = kappa_estimate(&x, &x, 300, 100, seed).map_err(err)?;
    let direct = cohen_kappa(x.bits(), x.bits()).map_err(err)?;
    let detail = format!("estimate {} direct {direct}", k.mean);
    if k.mean == 1.0 && direct == 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn kappa_independent(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 13);
    let (x, y) = (random_bits(10_000, &mut r), random_bits(10_000, &mut r));
    let k = kappa_estimate(&x, &y, 300, 250, seed).map_err(err)?;
    let detail = format!("estimate {:.4}", k.mean);
    if k.mean.abs() < 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Attaching zero-initialised adapters leaves outputs bit-identical.
pub fn lora_noop(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, 14);
    let cfg = ModelConfig::toy();
    let base = Model::new(cfg.clone(), seed).map_err(err)?;
    let mut adapted = base.clone();
    adapted.attach_lora(LoraConfig::default(), seed).map_err(err)?;
    let grid = random_window(4, 6, cfg.segment_samples, &mut r);
    let (a, b) = (base.forward(&grid).map_err(err)?, adapted.forward(&grid).map_err(err)?);
    if a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()) {
        Ok("bit-identical".into())
    } else {
        Err("adapters changed the output".into())
    }
}

//! Training loops: contrastive pre-training, LoRA fine-tuning and
//! forecasting, all on the in-crate autodiff graph.

mod optim;
pub mod tasks;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;

pub use optim::{adamw_update, global_norm, AdamWConfig, OptimizerState};
pub use tasks::{
    burst_windows, corpus_windows, forecast_samples, last_value_forecast, pretrain_corpus, BurstTask, ForecastSample,
};

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Error, Result};
use crate::model::{ClassifyMode, LoraConfig, Model, ModelConfig};
use crate::objectives::{contrastive_loss, ranks_first, sample_negative_cells, ContrastiveConfig};
use crate::rng;
use crate::series::SegmentGrid;
use crate::tensor::Tensor;
use crate::wavelet::max_level;

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    /// Contrastive rank accuracy or classification accuracy of the batch;
    /// NaN for forecasting.
    pub accuracy: f64,
}

pub fn write_trace_csv(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss,accuracy")?;
    for r in rows {
        writeln!(f, "{},{},{}", r.step, r.loss, r.accuracy)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    /// Windows per step; negatives come from the other windows.
    pub batch_windows: usize,
    pub optimizer: AdamWConfig,
    pub contrastive: ContrastiveConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_windows: 8,
            optimizer: AdamWConfig { lr: 1e-3, weight_decay: 0.01, clip_norm: Some(1.0), ..Default::default() },
            contrastive: ContrastiveConfig::default(),
            seed: 0,
        }
    }
}

fn check_batch(windows: &[SegmentGrid], batch: usize) -> Result<()> {
    if batch < 2 {
        return Err(invalid("batches need at least 2 windows"));
    }
    if windows.len() < batch {
        return Err(Error::InsufficientData(format!("{} windows cannot fill a batch of {batch}", windows.len())));
    }
    Ok(())
}

/// Gradients of every trainable bound parameter, keyed by name.
fn collect_grads(g: &Graph, loss: Var, bound: &crate::model::Bound) -> BTreeMap<String, Tensor> {
    let grads = g.backward(loss);
    bound
        .iter()
        .filter(|(_, v)| g.requires_grad(*v))
        .filter_map(|(name, v)| grads.get(v).map(|t| (name.to_string(), t.clone())))
        .collect()
}

/// Pairs `(c·T + t, c·T + t + 1)`: output at `t` against the embedding at
/// `t + 1`.
fn next_step_pairs(channels: usize, times: usize) -> Vec<(usize, usize)> {
    (0..channels).flat_map(|c| (0..times.saturating_sub(1)).map(move |t| (c * times + t, c * times + t + 1))).collect()
}

struct ContrastiveBatch {
    loss: Var,
    /// Cells with a next-step target.
    pairs: usize,
    correct: usize,
}

/// Summed contrastive loss of a set of forward passes, each with negatives
/// drawn from the embeddings of the other windows.
fn contrastive_batch(
    g: &mut Graph,
    fwds: &[crate::model::ForwardVars],
    cfg: &ContrastiveConfig,
    r: &mut rng::Rng,
) -> Result<ContrastiveBatch> {
    let sizes: Vec<usize> = fwds.iter().map(|f| f.channels * f.times).collect();
    let mut total: Option<Var> = None;
    let (mut n_pairs, mut correct) = (0, 0);
    for (w, f) in fwds.iter().enumerate() {
        let pairs = next_step_pairs(f.channels, f.times);
        let mut negatives = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let refs = sample_negative_cells(&sizes, w, cfg.n_negatives, r)?;
            let negs: Vec<Vec<f64>> =
                refs.iter().map(|c| g.value(fwds[c.window].embeddings).row(c.cell).to_vec()).collect();
            let (o, e) = (g.value(f.output).row(i), g.value(f.embeddings).row(j));
            correct += ranks_first(o, e, &negs) as usize;
            negatives.push(negs);
        }
        n_pairs += pairs.len();
        let loss = g.contrastive(f.output, f.embeddings, pairs, negatives, *cfg);
        total = Some(match total {
            Some(t) => g.add(t, loss),
            None => loss,
        });
    }
    Ok(ContrastiveBatch { loss: total.ok_or_else(|| invalid("empty batch"))?, pairs: n_pairs, correct })
}

/// Contrastive pre-training of the base model. Returns one trace row per
/// step with the per-cell mean loss and the batch rank accuracy.
pub fn pretrain(
    model: &mut Model,
    windows: &[SegmentGrid],
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<Vec<TraceRow>> {
    cfg.contrastive.validate()?;
    check_batch(windows, cfg.batch_windows)?;
    let mut opt = OptimizerState::new(cfg.optimizer)?;
    let mut r = rng::stream(cfg.seed, 0x9E);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sample(&mut r, windows.len(), cfg.batch_windows);
        let mut g = Graph::new();
        let bound = model.bind(&mut g, Model::is_base_param);
        let step_seed = rng::derive(cfg.seed, step as u64);
        let fwds = idx
            .iter()
            .enumerate()
            .map(|(k, w)| model.forward_graph(&mut g, &bound, &windows[w], Some(rng::derive(step_seed, k as u64))))
            .collect::<Result<Vec<_>>>()?;
        let batch = contrastive_batch(&mut g, &fwds, &cfg.contrastive, &mut r)?;
        if batch.pairs == 0 {
            return Err(Error::InsufficientData("windows need at least 2 time steps".into()));
        }
        let grads = collect_grads(&g, batch.loss, &bound);
        opt.step(model, &grads)?;
        let row = TraceRow {
            step: step + 1,
            loss: g.value(batch.loss).data()[0] / batch.pairs as f64,
            accuracy: batch.correct as f64 / batch.pairs as f64,
        };
        on_step(&row);
        trace.push(row);
    }
    Ok(trace)
}

/// Inference-mode contrastive loss and rank accuracy over a set of windows;
/// negatives for each target come from all other windows of the set.
pub fn evaluate_contrastive(
    model: &Model,
    windows: &[SegmentGrid],
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    check_batch(windows, 2)?;
    let outs = windows.iter().map(|w| model.forward_with_embeddings(w)).collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = outs.iter().map(|(e, _)| e.cells()).collect();
    let mut r = rng::stream(seed, 0xE7);
    let (mut loss, mut correct, mut n) = (0.0, 0usize, 0usize);
    for (w, (emb, out)) in outs.iter().enumerate() {
        let d = emb.dim();
        for (i, j) in next_step_pairs(emb.channels(), emb.times()) {
            let negs: Vec<Vec<f64>> = sample_negative_cells(&sizes, w, cfg.n_negatives, &mut r)?
                .iter()
                .map(|c| outs[c.window].0.data()[c.cell * d..(c.cell + 1) * d].to_vec())
                .collect();
            let o = &out.data()[i * d..(i + 1) * d];
            let e = &emb.data()[j * d..(j + 1) * d];
            loss += contrastive_loss(o, e, &negs, cfg);
            correct += ranks_first(o, e, &negs) as usize;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData("windows need at least 2 time steps".into()));
    }
    Ok((loss / n as f64, correct as f64 / n as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub batch_windows: usize,
    pub optimizer: AdamWConfig,
    pub lora: LoraConfig,
    pub mode: ClassifyMode,
    pub classes: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_windows: 8,
            optimizer: AdamWConfig { lr: 3e-3, weight_decay: 0.0, ..Default::default() },
            lora: LoraConfig::default(),
            mode: ClassifyMode::ChannelMean,
            classes: 2,
            seed: 0,
        }
    }
}

/// Fine-tunes adapters and a classification head on labelled windows; the
/// base weights stay frozen. Attaches LoRA and the head when missing.
pub fn finetune(
    model: &mut Model,
    windows: &[SegmentGrid],
    labels: &[usize],
    cfg: &FinetuneConfig,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<Vec<TraceRow>> {
    if windows.len() != labels.len() {
        return Err(invalid(format!("{} windows but {} labels", windows.len(), labels.len())));
    }
    if windows.is_empty() {
        return Err(Error::InsufficientData("no labelled windows".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= cfg.classes) {
        return Err(invalid(format!("label {y} outside {} classes", cfg.classes)));
    }
    if model.lora().is_none() {
        model.attach_lora(cfg.lora, rng::derive(cfg.seed, 0x10A))?;
    }
    if model.classifier().is_none() {
        model.attach_classifier(cfg.mode, cfg.classes, windows[0].channels)?;
    }
    let batch = cfg.batch_windows.clamp(1, windows.len());
    let mut opt = OptimizerState::new(cfg.optimizer)?;
    let mut r = rng::stream(cfg.seed, 0xF1);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sample(&mut r, windows.len(), batch);
        let mut g = Graph::new();
        let bound = model.bind(&mut g, Model::is_finetune_param);
        let step_seed = rng::derive(cfg.seed, step as u64);
        let mut total: Option<Var> = None;
        let mut correct = 0;
        for (k, w) in idx.iter().enumerate() {
            let f = model.forward_graph(&mut g, &bound, &windows[w], Some(rng::derive(step_seed, k as u64)))?;
            let logits = model.classify_graph(&mut g, &bound, &f)?;
            correct += (argmax(g.value(logits).data()) == labels[w]) as usize;
            let loss = g.softmax_xent(logits, vec![labels[w]]);
            total = Some(match total {
                Some(t) => g.add(t, loss),
                None => loss,
            });
        }
        let loss = g.scale(total.expect("batch is non-empty"), 1.0 / batch as f64);
        let grads = collect_grads(&g, loss, &bound);
        opt.step(model, &grads)?;
        let row = TraceRow { step: step + 1, loss: g.value(loss).data()[0], accuracy: correct as f64 / batch as f64 };
        on_step(&row);
        trace.push(row);
    }
    Ok(trace)
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best }).0
}

/// Predicted class of every window.
pub fn predict_classes(model: &Model, windows: &[SegmentGrid]) -> Result<Vec<usize>> {
    windows.iter().map(|w| Ok(argmax(&model.classify(w)?))).collect()
}

/// F1 of class 1 against class-index labels; 0 when nothing is predicted
/// or present.
pub fn binary_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p == 1 && **t == 1).count() as f64;
    let fp = pred.iter().zip(truth).filter(|(p, t)| **p == 1 && **t != 1).count() as f64;
    let fneg = pred.iter().zip(truth).filter(|(p, t)| **p != 1 && **t == 1).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub segment_samples: usize,
    pub steps: usize,
    pub batch: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 96,
            segment_samples: 16,
            steps: 300,
            batch: 8,
            optimizer: AdamWConfig { lr: 1e-3, weight_decay: 0.01, clip_norm: Some(1.0), ..Default::default() },
            seed: 0,
        }
    }
}

impl ForecastConfig {
    /// A copy of `base` resized for lookback windows: segments of
    /// `segment_samples`, `lookback / segment_samples` time steps.
    pub fn model_config(&self, base: &ModelConfig) -> Result<ModelConfig> {
        if self.segment_samples == 0 || !self.lookback.is_multiple_of(self.segment_samples) {
            return Err(invalid("lookback must be a whole number of segments"));
        }
        let mut cfg = base.clone();
        cfg.segment_samples = self.segment_samples;
        cfg.wavelet_level = cfg.wavelet_level.min(max_level(self.segment_samples)).max(1);
        cfg.max_times = cfg.max_times.max(self.lookback / self.segment_samples);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-channel mean and standard deviation of a lookback window, used to
/// normalise inputs and de-normalise forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InstanceNorm {
    pub const EPS: f64 = 1e-5;

    pub fn fit(input: &[Vec<f64>]) -> Self {
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for ch in input {
            let n = ch.len().max(1) as f64;
            let m = ch.iter().sum::<f64>() / n;
            let var = ch.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            mean.push(m);
            std.push((var + Self::EPS).sqrt());
        }
        Self { mean, std }
    }

    pub fn normalize(&self, c: usize, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (v - self.mean[c]) / self.std[c]).collect()
    }

    pub fn denormalize(&self, c: usize, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v * self.std[c] + self.mean[c]).collect()
    }
}

/// Normalised lookback grid and the normaliser.
pub fn forecast_input(sample: &ForecastSample, segment_samples: usize) -> Result<(SegmentGrid, InstanceNorm)> {
    let norm = InstanceNorm::fit(&sample.input);
    let channels = sample.input.len();
    let lookback = sample.input.first().map_or(0, Vec::len);
    if segment_samples == 0 || lookback == 0 || !lookback.is_multiple_of(segment_samples) {
        return Err(invalid("lookback must be a non-empty whole number of segments"));
    }
    let cells = (0..channels).flat_map(|c| norm.normalize(c, &sample.input[c])).collect();
    Ok((SegmentGrid::new(channels, lookback / segment_samples, segment_samples, cells)?, norm))
}

/// Trains the whole model plus a forecasting head with MSE in normalised
/// units. The model must already be sized by [`ForecastConfig::model_config`].
pub fn train_forecaster(
    model: &mut Model,
    samples: &[ForecastSample],
    cfg: &ForecastConfig,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<Vec<TraceRow>> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no forecast samples".into()));
    }
    if model.forecast_horizon().is_none() {
        model.attach_forecaster(cfg.horizon)?;
    }
    if model.forecast_horizon() != Some(cfg.horizon) {
        return Err(invalid("forecasting head has a different horizon"));
    }
    let inputs = samples.iter().map(|s| forecast_input(s, cfg.segment_samples)).collect::<Result<Vec<_>>>()?;
    let batch = cfg.batch.clamp(1, samples.len());
    let mut opt = OptimizerState::new(cfg.optimizer)?;
    let mut r = rng::stream(cfg.seed, 0xFC);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sample(&mut r, samples.len(), batch);
        let mut g = Graph::new();
        let bound = model.bind(&mut g, |_| true);
        let step_seed = rng::derive(cfg.seed, step as u64);
        let mut total: Option<Var> = None;
        for (k, i) in idx.iter().enumerate() {
            let (grid, norm) = &inputs[i];
            let f = model.forward_graph(&mut g, &bound, grid, Some(rng::derive(step_seed, k as u64)))?;
            let y = model.forecast_graph(&mut g, &bound, &f)?;
            let target: Vec<f64> =
                samples[i].target.iter().enumerate().flat_map(|(c, t)| norm.normalize(c, t)).collect();
            let loss = g.mse(y, target);
            total = Some(match total {
                Some(t) => g.add(t, loss),
                None => loss,
            });
        }
        let loss = g.scale(total.expect("batch is non-empty"), 1.0 / batch as f64);
        let grads = collect_grads(&g, loss, &bound);
        opt.step(model, &grads)?;
        let row = TraceRow { step: step + 1, loss: g.value(loss).data()[0], accuracy: f64::NAN };
        on_step(&row);
        trace.push(row);
    }
    Ok(trace)
}

/// Forecast `[C][horizon]` of one sample in original units.
pub fn predict_forecast(model: &Model, sample: &ForecastSample, segment_samples: usize) -> Result<Vec<Vec<f64>>> {
    let (grid, norm) = forecast_input(sample, segment_samples)?;
    let y = model.forecast(&grid)?;
    Ok((0..grid.channels).map(|c| norm.denormalize(c, y.row(c))).collect())
}

/// Mean squared error of the model and of the last-value baseline over a
/// set of samples, `(model, baseline)`.
pub fn forecast_mse(model: &Model, samples: &[ForecastSample], segment_samples: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no forecast samples".into()));
    }
    let (mut pred, mut base, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        let horizon = s.target.first().map_or(0, Vec::len);
        pred.extend(predict_forecast(model, s, segment_samples)?.into_iter().flatten());
        base.extend(last_value_forecast(s, horizon).into_iter().flatten());
        truth.extend(s.target.iter().flatten().copied());
    }
    let m = crate::evaluation::forecast_metrics(&pred, &truth)?;
    let b = crate::evaluation::forecast_metrics(&base, &truth)?;
    Ok((m.mse, b.mse))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_windows(n: usize, seed: u64) -> Vec<SegmentGrid> {
        let corpus = pretrain_corpus(n, 10.0, 4, seed).unwrap();
        corpus_windows(&corpus, 10.0, 1.0, 10.0).unwrap()
    }

    #[test]
    fn pretraining_lowers_the_loss() {
        let windows = toy_windows(6, 3);
        let mut m = Model::new(ModelConfig::toy(), 1).unwrap();
        let cfg = PretrainConfig { steps: 25, batch_windows: 4, ..Default::default() };
        let trace = pretrain(&mut m, &windows, &cfg, |_| {}).unwrap();
        let head: f64 = trace[..5].iter().map(|r| r.loss).sum::<f64>() / 5.0;
        let tail: f64 = trace[20..].iter().map(|r| r.loss).sum::<f64>() / 5.0;
        assert!(tail < head, "loss {head} -> {tail}");
        assert!(trace.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    }

    #[test]
    fn pretraining_is_deterministic() {
        let windows = toy_windows(3, 4);
        let cfg = PretrainConfig { steps: 2, batch_windows: 2, ..Default::default() };
        let run = || {
            let mut m = Model::new(ModelConfig::toy(), 9).unwrap();
            pretrain(&mut m, &windows, &cfg, |_| {}).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_window_batches_are_rejected() {
        let windows = toy_windows(2, 0);
        let mut m = Model::new(ModelConfig::toy(), 1).unwrap();
        let cfg = PretrainConfig { steps: 1, batch_windows: 1, ..Default::default() };
        assert!(pretrain(&mut m, &windows, &cfg, |_| {}).is_err());
        assert!(evaluate_contrastive(&m, &windows[..1], &ContrastiveConfig::default(), 0).is_err());
    }

    #[test]
    fn finetuning_leaves_base_weights_alone() {
        let (windows, labels) = burst_windows(&BurstTask::default(), 8, 2).unwrap();
        let mut m = Model::new(ModelConfig::toy(), 5).unwrap();
        let before = m.clone();
        let cfg = FinetuneConfig { steps: 3, batch_windows: 4, ..Default::default() };
        finetune(&mut m, &windows, &labels, &cfg, |_| {}).unwrap();
        for (name, t) in before.params() {
            assert_eq!(m.param(name), Some(t), "{name} changed");
        }
        assert!(m.param("head.classify.weight").unwrap().sum_sq() > 0.0);
        assert!(m.param("layers.0.lora_q.b").unwrap().sum_sq() > 0.0);
    }

    #[test]
    fn f1_edges() {
        assert_eq!(binary_f1(&[1, 0, 1], &[1, 0, 0]), 2.0 / 3.0);
        assert_eq!(binary_f1(&[0, 0], &[0, 0]), 0.0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    }

    #[test]
    fn instance_norm_round_trips() {
        let s = ForecastSample { input: vec![vec![1.0, 2.0, 3.0, 4.0]], target: vec![vec![5.0]] };
        let (grid, norm) = forecast_input(&s, 2).unwrap();
        assert!(grid.cells.iter().sum::<f64>().abs() < 1e-12);
        let back = norm.denormalize(0, &grid.cells);
        for (a, b) in back.iter().zip(&s.input[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(forecast_input(&s, 3).is_err());
    }

    #[test]
    fn forecaster_trains_and_predicts_in_original_units() {
        let cfg = ForecastConfig { steps: 3, batch: 2, ..Default::default() };
        let mc = cfg.model_config(&ModelConfig::toy()).unwrap();
        assert_eq!((mc.segment_samples, mc.wavelet_level), (16, 1));
        let series =
            crate::series::synth_generate(&crate::series::SynthConfig { duration_s: 10.0, ..Default::default() }, 1)
                .unwrap();
        let samples = forecast_samples(&series, 96, 96, 64);
        let mut m = Model::new(mc, 0).unwrap();
        train_forecaster(&mut m, &samples, &cfg, |_| {}).unwrap();
        let p = predict_forecast(&m, &samples[0], 16).unwrap();
        assert_eq!((p.len(), p[0].len()), (4, 96));
        let (mse, base) = forecast_mse(&m, &samples, 16).unwrap();
        assert!(mse.is_finite() && base > 0.0);
    }
}

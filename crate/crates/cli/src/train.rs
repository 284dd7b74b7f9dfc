//! `pretrain`, `finetune` and `forecast`.

use std::path::Path;

use anyhow::Result;
use clap::Args;
use mvpformer::model::{load_checkpoint, save_checkpoint, ClassifyMode, LoraConfig, Model};
use mvpformer::objectives::{three_reference_eval, ContrastiveConfig};
use mvpformer::rng;
use mvpformer::series::{resample, segment, MultiChannelSeries, SegmentGrid};
use mvpformer::trainer::{
    self, binary_f1, forecast_samples, predict_classes, write_trace_csv, AdamWConfig, FinetuneConfig, ForecastConfig,
    ForecastSample, PretrainConfig, TraceRow,
};
use rand::seq::index::sample;

use crate::data::{load_recordings, write_gnuplot, write_metrics};
use crate::settings::Settings;
use crate::{flag, usage, Common};

pub const CHECKPOINT_DIR: &str = "checkpoint";

fn required<'a>(s: &'a Settings, key: &str) -> Result<&'a str> {
    s.opt(key).ok_or_else(|| usage(format!("--{} is required", key.replace('_', "-"))))
}

fn progress(every: usize) -> impl FnMut(&TraceRow) {
    move |r: &TraceRow| {
        if every > 0 && r.step.is_multiple_of(every) {
            log::info!("step {} loss {:.4} accuracy {:.3}", r.step, r.loss, r.accuracy);
        }
    }
}

fn emit_trace(common: &Common, trace: &[TraceRow], title: &str) -> Result<()> {
    let path = common.out.join("trace.csv");
    write_trace_csv(trace, &path)?;
    if common.emit_gnuplot {
        write_gnuplot(&common.out.join("trace.gp"), &path, title, "step", &[(2, "loss"), (3, "accuracy")], false)?;
    }
    Ok(())
}

/// Windows of every recording after resampling to the model's segment rate.
pub fn windows_of(
    series: &MultiChannelSeries,
    segment_samples: usize,
    window_s: f64,
    segment_s: f64,
    stride_s: f64,
) -> Result<Vec<SegmentGrid>> {
    let rate = segment_samples as f64 / segment_s;
    let series = resample(series, rate)?;
    Ok(segment(&series, window_s, segment_s, stride_s)?)
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// A recording CSV or a directory of `recording*.csv`.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_windows: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub window_s: Option<f64>,
    #[arg(long)]
    pub stride_s: Option<f64>,
    /// Fraction of recordings (or of windows, for a single recording) held out.
    #[arg(long)]
    pub holdout: Option<f64>,
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let s = Settings::resolve(
        "pretrain",
        true,
        a.common.profile.as_deref(),
        a.common.seed,
        a.common.config.as_deref(),
        vec![
            ("data", String::new()),
            ("steps", "1500".into()),
            ("batch_windows", "8".into()),
            ("lr", "0.001".into()),
            ("weight_decay", "0.01".into()),
            ("clip_norm", "1".into()),
            ("window_s", "10".into()),
            ("segment_s", "1".into()),
            ("stride_s", "5".into()),
            ("temperature", "0.1".into()),
            ("n_negatives", "30".into()),
            ("holdout", "0.2".into()),
            ("lookahead", "2".into()),
            ("log_every", "100".into()),
        ],
        vec![
            flag("data", &a.data),
            flag("steps", &a.steps),
            flag("batch_windows", &a.batch_windows),
            flag("lr", &a.lr),
            flag("window_s", &a.window_s),
            flag("stride_s", &a.stride_s),
            flag("holdout", &a.holdout),
        ],
    )?;
    let data = required(&s, "data")?.to_string();
    let recordings = load_recordings(&data)?;
    let model_cfg = s.model()?;
    let (window_s, segment_s, stride_s): (f64, f64, f64) =
        (s.get("window_s")?, s.get("segment_s")?, s.get("stride_s")?);
    let per_recording = recordings
        .iter()
        .map(|(_, r)| windows_of(r, model_cfg.segment_samples, window_s, segment_s, stride_s))
        .collect::<Result<Vec<_>>>()?;
    let holdout: f64 = s.get("holdout")?;
    if !(0.0..1.0).contains(&holdout) {
        return Err(usage("holdout must lie in [0, 1)"));
    }
    let (train, test): (Vec<SegmentGrid>, Vec<SegmentGrid>) = if per_recording.len() >= 2 {
        let n_test = ((per_recording.len() as f64 * holdout).ceil() as usize).min(per_recording.len() - 1);
        let split = per_recording.len() - n_test;
        (per_recording[..split].concat(), per_recording[split..].concat())
    } else {
        let all = per_recording.concat();
        let split = all.len() - (all.len() as f64 * holdout).round() as usize;
        (all[..split].to_vec(), all[split..].to_vec())
    };
    let seed = s.seed()?;
    let contrastive = ContrastiveConfig {
        temperature: s.get("temperature")?,
        n_negatives: s.get("n_negatives")?,
        ..Default::default()
    };
    let cfg = PretrainConfig {
        steps: s.get("steps")?,
        batch_windows: s.get("batch_windows")?,
        optimizer: AdamWConfig {
            lr: s.get("lr")?,
            weight_decay: s.get("weight_decay")?,
            clip_norm: Some(s.get("clip_norm")?).filter(|c: &f64| *c > 0.0),
            ..Default::default()
        },
        contrastive,
        seed,
    };
    let out = &a.common.out;
    s.write_manifest(out)?;
    log::info!("{} training windows, {} held out", train.len(), test.len());
    let mut model = Model::new(model_cfg, seed)?;
    let trace = trainer::pretrain(&mut model, &train, &cfg, progress(s.get("log_every")?))?;
    save_checkpoint(&model, out.join(CHECKPOINT_DIR))?;
    emit_trace(&a.common, &trace, "contrastive pre-training")?;

    let last = trace.last().copied();
    let mut rows = vec![
        ("train_windows", train.len().to_string()),
        ("heldout_windows", test.len().to_string()),
        ("final_train_loss", last.map_or(f64::NAN, |r| r.loss).to_string()),
        ("final_train_accuracy", last.map_or(f64::NAN, |r| r.accuracy).to_string()),
    ];
    if test.len() >= 2 {
        let (loss, acc) = trainer::evaluate_contrastive(&model, &test, &contrastive, seed)?;
        rows.push(("heldout_loss", loss.to_string()));
        rows.push(("heldout_accuracy", acc.to_string()));
        let lookahead: usize = s.get("lookahead")?;
        let (mut st, mut s2, mut sr, mut n, mut skipped) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for (i, w) in test.iter().enumerate() {
            let (emb, pred) = model.forward_with_embeddings(w)?;
            let r = three_reference_eval(&pred, &emb, lookahead, rng::derive(seed, i as u64));
            match r {
                Ok(r) => {
                    let k = r.evaluated as f64;
                    st += r.sim_true * k;
                    s2 += r.sim_two_step * k;
                    sr += r.sim_random * k;
                    n += r.evaluated;
                    skipped += r.skipped;
                }
                Err(e) => log::debug!("three-reference evaluation skipped window {i}: {e}"),
            }
        }
        if n > 0 {
            let n = n as f64;
            rows.push(("sim_true", (st / n).to_string()));
            rows.push(("sim_two_step", (s2 / n).to_string()));
            rows.push(("sim_random", (sr / n).to_string()));
            rows.push(("three_reference_skipped_cells", skipped.to_string()));
        }
        println!("held-out contrastive accuracy {acc:.4} (loss {loss:.4})");
    } else {
        log::warn!("fewer than two held-out windows; skipping held-out evaluation");
    }
    write_metrics(&out.join("eval.csv"), &rows)?;
    println!("checkpoint written to {}", out.join(CHECKPOINT_DIR).display());
    Ok(())
}

pub fn load_model(dir: &str) -> Result<Model> {
    if !Path::new(dir).exists() {
        return Err(usage(format!("checkpoint {dir} does not exist")));
    }
    load_checkpoint(dir).map_err(|e| usage(e.to_string()))
}

/// Label of the final second of each window.
pub fn window_labels(series: &MultiChannelSeries, windows: &[SegmentGrid]) -> Result<Vec<usize>> {
    let labels = series.labels().ok_or_else(|| usage("recording has no label sidecar (.events.csv)"))?;
    Ok(windows
        .iter()
        .map(|w| {
            let last = (w.start_seconds + w.window_seconds()).round() as usize;
            labels.get(last.saturating_sub(1)).copied().unwrap_or(0) as usize
        })
        .collect())
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory from `pretrain`.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Labelled recordings.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lora_rank: Option<usize>,
    #[arg(long, value_parser = ["channel_mean", "channel_concat"])]
    pub classify_mode: Option<String>,
}

pub fn finetune(a: FinetuneArgs) -> Result<()> {
    let s = Settings::resolve(
        "finetune",
        false,
        a.common.profile.as_deref(),
        a.common.seed,
        a.common.config.as_deref(),
        vec![
            ("checkpoint", String::new()),
            ("data", String::new()),
            ("steps", "300".into()),
            ("batch_windows", "8".into()),
            ("lr", "0.003".into()),
            ("lora_rank", "8".into()),
            ("lora_alpha", "16".into()),
            ("classify_mode", "channel_mean".into()),
            ("window_s", "10".into()),
            ("segment_s", "1".into()),
            ("stride_s", "1".into()),
            ("balance", "true".into()),
            ("log_every", "50".into()),
        ],
        vec![
            flag("checkpoint", &a.checkpoint),
            flag("data", &a.data),
            flag("steps", &a.steps),
            flag("lr", &a.lr),
            flag("lora_rank", &a.lora_rank),
            flag("classify_mode", &a.classify_mode),
        ],
    )?;
    let mut model = load_model(required(&s, "checkpoint")?)?;
    let recordings = load_recordings(required(&s, "data")?)?;
    let (window_s, segment_s, stride_s): (f64, f64, f64) =
        (s.get("window_s")?, s.get("segment_s")?, s.get("stride_s")?);
    let (mut windows, mut labels) = (Vec::new(), Vec::new());
    for (_, r) in &recordings {
        let w = windows_of(r, model.config().segment_samples, window_s, segment_s, stride_s)?;
        labels.extend(window_labels(r, &w)?);
        windows.extend(w);
    }
    let seed = s.seed()?;
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    if positives.is_empty() {
        return Err(usage("no positive windows; generate data with --bursts-per-hour > 0"));
    }
    if s.get::<bool>("balance")? {
        let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
        let keep = positives.len().min(negatives.len());
        let mut r = rng::stream(seed, 0xBA);
        let mut idx = positives.clone();
        idx.extend(sample(&mut r, negatives.len(), keep).into_iter().map(|k| negatives[k]));
        idx.sort_unstable();
        windows = idx.iter().map(|&i| windows[i].clone()).collect();
        labels = idx.iter().map(|&i| labels[i]).collect();
    }
    let mode: ClassifyMode = s.raw("classify_mode").parse().map_err(|e: mvpformer::Error| usage(e.to_string()))?;
    let cfg = FinetuneConfig {
        steps: s.get("steps")?,
        batch_windows: s.get("batch_windows")?,
        optimizer: AdamWConfig { lr: s.get("lr")?, weight_decay: 0.0, ..Default::default() },
        lora: LoraConfig { rank: s.get("lora_rank")?, alpha: s.get("lora_alpha")? },
        mode,
        classes: 2,
        seed,
    };
    let out = &a.common.out;
    s.write_manifest(out)?;
    let trace = trainer::finetune(&mut model, &windows, &labels, &cfg, progress(s.get("log_every")?))?;
    save_checkpoint(&model, out.join(CHECKPOINT_DIR))?;
    emit_trace(&a.common, &trace, "fine-tuning")?;
    let pred = predict_classes(&model, &windows)?;
    let acc = pred.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64;
    let f1 = binary_f1(&pred, &labels);
    let trainable = model.count_params(Model::is_finetune_param);
    let total = model.count_params(|_| true);
    write_metrics(
        &out.join("finetune.csv"),
        &[
            ("windows", labels.len().to_string()),
            ("positive_windows", labels.iter().filter(|&&y| y == 1).count().to_string()),
            ("train_accuracy", acc.to_string()),
            ("train_f1", f1.to_string()),
            ("trainable_params", trainable.to_string()),
            ("total_params", total.to_string()),
        ],
    )?;
    println!("training-set F1 {f1:.4}, accuracy {acc:.4}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub common: Common,
    /// A recording CSV or a directory of `recording*.csv`.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

/// Samples whose input and target lie before (train) or after (test)
/// `train_fraction` of each recording.
fn split_samples(
    recordings: &[(std::path::PathBuf, MultiChannelSeries)],
    lookback: usize,
    horizon: usize,
    stride: usize,
    train_fraction: f64,
) -> (Vec<ForecastSample>, Vec<ForecastSample>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, r) in recordings {
        let split = (r.len() as f64 * train_fraction).round() as usize;
        for (i, smp) in forecast_samples(r, lookback, horizon, stride).into_iter().enumerate() {
            let start = i * stride.max(1);
            if start + lookback + horizon <= split {
                train.push(smp);
            } else if start >= split {
                test.push(smp);
            }
        }
    }
    (train, test)
}

pub fn forecast(a: ForecastArgs) -> Result<()> {
    let s = Settings::resolve(
        "forecast",
        true,
        a.common.profile.as_deref(),
        a.common.seed,
        a.common.config.as_deref(),
        vec![
            ("data", String::new()),
            ("lookback", "96".into()),
            ("horizon", "96".into()),
            ("segment_samples", "16".into()),
            ("steps", "300".into()),
            ("batch", "8".into()),
            ("lr", "0.001".into()),
            ("weight_decay", "0.01".into()),
            ("stride", "24".into()),
            ("train_fraction", "0.75".into()),
            ("log_every", "50".into()),
        ],
        vec![
            flag("data", &a.data),
            flag("lookback", &a.lookback),
            flag("horizon", &a.horizon),
            flag("steps", &a.steps),
            flag("lr", &a.lr),
        ],
    )?;
    let recordings = load_recordings(required(&s, "data")?)?;
    let cfg = ForecastConfig {
        lookback: s.get("lookback")?,
        horizon: s.get("horizon")?,
        segment_samples: s.get("segment_samples")?,
        steps: s.get("steps")?,
        batch: s.get("batch")?,
        optimizer: AdamWConfig {
            lr: s.get("lr")?,
            weight_decay: s.get("weight_decay")?,
            clip_norm: Some(1.0),
            ..Default::default()
        },
        seed: s.seed()?,
    };
    let model_cfg = cfg.model_config(&s.model()?).map_err(|e| usage(e.to_string()))?;
    let train_fraction: f64 = s.get("train_fraction")?;
    let (train, test) = split_samples(&recordings, cfg.lookback, cfg.horizon, s.get("stride")?, train_fraction);
    if train.is_empty() || test.is_empty() {
        return Err(usage("recordings too short for the lookback, horizon and train fraction"));
    }
    let out = &a.common.out;
    s.write_manifest(out)?;
    let mut model = Model::new(model_cfg, cfg.seed)?;
    let trace = trainer::train_forecaster(&mut model, &train, &cfg, progress(s.get("log_every")?))?;
    save_checkpoint(&model, out.join(CHECKPOINT_DIR))?;
    emit_trace(&a.common, &trace, "forecasting")?;

    let mut pred = Vec::new();
    let mut base = Vec::new();
    let mut truth = Vec::new();
    for smp in &test {
        pred.extend(trainer::predict_forecast(&model, smp, cfg.segment_samples)?.into_iter().flatten());
        base.extend(trainer::last_value_forecast(smp, cfg.horizon).into_iter().flatten());
        truth.extend(smp.target.iter().flatten().copied());
    }
    let m = mvpformer::evaluation::forecast_metrics(&pred, &truth)?;
    let b = mvpformer::evaluation::forecast_metrics(&base, &truth)?;
    let improvement = 1.0 - m.mse / b.mse;
    write_metrics(
        &out.join("forecast.csv"),
        &[
            ("train_samples", train.len().to_string()),
            ("test_samples", test.len().to_string()),
            ("model_mse", m.mse.to_string()),
            ("model_mae", m.mae.to_string()),
            ("last_value_mse", b.mse.to_string()),
            ("last_value_mae", b.mae.to_string()),
            ("mse_improvement", improvement.to_string()),
        ],
    )?;
    println!("test MSE {:.5} vs last-value {:.5} ({:+.1}%)", m.mse, b.mse, -100.0 * improvement);
    Ok(())
}

//! Synthetic datasets for the desk-scale training runs.

use std::f64::consts::PI;

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::rng;
use crate::series::{segment, synth_generate, MultiChannelSeries, SegmentGrid, SynthConfig};

/// Recordings for pre-training: coupled oscillators whose frequencies are
/// jittered per recording so that windows of different recordings differ.
pub fn pretrain_corpus(
    recordings: usize,
    duration_s: f64,
    channels: usize,
    seed: u64,
) -> Result<Vec<MultiChannelSeries>> {
    let cfg = SynthConfig { channels, duration_s, freq_jitter: 0.2, ..SynthConfig::default() };
    (0..recordings).map(|i| synth_generate(&cfg, rng::derive(seed, i as u64))).collect()
}

/// Non-overlapping-stride windows of every recording, in recording order.
pub fn corpus_windows(
    corpus: &[MultiChannelSeries],
    window_s: f64,
    segment_s: f64,
    stride_s: f64,
) -> Result<Vec<SegmentGrid>> {
    let mut out = Vec::new();
    for s in corpus {
        out.extend(segment(s, window_s, segment_s, stride_s)?);
    }
    Ok(out)
}

/// Parameters of the burst-detection task.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstTask {
    pub channels: usize,
    pub times: usize,
    pub segment_samples: usize,
    pub amplitude: f64,
    pub burst_freq_hz: f64,
}

impl Default for BurstTask {
    fn default() -> Self {
        Self { channels: 4, times: 10, segment_samples: 64, amplitude: 1.5, burst_freq_hz: 3.0 }
    }
}

/// Balanced labelled windows: label 1 windows carry a rectified burst that
/// starts 1–3 segments before the end and lasts to the end of the window.
pub fn burst_windows(task: &BurstTask, n: usize, seed: u64) -> Result<(Vec<SegmentGrid>, Vec<usize>)> {
    if task.times < 3 {
        return Err(invalid("burst windows need at least 3 segments"));
    }
    let rate = task.segment_samples as f64;
    let cfg = SynthConfig {
        channels: task.channels,
        duration_s: task.times as f64,
        sample_rate_hz: rate,
        freq_jitter: 0.2,
        ..SynthConfig::default()
    };
    let mut r = rng::stream(seed, 0xB0);
    let mut grids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let series = synth_generate(&cfg, rng::derive(seed, i as u64))?;
        let mut grid = segment(&series, task.times as f64, 1.0, task.times as f64)?
            .pop()
            .ok_or_else(|| invalid("window longer than the generated series"))?;
        let label = i % 2;
        if label == 1 {
            let span = r.random_range(1..=3usize);
            let b0 = (task.times - span) as f64;
            let phase = r.random_range(0.0..2.0 * PI);
            for c in 0..task.channels {
                for t in task.times - span..task.times {
                    for (k, x) in grid.segment_mut(c, t).iter_mut().enumerate() {
                        let secs = t as f64 + k as f64 / rate - b0 - c as f64 * cfg.lag_s;
                        *x += task.amplitude * (2.0 * PI * task.burst_freq_hz * secs + phase).sin().abs();
                    }
                }
            }
        }
        grids.push(grid);
        labels.push(label);
    }
    Ok((grids, labels))
}

/// Lookback/horizon pair of a multichannel series.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSample {
    /// `[C][lookback]`
    pub input: Vec<Vec<f64>>,
    /// `[C][horizon]`
    pub target: Vec<Vec<f64>>,
}

/// Sliding lookback/horizon pairs every `stride` samples.
pub fn forecast_samples(
    series: &MultiChannelSeries,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Vec<ForecastSample> {
    let mut out = Vec::new();
    let mut s = 0;
    while s + lookback + horizon <= series.len() {
        out.push(ForecastSample {
            input: (0..series.channels()).map(|c| series.channel(c)[s..s + lookback].to_vec()).collect(),
            target: (0..series.channels())
                .map(|c| series.channel(c)[s + lookback..s + lookback + horizon].to_vec())
                .collect(),
        });
        s += stride.max(1);
    }
    out
}

/// Repeats the last observed value over the horizon.
pub fn last_value_forecast(sample: &ForecastSample, horizon: usize) -> Vec<Vec<f64>> {
    sample.input.iter().map(|ch| vec![*ch.last().expect("non-empty lookback"); horizon]).collect()
}

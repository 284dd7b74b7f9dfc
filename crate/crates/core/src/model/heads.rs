use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, shape, Error, Result};
use crate::tensor::{dot, EmbeddingGrid, Tensor};

/// How a classification head reads the last time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifyMode {
    /// Mean over channels, input width `d`.
    ChannelMean,
    /// Channels side by side, input width `C·d`.
    ChannelConcat,
}

impl FromStr for ClassifyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel_mean" => Ok(Self::ChannelMean),
            "channel_concat" => Ok(Self::ChannelConcat),
            _ => Err(invalid(format!("unknown classify mode {s:?}"))),
        }
    }
}

impl fmt::Display for ClassifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ChannelMean => "channel_mean",
            Self::ChannelConcat => "channel_concat",
        })
    }
}

/// Input vector of the classification head.
pub fn head_input(e: &EmbeddingGrid, mode: ClassifyMode) -> Vec<f64> {
    let last = e.times() - 1;
    match mode {
        ClassifyMode::ChannelMean => {
            let mut m = vec![0.0; e.dim()];
            for c in 0..e.channels() {
                m.iter_mut().zip(e.cell(c, last)).for_each(|(a, v)| *a += v);
            }
            m.iter_mut().for_each(|a| *a /= e.channels() as f64);
            m
        }
        ClassifyMode::ChannelConcat => (0..e.channels()).flat_map(|c| e.cell(c, last).to_vec()).collect(),
    }
}

/// Class logits from the last time step: `weight [K × in] · input + bias`.
pub fn classify_head(e: &EmbeddingGrid, mode: ClassifyMode, weight: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    let x = head_input(e, mode);
    if weight.cols() != x.len() || weight.rows() != bias.len() {
        return Err(invalid(format!(
            "head {:?} with {} biases cannot read a {}-wide {mode} input",
            weight.shape(),
            bias.len(),
            x.len()
        )));
    }
    Ok((0..weight.rows()).map(|k| dot(weight.row(k), &x) + bias[k]).collect())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Per-channel forecast `[C × horizon]` from the last time step:
/// `weight [horizon × d] · e_{c,T−1} + bias`.
pub fn forecast_head(e: &EmbeddingGrid, weight: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let horizon = weight.rows();
    if horizon == 0 || weight.cols() != e.dim() || bias.len() != horizon {
        return Err(shape(format!(
            "forecast head {:?} / {} biases do not fit embedding width {}",
            weight.shape(),
            bias.len(),
            e.dim()
        )));
    }
    let last = e.times() - 1;
    let mut out = Vec::with_capacity(e.channels() * horizon);
    for c in 0..e.channels() {
        let x = e.cell(c, last);
        out.extend((0..horizon).map(|k| dot(weight.row(k), x) + bias[k]));
    }
    Tensor::from_vec(&[e.channels(), horizon], out)
}

//! Multichannel series: containers, windowing into segment grids,
//! resampling, CSV IO and synthetic generation.

mod csv;
mod synth;

pub use self::csv::{load_csv, load_events, save_csv, save_events};
pub use self::synth::{synth_generate, SynthConfig};

use crate::error::{invalid, Result};

/// Samples of `C` equally long channels at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSeries {
    samples: Vec<Vec<f64>>,
    sample_rate_hz: f64,
    channel_ids: Vec<String>,
    labels: Option<Vec<u8>>,
}

impl MultiChannelSeries {
    pub fn new(
        samples: Vec<Vec<f64>>,
        sample_rate_hz: f64,
        channel_ids: Vec<String>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(invalid(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if samples.is_empty() {
            return Err(invalid("series has no channels"));
        }
        if channel_ids.len() != samples.len() {
            return Err(invalid(format!("{} channel ids for {} channels", channel_ids.len(), samples.len())));
        }
        let n = samples[0].len();
        if let Some(bad) = samples.iter().position(|s| s.len() != n) {
            return Err(invalid(format!("channel {bad} has {} samples, expected {n}", samples[bad].len())));
        }
        let series = Self { samples, sample_rate_hz, channel_ids, labels: None };
        match labels {
            Some(l) => series.with_labels(l),
            None => Ok(series),
        }
    }

    /// Attaches per-second labels; their count must equal the whole seconds
    /// covered by the samples.
    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        let expected = self.whole_seconds();
        if labels.len() != expected {
            return Err(invalid(format!("{} labels for {expected} whole seconds", labels.len())));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel_ids(&self) -> &[String] {
        &self.channel_ids
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c]
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    pub fn whole_seconds(&self) -> usize {
        (self.len() as f64 / self.sample_rate_hz).floor() as usize
    }
}

/// A window cut into `times` segments of `samples` values per channel.
///
/// `cells` is laid out `[channel][time][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGrid {
    pub channels: usize,
    pub times: usize,
    pub samples: usize,
    pub segment_seconds: f64,
    pub sample_rate_hz: f64,
    /// Offset of the window start within its source series.
    pub start_seconds: f64,
    pub cells: Vec<f64>,
}

impl SegmentGrid {
    pub fn new(channels: usize, times: usize, samples: usize, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != channels * times * samples {
            return Err(invalid(format!("grid {channels}x{times}x{samples} does not hold {} values", cells.len())));
        }
        Ok(Self {
            channels,
            times,
            samples,
            segment_seconds: 1.0,
            sample_rate_hz: samples as f64,
            start_seconds: 0.0,
            cells,
        })
    }

    pub fn segment(&self, c: usize, t: usize) -> &[f64] {
        let i = (c * self.times + t) * self.samples;
        &self.cells[i..i + self.samples]
    }

    pub fn segment_mut(&mut self, c: usize, t: usize) -> &mut [f64] {
        let i = (c * self.times + t) * self.samples;
        &mut self.cells[i..i + self.samples]
    }

    pub fn window_seconds(&self) -> f64 {
        self.times as f64 * self.segment_seconds
    }
}

fn is_integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let k = r.round();
    ((r - k).abs() < 1e-9 && k >= 1.0).then_some(k as usize)
}

/// Cuts a series into overlapping windows of whole segments.
///
/// Windows start every `stride_seconds`; a series shorter than one window
/// yields no grids. Samples past the last whole segment of a window are not
/// used.
pub fn segment(
    series: &MultiChannelSeries,
    window_seconds: f64,
    segment_seconds: f64,
    stride_seconds: f64,
) -> Result<Vec<SegmentGrid>> {
    if !(segment_seconds > 0.0) || !(window_seconds > 0.0) {
        return Err(invalid("window and segment durations must be positive"));
    }
    if !(stride_seconds > 0.0) {
        return Err(invalid(format!("stride must be positive, got {stride_seconds}")));
    }
    let times = is_integer_ratio(window_seconds, segment_seconds).ok_or_else(|| {
        invalid(format!("window {window_seconds}s is not a whole number of {segment_seconds}s segments"))
    })?;
    let rate = series.sample_rate_hz();
    let seg_samples = (segment_seconds * rate).round() as usize;
    if seg_samples == 0 {
        return Err(invalid("segment shorter than one sample"));
    }
    let stride_samples = ((stride_seconds * rate).round() as usize).max(1);
    let window_samples = times * seg_samples;
    let channels = series.channels();

    let mut grids = Vec::new();
    let mut start = 0usize;
    while start + window_samples <= series.len() {
        let mut cells = Vec::with_capacity(channels * window_samples);
        for c in 0..channels {
            cells.extend_from_slice(&series.channel(c)[start..start + window_samples]);
        }
        grids.push(SegmentGrid {
            channels,
            times,
            samples: seg_samples,
            segment_seconds,
            sample_rate_hz: rate,
            start_seconds: start as f64 / rate,
            cells,
        });
        start += stride_samples;
    }
    Ok(grids)
}

/// Linear-interpolation resampling to `target_hz`.
///
/// Output length is `round(n * target / source)`. Resampling to the current
/// rate returns the samples untouched.
pub fn resample(series: &MultiChannelSeries, target_hz: f64) -> Result<MultiChannelSeries> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(invalid(format!("target rate must be positive, got {target_hz}")));
    }
    let src = series.sample_rate_hz();
    if target_hz == src {
        return Ok(series.clone());
    }
    let n = series.len();
    let out_len = (n as f64 * target_hz / src).round() as usize;
    let ratio = src / target_hz;
    let samples = series
        .samples()
        .iter()
        .map(|ch| {
            (0..out_len)
                .map(|i| {
                    let pos = i as f64 * ratio;
                    let lo = (pos.floor() as usize).min(n.saturating_sub(1));
                    let hi = (lo + 1).min(n - 1);
                    let frac = pos - lo as f64;
                    if frac <= 0.0 || hi == lo {
                        ch[lo]
                    } else {
                        ch[lo] + (ch[hi] - ch[lo]) * frac
                    }
                })
                .collect()
        })
        .collect();
    let labels = series.labels().map(|l| {
        let secs = (out_len as f64 / target_hz).floor() as usize;
        let mut l = l.to_vec();
        l.resize(secs, 0);
        l
    });
    MultiChannelSeries::new(samples, target_hz, series.channel_ids().to_vec(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize, n: usize, rate: f64) -> MultiChannelSeries {
        let samples = (0..channels).map(|c| (0..n).map(|i| (c * 1000 + i) as f64).collect()).collect();
        let ids = (0..channels).map(|c| format!("ch{c}")).collect();
        MultiChannelSeries::new(samples, rate, ids, None).unwrap()
    }

    #[test]
    fn table_scale_window_layout() {
        let s = ramp(1, 512 * 500, 512.0);
        let grids = segment(&s, 500.0, 5.0, 5.0).unwrap();
        assert_eq!(grids.len(), 1);
        assert_eq!(grids[0].times, 100);
        assert_eq!(grids[0].samples, 2560);
    }

    #[test]
    fn ten_second_series_two_segments() {
        let s = ramp(2, 640, 64.0);
        let grids = segment(&s, 10.0, 5.0, 5.0).unwrap();
        assert_eq!(grids.len(), 1);
        assert_eq!(grids[0].times, 2);
        assert_eq!(grids[0].segment(1, 1)[0], 1000.0 + 320.0);
    }

    #[test]
    fn short_series_yields_nothing() {
        let s = ramp(1, 100, 10.0);
        assert!(segment(&s, 20.0, 5.0, 5.0).unwrap().is_empty());
    }

    #[test]
    fn window_must_divide_into_segments() {
        let s = ramp(1, 100, 10.0);
        assert!(matches!(segment(&s, 7.0, 5.0, 1.0), Err(crate::Error::InvalidInput(_))));
        assert!(segment(&s, 10.0, 5.0, 0.0).is_err());
    }

    #[test]
    fn consecutive_windows_overlap_by_window_minus_stride() {
        let s = ramp(1, 200, 10.0);
        let grids = segment(&s, 10.0, 2.0, 3.0).unwrap();
        assert!(grids.len() > 2);
        let a = &grids[0];
        let b = &grids[1];
        assert_eq!(b.start_seconds - a.start_seconds, 3.0);
        // sample 30 of the first window is sample 0 of the second
        assert_eq!(a.cells[30], b.cells[0]);
    }

    #[test]
    fn stride_equal_window_tiles_the_prefix() {
        let s = ramp(3, 1037, 16.0);
        let grids = segment(&s, 8.0, 2.0, 8.0).unwrap();
        for c in 0..3 {
            let joined: Vec<f64> =
                grids.iter().flat_map(|g| (0..g.times).flat_map(move |t| g.segment(c, t).to_vec())).collect();
            assert_eq!(&s.channel(c)[..joined.len()], &joined[..]);
            assert_eq!(joined.len(), 1024);
        }
    }

    #[test]
    fn resample_halves_and_identity() {
        let s = ramp(2, 2048, 1024.0);
        let r = resample(&s, 512.0).unwrap();
        assert_eq!(r.len(), 1024);
        assert_eq!(r.sample_rate_hz(), 512.0);
        let same = resample(&s, 1024.0).unwrap();
        assert_eq!(same, s);
        let twice = resample(&r, 512.0).unwrap();
        assert_eq!(twice, r);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let s = MultiChannelSeries::new(vec![vec![3.25; 1000]], 250.0, vec!["a".into()], None).unwrap();
        for target in [100.0, 333.0, 512.0, 1000.0] {
            let r = resample(&s, target).unwrap();
            assert!(r.channel(0).iter().all(|&v| v == 3.25));
        }
    }

    #[test]
    fn rejects_ragged_and_bad_labels() {
        assert!(
            MultiChannelSeries::new(vec![vec![0.0; 3], vec![0.0; 4]], 1.0, vec!["a".into(), "b".into()], None).is_err()
        );
        let s = ramp(1, 25, 10.0);
        assert!(s.clone().with_labels(vec![0, 1]).is_ok());
        assert!(s.with_labels(vec![0, 1, 0]).is_err());
    }
}

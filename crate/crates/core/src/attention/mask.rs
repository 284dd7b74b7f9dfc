use rand::Rng as _;

use crate::rng;

/// Causal support of every component plus the windowed content support,
/// both `[N × N]` over channel-major cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowMask {
    pub channels: usize,
    pub times: usize,
    /// `t' <= t`
    pub causal: Vec<bool>,
    /// `t' <= t` and `t − t' < L`
    pub content: Vec<bool>,
}

impl WindowMask {
    pub fn cells(&self) -> usize {
        self.channels * self.times
    }

    pub fn allows(&self, query: (usize, usize), key: (usize, usize)) -> bool {
        self.causal[self.pair(query, key)]
    }

    pub fn allows_content(&self, query: (usize, usize), key: (usize, usize)) -> bool {
        self.content[self.pair(query, key)]
    }

    fn pair(&self, (c, t): (usize, usize), (ck, tk): (usize, usize)) -> usize {
        (c * self.times + t) * self.cells() + ck * self.times + tk
    }
}

#[inline]
pub(crate) fn in_window(t: usize, t_key: usize, window: usize) -> bool {
    t_key <= t && t - t_key < window
}

/// Builds the causal and local-window masks for a `C × T` grid.
///
/// Time and channel terms are limited only by causality; content terms are
/// further limited to the `window` most recent steps.
pub fn causal_window_mask(times: usize, channels: usize, window: usize) -> WindowMask {
    assert!(window >= 1, "window must be at least 1");
    let n = times * channels;
    let mut causal = vec![false; n * n];
    let mut content = vec![false; n * n];
    for c in 0..channels {
        for t in 0..times {
            let q = c * times + t;
            for ck in 0..channels {
                for tk in 0..=t {
                    let k = ck * times + tk;
                    causal[q * n + k] = true;
                    content[q * n + k] = in_window(t, tk, window);
                }
            }
        }
    }
    WindowMask { channels, times, causal, content }
}

/// Per-axis drop probability `1 − sqrt(1 − r)`, chosen so that dropping
/// channels and time steps independently removes a fraction `r` of cells in
/// expectation.
pub fn axis_drop_probability(rate: f64) -> f64 {
    1.0 - (1.0 - rate).sqrt()
}

/// Keep-mask over channel-major cells: whole channels and whole time steps
/// are dropped, each independently with [`axis_drop_probability`].
pub fn structured_dropout_mask(times: usize, channels: usize, rate: f64, seed: u64) -> Vec<bool> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if rate == 0.0 {
        return vec![true; times * channels];
    }
    let p = axis_drop_probability(rate);
    let mut r = rng::stream(seed, 0xD0);
    let drop_channel: Vec<bool> = (0..channels).map(|_| r.random::<f64>() < p).collect();
    let drop_time: Vec<bool> = (0..times).map(|_| r.random::<f64>() < p).collect();
    let mut keep = Vec::with_capacity(times * channels);
    for &dc in &drop_channel {
        for &dt in &drop_time {
            keep.push(!(dc || dt));
        }
    }
    keep
}

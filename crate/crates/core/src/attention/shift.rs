//! Relative-offset to pairwise re-indexing.
//!
//! Both shifts take score blocks whose columns run over relative offsets in
//! descending order, the Transformer-XL layout:
//!
//! - time blocks are `[T × T]`, column `j` holds offset `t − t' = T − 1 − j`;
//! - channel blocks are `[C × (2C − 1)]`, column `j` holds offset
//!   `c − c' = C − 1 − j`.
//!
//! In that layout the pairwise entry `(r, s)` sits at flat position
//! `(n − 1) + r·stride + s` of the block, with `stride = T − 1` for time and
//! `2C − 2` for channels, so each shift is a single strided read rather than
//! a per-pair lookup. Time blocks then zero their future (upper) triangle.

use std::cell::Cell;

thread_local! {
    static CORRUPT_TIME: Cell<bool> = const { Cell::new(false) };
}

/// Test hook: while set, [`shift_time`] on this thread reads every row one
/// column off. Lets the verification battery prove it notices.
#[doc(hidden)]
pub fn corrupt_shift_time(on: bool) {
    CORRUPT_TIME.with(|c| c.set(on));
}

/// `[.. × T × T]` offset scores to `[.. × T × T]` pairwise scores, causal.
///
/// Any number of leading blocks is accepted; `raw.len()` must be a multiple
/// of `T²`.
pub fn shift_time(raw: &[f64], times: usize) -> Vec<f64> {
    let block = times * times;
    assert!(block > 0 && raw.len().is_multiple_of(block), "raw length must be a multiple of T^2");
    let stride = times - 1;
    let skew = usize::from(CORRUPT_TIME.with(Cell::get) && times > 1);
    let mut out = vec![0.0; raw.len()];
    for (src, dst) in raw.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
        for r in 0..times {
            let base = stride + r * stride - skew;
            // columns s <= r are past or present; the rest stays zero
            dst[r * times..r * times + r + 1].copy_from_slice(&src[base..base + r + 1]);
        }
    }
    out
}

/// `[.. × C × (2C − 1)]` offset scores to `[.. × C × C]` pairwise scores.
pub fn shift_channel(raw: &[f64], channels: usize) -> Vec<f64> {
    let width = 2 * channels - 1;
    let block = channels * width;
    assert!(channels > 0 && raw.len().is_multiple_of(block), "raw length must be a multiple of C(2C-1)");
    let stride = 2 * channels - 2;
    let n_blocks = raw.len() / block;
    let mut out = vec![0.0; n_blocks * channels * channels];
    for (src, dst) in raw.chunks_exact(block).zip(out.chunks_exact_mut(channels * channels)) {
        for r in 0..channels {
            let base = (channels - 1) + r * stride;
            dst[r * channels..(r + 1) * channels].copy_from_slice(&src[base..base + channels]);
        }
    }
    out
}

/// Column of a time block holding offset `t − t'`.
#[inline]
pub fn time_column(times: usize, offset: usize) -> usize {
    times - 1 - offset
}

/// Column of a channel block holding offset `c − c'`.
#[inline]
pub fn channel_column(channels: usize, offset: isize) -> usize {
    (channels as isize - 1 - offset) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn single_step_is_identity() {
        assert_eq!(shift_time(&[4.5], 1), vec![4.5]);
        assert_eq!(shift_channel(&[-2.0], 1), vec![-2.0]);
        assert_eq!(shift_time(&[1.0, 2.0, 3.0], 1), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn time_hand_trace() {
        // row r carries sentinels 10r + offset in the descending-offset layout
        let mut raw = vec![0.0; 9];
        for r in 0..3 {
            for off in 0..3 {
                raw[r * 3 + time_column(3, off)] = (10 * r + off) as f64;
            }
        }
        let out = shift_time(&raw, 3);
        #[rustfmt::skip]
        let expect = vec![
             0.0,  0.0,  0.0,
            11.0, 10.0,  0.0,
            22.0, 21.0, 20.0,
        ];
        assert_eq!(out, expect);
    }

    #[test]
    fn channel_hand_trace() {
        // entry (r, s) must hold the sentinel for offset r − s
        let mut raw = vec![0.0; 15];
        for r in 0..3 {
            for off in -2isize..=2 {
                raw[r * 5 + channel_column(3, off)] = 100.0 * r as f64 + off as f64;
            }
        }
        let out = shift_channel(&raw, 3);
        #[rustfmt::skip]
        let expect = vec![
              0.0,  -1.0,  -2.0,
            101.0, 100.0,  99.0,
            202.0, 201.0, 200.0,
        ];
        assert_eq!(out, expect);
    }

    #[test]
    fn time_matches_pairwise_recomputation() {
        let mut r = rng::seeded(3);
        for times in 1..8 {
            let d = 5;
            let q: Vec<f64> = (0..times * d).map(|_| r.random_range(-1.0..1.0)).collect();
            let code: Vec<f64> = (0..times * d).map(|_| r.random_range(-1.0..1.0)).collect();
            let dotp = |t: usize, off: usize| -> f64 { (0..d).map(|k| q[t * d + k] * code[off * d + k]).sum() };
            let mut raw = vec![0.0; times * times];
            for t in 0..times {
                for off in 0..times {
                    raw[t * times + time_column(times, off)] = dotp(t, off);
                }
            }
            let out = shift_time(&raw, times);
            for t in 0..times {
                for tp in 0..times {
                    let want = if tp <= t { dotp(t, t - tp) } else { 0.0 };
                    assert!((out[t * times + tp] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn channel_matches_pairwise_recomputation() {
        let mut r = rng::seeded(4);
        for channels in 1..7 {
            let d = 3;
            let width = 2 * channels - 1;
            let p: Vec<f64> = (0..channels * d).map(|_| r.random_range(-1.0..1.0)).collect();
            let code: Vec<f64> = (0..width * d).map(|_| r.random_range(-1.0..1.0)).collect();
            // code row index = offset + C − 1
            let dotp = |c: usize, off: isize| -> f64 {
                let row = (off + channels as isize - 1) as usize;
                (0..d).map(|k| p[c * d + k] * code[row * d + k]).sum()
            };
            let mut raw = vec![0.0; channels * width];
            for c in 0..channels {
                for off in -(channels as isize - 1)..channels as isize {
                    raw[c * width + channel_column(channels, off)] = dotp(c, off);
                }
            }
            let out = shift_channel(&raw, channels);
            for c in 0..channels {
                for cp in 0..channels {
                    let want = dotp(c, c as isize - cp as isize);
                    assert!((out[c * channels + cp] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batched_blocks_shift_independently() {
        let raw: Vec<f64> = (0..18).map(f64::from).collect();
        let out = shift_time(&raw, 3);
        assert_eq!(&out[9..], &shift_time(&raw[9..], 3)[..]);
        let raw: Vec<f64> = (0..30).map(f64::from).collect();
        let out = shift_channel(&raw, 3);
        assert_eq!(&out[9..], &shift_channel(&raw[15..], 3)[..]);
    }
}

use mvpformer::attention::{
    axis_drop_probability, causal_window_mask, efficient_mvpa_logits, mvpa_forward, naive_mvpa_logits,
    structured_dropout_mask, AttentionConfig, MvpaDims, MvpaParams, OpCounters,
};
use mvpformer::rng;
use mvpformer::tensor::EmbeddingGrid;
use proptest::prelude::*;

fn dims(d: usize, h: usize, g: usize) -> MvpaDims {
    MvpaDims { embed_dim: d, n_heads: h, n_kv_heads: g, max_times: 8, max_channels: 8 }
}

fn setup(t: usize, c: usize, h: usize, g: usize, seed: u64) -> (EmbeddingGrid, MvpaParams) {
    let mut r = rng::seeded(seed);
    let params = MvpaParams::init(dims(8, h, g), 0.5, &mut r).unwrap();
    (EmbeddingGrid::random(c, t, 8, 1.0, &mut r), params)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn single_cell_grid_has_one_logit_per_head() {
    let (e, p) = setup(1, 1, 2, 1, 3);
    let l = naive_mvpa_logits(&e, &p, &AttentionConfig::new(8, 1)).unwrap();
    assert_eq!(l.combined.len(), 2);
    assert_eq!(l.mask, vec![true]);
}

#[test]
fn window_of_one_keeps_only_same_step_content() {
    let m = causal_window_mask(3, 2, 1);
    let n = 6;
    for q in 0..n {
        for k in 0..n {
            let (qt, kt) = (q % 3, k % 3);
            assert_eq!(m.causal[q * n + k], kt <= qt);
            assert_eq!(m.content[q * n + k], kt == qt);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn efficient_matches_naive(t in 1usize..7, c in 1usize..7, window in 1usize..5, gqa in 0usize..2, seed in any::<u64>()) {
        let (h, g) = if gqa == 0 { (2, 2) } else { (4, 2) };
        let (e, p) = setup(t, c, h, g, seed);
        let cfg = AttentionConfig::new(8, window);
        let naive = naive_mvpa_logits(&e, &p, &cfg).unwrap();
        let fast = efficient_mvpa_logits(&e, &p, &cfg, &mut OpCounters::default()).unwrap();
        prop_assert_eq!(&naive.mask, &fast.mask);
        prop_assert_eq!(&naive.content_mask, &fast.content_mask);
        prop_assert!(max_diff(&naive.combined, &fast.combined) < 1e-10);
        prop_assert!(max_diff(&naive.content, &fast.content) < 1e-10);
    }

    #[test]
    fn counters_follow_closed_forms(t in 1usize..9, c in 1usize..7, window in 1usize..6, seed in any::<u64>()) {
        let (e, p) = setup(t, c, 4, 2, seed);
        let mut n = OpCounters::default();
        efficient_mvpa_logits(&e, &p, &AttentionConfig::new(8, window), &mut n).unwrap();
        let (h, t, c, l) = (4u64, t as u64, c as u64, window as u64);
        prop_assert_eq!(n.time_dots, h * c * t * t);
        prop_assert_eq!(n.channel_dots, h * t * c * (2 * c - 1));
        prop_assert_eq!(n.content_dots, h * c * c * (0..t).map(|s| (s + 1).min(l)).sum::<u64>());
        prop_assert!(n.content_dots <= h * c * c * t * l);
    }

    #[test]
    fn future_cells_never_change_the_past(t in 2usize..7, c in 1usize..5, cut in 0usize..6, seed in any::<u64>()) {
        let cut = cut % (t - 1);
        let (e, p) = setup(t, c, 2, 1, seed);
        let cfg = AttentionConfig::new(8, 3);
        let before = mvpa_forward(&e, &p, &cfg, None).unwrap();
        let mut poked = e.clone();
        let mut r = rng::seeded(seed ^ 1);
        let noise = EmbeddingGrid::random(c, t, 8, 5.0, &mut r);
        for ch in 0..c {
            for s in cut + 1..t {
                poked.cell_mut(ch, s).copy_from_slice(noise.cell(ch, s));
            }
        }
        let after = mvpa_forward(&poked, &p, &cfg, None).unwrap();
        for ch in 0..c {
            for s in 0..=cut {
                prop_assert_eq!(before.cell(ch, s), after.cell(ch, s));
            }
        }
    }

    #[test]
    fn time_logits_depend_on_lag_and_channel_logits_ignore_key_time(t in 2usize..7, c in 1usize..5, seed in any::<u64>()) {
        let (e, p) = setup(t, c, 2, 2, seed);
        let l = efficient_mvpa_logits(&e, &p, &AttentionConfig::new(8, 2), &mut OpCounters::default()).unwrap();
        for h in 0..2 {
            for qc in 0..c {
                for kc in 0..c {
                    for qt in 0..t {
                        let q = qc * t + qt;
                        for kt in 0..=qt {
                            let k = kc * t + kt;
                            // The time term depends on the query cell and the lag only.
                            if kc > 0 {
                                prop_assert_eq!(l.time[l.index(h, q, k)], l.time[l.index(h, q, kt)]);
                            }
                            prop_assert_eq!(l.channel[l.index(h, q, k)], l.channel[l.index(h, q, kc * t)]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dropout_masks_drop_whole_rows_and_columns(t in 1usize..12, c in 1usize..12, seed in any::<u64>()) {
        let keep = structured_dropout_mask(t, c, 0.3, seed);
        prop_assert_eq!(keep.len(), t * c);
        for ch in 0..c {
            for s in 0..t {
                let k = keep[ch * t + s];
                let channel_alive = (0..t).any(|x| keep[ch * t + x]);
                let time_alive = (0..c).any(|x| keep[x * t + s]);
                prop_assert_eq!(k, channel_alive && time_alive);
            }
        }
    }
}

#[test]
fn axis_probability_composes_to_the_cell_rate() {
    for r in [0.0, 0.05, 0.1, 0.5, 0.9] {
        let p = axis_drop_probability(r);
        assert!((1.0 - (1.0 - p) * (1.0 - p) - r).abs() < 1e-12);
    }
}

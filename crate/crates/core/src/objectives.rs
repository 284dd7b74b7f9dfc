//! Next-segment contrastive objective, negative sampling and the
//! three-reference check of prediction quality.

use rand::seq::index;
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::tensor::{dot, EmbeddingGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub n_negatives: usize,
    /// Count the positive in the normaliser (InfoNCE). Without it the loss
    /// is unbounded below.
    pub include_positive: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { temperature: 0.1, n_negatives: 30, include_positive: true }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(invalid("temperature must be positive"));
        }
        if self.n_negatives == 0 {
            return Err(invalid("at least one negative is required"));
        }
        Ok(())
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// `(s, ∂s/∂a, ∂s/∂b)` for `s = cosine_sim(a, b)`; zero gradients when
/// either vector is zero.
pub fn cosine_sim_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let s = dot(a, b) / (na * nb);
    let da = a.iter().zip(b).map(|(x, y)| y / (na * nb) - s * x / (na * na)).collect();
    let db = a.iter().zip(b).map(|(x, y)| x / (na * nb) - s * y / (nb * nb)).collect();
    (s, da, db)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Loss of one prediction `o` against its target `positive` and the
/// confounders `negatives`.
pub fn contrastive_loss<V: AsRef<[f64]>>(o: &[f64], positive: &[f64], negatives: &[V], cfg: &ContrastiveConfig) -> f64 {
    let lp = cosine_sim(o, positive) / cfg.temperature;
    let ln: Vec<f64> = negatives.iter().map(|z| cosine_sim(o, z.as_ref()) / cfg.temperature).collect();
    let pos = cfg.include_positive.then_some(lp);
    log_sum_exp(pos.into_iter().chain(ln.iter().copied())) - lp
}

/// Loss and its gradients with respect to `o` and `positive`; negatives are
/// treated as constants.
pub fn contrastive_loss_grad<V: AsRef<[f64]>>(
    o: &[f64],
    positive: &[f64],
    negatives: &[V],
    cfg: &ContrastiveConfig,
) -> (f64, Vec<f64>, Vec<f64>) {
    let tau = cfg.temperature;
    let (sp, dpo, dpp) = cosine_sim_grad(o, positive);
    let negs: Vec<_> = negatives.iter().map(|z| cosine_sim_grad(o, z.as_ref())).collect();
    let lp = sp / tau;
    let pos = cfg.include_positive.then_some(lp);
    let lse = log_sum_exp(pos.into_iter().chain(negs.iter().map(|n| n.0 / tau)));
    let loss = lse - lp;

    let w_pos = if cfg.include_positive { (lp - lse).exp() } else { 0.0 } - 1.0;
    let mut d_o: Vec<f64> = dpo.iter().map(|g| w_pos * g / tau).collect();
    let d_pos: Vec<f64> = dpp.iter().map(|g| w_pos * g / tau).collect();
    for (s, dz, _) in &negs {
        let w = (s / tau - lse).exp() / tau;
        for (d, g) in d_o.iter_mut().zip(dz) {
            *d += w * g;
        }
    }
    (loss, d_o, d_pos)
}

/// Whether the positive is strictly more similar to `o` than every negative.
pub fn ranks_first<V: AsRef<[f64]>>(o: &[f64], positive: &[f64], negatives: &[V]) -> bool {
    let sp = cosine_sim(o, positive);
    negatives.iter().all(|z| sp > cosine_sim(o, z.as_ref()))
}

/// Location of a cell inside a batch of grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellRef {
    pub window: usize,
    /// Channel-major cell index within the window.
    pub cell: usize,
}

fn draw(pool: usize, n: usize, r: &mut rng::Rng) -> Vec<usize> {
    if pool >= n {
        index::sample(r, pool, n).into_vec()
    } else {
        (0..n).map(|_| r.random_range(0..pool)).collect()
    }
}

/// Draws `n` cells uniformly from the windows other than `target_window`,
/// without replacement unless the pool holds fewer than `n` cells.
/// `cells_per_window[w]` is the number of cells of window `w`.
pub fn sample_negative_cells(
    cells_per_window: &[usize],
    target_window: usize,
    n: usize,
    r: &mut rng::Rng,
) -> Result<Vec<CellRef>> {
    if cells_per_window.len() < 2 {
        return Err(Error::InsufficientData(
            "negatives come from other windows, so a batch needs at least 2 windows \
             (use sample_negatives_within for single-window batches)"
                .into(),
        ));
    }
    if target_window >= cells_per_window.len() {
        return Err(invalid(format!("window {target_window} is outside the batch")));
    }
    let others: Vec<usize> = (0..cells_per_window.len()).filter(|&w| w != target_window).collect();
    let pool: usize = others.iter().map(|&w| cells_per_window[w]).sum();
    if pool == 0 {
        return Err(Error::InsufficientData("other windows hold no cells".into()));
    }
    Ok(draw(pool, n, r)
        .into_iter()
        .map(|mut k| {
            for &w in &others {
                if k < cells_per_window[w] {
                    return CellRef { window: w, cell: k };
                }
                k -= cells_per_window[w];
            }
            unreachable!("draw index below pool size")
        })
        .collect())
}

/// Embeddings of `n` negatives for a target in `target_window`.
pub fn sample_negatives(batch: &[EmbeddingGrid], target_window: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sizes: Vec<usize> = batch.iter().map(|g| g.cells()).collect();
    let mut r = rng::seeded(seed);
    let refs = sample_negative_cells(&sizes, target_window, n, &mut r)?;
    Ok(refs
        .iter()
        .map(|c| {
            let g = &batch[c.window];
            let d = g.dim();
            g.data()[c.cell * d..(c.cell + 1) * d].to_vec()
        })
        .collect())
}

/// Single-window fallback: negatives from the same window, excluding the
/// positive cell.
pub fn sample_negatives_within(
    grid: &EmbeddingGrid,
    positive: (usize, usize),
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    log::warn!("sampling negatives from the target's own window; batch has a single window");
    let skip = grid.index(positive.0, positive.1);
    let pool = grid.cells() - 1;
    if pool == 0 {
        return Err(Error::InsufficientData("window has a single cell".into()));
    }
    let mut r = rng::seeded(seed);
    Ok(draw(pool, n, &mut r)
        .into_iter()
        .map(|k| {
            let cell = if k >= skip { k + 1 } else { k };
            let d = grid.dim();
            grid.data()[cell * d..(cell + 1) * d].to_vec()
        })
        .collect())
}

/// Mean cosine similarities of predictions against three references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeReference {
    /// Against the next segment, the training target.
    pub sim_true: f64,
    /// Against the segment after next.
    pub sim_two_step: f64,
    /// Against a uniformly drawn segment within the lookahead.
    pub sim_random: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Default lookahead in segments for the random reference (two minutes).
pub fn default_lookahead(segment_seconds: f64) -> usize {
    ((120.0 / segment_seconds).round() as usize).max(2)
}

/// Compares `predictions` (cell `(c, t)` predicts `(c, t + 1)`) with
/// `embeddings` at `t + 1`, `t + 2` and a random `t' ∈ (t, t + lookahead]`.
/// Cells without the full lookahead are skipped and counted.
pub fn three_reference_eval(
    predictions: &EmbeddingGrid,
    embeddings: &EmbeddingGrid,
    lookahead: usize,
    seed: u64,
) -> Result<ThreeReference> {
    if predictions.channels() != embeddings.channels()
        || predictions.times() != embeddings.times()
        || predictions.dim() != embeddings.dim()
    {
        return Err(invalid("prediction and embedding grids differ in shape"));
    }
    if lookahead < 2 {
        return Err(invalid("lookahead must cover at least two segments"));
    }
    let mut r = rng::seeded(seed);
    let (mut st, mut s2, mut sr) = (0.0, 0.0, 0.0);
    let (mut evaluated, mut skipped) = (0, 0);
    for c in 0..predictions.channels() {
        for t in 0..predictions.times() {
            if t + lookahead >= predictions.times() {
                skipped += 1;
                continue;
            }
            let o = predictions.cell(c, t);
            let tr = t + r.random_range(1..=lookahead);
            st += cosine_sim(o, embeddings.cell(c, t + 1));
            s2 += cosine_sim(o, embeddings.cell(c, t + 2));
            sr += cosine_sim(o, embeddings.cell(c, tr));
            evaluated += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::InsufficientData(format!(
            "{} time steps leave no cell with a {lookahead}-segment lookahead",
            predictions.times()
        )));
    }
    let n = evaluated as f64;
    Ok(ThreeReference { sim_true: st / n, sim_two_step: s2 / n, sim_random: sr / n, evaluated, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine_sim(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert!((cosine_sim(&[1.0, 0.0], &[1.0, 1.0]) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn closed_forms() {
        let cfg = ContrastiveConfig::default();
        let o = [1.0, 0.0];
        let negs = vec![[1.0, 0.0]; 30];
        assert!((contrastive_loss(&o, &[1.0, 0.0], &negs, &cfg) - 31f64.ln()).abs() < 1e-12);
        let negs = vec![[0.0, 1.0]; 30];
        let want = (1.0 + 30.0 * (-10f64).exp()).ln();
        assert!((contrastive_loss(&o, &[2.0, 0.0], &negs, &cfg) - want).abs() < 1e-15);
    }

    #[test]
    fn large_temperature_approaches_uniform() {
        let cfg = ContrastiveConfig { temperature: 1e9, ..Default::default() };
        let negs: Vec<[f64; 2]> = (0..30).map(|i| [i as f64, 1.0]).collect();
        let l = contrastive_loss(&[0.3, -1.0], &[1.0, 2.0], &negs, &cfg);
        assert!((l - 31f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn literal_form_can_go_negative() {
        let cfg = ContrastiveConfig { include_positive: false, n_negatives: 1, ..Default::default() };
        assert!(contrastive_loss(&[1.0, 0.0], &[1.0, 0.0], &[[0.0, 1.0]], &cfg) < 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng::seeded(2);
        let d = 6;
        let mut v = || (0..d).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let o = v();
        let p = v();
        let negs: Vec<Vec<f64>> = (0..5).map(|_| v()).collect();
        for include_positive in [true, false] {
            let cfg = ContrastiveConfig { include_positive, ..Default::default() };
            let (_, d_o, d_p) = contrastive_loss_grad(&o, &p, &negs, &cfg);
            let h = 1e-6;
            for i in 0..d {
                let mut a = o.clone();
                a[i] += h;
                let mut b = o.clone();
                b[i] -= h;
                let fd = (contrastive_loss(&a, &p, &negs, &cfg) - contrastive_loss(&b, &p, &negs, &cfg)) / (2.0 * h);
                assert!((fd - d_o[i]).abs() < 1e-5 * (1.0 + fd.abs()));
                let mut a = p.clone();
                a[i] += h;
                let mut b = p.clone();
                b[i] -= h;
                let fd = (contrastive_loss(&o, &a, &negs, &cfg) - contrastive_loss(&o, &b, &negs, &cfg)) / (2.0 * h);
                assert!((fd - d_p[i]).abs() < 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn negatives_come_from_other_windows() {
        let mut r = rng::seeded(0);
        let refs = sample_negative_cells(&[12, 12], 0, 30, &mut r).unwrap();
        assert_eq!(refs.len(), 30);
        assert!(refs.iter().all(|c| c.window == 1 && c.cell < 12));
        let refs = sample_negative_cells(&[40, 40, 40], 1, 30, &mut r).unwrap();
        let distinct: std::collections::HashSet<_> = refs.iter().collect();
        assert_eq!(distinct.len(), 30);
        assert!(refs.iter().all(|c| c.window != 1));
        assert!(sample_negative_cells(&[40], 0, 30, &mut r).is_err());
    }

    #[test]
    fn negative_sampling_is_seeded() {
        let mut r = rng::seeded(5);
        let a = EmbeddingGrid::random(2, 3, 4, 1.0, &mut r);
        let b = EmbeddingGrid::random(2, 3, 4, 1.0, &mut r);
        let batch = [a, b];
        assert_eq!(sample_negatives(&batch, 0, 8, 3).unwrap(), sample_negatives(&batch, 0, 8, 3).unwrap());
    }

    #[test]
    fn fallback_never_returns_positive() {
        let mut grid = EmbeddingGrid::zeros(2, 3, 1);
        for (i, v) in grid.data_mut().iter_mut().enumerate() {
            *v = i as f64;
        }
        for seed in 0..50 {
            let negs = sample_negatives_within(&grid, (1, 1), 10, seed).unwrap();
            assert!(negs.iter().all(|z| z[0] != grid.index(1, 1) as f64));
        }
    }

    #[test]
    fn three_reference_copy_model() {
        // predictions that copy the input give the lag-1 autocorrelation
        let mut r = rng::seeded(9);
        let e = EmbeddingGrid::random(2, 8, 5, 1.0, &mut r);
        let res = three_reference_eval(&e, &e, 3, 0).unwrap();
        let mut want = 0.0;
        for c in 0..2 {
            for t in 0..5 {
                want += cosine_sim(e.cell(c, t), e.cell(c, t + 1));
            }
        }
        assert!((res.sim_true - want / 10.0).abs() < 1e-12);
        assert_eq!((res.evaluated, res.skipped), (10, 6));
        assert!(three_reference_eval(&e, &e, 8, 0).is_err());
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_scale_invariant(
            o in prop::collection::vec(-1.0f64..1.0, 4),
            p in prop::collection::vec(-1.0f64..1.0, 4),
            z in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6),
            k in 0.1f64..10.0,
        ) {
            let cfg = ContrastiveConfig::default();
            let l = contrastive_loss(&o, &p, &z, &cfg);
            prop_assert!(l >= 0.0);
            let os: Vec<f64> = o.iter().map(|v| v * k).collect();
            prop_assert!((contrastive_loss(&os, &p, &z, &cfg) - l).abs() < 1e-9);
        }

        #[test]
        fn loss_decreases_with_positive_similarity(a in 0.0f64..1.4, b in 0.0f64..1.4) {
            prop_assume!((a - b).abs() > 1e-6);
            let cfg = ContrastiveConfig::default();
            let negs = vec![[0.0, 1.0]; 3];
            let la = contrastive_loss(&[1.0, 0.0], &[a.cos(), a.sin()], &negs, &cfg);
            let lb = contrastive_loss(&[1.0, 0.0], &[b.cos(), b.sin()], &negs, &cfg);
            prop_assert_eq!(a < b, la < lb);
        }
    }
}

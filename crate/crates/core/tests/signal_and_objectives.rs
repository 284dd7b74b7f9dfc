use mvpformer::objectives::{contrastive_loss, ContrastiveConfig};
use mvpformer::wavelet::{dwt_db4, idwt_db4, max_level, WaveletCoeffs};
use proptest::prelude::*;

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[test]
fn impulse_energy_survives_every_level() {
    let mut x = vec![0.0; 64];
    x[17] = 1.0;
    for level in 1..=max_level(64) {
        let c = dwt_db4(&x, level).unwrap();
        assert_eq!(c.total_len(), 64);
        assert!((energy(&c.flatten()) - 1.0).abs() < 1e-12, "level {level}");
    }
}

#[test]
fn constant_signal_lands_in_the_approximation() {
    let x = vec![2.0; 32];
    let c = dwt_db4(&x, 2).unwrap();
    for band in &c.bands[1..] {
        assert!(band.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn uniform_similarity_loss_is_ln_31() {
    let o = [1.0, 0.0, 0.0];
    let negatives = vec![[1.0, 0.0, 0.0]; 30];
    let loss = contrastive_loss(&o, &o, &negatives, &ContrastiveConfig::default());
    assert!((loss - 31f64.ln()).abs() < 1e-9);
}

#[test]
fn orthogonal_confounders_give_the_perfect_loss() {
    let o = [1.0, 0.0];
    let negatives = vec![[0.0, 1.0]; 30];
    let loss = contrastive_loss(&o, &o, &negatives, &ContrastiveConfig::default());
    let want = (1.0 + 30.0 * (-10f64).exp()).ln();
    assert!((loss - want).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dwt_is_orthonormal(x in prop::collection::vec(-10.0f64..10.0, 64), level in 1usize..4) {
        let c = dwt_db4(&x, level).unwrap();
        prop_assert!((energy(&c.flatten()) - energy(&x)).abs() <= 1e-8 * energy(&x).max(1.0));
        let back = idwt_db4(&c).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-8);
        }
        let again = WaveletCoeffs::from_flat(&c.flatten(), level).unwrap();
        prop_assert_eq!(again, c);
    }

    #[test]
    fn contrastive_loss_is_scale_invariant_and_positive(
        o in prop::collection::vec(-1.0f64..1.0, 4),
        p in prop::collection::vec(-1.0f64..1.0, 4),
        negs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..8),
        k in 0.1f64..10.0,
    ) {
        prop_assume!(o.iter().any(|v| v.abs() > 1e-3) && p.iter().any(|v| v.abs() > 1e-3));
        let cfg = ContrastiveConfig::default();
        let a = contrastive_loss(&o, &p, &negs, &cfg);
        let scaled: Vec<f64> = o.iter().map(|v| v * k).collect();
        prop_assert!((a - contrastive_loss(&scaled, &p, &negs, &cfg)).abs() < 1e-9);
        prop_assert!(a > 0.0);
    }
}

//! Periodized db4 filter bank and the segment encoder.
//!
//! Each analysis step computes
//! `a[k] = Σ_j lo[j] · x[(2k + 4 − j) mod n]` and the same with `hi` for the
//! detail band, which matches the usual "periodization" boundary mode: every
//! level halves the approximation and the total coefficient count equals the
//! input length. Bands are flattened `[approx_L, detail_L, …, detail_1]`.

use crate::error::{invalid, shape, Result};
use crate::series::SegmentGrid;
use crate::tensor::{matmul_nt, EmbeddingGrid, Tensor};

pub const DB4_TAPS: usize = 8;

/// Orthonormal db4 decomposition low-pass filter.
pub const DB4_DEC_LO: [f64; DB4_TAPS] = [
    -0.010597401785069032,
    0.0328830116668852,
    0.030841381835560764,
    -0.18703481171909309,
    -0.027983769416859854,
    0.6308807679298589,
    0.7148465705529157,
    0.2303778133088965,
];

/// Quadrature mirror of [`DB4_DEC_LO`]: `hi[j] = (−1)^(j+1) · lo[7 − j]`.
pub const DB4_DEC_HI: [f64; DB4_TAPS] = [
    -0.2303778133088965,
    0.7148465705529157,
    -0.6308807679298589,
    -0.027983769416859854,
    0.18703481171909309,
    0.030841381835560764,
    -0.0328830116668852,
    -0.010597401785069032,
];

const PHASE: usize = DB4_TAPS / 2;

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    /// `[approx_L, detail_L, detail_{L−1}, …, detail_1]`
    pub bands: Vec<Vec<f64>>,
    pub level: usize,
}

impl WaveletCoeffs {
    pub fn total_len(&self) -> usize {
        self.bands.iter().map(Vec::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.bands.concat()
    }

    /// Splits a flat coefficient vector back into bands for `level`.
    pub fn from_flat(flat: &[f64], level: usize) -> Result<Self> {
        let n = flat.len();
        if level == 0 || !n.is_multiple_of(1 << level) {
            return Err(invalid(format!("{n} coefficients cannot form {level} levels")));
        }
        let mut bands = Vec::with_capacity(level + 1);
        let mut len = n >> level;
        bands.push(flat[..len].to_vec());
        let mut pos = len;
        for _ in 0..level {
            bands.push(flat[pos..pos + len].to_vec());
            pos += len;
            len *= 2;
        }
        Ok(Self { bands, level })
    }
}

/// Largest admissible decomposition level: `floor(log2(n / (taps − 1)))`.
pub fn max_level(n: usize) -> usize {
    let mut level = 0;
    while (DB4_TAPS - 1) << (level + 1) <= n {
        level += 1;
    }
    level
}

fn analysis_step(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for k in 0..half {
        let mut sa = 0.0;
        let mut sd = 0.0;
        for j in 0..DB4_TAPS {
            // (2k + PHASE − j) mod n, kept non-negative
            let idx = (2 * k + PHASE + n * DB4_TAPS - j) % n;
            sa += DB4_DEC_LO[j] * x[idx];
            sd += DB4_DEC_HI[j] * x[idx];
        }
        a[k] = sa;
        d[k] = sd;
    }
    (a, d)
}

fn synthesis_step(a: &[f64], d: &[f64]) -> Vec<f64> {
    let n = 2 * a.len();
    let mut x = vec![0.0; n];
    for k in 0..a.len() {
        for j in 0..DB4_TAPS {
            let idx = (2 * k + PHASE + n * DB4_TAPS - j) % n;
            x[idx] += DB4_DEC_LO[j] * a[k] + DB4_DEC_HI[j] * d[k];
        }
    }
    x
}

/// Multi-level periodized db4 decomposition.
pub fn dwt_db4(x: &[f64], level: usize) -> Result<WaveletCoeffs> {
    if level == 0 {
        return Err(invalid("decomposition level must be at least 1"));
    }
    let admissible = max_level(x.len());
    if level > admissible {
        return Err(invalid(format!(
            "level {level} exceeds the admissible maximum {admissible} for length {}",
            x.len()
        )));
    }
    if !x.len().is_multiple_of(1 << level) {
        return Err(invalid(format!("length {} is not divisible by 2^{level}", x.len())));
    }
    let mut details = Vec::with_capacity(level);
    let mut approx = x.to_vec();
    for _ in 0..level {
        let (a, d) = analysis_step(&approx);
        details.push(d);
        approx = a;
    }
    let mut bands = Vec::with_capacity(level + 1);
    bands.push(approx);
    bands.extend(details.into_iter().rev());
    Ok(WaveletCoeffs { bands, level })
}

/// Inverse of [`dwt_db4`].
pub fn idwt_db4(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    if coeffs.level == 0 || coeffs.bands.len() != coeffs.level + 1 {
        return Err(invalid(format!(
            "{} bands do not describe a level-{} decomposition",
            coeffs.bands.len(),
            coeffs.level
        )));
    }
    let mut approx = coeffs.bands[0].clone();
    for detail in &coeffs.bands[1..] {
        if detail.len() != approx.len() || approx.is_empty() {
            return Err(invalid(format!(
                "band of length {} cannot pair with approximation of length {}",
                detail.len(),
                approx.len()
            )));
        }
        approx = synthesis_step(&approx, detail);
    }
    Ok(approx)
}

/// `y_i = gain_i · x_i / sqrt(mean(x²) + eps)`.
pub fn rms_norm(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    debug_assert_eq!(x.len(), gain.len());
    let inv = inv_rms(x, eps);
    x.iter().zip(gain).map(|(v, g)| g * v * inv).collect()
}

pub(crate) fn inv_rms(x: &[f64], eps: f64) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    1.0 / (ms + eps).sqrt()
}

/// Linear projection applied to the normalised wavelet coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `[d × n_input]`
    pub projection: Tensor,
    /// `[d]`
    pub bias: Vec<f64>,
    pub level: usize,
}

impl EncoderParams {
    pub fn embed_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn input_len(&self) -> usize {
        self.projection.cols()
    }
}

/// Normalised wavelet features of every cell, `[C·T × S]` in channel-major
/// cell order. This is the parameter-free half of the encoder.
pub fn wavelet_features(grid: &SegmentGrid, level: usize) -> Result<Tensor> {
    let unit = vec![1.0; grid.samples];
    let mut out = Vec::with_capacity(grid.cells.len());
    for c in 0..grid.channels {
        for t in 0..grid.times {
            let coeffs = dwt_db4(grid.segment(c, t), level)?;
            out.extend(rms_norm(&coeffs.flatten(), &unit, DEFAULT_EPS));
        }
    }
    Tensor::from_vec(&[grid.channels * grid.times, grid.samples], out)
}

/// `e_{c,t} = projection · rmsnorm(flatten(dwt(x_{c,t}))) + bias`, per cell.
pub fn encode(grid: &SegmentGrid, params: &EncoderParams) -> Result<EmbeddingGrid> {
    if grid.samples != params.input_len() {
        return Err(shape(format!(
            "segment length {} does not match encoder input {}",
            grid.samples,
            params.input_len()
        )));
    }
    let d = params.embed_dim();
    if params.bias.len() != d {
        return Err(shape(format!("bias length {} != {d}", params.bias.len())));
    }
    let feats = wavelet_features(grid, params.level)?;
    let n = feats.rows();
    let mut out = matmul_nt(feats.data(), params.projection.data(), n, grid.samples, d);
    for row in out.chunks_mut(d) {
        for (o, b) in row.iter_mut().zip(&params.bias) {
            *o += b;
        }
    }
    EmbeddingGrid::from_vec(grid.channels, grid.times, d, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    /// Dense circulant analysis matrices: row k of the low band carries lo[j]
    /// at column (2k + 4 − j) mod n, wrapped taps accumulate.
    fn oracle_dwt(x: &[f64], level: usize) -> Vec<f64> {
        let mut approx = x.to_vec();
        let mut details: Vec<Vec<f64>> = Vec::new();
        for _ in 0..level {
            let n = approx.len();
            let mut lo_m = vec![vec![0.0; n]; n / 2];
            let mut hi_m = vec![vec![0.0; n]; n / 2];
            for k in 0..n / 2 {
                for j in 0..8 {
                    let col = ((2 * k + 4) as i64 - j as i64).rem_euclid(n as i64) as usize;
                    lo_m[k][col] += DB4_DEC_LO[j];
                    hi_m[k][col] += DB4_DEC_HI[j];
                }
            }
            let apply = |m: &Vec<Vec<f64>>| -> Vec<f64> {
                m.iter().map(|row| row.iter().zip(&approx).map(|(a, b)| a * b).sum()).collect()
            };
            let d = apply(&hi_m);
            approx = apply(&lo_m);
            details.push(d);
        }
        let mut out = approx;
        for d in details.iter().rev() {
            out.extend(d);
        }
        out
    }

    #[test]
    fn filter_identities() {
        let s: f64 = DB4_DEC_LO.iter().sum();
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-12);
        let e: f64 = DB4_DEC_LO.iter().map(|v| v * v).sum();
        assert!((e - 1.0).abs() < 1e-12);
        for m in 1..4 {
            let shifted: f64 = (0..8 - 2 * m).map(|j| DB4_DEC_LO[j] * DB4_DEC_LO[j + 2 * m]).sum();
            assert!(shifted.abs() < 1e-12, "shift {m}: {shifted}");
        }
        for j in 0..8 {
            let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
            assert_eq!(DB4_DEC_HI[j], sign * DB4_DEC_LO[7 - j]);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let c = dwt_db4(&[0.0; 64], 3).unwrap();
        assert!(c.flatten().iter().all(|&v| v == 0.0));
        assert!(idwt_db4(&c).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn table_length_is_count_preserving() {
        let x = random_vec(2560, 1);
        assert_eq!(max_level(2560), 8);
        let c = dwt_db4(&x, 8).unwrap();
        assert_eq!(c.total_len(), 2560);
        assert_eq!(c.bands.len(), 9);
        assert_eq!(c.bands[0].len(), 10);
        let o = oracle_dwt(&x, 8);
        let f = c.flatten();
        let err = f.iter().zip(&o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn matches_matrix_oracle_length_64() {
        let x = random_vec(64, 2);
        let f = dwt_db4(&x, 3).unwrap().flatten();
        let o = oracle_dwt(&x, 3);
        for (a, b) in f.iter().zip(&o) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_reference_library_values() {
        // PyWavelets 1.x: wavedec(x, 'db4', mode='periodization', level=3) for
        // x[i] = sin(0.37 i) + 0.5 cos(1.3 i) + 0.01 i, i = 0..64.
        const REF: [f64; 12] = [
            1.9997203219451445,
            1.5959960195232954,
            2.5228579964423474,
            -1.7777403093191007,
            2.3905596933349025,
            -0.8785203541729933,
            2.2631775992975034,
            0.22038328316946065,
            0.843435791926635,
            -0.5315825598245828,
            0.7324804667104637,
            -1.0360129440273533,
        ];
        const TAIL: [f64; 4] = [-0.2361311263498147, 0.06870224971318922, -0.07398032943079591, -0.029108138398871962];
        let x: Vec<f64> = (0..64)
            .map(|i| {
                let i = i as f64;
                (0.37 * i).sin() + 0.5 * (1.3 * i).cos() + 0.01 * i
            })
            .collect();
        let c = dwt_db4(&x, 3).unwrap();
        assert_eq!(c.bands.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 8, 16, 32]);
        let f = c.flatten();
        for (a, b) in f.iter().zip(REF.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        for (a, b) in f[60..].iter().zip(TAIL.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn perfect_reconstruction_and_energy() {
        for (n, level, seed) in [(64, 3, 3), (2560, 8, 4), (16, 1, 5), (128, 4, 6)] {
            let x = random_vec(n, seed);
            let c = dwt_db4(&x, level).unwrap();
            let back = idwt_db4(&c).unwrap();
            let err = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "n={n}: {err}");
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ec: f64 = c.flatten().iter().map(|v| v * v).sum();
            assert!(((ec - ex) / ex).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_single_level_round_trip() {
        let x = vec![2.5; 32];
        let c = dwt_db4(&x, 1).unwrap();
        let back = idwt_db4(&c).unwrap();
        for v in back {
            assert!((v - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_excess_level_and_bad_bands() {
        assert!(dwt_db4(&[0.0; 64], 4).is_err());
        assert!(dwt_db4(&[0.0; 64], 0).is_err());
        assert!(dwt_db4(&[0.0; 60], 3).is_err());
        let bad = WaveletCoeffs { bands: vec![vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]], level: 2 };
        assert!(idwt_db4(&bad).is_err());
    }

    #[test]
    fn rms_norm_examples() {
        let y = rms_norm(&[3.0, 4.0], &[1.0, 1.0], 1e-15);
        assert!((y[0] - 0.848528137423857).abs() < 1e-9);
        assert!((y[1] - 1.131370849898476).abs() < 1e-9);
        assert_eq!(rms_norm(&[0.0; 5], &[1.0; 5], 1e-6), vec![0.0; 5]);
        let x = random_vec(100, 9);
        let y = rms_norm(&x, &[1.0; 100], 1e-12);
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / 100.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_round_trip_of_bands() {
        let c = dwt_db4(&random_vec(64, 1), 3).unwrap();
        assert_eq!(WaveletCoeffs::from_flat(&c.flatten(), 3).unwrap(), c);
    }

    fn params(d: usize, n: usize, seed: u64) -> EncoderParams {
        let mut r = rng::seeded(seed);
        EncoderParams { projection: Tensor::randn(&[d, n], 0.3, &mut r), bias: vec![0.0; d], level: max_level(n) }
    }

    fn grid(c: usize, t: usize, s: usize, seed: u64) -> SegmentGrid {
        SegmentGrid::new(c, t, s, random_vec(c * t * s, seed)).unwrap()
    }

    #[test]
    fn encoder_zero_grid_gives_zero() {
        let p = params(8, 64, 1);
        let g = SegmentGrid::new(2, 3, 64, vec![0.0; 2 * 3 * 64]).unwrap();
        let e = encode(&g, &p).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_is_cellwise_and_scale_invariant() {
        let p = params(8, 64, 2);
        let g = grid(2, 3, 64, 3);
        let base = encode(&g, &p).unwrap();

        let mut perturbed = g.clone();
        perturbed.segment_mut(1, 2)[5] += 1.0;
        let e2 = encode(&perturbed, &p).unwrap();
        for c in 0..2 {
            for t in 0..3 {
                let same = base.cell(c, t) == e2.cell(c, t);
                assert_eq!(same, (c, t) != (1, 2));
            }
        }

        let mut scaled = g.clone();
        scaled.segment_mut(0, 1).iter_mut().for_each(|v| *v *= 2.0);
        let e3 = encode(&scaled, &p).unwrap();
        // exact up to the eps inside the norm (relative effect ~ eps / mean square)
        for (a, b) in e3.cell(0, 1).iter().zip(base.cell(0, 1)) {
            assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn encoder_rejects_length_mismatch() {
        let p = params(8, 32, 2);
        assert!(encode(&grid(1, 1, 64, 0), &p).is_err());
    }

    proptest::proptest! {
        #[test]
        fn dwt_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let x = random_vec(128, seed);
            let y = random_vec(128, seed + 1);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let cx = dwt_db4(&x, 4).unwrap().flatten();
            let cy = dwt_db4(&y, 4).unwrap().flatten();
            let cm = dwt_db4(&mix, 4).unwrap().flatten();
            for i in 0..128 {
                proptest::prop_assert!((cm[i] - (a * cx[i] + b * cy[i])).abs() < 1e-9);
            }
        }
    }
}

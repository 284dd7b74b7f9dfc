//! Dense row-major `f64` storage and the embedding grid layout.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape, Result};
use crate::rng::Rng;

/// A dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(shape, data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension; a 1-D tensor is one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err(shape, self.data.len()));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn shape_err(dims: &[usize], len: usize) -> crate::Error {
    shape(format!("shape {dims:?} does not hold {len} elements"))
}

/// `out[n × m] = a[n × k] · b[m × k]ᵀ`.
pub fn matmul_nt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), m * k);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        let or = &mut out[i * m..(i + 1) * m];
        for (j, o) in or.iter_mut().enumerate() {
            *o = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `out[n × m] = a[n × k] · b[k × m]`.
pub fn matmul_nn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let or = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, &bv) in or.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += s * bv;
            }
        }
    }
    out
}

/// `out[k × m] = a[n × k]ᵀ · b[n × m]`.
pub fn matmul_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let br = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * m..(p + 1) * m].iter_mut().zip(br) {
                *o += s * bv;
            }
        }
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-(channel, time) embedding vectors of a window.
///
/// Cells are stored channel-major: cell `(c, t)` lives at flat index
/// `c * times + t`, and its vector occupies `dim` contiguous values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid {
    channels: usize,
    times: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingGrid {
    pub fn zeros(channels: usize, times: usize, dim: usize) -> Self {
        Self { channels, times, dim, data: vec![0.0; channels * times * dim] }
    }

    pub fn from_vec(channels: usize, times: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * times * dim {
            return Err(shape(format!("grid {channels}x{times}x{dim} does not hold {} values", data.len())));
        }
        Ok(Self { channels, times, dim, data })
    }

    pub fn random(channels: usize, times: usize, dim: usize, std: f64, rng: &mut Rng) -> Self {
        let t = Tensor::randn(&[channels * times, dim], std, rng);
        Self { channels, times, dim, data: t.into_data() }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn times(&self) -> usize {
        self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.channels * self.times
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize) -> usize {
        c * self.times + t
    }

    pub fn cell(&self, c: usize, t: usize) -> &[f64] {
        let i = self.index(c, t) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn cell_mut(&mut self, c: usize, t: usize) -> &mut [f64] {
        let i = self.index(c, t) * self.dim;
        &mut self.data[i..i + self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The grid as an `[cells × dim]` matrix.
    pub fn to_tensor(&self) -> Tensor {
        Tensor { shape: vec![self.cells(), self.dim], data: self.data.clone() }
    }

    pub fn from_tensor(channels: usize, times: usize, t: Tensor) -> Result<Self> {
        let dim = t.cols();
        Self::from_vec(channels, times, dim, t.into_data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 1.0, 0.5]; // 2x3
        let nt = matmul_nt(&a, &b, 2, 3, 2);
        assert_eq!(nt, vec![-2.0, 5.5, -2.0, 16.0]);
        // bᵀ as 3x2 for nn
        let bt = [1.0, 2.0, 0.0, 1.0, -1.0, 0.5];
        assert_eq!(matmul_nn(&a, &bt, 2, 3, 2), nt);
        // aᵀ·a
        let ata = matmul_tn(&a, &a, 2, 3, 3);
        assert_eq!(ata[0], 17.0);
        assert_eq!(ata[4], 29.0);
    }

    #[test]
    fn grid_is_channel_major() {
        let g = EmbeddingGrid::from_vec(2, 3, 1, (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(g.cell(1, 0), &[3.0]);
        assert_eq!(g.cell(0, 2), &[2.0]);
        assert!(EmbeddingGrid::from_vec(2, 3, 2, vec![0.0; 5]).is_err());
    }
}

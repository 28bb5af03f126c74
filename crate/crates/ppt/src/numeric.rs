//! Deterministic numeric kernels shared by every other module.
//!
//! All tensors are plain row-major `f32` buffers. Dot products and
//! reductions accumulate in `f64` so results do not depend on summation
//! order tricks a compiler might otherwise pick.

use crate::error::{Error, Result};

/// Dense row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Numeric(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    /// Builds a matrix from a subset of rows of `self`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (i, &r) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `a * b` with f64 accumulation per output element.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Numeric(format!(
            "matmul shape mismatch: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.cols {
            let mut acc = 0.0f64;
            for k in 0..a.cols {
                acc += arow[k] as f64 * b.data[k * b.cols + j] as f64;
            }
            out.data[i * b.cols + j] = acc as f32;
        }
    }
    Ok(out)
}

/// Adds `bias` to every row of `m` in place.
pub fn add_bias(m: &mut Matrix, bias: &[f32]) -> Result<()> {
    if bias.len() != m.cols {
        return Err(Error::Numeric("bias length mismatch".into()));
    }
    for r in 0..m.rows {
        for (v, b) in m.row_mut(r).iter_mut().zip(bias) {
            *v += *b;
        }
    }
    Ok(())
}

/// Dot product with f64 accumulation.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two equal-length vectors. If either vector has
/// norm below 1e-12 the similarity is defined to be 0.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Numeric(format!(
            "cosine_similarity length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na < 1e-12 || nb < 1e-12 {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Population variance: mean of squared deviations from the mean (divide
/// by N, not N-1). A single element has variance 0.
pub fn population_variance(values: &[f32]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Numeric("population_variance of empty input".into()));
    }
    let n = values.len() as f64;
    let mean: f64 = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(var)
}

/// Softmax over one row with a `+ log(size)` bias per entry, stabilized by
/// max subtraction. With all sizes equal to 1 this is a plain softmax.
pub fn softmax_size_biased(logits: &[f32], sizes: &[f32]) -> Result<Vec<f32>> {
    if logits.len() != sizes.len() {
        return Err(Error::Numeric(format!(
            "softmax length mismatch: {} logits vs {} sizes",
            logits.len(),
            sizes.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Numeric("softmax of empty row".into()));
    }
    let mut biased = Vec::with_capacity(logits.len());
    for (&l, &s) in logits.iter().zip(sizes) {
        if !l.is_finite() {
            return Err(Error::Numeric("non-finite softmax input".into()));
        }
        if !(s >= 1.0) {
            return Err(Error::Numeric(format!("token size {s} < 1")));
        }
        // s >= 1, so ln(s) is finite and >= 0; bias applied in f64
        biased.push(l as f64 + (s as f64).ln());
    }
    let max = biased.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = biased.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| (e / sum) as f32).collect())
}

/// Plain softmax; identical code path to `softmax_size_biased` with unit sizes.
pub fn row_softmax(logits: &[f32]) -> Result<Vec<f32>> {
    softmax_size_biased(logits, &vec![1.0; logits.len()])
}

/// Row-wise layer normalization with learned scale/shift, eps = 1e-6.
pub fn layernorm(x: &Matrix, gamma: &[f32], beta: &[f32]) -> Result<Matrix> {
    const EPS: f64 = 1e-6;
    if gamma.len() != x.cols || beta.len() != x.cols {
        return Err(Error::Numeric("layernorm parameter length mismatch".into()));
    }
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let n = x.cols as f64;
        let mean: f64 = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + EPS).sqrt();
        let orow = out.row_mut(r);
        for c in 0..row.len() {
            let nv = (row[c] as f64 - mean) * inv;
            orow[c] = (nv * gamma[c] as f64 + beta[c] as f64) as f32;
        }
    }
    Ok(out)
}

/// GELU, tanh approximation:
/// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))`,
/// evaluated in f64 and truncated back to f32.
pub fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
    let xf = x as f64;
    let inner = SQRT_2_OVER_PI * (xf + 0.044715 * xf * xf * xf);
    (0.5 * xf * (1.0 + inner.tanh())) as f32
}

pub fn gelu_inplace(m: &mut Matrix) {
    for v in m.data_mut() {
        *v = gelu(*v);
    }
}

/// Deterministic 64-bit generator: xorshift64* seeded through one round of
/// splitmix64 so that small seeds still produce well-mixed states.
///
/// Bit-exact definition:
///   state0 = splitmix64(seed), forced to 1 if zero
///   next:  x ^= x >> 12; x ^= x << 25; x ^= x >> 27;
///          output = x * 0x2545F4914F6CDD1D (wrapping)
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        Rng { state: if s == 0 { 1 } else { s } }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform in [0, 1), 24 bits of precision.
    pub fn next_f32(&mut self) -> f32 {
        ((self.next_u64() >> 40) as f32) * (1.0 / 16_777_216.0)
    }

    /// Uniform in [0, 1), 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / 9_007_199_254_740_992.0)
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    pub fn gen_range(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Gaussian sample via Box-Muller; one uniform pair per sample.
    pub fn normal(&mut self, mean: f32, std: f32) -> f32 {
        let u1 = (((self.next_u64() >> 11) as f64) + 0.5) * (1.0 / 9_007_199_254_740_992.0);
        let u2 = self.next_f64();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        mean + std * z as f32
    }
}

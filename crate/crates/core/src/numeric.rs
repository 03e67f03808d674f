//! Dense primitives at sub-embedding scale and a finite-difference gradient checker.
//!
//! Matrices are square and stored row-major in flat slices. The slice kernels
//! (`gemv`, `gemv_t`, ...) are what the model code calls in its hot loops;
//! [`Matrix`], [`matvec`] and [`l2_norm`] are the checked public surface.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Storage precision of a parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "32" => Ok(Precision::F32),
            "64" => Ok(Precision::F64),
            other => Err(format!("precision must be 32 or 64, got '{other}'")),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => write!(f, "32"),
            Precision::F64 => write!(f, "64"),
        }
    }
}

/// Floating-point scalar used for parameter storage: `f32` for training, `f64` for verification.
pub trait Real:
    Float + Sum + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one value from the first `PRECISION.bytes()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NumericError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix data of length {len} is not square")]
    NotSquare { len: usize },
    #[error("loss is not finite ({value}) at coordinate {coordinate:?}")]
    NonFiniteLoss { value: f64, coordinate: Option<usize> },
}

/// Square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn from_row_major(n: usize, data: Vec<T>) -> Result<Self, NumericError> {
        if data.len() != n * n {
            return Err(NumericError::DimensionMismatch {
                expected: n * n,
                actual: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    /// Builds a matrix from a flat slice whose length must be a perfect square.
    pub fn from_slice(data: &[T]) -> Result<Self, NumericError> {
        let n = (data.len() as f64).sqrt().round() as usize;
        if n * n != data.len() {
            return Err(NumericError::NotSquare { len: data.len() });
        }
        Ok(Self { n, data: data.to_vec() })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self { n, data }
    }

    /// 2-D rotation by `theta` radians (counter-clockwise).
    pub fn rotation2(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            n: 2,
            data: vec![T::of(c), T::of(-s), T::of(s), T::of(c)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.n + col]
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![T::zero(); self.data.len()];
        transpose_into(&self.data, self.n, &mut out);
        Self { n: self.n, data: out }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NumericError> {
        if other.n != self.n {
            return Err(NumericError::DimensionMismatch {
                expected: self.n,
                actual: other.n,
            });
        }
        let mut out = vec![T::zero(); self.data.len()];
        gemm(&self.data, &other.data, self.n, &mut out);
        Ok(Self { n: self.n, data: out })
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Checked matrix-vector product.
pub fn matvec<T: Real>(m: &Matrix<T>, x: &[T]) -> Result<Vec<T>, NumericError> {
    if x.len() != m.n {
        return Err(NumericError::DimensionMismatch {
            expected: m.n,
            actual: x.len(),
        });
    }
    let mut out = vec![T::zero(); m.n];
    gemv(&m.data, x, &mut out);
    Ok(out)
}

pub fn l2_norm<T: Real>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `out = m * x` for a square row-major `m` of side `x.len()`.
#[inline]
pub fn gemv<T: Real>(m: &[T], x: &[T], out: &mut [T]) {
    let n = x.len();
    for (row, o) in m.chunks_exact(n).zip(out.iter_mut()) {
        *o = dot(row, x);
    }
}

/// `out = mᵀ * x`.
#[inline]
pub fn gemv_t<T: Real>(m: &[T], x: &[T], out: &mut [T]) {
    let n = x.len();
    out.iter_mut().for_each(|o| *o = T::zero());
    for (row, &xi) in m.chunks_exact(n).zip(x) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * xi;
        }
    }
}

/// `out += alpha * m * x`.
#[inline]
pub fn gemv_acc<T: Real>(m: &[T], x: &[T], alpha: T, out: &mut [T]) {
    let n = x.len();
    for (row, o) in m.chunks_exact(n).zip(out.iter_mut()) {
        *o += alpha * dot(row, x);
    }
}

/// `out += alpha * mᵀ * x`.
#[inline]
pub fn gemv_t_acc<T: Real>(m: &[T], x: &[T], alpha: T, out: &mut [T]) {
    let n = x.len();
    for (row, &xi) in m.chunks_exact(n).zip(x) {
        let s = alpha * xi;
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * s;
        }
    }
}

/// Rank-one update `m += alpha * u vᵀ`.
#[inline]
pub fn ger<T: Real>(u: &[T], v: &[T], alpha: T, m: &mut [T]) {
    let n = v.len();
    for (row, &ui) in m.chunks_exact_mut(n).zip(u) {
        let s = alpha * ui;
        for (e, &vj) in row.iter_mut().zip(v) {
            *e += s * vj;
        }
    }
}

/// `out = a * b` for square row-major matrices of side `n`.
pub fn gemm<T: Real>(a: &[T], b: &[T], n: usize, out: &mut [T]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = T::zero();
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

pub fn transpose_into<T: Copy>(m: &[T], n: usize, out: &mut [T]) {
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = m[i * n + j];
        }
    }
}

pub fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs().f64()).fold(0.0, f64::max)
}

/// Determinant by LU with partial pivoting, evaluated in 64-bit.
pub fn determinant<T: Real>(m: &[T], n: usize) -> f64 {
    let mut a: Vec<f64> = m.iter().map(|v| v.f64()).collect();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        let p = a[pivot * n + col];
        if p == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            det = -det;
        }
        det *= p;
        for row in col + 1..n {
            let f = a[row * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
            }
        }
    }
    det
}

/// Largest entry of `|m mᵀ - I|`.
pub fn orthogonality_error<T: Real>(m: &[T], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let s = dot(&m[i * n..(i + 1) * n], &m[j * n..(j + 1) * n]).f64();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
    }
    worst
}

/// Settings for [`check_gradients`].
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Above this many coordinates a random subset of this size is checked.
    pub max_coordinates: usize,
    /// Denominator floor so near-zero gradients are judged by absolute error.
    pub scale_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_coordinates: 4096,
            scale_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_coordinate: Option<usize>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// The relative error at a coordinate is `|a - n| / max(|a|, |n|, scale_floor)`.
pub fn check_gradients<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, NumericError>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(NumericError::DimensionMismatch {
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    let base = loss(params);
    if !base.is_finite() {
        return Err(NumericError::NonFiniteLoss {
            value: base,
            coordinate: None,
        });
    }
    let coords: Vec<usize> = if params.len() > cfg.max_coordinates {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = sample(&mut rng, params.len(), cfg.max_coordinates).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..params.len()).collect()
    };

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        checked: coords.len(),
        max_relative_error: 0.0,
        worst_coordinate: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        tolerance: cfg.tolerance,
    };
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + cfg.epsilon;
        let up = loss(&probe);
        probe[i] = orig - cfg.epsilon;
        let down = loss(&probe);
        probe[i] = orig;
        for v in [up, down] {
            if !v.is_finite() {
                return Err(NumericError::NonFiniteLoss {
                    value: v,
                    coordinate: Some(i),
                });
            }
        }
        let numeric = (up - down) / (2.0 * cfg.epsilon);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.scale_floor);
        if err > report.max_relative_error || report.worst_coordinate.is_none() {
            report.max_relative_error = err;
            report.worst_coordinate = Some(i);
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

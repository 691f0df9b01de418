//! Synthetic designs: covariance structures, design distributions, sparse
//! linear truths, and banded / block-diagonal precision matrices.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggm::{edge, Edge};
use crate::linalg::{mean, min_eigenvalue, standardize, Cholesky, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Ten identical diagonal blocks whose off-diagonal entries fall linearly
    /// from `rho·(p'−2)/(p'−1)` next to the diagonal to 0 in the corner.
    ToeplitzBlock { rho: f64 },
    /// Unit diagonal, `rho` everywhere else.
    Constant { rho: f64 },
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    #[serde(flatten)]
    pub kind: CovarianceKind,
    pub p: usize,
}

pub const TOEPLITZ_BLOCKS: usize = 10;

pub fn build_covariance<T: Scalar>(spec: &CovarianceSpec) -> Result<Matrix<T>> {
    let p = spec.p;
    match spec.kind {
        CovarianceKind::Identity => Ok(Matrix::identity(p)),
        CovarianceKind::Constant { rho } => {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::InvalidArgument(format!("constant correlation needs 0 <= rho < 1, got {rho}")));
            }
            Ok(Matrix::from_fn(p, p, |i, j| if i == j { T::one() } else { T::of(rho) }))
        }
        CovarianceKind::ToeplitzBlock { rho } => {
            if p == 0 || p % TOEPLITZ_BLOCKS != 0 {
                return Err(Error::BadDimension(format!("p = {p} is not divisible by {TOEPLITZ_BLOCKS}")));
            }
            let b = p / TOEPLITZ_BLOCKS;
            if b < 2 {
                return Err(Error::BadDimension(format!("block size {b} is below 2")));
            }
            let denom = (b - 1) as f64;
            Ok(Matrix::from_fn(p, p, |i, j| {
                if i / b != j / b {
                    return T::zero();
                }
                let d = i.abs_diff(j);
                if d == 0 {
                    T::one()
                } else {
                    T::of((b - 1 - d) as f64 * rho / denom)
                }
            }))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum DesignDistribution {
    Gaussian,
    /// Fair mixture of Gaussians centered at `±offset·1`.
    Mixture2 { offset: f64 },
    /// Multivariate t with the covariance matrix used as scale matrix.
    StudentT { df: f64 },
}

impl Default for DesignDistribution {
    fn default() -> Self {
        Self::Gaussian
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(flatten)]
    pub distribution: DesignDistribution,
    pub covariance: CovarianceSpec,
    pub n: usize,
}

/// Lower Cholesky factor with, per row, the first structurally nonzero column.
pub struct CorrelatedSampler<T> {
    l: Matrix<T>,
    first_nz: Vec<usize>,
}

impl<T: Scalar> CorrelatedSampler<T> {
    pub fn new(cov: &Matrix<T>) -> Result<Self> {
        let chol = Cholesky::new(cov)?;
        let l = chol.factor().clone();
        let first_nz = (0..l.nrows()).map(|i| (0..=i).find(|&k| l[(i, k)] != T::zero()).unwrap_or(i)).collect();
        Ok(Self { l, first_nz })
    }

    /// `L·z` for a standard normal `z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        let p = self.l.nrows();
        let z: Vec<T> = (0..p).map(|_| T::of(rng.sample(StandardNormal))).collect();
        for (i, o) in out.iter_mut().enumerate().take(p) {
            let mut s = T::zero();
            for k in self.first_nz[i]..=i {
                s = s + self.l[(i, k)] * z[k];
            }
            *o = s;
        }
    }
}

/// Rows drawn from the design distribution, before column standardization.
pub fn sample_design_raw<T: Scalar, R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Result<Matrix<T>> {
    let p = spec.covariance.p;
    let n = spec.n;
    let sampler = CorrelatedSampler::new(&build_covariance::<T>(&spec.covariance)?)?;
    let chi = match spec.distribution {
        DesignDistribution::StudentT { df } => {
            if !(df > 2.0) {
                return Err(Error::InvalidArgument(format!("t design needs df > 2, got {df}")));
            }
            Some((df, ChiSquared::new(df).map_err(|e| Error::InvalidArgument(e.to_string()))?))
        }
        _ => None,
    };
    let mut x = Matrix::zeros(n, p);
    let mut row = vec![T::zero(); p];
    for i in 0..n {
        sampler.sample(rng, &mut row);
        match spec.distribution {
            DesignDistribution::Gaussian => {}
            DesignDistribution::Mixture2 { offset } => {
                let shift = T::of(if rng.gen_bool(0.5) { offset } else { -offset });
                row.iter_mut().for_each(|v| *v = *v + shift);
            }
            DesignDistribution::StudentT { .. } => {
                let (df, dist) = chi.as_ref().expect("set above");
                let w: f64 = dist.sample(rng);
                let scale = T::of((df / w).sqrt());
                row.iter_mut().for_each(|v| *v = *v * scale);
            }
        }
        for (j, &v) in row.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok(x)
}

/// Column-standardized design.
pub fn sample_design<T: Scalar, R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Result<Matrix<T>> {
    Ok(standardize(&sample_design_raw(spec, rng)?)?.0)
}

/// How the signal scale `δ·√(log p / n)` enters the coefficient distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalReading {
    /// Scale is the standard deviation.
    #[default]
    Sd,
    /// Scale is the variance.
    Variance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTruth<T> {
    pub beta_star: Vec<T>,
    /// Signal indices, ascending.
    pub s1: Vec<usize>,
    pub delta: f64,
    pub noise_sd: f64,
}

/// Random sparse coefficient vector with `p1` nonzero entries.
pub fn sample_linear_truth<T: Scalar, R: Rng + ?Sized>(
    p: usize,
    p1: usize,
    delta: f64,
    n: usize,
    reading: SignalReading,
    rng: &mut R,
) -> Result<LinearTruth<T>> {
    if p1 > p {
        return Err(Error::InvalidArgument(format!("p1 = {p1} exceeds p = {p}")));
    }
    let scale = delta * ((p as f64).ln() / n as f64).sqrt();
    let sd = match reading {
        SignalReading::Sd => scale,
        SignalReading::Variance => scale.sqrt(),
    };
    let mut s1 = rand::seq::index::sample(rng, p, p1).into_vec();
    s1.sort_unstable();
    let mut beta_star = vec![T::zero(); p];
    for &j in &s1 {
        let z: f64 = rng.sample(StandardNormal);
        beta_star[j] = T::of(sd * z);
    }
    Ok(LinearTruth { beta_star, s1, delta, noise_sd: 1.0 })
}

/// `y = x·β* + ε`, centered. `noise_sd = 0` gives the noiseless response.
pub fn sample_response<T: Scalar, R: Rng + ?Sized>(
    x: &Matrix<T>,
    truth: &LinearTruth<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    sample_response_with(x, truth, truth.noise_sd, rng)
}

pub fn sample_response_with<T: Scalar, R: Rng + ?Sized>(
    x: &Matrix<T>,
    truth: &LinearTruth<T>,
    noise_sd: f64,
    rng: &mut R,
) -> Result<Vec<T>> {
    if x.ncols() != truth.beta_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns, truth has {} coefficients",
            x.ncols(),
            truth.beta_star.len()
        )));
    }
    let mut y = x.mul_vec(&truth.beta_star);
    if noise_sd > 0.0 {
        for v in &mut y {
            *v = *v + T::of(noise_sd * rng.sample::<f64, _>(StandardNormal));
        }
        let m = mean(&y);
        y.iter_mut().for_each(|v| *v = *v - m);
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    /// `λ_ij = sign(a)·|a|^{|i−j|/c}` for `0 < |i−j| ≤ s`.
    Banded { s: usize, a: f64, #[serde(default = "default_c")] c: f64 },
    /// Diagonal blocks with off-diagonal entries uniform on
    /// `(−high, −low) ∪ (low, high)`.
    BlockDiag {
        #[serde(default = "default_block")]
        block: usize,
        #[serde(default = "default_low")]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
    },
}

fn default_c() -> f64 {
    1.5
}
fn default_block() -> usize {
    25
}
fn default_low() -> f64 {
    0.4
}
fn default_high() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(flatten)]
    pub kind: GraphKind,
    pub p: usize,
}

/// Added on top of `|λ_min|` when shifting an indefinite precision matrix.
pub const REPAIR_MARGIN: f64 = 0.005;

#[derive(Debug, Clone)]
pub struct PrecisionModel<T> {
    /// Precision matrix after any diagonal shift.
    pub precision: Matrix<T>,
    /// Off-diagonal support of the unshifted matrix.
    pub edges: BTreeSet<Edge>,
    /// Diagonal shift applied, zero when none was needed.
    pub shift: T,
    pub min_eigenvalue_before: T,
    pub cholesky: Cholesky<T>,
}

/// Builds the precision matrix; indefinite matrices are shifted by
/// `(|λ_min| + 0.005)·I`.
pub fn build_precision<T: Scalar, R: Rng + ?Sized>(spec: &GraphSpec, rng: &mut R) -> Result<PrecisionModel<T>> {
    let p = spec.p;
    let mut lambda = Matrix::<T>::identity(p);
    match spec.kind {
        GraphKind::Banded { s, a, c } => {
            if !(a.abs() < 1.0) || s == 0 || !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("banded graph needs |a| < 1, s >= 1, c > 0 (a={a}, s={s}, c={c})")));
            }
            for i in 0..p {
                for j in 0..p {
                    let d = i.abs_diff(j);
                    if d > 0 && d <= s {
                        lambda[(i, j)] = T::of(a.signum() * a.abs().powf(d as f64 / c));
                    }
                }
            }
        }
        GraphKind::BlockDiag { block, low, high } => {
            if block == 0 || p % block != 0 {
                return Err(Error::BadDimension(format!("p = {p} is not divisible by block size {block}")));
            }
            if !(0.0 <= low && low < high) {
                return Err(Error::InvalidArgument(format!("need 0 <= low < high, got ({low}, {high})")));
            }
            for i in 0..p {
                for j in i + 1..p {
                    if i / block == j / block {
                        let mag = rng.gen_range(low..high);
                        let v = if rng.gen_bool(0.5) { mag } else { -mag };
                        lambda[(i, j)] = T::of(v);
                        lambda[(j, i)] = T::of(v);
                    }
                }
            }
        }
    }
    let edges = (0..p)
        .flat_map(|j| (0..j).map(move |i| (i, j)))
        .filter(|&(i, j)| lambda[(i, j)] != T::zero())
        .map(|(i, j)| edge(i, j))
        .collect();
    let lmin = min_eigenvalue(&lambda);
    let mut shift = T::zero();
    if lmin < T::zero() {
        shift = lmin.abs() + T::of(REPAIR_MARGIN);
        for i in 0..p {
            lambda[(i, i)] = lambda[(i, i)] + shift;
        }
    }
    let cholesky = Cholesky::new(&lambda).map_err(|_| Error::RepairFailed(min_eigenvalue(&lambda).to_f64_lossy()))?;
    Ok(PrecisionModel { precision: lambda, edges, shift, min_eigenvalue_before: lmin, cholesky })
}

/// Rows from `N(0, Λ⁻¹)`: solve `Lᵀ w = z` with `Λ = L Lᵀ`.
pub fn sample_precision_rows<T: Scalar, R: Rng + ?Sized>(model: &PrecisionModel<T>, n: usize, rng: &mut R) -> Matrix<T> {
    let p = model.precision.nrows();
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        let z: Vec<T> = (0..p).map(|_| T::of(rng.sample(StandardNormal))).collect();
        let w = model.cholesky.solve_upper(&z);
        for (j, &v) in w.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    x
}

/// Column-standardized Gaussian graph data with its true edge set.
pub fn sample_gaussian_graph_data<T: Scalar, R: Rng + ?Sized>(
    spec: &GraphSpec,
    n: usize,
    rng: &mut R,
) -> Result<(Matrix<T>, BTreeSet<Edge>)> {
    let model = build_precision::<T, R>(spec, rng)?;
    let x = sample_precision_rows(&model, n, rng);
    Ok((standardize(&x)?.0, model.edges))
}

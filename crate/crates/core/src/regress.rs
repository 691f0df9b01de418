//! Least squares, Lasso by cyclic coordinate descent, and k-fold
//! cross-validation of the Lasso penalty.
//!
//! The Lasso objective is `(1/(2n))‖y − Xβ‖² + λ‖β‖₁` with no intercept; callers
//! pass centered data.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, dot, Dataset, Matrix};
use crate::scalar::Scalar;

mod solver;

pub use solver::CoordinateDescent;
use solver::GramCache;

/// `sign(z)·max(|z| − gamma, 0)`.
#[inline]
pub fn soft_threshold<T: Scalar>(z: T, gamma: T) -> T {
    debug_assert!(gamma >= T::zero());
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    /// Converged once the largest coordinate change in a full sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { tol: 1e-7, max_sweeps: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit<T> {
    pub beta: Vec<T>,
    pub lambda: T,
    /// Indices of the nonzero coefficients, ascending.
    pub support: Vec<usize>,
    pub n_iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> LassoFit<T> {
    fn from_state(beta: Vec<T>, lambda: T, n_iterations: usize, converged: bool) -> Self {
        let support = nonzero_indices(&beta);
        Self { beta, lambda, support, n_iterations, converged }
    }
}

pub(crate) fn nonzero_indices<T: Scalar>(v: &[T]) -> Vec<usize> {
    v.iter().enumerate().filter(|(_, b)| **b != T::zero()).map(|(j, _)| j).collect()
}

/// `max_j |x_jᵀ y| / n`, the smallest penalty with an all-zero solution.
pub fn lambda_max<T: Scalar>(x: &Matrix<T>, y: &[T]) -> T {
    let n = T::of(x.nrows() as f64);
    (0..x.ncols()).map(|j| dot(x.col(j), y).abs() / n).fold(T::zero(), T::max)
}

/// `size` log-spaced penalties from `lambda_max` down to `ratio·lambda_max`.
pub fn lambda_grid<T: Scalar>(lambda_max: T, size: usize, ratio: f64) -> Vec<T> {
    match size {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => {
            let step = ratio.ln() / (size - 1) as f64;
            (0..size).map(|i| lambda_max * T::of((step * i as f64).exp())).collect()
        }
    }
}

pub fn lasso_objective<T: Scalar>(x: &Matrix<T>, y: &[T], beta: &[T], lambda: T) -> T {
    let fitted = x.mul_vec(beta);
    let rss: T = y.iter().zip(&fitted).map(|(&a, &b)| (a - b) * (a - b)).sum();
    rss / (T::of(2.0) * T::of(x.nrows() as f64)) + lambda * beta.iter().map(|b| b.abs()).sum::<T>()
}

fn check_lambda<T: Scalar>(x: &Matrix<T>, lambda: T) -> Result<()> {
    if !(lambda >= T::zero()) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    if lambda == T::zero() && x.ncols() > x.nrows() {
        return Err(Error::InvalidArgument("lambda = 0 requires p <= n".into()));
    }
    Ok(())
}

/// Lasso at a single penalty on standardized data.
pub fn lasso_fit<T: Scalar>(data: &Dataset<T>, lambda: T) -> Result<LassoFit<T>> {
    lasso_fit_with(&data.x, &data.y, lambda, LassoConfig::default())
}

pub fn lasso_fit_with<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    lambda: T,
    config: LassoConfig,
) -> Result<LassoFit<T>> {
    check_lambda(x, lambda)?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch("x rows vs y length".into()));
    }
    CoordinateDescent::new(x, y, config).solve(lambda)
}

/// Fold paths stop once the fit explains this fraction of `yᵀy`.
pub const SATURATION_DEVIANCE: f64 = 0.999;
/// Fold paths also stop when the relative gain in explained deviance
/// between consecutive penalties drops below this.
pub const MIN_DEVIANCE_GAIN: f64 = 1e-5;
/// Penalties always evaluated before the stopping rules apply.
const MIN_PATH_LENGTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub grid_size: usize,
    /// Smallest grid penalty as a fraction of `lambda_max`.
    pub min_ratio: f64,
    pub lasso: LassoConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 10, grid_size: 100, min_ratio: 1e-3, lasso: LassoConfig::default() }
    }
}

/// Cross-validation curve plus the refit at the selected penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct CvResult<T> {
    pub lambdas: Vec<T>,
    pub cv_error: Vec<T>,
    pub selected: usize,
    pub fit: LassoFit<T>,
}

/// Fold label for every row: a random permutation dealt round-robin.
pub fn assign_folds<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let mut fold = vec![0; n];
    for (rank, &row) in perm.iter().enumerate() {
        fold[row] = rank % k;
    }
    fold
}

/// Lasso with the penalty picked by minimum mean held-out squared error.
pub fn lasso_cv<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    k: usize,
    lambda_grid_size: usize,
    rng: &mut R,
) -> Result<LassoFit<T>> {
    let cfg = CvConfig { folds: k, grid_size: lambda_grid_size, ..CvConfig::default() };
    Ok(lasso_cv_with(&data.x, &data.y, &cfg, rng)?.fit)
}

pub fn lasso_cv_with<T: Scalar, R: Rng + ?Sized>(
    x: &Matrix<T>,
    y: &[T],
    cfg: &CvConfig,
    rng: &mut R,
) -> Result<CvResult<T>> {
    let n = x.nrows();
    let k = cfg.folds;
    if k < 2 || n < 2 * k {
        return Err(Error::InvalidArgument(format!("{k}-fold CV needs k >= 2 and n >= 2k, n = {n}")));
    }
    if cfg.grid_size == 0 {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let lambdas = lambda_grid(lambda_max(x, y), cfg.grid_size, cfg.min_ratio);
    let fold = assign_folds(n, k, rng);

    let cache = Rc::new(GramCache::new(x));
    let p = x.ncols();
    let col_sq: Vec<T> = (0..p).map(|j| dot(x.col(j), x.col(j))).collect();
    let xty: Vec<T> = (0..p).map(|j| dot(x.col(j), y)).collect();
    let yty = dot(y, y);
    let mut fold_errors: Vec<Vec<T>> = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let xv = x.select_rows(&test);
        let yv: Vec<T> = test.iter().map(|&i| y[i]).collect();
        // training sums are the full sums minus the held-out rows
        let cs = col_sq.iter().enumerate().map(|(j, &v)| v - dot(xv.col(j), xv.col(j))).collect();
        let xy = xty.iter().enumerate().map(|(j, &v)| v - dot(xv.col(j), &yv)).collect();
        let cd = CoordinateDescent::from_parts(
            Rc::clone(&cache),
            Some(&xv),
            n - test.len(),
            cs,
            xy,
            yty - dot(&yv, &yv),
            cfg.lasso,
        );
        fold_errors.push(fold_path_errors(cd, &xv, &yv, &lambdas)?);
    }
    // every fold covers at least the first penalty, where the fit is zero
    let len = fold_errors.iter().map(Vec::len).min().unwrap_or(0).max(1);
    let mut lambdas = lambdas;
    lambdas.truncate(len);
    let kf = T::of(k as f64);
    let cv_error: Vec<T> =
        (0..len).map(|i| fold_errors.iter().map(|e| e[i]).sum::<T>() / kf).collect();
    // first minimum: ties resolve to the larger penalty
    let mut selected = 0;
    for (i, &e) in cv_error.iter().enumerate() {
        if e < cv_error[selected] {
            selected = i;
        }
    }
    let mut cd = CoordinateDescent::from_parts(cache, None, n, col_sq, xty, yty, cfg.lasso);
    let mut fit = None;
    for &lambda in &lambdas[..=selected] {
        fit = Some(cd.solve(lambda)?);
    }
    let mut fit = fit.expect("grid is nonempty");
    fit.n_iterations = cd.total_sweeps();
    Ok(CvResult { lambdas, cv_error, selected, fit })
}

/// Held-out mean squared error along the penalty path of one fold.
///
/// The path ends early once the training fit saturates (deviance ratio at
/// least [`SATURATION_DEVIANCE`], or a relative gain below
/// [`MIN_DEVIANCE_GAIN`]) or when a penalty fails to converge; the returned
/// vector then covers only the penalties reached.
fn fold_path_errors<T: Scalar>(
    mut cd: CoordinateDescent<'_, T>,
    xv: &Matrix<T>,
    yv: &[T],
    lambdas: &[T],
) -> Result<Vec<T>> {
    let nv = T::of(yv.len().max(1) as f64);
    let mut errors = Vec::with_capacity(lambdas.len());
    let mut prev_dev = T::zero();
    for (i, &lambda) in lambdas.iter().enumerate() {
        match cd.solve(lambda) {
            Ok(_) => {}
            Err(Error::DidNotConverge(partial)) => {
                log::debug!("fold path stopped at lambda {}: {} sweeps", partial.lambda, partial.sweeps);
                break;
            }
            Err(e) => return Err(e),
        }
        let pred = xv.mul_vec(cd.beta());
        errors.push(yv.iter().zip(&pred).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / nv);
        let dev = cd.deviance_ratio();
        if i + 1 >= MIN_PATH_LENGTH
            && (dev >= T::of(SATURATION_DEVIANCE) || (dev - prev_dev) < T::of(MIN_DEVIANCE_GAIN) * dev)
        {
            break;
        }
        prev_dev = dev;
    }
    Ok(errors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit<T> {
    /// Coefficients aligned with `subset`.
    pub beta: Vec<T>,
    pub subset: Vec<usize>,
    pub residual_variance: T,
}

/// Least squares of `y` on the columns `subset` of `x`, no intercept.
pub fn ols_fit<T: Scalar>(x: &Matrix<T>, y: &[T], subset: &[usize]) -> Result<OlsFit<T>> {
    let rows = x.nrows();
    if y.len() != rows {
        return Err(Error::DimensionMismatch("x rows vs y length".into()));
    }
    if subset.len() >= rows {
        return Err(Error::TooManyFeatures { features: subset.len(), rows });
    }
    let xs = x.select_cols(subset);
    let beta = if subset.is_empty() {
        Vec::new()
    } else {
        cholesky_solve(&xs.gram(), &xs.tr_mul_vec(y)).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::RankDeficient,
            other => other,
        })?
    };
    let fitted = xs.mul_vec(&beta);
    let rss: T = y.iter().zip(&fitted).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(OlsFit {
        beta,
        subset: subset.to_vec(),
        residual_variance: rss / T::of((rows - subset.len()) as f64),
    })
}

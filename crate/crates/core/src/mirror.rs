//! Mirror statistics and the single-data-split selector.
//!
//! For every feature two independent coefficient estimates are combined into
//! `M_j = sign(b1·b2)·f(|b1|, |b2|)`. Null features have mirror statistics
//! symmetric about zero, so the count of large negative statistics estimates
//! the count of false positives among the large positive ones.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{random_split, Dataset, Matrix, SplitIndex};
use crate::regress::{lasso_cv_with, nonzero_indices, ols_fit, CvConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastFunction {
    /// `2·min(u, v)`
    Min2,
    /// `u·v`
    Product,
    /// `u + v`
    #[default]
    Sum,
}

impl ContrastFunction {
    pub const ALL: [ContrastFunction; 3] = [Self::Min2, Self::Product, Self::Sum];

    #[inline]
    pub fn apply<T: Scalar>(self, u: T, v: T) -> T {
        match self {
            Self::Min2 => T::of(2.0) * u.min(v),
            Self::Product => u * v,
            Self::Sum => u + v,
        }
    }
}

impl fmt::Display for ContrastFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Min2 => "min2",
            Self::Product => "product",
            Self::Sum => "sum",
        })
    }
}

impl FromStr for ContrastFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min2" | "min" => Ok(Self::Min2),
            "product" | "prod" => Ok(Self::Product),
            "sum" => Ok(Self::Sum),
            other => Err(Error::InvalidArgument(format!("unknown contrast function '{other}'"))),
        }
    }
}

/// `sign(b1·b2)·f(|b1|, |b2|)`, exactly zero when either input is zero.
#[inline]
pub fn mirror_statistic<T: Scalar>(b1: T, b2: T, contrast: ContrastFunction) -> T {
    if b1 == T::zero() || b2 == T::zero() {
        return T::zero();
    }
    let mag = contrast.apply(b1.abs(), b2.abs());
    if (b1 > T::zero()) == (b2 > T::zero()) {
        mag
    } else {
        -mag
    }
}

/// `|a + b| − |a − b|`, the sum contrast written in terms of two half-sample means.
#[inline]
pub fn normal_means_mirror<T: Scalar>(xbar1: T, xbar2: T) -> T {
    (xbar1 + xbar2).abs() - (xbar1 - xbar2).abs()
}

/// The two coefficient vectors produced from one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFit<T> {
    pub split: SplitIndex,
    /// First-half estimate (Lasso coefficients, or half-sample means).
    pub beta1: Vec<T>,
    /// Second-half estimate; zero outside `ols_subset`.
    pub beta2: Vec<T>,
    /// Nonzero pattern of `beta1`.
    pub screened: Vec<usize>,
    /// Features actually passed to the second-stage fit.
    pub ols_subset: Vec<usize>,
    /// Penalty chosen by cross-validation, when a Lasso was run.
    pub lambda: Option<T>,
    pub truncated: bool,
}

impl<T: Scalar> SplitFit<T> {
    pub fn mirror(&self, contrast: ContrastFunction) -> MirrorVector<T> {
        let m = self
            .beta1
            .iter()
            .zip(&self.beta2)
            .map(|(&a, &b)| mirror_statistic(a, b, contrast))
            .collect();
        MirrorVector { m, contrast, split_fit: Some(self.clone()) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MirrorVector<T> {
    pub m: Vec<T>,
    pub contrast: ContrastFunction,
    pub split_fit: Option<SplitFit<T>>,
}

impl<T: Scalar> MirrorVector<T> {
    pub fn from_values(m: Vec<T>, contrast: ContrastFunction) -> Self {
        Self { m, contrast, split_fit: None }
    }
}

/// Non-fatal conditions met while selecting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// First-stage Lasso kept no feature.
    pub empty_screen: bool,
    /// First-stage support was cut down before the OLS step.
    pub truncated_screen: bool,
    /// The inclusion-rate budget was exceeded by the single smallest rate.
    pub degenerate_cutoff: bool,
    /// Replications that errored and were counted as empty selections.
    pub failed_replications: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult<T> {
    /// Selected feature indices, ascending.
    pub selected: Vec<usize>,
    /// Mirror-statistic cutoff for DS (`+∞` when infeasible); inclusion-rate
    /// cutoff for MDS.
    pub tau: T,
    /// Estimated FDP at `tau`; `None` when no cutoff was feasible or the
    /// result came from inclusion rates.
    pub fdp_hat_at_tau: Option<T>,
    pub mirror: Option<MirrorVector<T>>,
    pub diagnostics: Diagnostics,
}

/// `#{m_j < −t} / max(#{m_j > t}, 1)`.
pub fn fdp_hat<T: Scalar>(m: &[T], t: T) -> T {
    let neg = m.iter().filter(|&&v| v < -t).count();
    let pos = m.iter().filter(|&&v| v > t).count();
    T::of(neg as f64) / T::of(pos.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff<T> {
    pub tau: T,
    pub fdp_hat: Option<T>,
}

/// Smallest threshold among the distinct nonzero `|m_j|` whose estimated FDP
/// is at most `q`; `+∞` when none qualifies.
///
/// A threshold with no `m_j` above it would select nothing, so it does not
/// count as qualifying: the result is then `+∞` as well.
pub fn select_cutoff<T: Scalar>(m: &[T], q: T) -> Cutoff<T> {
    let mut pos: Vec<T> = m.iter().copied().filter(|&v| v > T::zero()).collect();
    let mut neg: Vec<T> = m.iter().copied().filter(|&v| v < T::zero()).map(|v| -v).collect();
    let cmp = |a: &T, b: &T| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
    pos.sort_unstable_by(cmp);
    neg.sort_unstable_by(cmp);

    // merge the two sorted lists
    let mut candidates: Vec<T> = Vec::with_capacity(pos.len() + neg.len());
    let (mut i, mut k) = (0, 0);
    while i < pos.len() || k < neg.len() {
        let v = if k == neg.len() || (i < pos.len() && pos[i] <= neg[k]) {
            i += 1;
            pos[i - 1]
        } else {
            k += 1;
            neg[k - 1]
        };
        candidates.push(v);
    }
    candidates.dedup();

    for t in candidates {
        let n_pos = pos.len() - pos.partition_point(|&v| v <= t);
        if n_pos == 0 {
            break;
        }
        let n_neg = neg.len() - neg.partition_point(|&v| v <= t);
        let fdp = T::of(n_neg as f64) / T::of(n_pos.max(1) as f64);
        if fdp <= q {
            return Cutoff { tau: t, fdp_hat: Some(fdp) };
        }
    }
    Cutoff { tau: T::infinity(), fdp_hat: None }
}

/// `{j : m_j > tau}`.
pub fn select_above<T: Scalar>(m: &[T], tau: T) -> Vec<usize> {
    m.iter().enumerate().filter(|(_, &v)| v > tau).map(|(j, _)| j).collect()
}

/// Cutoff plus selection for a mirror vector.
pub fn select_from_mirror<T: Scalar>(mirror: MirrorVector<T>, q: T) -> SelectionResult<T> {
    let cut = select_cutoff(&mirror.m, q);
    let selected = select_above(&mirror.m, cut.tau);
    let diagnostics = Diagnostics {
        empty_screen: mirror.split_fit.as_ref().is_some_and(|f| f.screened.is_empty()),
        truncated_screen: mirror.split_fit.as_ref().is_some_and(|f| f.truncated),
        ..Diagnostics::default()
    };
    SelectionResult { selected, tau: cut.tau, fdp_hat_at_tau: cut.fdp_hat, mirror: Some(mirror), diagnostics }
}

/// Settings of the Lasso + OLS single-split procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsConfig {
    pub q: f64,
    pub contrast: ContrastFunction,
    pub cv: CvConfig,
}

impl Default for DsConfig {
    fn default() -> Self {
        Self { q: 0.1, contrast: ContrastFunction::Sum, cv: CvConfig::default() }
    }
}

pub(crate) fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("FDR level must lie in (0, 1), got {q}")))
    }
}

/// Lasso on a random half, OLS on the other half restricted to the Lasso
/// support.
///
/// Each half is re-standardized on its own. When the Lasso keeps at least
/// `⌊n/2⌋` features only the `⌊n/4⌋` largest in magnitude go to OLS.
pub fn split_fit<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    cv: &CvConfig,
    rng: &mut R,
) -> Result<SplitFit<T>> {
    let n = data.n();
    let p = data.p();
    let split = random_split(n, rng)?;
    let half1 = data.restandardized_rows(&split.first_half)?;
    let half2 = data.restandardized_rows(&split.second_half)?;

    let lasso = lasso_cv_with(&half1.x, &half1.y, cv, rng)?.fit;
    let beta1 = lasso.beta;
    let screened = nonzero_indices(&beta1);

    let mut ols_subset = screened.clone();
    let truncated = screened.len() >= n / 2;
    if truncated {
        ols_subset.sort_by(|&a, &b| {
            beta1[b].abs().partial_cmp(&beta1[a].abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        ols_subset.truncate(n / 4);
        ols_subset.sort_unstable();
    }

    let mut beta2 = vec![T::zero(); p];
    if !ols_subset.is_empty() {
        let ols = ols_fit(&half2.x, &half2.y, &ols_subset)?;
        for (&j, &b) in ols.subset.iter().zip(&ols.beta) {
            beta2[j] = b;
        }
    }
    Ok(SplitFit { split, beta1, beta2, screened, ols_subset, lambda: Some(lasso.lambda), truncated })
}

/// Single-data-split selection with the default cross-validation settings.
pub fn ds_select<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    q: f64,
    contrast: ContrastFunction,
    rng: &mut R,
    cv_folds: usize,
) -> Result<SelectionResult<T>> {
    let cfg = DsConfig { q, contrast, cv: CvConfig { folds: cv_folds, ..CvConfig::default() } };
    ds_select_with(data, &cfg, rng)
}

pub fn ds_select_with<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    cfg: &DsConfig,
    rng: &mut R,
) -> Result<SelectionResult<T>> {
    check_level(cfg.q)?;
    let fit = split_fit(data, &cfg.cv, rng)?;
    Ok(select_from_mirror(fit.mirror(cfg.contrast), T::of(cfg.q)))
}

/// Per-column means over the first half and over the remaining rows.
///
/// The second-half sum is the column total minus the first-half sum, which
/// lets repeated splits reuse the totals.
pub fn half_means<T: Scalar>(x: &Matrix<T>, split: &SplitIndex) -> (Vec<T>, Vec<T>) {
    let totals: Vec<T> = (0..x.ncols()).map(|j| column_sum(x.col(j))).collect();
    let mut first = vec![T::zero(); x.ncols()];
    for (j, f) in first.iter_mut().enumerate() {
        let c = x.col(j);
        let mut s = T::zero();
        for &i in &split.first_half {
            s = s + c[i];
        }
        *f = s;
    }
    finish_half_means(&totals, &first, split.first_half.len(), split.second_half.len())
}

pub(crate) fn column_sum<T: Scalar>(c: &[T]) -> T {
    let mut s = T::zero();
    for &v in c {
        s = s + v;
    }
    s
}

pub(crate) fn finish_half_means<T: Scalar>(
    totals: &[T],
    first_sums: &[T],
    n1: usize,
    n2: usize,
) -> (Vec<T>, Vec<T>) {
    let (d1, d2) = (T::of(n1 as f64), T::of(n2 as f64));
    let a = first_sums.iter().map(|&s| s / d1).collect();
    let b = totals.iter().zip(first_sums).map(|(&t, &s)| (t - s) / d2).collect();
    (a, b)
}

/// DS for the Normal means model: half-sample column means combined by
/// [`normal_means_mirror`].
pub fn normal_means_ds<T: Scalar, R: Rng + ?Sized>(
    x: &Matrix<T>,
    q: f64,
    rng: &mut R,
) -> Result<SelectionResult<T>> {
    check_level(q)?;
    let split = random_split(x.nrows(), rng)?;
    let (a, b) = half_means(x, &split);
    Ok(normal_means_from_halves(split, a, b, T::of(q)))
}

pub(crate) fn normal_means_from_halves<T: Scalar>(
    split: SplitIndex,
    a: Vec<T>,
    b: Vec<T>,
    q: T,
) -> SelectionResult<T> {
    let m = a.iter().zip(&b).map(|(&u, &v)| normal_means_mirror(u, v)).collect();
    let all: Vec<usize> = (0..a.len()).collect();
    let fit = SplitFit {
        split,
        beta1: a,
        beta2: b,
        screened: all.clone(),
        ols_subset: all,
        lambda: None,
        truncated: false,
    };
    select_from_mirror(MirrorVector { m, contrast: ContrastFunction::Sum, split_fit: Some(fit) }, q)
}

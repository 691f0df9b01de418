//! Swap-probability experiment on the Normal means model.
//!
//! Two columns have their sample means pinned just apart, so that their
//! two-sided p-values are about 0.020 and 0.021. The experiment estimates how
//! often DS (by mirror statistics) and MDS (by inclusion rates) rank the pair
//! the wrong way round.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{random_split, Matrix};
use crate::mds::normal_means_inclusion_rates;
use crate::mirror::{half_means, normal_means_mirror};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapConfig {
    pub n: usize,
    pub p: usize,
    /// Two-sided p-value of the first pinned column.
    pub p_value: f64,
    /// `x̄₂ = x̄₁ − gap/√n`.
    pub gap: f64,
    /// Fraction of the remaining columns with nonzero mean.
    pub signal_fraction: f64,
    pub signal_sd: f64,
    pub q: f64,
    /// MDS replications per data set; `m_per_n · n` splits.
    pub m_per_n: usize,
    pub ds_reps: usize,
    pub mds_reps: usize,
}

impl SwapConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            p: 800,
            p_value: 0.02,
            gap: 0.02,
            signal_fraction: 0.2,
            signal_sd: 0.5,
            q: 0.1,
            m_per_n: 10,
            ds_reps: 500,
            mds_reps: 50,
        }
    }

    /// Pinned sample means `(x̄₁, x̄₂)`.
    pub fn pinned_means(&self) -> (f64, f64) {
        let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(self.p_value / 2.0).abs();
        let rn = (self.n as f64).sqrt();
        (z / rn, z / rn - self.gap / rn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapEstimate {
    pub n: usize,
    /// Fraction of runs with `M₁ < M₂`.
    pub ds: f64,
    /// Fraction of runs with `I₁ < I₂`; `None` when no MDS runs were requested.
    pub mds: Option<f64>,
    pub ds_reps: usize,
    pub mds_reps: usize,
}

/// Shifts an i.i.d. `N(0, 1)` sample so that its mean is exactly `target`.
///
/// For a Gaussian sample the centered values are independent of the sample
/// mean, so this draws from the conditional law given `X̄ = target`.
fn pinned_column<R: Rng + ?Sized>(n: usize, target: f64, rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let m = out.iter().sum::<f64>() / n as f64;
    out.iter_mut().for_each(|v| *v = *v - m + target);
}

/// One data set: columns 0 and 1 pinned, the rest Normal means with a
/// random `signal_fraction` of them carrying `N(0, signal_sd²)` means.
pub fn sample_swap_data<R: Rng + ?Sized>(cfg: &SwapConfig, rng: &mut R) -> Result<Matrix<f64>> {
    if cfg.p < 3 || cfg.n < 4 {
        return Err(Error::InvalidArgument(format!("swap experiment needs p ≥ 3 and n ≥ 4, got p={}, n={}", cfg.p, cfg.n)));
    }
    let (t1, t2) = cfg.pinned_means();
    let rest = cfg.p - 2;
    let n_signal = (cfg.signal_fraction * rest as f64).round() as usize;
    let mut mu = vec![0.0; rest];
    for j in rand::seq::index::sample(rng, rest, n_signal.min(rest)) {
        mu[j] = cfg.signal_sd * rng.sample::<f64, _>(StandardNormal);
    }
    let mut x = Matrix::zeros(cfg.n, cfg.p);
    pinned_column(cfg.n, t1, rng, x.col_mut(0));
    pinned_column(cfg.n, t2, rng, x.col_mut(1));
    for (j, &m) in mu.iter().enumerate() {
        for v in x.col_mut(j + 2) {
            *v = m + rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(x)
}

/// DS mirror statistics of the two pinned columns for one random split.
pub fn ds_pair(x: &Matrix<f64>, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let split = random_split(x.nrows(), rng)?;
    let (a, b) = half_means(&x.select_cols(&[0, 1]), &split);
    Ok((normal_means_mirror(a[0], b[0]), normal_means_mirror(a[1], b[1])))
}

/// Runs `max(ds_reps, mds_reps)` data sets; run `r` uses substream
/// `("swap", r)` of `stream`. DS is evaluated on the first `ds_reps` data
/// sets and MDS on the first `mds_reps`.
pub fn swap_experiment(cfg: &SwapConfig, stream: &Stream) -> Result<SwapEstimate> {
    if cfg.ds_reps == 0 {
        return Err(Error::InvalidArgument("swap experiment needs at least one DS run".into()));
    }
    let reps = cfg.ds_reps.max(cfg.mds_reps);
    let m = cfg.m_per_n * cfg.n;
    let outcomes: Vec<(Option<bool>, Option<bool>)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let s = stream.derive("swap", r as u64);
            let x = sample_swap_data(cfg, &mut s.derive("data", 0).rng())?;
            let ds = if r < cfg.ds_reps {
                let (m1, m2) = ds_pair(&x, &mut s.derive("ds", 0).rng())?;
                Some(m1 < m2)
            } else {
                None
            };
            let mds = if r < cfg.mds_reps {
                let rates = normal_means_inclusion_rates(&x, cfg.q, m, &s.derive("mds", 0))?;
                Some(rates.rates[0] < rates.rates[1])
            } else {
                None
            };
            Ok((ds, mds))
        })
        .collect::<Result<_>>()?;
    let frac = |hits: usize, total: usize| hits as f64 / total as f64;
    let ds_hits = outcomes.iter().filter(|o| o.0 == Some(true)).count();
    let mds_hits = outcomes.iter().filter(|o| o.1 == Some(true)).count();
    Ok(SwapEstimate {
        n: cfg.n,
        ds: frac(ds_hits, cfg.ds_reps),
        mds: (cfg.mds_reps > 0).then(|| frac(mds_hits, cfg.mds_reps)),
        ds_reps: cfg.ds_reps,
        mds_reps: cfg.mds_reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_means_give_target_p_values() {
        let cfg = SwapConfig::new(200);
        let (t1, t2) = cfg.pinned_means();
        let rn = 200f64.sqrt();
        assert!((t1 * rn - 2.326_347_874).abs() < 1e-6);
        assert!((t2 * rn - 2.306_347_874).abs() < 1e-6);
        let x = sample_swap_data(&cfg, &mut Stream::new(3).rng()).unwrap();
        let pv = crate::harness::normal_means_pvalues(&x);
        assert!((pv[0] - 0.020).abs() < 1e-9);
        assert!((pv[1] - 0.021).abs() < 5e-4);
        assert!(pv[0] < pv[1]);
    }

    #[test]
    fn signal_fraction_of_remaining_columns() {
        let mut cfg = SwapConfig::new(2000);
        cfg.p = 102;
        let x = sample_swap_data(&cfg, &mut Stream::new(8).rng()).unwrap();
        // null columns have |x̄| = O(1/√n); signals mostly far larger
        let big = (2..102).filter(|&j| crate::linalg::mean(x.col(j)).abs() > 0.1).count();
        assert!((10..=20).contains(&big), "{big}");
    }
}

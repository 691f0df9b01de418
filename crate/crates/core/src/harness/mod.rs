//! Monte-Carlo experiment harness.
//!
//! An [`ExperimentConfig`] names a synthetic scenario, a selection method and
//! a replication count. Replication `r` draws everything from substream
//! `("rep", r)` of the master seed, so the records do not depend on the
//! number of worker threads.

pub mod bh;
pub mod io;
pub mod swap;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggm::{fdp_power_edges, ggm_select_with, Edge, NodewiseConfig, SplitMethod};
use crate::linalg::{Dataset, Matrix};
use crate::mds::{mds_select_with, normal_means_mds};
use crate::mirror::{ds_select_with, normal_means_ds, ContrastFunction, DsConfig};
use crate::regress::{CvConfig, LassoConfig};
use crate::rng::Stream;
use crate::synth::{
    sample_design, sample_gaussian_graph_data, sample_linear_truth, sample_response, CovarianceKind,
    CovarianceSpec, DesignDistribution, DesignSpec, GraphSpec, LinearTruth, SignalReading,
};

pub use bh::{bh_procedure, fdp_power, normal_means_pvalues};

pub const SPEC_VERSION: u32 = 1;
/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "MIRROR_SELECT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ds,
    Mds,
    Bhq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Linear {
        n: usize,
        p: usize,
        p1: usize,
        delta: f64,
        #[serde(default)]
        design: DesignDistribution,
        covariance: CovarianceKind,
        #[serde(default)]
        signal_reading: SignalReading,
    },
    Ggm {
        n: usize,
        graph: GraphSpec,
    },
    NormalMeans {
        n: usize,
        p: usize,
        p1: usize,
        /// Signal means are drawn from `N(0, signal_sd²)`.
        signal_sd: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvSettings {
    pub folds: usize,
    pub grid_size: usize,
    pub min_ratio: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        let c = CvConfig::default();
        Self { folds: c.folds, grid_size: c.grid_size, min_ratio: c.min_ratio, tol: c.lasso.tol, max_sweeps: c.lasso.max_sweeps }
    }
}

impl From<CvSettings> for CvConfig {
    fn from(s: CvSettings) -> Self {
        CvConfig {
            folds: s.folds,
            grid_size: s.grid_size,
            min_ratio: s.min_ratio,
            lasso: LassoConfig { tol: s.tol, max_sweeps: s.max_sweeps },
        }
    }
}

fn default_q() -> f64 {
    0.1
}
fn default_m() -> usize {
    crate::mds::DEFAULT_REPLICATIONS
}
fn default_workers() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec_version: u32,
    pub scenario: Scenario,
    pub method: Method,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub contrast: ContrastFunction,
    pub n_reps: usize,
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub cv: CvSettings,
    /// When false, `wall_time_ms` is written as zero so output is
    /// reproducible byte for byte.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.spec_version != SPEC_VERSION {
            return bad(format!("unsupported spec_version {}", self.spec_version));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q must lie in (0, 1), got {}", self.q));
        }
        if self.n_reps == 0 {
            return bad("n_reps must be at least 1".into());
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.method == Method::Bhq && !matches!(self.scenario, Scenario::NormalMeans { .. }) {
            return bad("BHQ is only available for the normal_means scenario".into());
        }
        match self.scenario {
            Scenario::Linear { n, p, p1, .. } | Scenario::NormalMeans { n, p, p1, .. } if p1 > p || n < 4 || p < 2 => {
                bad(format!("inconsistent dimensions n={n}, p={p}, p1={p1}"))
            }
            _ => Ok(()),
        }
    }

    pub fn effective_workers(&self) -> usize {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&w| w > 0)
            .unwrap_or(self.workers.max(1))
    }

    fn ds_config(&self) -> DsConfig {
        DsConfig { q: self.q, contrast: self.contrast, cv: self.cv.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub rep: usize,
    pub fdp: f64,
    pub power: f64,
    pub n_selected: usize,
    pub cutoff: f64,
    pub wall_time_ms: f64,
    /// `ok`, or `error:<message>` for a quarantined replication.
    pub status: String,
}

impl MetricsRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_reps: usize,
    pub n_failed: usize,
    pub mean_fdp: f64,
    pub sd_fdp: f64,
    pub mean_power: f64,
    pub sd_power: f64,
    pub mean_selected: f64,
}

/// Mean and sample standard deviation (`n − 1` denominator; zero for one value).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (m, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (m, (ss / (n - 1.0)).sqrt())
}

impl Summary {
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let ok: Vec<&MetricsRecord> = records.iter().filter(|r| r.is_ok()).collect();
        let fdp: Vec<f64> = ok.iter().map(|r| r.fdp).collect();
        let power: Vec<f64> = ok.iter().map(|r| r.power).collect();
        let sel: Vec<f64> = ok.iter().map(|r| r.n_selected as f64).collect();
        let (mean_fdp, sd_fdp) = mean_sd(&fdp);
        let (mean_power, sd_power) = mean_sd(&power);
        Self {
            n_reps: records.len(),
            n_failed: records.len() - ok.len(),
            mean_fdp,
            sd_fdp,
            mean_power,
            sd_power,
            mean_selected: mean_sd(&sel).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
}

/// One synthetic data set with its ground truth.
#[derive(Debug, Clone)]
pub enum ScenarioData {
    Linear { data: Dataset<f64>, truth: LinearTruth<f64> },
    Ggm { x: Matrix<f64>, edges: BTreeSet<Edge> },
    NormalMeans { x: Matrix<f64>, mu: Vec<f64>, s1: Vec<usize> },
}

/// Normal means data: `p1` random columns get means drawn from
/// `N(0, signal_sd²)`, all entries have unit variance.
pub fn sample_normal_means<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    p1: usize,
    signal_sd: f64,
    rng: &mut R,
) -> Result<(Matrix<f64>, Vec<f64>, Vec<usize>)> {
    if p1 > p {
        return Err(Error::InvalidArgument(format!("p1 = {p1} exceeds p = {p}")));
    }
    let mut s1 = rand::seq::index::sample(rng, p, p1).into_vec();
    s1.sort_unstable();
    let mut mu = vec![0.0; p];
    for &j in &s1 {
        mu[j] = signal_sd * rng.sample::<f64, _>(StandardNormal);
    }
    let mut x = Matrix::zeros(n, p);
    for j in 0..p {
        for v in x.col_mut(j) {
            *v = mu[j] + rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((x, mu, s1))
}

/// Draws the data for one replication.
pub fn generate_scenario<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<ScenarioData> {
    match *scenario {
        Scenario::Linear { n, p, p1, delta, design, covariance, signal_reading } => {
            let spec = DesignSpec { distribution: design, covariance: CovarianceSpec { kind: covariance, p }, n };
            let x = sample_design::<f64, R>(&spec, rng)?;
            let truth = sample_linear_truth(p, p1, delta, n, signal_reading, rng)?;
            let y = sample_response(&x, &truth, rng)?;
            Ok(ScenarioData::Linear { data: Dataset::standardized(&x, &y)?, truth })
        }
        Scenario::Ggm { n, graph } => {
            let (x, edges) = sample_gaussian_graph_data::<f64, R>(&graph, n, rng)?;
            Ok(ScenarioData::Ggm { x, edges })
        }
        Scenario::NormalMeans { n, p, p1, signal_sd } => {
            let (x, mu, s1) = sample_normal_means(n, p, p1, signal_sd, rng)?;
            Ok(ScenarioData::NormalMeans { x, mu, s1 })
        }
    }
}

/// `(fdp, power, n_selected, cutoff)` for one replication.
fn run_method(cfg: &ExperimentConfig, data: &ScenarioData, stream: &Stream) -> Result<(f64, f64, usize, f64)> {
    let ds = cfg.ds_config();
    match data {
        ScenarioData::Linear { data, truth } => {
            let res = match cfg.method {
                Method::Ds => ds_select_with(data, &ds, &mut stream.rng())?,
                Method::Mds => mds_select_with(data, &ds, cfg.m, stream)?,
                Method::Bhq => unreachable!("rejected by validate"),
            };
            let (f, pw) = fdp_power(&res.selected, &truth.s1, data.p());
            Ok((f, pw, res.selected.len(), res.tau))
        }
        ScenarioData::Ggm { x, edges } => {
            let method = match cfg.method {
                Method::Ds => SplitMethod::Ds,
                Method::Mds => SplitMethod::Mds,
                Method::Bhq => unreachable!("rejected by validate"),
            };
            let node = NodewiseConfig { method, m: cfg.m, contrast: cfg.contrast, cv: ds.cv };
            let g = ggm_select_with(x, cfg.q, &node, stream)?;
            let (f, pw) = fdp_power_edges(&g.edges, edges);
            Ok((f, pw, g.edges.len(), f64::NAN))
        }
        ScenarioData::NormalMeans { x, s1, .. } => {
            let (selected, cutoff) = match cfg.method {
                Method::Ds => {
                    let r = normal_means_ds(x, cfg.q, &mut stream.rng())?;
                    (r.selected, r.tau)
                }
                Method::Mds => {
                    let r = normal_means_mds(x, cfg.q, cfg.m, stream)?;
                    (r.selected, r.tau)
                }
                Method::Bhq => {
                    let pv = normal_means_pvalues(x);
                    let sel = bh_procedure(&pv, cfg.q);
                    let cut = sel.iter().map(|&j| pv[j]).fold(0.0, f64::max);
                    (sel, cut)
                }
            };
            let (f, pw) = fdp_power(&selected, s1, x.ncols());
            Ok((f, pw, selected.len(), cutoff))
        }
    }
}

/// Streams for replication `rep`: data generation and method randomness.
pub fn rep_streams(master_seed: u64, rep: usize) -> (Stream, Stream) {
    let r = Stream::new(master_seed).derive("rep", rep as u64);
    (r.derive("data", 0), r.derive("method", 0))
}

pub fn run_replication(cfg: &ExperimentConfig, rep: usize) -> MetricsRecord {
    let start = Instant::now();
    let (data_stream, method_stream) = rep_streams(cfg.master_seed, rep);
    let outcome = generate_scenario(&cfg.scenario, &mut data_stream.rng())
        .and_then(|data| run_method(cfg, &data, &method_stream));
    let wall_time_ms = if cfg.record_timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    match outcome {
        Ok((fdp, power, n_selected, cutoff)) => {
            MetricsRecord { rep, fdp, power, n_selected, cutoff, wall_time_ms, status: "ok".into() }
        }
        Err(e) => {
            log::warn!("replication {rep} failed: {e}");
            MetricsRecord {
                rep,
                fdp: f64::NAN,
                power: f64::NAN,
                n_selected: 0,
                cutoff: f64::NAN,
                wall_time_ms,
                status: format!("error:{e}"),
            }
        }
    }
}

/// Runs every replication on a pool of `effective_workers()` threads and
/// summarizes the successful ones.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.effective_workers())
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut records: Vec<MetricsRecord> =
        pool.install(|| (0..cfg.n_reps).into_par_iter().map(|r| run_replication(cfg, r)).collect());
    records.sort_by_key(|r| r.rep);
    let summary = Summary::from_records(&records);
    if summary.n_failed > 0 {
        log::warn!("{} of {} replications failed and were excluded", summary.n_failed, summary.n_reps);
    }
    Ok(ExperimentOutput { records, summary })
}

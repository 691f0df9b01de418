//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,7` restricts the run to the listed criteria. Failed
//! criteria are reported as FAIL lines and in the closing tally; with
//! `ACCEPTANCE_STRICT=1` the process also exits non-zero.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use mirror_select::harness::io::records_to_string;
use mirror_select::harness::swap::{swap_experiment, SwapConfig};
use mirror_select::harness::{
    fdp_power, generate_scenario, mean_sd, rep_streams, run_experiment, CvSettings,
    ExperimentConfig, Method, Scenario, ScenarioData,
};
use mirror_select::mds::{replicate_selections, InclusionRates, Replication};
use mirror_select::mirror::{select_cutoff, select_from_mirror, split_fit, SplitFit};
use mirror_select::regress::{lasso_cv_with, lasso_fit_with, CvConfig, LassoConfig};
use mirror_select::synth::{CovarianceKind, DesignDistribution, GraphKind, GraphSpec, SignalReading};
use mirror_select::{mds_cutoff, ContrastFunction, Dataset, Matrix, Stream};

const Q: f64 = 0.1;
const GRID_REPS: usize = 20;
const RHOS: [f64; 3] = [0.0, 0.4, 0.8];

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Self { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("    [{}] {line}", if ok { "ok" } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.lines.push(format!("    {line}"));
    }
}

fn linear(rho: f64, delta: f64) -> Scenario {
    Scenario::Linear {
        n: 500,
        p: 500,
        p1: 50,
        delta,
        design: DesignDistribution::Gaussian,
        covariance: CovarianceKind::ToeplitzBlock { rho },
        signal_reading: SignalReading::Sd,
    }
}

fn linear_data(scenario: &Scenario, seed: u64, rep: usize) -> (Dataset<f64>, Vec<usize>, Stream) {
    let (data_stream, method_stream) = rep_streams(seed, rep);
    match generate_scenario(scenario, &mut data_stream.rng()).expect("linear scenario") {
        ScenarioData::Linear { data, truth } => (data, truth.s1, method_stream),
        _ => unreachable!(),
    }
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

/// Largest KKT violation of a Lasso solution of `(1/2n)‖y − Xβ‖² + λ‖β‖₁`.
fn kkt_residual(x: &Matrix<f64>, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let fitted = x.mul_vec(beta);
    let r: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    (0..x.ncols())
        .map(|j| {
            let g = x.col(j).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n;
            if beta[j] != 0.0 {
                (g - lambda * beta[j].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn split_kkt(data: &Dataset<f64>, fit: &SplitFit<f64>) -> f64 {
    let half = data.restandardized_rows(&fit.split.first_half).expect("half");
    kkt_residual(&half.x, &half.y, &fit.beta1, fit.lambda.expect("lasso penalty"))
}

/// DS and MDS outcomes of one linear replication for every contrast.
struct LinearRep {
    ds: Option<Vec<(f64, f64)>>,
    mds: Vec<(f64, f64)>,
    kkt: f64,
}

fn grid_rep(scenario: &Scenario, seed: u64, rep: usize, m: usize) -> LinearRep {
    let (data, s1, stream) = linear_data(scenario, seed, rep);
    let p = data.p();
    let cv = CvConfig::default();
    let (ds, kkt) = match split_fit(&data, &cv, &mut stream.rng()) {
        Ok(fit) => {
            let out = ContrastFunction::ALL
                .iter()
                .map(|&c| fdp_power(&select_from_mirror(fit.mirror(c), Q).selected, &s1, p))
                .collect();
            (Some(out), split_kkt(&data, &fit))
        }
        Err(e) => {
            eprintln!("    DS replication {rep} failed: {e}");
            (None, 0.0)
        }
    };
    let reps = replicate_selections(&data, Q, &cv, &ContrastFunction::ALL, m, &stream).expect("valid level");
    let mds = (0..ContrastFunction::ALL.len())
        .map(|c| {
            let rates: InclusionRates<f64> = InclusionRates::from_replications(p, &reps, c);
            fdp_power(&mds_cutoff(&rates.rates, Q).selected, &s1, p)
        })
        .collect();
    LinearRep { ds, mds, kkt }
}

struct Grid {
    /// `[rho][rep]`
    reps: Vec<Vec<LinearRep>>,
    elapsed: Duration,
}

fn run_grid() -> Grid {
    let start = Instant::now();
    let reps = RHOS
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let scenario = linear(rho, 5.0);
            (0..GRID_REPS).into_par_iter().map(|r| grid_rep(&scenario, 1000 + i as u64, r, 50)).collect()
        })
        .collect();
    Grid { reps, elapsed: start.elapsed() }
}

fn column(values: &[&(f64, f64)], power: bool) -> Vec<f64> {
    values.iter().map(|v| if power { v.1 } else { v.0 }).collect()
}

fn criterion1(grid: &Grid) -> Verdict {
    let mut v = Verdict::new();
    let bound_slack = 2.0 / (GRID_REPS as f64).sqrt();
    let mut kkt = 0.0f64;
    for (i, rho) in RHOS.iter().enumerate() {
        let reps = &grid.reps[i];
        let failed = reps.iter().filter(|r| r.ds.is_none()).count();
        for (c, contrast) in ContrastFunction::ALL.iter().enumerate() {
            let vals: Vec<&(f64, f64)> = reps.iter().filter_map(|r| r.ds.as_ref().map(|d| &d[c])).collect();
            let (mean, sd) = mean_sd(&column(&vals, false));
            let bound = Q + bound_slack * sd;
            v.check(
                mean <= bound,
                format!("rho={rho} {contrast}: DS mean FDP {mean:.4} <= {bound:.4} (sd {sd:.4}, failed reps {failed})"),
            );
        }
        kkt = reps.iter().map(|r| r.kkt).fold(kkt, f64::max);
    }
    v.note(format!("largest KKT residual over these Lasso fits: {kkt:.2e}"));
    v
}

fn criterion2(grid: &Grid) -> Verdict {
    let mut v = Verdict::new();
    for (i, rho) in RHOS.iter().enumerate() {
        let reps = &grid.reps[i];
        for (c, contrast) in ContrastFunction::ALL.iter().enumerate() {
            let ds: Vec<&(f64, f64)> = reps.iter().filter_map(|r| r.ds.as_ref().map(|d| &d[c])).collect();
            let mds: Vec<&(f64, f64)> = reps.iter().map(|r| &r.mds[c]).collect();
            let (ds_fdp, _) = mean_sd(&column(&ds, false));
            let (ds_pow, _) = mean_sd(&column(&ds, true));
            let (mds_fdp, _) = mean_sd(&column(&mds, false));
            let (mds_pow, _) = mean_sd(&column(&mds, true));
            v.check(
                mds_fdp <= ds_fdp + 0.02 && mds_pow >= ds_pow - 0.02,
                format!(
                    "rho={rho} {contrast}: MDS FDP {mds_fdp:.4} vs DS {ds_fdp:.4}; MDS power {mds_pow:.4} vs DS {ds_pow:.4}"
                ),
            );
        }
    }
    v
}

fn criterion3() -> Verdict {
    let mut v = Verdict::new();
    let scenario = linear(0.0, 3.0);
    let cv = CvConfig::default();
    let contrast = [ContrastFunction::default()];
    let powers: Vec<(f64, f64)> = (0..GRID_REPS)
        .into_par_iter()
        .map(|r| {
            let (data, s1, stream) = linear_data(&scenario, 3000, r);
            let reps: Vec<Replication> = replicate_selections(&data, Q, &cv, &contrast, 100, &stream).expect("valid level");
            // a 50-split run uses exactly the first 50 substreams
            let power = |m: usize| {
                let rates: InclusionRates<f64> = InclusionRates::from_replications(data.p(), &reps[..m], 0);
                fdp_power(&mds_cutoff(&rates.rates, Q).selected, &s1, data.p()).1
            };
            (power(50), power(100))
        })
        .collect();
    let p50 = mean_sd(&powers.iter().map(|p| p.0).collect::<Vec<_>>()).0;
    let p100 = mean_sd(&powers.iter().map(|p| p.1).collect::<Vec<_>>()).0;
    v.check((p100 - p50).abs() <= 0.05, format!("power m=50 {p50:.4}, m=100 {p100:.4}, |diff| {:.4} <= 0.05", (p100 - p50).abs()));
    v
}

fn experiment(scenario: Scenario, method: Method, q: f64, n_reps: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        spec_version: 1,
        scenario,
        method,
        q,
        m: 50,
        contrast: ContrastFunction::default(),
        n_reps,
        master_seed: seed,
        workers: 1,
        cv: CvSettings::default(),
        record_timing: false,
    }
}

fn criterion4() -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let cfg = experiment(Scenario::NormalMeans { n: 500, p: 800, p1: 160, signal_sd: 0.5 }, Method::Bhq, Q, 50, 4000);
    let out = run_experiment(&cfg).expect("bhq experiment");
    let elapsed = start.elapsed();
    let s = &out.summary;
    v.check((0.06..=0.10).contains(&s.mean_fdp), format!("BHq mean FDP {:.4} in [0.06, 0.10] (sd {:.4})", s.mean_fdp, s.sd_fdp));
    v.check(elapsed.as_secs_f64() <= 60.0, format!("runtime {:.1} s <= 60 s", elapsed.as_secs_f64()));
    v
}

fn criterion5() -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let small = swap_experiment(&SwapConfig::new(200), &Stream::new(5000)).expect("swap n=200");
    let large = swap_experiment(&SwapConfig::new(5000), &Stream::new(5001)).expect("swap n=5000");
    let elapsed = start.elapsed();
    for est in [&small, &large] {
        v.check(
            (0.3..=0.5).contains(&est.ds),
            format!("n={}: DS swap {:.4} in [0.3, 0.5] over {} runs", est.n, est.ds, est.ds_reps),
        );
    }
    let (ms, ml) = (small.mds.expect("mds runs"), large.mds.expect("mds runs"));
    v.check(
        ml <= 0.1 && ml <= ms,
        format!("MDS swap n=5000 {ml:.4} <= 0.1 and <= n=200 value {ms:.4} ({} runs each, m = 10n)", large.mds_reps),
    );
    v.check(minutes(elapsed) <= 30.0, format!("runtime {:.1} min <= 30 min", minutes(elapsed)));
    v
}

fn criterion6() -> Verdict {
    let mut v = Verdict::new();
    let graph = GraphSpec { kind: GraphKind::Banded { s: 8, a: -0.6, c: 1.5 }, p: 100 };
    let scenario = Scenario::Ggm { n: 1000, graph };
    let start = Instant::now();
    for method in [Method::Ds, Method::Mds] {
        let t = Instant::now();
        let out = run_experiment(&experiment(scenario, method, 0.2, 20, 6000)).expect("ggm experiment");
        let s = &out.summary;
        v.check(
            s.mean_fdp <= 0.25 && s.mean_power >= 0.5 && s.n_failed == 0,
            format!(
                "{method:?}: edge FDP {:.4} <= 0.25, power {:.4} >= 0.5, failed reps {} ({:.1} min)",
                s.mean_fdp,
                s.mean_power,
                s.n_failed,
                minutes(t.elapsed())
            ),
        );
    }
    let elapsed = start.elapsed();
    v.check(minutes(elapsed) <= 20.0, format!("runtime {:.1} min <= 20 min", minutes(elapsed)));
    v
}

/// Cutoff by scanning a grid that contains every possible `|m_j|`.
///
/// Entries are multiples of 1/8 in [−4, 4], the grid has step 1/16, and
/// `fdp_hat` is counted directly at each grid point.
fn grid_cutoff(m: &[f64], q: f64) -> f64 {
    let smallest = m.iter().filter(|v| **v != 0.0).map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    for k in 1..=64 {
        let t = k as f64 / 16.0;
        if t < smallest {
            continue;
        }
        let pos = m.iter().filter(|&&v| v > t).count();
        let neg = m.iter().filter(|&&v| v < -t).count();
        if pos == 0 {
            break;
        }
        if neg as f64 / pos as f64 <= q {
            return t;
        }
    }
    f64::INFINITY
}

/// `(fdp, power)` by bit counting over subsets of `{0..8}`.
fn subset_oracle(sel: u32, truth: u32) -> (f64, f64) {
    let fp = (sel & !truth).count_ones() as f64;
    let tp = (sel & truth).count_ones() as f64;
    (fp / sel.count_ones().max(1) as f64, tp / truth.count_ones().max(1) as f64)
}

fn bits(mask: u32) -> Vec<usize> {
    (0..8).filter(|b| mask & (1 << b) != 0).collect()
}

/// `(positive, total)` nonzero null mirror signs, or `None` unless the
/// screen kept every signal without truncation.
fn null_signs(fit: &SplitFit<f64>, s1: &[usize], p: usize) -> Option<(usize, usize)> {
    if fit.truncated || !s1.iter().all(|j| fit.screened.contains(j)) {
        return None;
    }
    let m = fit.mirror(ContrastFunction::default()).m;
    let nulls = (0..p).filter(|j| !s1.contains(j) && m[*j] != 0.0);
    Some(nulls.fold((0, 0), |(pos, all), j| (pos + usize::from(m[j] > 0.0), all + 1)))
}

fn criterion7(grid: Option<&Grid>) -> Verdict {
    let mut v = Verdict::new();
    let mut rng = Stream::new(7000).rng();

    // select_cutoff against the grid scan
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..40);
        let m: Vec<f64> = (0..len).map(|_| rng.gen_range(-32i32..=32) as f64 / 8.0).collect();
        let q = [0.05, 0.1, 0.2, 0.3, 0.5][rng.gen_range(0..5)];
        let tau = select_cutoff(&m, q).tau;
        if tau != grid_cutoff(&m, q) {
            mismatches += 1;
        }
    }
    v.check(mismatches == 0, format!("select_cutoff vs grid scan: {mismatches} mismatches in 1000 vectors"));

    // orthonormal design: the Lasso is soft-thresholding of xᵀy/n
    let (n, p) = (60, 12);
    let mut q_cols: Vec<Vec<f64>> = Vec::new();
    for _ in 0..p {
        let mut c: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for b in &q_cols {
            let d: f64 = c.iter().zip(b).map(|(a, b)| a * b).sum();
            c.iter_mut().zip(b).for_each(|(a, b)| *a -= d * b);
        }
        let norm = c.iter().map(|a| a * a).sum::<f64>().sqrt();
        q_cols.push(c.into_iter().map(|a| a / norm).collect());
    }
    let x = Matrix::from_fn(n, p, |i, j| q_cols[j][i] * (n as f64).sqrt());
    let y: Vec<f64> = (0..n).map(|i| 1.5 * x[(i, 0)] - 0.7 * x[(i, 3)] + rng.sample::<f64, _>(StandardNormal)).collect();
    let mut worst = 0.0f64;
    for lambda in [0.01, 0.1, 0.3, 0.8] {
        let fit = lasso_fit_with(&x, &y, lambda, LassoConfig::default()).expect("orthonormal fit");
        for j in 0..p {
            let z = x.col(j).iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            let closed = z.signum() * (z.abs() - lambda).max(0.0);
            worst = worst.max((fit.beta[j] - closed).abs());
        }
    }
    v.check(worst <= 1e-6, format!("orthonormal closed form: max error {worst:.2e} <= 1e-6"));

    // KKT conditions on single fits and cross-validated fits
    let mut kkt = 0.0f64;
    for (n, p) in [(80, 30), (60, 150), (200, 400)] {
        let x = Matrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n)
            .map(|i| (0..5).map(|j| x[(i, j)] * (1.0 - 0.4 * j as f64)).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let d = Dataset::standardized(&x, &y).expect("data");
        for lambda in [0.02, 0.1, 0.4] {
            let fit = lasso_fit_with(&d.x, &d.y, lambda, LassoConfig::default()).expect("fit");
            kkt = kkt.max(kkt_residual(&d.x, &d.y, &fit.beta, lambda));
        }
        let cv = lasso_cv_with(&d.x, &d.y, &CvConfig::default(), &mut rng).expect("cv fit");
        kkt = kkt.max(kkt_residual(&d.x, &d.y, &cv.fit.beta, cv.fit.lambda));
    }

    // fdp_power over every pair of subsets of {0..8}
    let mut bad = 0;
    for sel in 0u32..256 {
        for truth in 0u32..256 {
            if fdp_power(&bits(sel), &bits(truth), 8) != subset_oracle(sel, truth) {
                bad += 1;
            }
        }
    }
    v.check(bad == 0, format!("fdp_power vs subset enumeration: {bad} mismatches in 65536 pairs"));

    // budget cutoff hand examples
    let a = mds_cutoff(&[0.0, 0.02, 0.03, 0.45, 0.5], 0.1);
    let b = mds_cutoff(&[0.05, 0.05, 0.05, 0.85], 0.1);
    let c = mds_cutoff(&[0.5, 0.5], 0.1);
    let ok = a.ell == 3
        && a.cutoff == 0.03
        && a.selected == [3, 4]
        && b.ell == 2
        && b.selected == [3]
        && c.degenerate
        && c.selected == [0, 1];
    v.check(ok, "budget cutoff hand examples".into());

    // null mirror signs on replications where the screen kept every signal;
    // signal coefficients are Gaussian, so small ones are often missed
    let scenario = Scenario::Linear {
        n: 300,
        p: 100,
        p1: 10,
        delta: 10.0,
        design: DesignDistribution::Gaussian,
        covariance: CovarianceKind::Identity,
        signal_reading: SignalReading::Sd,
    };
    let fits: Vec<(f64, Option<(usize, usize)>)> = (0..500)
        .into_par_iter()
        .filter_map(|r| {
            let (data, s1, stream) = linear_data(&scenario, 7100, r);
            let fit = split_fit(&data, &CvConfig::default(), &mut stream.rng()).ok()?;
            Some((split_kkt(&data, &fit), null_signs(&fit, &s1, data.p())))
        })
        .collect();
    let counts: Vec<Option<(usize, usize)>> = fits.iter().map(|f| f.1).collect();
    kkt = fits.iter().map(|f| f.0).fold(kkt, f64::max);
    let mut kkt_fits = 12 + fits.len();
    if let Some(g) = grid {
        kkt = g.reps.iter().flatten().map(|r| r.kkt).fold(kkt, f64::max);
        kkt_fits += g.reps.iter().flatten().filter(|r| r.ds.is_some()).count();
    }
    v.check(kkt <= 1e-5, format!("KKT residuals: max {kkt:.2e} <= 1e-5 over {kkt_fits} Lasso fits"));
    let kept = counts.iter().flatten().count();
    let (pos, all) = counts.iter().flatten().fold((0, 0), |(p, a), (x, y)| (p + x, a + y));
    let freq = pos as f64 / all.max(1) as f64;
    v.check(
        kept >= 100 && (freq - 0.5).abs() <= 0.03,
        format!("null mirror signs: positive frequency {freq:.4} over {all} signs from {kept} of 500 replications"),
    );
    v
}

fn criterion8() -> Verdict {
    let mut v = Verdict::new();
    let graph = GraphSpec { kind: GraphKind::Banded { s: 3, a: -0.6, c: 1.5 }, p: 12 };
    let small_linear = Scenario::Linear {
        n: 120,
        p: 60,
        p1: 6,
        delta: 8.0,
        design: DesignDistribution::Gaussian,
        covariance: CovarianceKind::ToeplitzBlock { rho: 0.4 },
        signal_reading: SignalReading::Sd,
    };
    let nm = Scenario::NormalMeans { n: 100, p: 80, p1: 16, signal_sd: 0.5 };
    let configs = [
        (small_linear, Method::Ds),
        (small_linear, Method::Mds),
        (Scenario::Ggm { n: 200, graph }, Method::Ds),
        (Scenario::Ggm { n: 200, graph }, Method::Mds),
        (nm, Method::Ds),
        (nm, Method::Mds),
        (nm, Method::Bhq),
    ];
    for (i, (scenario, method)) in configs.into_iter().enumerate() {
        let mut cfg = experiment(scenario, method, 0.1, 6, 8000 + i as u64);
        cfg.m = 10;
        let outputs: Vec<String> = [1, 2, 4]
            .into_iter()
            .map(|w| {
                cfg.workers = w;
                records_to_string(&run_experiment(&cfg).expect("bench run").records).expect("csv")
            })
            .collect();
        let same = outputs.windows(2).all(|w| w[0] == w[1]);
        let kind = match scenario {
            Scenario::Linear { .. } => "linear",
            Scenario::Ggm { .. } => "ggm",
            Scenario::NormalMeans { .. } => "normal_means",
        };
        v.check(same, format!("{kind} {method:?}: CSV identical for 1, 2 and 4 workers ({} bytes)", outputs[0].len()));
    }
    v
}

fn selected() -> Vec<usize> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(s) => s.split(',').filter_map(|t| t.trim().parse().ok()).collect(),
        Err(_) => (1..=8).collect(),
    }
}

fn main() {
    let wanted = selected();
    let names = [
        "FDR control, linear DS",
        "MDS dominance over DS",
        "power saturation in m",
        "BHq anchor on Normal means",
        "swap probability shape",
        "GGM edge FDR and power",
        "oracle suites",
        "worker-count determinism",
    ];
    let grid = (wanted.contains(&1) || wanted.contains(&2)).then(run_grid);
    if let Some(g) = &grid {
        println!("linear grid: {} cells x {GRID_REPS} reps, DS plus 50-split MDS, {:.1} min", RHOS.len(), minutes(g.elapsed));
    }
    let (mut run, mut passed) = (0, 0);
    for id in 1..=8 {
        if !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = match id {
            1 => criterion1(grid.as_ref().expect("grid")),
            2 => criterion2(grid.as_ref().expect("grid")),
            3 => criterion3(),
            4 => criterion4(),
            5 => criterion5(),
            6 => criterion6(),
            7 => criterion7(grid.as_ref()),
            _ => criterion8(),
        };
        run += 1;
        passed += usize::from(verdict.pass);
        println!(
            "criterion {id}: {} {} ({:.1} s)",
            if verdict.pass { "PASS" } else { "FAIL" },
            names[id - 1],
            start.elapsed().as_secs_f64()
        );
        for line in &verdict.lines {
            println!("{line}");
        }
    }
    println!("acceptance: {passed} of {run} criteria passed");
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < run {
        std::process::exit(1);
    }
}

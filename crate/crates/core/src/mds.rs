//! Multiple data splitting: inclusion rates over repeated single-split
//! selections and the budget cutoff that turns them into one selection.

use rayon::prelude::*;

use crate::error::Result;
use crate::linalg::{random_split, Dataset, Matrix, SplitIndex};
use crate::mirror::{
    check_level, column_sum, finish_half_means, normal_means_from_halves, select_from_mirror, split_fit,
    ContrastFunction, Diagnostics, DsConfig, SelectionResult,
};
use crate::regress::CvConfig;
use crate::rng::Stream;
use crate::scalar::Scalar;

/// Default number of DS replications.
pub const DEFAULT_REPLICATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionRates<T> {
    /// `Î_j = (1/m)·Σ_k 1(j ∈ S_k) / max(|S_k|, 1)`
    pub rates: Vec<T>,
    pub m: usize,
    pub per_split_sizes: Vec<usize>,
    pub failed: usize,
}

impl<T: Scalar> InclusionRates<T> {
    /// Accumulates rates from per-replication selections, in replication order.
    pub fn from_selections(p: usize, selections: &[Vec<usize>]) -> Self {
        let mut rates = vec![T::zero(); p];
        for s in selections {
            if s.is_empty() {
                continue;
            }
            let w = T::one() / T::of(s.len() as f64);
            for &j in s {
                rates[j] = rates[j] + w;
            }
        }
        let m = selections.len();
        let mf = T::of(m.max(1) as f64);
        for r in &mut rates {
            *r = *r / mf;
        }
        Self { rates, m, per_split_sizes: selections.iter().map(Vec::len).collect(), failed: 0 }
    }

    /// Rates for contrast `c` of [`replicate_selections`] output; failed
    /// replications count as empty selections.
    pub fn from_replications(p: usize, reps: &[Replication], c: usize) -> Self {
        let selections: Vec<Vec<usize>> = reps.iter().map(|r| r.as_ref().map_or_else(Vec::new, |s| s[c].clone())).collect();
        let mut rates = Self::from_selections(p, &selections);
        rates.failed = reps.iter().filter(|r| r.is_none()).count();
        rates
    }

    pub fn nonempty(&self) -> usize {
        self.per_split_sizes.iter().filter(|&&s| s > 0).count()
    }
}

/// Runs `m` single-split selections, replication `k` on substream
/// `("mds", k)` of `stream`. Failed replications count as empty selections.
pub fn estimate_inclusion_rates<T: Scalar>(
    data: &Dataset<T>,
    q: f64,
    contrast: ContrastFunction,
    m: usize,
    stream: &Stream,
) -> Result<InclusionRates<T>> {
    let cfg = DsConfig { q, contrast, cv: CvConfig::default() };
    estimate_inclusion_rates_with(data, &cfg, m, stream)
}

pub fn estimate_inclusion_rates_with<T: Scalar>(
    data: &Dataset<T>,
    cfg: &DsConfig,
    m: usize,
    stream: &Stream,
) -> Result<InclusionRates<T>> {
    let reps = replicate_selections(data, cfg.q, &cfg.cv, &[cfg.contrast], m, stream)?;
    Ok(InclusionRates::from_replications(data.p(), &reps, 0))
}

/// Selections of one replication, one per contrast function; `None` when
/// the replication failed.
pub type Replication = Option<Vec<Vec<usize>>>;

/// Runs `m` split fits, replication `k` on substream `("mds", k)`, and
/// selects with every contrast function from the same fit.
///
/// The split fit does not depend on the contrast, so column `c` of the
/// output is exactly what a single-contrast run with `contrasts[c]` sees,
/// and the first `m'` replications are those of a run with `m'` splits.
pub fn replicate_selections<T: Scalar>(
    data: &Dataset<T>,
    q: f64,
    cv: &CvConfig,
    contrasts: &[ContrastFunction],
    m: usize,
    stream: &Stream,
) -> Result<Vec<Replication>> {
    if m == 0 {
        return Err(crate::Error::InvalidArgument("MDS needs at least one replication".into()));
    }
    check_level(q)?;
    let qt = T::of(q);
    Ok((0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream.derive("mds", k as u64).rng();
            match split_fit(data, cv, &mut rng) {
                Ok(fit) => Some(contrasts.iter().map(|&c| select_from_mirror(fit.mirror(c), qt).selected).collect()),
                Err(e) => {
                    log::warn!("mds replication {k} failed, counted as empty: {e}");
                    None
                }
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdsCutoff<T> {
    /// `Î_(ℓ)`, or zero under the degenerate rule.
    pub cutoff: T,
    /// Number of sorted rates inside the budget; zero when even the smallest
    /// exceeds `q`.
    pub ell: usize,
    pub selected: Vec<usize>,
    pub degenerate: bool,
}

/// Largest `ℓ` with `Î_(1) + … + Î_(ℓ) ≤ q`, then `{j : Î_j > Î_(ℓ)}`.
///
/// When `Î_(1) > q` no `ℓ` qualifies; every feature with a strictly positive
/// rate is selected and the result is flagged degenerate.
pub fn mds_cutoff<T: Scalar>(rates: &[T], q: T) -> MdsCutoff<T> {
    let mut sorted = rates.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = T::zero();
    let mut ell = 0;
    for (i, &r) in sorted.iter().enumerate() {
        cum = cum + r;
        if cum <= q {
            ell = i + 1;
        } else {
            break;
        }
    }
    let (cutoff, degenerate) = if ell == 0 { (T::zero(), true) } else { (sorted[ell - 1], false) };
    let selected = rates.iter().enumerate().filter(|(_, &r)| r > cutoff).map(|(j, _)| j).collect();
    MdsCutoff { cutoff, ell, selected, degenerate }
}

fn result_from_rates<T: Scalar>(rates: &InclusionRates<T>, q: f64) -> SelectionResult<T> {
    let cut = mds_cutoff(&rates.rates, T::of(q));
    SelectionResult {
        selected: cut.selected,
        tau: cut.cutoff,
        fdp_hat_at_tau: None,
        mirror: None,
        diagnostics: Diagnostics {
            degenerate_cutoff: cut.degenerate,
            failed_replications: rates.failed,
            ..Diagnostics::default()
        },
    }
}

/// MDS selection. `tau` of the result is the inclusion-rate cutoff.
pub fn mds_select<T: Scalar>(
    data: &Dataset<T>,
    q: f64,
    contrast: ContrastFunction,
    m: usize,
    stream: &Stream,
) -> Result<SelectionResult<T>> {
    let cfg = DsConfig { q, contrast, cv: CvConfig::default() };
    mds_select_with(data, &cfg, m, stream)
}

pub fn mds_select_with<T: Scalar>(
    data: &Dataset<T>,
    cfg: &DsConfig,
    m: usize,
    stream: &Stream,
) -> Result<SelectionResult<T>> {
    let rates = estimate_inclusion_rates_with(data, cfg, m, stream)?;
    Ok(result_from_rates(&rates, cfg.q))
}

/// Replications processed together by the Normal-means fast path.
const SPLIT_BATCH: usize = 64;
/// Columns summed together; one panel of rows stays cache resident.
const PANEL_WIDTH: usize = 32;
/// Rows of a panel processed together by every split of a batch.
const ROW_BLOCK: usize = 64;

/// Adds the listed rows of a row-major panel of width `w` into `acc`.
fn panel_sum<T: Scalar>(buf: &[T], w: usize, rows: &[usize], acc: &mut [T]) {
    for &i in rows {
        for (a, &v) in acc.iter_mut().zip(&buf[i * w..(i + 1) * w]) {
            *a = *a + v;
        }
    }
}

type PanelKernel<T> = unsafe fn(&[T], &[usize], &mut [T]);

/// [`panel_sum`] for full panels, compiled for the widest vector unit of the
/// running CPU. The accumulator is a fixed-size local array that stays in
/// registers; each column is still summed in row order, so every kernel
/// gives the same bits.
fn full_panel_kernel<T: Scalar>() -> PanelKernel<T> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            return full_panel_sum_avx512::<T>;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            return full_panel_sum_avx2::<T>;
        }
    }
    full_panel_sum::<T>
}

#[inline(always)]
fn full_panel_sum<T: Scalar>(buf: &[T], rows: &[usize], acc: &mut [T]) {
    let mut local = [T::zero(); PANEL_WIDTH];
    local.copy_from_slice(&acc[..PANEL_WIDTH]);
    for &i in rows {
        let row: &[T; PANEL_WIDTH] = buf[i * PANEL_WIDTH..(i + 1) * PANEL_WIDTH].try_into().expect("full panel row");
        for c in 0..PANEL_WIDTH {
            local[c] = local[c] + row[c];
        }
    }
    acc.copy_from_slice(&local);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn full_panel_sum_avx512<T: Scalar>(buf: &[T], rows: &[usize], acc: &mut [T]) {
    full_panel_sum(buf, rows, acc)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn full_panel_sum_avx2<T: Scalar>(buf: &[T], rows: &[usize], acc: &mut [T]) {
    full_panel_sum(buf, rows, acc)
}

/// Inclusion rates for the Normal means model.
///
/// Equivalent to running [`crate::mirror::normal_means_ds`] once per
/// replication on substream `("mds", k)`, but first-half column sums are
/// computed for a batch of splits at a time over cache-sized column panels.
pub fn normal_means_inclusion_rates<T: Scalar>(
    x: &Matrix<T>,
    q: f64,
    m: usize,
    stream: &Stream,
) -> Result<InclusionRates<T>> {
    if m == 0 {
        return Err(crate::Error::InvalidArgument("MDS needs at least one replication".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(crate::Error::InvalidArgument(format!("FDR level must lie in (0, 1), got {q}")));
    }
    let n = x.nrows();
    let p = x.ncols();
    let totals: Vec<T> = (0..p).map(|j| column_sum(x.col(j))).collect();
    // panel-major copy: panel b holds rows of columns [b·W, (b+1)·W) contiguously
    let panels: Vec<(usize, usize, Vec<T>)> = (0..p)
        .step_by(PANEL_WIDTH)
        .map(|start| {
            let w = PANEL_WIDTH.min(p - start);
            let mut buf = Vec::with_capacity(n * w);
            for i in 0..n {
                for j in start..start + w {
                    buf.push(x[(i, j)]);
                }
            }
            (start, w, buf)
        })
        .collect();
    let qt = T::of(q);
    let kernel = full_panel_kernel::<T>();

    let batches: Vec<Vec<Vec<usize>>> = (0..m)
        .step_by(SPLIT_BATCH)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|b0| {
            let b1 = (b0 + SPLIT_BATCH).min(m);
            let splits: Vec<SplitIndex> = (b0..b1)
                .map(|k| random_split(n, &mut stream.derive("mds", k as u64).rng()))
                .collect::<Result<_>>()?;
            let mut sums = vec![vec![T::zero(); p]; splits.len()];
            // row blocks of a panel stay in L1 while every split of the batch
            // adds its rows from them; bounds[s][b] is where block b starts
            // in split s's sorted rows
            let n_blocks = n.div_ceil(ROW_BLOCK);
            let bounds: Vec<Vec<usize>> = splits
                .iter()
                .map(|split| {
                    let mut bnd = vec![0; n_blocks + 1];
                    for &i in &split.first_half {
                        bnd[i / ROW_BLOCK + 1] += 1;
                    }
                    for b in 0..n_blocks {
                        bnd[b + 1] += bnd[b];
                    }
                    bnd
                })
                .collect();
            for (start, w, buf) in &panels {
                let (start, w) = (*start, *w);
                for b in 0..n_blocks {
                    for (s, split) in splits.iter().enumerate() {
                        let rows = &split.first_half[bounds[s][b]..bounds[s][b + 1]];
                        let acc = &mut sums[s][start..start + w];
                        if w == PANEL_WIDTH {
                            // SAFETY: the kernel was chosen for this CPU.
                            unsafe { kernel(buf, rows, acc) };
                        } else {
                            panel_sum(buf, w, rows, acc);
                        }
                    }
                }
            }
            Ok(splits
                .into_iter()
                .zip(sums)
                .map(|(split, first)| {
                    let (n1, n2) = (split.first_half.len(), split.second_half.len());
                    let (a, b) = finish_half_means(&totals, &first, n1, n2);
                    normal_means_from_halves(split, a, b, qt).selected
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let selections: Vec<Vec<usize>> = batches.into_iter().flatten().collect();
    Ok(InclusionRates::from_selections(p, &selections))
}

/// MDS for the Normal means model.
pub fn normal_means_mds<T: Scalar>(
    x: &Matrix<T>,
    q: f64,
    m: usize,
    stream: &Stream,
) -> Result<SelectionResult<T>> {
    let rates = normal_means_inclusion_rates(x, q, m, stream)?;
    Ok(result_from_rates(&rates, q))
}

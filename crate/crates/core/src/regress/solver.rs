//! Covariance-mode coordinate descent for the Lasso.
//!
//! The gradient `Xᵀ(y − Xβ)/n` is kept up to date through Gram columns that
//! are only computed for coordinates that have been nonzero at some point, so
//! a sweep over inactive coordinates is O(1) each. After each full sweep the
//! solver jumps to the minimizer on the current support and sign pattern
//! using an incrementally updated Cholesky factor; when that factor cannot be
//! extended it falls back to sweeps over the support with a dense sub-Gram.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, PartialFit, Result};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

use super::{soft_threshold, LassoConfig, LassoFit};

/// Active sweeps between active-set steps.
const NEWTON_AFTER: usize = 10;

/// Lazily computed unnormalized Gram columns `Xᵀx_j` of one design, shared by
/// every fit on that design or on row subsets of it.
pub(crate) struct GramCache<'a, T> {
    x: &'a Matrix<T>,
    cols: RefCell<Vec<Option<Rc<[T]>>>>,
}

impl<'a, T: Scalar> GramCache<'a, T> {
    pub(crate) fn new(x: &'a Matrix<T>) -> Self {
        Self { x, cols: RefCell::new(vec![None; x.ncols()]) }
    }

    fn col(&self, j: usize) -> Rc<[T]> {
        if let Some(c) = &self.cols.borrow()[j] {
            return Rc::clone(c);
        }
        let xj = self.x.col(j);
        // entries shared with cached columns are copied; the products commute,
        // so the copy equals the recomputed value bit for bit
        let c: Rc<[T]> = {
            let cols = self.cols.borrow();
            (0..self.x.ncols())
                .map(|k| match &cols[k] {
                    Some(ck) => ck[j],
                    None => dot(self.x.col(k), xj),
                })
                .collect()
        };
        self.cols.borrow_mut()[j] = Some(Rc::clone(&c));
        c
    }
}

/// Cholesky factor of the Gram matrix restricted to a changing variable set,
/// stored as packed lower-triangular rows.
struct IncrementalCholesky<T> {
    vars: Vec<usize>,
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> IncrementalCholesky<T> {
    fn new() -> Self {
        Self { vars: Vec::new(), rows: Vec::new() }
    }

    /// Appends `var` given its Gram entries against the current variables and
    /// its diagonal entry. Returns false, leaving the factor unchanged, when
    /// the enlarged matrix is numerically singular.
    fn push(&mut self, var: usize, cross: &[T], diag: T) -> bool {
        let k = self.vars.len();
        let mut r = Vec::with_capacity(k + 1);
        for i in 0..k {
            let row = &self.rows[i];
            let s = cross[i] - dot(&row[..i], &r[..i]);
            r.push(s / row[i]);
        }
        let d = diag - dot(&r, &r);
        if !(d > T::of(1e-10) * diag.max(T::one())) {
            return false;
        }
        r.push(d.sqrt());
        self.rows.push(r);
        self.vars.push(var);
        true
    }

    /// Removes the variable at `pos`, restoring triangular form with Givens
    /// rotations on adjacent columns.
    fn remove(&mut self, pos: usize) {
        self.vars.remove(pos);
        self.rows.remove(pos);
        let k = self.rows.len();
        for c in pos..k {
            // rotate columns (c, c+1) to zero entry c+1 of row c
            let (a, b) = (self.rows[c][c], self.rows[c][c + 1]);
            let r = a.hypot(b);
            let (cs, sn) = (a / r, b / r);
            for row in &mut self.rows[c..] {
                let (u, v) = (row[c], row[c + 1]);
                row[c] = cs * u + sn * v;
                row[c + 1] = cs * v - sn * u;
            }
            self.rows[c].pop();
        }
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        let k = self.vars.len();
        let mut z = Vec::with_capacity(k);
        for i in 0..k {
            let row = &self.rows[i];
            z.push((b[i] - dot(&row[..i], &z[..i])) / row[i]);
        }
        for i in (0..k).rev() {
            let row = &self.rows[i];
            z[i] = z[i] / row[i];
            let zi = z[i];
            for (zk, &l) in z[..i].iter_mut().zip(&row[..i]) {
                *zk = *zk - l * zi;
            }
        }
        z
    }
}

/// Coordinate-descent state that can be re-solved at successive penalties
/// with warm starts.
pub struct CoordinateDescent<'a, T> {
    cache: Rc<GramCache<'a, T>>,
    /// Rows excluded from the cached design, for a CV training fold.
    held_out: Option<&'a Matrix<T>>,
    n: T,
    col_sq: Vec<T>,
    /// `x_jᵀ(y − Xβ)/n`
    grad: Vec<T>,
    /// `x_jᵀy/n`
    grad0: Vec<T>,
    yty: T,
    beta: Vec<T>,
    gram: Vec<Option<Vec<T>>>,
    chol: IncrementalCholesky<T>,
    config: LassoConfig,
    total_sweeps: usize,
}

impl<'a, T: Scalar> CoordinateDescent<'a, T> {
    pub fn new(x: &'a Matrix<T>, y: &[T], config: LassoConfig) -> Self {
        let p = x.ncols();
        let col_sq = (0..p).map(|j| dot(x.col(j), x.col(j))).collect();
        let xty = (0..p).map(|j| dot(x.col(j), y)).collect();
        Self::from_parts(Rc::new(GramCache::new(x)), None, x.nrows(), col_sq, xty, dot(y, y), config)
    }

    /// Solver on the rows of `cache`'s design minus `held_out`. The sums are
    /// unnormalized and already restricted to the remaining rows.
    pub(crate) fn from_parts(
        cache: Rc<GramCache<'a, T>>,
        held_out: Option<&'a Matrix<T>>,
        rows: usize,
        col_sq_sum: Vec<T>,
        xty_sum: Vec<T>,
        yty: T,
        config: LassoConfig,
    ) -> Self {
        let n = T::of(rows as f64);
        let p = col_sq_sum.len();
        let grad: Vec<T> = xty_sum.into_iter().map(|v| v / n).collect();
        Self {
            cache,
            held_out,
            n,
            col_sq: col_sq_sum.into_iter().map(|v| v / n).collect(),
            grad0: grad.clone(),
            grad,
            yty,
            beta: vec![T::zero(); p],
            gram: vec![None; p],
            chol: IncrementalCholesky::new(),
            config,
            total_sweeps: 0,
        }
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn total_sweeps(&self) -> usize {
        self.total_sweeps
    }

    /// Fraction of `yᵀy` explained by the current fit, `1 − RSS/yᵀy`.
    pub fn deviance_ratio(&self) -> T {
        if self.yty <= T::zero() {
            return T::one();
        }
        // RSS = yᵀy − n·βᵀ(g₀ + g) with g the current gradient
        let s: T = self.beta.iter().zip(self.grad0.iter().zip(&self.grad)).map(|(&b, (&a, &g))| b * (a + g)).sum();
        T::one() - (self.yty - self.n * s) / self.yty
    }

    fn ensure_gram(&mut self, j: usize) {
        if self.gram[j].is_some() {
            return;
        }
        let full = self.cache.col(j);
        let n = self.n;
        let col = match self.held_out {
            None => full.iter().map(|&v| v / n).collect(),
            Some(h) => {
                let hj = h.col(j);
                let gram = &self.gram;
                full.iter()
                    .enumerate()
                    .map(|(k, &v)| match &gram[k] {
                        Some(gk) => gk[j],
                        None => (v - dot(h.col(k), hj)) / n,
                    })
                    .collect()
            }
        };
        self.gram[j] = Some(col);
    }

    /// One coordinate update against the full gradient; returns `|Δβ_j|`.
    #[inline]
    fn update(&mut self, j: usize, lambda: T) -> T {
        let cj = self.col_sq[j];
        if cj <= T::zero() {
            return T::zero();
        }
        let old = self.beta[j];
        let new = soft_threshold(self.grad[j] + cj * old, lambda) / cj;
        let delta = new - old;
        if delta == T::zero() {
            return T::zero();
        }
        self.beta[j] = new;
        self.ensure_gram(j);
        let g = self.gram[j].as_deref().unwrap();
        for (gk, &gjk) in self.grad.iter_mut().zip(g) {
            *gk = *gk - gjk * delta;
        }
        delta.abs()
    }

    fn support(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&j| self.beta[j] != T::zero()).collect()
    }

    fn gram_entry(&self, row: usize, col: usize) -> T {
        self.gram[col].as_deref().expect("support has Gram columns")[row]
    }

    /// `g = g₀ − G·β` over the current support.
    fn recompute_gradient(&mut self) {
        let mut grad = self.grad0.clone();
        for j in self.support() {
            let bj = self.beta[j];
            let col = self.gram[j].as_deref().expect("support has Gram columns");
            for (gk, &c) in grad.iter_mut().zip(col) {
                *gk = *gk - c * bj;
            }
        }
        self.grad = grad;
    }

    /// Active-set step on the current support.
    ///
    /// On a fixed support and sign pattern the objective is a quadratic.
    /// Moves toward its minimizer, stopping where a coefficient first reaches
    /// zero; that coefficient leaves the support and the step is repeated.
    /// Every move stays inside one orthant, where the objective is that
    /// convex quadratic, so the objective never increases. Returns whether the
    /// coefficients changed.
    fn newton_step(&mut self, lambda: T) -> bool {
        let support = self.support();
        if support.is_empty() || support.len() > self.n.to_usize().unwrap_or(usize::MAX) {
            return false;
        }
        // bring the factor to the current support
        let mut pos = 0;
        while pos < self.chol.vars.len() {
            if self.beta[self.chol.vars[pos]] == T::zero() {
                self.chol.remove(pos);
            } else {
                pos += 1;
            }
        }
        let mut in_factor = vec![false; self.beta.len()];
        for &v in &self.chol.vars {
            in_factor[v] = true;
        }
        for &j in &support {
            if in_factor[j] {
                continue;
            }
            let cross: Vec<T> = self.chol.vars.iter().map(|&v| self.gram_entry(v, j)).collect();
            if !self.chol.push(j, &cross, self.gram_entry(j, j)) {
                return false;
            }
        }
        let mut b: Vec<T> = self.chol.vars.iter().map(|&j| self.beta[j]).collect();
        let mut moved = false;
        while !b.is_empty() {
            let rhs: Vec<T> =
                self.chol.vars.iter().zip(&b).map(|(&j, &bj)| self.grad0[j] - lambda * bj.signum()).collect();
            let target = self.chol.solve(&rhs);
            // largest step keeping every sign
            let mut alpha = T::one();
            let mut hit = None;
            for (a, (&bj, &tj)) in b.iter().zip(&target).enumerate() {
                if tj == T::zero() || tj.signum() != bj.signum() {
                    let t = bj / (bj - tj);
                    if t < alpha {
                        alpha = t;
                        hit = Some(a);
                    }
                }
            }
            for (bj, &tj) in b.iter_mut().zip(&target) {
                *bj = *bj + alpha * (tj - *bj);
            }
            moved = true;
            let Some(a) = hit else { break };
            b[a] = T::zero();
            let mut a = 0;
            while a < b.len() {
                if b[a] == T::zero() {
                    self.beta[self.chol.vars[a]] = T::zero();
                    self.chol.remove(a);
                    b.remove(a);
                } else {
                    a += 1;
                }
            }
        }
        if !moved {
            return false;
        }
        for (&j, &bj) in self.chol.vars.iter().zip(&b) {
            self.beta[j] = bj;
        }
        self.recompute_gradient();
        true
    }

    fn not_converged(&mut self, lambda: T, sweeps: usize, max_update: T) -> Error {
        self.total_sweeps += sweeps;
        Error::DidNotConverge(Box::new(PartialFit {
            lambda: lambda.to_f64_lossy(),
            beta: self.beta.iter().map(|b| b.to_f64_lossy()).collect(),
            sweeps,
            max_update: max_update.to_f64_lossy(),
        }))
    }

    /// Solves at `lambda` starting from the current coefficients.
    ///
    /// Alternates full sweeps with sweeps restricted to the nonzero
    /// coefficients; stops after a full sweep whose largest change is below
    /// the tolerance.
    pub fn solve(&mut self, lambda: T) -> Result<LassoFit<T>> {
        let tol = T::tol(self.config.tol);
        let p = self.beta.len();
        let mut sweeps = 0usize;
        // a warm start usually keeps its support, so jump first
        self.newton_step(lambda);
        loop {
            let mut max_full = T::zero();
            for j in 0..p {
                max_full = max_full.max(self.update(j, lambda));
            }
            sweeps += 1;
            if max_full < tol {
                self.total_sweeps += sweeps;
                return Ok(LassoFit::from_state(self.beta.clone(), lambda, sweeps, true));
            }
            if sweeps >= self.config.max_sweeps {
                return Err(self.not_converged(lambda, sweeps, max_full));
            }

            if self.newton_step(lambda) {
                continue;
            }
            // sweeps on the support with a dense sub-Gram; only the support's
            // gradient entries are kept current until the phase ends
            let set = self.support();
            let k = set.len();
            let mut sub = vec![T::zero(); k * k];
            for (c, &j) in set.iter().enumerate() {
                let col = self.gram[j].as_deref().expect("support has Gram columns");
                for (r, &i) in set.iter().enumerate() {
                    sub[c * k + r] = col[i];
                }
            }
            let cs: Vec<T> = set.iter().map(|&j| self.col_sq[j]).collect();
            let start: Vec<T> = set.iter().map(|&j| self.beta[j]).collect();
            let mut b = start.clone();
            let mut g: Vec<T> = set.iter().map(|&j| self.grad[j]).collect();
            let mut active_sweeps = 0usize;
            let mut jumped = false;
            loop {
                let mut max_active = T::zero();
                for c in 0..k {
                    if b[c] == T::zero() {
                        continue;
                    }
                    let old = b[c];
                    let new = soft_threshold(g[c] + cs[c] * old, lambda) / cs[c];
                    let delta = new - old;
                    if delta == T::zero() {
                        continue;
                    }
                    b[c] = new;
                    for (gr, &s) in g.iter_mut().zip(&sub[c * k..(c + 1) * k]) {
                        *gr = *gr - s * delta;
                    }
                    max_active = max_active.max(delta.abs());
                }
                sweeps += 1;
                active_sweeps += 1;
                if max_active < tol {
                    break;
                }
                if active_sweeps % NEWTON_AFTER == 0 {
                    for (&j, &bj) in set.iter().zip(&b) {
                        self.beta[j] = bj;
                    }
                    if self.newton_step(lambda) {
                        jumped = true;
                        break;
                    }
                }
                if sweeps >= self.config.max_sweeps {
                    for (&j, &bj) in set.iter().zip(&b) {
                        self.beta[j] = bj;
                    }
                    self.recompute_gradient();
                    return Err(self.not_converged(lambda, sweeps, max_active));
                }
            }
            if !jumped {
                for (c, &j) in set.iter().enumerate() {
                    let delta = b[c] - start[c];
                    self.beta[j] = b[c];
                    if delta == T::zero() {
                        continue;
                    }
                    let col = self.gram[j].as_deref().expect("support has Gram columns");
                    for (gk, &v) in self.grad.iter_mut().zip(col) {
                        *gk = *gk - v * delta;
                    }
                }
                for (&j, &gj) in set.iter().zip(&g) {
                    self.grad[j] = gj;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Cholesky;

    fn spd(k: usize) -> Matrix<f64> {
        let a = Matrix::from_fn(k + 3, k, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0 + if i == j { 4.0 } else { 0.0 });
        a.gram()
    }

    #[test]
    fn incremental_factor_matches_direct() {
        let g = spd(6);
        let mut inc = IncrementalCholesky::new();
        for j in 0..6 {
            let cross: Vec<f64> = inc.vars.iter().map(|&v| g[(v, j)]).collect();
            assert!(inc.push(j, &cross, g[(j, j)]));
        }
        inc.remove(2);
        inc.remove(0);
        let keep = [1usize, 3, 4, 5];
        assert_eq!(inc.vars, keep);
        let sub = Matrix::from_fn(4, 4, |r, c| g[(keep[r], keep[c])]);
        let b = [1.0, -2.0, 0.5, 3.0];
        let direct = Cholesky::new(&sub).unwrap().solve(&b);
        for (u, v) in inc.solve(&b).iter().zip(&direct) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn support_step_never_increases_objective() {
        use crate::regress::lasso_objective;
        use crate::rng::Stream;
        use rand::Rng;
        use rand_distr::StandardNormal;

        let mut rng = Stream::new(21).rng();
        let (n, p) = (40, 60);
        let x = Matrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x[(i, 0)] - x[(i, 3)] + rng.sample::<f64, _>(StandardNormal)).collect();
        let lambda = 0.05;
        let mut cd = CoordinateDescent::new(&x, &y, LassoConfig::default());
        for _ in 0..5 {
            for j in 0..p {
                cd.update(j, lambda);
            }
            let before = lasso_objective(&x, &y, cd.beta(), lambda);
            cd.newton_step(lambda);
            let after = lasso_objective(&x, &y, cd.beta(), lambda);
            assert!(after <= before + 1e-12, "{after} > {before}");
            // the maintained gradient matches a fresh computation
            let fresh: Vec<f64> = (0..p)
                .map(|j| (0..n).map(|i| x[(i, j)] * (y[i] - dot(&x.row(i), cd.beta()))).sum::<f64>() / n as f64)
                .collect();
            for (a, b) in cd.grad.iter().zip(&fresh) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singular_column_is_refused() {
        let g = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let mut inc = IncrementalCholesky::new();
        assert!(inc.push(0, &[], g[(0, 0)]));
        assert!(!inc.push(1, &[g[(0, 1)]], g[(1, 1)]));
        assert_eq!(inc.vars, vec![0]);
    }
}

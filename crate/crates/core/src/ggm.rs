//! Gaussian graphical model edge selection by nodewise regression.
//!
//! Each variable is regressed on all the others with DS or MDS at level
//! `q/2`; an edge is kept when either endpoint selects the other.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Dataset, Matrix};
use crate::mds::mds_select_with;
use crate::mirror::{ds_select_with, ContrastFunction, DsConfig};
use crate::regress::CvConfig;
use crate::rng::Stream;
use crate::scalar::Scalar;

/// Unordered vertex pair stored as `(min, max)`.
pub type Edge = (usize, usize);

pub fn edge(i: usize, j: usize) -> Edge {
    (i.min(j), i.max(j))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMethod {
    Ds,
    Mds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEstimate {
    pub edges: BTreeSet<Edge>,
    pub neighborhoods: Vec<Vec<usize>>,
    pub level: f64,
    /// Nodes whose regression failed, with the error message; their
    /// neighborhoods are empty.
    pub failures: Vec<(usize, String)>,
}

/// OR rule: `{i, j}` is an edge iff `i ∈ ne_j` or `j ∈ ne_i`.
pub fn or_rule(neighborhoods: &[Vec<usize>]) -> BTreeSet<Edge> {
    neighborhoods
        .iter()
        .enumerate()
        .flat_map(|(j, ne)| ne.iter().filter(move |&&i| i != j).map(move |&i| edge(i, j)))
        .collect()
}

/// Settings shared by every nodewise regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodewiseConfig {
    pub method: SplitMethod,
    pub m: usize,
    pub contrast: ContrastFunction,
    pub cv: CvConfig,
}

impl Default for NodewiseConfig {
    fn default() -> Self {
        Self { method: SplitMethod::Ds, m: crate::mds::DEFAULT_REPLICATIONS, contrast: ContrastFunction::Sum, cv: CvConfig::default() }
    }
}

/// Selects the neighborhood of one node. Implemented by the DS/MDS
/// regression and by test doubles.
pub trait NodeSelector<T>: Sync {
    fn select(&self, x: &Matrix<T>, j: usize, q_node: f64, stream: &Stream) -> Result<Vec<usize>>;
}

impl<T: Scalar> NodeSelector<T> for NodewiseConfig {
    fn select(&self, x: &Matrix<T>, j: usize, q_node: f64, stream: &Stream) -> Result<Vec<usize>> {
        nodewise_select_with(x, j, q_node, self, stream)
    }
}

/// Regresses column `j` on the remaining columns and returns the selected
/// neighbors as original column indices.
pub fn nodewise_select<T: Scalar>(
    x: &Matrix<T>,
    j: usize,
    q_node: f64,
    method: SplitMethod,
    m: usize,
    contrast: ContrastFunction,
    stream: &Stream,
) -> Result<Vec<usize>> {
    let cfg = NodewiseConfig { method, m, contrast, cv: CvConfig::default() };
    nodewise_select_with(x, j, q_node, &cfg, stream)
}

pub fn nodewise_select_with<T: Scalar>(
    x: &Matrix<T>,
    j: usize,
    q_node: f64,
    cfg: &NodewiseConfig,
    stream: &Stream,
) -> Result<Vec<usize>> {
    let p = x.ncols();
    if p < 3 {
        return Err(Error::TooFewColumns(p));
    }
    if j >= p {
        return Err(Error::InvalidArgument(format!("node {j} out of range for {p} columns")));
    }
    let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let data = Dataset::standardized(&x.select_cols(&others), x.col(j))?;
    let ds = DsConfig { q: q_node, contrast: cfg.contrast, cv: cfg.cv };
    let selected = match cfg.method {
        SplitMethod::Ds => ds_select_with(&data, &ds, &mut stream.rng())?.selected,
        SplitMethod::Mds => mds_select_with(&data, &ds, cfg.m, stream)?.selected,
    };
    Ok(selected.into_iter().map(|k| others[k]).collect())
}

/// Nodewise selection at `q/2` for every node, combined by the OR rule.
pub fn ggm_select<T: Scalar>(
    x: &Matrix<T>,
    q: f64,
    method: SplitMethod,
    m: usize,
    stream: &Stream,
) -> Result<GraphEstimate> {
    let cfg = NodewiseConfig { method, m, ..NodewiseConfig::default() };
    ggm_select_with(x, q, &cfg, stream)
}

/// Node `j` runs on substream `("node", j)` of `stream`.
pub fn ggm_select_with<T: Scalar, S: NodeSelector<T>>(
    x: &Matrix<T>,
    q: f64,
    selector: &S,
    stream: &Stream,
) -> Result<GraphEstimate> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("FDR level must lie in (0, 1), got {q}")));
    }
    let p = x.ncols();
    if p < 3 {
        return Err(Error::TooFewColumns(p));
    }
    let q_node = q / 2.0;
    let outcomes: Vec<Result<Vec<usize>>> = (0..p)
        .into_par_iter()
        .map(|j| selector.select(x, j, q_node, &stream.derive("node", j as u64)))
        .collect();
    let mut failures = Vec::new();
    let neighborhoods: Vec<Vec<usize>> = outcomes
        .into_iter()
        .enumerate()
        .map(|(j, o)| {
            o.unwrap_or_else(|e| {
                log::warn!("nodewise regression for node {j} failed: {e}");
                failures.push((j, e.to_string()));
                Vec::new()
            })
        })
        .collect();
    Ok(GraphEstimate { edges: or_rule(&neighborhoods), neighborhoods, level: q, failures })
}

/// `|Ê \ E| / max(|Ê|, 1)` and `|Ê ∩ E| / max(|E|, 1)`.
pub fn fdp_power_edges(est: &BTreeSet<Edge>, truth: &BTreeSet<Edge>) -> (f64, f64) {
    let hits = est.intersection(truth).count();
    let false_pos = est.len() - hits;
    (false_pos as f64 / est.len().max(1) as f64, hits as f64 / truth.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn or_rule_example() {
        let ne = vec![vec![1], vec![], vec![]];
        let edges = or_rule(&ne);
        assert_eq!(edges.into_iter().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn edge_metrics() {
        let est: BTreeSet<Edge> = [(0, 1), (0, 2)].into_iter().collect();
        let truth: BTreeSet<Edge> = [(0, 1)].into_iter().collect();
        assert_eq!(fdp_power_edges(&est, &truth), (0.5, 1.0));
        assert_eq!(fdp_power_edges(&BTreeSet::new(), &truth), (0.0, 0.0));
        assert_eq!(fdp_power_edges(&truth, &truth), (0.0, 1.0));
    }

    struct Recorder {
        levels: Mutex<Vec<(usize, f64)>>,
    }

    impl NodeSelector<f64> for Recorder {
        fn select(&self, _x: &Matrix<f64>, j: usize, q_node: f64, _s: &Stream) -> Result<Vec<usize>> {
            self.levels.lock().unwrap().push((j, q_node));
            match j {
                0 => Ok(vec![2]),
                1 => Err(Error::RankDeficient),
                _ => Ok(vec![0, 3]),
            }
        }
    }

    #[test]
    fn every_node_receives_half_level() {
        let x = Matrix::<f64>::zeros(10, 4);
        let rec = Recorder { levels: Mutex::new(Vec::new()) };
        let g = ggm_select_with(&x, 0.2, &rec, &Stream::new(1)).unwrap();
        let mut levels = rec.levels.into_inner().unwrap();
        levels.sort_by_key(|l| l.0);
        assert_eq!(levels.len(), 4);
        assert!(levels.iter().all(|&(_, q)| q == 0.1));
        assert_eq!(g.failures.len(), 1);
        assert!(g.neighborhoods[1].is_empty());
        assert_eq!(g.edges, or_rule(&g.neighborhoods));
        let expected: BTreeSet<Edge> = [(0, 2), (0, 3), (2, 3)].into_iter().collect();
        assert_eq!(g.edges, expected);
    }
}

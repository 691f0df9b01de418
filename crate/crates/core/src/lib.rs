//! FDR-controlled feature selection by data splitting.
//!
//! A random half split gives two independent coefficient estimates per
//! feature; their mirror statistic is symmetric about zero for null features,
//! which yields a data-driven cutoff at a target FDR level `q`. Multiple data
//! splitting (MDS) aggregates many such selections into inclusion rates.
//! Nodewise regression extends both to Gaussian graphical models.
//!
//! The numerical core is generic over `f32`/`f64` through [`Scalar`]; the
//! `*64` aliases below name the common `f64` instantiations.

pub mod error;
pub mod ggm;
pub mod harness;
pub mod linalg;
pub mod mds;
pub mod mirror;
pub mod regress;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use error::{Error, PartialFit, Result};
pub use ggm::{ggm_select, nodewise_select, or_rule, Edge, GraphEstimate, SplitMethod};
pub use linalg::{random_split, standardize, Dataset, Matrix, SplitIndex};
pub use mds::{estimate_inclusion_rates, mds_cutoff, mds_select, InclusionRates};
pub use mirror::{
    ds_select, fdp_hat, mirror_statistic, select_cutoff, ContrastFunction, Diagnostics, MirrorVector,
    SelectionResult,
};
pub use regress::{lasso_cv, lasso_fit, ols_fit, CvResult, LassoFit, OlsFit};
pub use rng::Stream;
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Dataset64 = Dataset<f64>;
pub type LassoFit64 = LassoFit<f64>;
pub type OlsFit64 = OlsFit<f64>;
pub type MirrorVector64 = MirrorVector<f64>;
pub type SelectionResult64 = SelectionResult<f64>;
pub type InclusionRates64 = InclusionRates<f64>;

//! Multi-task least squares solvers and a risk-factor analysis pipeline.
//!
//! The crate fits one linear model per task (subpopulation) over a shared
//! feature space, either jointly sparse through an L2,1 penalty
//! ([`mtl_l21`]) or clustered through a convex relaxation of the k-means
//! penalty on task weights ([`cmtl`]). Both are solved by the accelerated
//! proximal-gradient engine in [`fista`]. The surrounding pipeline covers
//! CSV ingestion and splitting ([`dataset`]), single-task baselines and MAE
//! evaluation ([`baselines`]), and multi-level ranking of features by
//! fitted weight ([`riskfactors`]).

pub mod baselines;
pub mod cli;
pub mod cmtl;
pub mod dataset;
pub mod error;
pub mod fista;
pub mod mtl_l21;
pub mod riskfactors;

mod linalg;

pub use error::{Error, Result};

//! Monte Carlo estimation of nested expectations `E_Y[ f( E[X | Y] ) ]`
//! from joint samples only.
//!
//! The central estimator ([`sparse_grid_estimate`]) sorts a batch of `2^m`
//! joint draws into recursive median blocks of the outer variable, uses
//! block averages as inner-expectation surrogates at every accuracy level,
//! and telescopes the levels with index-split correction terms, in the
//! spirit of sparse grid quadrature. No conditional sampling is needed.
//!
//! The crate also provides the balanced single-level estimator, classical
//! nested Monte Carlo, two value-of-information test problems and an
//! experiment harness for MSE convergence studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod harness;
pub mod partition;
pub mod problems;
pub mod sampling;

pub use error::{Error, Result};
pub use estimators::{
    level_terms, nested_mc_estimate, simple_estimate, sparse_grid_estimate, EstimateRecord,
    InnerBudget, LevelTerms, Method, OuterFunction,
};
pub use harness::{
    convergence_slope, reference_value, run_experiment, ExperimentConfig, Reference,
    ReferenceValue, RunReport,
};
pub use partition::{
    block_mean_tree, build_partitions, width_diagnostic, BlockMeans, Family, PartitionPlan,
    SampleBatch, WidthDiagnostic,
};
pub use problems::{
    problem1, problem1_truth, problem2, problem2_posterior, NestedProblem, Problem1Spec,
    Problem2Spec, ProblemSpec, Scenario,
};
pub use sampling::{cholesky, make_stream, substream, Distribution, MvnSpec, RngStream};

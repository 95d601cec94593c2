//! Estimators of `I = E_Y[ f( E[X | Y] ) ]`.
//!
//! * [`sparse_grid_estimate`] combines every accuracy level of the
//!   stratified inner/outer split and cancels the coarse-level error with
//!   index-split correction terms.
//! * [`simple_estimate`] keeps only the balanced level `floor(m/2)`.
//! * [`nested_mc_estimate`] is the classical two-loop estimator and needs
//!   an inner conditional sampler.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{block_mean_tree, build_partitions, BlockMeans, Family, SampleBatch};
use crate::problems::NestedProblem;
use crate::sampling::RngStream;

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// The outer map `f: R^J -> R`.
#[derive(Clone)]
pub struct OuterFunction {
    name: String,
    j_dim: usize,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for OuterFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OuterFunction")
            .field("name", &self.name)
            .field("j_dim", &self.j_dim)
            .finish()
    }
}

impl OuterFunction {
    pub fn new<F>(name: impl Into<String>, j_dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        OuterFunction {
            name: name.into(),
            j_dim,
            eval: Arc::new(eval),
        }
    }

    /// Componentwise maximum, the decision rule behind value of information.
    pub fn max(j_dim: usize) -> Self {
        OuterFunction::new("max", j_dim, |x| {
            x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
    }

    /// `x -> a.x + b`.
    pub fn linear(coefficients: Vec<f64>, intercept: f64) -> Self {
        let j_dim = coefficients.len();
        OuterFunction::new("linear", j_dim, move |x| {
            coefficients.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + intercept
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn j_dim(&self) -> usize {
        self.j_dim
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SparseGrid,
    Simple,
    NestedMc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SparseGrid, Method::Simple, Method::NestedMc];

    pub fn name(self) -> &'static str {
        match self {
            Method::SparseGrid => "sparse_grid",
            Method::Simple => "simple",
            Method::NestedMc => "nested_mc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`")))
    }
}

/// Inner sample budget for nested Monte Carlo.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InnerBudget {
    /// Average this many conditional draws.
    Samples(usize),
    /// Use the problem's closed-form conditional mean.
    Exact(ExactTag),
}

/// Serialises as the string `"exact"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactTag {
    Exact,
}

impl InnerBudget {
    pub const EXACT: InnerBudget = InnerBudget::Exact(ExactTag::Exact);

    /// Draws consumed per outer sample; the exact variant counts as one.
    pub fn cost(self) -> usize {
        match self {
            InnerBudget::Samples(n) => n,
            InnerBudget::Exact(_) => 1,
        }
    }
}

impl fmt::Display for InnerBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InnerBudget::Samples(n) => write!(f, "{n}"),
            InnerBudget::Exact(_) => f.write_str("exact"),
        }
    }
}

/// One estimate with its cost accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub value: f64,
    pub method: Method,
    /// Depth for the stratified methods.
    pub m: Option<u32>,
    pub n_outer: Option<usize>,
    pub n_inner: Option<InnerBudget>,
    pub samples_used: usize,
    pub f_evals: usize,
    pub seed_path: Vec<u64>,
}

impl EstimateRecord {
    pub fn with_seed_path(mut self, seed_path: &[u64]) -> Self {
        self.seed_path = seed_path.to_vec();
        self
    }
}

/// The per-level terms of the sparse-grid estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTerms {
    /// `p[d]` for `d = 0..=m`, value-split blocks.
    pub p: Vec<f64>,
    /// `q[d - 1]` for `d = 1..=m`, index-split blocks.
    pub q: Vec<f64>,
    pub f_evals: usize,
}

impl LevelTerms {
    pub fn depth(&self) -> u32 {
        (self.p.len() - 1) as u32
    }

    /// `sum(p) - sum(q)`, accumulated as `p[0] + sum_d (p[d] - q[d - 1])`
    /// so that levels which cancel contribute exactly zero.
    pub fn combine(&self) -> f64 {
        let corrections: f64 = self.p[1..].iter().zip(&self.q).map(|(p, q)| p - q).sum();
        self.p[0] + corrections
    }
}

fn check_dims(batch: &SampleBatch, f: &OuterFunction) -> Result<()> {
    if batch.j_dim() != f.j_dim() {
        return Err(Error::DimensionMismatch {
            expected: f.j_dim(),
            actual: batch.j_dim(),
        });
    }
    Ok(())
}

/// Average of `f` over the block means of one level.
///
/// The `f` values are summed in ascending order, which makes the result a
/// function of their multiset only: levels that enumerate the same blocks
/// through different permutations agree bit for bit.
fn level_average(means: &BlockMeans, d: usize, f: &OuterFunction, evals: &mut usize) -> f64 {
    let mut values: Vec<f64> = means.means(d).map(|x| f.eval(x)).collect();
    *evals += values.len();
    values.sort_unstable_by(f64::total_cmp);
    let sum: f64 = values.iter().sum();
    sum / (1u64 << d) as f64
}

/// Every `P` and `Q` term of the sparse-grid estimator.
pub fn level_terms(batch: &SampleBatch, f: &OuterFunction) -> Result<LevelTerms> {
    check_dims(batch, f)?;
    let plan = build_partitions(batch)?;
    let m = plan.depth() as usize;
    let value = block_mean_tree(batch, &plan, Family::Value);
    let index = block_mean_tree(batch, &plan, Family::Index);

    let mut f_evals = 0;
    let p = (0..=m)
        .map(|d| level_average(&value, d, f, &mut f_evals))
        .collect();
    let q = (1..=m)
        .map(|d| level_average(&index, d, f, &mut f_evals))
        .collect();
    Ok(LevelTerms { p, q, f_evals })
}

/// Sparse-grid estimate from a batch of `2^m` joint draws.
pub fn sparse_grid_estimate(batch: &SampleBatch, f: &OuterFunction) -> Result<EstimateRecord> {
    let terms = level_terms(batch, f)?;
    Ok(EstimateRecord {
        value: terms.combine(),
        method: Method::SparseGrid,
        m: Some(terms.depth()),
        n_outer: None,
        n_inner: None,
        samples_used: batch.len(),
        f_evals: terms.f_evals,
        seed_path: Vec::new(),
    })
}

/// The single balanced term at level `floor(m/2)`.
pub fn simple_estimate(batch: &SampleBatch, f: &OuterFunction) -> Result<EstimateRecord> {
    check_dims(batch, f)?;
    let plan = build_partitions(batch)?;
    let m = plan.depth();
    let d0 = (m / 2) as usize;
    let value = block_mean_tree(batch, &plan, Family::Value);
    let mut f_evals = 0;
    let estimate = level_average(&value, d0, f, &mut f_evals);
    Ok(EstimateRecord {
        value: estimate,
        method: Method::Simple,
        m: Some(m),
        n_outer: None,
        n_inner: None,
        samples_used: batch.len(),
        f_evals,
        seed_path: Vec::new(),
    })
}

/// `f(E[X | y])` for each of `n_outer` fresh outer draws.
pub fn nested_mc_outer_values(
    problem: &dyn NestedProblem,
    n_outer: usize,
    inner: InnerBudget,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if n_outer == 0 {
        return Err(Error::InvalidParameter("n_outer must be at least 1".into()));
    }
    let f = problem.outer_function();
    let j = problem.j_dim();
    let mut out = Vec::with_capacity(n_outer);
    match inner {
        InnerBudget::Samples(0) => {
            return Err(Error::InvalidParameter("n_inner must be at least 1".into()))
        }
        InnerBudget::Samples(n_inner) => {
            if !problem.has_inner_sampler() {
                return Err(Error::InnerSamplerUnavailable);
            }
            let mut mean = vec![0.0; j];
            for _ in 0..n_outer {
                let y = problem.sample_outer(rng);
                let draws = problem.inner_conditional(&y, n_inner, rng)?;
                mean.fill(0.0);
                for row in draws.chunks(j) {
                    for (acc, x) in mean.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                let inv = 1.0 / n_inner as f64;
                mean.iter_mut().for_each(|v| *v *= inv);
                out.push(f.eval(&mean));
            }
        }
        InnerBudget::Exact(_) => {
            for _ in 0..n_outer {
                let y = problem.sample_outer(rng);
                let mean = problem
                    .conditional_mean(&y)
                    .ok_or(Error::InnerSamplerUnavailable)?;
                out.push(f.eval(&mean));
            }
        }
    }
    Ok(out)
}

/// Classical nested Monte Carlo estimate.
pub fn nested_mc_estimate(
    problem: &dyn NestedProblem,
    n_outer: usize,
    inner: InnerBudget,
    rng: &mut RngStream,
) -> Result<EstimateRecord> {
    let seed_path = rng.seed_path().to_vec();
    let values = nested_mc_outer_values(problem, n_outer, inner, rng)?;
    let value = values.iter().sum::<f64>() / n_outer as f64;
    Ok(EstimateRecord {
        value,
        method: Method::NestedMc,
        m: None,
        n_outer: Some(n_outer),
        n_inner: Some(inner),
        samples_used: n_outer * inner.cost(),
        f_evals: n_outer,
        seed_path,
    })
}

//! Replicated MSE experiments.
//!
//! Every replication of every `(method, m)` cell draws from its own
//! substream of the master seed, indexed by a stable hash of the cell and
//! replication number. Results therefore do not depend on thread count,
//! execution order, or which other cells are present in the sweep.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{
    nested_mc_estimate, nested_mc_outer_values, simple_estimate, sparse_grid_estimate,
    EstimateRecord, InnerBudget, Method,
};
use crate::problems::{NestedProblem, ProblemSpec};
use crate::sampling::{make_stream, substream, RngStream};

/// Outer draws per parallel work unit when computing a reference value.
pub const REFERENCE_CHUNK: usize = 4096;

/// Where the MSE target comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Analytic,
    NestedMc { outer: usize, inner: InnerBudget },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub methods: Vec<Method>,
    pub m_values: Vec<u32>,
    pub r: usize,
    pub master_seed: u64,
    pub reference: Reference,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidParameter("r must be at least 1".into()));
        }
        if self.m_values.is_empty() {
            return Err(Error::InvalidParameter("m_values must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("methods must not be empty".into()));
        }
        if let Some(&m) = self.m_values.iter().find(|&&m| m > 30) {
            return Err(Error::InvalidParameter(format!("m = {m} is too large")));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidParameter("threads must be at least 1".into()));
        }
        if let Reference::NestedMc { outer: 0, .. } = self.reference {
            return Err(Error::InvalidParameter(
                "reference outer budget must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Target value for the MSE with its Monte Carlo standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValue {
    pub value: f64,
    /// Zero for analytic truths; infinite when it cannot be estimated.
    pub stderr: f64,
    pub budget_outer: Option<usize>,
    pub budget_inner: Option<InnerBudget>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub m: u32,
    /// Samples consumed by one replication.
    pub samples_used: usize,
    pub f_evals: usize,
    pub estimates: Vec<f64>,
    pub seed_paths: Vec<Vec<u64>>,
    pub mse: f64,
    pub mse_stderr: f64,
    /// Summed replication compute time; excluded from comparisons.
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSlope {
    pub method: Method,
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub scenario: String,
    pub master_seed: u64,
    pub r: usize,
    pub reference: ReferenceValue,
    pub cells: Vec<CellReport>,
    pub slopes: Vec<MethodSlope>,
}

impl RunReport {
    pub fn cell(&self, method: Method, m: u32) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.method == method && c.m == m)
    }

    pub fn slope(&self, method: Method) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.method == method)
            .and_then(|s| s.slope)
    }

    /// Copy with all timing fields zeroed.
    pub fn without_timing(&self) -> RunReport {
        let mut out = self.clone();
        out.cells.iter_mut().for_each(|c| c.elapsed_secs = 0.0);
        out
    }
}

/// Stable 64-bit substream index for one replication of one cell.
pub fn replication_index(label: &str, m: u32, replication: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(m.to_le_bytes());
    hasher.update((replication as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Total budget `2^m` split as `n_outer = 2^ceil(m/2)`, `n_inner = 2^floor(m/2)`.
pub fn nested_mc_split(m: u32) -> (usize, usize) {
    let inner = 1usize << (m / 2);
    let outer = 1usize << (m - m / 2);
    (outer, inner)
}

fn run_replication(
    problem: &dyn NestedProblem,
    method: Method,
    m: u32,
    mut rng: RngStream,
) -> Result<EstimateRecord> {
    let path = rng.seed_path().to_vec();
    match method {
        Method::SparseGrid => {
            let batch = problem.sample_joint(1 << m, &mut rng);
            Ok(sparse_grid_estimate(&batch, problem.outer_function())?.with_seed_path(&path))
        }
        Method::Simple => {
            let batch = problem.sample_joint(1 << m, &mut rng);
            Ok(simple_estimate(&batch, problem.outer_function())?.with_seed_path(&path))
        }
        Method::NestedMc => {
            let (outer, inner) = nested_mc_split(m);
            nested_mc_estimate(problem, outer, InnerBudget::Samples(inner), &mut rng)
        }
    }
}

/// Mean squared error against `target` and its standard error.
pub fn mse_with_stderr(estimates: &[f64], target: f64) -> (f64, f64) {
    let r = estimates.len();
    let sq: Vec<f64> = estimates.iter().map(|e| (target - e).powi(2)).collect();
    let mse = sq.iter().sum::<f64>() / r as f64;
    if r < 2 {
        return (mse, f64::INFINITY);
    }
    let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (r - 1) as f64;
    (mse, (var / r as f64).sqrt())
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Runs `r` replications of every `(method, m)` cell and scores them.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let problem: &dyn NestedProblem = problem.as_ref();
    if cfg.methods.contains(&Method::NestedMc) && !problem.has_inner_sampler() {
        return Err(Error::InnerSamplerUnavailable);
    }
    let master = make_stream(cfg.master_seed);

    with_pool(cfg.threads, || {
        let reference = match cfg.reference {
            Reference::Analytic => ReferenceValue {
                value: problem.truth().ok_or(Error::MissingTruth)?,
                stderr: 0.0,
                budget_outer: None,
                budget_inner: None,
            },
            Reference::NestedMc { outer, inner } => {
                let rng = substream(&master, replication_index("reference", 0, 0));
                reference_value(problem, outer, inner, &rng)?
            }
        };

        let jobs: Vec<(Method, u32, usize)> = cfg
            .methods
            .iter()
            .flat_map(|&method| {
                cfg.m_values
                    .iter()
                    .flat_map(move |&m| (0..cfg.r).map(move |i| (method, m, i)))
            })
            .collect();

        let results: Vec<(EstimateRecord, f64)> = jobs
            .par_iter()
            .map(|&(method, m, i)| {
                let start = Instant::now();
                let rng = substream(&master, replication_index(method.name(), m, i));
                let rec = run_replication(problem, method, m, rng)?;
                Ok((rec, start.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()?;

        let mut cells = Vec::new();
        for (chunk, job) in results.chunks(cfg.r).zip(jobs.chunks(cfg.r)) {
            let (method, m, _) = job[0];
            let estimates: Vec<f64> = chunk.iter().map(|(rec, _)| rec.value).collect();
            let (mse, mse_stderr) = mse_with_stderr(&estimates, reference.value);
            cells.push(CellReport {
                method,
                m,
                samples_used: chunk[0].0.samples_used,
                f_evals: chunk[0].0.f_evals,
                seed_paths: chunk.iter().map(|(rec, _)| rec.seed_path.clone()).collect(),
                estimates,
                mse,
                mse_stderr,
                elapsed_secs: chunk.iter().map(|(_, t)| t).sum(),
            });
        }

        let slopes = cfg
            .methods
            .iter()
            .map(|&method| {
                let points: Vec<(f64, f64)> = cells
                    .iter()
                    .filter(|c| c.method == method)
                    .map(|c| (c.samples_used as f64, c.mse))
                    .collect();
                MethodSlope {
                    method,
                    slope: convergence_slope(&points).ok(),
                }
            })
            .collect();

        Ok(RunReport {
            problem: cfg.problem.label().to_string(),
            scenario: cfg.problem.scenario_label(),
            master_seed: cfg.master_seed,
            r: cfg.r,
            reference,
            cells,
            slopes,
        })
    })?
}

/// High-budget nested Monte Carlo value with the standard error of its
/// outer average.
///
/// Outer draws are processed in chunks of [`REFERENCE_CHUNK`], chunk `c`
/// drawing from `substream(rng, c)`, so the value is independent of how
/// chunks are scheduled across threads.
pub fn reference_value(
    problem: &dyn NestedProblem,
    budget_outer: usize,
    budget_inner: InnerBudget,
    rng: &RngStream,
) -> Result<ReferenceValue> {
    if !problem.has_inner_sampler() {
        return Err(Error::InnerSamplerUnavailable);
    }
    if budget_outer == 0 {
        return Err(Error::InvalidParameter(
            "budget_outer must be at least 1".into(),
        ));
    }
    let chunks = budget_outer.div_ceil(REFERENCE_CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = REFERENCE_CHUNK.min(budget_outer - c * REFERENCE_CHUNK);
            let mut stream = substream(rng, c as u64);
            nested_mc_outer_values(problem, len, budget_inner, &mut stream)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = parts.concat();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() < 2 {
        f64::INFINITY
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Ok(ReferenceValue {
        value: mean,
        stderr,
        budget_outer: Some(budget_outer),
        budget_inner: Some(budget_inner),
    })
}

/// Least-squares slope of `log2 mse` against `log2 N`.
pub fn convergence_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput("need at least two points".into()));
    }
    if points.iter().any(|&(n, e)| !(n > 0.0) || !(e > 0.0)) {
        return Err(Error::DegenerateInput("values must be positive".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, e)| (n.log2(), e.log2())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("all N are equal".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Weighted least-squares non-increasing fit (pool adjacent violators).
pub fn monotone_decreasing_fit(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (weighted mean, total weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (b, a) = (blocks[blocks.len() - 1], blocks[blocks.len() - 2]);
            if a.0 >= b.0 {
                break;
            }
            let w = a.1 + b.1;
            let merged = ((a.0 * a.1 + b.0 * b.1) / w, w, a.2 + b.2);
            blocks.pop();
            *blocks.last_mut().expect("non-empty") = merged;
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, _, c)| std::iter::repeat_n(v, c))
        .collect()
}

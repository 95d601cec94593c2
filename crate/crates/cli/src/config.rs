//! Layered configuration: command-line flags over a JSON file over defaults.

use std::path::{Path, PathBuf};

use nestmc::{
    ExperimentConfig, InnerBudget, Method, Problem1Spec, Problem2Spec, ProblemSpec, Reference,
    Scenario,
};
use serde::{Deserialize, Serialize};

/// Environment variable supplying the default master seed.
pub const SEED_ENV: &str = "NESTMC_SEED";

pub const DEFAULT_M_VALUES: std::ops::RangeInclusive<u32> = 8..=16;
pub const DEFAULT_REF_OUTER: usize = 100_000;
pub const DEFAULT_REF_INNER: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Every setting the subcommands understand. Unset fields fall through to
/// the next layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub problem: Option<String>,
    #[serde(rename = "M")]
    pub signals: Option<u32>,
    pub p: Option<f64>,
    pub scenario: Option<String>,
    pub n: Option<f64>,
    pub method: Option<String>,
    pub methods: Option<Vec<String>>,
    pub m: Option<i64>,
    pub m_values: Option<Vec<i64>>,
    pub r: Option<i64>,
    pub seed: Option<u64>,
    pub reference: Option<String>,
    pub ref_outer: Option<usize>,
    pub ref_inner: Option<InnerBudget>,
    pub outer: Option<usize>,
    pub inner: Option<InnerBudget>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

macro_rules! overlay {
    ($top:expr, $bottom:expr, $($field:ident),+ $(,)?) => {
        Settings { $($field: $top.$field.or($bottom.$field)),+ }
    };
}

impl Settings {
    pub fn from_json(text: &str) -> Result<Settings, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Settings::from_json(&text)
    }

    /// Fields set in `self` win over `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        overlay!(
            self, lower, problem, signals, p, scenario, n, method, methods, m, m_values, r, seed,
            reference, ref_outer, ref_inner, outer, inner, threads, out_dir, output,
        )
    }

    pub fn seed_or_default(&self) -> Result<u64, ConfigError> {
        if let Some(seed) = self.seed {
            return Ok(seed);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| ConfigError(format!("{SEED_ENV} must be an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, ConfigError> {
        match self.problem.as_deref().unwrap_or("p1") {
            "p1" => {
                let spec = Problem1Spec {
                    signals: self.signals.unwrap_or(7),
                    p: self.p.unwrap_or(0.7),
                };
                spec.validate().map_err(|e| ConfigError(e.to_string()))?;
                Ok(ProblemSpec::P1(spec))
            }
            "p2" => {
                let scenario: Scenario = self
                    .scenario
                    .as_deref()
                    .unwrap_or("EvSvG")
                    .parse()
                    .map_err(|e: nestmc::Error| ConfigError(e.to_string()))?;
                let spec = Problem2Spec::new(scenario, self.n.unwrap_or(1000.0));
                spec.validate().map_err(|e| ConfigError(e.to_string()))?;
                Ok(ProblemSpec::P2(spec))
            }
            other => err(format!("unknown problem `{other}` (expected p1 or p2)")),
        }
    }

    pub fn method_value(&self) -> Result<Method, ConfigError> {
        parse_method(self.method.as_deref().unwrap_or("sparse_grid"))
    }

    pub fn depth(&self) -> Result<u32, ConfigError> {
        check_depth(self.m.unwrap_or(10))
    }

    /// Reference used by `bench`: analytic for problems with a known truth,
    /// nested Monte Carlo otherwise.
    pub fn reference_value(&self, problem: &ProblemSpec) -> Result<Reference, ConfigError> {
        let default = match problem {
            ProblemSpec::P1(_) => "analytic",
            ProblemSpec::P2(_) => "nested_mc",
        };
        match self.reference.as_deref().unwrap_or(default) {
            "analytic" => Ok(Reference::Analytic),
            "nested_mc" => Ok(Reference::NestedMc {
                outer: self.ref_outer.unwrap_or(DEFAULT_REF_OUTER),
                inner: self
                    .ref_inner
                    .unwrap_or(InnerBudget::Samples(DEFAULT_REF_INNER)),
            }),
            other => err(format!(
                "unknown reference `{other}` (expected analytic or nested_mc)"
            )),
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let problem = self.problem_spec()?;
        let methods = match &self.methods {
            Some(list) => list
                .iter()
                .map(|m| parse_method(m))
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![Method::SparseGrid, Method::Simple],
        };
        if methods.is_empty() {
            return err("methods must not be empty");
        }
        let m_values = match &self.m_values {
            Some(list) => list
                .iter()
                .map(|&m| check_depth(m))
                .collect::<Result<Vec<_>, _>>()?,
            None => DEFAULT_M_VALUES.collect(),
        };
        if m_values.is_empty() {
            return err("m_values must not be empty");
        }
        let r = self.r.unwrap_or(100);
        if r < 1 {
            return err("r must be a positive integer");
        }
        if self.threads == Some(0) {
            return err("threads must be a positive integer");
        }
        let reference = self.reference_value(&problem)?;
        Ok(ExperimentConfig {
            problem,
            methods,
            m_values,
            r: r as usize,
            master_seed: self.seed_or_default()?,
            reference,
            threads: self.threads,
        })
    }
}

pub fn parse_method(s: &str) -> Result<Method, ConfigError> {
    s.parse().map_err(|_| {
        ConfigError(format!(
            "unknown method `{s}` (expected sparse_grid, simple or nested_mc)"
        ))
    })
}

pub fn check_depth(m: i64) -> Result<u32, ConfigError> {
    if m < 0 {
        return err("m must be a nonnegative integer");
    }
    if m > 30 {
        return err("m must be at most 30");
    }
    Ok(m as u32)
}

/// Parses `8..14` (inclusive), `8..=14` or a comma-separated list.
pub fn parse_m_values(s: &str) -> Result<Vec<i64>, ConfigError> {
    let bad = || ConfigError(format!("invalid m list `{s}`"));
    if let Some((lo, hi)) = s.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let lo: i64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: i64 = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| bad()))
        .collect()
}

pub fn parse_inner(s: &str) -> Result<InnerBudget, String> {
    if s == "exact" {
        return Ok(InnerBudget::EXACT);
    }
    s.parse()
        .map(InnerBudget::Samples)
        .map_err(|_| format!("`{s}` is neither an integer nor `exact`"))
}

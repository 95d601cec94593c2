//! Value-of-information test problems.
//!
//! Both problems target `E_Y[ max_d E[NB_d | Y] ]`, the nested term of the
//! expected value of sample information. The constant second term
//! `max_d E[NB_d]` is not part of the target.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::OuterFunction;
use crate::partition::SampleBatch;
use crate::sampling::{spd_inverse, MvnSpec, RngStream};

/// A generative model for a nested expectation.
pub trait NestedProblem: Send + Sync {
    fn name(&self) -> String;

    /// Inner dimension `J`.
    fn j_dim(&self) -> usize;

    /// Outer dimension `K`.
    fn k_dim(&self) -> usize;

    fn outer_function(&self) -> &OuterFunction;

    /// `n` i.i.d. joint draws `(X, Y)`.
    fn sample_joint(&self, n: usize, rng: &mut RngStream) -> SampleBatch;

    /// One draw from the marginal of `Y`.
    fn sample_outer(&self, rng: &mut RngStream) -> Vec<f64> {
        self.sample_joint(1, rng).y_row(0).to_vec()
    }

    /// Exact value of the nested expectation, when known.
    fn truth(&self) -> Option<f64> {
        None
    }

    fn has_inner_sampler(&self) -> bool {
        false
    }

    /// `n` draws from `X | Y = y`, row-major `n x J`.
    fn inner_conditional(&self, _y: &[f64], _n: usize, _rng: &mut RngStream) -> Result<Vec<f64>> {
        Err(Error::InnerSamplerUnavailable)
    }

    /// Closed-form `E[X | Y = y]`, when available.
    fn conditional_mean(&self, _y: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

// ---------------------------------------------------------------------------
// Problem 1: a binary state observed through noisy signed signals
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem1Spec {
    /// Number of signals `M`.
    #[serde(rename = "M")]
    pub signals: u32,
    /// Probability that a signal's sign agrees with the state.
    pub p: f64,
}

impl Problem1Spec {
    pub fn validate(&self) -> Result<()> {
        if self.signals < 1 {
            return Err(Error::InvalidParameter("M must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p = {} must lie in (0, 1)",
                self.p
            )));
        }
        Ok(())
    }
}

/// `theta ~ Bernoulli(1/2)`, `X = (theta, 1 - theta)` and
/// `Y_m = (2 b_m - 1) U_m (2 theta - 1)` with `b_m ~ Bernoulli(p)`,
/// `U_m ~ Uniform(0, 1)`.
#[derive(Clone, Debug)]
pub struct Problem1 {
    spec: Problem1Spec,
    f: OuterFunction,
}

pub fn problem1(spec: Problem1Spec) -> Result<Problem1> {
    spec.validate()?;
    Ok(Problem1 {
        spec,
        f: OuterFunction::max(2),
    })
}

impl Problem1 {
    pub fn spec(&self) -> Problem1Spec {
        self.spec
    }

    /// `P(theta = 1 | Y)` given the number of positive signals.
    pub fn posterior(&self, positives: u32) -> f64 {
        let Problem1Spec { signals, p } = self.spec;
        let ratio = ((1.0 - p) / p).powi(2 * positives as i32 - signals as i32);
        1.0 / (1.0 + ratio)
    }

    pub fn count_positive(y: &[f64]) -> u32 {
        y.iter().filter(|&&v| v > 0.0).count() as u32
    }
}

impl NestedProblem for Problem1 {
    fn name(&self) -> String {
        "p1".into()
    }

    fn j_dim(&self) -> usize {
        2
    }

    fn k_dim(&self) -> usize {
        self.spec.signals as usize
    }

    fn outer_function(&self) -> &OuterFunction {
        &self.f
    }

    fn sample_joint(&self, n: usize, rng: &mut RngStream) -> SampleBatch {
        let k = self.k_dim();
        let mut x = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(k * n);
        for _ in 0..n {
            let theta = rng.bernoulli(0.5);
            let state_sign = if theta { 1.0 } else { -1.0 };
            for _ in 0..k {
                let agree = rng.bernoulli(self.spec.p);
                let u = rng.uniform();
                y.push(if agree { u } else { -u } * state_sign);
            }
            let t = if theta { 1.0 } else { 0.0 };
            x.extend_from_slice(&[t, 1.0 - t]);
        }
        SampleBatch::new(x, y, 2, k).expect("consistent dimensions")
    }

    fn truth(&self) -> Option<f64> {
        Some(problem1_truth(self.spec).expect("validated spec"))
    }

    fn has_inner_sampler(&self) -> bool {
        true
    }

    fn inner_conditional(&self, y: &[f64], n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        if y.len() != self.k_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.k_dim(),
                actual: y.len(),
            });
        }
        let post = self.posterior(Self::count_positive(y));
        let mut out = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let t = if rng.bernoulli(post) { 1.0 } else { 0.0 };
            out.extend_from_slice(&[t, 1.0 - t]);
        }
        Ok(out)
    }

    fn conditional_mean(&self, y: &[f64]) -> Option<Vec<f64>> {
        let post = self.posterior(Self::count_positive(y));
        Some(vec![post, 1.0 - post])
    }
}

/// Exact nested term by enumeration over the number of positive signals:
/// `1/2 * sum_j C(M, j) * max(p^j (1-p)^(M-j), p^(M-j) (1-p)^j)`.
pub fn problem1_truth(spec: Problem1Spec) -> Result<f64> {
    spec.validate()?;
    let m = spec.signals as i32;
    let p = spec.p;
    let mut binom = 1.0f64;
    let mut total = 0.0;
    for j in 0..=m {
        if j > 0 {
            binom = binom * (m - j + 1) as f64 / j as f64;
        }
        let agree = p.powi(j) * (1.0 - p).powi(m - j);
        let disagree = p.powi(m - j) * (1.0 - p).powi(j);
        total += binom * agree.max(disagree);
    }
    Ok(0.5 * total)
}

// ---------------------------------------------------------------------------
// Problem 2: choice of wound dressing after a randomised trial
// ---------------------------------------------------------------------------

/// Trial arm allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Arms E, S, G with sizes `2n/5, 2n/5, n/5`; no A arm.
    EvSvG,
    /// Four equal arms of `n/4`.
    EvSvGvA,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::EvSvG => "EvSvG",
            Scenario::EvSvGvA => "EvSvGvA",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "EvSvG" => Ok(Scenario::EvSvG),
            "EvSvGvA" => Ok(Scenario::EvSvGvA),
            other => Err(Error::InvalidParameter(format!(
                "unknown scenario `{other}`"
            ))),
        }
    }
}

/// Arm size standing in for an empty arm in the observation covariance.
pub const EMPTY_ARM_SIZE: f64 = 1e-3;

/// Model inputs for the dressing decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DressingInputs {
    pub wtp: f64,
    pub ssi_qaly_loss: f64,
    /// Log-scale mean and standard deviation of the SSI cost.
    pub ssi_cost_mu: f64,
    pub ssi_cost_sigma: f64,
    /// Dressing costs for E, S, G, A.
    pub dressing_costs: [f64; 4],
    pub p_ssi_s_mean: f64,
    pub p_ssi_s_sd: f64,
    /// Log odds ratios of E, G, A relative to S.
    pub log_or_mean: [f64; 3],
    pub log_or_cov: [[f64; 3]; 3],
}

impl Default for DressingInputs {
    fn default() -> Self {
        DressingInputs {
            wtp: 20000.0,
            ssi_qaly_loss: 0.12,
            ssi_cost_mu: 8.972,
            ssi_cost_sigma: 0.1631,
            dressing_costs: [0.0, 5.25, 13.86, 21.39],
            p_ssi_s_mean: 0.1380,
            p_ssi_s_sd: 0.0018,
            log_or_mean: [-0.05, -0.07, -0.18],
            log_or_cov: [[0.07, 0.06, 0.02], [0.06, 0.22, 0.02], [0.02, 0.02, 0.05]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem2Spec {
    pub scenario: Scenario,
    /// Total trial size `n`.
    pub n: f64,
    /// Standard deviation of the log odds ratio on one arm.
    #[serde(default = "default_arm_sd")]
    pub s: f64,
    #[serde(default)]
    pub inputs: DressingInputs,
}

fn default_arm_sd() -> f64 {
    3.7
}

impl Problem2Spec {
    pub fn new(scenario: Scenario, n: f64) -> Self {
        Problem2Spec {
            scenario,
            n,
            s: default_arm_sd(),
            inputs: DressingInputs::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n > 0.0) || !self.n.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "n = {} must be positive",
                self.n
            )));
        }
        if !(self.s > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "s = {} must be positive",
                self.s
            )));
        }
        let i = &self.inputs;
        if !(i.ssi_cost_sigma > 0.0) || !(i.p_ssi_s_sd > 0.0) {
            return Err(Error::InvalidParameter(
                "standard deviations must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Nominal arm sizes `(n_E, n_S, n_G, n_A)`; they sum to `n`.
    pub fn arm_sizes(&self) -> [f64; 4] {
        let n = self.n;
        match self.scenario {
            Scenario::EvSvG => [2.0 * n / 5.0, 2.0 * n / 5.0, n / 5.0, 0.0],
            Scenario::EvSvGvA => [n / 4.0; 4],
        }
    }

    /// Covariance of the observed log odds ratios around their true values.
    pub fn observation_covariance(&self) -> DMatrix<f64> {
        let [n_e, n_s, n_g, n_a] = self
            .arm_sizes()
            .map(|v| if v == 0.0 { EMPTY_ARM_SIZE } else { v });
        let s2 = self.s * self.s;
        let off = s2 / n_s;
        let diag = |n_d: f64| s2 * (n_s + n_d) / (n_s * n_d);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                diag(n_e),
                off,
                off, //
                off,
                diag(n_g),
                off, //
                off,
                off,
                diag(n_a),
            ],
        )
    }
}

/// `pSSI_d` from the simple-dressing risk and the odds ratio `OR_d`.
pub fn risk_from_odds_ratio(p_ssi_s: f64, odds_ratio: f64) -> f64 {
    let odds = odds_ratio * p_ssi_s / (1.0 - p_ssi_s);
    odds / (1.0 + odds)
}

/// `(NB_E, NB_S, NB_G, NB_A)` for one parameter draw.
pub fn net_benefits(
    inputs: &DressingInputs,
    log_or: &[f64],
    p_ssi_s: f64,
    ssi_cost: f64,
) -> [f64; 4] {
    let loss = ssi_cost + inputs.ssi_qaly_loss * inputs.wtp;
    let risks = [
        risk_from_odds_ratio(p_ssi_s, log_or[0].exp()),
        p_ssi_s,
        risk_from_odds_ratio(p_ssi_s, log_or[1].exp()),
        risk_from_odds_ratio(p_ssi_s, log_or[2].exp()),
    ];
    let c = &inputs.dressing_costs;
    [
        -(c[0] + risks[0] * loss),
        -(c[1] + risks[1] * loss),
        -(c[2] + risks[2] * loss),
        -(c[3] + risks[3] * loss),
    ]
}

const P_SSI_FLOOR: f64 = 1e-9;

/// The dressing model with its trial design.
#[derive(Clone, Debug)]
pub struct Problem2 {
    spec: Problem2Spec,
    prior: MvnSpec,
    observation: MvnSpec,
    // posterior mean = offset + gain * y
    gain: DMatrix<f64>,
    offset: DVector<f64>,
    posterior_cov: DMatrix<f64>,
    posterior_chol: DMatrix<f64>,
    f: OuterFunction,
}

pub fn problem2(spec: Problem2Spec) -> Result<Problem2> {
    spec.validate()?;
    let inputs = &spec.inputs;
    let prior_cov = DMatrix::from_fn(3, 3, |i, j| inputs.log_or_cov[i][j]);
    let prior_mean = DVector::from_column_slice(&inputs.log_or_mean);
    let prior = MvnSpec::new(prior_mean.clone(), prior_cov.clone())?;
    let obs_cov = spec.observation_covariance();
    let observation = MvnSpec::new(DVector::zeros(3), obs_cov.clone())?;

    let prior_prec = spd_inverse(&prior_cov)?;
    let obs_prec = spd_inverse(&obs_cov)?;
    let post_prec = &prior_prec + &obs_prec;
    let post_prec = (&post_prec + post_prec.transpose()) * 0.5;
    let posterior_cov = spd_inverse(&post_prec)?;
    let posterior_cov = (&posterior_cov + posterior_cov.transpose()) * 0.5;
    let gain = &posterior_cov * &obs_prec;
    let offset = &posterior_cov * (&prior_prec * &prior_mean);
    let posterior_chol = crate::sampling::cholesky(&posterior_cov)?;

    Ok(Problem2 {
        spec,
        prior,
        observation,
        gain,
        offset,
        posterior_cov,
        posterior_chol,
        f: OuterFunction::max(4),
    })
}

/// Conjugate normal posterior of the log odds ratios given observed `y`.
pub fn problem2_posterior(spec: &Problem2Spec, y: &[f64]) -> Result<MvnSpec> {
    problem2(spec.clone())?.posterior(y)
}

impl Problem2 {
    pub fn spec(&self) -> &Problem2Spec {
        &self.spec
    }

    pub fn prior(&self) -> &MvnSpec {
        &self.prior
    }

    pub fn observation(&self) -> &MvnSpec {
        &self.observation
    }

    pub fn posterior_mean(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                actual: y.len(),
            });
        }
        Ok(&self.offset + &self.gain * DVector::from_column_slice(y))
    }

    pub fn posterior(&self, y: &[f64]) -> Result<MvnSpec> {
        MvnSpec::new(self.posterior_mean(y)?, self.posterior_cov.clone())
    }

    fn draw_p_ssi_s(&self, rng: &mut RngStream) -> f64 {
        let i = &self.spec.inputs;
        (i.p_ssi_s_mean + i.p_ssi_s_sd * rng.standard_normal())
            .clamp(P_SSI_FLOOR, 1.0 - P_SSI_FLOOR)
    }

    fn draw_ssi_cost(&self, rng: &mut RngStream) -> f64 {
        let i = &self.spec.inputs;
        (i.ssi_cost_mu + i.ssi_cost_sigma * rng.standard_normal()).exp()
    }
}

impl NestedProblem for Problem2 {
    fn name(&self) -> String {
        "p2".into()
    }

    fn j_dim(&self) -> usize {
        4
    }

    fn k_dim(&self) -> usize {
        3
    }

    fn outer_function(&self) -> &OuterFunction {
        &self.f
    }

    fn sample_joint(&self, n: usize, rng: &mut RngStream) -> SampleBatch {
        let mut x = Vec::with_capacity(4 * n);
        let mut y = Vec::with_capacity(3 * n);
        let mut log_or = [0.0; 3];
        let mut noise = [0.0; 3];
        for _ in 0..n {
            self.prior.sample_into(rng, &mut log_or);
            let p_ssi_s = self.draw_p_ssi_s(rng);
            let ssi_cost = self.draw_ssi_cost(rng);
            self.observation.sample_into(rng, &mut noise);
            x.extend_from_slice(&net_benefits(&self.spec.inputs, &log_or, p_ssi_s, ssi_cost));
            y.extend(log_or.iter().zip(&noise).map(|(a, b)| a + b));
        }
        SampleBatch::new(x, y, 4, 3).expect("consistent dimensions")
    }

    fn sample_outer(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut log_or = [0.0; 3];
        let mut noise = [0.0; 3];
        self.prior.sample_into(rng, &mut log_or);
        self.observation.sample_into(rng, &mut noise);
        log_or.iter().zip(&noise).map(|(a, b)| a + b).collect()
    }

    fn has_inner_sampler(&self) -> bool {
        true
    }

    fn inner_conditional(&self, y: &[f64], n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        let mean = self.posterior_mean(y)?;
        let l = &self.posterior_chol;
        let mut out = Vec::with_capacity(4 * n);
        let mut log_or = [0.0; 3];
        for _ in 0..n {
            let z = [
                rng.standard_normal(),
                rng.standard_normal(),
                rng.standard_normal(),
            ];
            for i in 0..3 {
                let mut acc = mean[i];
                for (k, zk) in z.iter().enumerate().take(i + 1) {
                    acc += l[(i, k)] * zk;
                }
                log_or[i] = acc;
            }
            let p_ssi_s = self.draw_p_ssi_s(rng);
            let ssi_cost = self.draw_ssi_cost(rng);
            out.extend_from_slice(&net_benefits(&self.spec.inputs, &log_or, p_ssi_s, ssi_cost));
        }
        Ok(out)
    }
}

/// Serialisable choice of test problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum ProblemSpec {
    P1(Problem1Spec),
    P2(Problem2Spec),
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn NestedProblem>> {
        Ok(match self {
            ProblemSpec::P1(spec) => Box::new(problem1(*spec)?),
            ProblemSpec::P2(spec) => Box::new(problem2(spec.clone())?),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            ProblemSpec::P1(_) => "p1",
            ProblemSpec::P2(_) => "p2",
        }
    }

    /// Scenario column for result tables.
    pub fn scenario_label(&self) -> String {
        match self {
            ProblemSpec::P1(s) => format!("M={},p={}", s.signals, s.p),
            ProblemSpec::P2(s) => format!("{},n={}", s.scenario.name(), s.n),
        }
    }
}

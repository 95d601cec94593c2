//! Deterministic random streams and the distribution samplers used by the
//! test problems.
//!
//! Every stream is a ChaCha20 generator keyed by the SHA-256 digest of its
//! seed path (the master seed followed by substream indices). Deriving a
//! substream therefore costs one hash, never depends on how far the parent
//! has advanced, and distinct paths give unrelated keys.
//!
//! Normal variates are produced by inverting the standard normal CDF, so
//! every scalar draw consumes exactly one 64-bit word from the stream.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// Smallest Cholesky pivot accepted before a covariance is rejected.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// A reproducible random stream identified by its seed path.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha20Rng,
    seed_path: Vec<u64>,
}

impl RngStream {
    fn from_path(seed_path: Vec<u64>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update((seed_path.len() as u64).to_le_bytes());
        for word in &seed_path {
            hasher.update(word.to_le_bytes());
        }
        let key: [u8; 32] = hasher.finalize().into();
        RngStream {
            rng: ChaCha20Rng::from_seed(key),
            seed_path,
        }
    }

    pub fn seed_path(&self) -> &[u64] {
        &self.seed_path
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw on the open interval (0, 1) with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    /// Standard normal draw by inverse CDF.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        let u = self.uniform();
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// Root stream for a master seed.
pub fn make_stream(master_seed: u64) -> RngStream {
    RngStream::from_path(vec![master_seed])
}

/// Child stream whose seed path is the parent's path extended by `index`.
pub fn substream(parent: &RngStream, index: u64) -> RngStream {
    let mut path = parent.seed_path.clone();
    path.push(index);
    RngStream::from_path(path)
}

/// Lower-triangular Cholesky factor of a symmetric matrix.
///
/// Only the lower triangle of `cov` is read. Fails when a pivot drops to
/// [`PIVOT_TOLERANCE`] or below.
pub fn cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n.max(1),
            actual: cov.ncols(),
        });
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = cov[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > PIVOT_TOLERANCE) {
            return Err(Error::NotPositiveDefinite { row: j, pivot });
        }
        let diag = pivot.sqrt();
        l[(j, j)] = diag;
        for i in (j + 1)..n {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / diag;
        }
    }
    Ok(l)
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub(crate) fn spd_inverse(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky(cov)?;
    let n = cov.nrows();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotPositiveDefinite { row: 0, pivot: 0.0 })?;
    Ok(l_inv.transpose() * l_inv)
}

/// A multivariate normal with its cached Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct MvnSpec {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
}

impl MvnSpec {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: covariance.nrows(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("mean must be finite".into()));
        }
        let chol_lower = cholesky(&covariance)?;
        Ok(MvnSpec {
            mean,
            covariance,
            chol_lower,
        })
    }

    pub fn from_rows(mean: &[f64], covariance: &[&[f64]]) -> Result<Self> {
        let n = mean.len();
        if covariance.len() != n || covariance.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: covariance.len(),
            });
        }
        let cov = DMatrix::from_fn(n, n, |i, j| covariance[i][j]);
        MvnSpec::new(DVector::from_column_slice(mean), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn chol_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    /// Writes one draw into `out` (length `dim`). Consumes `dim` words.
    #[allow(clippy::needless_range_loop)]
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(out.len(), n);
        let mut z = [0.0f64; 8];
        let mut z_heap;
        let z: &mut [f64] = if n <= z.len() {
            &mut z[..n]
        } else {
            z_heap = vec![0.0; n];
            &mut z_heap
        };
        for zi in z.iter_mut() {
            *zi = rng.standard_normal();
        }
        for i in 0..n {
            let mut acc = self.mean[i];
            for k in 0..=i {
                acc += self.chol_lower[(i, k)] * z[k];
            }
            out[i] = acc;
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// Distributions that appear in the model input tables.
#[derive(Clone, Debug, PartialEq)]
pub enum Distribution {
    Constant(f64),
    /// Uniform on (0, 1).
    Uniform,
    Bernoulli(f64),
    Normal {
        mean: f64,
        std_dev: f64,
    },
    /// Log-normal parameterised by the underlying normal.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    MultivariateNormal(MvnSpec),
    /// Componentwise exponential of a multivariate normal.
    MultivariateLogNormal(MvnSpec),
}

/// One draw: a scalar or a vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Draw {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Draw {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Draw::Scalar(v) => Some(*v),
            Draw::Vector(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&[f64]> {
        match self {
            Draw::Scalar(_) => None,
            Draw::Vector(v) => Some(v),
        }
    }
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Constant(c) if !c.is_finite() => Err(Error::InvalidParameter(format!(
                "constant {c} is not finite"
            ))),
            Distribution::Bernoulli(p) if !(0.0..=1.0).contains(&p) => Err(
                Error::InvalidParameter(format!("Bernoulli p = {p} outside [0, 1]")),
            ),
            Distribution::Normal { mean, std_dev } if !(std_dev > 0.0) || !mean.is_finite() => {
                Err(Error::InvalidParameter(format!(
                    "normal requires finite mean and std_dev > 0 (got {mean}, {std_dev})"
                )))
            }
            Distribution::LogNormal { mu, sigma } if !(sigma > 0.0) || !mu.is_finite() => {
                Err(Error::InvalidParameter(format!(
                    "log-normal requires finite mu and sigma > 0 (got {mu}, {sigma})"
                )))
            }
            _ => Ok(()),
        }
    }

    /// One draw from the distribution, advancing `rng`.
    pub fn draw(&self, rng: &mut RngStream) -> Result<Draw> {
        self.validate()?;
        let d = match self {
            Distribution::Constant(c) => Draw::Scalar(*c),
            Distribution::Uniform => Draw::Scalar(rng.uniform()),
            Distribution::Bernoulli(p) => Draw::Scalar(if rng.bernoulli(*p) { 1.0 } else { 0.0 }),
            Distribution::Normal { mean, std_dev } => {
                Draw::Scalar(mean + std_dev * rng.standard_normal())
            }
            Distribution::LogNormal { mu, sigma } => {
                Draw::Scalar((mu + sigma * rng.standard_normal()).exp())
            }
            Distribution::MultivariateNormal(spec) => Draw::Vector(spec.sample(rng)),
            Distribution::MultivariateLogNormal(spec) => {
                let mut v = spec.sample(rng);
                v.iter_mut().for_each(|x| *x = x.exp());
                Draw::Vector(v)
            }
        };
        Ok(d)
    }
}

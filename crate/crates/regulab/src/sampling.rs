//! Deterministic, splittable randomness and primitive distribution sampling.
//!
//! Every Monte-Carlo estimate in the toolkit draws through this module. A
//! [`SeedSpec`] names a stream by `(root_seed, stream_path)`; the stream is
//! realized as a ChaCha12 generator keyed by a SHA-256 hash of that name, so
//! sibling streams are statistically independent and a stream is fully
//! determined by its name. Parallel sweeps assign one substream per work unit
//! and therefore produce the same output as serial execution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Hierarchical stream identifier. Identical specs always yield identical
/// sample sequences; distinct paths under the same root are independent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    root_seed: u64,
    stream_path: Vec<u64>,
}

impl SeedSpec {
    pub fn new(root_seed: u64) -> Self {
        SeedSpec {
            root_seed,
            stream_path: Vec::new(),
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_path(&self) -> &[u64] {
        &self.stream_path
    }

    /// Appends `child` to the stream path. Injective over children.
    pub fn split(&self, child: u64) -> SeedSpec {
        let mut stream_path = self.stream_path.clone();
        stream_path.push(child);
        SeedSpec {
            root_seed: self.root_seed,
            stream_path,
        }
    }

    /// Counter-based generator keyed by the stream name.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.root_seed.to_le_bytes());
        for part in &self.stream_path {
            hasher.update(part.to_le_bytes());
        }
        let key: [u8; 32] = hasher.finalize().into();
        ChaCha12Rng::from_seed(key)
    }
}

/// Scalar distribution family for each component of a draw.
#[derive(Clone)]
pub enum DistributionKind {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
    Categorical { weights: Vec<f64> },
    /// Per-component quantile functions applied to `U[0,1)` (inverse-CDF
    /// sampling); the first argument is the component index.
    CustomQuantile(Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionKind::Uniform { lo, hi } => write!(f, "Uniform({lo}, {hi})"),
            DistributionKind::Gaussian { mean, std } => write!(f, "Gaussian({mean}, {std})"),
            DistributionKind::Categorical { weights } => write!(f, "Categorical({weights:?})"),
            DistributionKind::CustomQuantile(_) => write!(f, "CustomQuantile(..)"),
        }
    }
}

/// A distribution over `R^dimension` with i.i.d. components.
#[derive(Debug, Clone)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub dimension: usize,
}

impl DistributionSpec {
    pub fn uniform(lo: f64, hi: f64, dimension: usize) -> Self {
        DistributionSpec {
            kind: DistributionKind::Uniform { lo, hi },
            dimension,
        }
    }

    pub fn gaussian(mean: f64, std: f64, dimension: usize) -> Self {
        DistributionSpec {
            kind: DistributionKind::Gaussian { mean, std },
            dimension,
        }
    }

    pub fn categorical(weights: Vec<f64>) -> Self {
        DistributionSpec {
            kind: DistributionKind::Categorical { weights },
            dimension: 1,
        }
    }

    pub fn custom_quantile(
        quantile: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>,
        dimension: usize,
    ) -> Self {
        DistributionSpec {
            kind: DistributionKind::CustomQuantile(quantile),
            dimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::config("dimension", "must be a positive integer"));
        }
        match &self.kind {
            DistributionKind::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(Error::config("uniform.lo/hi", "bounds must be finite"));
                }
                if lo >= hi {
                    return Err(Error::config(
                        "uniform.lo",
                        format!("requires lo < hi, got lo={lo}, hi={hi}"),
                    ));
                }
            }
            DistributionKind::Gaussian { mean, std } => {
                if !mean.is_finite() {
                    return Err(Error::config("gaussian.mean", "must be finite"));
                }
                if !(std.is_finite() && *std > 0.0) {
                    return Err(Error::config(
                        "gaussian.std",
                        format!("requires std > 0, got {std}"),
                    ));
                }
            }
            DistributionKind::Categorical { weights } => {
                if weights.is_empty() {
                    return Err(Error::config("categorical.weights", "must be non-empty"));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::config(
                        "categorical.weights",
                        "weights must be non-negative and finite",
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::config(
                        "categorical.weights",
                        format!("weights must sum to 1 within 1e-12, got {total}"),
                    ));
                }
            }
            DistributionKind::CustomQuantile(_) => {}
        }
        Ok(())
    }

    /// Samples one point into `out` (length `dimension`).
    fn sample_into(&self, rng: &mut ChaCha12Rng, out: &mut [f64]) {
        match &self.kind {
            DistributionKind::Uniform { lo, hi } => {
                for v in out.iter_mut() {
                    *v = rng.random_range(*lo..*hi);
                }
            }
            DistributionKind::Gaussian { mean, std } => {
                // std > 0 was validated, so Normal::new cannot fail.
                let normal = Normal::new(*mean, *std).expect("validated gaussian parameters");
                for v in out.iter_mut() {
                    *v = normal.sample(rng);
                }
            }
            DistributionKind::Categorical { weights } => {
                for v in out.iter_mut() {
                    let u: f64 = rng.random_range(0.0..1.0);
                    *v = categorical_index(weights, u) as f64;
                }
            }
            DistributionKind::CustomQuantile(q) => {
                for (i, v) in out.iter_mut().enumerate() {
                    let u: f64 = rng.random_range(0.0..1.0);
                    *v = q(i, u);
                }
            }
        }
    }
}

/// Inverse-CDF lookup for a categorical draw. Ties at cumulative boundaries
/// resolve to the earlier index.
fn categorical_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Draws an `n x dimension` sample matrix, a deterministic function of
/// `(spec, seed, n)` with i.i.d. rows.
pub fn draw(spec: &DistributionSpec, seed: &SeedSpec, n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::config("n", "sample count must be at least 1"));
    }
    spec.validate()?;
    let mut rng = seed.rng();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = vec![0.0; spec.dimension];
        spec.sample_into(&mut rng, &mut row);
        rows.push(row);
    }
    Ok(rows)
}

/// Scalar convenience wrapper over [`draw`] for one-dimensional specs.
pub fn draw_scalar(spec: &DistributionSpec, seed: &SeedSpec, n: usize) -> Result<Vec<f64>> {
    let rows = draw(spec, seed, n)?;
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

/// A uniformly distributed unit vector in `R^dim`, via normalized gaussians.
pub fn unit_vector(rng: &mut ChaCha12Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit gaussian");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Inverse standard-normal CDF (Acklam's rational approximation, absolute
/// error below 1.2e-8 over (0,1)). Used for quantile-based gaussian
/// components in [`DistributionKind::CustomQuantile`] specs.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    assert!(p > 0.0 && p < 1.0, "normal_quantile domain is (0,1)");
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

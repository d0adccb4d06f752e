//! Data-generating processes factored as a deterministic map over an input
//! point and independent noise, plus the conditional-law sampler and the
//! window-filtered joint-sample cross-check.
//!
//! The factorization carries the input domain, a noise distribution that by
//! construction does not depend on the input (so the factorization is
//! decomposable), and a total deterministic map into the latent space. The
//! conditional law at `x` is realized by sampling the noise and pushing it
//! through the map with the input fixed.

use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sampling::{draw, DistributionSpec, SeedSpec};

/// Latent space the process maps into.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentSpace {
    /// Points in `R^dim`.
    Continuous { dim: usize },
    /// A labelled discrete universe with equality comparison.
    Discrete,
}

impl LatentSpace {
    pub fn continuous(dim: usize) -> Self {
        LatentSpace::Continuous { dim }
    }
}

/// A point in the latent space.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentPoint {
    Continuous(Vec<f64>),
    Discrete(i64),
}

impl LatentPoint {
    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            LatentPoint::Continuous(v) => Some(v),
            LatentPoint::Discrete(_) => None,
        }
    }

    pub fn as_label(&self) -> Option<i64> {
        match self {
            LatentPoint::Discrete(l) => Some(*l),
            LatentPoint::Continuous(_) => None,
        }
    }

    /// Scalar view used by task functions: coordinate `coord` of a
    /// continuous point, or the label value of a discrete point.
    pub fn scalar(&self, coord: usize) -> f64 {
        match self {
            LatentPoint::Continuous(v) => v[coord.min(v.len() - 1)],
            LatentPoint::Discrete(l) => *l as f64,
        }
    }
}

/// Input domain: a compact box in `R^n` or a finite point set.
#[derive(Debug, Clone, PartialEq)]
pub enum InputDomain {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Finite(Vec<Vec<f64>>),
}

impl InputDomain {
    pub fn interval(lo: f64, hi: f64) -> Self {
        InputDomain::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InputDomain::Box { lo, .. } => lo.len(),
            InputDomain::Finite(points) => points.first().map_or(0, |p| p.len()),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            InputDomain::Box { lo, hi } => {
                x.len() == lo.len()
                    && x.iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(v, (l, h))| *v >= *l && *v <= *h)
            }
            InputDomain::Finite(points) => points.iter().any(|p| p == x),
        }
    }
}

pub type TransformFn = dyn Fn(&[f64], &[f64]) -> std::result::Result<LatentPoint, String> + Send + Sync;

/// A factorization of a data-generating process: deterministic `transform`
/// applied to an input point from `input_domain` and a noise draw from
/// `noise`. The noise spec is input-independent, so the factorization is
/// decomposable by construction.
#[derive(Clone)]
pub struct Factorization {
    pub input_domain: InputDomain,
    pub noise: DistributionSpec,
    pub latent: LatentSpace,
    transform: Arc<TransformFn>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("input_domain", &self.input_domain)
            .field("noise", &self.noise)
            .field("latent", &self.latent)
            .finish()
    }
}

impl Factorization {
    pub fn new(
        input_domain: InputDomain,
        noise: DistributionSpec,
        latent: LatentSpace,
        transform: Arc<TransformFn>,
    ) -> Result<Self> {
        noise.validate()?;
        Ok(Factorization {
            input_domain,
            noise,
            latent,
            transform,
        })
    }

    /// Evaluates the deterministic map, wrapping failures with the offending
    /// `(x, r)` pair.
    pub fn eval(&self, x: &[f64], r: &[f64]) -> Result<LatentPoint> {
        (self.transform)(x, r).map_err(|message| Error::LatentEval {
            x: x.to_vec(),
            r: r.to_vec(),
            message,
        })
    }

    pub fn transform(&self) -> Arc<TransformFn> {
        Arc::clone(&self.transform)
    }
}

/// Empirical stand-in for the conditional law of the process given the input:
/// equally weighted latent samples obtained by pushing noise draws through
/// the map with the input fixed.
#[derive(Debug, Clone)]
pub struct ConditionalLaw {
    pub x: Vec<f64>,
    pub samples: Vec<LatentPoint>,
}

impl ConditionalLaw {
    /// Weight of each sample; weights are equal and sum to one.
    pub fn weight(&self) -> f64 {
        1.0 / self.samples.len() as f64
    }
}

/// A bounded transformation of the latent space defining a learning task.
/// `bound` declares the essential supremum; evaluation enforces it.
#[derive(Clone)]
pub struct DerivedTask {
    f: Arc<dyn Fn(&LatentPoint) -> f64 + Send + Sync>,
    pub bound: f64,
    pub name: String,
}

impl std::fmt::Debug for DerivedTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DerivedTask")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .finish()
    }
}

/// Fractional part mapping reals to `[0, 1)`, including negatives.
pub fn frac(v: f64) -> f64 {
    v - v.floor()
}

impl DerivedTask {
    pub fn new(
        name: impl Into<String>,
        bound: f64,
        f: Arc<dyn Fn(&LatentPoint) -> f64 + Send + Sync>,
    ) -> Self {
        DerivedTask {
            f,
            bound,
            name: name.into(),
        }
    }

    fn scalar_task(
        name: impl Into<String>,
        bound: f64,
        coord: usize,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        DerivedTask::new(name, bound, Arc::new(move |p: &LatentPoint| g(p.scalar(coord))))
    }

    /// Fractional part of the given coordinate.
    pub fn frac(coord: usize) -> Self {
        DerivedTask::scalar_task("frac", 1.0, coord, frac)
    }

    pub fn constant(c: f64) -> Self {
        DerivedTask::new(format!("const_{c}"), c.abs().max(1.0), Arc::new(move |_| c))
    }

    /// Indicator of `{theta_coord >= c}`.
    pub fn indicator_ge(c: f64, coord: usize) -> Self {
        DerivedTask::scalar_task(format!("ind_ge_{c}"), 1.0, coord, move |v| {
            if v >= c {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Indicator of `{a <= theta_coord <= b}`.
    pub fn indicator_interval(a: f64, b: f64, coord: usize) -> Self {
        DerivedTask::scalar_task(format!("ind_interval_{a}_{b}"), 1.0, coord, move |v| {
            if v >= a && v <= b {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Sign of a sine composition rescaled to {0, 1}, a bounded
    /// discontinuous battery member.
    pub fn sign_sin(freq: f64, coord: usize) -> Self {
        DerivedTask::scalar_task(format!("sign_sin_{freq}"), 1.0, coord, move |v| {
            0.5 * ((freq * v).sin().signum() + 1.0)
        })
    }

    /// Step function with interior `edges` (sorted) and `edges.len() + 1`
    /// levels.
    pub fn step(name: impl Into<String>, edges: Vec<f64>, levels: Vec<f64>, coord: usize) -> Result<Self> {
        if levels.len() != edges.len() + 1 {
            return Err(Error::config(
                "task.levels",
                "step function needs exactly edges.len() + 1 levels",
            ));
        }
        if edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("task.edges", "step edges must be sorted"));
        }
        let bound = levels.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        Ok(DerivedTask::scalar_task(name, bound, coord, move |v| {
            let idx = edges.partition_point(|e| *e <= v);
            levels[idx]
        }))
    }

    /// Random step function with `steps` interior edges uniform over `range`
    /// and levels uniform in `[0, 1]`.
    pub fn random_step(steps: usize, range: (f64, f64), seed: &SeedSpec, coord: usize) -> Result<Self> {
        let spec = DistributionSpec::uniform(range.0, range.1, 1);
        let mut edges: Vec<f64> = draw(&spec, &seed.split(0), steps)?
            .into_iter()
            .map(|r| r[0])
            .collect();
        edges.sort_by(f64::total_cmp);
        let levels: Vec<f64> = draw(&DistributionSpec::uniform(0.0, 1.0, 1), &seed.split(1), steps + 1)?
            .into_iter()
            .map(|r| r[0])
            .collect();
        DerivedTask::step(format!("random_step_{steps}"), edges, levels, coord)
    }

    /// Evaluates the task, enforcing the declared bound.
    pub fn eval(&self, p: &LatentPoint) -> Result<f64> {
        let v = (self.f)(p);
        if !v.is_finite() || v.abs() > self.bound + 1e-12 {
            return Err(Error::BoundViolation {
                task: self.name.clone(),
                value: v,
                bound: self.bound,
            });
        }
        Ok(v)
    }
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

/// One point of a derived-task curve.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    /// Grid parameter (the coordinate that varies along the grid).
    pub x: f64,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Samples the conditional law of the process at `x`: `n` i.i.d. draws of
/// the map applied to fresh noise with the input held fixed.
pub fn conditional_law(
    fact: &Factorization,
    x: &[f64],
    n: usize,
    seed: &SeedSpec,
) -> Result<ConditionalLaw> {
    if !fact.input_domain.contains(x) {
        return Err(Error::config(
            "x",
            format!("point {x:?} lies outside the declared input domain"),
        ));
    }
    let noise = draw(&fact.noise, seed, n)?;
    let mut samples = Vec::with_capacity(n);
    for r in &noise {
        samples.push(fact.eval(x, r)?);
    }
    Ok(ConditionalLaw {
        x: x.to_vec(),
        samples,
    })
}

/// Monte-Carlo estimate of the conditional expectation of `task` at `x`.
pub fn conditional_expectation(
    fact: &Factorization,
    task: &DerivedTask,
    x: &[f64],
    n: usize,
    seed: &SeedSpec,
) -> Result<Estimate> {
    let law = conditional_law(fact, x, n, seed)?;
    estimate_on_law(task, &law)
}

/// Mean and standard error of `task` over an already-sampled law.
pub fn estimate_on_law(task: &DerivedTask, law: &ConditionalLaw) -> Result<Estimate> {
    let n = law.samples.len();
    if n == 0 {
        return Err(Error::EmptyLaw);
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for p in &law.samples {
        let v = task.eval(p)?;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok(Estimate {
        value: mean,
        stderr: (var / n as f64).sqrt(),
        n,
    })
}

/// A one-dimensional sweep through the input domain: the grid parameter
/// replaces coordinate `coord` of `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub coord: usize,
    pub base: Vec<f64>,
}

impl GridSpec {
    pub fn line(lo: f64, hi: f64, points: usize) -> Self {
        GridSpec {
            lo,
            hi,
            points,
            coord: 0,
            base: vec![0.0],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lo + step * i as f64).collect()
    }

    pub fn point_at(&self, t: f64) -> Vec<f64> {
        let mut x = self.base.clone();
        x[self.coord] = t;
        x
    }
}

/// Evaluates the derived-task curve over a grid, one substream per grid
/// point. Points run in parallel; output order follows the grid.
pub fn curve(
    fact: &Factorization,
    task: &DerivedTask,
    grid: &GridSpec,
    n: usize,
    seed: &SeedSpec,
) -> Result<Vec<CurvePoint>> {
    if grid.points == 0 {
        return Err(Error::config("grid.points", "grid must be non-empty"));
    }
    let ts = grid.values();
    ts.par_iter()
        .enumerate()
        .map(|(i, t)| {
            let x = grid.point_at(*t);
            let est = conditional_expectation(fact, task, &x, n, &seed.split(i as u64))?;
            Ok(CurvePoint {
                x: *t,
                value: est.value,
                stderr: est.stderr,
                n: est.n,
            })
        })
        .collect()
}

/// Curves for several tasks sharing one conditional-law sample per grid
/// point. Cheaper than separate sweeps and couples the tasks' noise, which
/// is what a certificate battery wants.
pub fn curves_shared(
    fact: &Factorization,
    tasks: &[DerivedTask],
    grid: &GridSpec,
    n: usize,
    seed: &SeedSpec,
) -> Result<Vec<Vec<CurvePoint>>> {
    let ts = grid.values();
    let per_point: Vec<Vec<CurvePoint>> = ts
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let x = grid.point_at(*t);
            let law = conditional_law(fact, &x, n, &seed.split(i as u64))?;
            tasks
                .iter()
                .map(|task| {
                    let est = estimate_on_law(task, &law)?;
                    Ok(CurvePoint {
                        x: *t,
                        value: est.value,
                        stderr: est.stderr,
                        n: est.n,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    // Transpose to one curve per task.
    let mut out = vec![Vec::with_capacity(ts.len()); tasks.len()];
    for point_row in per_point {
        for (k, cp) in point_row.into_iter().enumerate() {
            out[k].push(cp);
        }
    }
    Ok(out)
}

/// Draws `n` i.i.d. `(x, theta)` pairs with the input from `x_dist` and the
/// noise drawn independently — the raw data a learner would observe.
pub fn joint_sample(
    fact: &Factorization,
    x_dist: &DistributionSpec,
    n: usize,
    seed: &SeedSpec,
) -> Result<Vec<(Vec<f64>, LatentPoint)>> {
    x_dist.validate()?;
    let xs = draw(x_dist, &seed.split(0), n)?;
    let rs = draw(&fact.noise, &seed.split(1), n)?;
    // Chunked so the map evaluations parallelize while order stays fixed.
    xs.into_par_iter()
        .zip(rs.into_par_iter())
        .map(|(x, r)| {
            if !fact.input_domain.contains(&x) {
                return Err(Error::config(
                    "x_dist",
                    format!("sampled input {x:?} escaped the declared domain"),
                ));
            }
            let theta = fact.eval(&x, &r)?;
            Ok((x, theta))
        })
        .collect()
}

/// Settings for the conditional-law versus joint-data cross-check.
#[derive(Debug, Clone)]
pub struct WindowCheckConfig {
    /// Samples drawn directly from the conditional law.
    pub law_n: usize,
    /// Joint pairs drawn for the window filter.
    pub joint_n: usize,
    /// The window half-width is the smallest radius keeping at least this
    /// many pairs.
    pub min_survivors: usize,
    /// Bins per dimension for the comparison histogram; `None` for the
    /// metrics default.
    pub bins: Option<usize>,
}

impl Default for WindowCheckConfig {
    fn default() -> Self {
        WindowCheckConfig {
            law_n: 100_000,
            joint_n: 100_000,
            min_survivors: 1000,
            bins: Some(6),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct WindowCheckOutcome {
    pub tv: f64,
    pub survivors: usize,
    pub window: f64,
    pub bins: usize,
}

/// Cross-checks the direct conditional-law sampler against joint data
/// filtered to a shrinking window around `x`: the two empirical laws must
/// agree in binned total variation. This is the operational consistency
/// check between conditioning the map deterministically and conditioning
/// the joint law probabilistically.
pub fn window_consistency_check(
    fact: &Factorization,
    x: &[f64],
    x_dist: &DistributionSpec,
    cfg: &WindowCheckConfig,
    seed: &SeedSpec,
) -> Result<WindowCheckOutcome> {
    let law = conditional_law(fact, x, cfg.law_n, &seed.split(0))?;
    let joint = joint_sample(fact, x_dist, cfg.joint_n, &seed.split(1))?;
    if cfg.min_survivors == 0 || cfg.min_survivors > cfg.joint_n {
        return Err(Error::config(
            "window_check.min_survivors",
            "must be positive and at most joint_n",
        ));
    }

    let mut dists: Vec<f64> = joint
        .iter()
        .map(|(xi, _)| {
            xi.iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut sorted = dists.clone();
    sorted.sort_by(f64::total_cmp);
    let window = sorted[cfg.min_survivors - 1];
    let windowed = ConditionalLaw {
        x: x.to_vec(),
        samples: joint
            .iter()
            .zip(dists.drain(..))
            .filter(|(_, d)| *d <= window)
            .map(|((_, theta), _)| theta.clone())
            .collect(),
    };

    let binning = crate::metrics::pooled_binning(
        &fact.latent,
        [&law, &windowed].into_iter(),
        cfg.bins,
    )?;
    let tv = crate::metrics::tv(
        &crate::metrics::bin(&law.samples, &binning)?,
        &crate::metrics::bin(&windowed.samples, &binning)?,
    )?;
    Ok(WindowCheckOutcome {
        tv,
        survivors: windowed.samples.len(),
        window,
        bins: binning.bin_count(),
    })
}

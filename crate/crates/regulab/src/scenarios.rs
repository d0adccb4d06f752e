//! Bundled executable scenarios: the additive/multiplicative fractional-part
//! pair and a randomized two-sided matching market resolved by men-proposing
//! deferred acceptance.
//!
//! The matching market exposes the focal man's features as the input; all
//! other feature vectors and every preference parameter are packed into a
//! flat noise vector, so the match outcome is a deterministic map of
//! `(input, noise)` and fits the factorization interface.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::dgp::{Factorization, InputDomain, LatentPoint, LatentSpace};
use crate::error::{Error, Result};
use crate::sampling::{
    draw, normal_quantile, unit_vector, DistributionKind, DistributionSpec, SeedSpec,
};

/// The bundled motivating pair: sum and product of the input with uniform
/// noise, observed through bounded transformations.
pub struct FracScenarios {
    pub l1: Factorization,
    pub l2: Factorization,
}

/// Sum/product factorizations over a configurable input interval with
/// `U[0,1)` noise.
pub fn frac_scenarios_on(lo: f64, hi: f64) -> FracScenarios {
    let noise = DistributionSpec::uniform(0.0, 1.0, 1);
    let l1 = Factorization::new(
        InputDomain::interval(lo, hi),
        noise.clone(),
        LatentSpace::continuous(1),
        Arc::new(|x: &[f64], r: &[f64]| Ok(LatentPoint::Continuous(vec![x[0] + r[0]]))),
    )
    .expect("static scenario");
    let l2 = Factorization::new(
        InputDomain::interval(lo, hi),
        noise,
        LatentSpace::continuous(1),
        Arc::new(|x: &[f64], r: &[f64]| Ok(LatentPoint::Continuous(vec![x[0] * r[0]]))),
    )
    .expect("static scenario");
    FracScenarios { l1, l2 }
}

/// Default input interval `[-2, 2]`.
pub fn frac_scenarios() -> FracScenarios {
    frac_scenarios_on(-2.0, 2.0)
}

/// Parametrized continuous preference families. Both random kinds are
/// continuous in the evaluated features and tie-free almost surely under
/// absolutely continuous parameter draws. The step kind deliberately breaks
/// continuity and exists as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PreferenceFamily {
    /// `P(x) = w . x` with gaussian weights.
    Linear,
    /// `P(x) = w . x + a * exp(-|x - c|^2 / (2 s^2))` with random center,
    /// amplitude and scale.
    LinearBump,
    /// `P(x) = w . x + amplitude * 1[x_0 >= threshold]`. Discontinuous:
    /// violates the continuity premise on purpose.
    StepLinear { threshold: f64, amplitude: f64 },
}

impl PreferenceFamily {
    /// Gaussian/uniform parameters drawn per agent, beyond the weights.
    fn extra_params(&self, feature_dim: usize) -> usize {
        match self {
            PreferenceFamily::Linear | PreferenceFamily::StepLinear { .. } => 0,
            // center (feature_dim) + amplitude + scale
            PreferenceFamily::LinearBump => feature_dim + 2,
        }
    }
}

/// One agent's preference function over feature vectors.
#[derive(Debug, Clone)]
pub enum Preference {
    Linear {
        weights: Vec<f64>,
    },
    LinearBump {
        weights: Vec<f64>,
        center: Vec<f64>,
        amplitude: f64,
        scale: f64,
    },
    StepLinear {
        weights: Vec<f64>,
        threshold: f64,
        amplitude: f64,
    },
}

impl Preference {
    pub fn score(&self, features: &[f64]) -> f64 {
        match self {
            Preference::Linear { weights } => dot(weights, features),
            Preference::LinearBump {
                weights,
                center,
                amplitude,
                scale,
            } => {
                let sq: f64 = features
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dot(weights, features) + amplitude * (-sq / (2.0 * scale * scale)).exp()
            }
            Preference::StepLinear {
                weights,
                threshold,
                amplitude,
            } => {
                let step = if features[0] >= *threshold { *amplitude } else { 0.0 };
                dot(weights, features) + step
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Market generation settings: agent counts, feature space, and the
/// preference family with its parameter distributions.
#[derive(Debug, Clone)]
pub struct MarketConfig {
    /// Agents per side.
    pub n_agents: usize,
    pub feature_dim: usize,
    /// Scalar law of each feature coordinate. Must be absolutely continuous.
    pub feature_dist: DistributionSpec,
    pub preference: PreferenceFamily,
    pub focal_man: usize,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            n_agents: 3,
            feature_dim: 2,
            feature_dist: DistributionSpec::uniform(-1.0, 1.0, 1),
            preference: PreferenceFamily::Linear,
            focal_man: 0,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::config("matching.n_agents", "need at least one agent"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("matching.feature_dim", "need at least one feature"));
        }
        if self.focal_man >= self.n_agents {
            return Err(Error::config(
                "matching.focal_man",
                "focal index out of range",
            ));
        }
        match &self.feature_dist.kind {
            DistributionKind::Uniform { .. } | DistributionKind::Gaussian { .. } => {}
            DistributionKind::Categorical { .. } => {
                return Err(Error::config(
                    "matching.feature_dist",
                    "feature distributions must be absolutely continuous; categorical features are not supported",
                ));
            }
            DistributionKind::CustomQuantile(_) => {
                return Err(Error::config(
                    "matching.feature_dist",
                    "custom feature quantiles are not supported for markets",
                ));
            }
        }
        self.feature_dist.validate()
    }

    /// Length of the flat noise vector: every non-focal feature vector plus
    /// all preference parameters on both sides.
    pub fn noise_dim(&self) -> usize {
        let n = self.n_agents;
        let fd = self.feature_dim;
        let per_pref = fd + self.preference.extra_params(fd);
        (n - 1) * fd + n * fd + 2 * n * per_pref
    }

    /// Compact input domain for the focal features, derived from the feature
    /// law (six standard deviations for gaussian coordinates).
    pub fn input_domain(&self) -> InputDomain {
        let (lo, hi) = match self.feature_dist.kind {
            DistributionKind::Uniform { lo, hi } => (lo, hi),
            DistributionKind::Gaussian { mean, std } => (mean - 6.0 * std, mean + 6.0 * std),
            _ => (-1.0, 1.0),
        };
        InputDomain::Box {
            lo: vec![lo; self.feature_dim],
            hi: vec![hi; self.feature_dim],
        }
    }

    fn feature_quantile(&self, u: f64) -> f64 {
        // Guard the open-interval requirement of the normal quantile.
        let u = u.clamp(1e-15, 1.0 - 1e-15);
        match self.feature_dist.kind {
            DistributionKind::Uniform { lo, hi } => lo + (hi - lo) * u,
            DistributionKind::Gaussian { mean, std } => mean + std * normal_quantile(u),
            _ => unreachable!("validated feature distribution"),
        }
    }

    /// Quantile of one flat-noise component: features are feature-law draws,
    /// weights and amplitudes are standard gaussians, bump scales are
    /// uniform on [0.5, 1.5].
    fn noise_quantile(&self, idx: usize, u: f64) -> f64 {
        let n = self.n_agents;
        let fd = self.feature_dim;
        let per_pref = fd + self.preference.extra_params(fd);
        let features_len = (n - 1) * fd + n * fd;
        if idx < features_len {
            return self.feature_quantile(u);
        }
        let within = (idx - features_len) % per_pref;
        let ug = u.clamp(1e-15, 1.0 - 1e-15);
        if within < fd {
            return normal_quantile(ug); // preference weight
        }
        match self.preference {
            PreferenceFamily::LinearBump => {
                if within < 2 * fd {
                    self.feature_quantile(u) // bump center
                } else if within == 2 * fd {
                    normal_quantile(ug) // bump amplitude
                } else {
                    0.5 + u // bump scale in [0.5, 1.5)
                }
            }
            _ => unreachable!("families without extra params"),
        }
    }

    /// The flat market noise as a distribution spec.
    pub fn noise_spec(&self) -> DistributionSpec {
        let cfg = self.clone();
        DistributionSpec::custom_quantile(
            Arc::new(move |idx, u| cfg.noise_quantile(idx, u)),
            self.noise_dim(),
        )
    }

    fn parse_preference(&self, params: &[f64]) -> Preference {
        let fd = self.feature_dim;
        match self.preference {
            PreferenceFamily::Linear => Preference::Linear {
                weights: params[..fd].to_vec(),
            },
            PreferenceFamily::LinearBump => Preference::LinearBump {
                weights: params[..fd].to_vec(),
                center: params[fd..2 * fd].to_vec(),
                amplitude: params[2 * fd],
                scale: params[2 * fd + 1],
            },
            PreferenceFamily::StepLinear {
                threshold,
                amplitude,
            } => Preference::StepLinear {
                weights: params[..fd].to_vec(),
                threshold,
                amplitude,
            },
        }
    }

    /// Deterministic market assembly from the focal features and the flat
    /// noise vector.
    pub fn build_market(&self, x: &[f64], r: &[f64]) -> MatchingMarket {
        let n = self.n_agents;
        let fd = self.feature_dim;
        let per_pref = fd + self.preference.extra_params(fd);
        debug_assert_eq!(r.len(), self.noise_dim());
        debug_assert_eq!(x.len(), fd);

        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let slice = &r[cursor..cursor + len];
            cursor += len;
            slice
        };

        let mut men_features = Vec::with_capacity(n);
        for i in 0..n {
            if i == self.focal_man {
                men_features.push(x.to_vec());
            } else {
                men_features.push(take(fd).to_vec());
            }
        }
        let women_features: Vec<Vec<f64>> = (0..n).map(|_| take(fd).to_vec()).collect();
        let men_prefs: Vec<Preference> = (0..n).map(|_| self.parse_preference(take(per_pref))).collect();
        let women_prefs: Vec<Preference> =
            (0..n).map(|_| self.parse_preference(take(per_pref))).collect();

        MatchingMarket {
            men_features,
            women_features,
            men_prefs,
            women_prefs,
            focal_man: self.focal_man,
        }
    }
}

/// A fully instantiated two-sided market.
#[derive(Debug, Clone)]
pub struct MatchingMarket {
    pub men_features: Vec<Vec<f64>>,
    pub women_features: Vec<Vec<f64>>,
    pub men_prefs: Vec<Preference>,
    pub women_prefs: Vec<Preference>,
    pub focal_man: usize,
}

impl MatchingMarket {
    pub fn n(&self) -> usize {
        self.men_features.len()
    }
}

/// A stable assignment: `assignment[m]` is the woman matched to man `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub assignment: Vec<usize>,
    pub focal_partner_features: Vec<f64>,
}

/// Sorts candidate indices by strictly decreasing score; exact ties are a
/// degenerate draw.
fn strict_ranking(scores: &[f64]) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    for w in order.windows(2) {
        if scores[w[0]] == scores[w[1]] {
            return Err(Error::DegenerateDraw { a: w[0], b: w[1] });
        }
    }
    Ok(order)
}

/// Men-proposing deferred acceptance. Returns the man-optimal stable
/// matching; exact preference ties abort with a degenerate-draw error so the
/// caller can resample.
pub fn deferred_acceptance(market: &MatchingMarket) -> Result<MatchOutcome> {
    let n = market.n();
    // Score matrices: men over women, women over men.
    let men_scores: Vec<Vec<f64>> = market
        .men_prefs
        .iter()
        .map(|p| market.women_features.iter().map(|w| p.score(w)).collect())
        .collect();
    let women_scores: Vec<Vec<f64>> = market
        .women_prefs
        .iter()
        .map(|p| market.men_features.iter().map(|m| p.score(m)).collect())
        .collect();

    let men_rankings: Vec<Vec<usize>> = men_scores
        .iter()
        .map(|s| strict_ranking(s))
        .collect::<Result<_>>()?;
    for s in &women_scores {
        strict_ranking(s)?;
    }

    let mut next_choice = vec![0usize; n];
    let mut woman_hold: Vec<Option<usize>> = vec![None; n];
    let mut free: Vec<usize> = (0..n).rev().collect();
    while let Some(man) = free.pop() {
        let woman = men_rankings[man][next_choice[man]];
        next_choice[man] += 1;
        match woman_hold[woman] {
            None => woman_hold[woman] = Some(man),
            Some(current) => {
                if women_scores[woman][man] > women_scores[woman][current] {
                    woman_hold[woman] = Some(man);
                    free.push(current);
                } else {
                    free.push(man);
                }
            }
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for (woman, man) in woman_hold.into_iter().enumerate() {
        assignment[man.expect("square market leaves no woman unmatched")] = woman;
    }
    let focal_partner_features = market.women_features[assignment[market.focal_man]].clone();
    Ok(MatchOutcome {
        assignment,
        focal_partner_features,
    })
}

/// Exhaustive blocking-pair check: true when no man-woman pair mutually
/// prefers each other over their assigned partners.
pub fn verify_stability(market: &MatchingMarket, assignment: &[usize]) -> bool {
    let n = market.n();
    let mut woman_partner = vec![usize::MAX; n];
    for (m, w) in assignment.iter().enumerate() {
        woman_partner[*w] = m;
    }
    for (m, &matched) in assignment.iter().enumerate() {
        for (w, &current_man) in woman_partner.iter().enumerate() {
            if matched == w {
                continue;
            }
            let man_gain = market.men_prefs[m].score(&market.women_features[w])
                > market.men_prefs[m].score(&market.women_features[matched]);
            let woman_gain = market.women_prefs[w].score(&market.men_features[m])
                > market.women_prefs[w].score(&market.men_features[current_man]);
            if man_gain && woman_gain {
                return false;
            }
        }
    }
    true
}

/// Factorization of the focal man's match: input is his feature vector,
/// noise is everything else, and the map runs deferred acceptance and emits
/// the matched partner's features.
pub fn matching_factorization(config: &MarketConfig) -> Result<Factorization> {
    config.validate()?;
    let cfg = config.clone();
    let transform = Arc::new(move |x: &[f64], r: &[f64]| {
        let market = cfg.build_market(x, r);
        match deferred_acceptance(&market) {
            Ok(outcome) => Ok(LatentPoint::Continuous(outcome.focal_partner_features)),
            Err(e) => Err(e.to_string()),
        }
    });
    Factorization::new(
        config.input_domain(),
        config.noise_spec(),
        LatentSpace::continuous(config.feature_dim),
        transform,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchingProbeRow {
    pub radius: f64,
    pub change_fraction: f64,
}

/// Perturbation-stability table for the matching scenario.
#[derive(Debug, Clone, Serialize)]
pub struct MatchingProbeReport {
    pub rows: Vec<MatchingProbeRow>,
    pub trials: usize,
    /// Trials that drew an exact preference tie and were resampled.
    pub ties_resampled: usize,
    pub threshold: f64,
    /// True when the change fraction is non-increasing within noise and the
    /// final entry is below the threshold.
    pub pass: bool,
}

const TIE_RETRY_LIMIT: usize = 64;

/// Estimates, per radius, the fraction of trials in which the focal match
/// changes when the focal features move by that radius, holding all market
/// randomness fixed within the trial (common random numbers across radii).
pub fn matching_regularity_probe(
    config: &MarketConfig,
    x0: &[f64],
    radii: &[f64],
    trials: usize,
    threshold: f64,
    seed: &SeedSpec,
) -> Result<MatchingProbeReport> {
    config.validate()?;
    if x0.len() != config.feature_dim {
        return Err(Error::config("x0", "dimension must match feature_dim"));
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("radii", "must be strictly decreasing"));
    }
    if trials == 0 {
        return Err(Error::config("trials", "need at least one trial"));
    }
    let noise_spec = config.noise_spec();

    let per_trial: Vec<Result<(Vec<bool>, usize)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = seed.split(t as u64);
            let mut rng = trial_seed.split(0).rng();
            let dir = unit_vector(&mut rng, config.feature_dim);
            let mut ties = 0usize;
            for attempt in 0..TIE_RETRY_LIMIT {
                let r = &draw(&noise_spec, &trial_seed.split(1 + attempt as u64), 1)?[0];
                let outcome = run_trial(config, x0, &dir, radii, r);
                match outcome {
                    Ok(changed) => return Ok((changed, ties)),
                    Err(Error::DegenerateDraw { .. }) => {
                        ties += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::config(
                "matching",
                format!("exceeded {TIE_RETRY_LIMIT} tie resamples in one trial"),
            ))
        })
        .collect();

    let mut counts = vec![0usize; radii.len()];
    let mut ties_resampled = 0usize;
    for res in per_trial {
        let (changed, ties) = res?;
        ties_resampled += ties;
        for (i, c) in changed.into_iter().enumerate() {
            if c {
                counts[i] += 1;
            }
        }
    }

    let rows: Vec<MatchingProbeRow> = radii
        .iter()
        .zip(&counts)
        .map(|(radius, count)| MatchingProbeRow {
            radius: *radius,
            change_fraction: *count as f64 / trials as f64,
        })
        .collect();

    // Pass when the table is non-increasing within two binomial standard
    // errors and the smallest radius sits below the threshold.
    let slack = |p: f64| 2.0 * (p.max(1e-9) * (1.0 - p).max(1e-9) / trials as f64).sqrt();
    let monotone = rows
        .windows(2)
        .all(|w| w[1].change_fraction <= w[0].change_fraction + slack(w[0].change_fraction));
    let final_ok = rows.last().map(|r| r.change_fraction < threshold).unwrap_or(false);
    Ok(MatchingProbeReport {
        rows,
        trials,
        ties_resampled,
        threshold,
        pass: monotone && final_ok,
    })
}

fn run_trial(
    config: &MarketConfig,
    x0: &[f64],
    dir: &[f64],
    radii: &[f64],
    r: &[f64],
) -> Result<Vec<bool>> {
    let base_market = config.build_market(x0, r);
    let base = deferred_acceptance(&base_market)?;
    let base_partner = base.assignment[config.focal_man];
    let mut changed = Vec::with_capacity(radii.len());
    for radius in radii {
        if *radius == 0.0 {
            changed.push(false);
            continue;
        }
        let x: Vec<f64> = x0.iter().zip(dir).map(|(a, d)| a + radius * d).collect();
        let market = config.build_market(&x, r);
        let outcome = deferred_acceptance(&market)?;
        changed.push(outcome.assignment[config.focal_man] != base_partner);
    }
    Ok(changed)
}

//! Statistical distances and measure-theoretic desk tools: binned laws and
//! total-variation distance, TV convergence probes, Kolmogorov-Smirnov and
//! rank-correlation statistics, curve modulus/jump scans, annulus mass around
//! box unions, and dyadic box covers of membership oracles.
//!
//! Binned TV over a fixed grid is a lower bound on the true total variation;
//! every report labels it as such and records the bin count.

use rayon::prelude::*;
use serde::Serialize;

use crate::dgp::{conditional_law, CurvePoint, Factorization, LatentPoint, LatentSpace};
use crate::error::{Error, Result};
use crate::sampling::{unit_vector, SeedSpec};

/// Shared binning for empirical laws: a regular grid over a bounding box for
/// continuous latent spaces, or an explicit label set for discrete ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Binning {
    Regular {
        lo: Vec<f64>,
        hi: Vec<f64>,
        bins_per_dim: usize,
    },
    Labels(Vec<i64>),
}

impl Binning {
    pub fn regular(lo: Vec<f64>, hi: Vec<f64>, bins_per_dim: usize) -> Result<Self> {
        if bins_per_dim == 0 {
            return Err(Error::config("bins", "need at least one bin per dimension"));
        }
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config("bins", "inconsistent bounding box"));
        }
        let mut hi = hi;
        for (l, h) in lo.iter().zip(hi.iter_mut()) {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::NonFinite {
                    context: "binning bounds".into(),
                });
            }
            // Degenerate axes (point masses) get a token width so indexing
            // stays well defined.
            if *h <= *l {
                *h = *l + 1e-12;
            }
        }
        Ok(Binning::Regular {
            lo,
            hi,
            bins_per_dim,
        })
    }

    /// Bounding-box binning fitted to pooled continuous samples.
    pub fn regular_from_samples(samples: &[&[f64]], bins_per_dim: usize) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyLaw)?;
        let d = first.len();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for s in samples {
            for (i, v) in s.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: "binning samples".into(),
                    });
                }
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
        }
        Binning::regular(lo, hi, bins_per_dim)
    }

    pub fn labels_from_samples(samples: &[i64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyLaw);
        }
        let mut labels = samples.to_vec();
        labels.sort_unstable();
        labels.dedup();
        Ok(Binning::Labels(labels))
    }

    /// Number of regular bins (excluding the overflow bin), or label count.
    pub fn bin_count(&self) -> usize {
        match self {
            Binning::Regular {
                lo, bins_per_dim, ..
            } => bins_per_dim.pow(lo.len() as u32),
            Binning::Labels(labels) => labels.len(),
        }
    }

    /// Flattened bin index of a point, or `None` for out-of-range mass.
    fn index(&self, p: &LatentPoint) -> Option<usize> {
        match (self, p) {
            (
                Binning::Regular {
                    lo,
                    hi,
                    bins_per_dim,
                },
                LatentPoint::Continuous(v),
            ) => {
                if v.len() != lo.len() {
                    return None;
                }
                let b = *bins_per_dim;
                let mut idx = 0usize;
                for i in 0..lo.len() {
                    if v[i] < lo[i] || v[i] > hi[i] {
                        return None;
                    }
                    let w = (hi[i] - lo[i]) / b as f64;
                    // The closed right edge folds into the last bin.
                    let mut k = ((v[i] - lo[i]) / w) as usize;
                    if k >= b {
                        k = b - 1;
                    }
                    idx = idx * b + k;
                }
                Some(idx)
            }
            (Binning::Labels(labels), LatentPoint::Discrete(l)) => {
                labels.binary_search(l).ok()
            }
            _ => None,
        }
    }
}

/// A normalized histogram over a shared binning. Out-of-range mass is kept
/// in a reported overflow bin so probabilities still sum to one.
#[derive(Debug, Clone, Serialize)]
pub struct BinnedLaw {
    pub binning: Binning,
    pub probs: Vec<f64>,
    pub overflow: f64,
}

impl BinnedLaw {
    pub fn from_probs(binning: Binning, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != binning.bin_count() {
            return Err(Error::BinMismatch(format!(
                "expected {} probabilities, got {}",
                binning.bin_count(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::config("probs", "probabilities must be non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "probs",
                format!("probabilities must sum to 1 within 1e-9, got {total}"),
            ));
        }
        Ok(BinnedLaw {
            binning,
            probs,
            overflow: 0.0,
        })
    }
}

/// Bins latent samples into a normalized histogram.
pub fn bin(samples: &[LatentPoint], binning: &Binning) -> Result<BinnedLaw> {
    if samples.is_empty() {
        return Err(Error::EmptyLaw);
    }
    let mut counts = vec![0usize; binning.bin_count()];
    let mut overflow = 0usize;
    for s in samples {
        match binning.index(s) {
            Some(i) => counts[i] += 1,
            None => overflow += 1,
        }
    }
    let n = samples.len() as f64;
    Ok(BinnedLaw {
        binning: binning.clone(),
        probs: counts.into_iter().map(|c| c as f64 / n).collect(),
        overflow: overflow as f64 / n,
    })
}

/// Total variation between two laws over the same binning: half the L1
/// distance of the probability vectors (overflow included). A lower bound on
/// the true total variation of the underlying laws.
pub fn tv(p: &BinnedLaw, q: &BinnedLaw) -> Result<f64> {
    if p.binning != q.binning {
        return Err(Error::BinMismatch(
            "laws were binned over different grids".into(),
        ));
    }
    let mut sum = (p.overflow - q.overflow).abs();
    for (a, b) in p.probs.iter().zip(&q.probs) {
        sum += (a - b).abs();
    }
    Ok(0.5 * sum)
}

/// Probe directions around a point: the signed axis directions plus `2 * dim`
/// random unit vectors, deduplicated.
pub fn probe_directions(dim: usize, seed: &SeedSpec) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(4 * dim);
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        dirs.push(e.clone());
        e[i] = -1.0;
        dirs.push(e);
    }
    let mut rng = seed.rng();
    for _ in 0..2 * dim {
        dirs.push(unit_vector(&mut rng, dim));
    }
    dirs.dedup();
    dirs
}

#[derive(Debug, Clone, Serialize)]
pub struct TvProbeRow {
    pub radius: f64,
    pub sup_tv: f64,
}

/// TV convergence table for a shrinking-radius sweep around `x0`.
#[derive(Debug, Clone, Serialize)]
pub struct TvProbeTable {
    pub rows: Vec<TvProbeRow>,
    pub bins: usize,
    pub n: usize,
    /// Documented Monte-Carlo inflation of binned TV at this bin count and
    /// sample size: 0.4 * sqrt(2 * bins / n).
    pub bias_bound: f64,
    pub note: String,
}

/// Default bin count per dimension: 20 for d <= 2, 8 for d = 3; higher
/// dimensions must configure binning explicitly.
pub fn default_bins(dim: usize) -> Result<usize> {
    match dim {
        0 => Err(Error::config("latent", "zero-dimensional latent space")),
        1 | 2 => Ok(20),
        3 => Ok(8),
        _ => Err(Error::config(
            "bins",
            "latent dimension above 3 requires explicit bin configuration",
        )),
    }
}

/// Estimates the sup of binned TV between the conditional law at probe
/// points and at `x0`, over probe points at each radius. Common binning is
/// fixed from the pooled samples of every law involved.
pub fn tv_limit_probe(
    fact: &Factorization,
    x0: &[f64],
    radii: &[f64],
    n: usize,
    seed: &SeedSpec,
    bins_override: Option<usize>,
) -> Result<TvProbeTable> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("radii", "must be a decreasing positive list"));
    }
    let dim = x0.len();
    let dirs = probe_directions(dim, &seed.split(0));
    for radius in radii {
        for d in &dirs {
            let p = offset(x0, d, *radius);
            if !fact.input_domain.contains(&p) {
                return Err(Error::config(
                    "radii",
                    format!("probe point {p:?} escapes the input domain"),
                ));
            }
        }
    }

    let base = conditional_law(fact, x0, n, &seed.split(1))?;
    let probes: Vec<(usize, crate::dgp::ConditionalLaw)> = radii
        .par_iter()
        .enumerate()
        .flat_map(|(j, radius)| {
            dirs.par_iter().enumerate().map(move |(k, d)| (j, k, radius, d))
        })
        .map(|(j, k, radius, d)| {
            let p = offset(x0, d, *radius);
            let law = conditional_law(fact, &p, n, &seed.split(2 + (j * dirs.len() + k) as u64))?;
            Ok((j, law))
        })
        .collect::<Result<Vec<_>>>()?;

    let binning = pooled_binning(
        &fact.latent,
        std::iter::once(&base).chain(probes.iter().map(|(_, l)| l)),
        bins_override,
    )?;
    let base_binned = bin(&base.samples, &binning)?;

    let mut rows: Vec<TvProbeRow> = radii
        .iter()
        .map(|r| TvProbeRow {
            radius: *r,
            sup_tv: 0.0,
        })
        .collect();
    for (j, law) in &probes {
        let t = tv(&bin(&law.samples, &binning)?, &base_binned)?;
        if t > rows[*j].sup_tv {
            rows[*j].sup_tv = t;
        }
    }

    let bins = binning.bin_count();
    Ok(TvProbeTable {
        rows,
        bins,
        n,
        bias_bound: 0.4 * (2.0 * bins as f64 / n as f64).sqrt(),
        note: "binned TV over a fixed grid is a lower bound on total variation".into(),
    })
}

fn offset(x0: &[f64], dir: &[f64], radius: f64) -> Vec<f64> {
    x0.iter()
        .zip(dir)
        .map(|(a, d)| a + radius * d)
        .collect()
}

/// Common binning across several laws, pooled over their samples.
pub fn pooled_binning<'a>(
    latent: &LatentSpace,
    laws: impl Iterator<Item = &'a crate::dgp::ConditionalLaw>,
    bins_override: Option<usize>,
) -> Result<Binning> {
    match latent {
        LatentSpace::Continuous { dim } => {
            let mut pooled: Vec<&[f64]> = Vec::new();
            let mut stash: Vec<&crate::dgp::ConditionalLaw> = Vec::new();
            for law in laws {
                stash.push(law);
            }
            for law in &stash {
                for s in &law.samples {
                    pooled.push(s.as_continuous().ok_or_else(|| {
                        Error::BinMismatch("discrete sample in continuous latent space".into())
                    })?);
                }
            }
            let bins = match bins_override {
                Some(b) => b,
                None => default_bins(*dim)?,
            };
            Binning::regular_from_samples(&pooled, bins)
        }
        LatentSpace::Discrete => {
            let mut labels = Vec::new();
            for law in laws {
                for s in &law.samples {
                    labels.push(s.as_label().ok_or_else(|| {
                        Error::BinMismatch("continuous sample in discrete latent space".into())
                    })?);
                }
            }
            Binning::labels_from_samples(&labels)
        }
    }
}

/// Jump-detection settings: a gap is flagged when it exceeds both the
/// absolute floor and `sigma` combined standard errors.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct JumpConfig {
    pub threshold: f64,
    pub sigma: f64,
}

impl Default for JumpConfig {
    fn default() -> Self {
        JumpConfig {
            threshold: 0.1,
            sigma: 6.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Jump {
    pub location: f64,
    pub size: f64,
}

/// Continuity evidence for a sampled curve: modulus of continuity over grid
/// pairs and flagged jumps between adjacent grid points.
#[derive(Debug, Clone, Serialize)]
pub struct CurveReport {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// `(delta, sup |f(x) - f(y)| over |x - y| <= delta)`, non-decreasing.
    pub modulus: Vec<(f64, f64)>,
    pub jumps: Vec<Jump>,
    pub config: JumpConfig,
}

/// Scans a sampled curve for jumps and computes its modulus of continuity.
pub fn modulus_and_jumps(points: &[CurvePoint], cfg: &JumpConfig) -> Result<CurveReport> {
    if points.is_empty() {
        return Err(Error::EmptyLaw);
    }
    if points.windows(2).any(|w| w[1].x <= w[0].x) {
        return Err(Error::config("curve", "grid must be strictly sorted"));
    }

    let mut jumps = Vec::new();
    for w in points.windows(2) {
        let gap = (w[1].value - w[0].value).abs();
        let noise_floor = cfg.sigma * (w[0].stderr + w[1].stderr);
        if gap > cfg.threshold.max(noise_floor) {
            jumps.push(Jump {
                location: 0.5 * (w[0].x + w[1].x),
                size: gap,
            });
        }
    }

    // Modulus over all grid pairs, reported at each distinct pair distance.
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            pairs.push((
                points[j].x - points[i].x,
                (points[j].value - points[i].value).abs(),
            ));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut modulus = Vec::new();
    let mut running = 0.0f64;
    for (delta, gap) in pairs {
        running = running.max(gap);
        match modulus.last_mut() {
            Some((d, g)) if *d == delta => *g = running,
            _ => modulus.push((delta, running)),
        }
    }

    Ok(CurveReport {
        grid: points.iter().map(|p| p.x).collect(),
        values: points.iter().map(|p| p.value).collect(),
        modulus,
        jumps,
        config: *cfg,
    })
}

/// A finite union of axis-aligned closed boxes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxSet {
    boxes: Vec<(Vec<f64>, Vec<f64>)>,
}

impl BoxSet {
    pub fn new(boxes: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        for (lo, hi) in &boxes {
            if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| l >= h) {
                return Err(Error::config(
                    "boxes",
                    "each box needs lo < hi componentwise",
                ));
            }
        }
        Ok(BoxSet { boxes })
    }

    pub fn empty() -> Self {
        BoxSet { boxes: Vec::new() }
    }

    pub fn boxes(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.boxes.iter().any(|(lo, hi)| {
            p.iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
        })
    }

    /// Exact Euclidean distance to the union: clamp-and-norm per box,
    /// minimum over boxes. Zero on the set itself.
    pub fn distance(&self, p: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for (lo, hi) in &self.boxes {
            let mut sq = 0.0;
            for ((v, l), h) in p.iter().zip(lo).zip(hi) {
                let excess = if v < l {
                    l - v
                } else if v > h {
                    v - h
                } else {
                    0.0
                };
                sq += excess * excess;
            }
            if sq < best {
                best = sq;
            }
            if best == 0.0 {
                return 0.0;
            }
        }
        best.sqrt()
    }

    /// Exact union volume by coordinate compression. Intended for desk-scale
    /// sets; cost grows with the product of distinct edges per dimension.
    pub fn union_volume(&self) -> f64 {
        if self.boxes.is_empty() {
            return 0.0;
        }
        let d = self.boxes[0].0.len();
        let mut edges: Vec<Vec<f64>> = vec![Vec::new(); d];
        for (lo, hi) in &self.boxes {
            for i in 0..d {
                edges[i].push(lo[i]);
                edges[i].push(hi[i]);
            }
        }
        for e in &mut edges {
            e.sort_by(f64::total_cmp);
            e.dedup();
        }
        let mut total = 0.0;
        let mut cell = vec![0usize; d];
        'cells: loop {
            let mut center = Vec::with_capacity(d);
            let mut vol = 1.0;
            for i in 0..d {
                let a = edges[i][cell[i]];
                let b = edges[i][cell[i] + 1];
                center.push(0.5 * (a + b));
                vol *= b - a;
            }
            if self.contains(&center) {
                total += vol;
            }
            // Advance the multi-index over compressed cells.
            for i in 0..d {
                cell[i] += 1;
                if cell[i] + 1 < edges[i].len() {
                    continue 'cells;
                }
                cell[i] = 0;
            }
            break;
        }
        total
    }
}

/// Fraction of a sampled law's mass strictly outside `j` but within `delta`
/// of it.
pub fn annulus_mass(j: &BoxSet, samples: &[LatentPoint], delta: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyLaw);
    }
    if delta <= 0.0 {
        return Err(Error::config("delta", "must be positive"));
    }
    let mut hits = 0usize;
    for s in samples {
        let p = s
            .as_continuous()
            .ok_or_else(|| Error::BinMismatch("annulus mass needs continuous samples".into()))?;
        let dist = j.distance(p);
        if dist > 0.0 && dist < delta {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Annulus mass of a binned law, with bins represented by their centers.
pub fn annulus_mass_binned(j: &BoxSet, law: &BinnedLaw, delta: f64) -> Result<f64> {
    let (lo, hi, b) = match &law.binning {
        Binning::Regular {
            lo,
            hi,
            bins_per_dim,
        } => (lo, hi, *bins_per_dim),
        Binning::Labels(_) => {
            return Err(Error::BinMismatch(
                "annulus mass needs a continuous binning".into(),
            ))
        }
    };
    if delta <= 0.0 {
        return Err(Error::config("delta", "must be positive"));
    }
    let d = lo.len();
    let mut mass = 0.0;
    for (flat, p) in law.probs.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let mut center = vec![0.0; d];
        let mut rest = flat;
        for i in (0..d).rev() {
            let k = rest % b;
            rest /= b;
            let w = (hi[i] - lo[i]) / b as f64;
            center[i] = lo[i] + (k as f64 + 0.5) * w;
        }
        let dist = j.distance(&center);
        if dist > 0.0 && dist < delta {
            mass += p;
        }
    }
    Ok(mass)
}

/// Controls for the dyadic cover construction.
#[derive(Debug, Clone, Copy)]
pub struct CoverConfig {
    pub max_depth: usize,
    pub votes_per_cell: usize,
    pub max_cells: usize,
}

impl Default for CoverConfig {
    fn default() -> Self {
        CoverConfig {
            max_depth: 12,
            votes_per_cell: 64,
            max_cells: 1_000_000,
        }
    }
}

#[derive(Debug)]
enum CoverNode {
    Inside,
    Outside,
    Split(Vec<CoverNode>),
}

/// Result of a dyadic box-cover construction, including the Monte-Carlo
/// estimate of the symmetric difference against the target set.
#[derive(Debug)]
pub struct BoxCover {
    pub boxes: BoxSet,
    pub sym_diff_estimate: f64,
    pub target_epsilon: f64,
    pub achieved: bool,
    pub depth_limit_hit: bool,
}

/// Approximates a membership-oracle set by a finite union of dyadic boxes,
/// refining cells until the Monte-Carlo vote is unanimous or the depth limit
/// is reached (mixed cells then resolve by majority). The symmetric
/// difference is estimated over caller-provided reference samples uniform on
/// the bounding box.
pub fn box_cover(
    contains: &(dyn Fn(&[f64]) -> bool + Sync),
    bounds: &[(f64, f64)],
    reference: &[Vec<f64>],
    epsilon: f64,
    cfg: &CoverConfig,
    seed: &SeedSpec,
) -> Result<BoxCover> {
    if bounds.is_empty() || bounds.iter().any(|(l, h)| l >= h) {
        return Err(Error::config("bounds", "need a non-degenerate bounding box"));
    }
    if epsilon <= 0.0 {
        return Err(Error::config("epsilon", "must be positive"));
    }
    if reference.is_empty() {
        return Err(Error::config("reference", "need reference samples"));
    }

    let lo: Vec<f64> = bounds.iter().map(|(l, _)| *l).collect();
    let hi: Vec<f64> = bounds.iter().map(|(_, h)| *h).collect();
    let mut cell_counter = 0u64;
    let mut cells_used = 0usize;
    let mut depth_limit_hit = false;
    let root = build_cover(
        contains,
        &lo,
        &hi,
        0,
        cfg,
        seed,
        &mut cell_counter,
        &mut cells_used,
        &mut depth_limit_hit,
    );

    let mut boxes = Vec::new();
    collect_boxes(&root, &lo, &hi, &mut boxes);
    let box_set = BoxSet::new(boxes)?;

    let volume: f64 = bounds.iter().map(|(l, h)| h - l).product();
    let mismatches = reference
        .iter()
        .filter(|p| contains(p) != node_contains(&root, &lo, &hi, p))
        .count();
    let sym_diff_estimate = volume * mismatches as f64 / reference.len() as f64;

    Ok(BoxCover {
        boxes: box_set,
        sym_diff_estimate,
        target_epsilon: epsilon,
        achieved: sym_diff_estimate < epsilon,
        depth_limit_hit,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_cover(
    contains: &(dyn Fn(&[f64]) -> bool + Sync),
    lo: &[f64],
    hi: &[f64],
    depth: usize,
    cfg: &CoverConfig,
    seed: &SeedSpec,
    cell_counter: &mut u64,
    cells_used: &mut usize,
    depth_limit_hit: &mut bool,
) -> CoverNode {
    *cells_used += 1;
    let d = lo.len();
    let my_id = *cell_counter;
    *cell_counter += 1;

    // Vote with the center, every corner, and a deterministic random batch.
    let mut inside = 0usize;
    let mut total = 0usize;
    let center: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let mut tally = |p: &[f64]| {
        total += 1;
        if contains(p) {
            inside += 1;
        }
    };
    tally(&center);
    for corner_bits in 0..(1usize << d) {
        let corner: Vec<f64> = (0..d)
            .map(|i| if corner_bits >> i & 1 == 1 { hi[i] } else { lo[i] })
            .collect();
        tally(&corner);
    }
    let mut rng = seed.split(my_id).rng();
    for _ in 0..cfg.votes_per_cell {
        let p: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(l, h)| {
                use rand::Rng;
                rng.random_range(*l..*h)
            })
            .collect();
        tally(&p);
    }

    if inside == total {
        return CoverNode::Inside;
    }
    if inside == 0 {
        return CoverNode::Outside;
    }
    if depth >= cfg.max_depth || *cells_used >= cfg.max_cells {
        *depth_limit_hit = true;
        return if 2 * inside >= total {
            CoverNode::Inside
        } else {
            CoverNode::Outside
        };
    }

    let mut children = Vec::with_capacity(1 << d);
    for child_bits in 0..(1usize << d) {
        let mut clo = lo.to_vec();
        let mut chi = hi.to_vec();
        for i in 0..d {
            let mid = 0.5 * (lo[i] + hi[i]);
            if child_bits >> i & 1 == 1 {
                clo[i] = mid;
            } else {
                chi[i] = mid;
            }
        }
        children.push(build_cover(
            contains,
            &clo,
            &chi,
            depth + 1,
            cfg,
            seed,
            cell_counter,
            cells_used,
            depth_limit_hit,
        ));
    }
    CoverNode::Split(children)
}

fn collect_boxes(node: &CoverNode, lo: &[f64], hi: &[f64], out: &mut Vec<(Vec<f64>, Vec<f64>)>) {
    match node {
        CoverNode::Inside => out.push((lo.to_vec(), hi.to_vec())),
        CoverNode::Outside => {}
        CoverNode::Split(children) => {
            let d = lo.len();
            for (child_bits, child) in children.iter().enumerate() {
                let mut clo = lo.to_vec();
                let mut chi = hi.to_vec();
                for i in 0..d {
                    let mid = 0.5 * (lo[i] + hi[i]);
                    if child_bits >> i & 1 == 1 {
                        clo[i] = mid;
                    } else {
                        chi[i] = mid;
                    }
                }
                collect_boxes(child, &clo, &chi, out);
            }
        }
    }
}

fn node_contains(node: &CoverNode, lo: &[f64], hi: &[f64], p: &[f64]) -> bool {
    match node {
        CoverNode::Inside => true,
        CoverNode::Outside => false,
        CoverNode::Split(children) => {
            let d = lo.len();
            let mut bits = 0usize;
            let mut clo = lo.to_vec();
            let mut chi = hi.to_vec();
            for i in 0..d {
                let mid = 0.5 * (lo[i] + hi[i]);
                if p[i] >= mid {
                    bits |= 1 << i;
                    clo[i] = mid;
                } else {
                    chi[i] = mid;
                }
            }
            node_contains(&children[bits], &clo, &chi, p)
        }
    }
}

/// Kolmogorov-Smirnov statistic of samples against the uniform law on [0,1].
pub fn ks_uniform(samples: &[f64]) -> f64 {
    ks_statistic(samples, |v| v.clamp(0.0, 1.0))
}

/// Kolmogorov-Smirnov statistic against an arbitrary CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, v) in sorted.iter().enumerate() {
        let f = cdf(*v);
        sup = sup.max((f - i as f64 / n).abs());
        sup = sup.max((f - (i + 1) as f64 / n).abs());
    }
    sup
}

/// Spearman rank correlation with midranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = midranks(a);
    let rb = midranks(b);
    pearson(&ra, &rb)
}

fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|i, j| xs[*i].total_cmp(&xs[*j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

//! Shared oracles for the integration suites. These stay independent of the
//! library paths they check: the frac integral is computed in closed form
//! piece by piece, and the matching oracle enumerates bijections.

use itertools::Itertools;
use regulab::scenarios::{verify_stability, MatchingMarket};

/// Exact value of the integral of frac(c * r) dr over [0, 1]: the integrand
/// is linear between the breakpoints where c * r crosses an integer.
pub fn frac_product_oracle(c: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let mut cuts = vec![0.0, 1.0];
    let mut j = 1.0;
    loop {
        let r = j / c.abs();
        if r >= 1.0 {
            break;
        }
        cuts.push(r);
        j += 1.0;
    }
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let k = (c * mid).floor();
        total += c * (b * b - a * a) / 2.0 - k * (b - a);
    }
    total
}

/// Man-optimal stable matching by brute force: enumerate all bijections,
/// keep the stable ones, give each man his best stable partner.
pub fn brute_force_man_optimal(market: &MatchingMarket) -> Vec<usize> {
    let n = market.n();
    let stable: Vec<Vec<usize>> = (0..n)
        .permutations(n)
        .filter(|assignment| verify_stability(market, assignment))
        .collect();
    assert!(!stable.is_empty(), "a stable matching always exists");
    (0..n)
        .map(|m| {
            *stable
                .iter()
                .map(|a| &a[m])
                .max_by(|w1, w2| {
                    market.men_prefs[m]
                        .score(&market.women_features[**w1])
                        .total_cmp(&market.men_prefs[m].score(&market.women_features[**w2]))
                })
                .unwrap()
        })
        .collect()
}

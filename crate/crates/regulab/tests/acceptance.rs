//! Acceptance suite: one test per shipped guarantee, each at its stated
//! tolerance. Every test prints a `ACCEPTANCE <n> ... PASS` line on success
//! (visible with `--nocapture`); the harness line itself is the pass/fail
//! record.

mod common;

use std::time::Instant;

use common::{brute_force_man_optimal, frac_product_oracle};
use regulab::cli::{
    cmd_certify, cmd_curve, cmd_matching_probe, cmd_probe, cmd_whiten, RunManifest,
    ScenarioConfig, ScenarioKind,
};
use regulab::dgp::{curve, window_consistency_check, GridSpec, LatentPoint, WindowCheckConfig};
use regulab::metrics::{annulus_mass, modulus_and_jumps, tv_limit_probe, BoxSet, JumpConfig};
use regulab::sampling::{draw, DistributionSpec, SeedSpec};
use regulab::scenarios::{
    deferred_acceptance, frac_scenarios, matching_factorization, matching_regularity_probe,
    verify_stability, MarketConfig, PreferenceFamily,
};
use regulab::dgp::DerivedTask;

/// Criterion 1: the additive scenario's curve is flat at one half within
/// 0.01 on 101 points at 1e5 samples per point, with no jump flagged, in
/// under 30 seconds on a single thread.
#[test]
fn acceptance_1_flat_curve_reproduction() {
    let fact = frac_scenarios().l1;
    let task = DerivedTask::frac(0);
    let grid = GridSpec::line(-2.0, 2.0, 101);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let started = Instant::now();
    let points = pool
        .install(|| curve(&fact, &task, &grid, 100_000, &SeedSpec::new(42)))
        .unwrap();
    let elapsed = started.elapsed();

    assert_eq!(points.len(), 101);
    for p in &points {
        assert!(
            (p.value - 0.5).abs() <= 0.01,
            "value {} at x={} strays from 0.5",
            p.value,
            p.x
        );
    }
    let report = modulus_and_jumps(&points, &JumpConfig::default()).unwrap();
    assert!(report.jumps.is_empty(), "unexpected jumps {:?}", report.jumps);
    assert!(
        elapsed.as_secs() < 30,
        "single-threaded sweep took {elapsed:?}"
    );
    println!("ACCEPTANCE 1 (flat curve reproduction): PASS in {elapsed:?}");
}

/// Criterion 2: the multiplicative scenario's curve flags exactly one jump
/// within one grid step of zero with size 1.0 +- 0.05, and hits the exact
/// values 0.75/0.25 at -+0.5 within 0.01.
#[test]
fn acceptance_2_jump_curve_reproduction() {
    let fact = frac_scenarios().l2;
    let task = DerivedTask::frac(0);
    // 161 points put 0 and -+0.5 on the grid; spacing 0.025.
    let grid = GridSpec::line(-2.0, 2.0, 161);
    let points = curve(&fact, &task, &grid, 100_000, &SeedSpec::new(42)).unwrap();
    let report = modulus_and_jumps(&points, &JumpConfig::default()).unwrap();

    assert_eq!(report.jumps.len(), 1, "jumps {:?}", report.jumps);
    let jump = &report.jumps[0];
    let step = 0.025;
    assert!(
        jump.location.abs() <= step + 1e-12,
        "jump at {} not within one grid step of 0",
        jump.location
    );
    assert!(
        (jump.size - 1.0).abs() <= 0.05,
        "jump size {} outside 1.0 +- 0.05",
        jump.size
    );

    let at = |x: f64| -> f64 {
        points
            .iter()
            .find(|p| (p.x - x).abs() < 1e-9)
            .unwrap_or_else(|| panic!("{x} not on grid"))
            .value
    };
    let left_oracle = frac_product_oracle(-0.5);
    let right_oracle = frac_product_oracle(0.5);
    assert!((left_oracle - 0.75).abs() < 1e-12);
    assert!((right_oracle - 0.25).abs() < 1e-12);
    assert!((at(-0.5) - 0.75).abs() <= 0.01, "value at -0.5: {}", at(-0.5));
    assert!((at(0.5) - 0.25).abs() <= 0.01, "value at 0.5: {}", at(0.5));
    println!("ACCEPTANCE 2 (jump curve reproduction): PASS");
}

/// Criterion 3: binned TV probes. The multiplicative scenario at the origin
/// pins at >= 0.9 for every radius (the true value is 1); the additive
/// scenario tracks the closed-form min(|x|, 1) within 0.02 plus the
/// documented bias bound and decreases below 0.05.
#[test]
fn acceptance_3_tv_counterexample_and_convergence() {
    let scenarios = frac_scenarios();
    let radii = [0.5, 0.1, 0.02];

    let l2 = tv_limit_probe(&scenarios.l2, &[0.0], &radii, 100_000, &SeedSpec::new(43), None)
        .unwrap();
    for row in &l2.rows {
        assert!(
            row.sup_tv >= 0.9,
            "radius {}: sup TV {} below 0.9",
            row.radius,
            row.sup_tv
        );
    }

    let l1 = tv_limit_probe(&scenarios.l1, &[0.0], &radii, 100_000, &SeedSpec::new(44), None)
        .unwrap();
    for (row, radius) in l1.rows.iter().zip(radii) {
        let oracle = radius.min(1.0);
        assert!(
            (row.sup_tv - oracle).abs() <= 0.02 + l1.bias_bound,
            "radius {radius}: {} vs oracle {oracle} (bias bound {})",
            row.sup_tv,
            l1.bias_bound
        );
    }
    assert!(l1.rows.windows(2).all(|w| w[1].sup_tv < w[0].sup_tv));
    assert!(l1.rows.last().unwrap().sup_tv < 0.05);
    println!("ACCEPTANCE 3 (TV counterexample and convergence): PASS");
}

/// Criterion 4: whitening round trip within 1e-3 on 1e3 held-out points,
/// whiteness thresholds KS < 0.02 and |rank corr| < 0.05 at 1e5 pairs, and
/// the composition identity within 1e-6 on the fitted support.
#[test]
fn acceptance_4_whitening_round_trip() {
    use regulab::dgp::{InputDomain, LatentSpace, TransformFn};
    use regulab::whitening::{
        fit_chain, verify_whiteness, whitened_factorization, FitConfig, JointGenerator,
        WhitenessThresholds,
    };
    use std::sync::Arc;

    let fit_data = JointGenerator::ShiftedUniform
        .generate(100_000, &SeedSpec::new(45))
        .unwrap();
    let chain = fit_chain(&fit_data, 1, &FitConfig::default()).unwrap();

    // Round trip on 1e3 held-out points within 1e-3.
    let holdout_small = JointGenerator::ShiftedUniform
        .generate(1000, &SeedSpec::new(46))
        .unwrap();
    let mut checked = 0usize;
    for (x, r) in &holdout_small {
        let out = chain.whiten(x, r);
        if out.clamped {
            continue;
        }
        let back = chain.unwhiten(x, &out.c);
        assert!(
            (back[0] - r[0]).abs() <= 1e-3,
            "round trip {} -> {}",
            r[0],
            back[0]
        );
        checked += 1;
    }
    assert!(checked >= 990, "only {checked} points on the fitted support");

    // Whiteness report at 1e5 held-out pairs.
    let holdout = JointGenerator::ShiftedUniform
        .generate(100_000, &SeedSpec::new(47))
        .unwrap();
    let report = verify_whiteness(&chain, &holdout, &WhitenessThresholds::default()).unwrap();
    assert!(report.pass, "whiteness report {report:?}");

    // Composition identity through the whitened factorization.
    let base: Arc<TransformFn> =
        Arc::new(|x: &[f64], r: &[f64]| Ok(LatentPoint::Continuous(vec![x[0] + r[0]])));
    let whitened = whitened_factorization(
        Arc::clone(&base),
        InputDomain::interval(0.0, 1.0),
        LatentSpace::continuous(1),
        chain,
    )
    .unwrap();
    let fresh = JointGenerator::ShiftedUniform
        .generate(10_000, &SeedSpec::new(48))
        .unwrap();
    let mut on_support = 0usize;
    for (x, r) in &fresh {
        let out = whitened.chain.whiten(x, r);
        if out.clamped {
            continue;
        }
        let composed = whitened.factorization.eval(x, &out.c).unwrap();
        let direct = base(x, r).unwrap();
        let (a, b) = (
            composed.as_continuous().unwrap()[0],
            direct.as_continuous().unwrap()[0],
        );
        assert!((a - b).abs() <= 1e-6, "composition {a} vs {b}");
        on_support += 1;
    }
    assert!(on_support >= 9_900, "only {on_support} points on the fitted support");
    println!("ACCEPTANCE 4 (whitening round trip): PASS");
}

/// Criterion 5: conditional-law samples agree with window-filtered joint
/// samples in binned TV below 0.05, for both frac scenarios and the
/// matching market, at the configured sample sizes.
#[test]
fn acceptance_5_window_filter_equivalence() {
    let scenarios = frac_scenarios();
    let frac_cfg = WindowCheckConfig {
        law_n: 100_000,
        joint_n: 100_000,
        min_survivors: 1500,
        bins: Some(5),
    };
    let x_dist = DistributionSpec::uniform(-2.0, 2.0, 1);
    for (name, fact, xs) in [
        ("l1", &scenarios.l1, vec![-1.0, 0.0, 1.0]),
        ("l2", &scenarios.l2, vec![-1.0, 1.0]),
    ] {
        for (i, x) in xs.iter().enumerate() {
            let out = window_consistency_check(
                fact,
                &[*x],
                &x_dist,
                &frac_cfg,
                &SeedSpec::new(49).split(i as u64),
            )
            .unwrap();
            assert!(out.survivors >= frac_cfg.min_survivors);
            assert!(
                out.tv < 0.05,
                "{name} at x={x}: binned TV {} (window {})",
                out.tv,
                out.window
            );
        }
    }

    // Matching: partner-feature law against joint pairs near the probe
    // input. Coarse bins keep the finite-sample bias inside the budget.
    let fact = matching_factorization(&MarketConfig::default()).unwrap();
    let matching_cfg = WindowCheckConfig {
        law_n: 100_000,
        joint_n: 500_000,
        min_survivors: 1000,
        bins: Some(2),
    };
    let out = window_consistency_check(
        &fact,
        &[0.2, -0.3],
        &DistributionSpec::uniform(-1.0, 1.0, 2),
        &matching_cfg,
        &SeedSpec::new(50),
    )
    .unwrap();
    assert!(out.survivors >= matching_cfg.min_survivors);
    assert!(out.tv < 0.05, "matching: binned TV {}", out.tv);
    println!("ACCEPTANCE 5 (window filter equivalence): PASS");
}

/// Criterion 6: annulus mass around the unit square under the uniform law
/// on [0,2]^2 matches the exact clipped area at delta = 0.1 within 0.005
/// and decreases monotonically over the delta sweep.
#[test]
fn acceptance_6_annulus_desk_check() {
    let j = BoxSet::new(vec![(vec![0.0, 0.0], vec![1.0, 1.0])]).unwrap();
    let raw = draw(
        &DistributionSpec::uniform(0.0, 2.0, 2),
        &SeedSpec::new(51),
        100_000,
    )
    .unwrap();
    let samples: Vec<LatentPoint> = raw.into_iter().map(LatentPoint::Continuous).collect();

    let mass = annulus_mass(&j, &samples, 0.1).unwrap();
    let oracle = (2.0 * 0.1 + std::f64::consts::PI * 0.01 / 4.0) / 4.0;
    assert!((oracle - 0.0520).abs() < 1e-4, "oracle arithmetic {oracle}");
    assert!(
        (mass - oracle).abs() <= 0.005,
        "annulus mass {mass} vs oracle {oracle}"
    );

    let sweep: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|d| annulus_mass(&j, &samples, *d).unwrap())
        .collect();
    assert!(
        sweep.windows(2).all(|w| w[1] < w[0]),
        "delta sweep not decreasing: {sweep:?}"
    );
    println!("ACCEPTANCE 6 (annulus desk check): PASS");
}

/// Criterion 7: deferred acceptance equals the brute-force man-optimal
/// matching exactly on 100 random three-agent markets; the blocking-pair
/// check passes on 1e3 markets up to eight agents; the perturbation probe
/// strictly decreases with final entry below 0.05 at 1e3 trials; the
/// discontinuous-preference negative control fails the probe. All in under
/// two minutes.
#[test]
fn acceptance_7_stable_matching() {
    let started = Instant::now();

    // Exact agreement with the enumeration oracle.
    let config = MarketConfig::default();
    let noise_spec = config.noise_spec();
    for s in 0..100u64 {
        let r = &draw(&noise_spec, &SeedSpec::new(52).split(s), 1).unwrap()[0];
        let market = config.build_market(&[0.3, -0.4], r);
        let outcome = deferred_acceptance(&market).unwrap();
        assert_eq!(
            outcome.assignment,
            brute_force_man_optimal(&market),
            "market seed {s}"
        );
    }

    // Stability across sizes, 250 markets each.
    for (i, n) in [2usize, 3, 5, 8].into_iter().enumerate() {
        let config = MarketConfig {
            n_agents: n,
            ..MarketConfig::default()
        };
        let noise_spec = config.noise_spec();
        for s in 0..250u64 {
            let r = &draw(&noise_spec, &SeedSpec::new(53 + i as u64).split(s), 1).unwrap()[0];
            let market = config.build_market(&[0.0, 0.0], r);
            let outcome = deferred_acceptance(&market).unwrap();
            assert!(
                verify_stability(&market, &outcome.assignment),
                "blocking pair at n={n}, seed {s}"
            );
        }
    }

    // Perturbation probe: strictly decreasing, final entry below 0.05.
    let report = matching_regularity_probe(
        &MarketConfig::default(),
        &[0.0, 0.0],
        &[0.5, 0.1, 0.02, 0.004],
        1000,
        0.05,
        &SeedSpec::new(54),
    )
    .unwrap();
    let fracs: Vec<f64> = report.rows.iter().map(|r| r.change_fraction).collect();
    assert!(
        fracs.windows(2).all(|w| w[1] < w[0]),
        "change fractions not strictly decreasing: {fracs:?}"
    );
    assert!(
        *fracs.last().unwrap() < 0.05,
        "final change fraction {} too large",
        fracs.last().unwrap()
    );
    assert!(report.pass);

    // Negative control: a step preference plateaus above the threshold.
    let step_config = MarketConfig {
        preference: PreferenceFamily::StepLinear {
            threshold: 0.0,
            amplitude: 10.0,
        },
        ..MarketConfig::default()
    };
    let control = matching_regularity_probe(
        &step_config,
        &[0.0, 0.0],
        &[0.5, 0.1, 0.02, 0.004],
        1000,
        0.05,
        &SeedSpec::new(55),
    )
    .unwrap();
    assert!(!control.pass, "negative control passed: {control:?}");
    assert!(control
        .rows
        .iter()
        .all(|r| r.change_fraction > control.threshold));

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 120, "matching battery took {elapsed:?}");
    println!("ACCEPTANCE 7 (stable matching): PASS in {elapsed:?}");
}

/// Criterion 8: across the bundled scenarios, every consistent verdict
/// comes with zero flagged jumps over a battery of at least five bounded
/// pathological transformations, while the multiplicative scenario shows
/// both a regularity violation and a flagged jump. Exercised through the
/// certify command so the certificate JSON is covered too.
#[test]
fn acceptance_8_certificate_battery() {
    let read_cert = |dir: &std::path::Path| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(dir.join("certificate.json")).unwrap()).unwrap()
    };
    // Consistent verdicts must also come with small final TV entries.
    let final_tv = |cert: &serde_json::Value| -> f64 {
        cert["tv_table"]["rows"]
            .as_array()
            .unwrap()
            .last()
            .unwrap()["sup_tv"]
            .as_f64()
            .unwrap()
    };

    // Additive scenario: consistent, no jumps in any battery curve.
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::defaults(ScenarioKind::FracL1);
    let status = cmd_certify(&cfg, dir.path()).unwrap();
    assert_eq!(status.exit_code(), 0);
    let cert = read_cert(dir.path());
    assert_eq!(cert["verdict"], "consistent");
    let scans = cert["curve_scans"].as_array().unwrap();
    assert!(scans.len() >= 5, "battery too small: {}", scans.len());
    for scan in scans {
        assert!(
            scan["jumps"].as_array().unwrap().is_empty(),
            "jump flagged for {}",
            scan["task"]
        );
    }
    assert!(final_tv(&cert) < 0.1, "frac_l1 final TV {}", final_tv(&cert));

    // Matching scenario: discrete-regular and jump-free.
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::defaults(ScenarioKind::Matching);
    let status = cmd_certify(&cfg, dir.path()).unwrap();
    assert_eq!(status.exit_code(), 0, "matching certificate failed");
    let cert = read_cert(dir.path());
    assert_eq!(cert["verdict"], "consistent");
    assert_eq!(cert["kind"], "discrete");
    let scans = cert["curve_scans"].as_array().unwrap();
    assert!(scans.len() >= 5);
    for scan in scans {
        assert!(
            scan["jumps"].as_array().unwrap().is_empty(),
            "jump flagged for {}",
            scan["task"]
        );
    }
    assert!(final_tv(&cert) < 0.1, "matching final TV {}", final_tv(&cert));

    // Multiplicative scenario: violation and flagged jump co-occur.
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::defaults(ScenarioKind::FracL2);
    let status = cmd_certify(&cfg, dir.path()).unwrap();
    assert_eq!(status.exit_code(), 3);
    let cert = read_cert(dir.path());
    assert_eq!(cert["verdict"], "violated");
    assert_eq!(cert["regularity"]["density_unbounded"], true);
    let any_jump = cert["curve_scans"]
        .as_array()
        .unwrap()
        .iter()
        .any(|s| !s["jumps"].as_array().unwrap().is_empty());
    assert!(any_jump, "no jump flagged for the violated scenario");
    println!("ACCEPTANCE 8 (certificate battery): PASS");
}

/// Criterion 9: every command re-run with identical config and seed
/// produces byte-identical artifacts, compared through the manifest's
/// content hashes.
#[test]
fn acceptance_9_determinism() {
    fn artifact_hashes(dir: &std::path::Path) -> Vec<(String, String)> {
        let manifest: RunManifest =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
        // Also re-hash the files on disk to confirm the manifest invariant.
        for artifact in &manifest.artifacts {
            let bytes = std::fs::read(dir.join(&artifact.path)).unwrap();
            use sha2::{Digest, Sha256};
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            let hex: String = hasher
                .finalize()
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            assert_eq!(hex, artifact.sha256, "stale hash for {}", artifact.path);
        }
        manifest
            .artifacts
            .into_iter()
            .map(|a| (a.path, a.sha256))
            .collect()
    }

    type Cmd = fn(&ScenarioConfig, &std::path::Path) -> Result<regulab::cli::RunStatus, regulab::cli::CliError>;
    let commands: [(&str, ScenarioKind, Cmd); 5] = [
        ("curve", ScenarioKind::FracL2, cmd_curve as Cmd),
        ("certify", ScenarioKind::FracL1, cmd_certify as Cmd),
        ("probe", ScenarioKind::FracL1, cmd_probe as Cmd),
        ("whiten", ScenarioKind::FracL1, cmd_whiten as Cmd),
        ("matching-probe", ScenarioKind::Matching, cmd_matching_probe as Cmd),
    ];
    for (name, scenario, command) in commands {
        let mut cfg = ScenarioConfig::defaults(scenario);
        cfg.quick = true;
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let status_a = command(&cfg, dir_a.path()).unwrap();
        let status_b = command(&cfg, dir_b.path()).unwrap();
        assert_eq!(status_a, status_b, "{name}: statuses diverged");
        assert_eq!(
            artifact_hashes(dir_a.path()),
            artifact_hashes(dir_b.path()),
            "{name}: artifact hashes diverged"
        );
    }
    println!("ACCEPTANCE 9 (determinism): PASS");
}

//! Golden-file regression: the matching scenario's indicator curve, recorded
//! after the first verified run. Byte equality holds because every stream is
//! seeded and floats are written in shortest round-trip form; Cargo.lock pins
//! the generator stack.

use regulab::cli::{cmd_curve, ScenarioConfig};

#[test]
fn matching_indicator_curve_matches_golden() {
    let toml = r#"
scenario = "matching"
seed = 42

[task]
f = "indicator_ge"
threshold = 0.0
coord = 0

[grid]
lo = -1.0
hi = 1.0
points = 41

[samples]
n = 20000
quick_n = 5000
"#;
    let cfg = ScenarioConfig::from_toml(toml).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_curve(&cfg, dir.path()).unwrap();
    let fresh = std::fs::read(dir.path().join("curve.csv")).unwrap();
    let golden = include_bytes!("golden/matching_ind_ge_curve.csv");
    assert_eq!(
        fresh,
        golden,
        "matching indicator curve diverged from the recorded golden run"
    );
}

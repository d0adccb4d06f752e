//! Batch front door: scenario configs, experiment commands, and
//! reproducible artifact output.
//!
//! Commands read a single TOML config (or fall back to a named scenario's
//! defaults), run the experiment, and write CSV/JSON artifacts plus a run
//! manifest listing every output file with its content hash. Identical
//! config and seed reproduce identical artifact bytes; floats are written in
//! shortest round-trip form.
//!
//! Exit code contract: 0 success/pass, 1 runtime error, 2 config error,
//! 3 certified-fail.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dgp::{
    CurvePoint, DerivedTask, Factorization, GridSpec, InputDomain, LatentPoint, LatentSpace,
};
use crate::error::Error;
use crate::metrics::{modulus_and_jumps, tv_limit_probe, JumpConfig};
use crate::regularity::{
    continuity_certificate, regularity_probe, standard_battery, CertificateConfig,
    RegularityConfig, RegularityKind,
};
use crate::sampling::{DistributionSpec, SeedSpec};
use crate::scenarios::{
    frac_scenarios_on, matching_factorization, matching_regularity_probe, MarketConfig,
    PreferenceFamily,
};
use crate::whitening::{
    fit_chain, verify_whiteness, FitConfig, JointGenerator, WhitenessThresholds,
};

/// Errors with their exit-code class.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: the config is invalid; the message names the field or path.
    Config(String),
    /// Exit 1: the run failed at runtime.
    Runtime(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        // Configuration failures keep their class across the library
        // boundary so the exit code stays honest.
        match e {
            Error::Config { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Pass,
    /// The run completed but the certified property did not hold (exit 3).
    CertifiedFail,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::CertifiedFail => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FracL1,
    FracL2,
    Matching,
    Custom,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FracL1 => "frac_l1",
            ScenarioKind::FracL2 => "frac_l2",
            ScenarioKind::Matching => "matching",
            ScenarioKind::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "frac_l1" => Ok(ScenarioKind::FracL1),
            "frac_l2" => Ok(ScenarioKind::FracL2),
            "matching" => Ok(ScenarioKind::Matching),
            "custom" => Ok(ScenarioKind::Custom),
            other => Err(CliError::Config(format!(
                "scenario: unknown scenario `{other}` (expected frac_l1, frac_l2, matching, custom)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// One of: frac, indicator_ge, indicator_interval, sign_sin, step,
    /// constant.
    pub f: String,
    /// Latent coordinate the task reads.
    pub coord: usize,
    /// indicator_ge cutoff.
    pub threshold: f64,
    /// indicator_interval bounds.
    pub interval: (f64, f64),
    /// sign_sin frequency.
    pub freq: f64,
    /// step interior edges and levels (levels = edges + 1).
    pub edges: Vec<f64>,
    pub levels: Vec<f64>,
    /// constant value.
    pub value: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            f: "frac".into(),
            coord: 0,
            threshold: 0.5,
            interval: (0.25, 0.75),
            freq: 7.0,
            edges: Vec::new(),
            levels: Vec::new(),
            value: 0.5,
        }
    }
}

impl TaskConfig {
    fn build(&self) -> Result<DerivedTask, CliError> {
        match self.f.as_str() {
            "frac" => Ok(DerivedTask::frac(self.coord)),
            "indicator_ge" => Ok(DerivedTask::indicator_ge(self.threshold, self.coord)),
            "indicator_interval" => Ok(DerivedTask::indicator_interval(
                self.interval.0,
                self.interval.1,
                self.coord,
            )),
            "sign_sin" => Ok(DerivedTask::sign_sin(self.freq, self.coord)),
            "step" => DerivedTask::step("step", self.edges.clone(), self.levels.clone(), self.coord)
                .map_err(CliError::from),
            "constant" => Ok(DerivedTask::constant(self.value)),
            other => Err(CliError::Config(format!(
                "task.f: unknown task `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    #[serde(default)]
    pub coord: usize,
    #[serde(default)]
    pub base: Option<Vec<f64>>,
}

impl GridConfig {
    fn build(&self, input_dim: usize) -> Result<GridSpec, CliError> {
        if self.points == 0 {
            return Err(CliError::Config("grid.points: must be positive".into()));
        }
        if self.lo >= self.hi {
            return Err(CliError::Config("grid.lo: requires lo < hi".into()));
        }
        let base = self.base.clone().unwrap_or_else(|| vec![0.0; input_dim]);
        if base.len() != input_dim || self.coord >= input_dim {
            return Err(CliError::Config(
                "grid.base: dimension mismatch with the scenario input".into(),
            ));
        }
        Ok(GridSpec {
            lo: self.lo,
            hi: self.hi,
            points: self.points,
            coord: self.coord,
            base,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Samples per estimate.
    pub n: usize,
    /// Samples per estimate under --quick.
    pub quick_n: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n: 100_000,
            quick_n: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularityTomlConfig {
    pub x0: Option<Vec<f64>>,
    pub radii: Vec<f64>,
    pub tau_grid: Vec<f64>,
    /// Samples per probe cell; defaults to the sample config.
    pub n: Option<usize>,
    pub density_bins: usize,
    pub d_bound: Option<f64>,
    pub threshold: f64,
    pub sigma: f64,
    pub growth_factor: f64,
    /// "discrete" or "continuous"; default follows the latent space.
    pub kind: Option<String>,
}

impl Default for RegularityTomlConfig {
    fn default() -> Self {
        RegularityTomlConfig {
            x0: None,
            radii: vec![0.5, 0.1, 0.02],
            tau_grid: Vec::new(),
            n: None,
            density_bins: 32,
            d_bound: None,
            threshold: 0.05,
            sigma: 3.0,
            growth_factor: 1.5,
            kind: None,
        }
    }
}

impl RegularityTomlConfig {
    fn build(&self, input_dim: usize, n: usize) -> Result<RegularityConfig, CliError> {
        let x0 = self.x0.clone().unwrap_or_else(|| vec![0.0; input_dim]);
        if x0.len() != input_dim {
            return Err(CliError::Config(
                "regularity.x0: dimension mismatch with the scenario input".into(),
            ));
        }
        let kind_override = match self.kind.as_deref() {
            None => None,
            Some("discrete") => Some(RegularityKind::Discrete),
            Some("continuous") => Some(RegularityKind::Continuous),
            Some(other) => {
                return Err(CliError::Config(format!(
                    "regularity.kind: unknown kind `{other}`"
                )))
            }
        };
        let mut cfg = RegularityConfig::new(x0, self.radii.clone(), self.n.unwrap_or(n));
        cfg.tau_grid = self.tau_grid.clone();
        cfg.density_bins = self.density_bins;
        cfg.d_bound = self.d_bound;
        cfg.threshold = self.threshold;
        cfg.sigma = self.sigma;
        cfg.growth_factor = self.growth_factor;
        cfg.kind_override = kind_override;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingTomlConfig {
    pub n_agents: usize,
    pub feature_dim: usize,
    pub feature_lo: f64,
    pub feature_hi: f64,
    pub preference: PreferenceFamily,
    pub focal_man: usize,
    /// Trials for the matching perturbation probe.
    pub trials: usize,
    pub quick_trials: usize,
    pub probe_radii: Vec<f64>,
}

impl Default for MatchingTomlConfig {
    fn default() -> Self {
        MatchingTomlConfig {
            n_agents: 3,
            feature_dim: 2,
            feature_lo: -1.0,
            feature_hi: 1.0,
            preference: PreferenceFamily::Linear,
            focal_man: 0,
            trials: 1000,
            quick_trials: 300,
            probe_radii: vec![0.5, 0.1, 0.02, 0.004],
        }
    }
}

impl MatchingTomlConfig {
    fn market(&self) -> MarketConfig {
        MarketConfig {
            n_agents: self.n_agents,
            feature_dim: self.feature_dim,
            feature_dist: DistributionSpec::uniform(self.feature_lo, self.feature_hi, 1),
            preference: self.preference,
            focal_man: self.focal_man,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Uniform { lo: f64, hi: f64, dim: usize },
    Gaussian { mean: f64, std: f64, dim: usize },
    Categorical { weights: Vec<f64> },
}

impl NoiseConfig {
    fn build(&self) -> DistributionSpec {
        match self {
            NoiseConfig::Uniform { lo, hi, dim } => DistributionSpec::uniform(*lo, *hi, *dim),
            NoiseConfig::Gaussian { mean, std, dim } => {
                DistributionSpec::gaussian(*mean, *std, *dim)
            }
            NoiseConfig::Categorical { weights } => DistributionSpec::categorical(weights.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    /// Named map from the builtin registry: sum, product, noise_only,
    /// input_only, sign_diff.
    pub transform: String,
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    pub noise: NoiseConfig,
}

impl CustomConfig {
    fn build(&self) -> Result<Factorization, CliError> {
        use std::sync::Arc;
        if self.domain_lo.len() != self.domain_hi.len() || self.domain_lo.is_empty() {
            return Err(CliError::Config(
                "custom.domain_lo: inconsistent domain bounds".into(),
            ));
        }
        let domain = InputDomain::Box {
            lo: self.domain_lo.clone(),
            hi: self.domain_hi.clone(),
        };
        let noise = self.noise.build();
        let (latent, transform): (LatentSpace, std::sync::Arc<crate::dgp::TransformFn>) =
            match self.transform.as_str() {
                "sum" => (
                    LatentSpace::continuous(1),
                    Arc::new(|x: &[f64], r: &[f64]| Ok(LatentPoint::Continuous(vec![x[0] + r[0]]))),
                ),
                "product" => (
                    LatentSpace::continuous(1),
                    Arc::new(|x: &[f64], r: &[f64]| Ok(LatentPoint::Continuous(vec![x[0] * r[0]]))),
                ),
                "noise_only" => (
                    LatentSpace::continuous(1),
                    Arc::new(|_x: &[f64], r: &[f64]| Ok(LatentPoint::Continuous(vec![r[0]]))),
                ),
                "input_only" => (
                    LatentSpace::continuous(1),
                    Arc::new(|x: &[f64], _r: &[f64]| Ok(LatentPoint::Continuous(vec![x[0]]))),
                ),
                "sign_diff" => (
                    LatentSpace::Discrete,
                    Arc::new(|x: &[f64], r: &[f64]| {
                        let d = x[0] - r[0];
                        Ok(LatentPoint::Discrete(if d > 0.0 {
                            1
                        } else if d < 0.0 {
                            -1
                        } else {
                            0
                        }))
                    }),
                ),
                other => {
                    return Err(CliError::Config(format!(
                        "custom.transform: unknown transform `{other}`"
                    )))
                }
            };
        Factorization::new(domain, noise, latent, transform).map_err(CliError::from)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhitenTomlConfig {
    /// "generated" or "csv".
    pub source: String,
    /// Generator for source = "generated": independent_uniform,
    /// shifted_uniform, independent_gaussian.
    pub generator: JointGenerator,
    pub csv_path: Option<String>,
    pub csv_has_headers: bool,
    /// Column indices of the input and noise coordinates in the CSV.
    pub x_cols: Vec<usize>,
    pub r_cols: Vec<usize>,
    pub n_fit: usize,
    pub n_holdout: usize,
    pub x_bins: usize,
    pub prefix_bins: usize,
    pub ks_threshold: f64,
    pub corr_threshold: f64,
}

impl Default for WhitenTomlConfig {
    fn default() -> Self {
        WhitenTomlConfig {
            source: "generated".into(),
            generator: JointGenerator::ShiftedUniform,
            csv_path: None,
            csv_has_headers: true,
            x_cols: vec![0],
            r_cols: vec![1],
            n_fit: 100_000,
            n_holdout: 100_000,
            x_bins: 32,
            prefix_bins: 16,
            ks_threshold: 0.02,
            corr_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JumpTomlConfig {
    pub threshold: f64,
    pub sigma: f64,
}

impl Default for JumpTomlConfig {
    fn default() -> Self {
        JumpTomlConfig {
            threshold: 0.1,
            sigma: 6.0,
        }
    }
}

/// The full run configuration, as read from a TOML file. Unknown fields are
/// rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub quick: bool,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub samples: SampleConfig,
    #[serde(default)]
    pub regularity: RegularityTomlConfig,
    #[serde(default)]
    pub matching: MatchingTomlConfig,
    #[serde(default)]
    pub custom: Option<CustomConfig>,
    #[serde(default)]
    pub whiten: WhitenTomlConfig,
    #[serde(default)]
    pub jump: JumpTomlConfig,
    /// Histogram bins per dimension for TV probes; defaults by latent
    /// dimension.
    #[serde(default)]
    pub tv_bins: Option<usize>,
}

fn default_seed() -> u64 {
    42
}

impl ScenarioConfig {
    /// Built-in defaults for a named scenario.
    pub fn defaults(scenario: ScenarioKind) -> Self {
        let mut cfg = ScenarioConfig {
            scenario,
            seed: default_seed(),
            out_dir: None,
            quick: false,
            task: TaskConfig::default(),
            grid: None,
            samples: SampleConfig::default(),
            regularity: RegularityTomlConfig::default(),
            matching: MatchingTomlConfig::default(),
            custom: None,
            whiten: WhitenTomlConfig::default(),
            jump: JumpTomlConfig::default(),
            tv_bins: None,
        };
        match scenario {
            ScenarioKind::FracL1 => {
                cfg.grid = Some(GridConfig {
                    lo: -2.0,
                    hi: 2.0,
                    points: 101,
                    coord: 0,
                    base: None,
                });
            }
            ScenarioKind::FracL2 => {
                // 161 points put 0 and the +-0.5 reference values on the
                // grid (spacing 0.025).
                cfg.grid = Some(GridConfig {
                    lo: -2.0,
                    hi: 2.0,
                    points: 161,
                    coord: 0,
                    base: None,
                });
            }
            ScenarioKind::Matching => {
                cfg.grid = Some(GridConfig {
                    lo: -1.0,
                    hi: 1.0,
                    points: 41,
                    coord: 0,
                    base: None,
                });
                // Partner-feature laws respond slowly to the input, so the
                // probe histograms stay coarse; the matching latent is
                // probed with exact-equality (discrete) semantics.
                cfg.regularity.kind = Some("discrete".into());
                cfg.regularity.n = Some(20_000);
                cfg.tv_bins = Some(4);
                cfg.samples.n = 20_000;
                cfg.samples.quick_n = 5_000;
            }
            ScenarioKind::Custom => {}
        }
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn effective_n(&self) -> usize {
        if self.quick {
            self.samples.quick_n
        } else {
            self.samples.n
        }
    }

    fn effective_trials(&self) -> usize {
        if self.quick {
            self.matching.quick_trials
        } else {
            self.matching.trials
        }
    }

    /// SHA-256 over the resolved config's canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&bytes)
    }
}

/// A scenario instantiated from config: the factorization plus everything
/// the commands need around it.
#[derive(Debug)]
pub struct BuiltScenario {
    pub name: String,
    pub fact: Factorization,
    pub primary: DerivedTask,
    pub battery: Vec<DerivedTask>,
    pub grid: GridSpec,
    pub regularity: RegularityConfig,
    pub tv_bins: Option<usize>,
    pub jump: JumpConfig,
    pub curve_n: usize,
}

pub fn build_scenario(cfg: &ScenarioConfig, seed: &SeedSpec) -> Result<BuiltScenario, CliError> {
    let fact = match cfg.scenario {
        ScenarioKind::FracL1 => frac_scenarios_on(-2.0, 2.0).l1,
        ScenarioKind::FracL2 => frac_scenarios_on(-2.0, 2.0).l2,
        ScenarioKind::Matching => matching_factorization(&cfg.matching.market())?,
        ScenarioKind::Custom => cfg
            .custom
            .as_ref()
            .ok_or_else(|| {
                CliError::Config("custom: section required for scenario = \"custom\"".into())
            })?
            .build()?,
    };
    let input_dim = fact.input_domain.dim();
    let grid = cfg
        .grid
        .clone()
        .unwrap_or(GridConfig {
            lo: -1.0,
            hi: 1.0,
            points: 41,
            coord: 0,
            base: None,
        })
        .build(input_dim)?;
    let n = cfg.effective_n();
    let regularity = cfg.regularity.build(input_dim, n)?;
    let primary = cfg.task.build()?;

    // Battery range: where the latent samples of this scenario live.
    let battery_range = match cfg.scenario {
        ScenarioKind::FracL1 => (-2.0, 3.0),
        ScenarioKind::FracL2 => (-2.0, 2.0),
        ScenarioKind::Matching => (cfg.matching.feature_lo, cfg.matching.feature_hi),
        ScenarioKind::Custom => (grid.lo, grid.hi),
    };
    let battery = standard_battery(battery_range, cfg.task.coord, &seed.split(900))
        .map_err(CliError::from)?;

    Ok(BuiltScenario {
        name: cfg.scenario.name().to_string(),
        fact,
        primary,
        battery,
        grid,
        regularity,
        tv_bins: cfg.tv_bins,
        jump: JumpConfig {
            threshold: cfg.jump.threshold,
            sigma: cfg.jump.sigma,
        },
        curve_n: n,
    })
}

/// One artifact entry of a run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Written next to every command's outputs; re-running with the same config
/// hash and seed reproduces the artifact hashes exactly. Wall-clock timing
/// lives only here, never inside artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ArtifactEntry>,
    pub wall_clock_ms: u128,
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Collects artifacts as they are written and emits the manifest last.
struct ArtifactSink {
    dir: PathBuf,
    artifacts: Vec<ArtifactEntry>,
    started: Instant,
}

impl ArtifactSink {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create out dir {}: {e}", dir.display())))?;
        Ok(ArtifactSink {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            started: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| {
            CliError::Runtime(Error::Io {
                path: path.display().to_string(),
                source: e,
            })
        })?;
        self.artifacts.push(ArtifactEntry {
            path: name.to_string(),
            sha256: hex_digest(bytes),
            bytes: bytes.len(),
        });
        Ok(path)
    }

    fn finish(
        self,
        command: &str,
        scenario: &str,
        config_hash: &str,
        seed: u64,
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            scenario: scenario.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            artifacts: self.artifacts,
            wall_clock_ms: self.started.elapsed().as_millis(),
        };
        let bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| CliError::Runtime(Error::Serialize(e.to_string())))?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, bytes).map_err(|e| {
            CliError::Runtime(Error::Io {
                path: path.display().to_string(),
                source: e,
            })
        })
    }
}

fn curve_csv(points: &[CurvePoint]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "value", "stderr", "n"])
        .map_err(|e| CliError::Runtime(Error::Serialize(e.to_string())))?;
    for p in points {
        w.write_record(&[
            format!("{}", p.x),
            format!("{}", p.value),
            format!("{}", p.stderr),
            format!("{}", p.n),
        ])
        .map_err(|e| CliError::Runtime(Error::Serialize(e.to_string())))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Runtime(Error::Serialize(e.to_string())))
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(Error::Serialize(e.to_string())))
}

/// Plot-ready sidecar for a curve CSV (vega-lite).
fn curve_sidecar(title: &str) -> serde_json::Value {
    serde_json::json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "title": title,
        "data": {"url": "curve.csv"},
        "mark": "line",
        "encoding": {
            "x": {"field": "x", "type": "quantitative"},
            "y": {"field": "value", "type": "quantitative"}
        }
    })
}

/// `curve`: sweep the primary task over the grid, write the CSV, sidecar and
/// summary, and scan for jumps.
pub fn cmd_curve(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunStatus, CliError> {
    let seed = SeedSpec::new(cfg.seed);
    let scenario = build_scenario(cfg, &seed)?;
    let mut sink = ArtifactSink::new(out_dir)?;

    let points = crate::dgp::curve(
        &scenario.fact,
        &scenario.primary,
        &scenario.grid,
        scenario.curve_n,
        &seed.split(0),
    )?;
    let report = modulus_and_jumps(&points, &scenario.jump)?;

    sink.write("curve.csv", &curve_csv(&points)?)?;
    sink.write(
        "curve.vl.json",
        &to_json_pretty(&curve_sidecar(&format!(
            "{} / {}",
            scenario.name, scenario.primary.name
        )))?,
    )?;

    let mut summary = String::new();
    let _ = writeln!(summary, "scenario: {}", scenario.name);
    let _ = writeln!(summary, "task: {}", scenario.primary.name);
    let _ = writeln!(
        summary,
        "grid: {} points on [{}, {}] (coord {})",
        scenario.grid.points, scenario.grid.lo, scenario.grid.hi, scenario.grid.coord
    );
    let _ = writeln!(summary, "samples per point: {}", scenario.curve_n);
    let lo = points.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(summary, "value range: [{lo}, {hi}]");
    if report.jumps.is_empty() {
        let _ = writeln!(summary, "jumps: none");
    } else {
        for j in &report.jumps {
            let _ = writeln!(
                summary,
                "jump: location {} size {} (flagged pair of adjacent rows)",
                j.location, j.size
            );
        }
    }
    sink.write("summary.txt", summary.as_bytes())?;
    print!("{summary}");
    sink.finish("curve", &scenario.name, &cfg.config_hash(), cfg.seed)?;
    Ok(RunStatus::Pass)
}

/// `certify`: run the continuity certificate; exit reflects pass/fail.
pub fn cmd_certify(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunStatus, CliError> {
    let seed = SeedSpec::new(cfg.seed);
    let scenario = build_scenario(cfg, &seed)?;
    let mut sink = ArtifactSink::new(out_dir)?;

    let mut tasks = vec![scenario.primary.clone()];
    tasks.extend(scenario.battery.iter().cloned());
    let cert_cfg = CertificateConfig {
        regularity: scenario.regularity.clone(),
        grid: scenario.grid.clone(),
        curve_n: scenario.curve_n,
        tv_bins: scenario.tv_bins,
        jump: scenario.jump,
    };
    let certificate = continuity_certificate(
        &scenario.fact,
        &tasks,
        &cert_cfg,
        &seed.split(1),
        &scenario.name,
    )?;

    sink.write("certificate.json", &to_json_pretty(&certificate)?)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "scenario: {}", scenario.name);
    let _ = writeln!(summary, "kind: {:?}", certificate.kind);
    let _ = writeln!(summary, "verdict: {:?}", certificate.verdict);
    for reason in &certificate.regularity.reasons {
        let _ = writeln!(summary, "reason: {reason}");
    }
    for scan in &certificate.curve_scans {
        let _ = writeln!(
            summary,
            "task {}: {} jumps, max adjacent gap {:.4}",
            scan.task,
            scan.jumps.len(),
            scan.max_adjacent_gap
        );
    }
    let _ = writeln!(summary, "pass: {}", certificate.pass);
    sink.write("summary.txt", summary.as_bytes())?;
    print!("{summary}");
    sink.finish("certify", &scenario.name, &cfg.config_hash(), cfg.seed)?;
    Ok(if certificate.pass {
        RunStatus::Pass
    } else {
        RunStatus::CertifiedFail
    })
}

fn read_joint_csv(
    path: &Path,
    has_headers: bool,
    x_cols: &[usize],
    r_cols: &[usize],
) -> Result<crate::whitening::JointPairs, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("whiten.csv_path: cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Config(format!("csv row {row_idx}: {e}")))?;
        let parse = |col: usize| -> Result<f64, CliError> {
            let field = record.get(col).ok_or_else(|| {
                CliError::Config(format!("csv row {row_idx}: missing column {col}"))
            })?;
            field.trim().parse::<f64>().map_err(|e| {
                CliError::Config(format!("csv row {row_idx}, column {col}: {e}"))
            })
        };
        let x: Vec<f64> = x_cols.iter().map(|c| parse(*c)).collect::<Result<_, _>>()?;
        let r: Vec<f64> = r_cols.iter().map(|c| parse(*c)).collect::<Result<_, _>>()?;
        out.push((x, r));
    }
    Ok(out)
}

/// `whiten`: fit a conditional CDF chain from joint data (generated or CSV),
/// serialize it, and verify whiteness on held-out data.
pub fn cmd_whiten(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunStatus, CliError> {
    let seed = SeedSpec::new(cfg.seed);
    let w = &cfg.whiten;
    let mut sink = ArtifactSink::new(out_dir)?;

    let (fit_data, holdout) = match w.source.as_str() {
        "generated" => {
            let n_fit = if cfg.quick { w.n_fit / 10 } else { w.n_fit };
            let n_holdout = if cfg.quick { w.n_holdout / 10 } else { w.n_holdout };
            (
                w.generator.generate(n_fit, &seed.split(0))?,
                w.generator.generate(n_holdout, &seed.split(1))?,
            )
        }
        "csv" => {
            let path = w.csv_path.as_ref().ok_or_else(|| {
                CliError::Config("whiten.csv_path: required when source = \"csv\"".into())
            })?;
            if w.x_cols.is_empty() || w.r_cols.is_empty() {
                return Err(CliError::Config(
                    "whiten.x_cols/r_cols: column mapping must be declared".into(),
                ));
            }
            let all = read_joint_csv(Path::new(path), w.csv_has_headers, &w.x_cols, &w.r_cols)?;
            // Held-out verification needs data disjoint from the fit set.
            let split = all.len() / 2;
            let (fit, hold) = all.split_at(split);
            (fit.to_vec(), hold.to_vec())
        }
        other => {
            return Err(CliError::Config(format!(
                "whiten.source: unknown source `{other}`"
            )))
        }
    };

    let k = fit_data
        .first()
        .map(|(_, r)| r.len())
        .ok_or_else(|| CliError::Config("whiten: no joint data".into()))?;
    let chain = fit_chain(
        &fit_data,
        k,
        &FitConfig {
            x_bins: w.x_bins,
            prefix_bins: w.prefix_bins,
        },
    )?;
    let report = verify_whiteness(
        &chain,
        &holdout,
        &WhitenessThresholds {
            ks: w.ks_threshold,
            corr: w.corr_threshold,
        },
    )?;

    let chain_path = out_dir.join("chain.json");
    chain.save(&chain_path)?;
    // Register the chain file in the manifest by re-reading its bytes.
    let chain_bytes = std::fs::read(&chain_path).map_err(|e| {
        CliError::Runtime(Error::Io {
            path: chain_path.display().to_string(),
            source: e,
        })
    })?;
    sink.artifacts.push(ArtifactEntry {
        path: "chain.json".into(),
        sha256: hex_digest(&chain_bytes),
        bytes: chain_bytes.len(),
    });

    sink.write("whiteness.json", &to_json_pretty(&report)?)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "source: {}", w.source);
    let _ = writeln!(summary, "fit pairs: {}", fit_data.len());
    let _ = writeln!(summary, "holdout pairs: {}", report.n);
    let _ = writeln!(summary, "ks per component: {:?}", report.ks_per_component);
    let _ = writeln!(summary, "max |rank corr|: {}", report.max_abs_corr);
    let _ = writeln!(summary, "clamped fraction: {}", report.clamped_fraction);
    let _ = writeln!(summary, "pass: {}", report.pass);
    sink.write("summary.txt", summary.as_bytes())?;
    print!("{summary}");
    sink.finish("whiten", cfg.scenario.name(), &cfg.config_hash(), cfg.seed)?;
    Ok(if report.pass {
        RunStatus::Pass
    } else {
        RunStatus::CertifiedFail
    })
}

/// `probe`: TV convergence table plus the regularity probe, one CSV per
/// table.
pub fn cmd_probe(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunStatus, CliError> {
    let seed = SeedSpec::new(cfg.seed);
    let scenario = build_scenario(cfg, &seed)?;
    let mut sink = ArtifactSink::new(out_dir)?;

    let tv_table = tv_limit_probe(
        &scenario.fact,
        &scenario.regularity.x0,
        &scenario.regularity.radii,
        scenario.regularity.n,
        &seed.split(2),
        scenario.tv_bins,
    )?;
    let mut tv_csv = String::from("radius,sup_tv,bins,n,bias_bound\n");
    for row in &tv_table.rows {
        let _ = writeln!(
            tv_csv,
            "{},{},{},{},{}",
            row.radius, row.sup_tv, tv_table.bins, tv_table.n, tv_table.bias_bound
        );
    }
    sink.write("tv_probe.csv", tv_csv.as_bytes())?;

    let report = regularity_probe(&scenario.fact, &scenario.regularity, &seed.split(3))?;
    match report.kind {
        RegularityKind::Discrete => {
            let mut csv = String::from("radius,max_mismatch,stderr\n");
            for row in &report.mismatch_rows {
                let _ = writeln!(csv, "{},{},{}", row.radius, row.max_mismatch, row.stderr);
            }
            sink.write("mismatch.csv", csv.as_bytes())?;
        }
        RegularityKind::Continuous => {
            let mut csv = String::from("radius,tau,max_fraction,stderr\n");
            for row in &report.exceedance_rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    row.radius, row.tau, row.max_fraction, row.stderr
                );
            }
            sink.write("exceedance.csv", csv.as_bytes())?;
            let mut csv = String::from("radius,max_density,growth_ratios,collapsed\n");
            for row in &report.density_rows {
                let growth = row
                    .growth_ratios
                    .iter()
                    .map(|g| format!("{g}"))
                    .collect::<Vec<_>>()
                    .join(";");
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    row.radius, row.max_density, growth, row.collapsed
                );
            }
            sink.write("density.csv", csv.as_bytes())?;
        }
    }
    sink.write("probe_summary.json", &to_json_pretty(&report)?)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "scenario: {}", scenario.name);
    let _ = writeln!(summary, "verdict: {:?}", report.verdict);
    let _ = writeln!(summary, "note: {}", tv_table.note);
    sink.write("summary.txt", summary.as_bytes())?;
    print!("{summary}");
    sink.finish("probe", &scenario.name, &cfg.config_hash(), cfg.seed)?;
    Ok(RunStatus::Pass)
}

/// `matching-probe`: perturbation-stability table for the matching market;
/// exit reflects the probe verdict.
pub fn cmd_matching_probe(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunStatus, CliError> {
    if cfg.scenario != ScenarioKind::Matching {
        return Err(CliError::Config(
            "scenario: matching-probe requires scenario = \"matching\"".into(),
        ));
    }
    let seed = SeedSpec::new(cfg.seed);
    let mut sink = ArtifactSink::new(out_dir)?;
    let m = &cfg.matching;
    let x0 = cfg
        .regularity
        .x0
        .clone()
        .unwrap_or_else(|| vec![0.0; m.feature_dim]);

    let report = matching_regularity_probe(
        &m.market(),
        &x0,
        &m.probe_radii,
        cfg.effective_trials(),
        cfg.regularity.threshold,
        &seed.split(4),
    )?;

    let mut csv = String::from("radius,change_fraction,trials\n");
    for row in &report.rows {
        let _ = writeln!(csv, "{},{},{}", row.radius, row.change_fraction, report.trials);
    }
    sink.write("matching_probe.csv", csv.as_bytes())?;
    sink.write("matching_probe.json", &to_json_pretty(&report)?)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "trials: {}", report.trials);
    let _ = writeln!(summary, "ties resampled: {}", report.ties_resampled);
    for row in &report.rows {
        let _ = writeln!(
            summary,
            "radius {}: change fraction {}",
            row.radius, row.change_fraction
        );
    }
    let _ = writeln!(summary, "pass: {}", report.pass);
    sink.write("summary.txt", summary.as_bytes())?;
    print!("{summary}");
    sink.finish("matching-probe", "matching", &cfg.config_hash(), cfg.seed)?;
    Ok(if report.pass {
        RunStatus::Pass
    } else {
        RunStatus::CertifiedFail
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ScenarioConfig::from_toml("scenario = \"frac_l1\"\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn defaults_parse_and_hash_deterministically() {
        let cfg = ScenarioConfig::defaults(ScenarioKind::FracL1);
        assert_eq!(cfg.config_hash(), cfg.config_hash());
        let other = ScenarioConfig::defaults(ScenarioKind::FracL2);
        assert_ne!(cfg.config_hash(), other.config_hash());
    }

    #[test]
    fn toml_round_trip_preserves_scenario() {
        let text = "scenario = \"matching\"\nseed = 7\n\n[matching]\nn_agents = 4\n";
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::Matching);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.matching.n_agents, 4);
        // Unset fields fall back to defaults.
        assert_eq!(cfg.matching.feature_dim, 2);
    }

    #[test]
    fn custom_scenario_requires_custom_section() {
        let cfg = ScenarioConfig::defaults(ScenarioKind::Custom);
        let err = build_scenario(&cfg, &SeedSpec::new(1)).unwrap_err();
        assert!(err.to_string().contains("custom"));
    }

    #[test]
    fn curve_command_writes_deterministic_artifacts() {
        let mut cfg = ScenarioConfig::defaults(ScenarioKind::FracL1);
        cfg.quick = true;
        cfg.samples.quick_n = 2000;
        cfg.grid.as_mut().unwrap().points = 11;

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        cmd_curve(&cfg, dir_a.path()).unwrap();
        cmd_curve(&cfg, dir_b.path()).unwrap();
        let a = std::fs::read(dir_a.path().join("curve.csv")).unwrap();
        let b = std::fs::read(dir_b.path().join("curve.csv")).unwrap();
        assert_eq!(a, b);

        let manifest: RunManifest = serde_json::from_slice(
            &std::fs::read(dir_a.path().join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.command, "curve");
        // Every artifact listed exists and matches its recorded hash.
        for artifact in &manifest.artifacts {
            let bytes = std::fs::read(dir_a.path().join(&artifact.path)).unwrap();
            assert_eq!(hex_digest(&bytes), artifact.sha256);
        }
    }
}

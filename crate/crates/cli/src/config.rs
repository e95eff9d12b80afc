//! Run configuration: a strict JSON document plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swarmloc::clustering::ClusteringConfig;
use swarmloc::evaluation::{IsacScene, Method, MethodSettings, SweepSpec};
use swarmloc::localization::CompletionConfig;
use swarmloc::otfs::OtfsConfig;
use swarmloc::pipeline::PipelineConfig;
use swarmloc::swarm::{MeasurementConfig, MIN_SWARM_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    Locate,
    SweepRetention,
    SweepSize,
    SweepIsac,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Locate => "locate",
            Scenario::SweepRetention => "sweep-retention",
            Scenario::SweepSize => "sweep-size",
            Scenario::SweepIsac => "sweep-isac",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwarmParams {
    pub size: usize,
    pub bounds: [f64; 3],
}

impl Default for SwarmParams {
    fn default() -> Self {
        Self { size: 50, bounds: [1000.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineParams {
    /// Cluster count of proposed-fix.
    pub k_fixed: usize,
    /// MDS-MAP(P) patch radius.
    pub patch_hops: usize,
}

impl Default for BaselineParams {
    fn default() -> Self {
        let d = MethodSettings::default();
        Self { k_fixed: d.k_fixed, patch_hops: d.patch_hops }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepParams {
    pub retention_ratios: Vec<f64>,
    pub swarm_sizes: Vec<usize>,
    /// Retention ratios of the size sweep, one series each.
    pub size_ratios: Vec<f64>,
    pub power_ratios_db: Vec<f64>,
    pub isac_swarm_size: usize,
    pub isac_bounds: [f64; 3],
}

impl Default for SweepParams {
    fn default() -> Self {
        let scene = IsacScene::default();
        Self {
            retention_ratios: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            swarm_sizes: vec![20, 50, 80],
            size_ratios: vec![0.8],
            power_ratios_db: (0..=10).map(|i| -20.0 + 2.0 * i as f64).collect(),
            isac_swarm_size: scene.swarm_size,
            isac_bounds: scene.bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub trials: usize,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    pub swarm: SwarmParams,
    pub measurement: MeasurementConfig,
    pub clustering: ClusteringConfig,
    pub completion: CompletionConfig,
    /// See `PipelineConfig::determinacy_margin`.
    pub determinacy_margin: f64,
    pub otfs: OtfsConfig,
    pub baselines: BaselineParams,
    pub sweep: SweepParams,
    /// Fill the runtime column. Off by default: timings differ between runs.
    pub record_runtime: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            seed: 0,
            trials: 20,
            output_dir: PathBuf::from("results"),
            methods: Method::ALL.to_vec(),
            swarm: SwarmParams::default(),
            measurement: MeasurementConfig::default(),
            clustering: ClusteringConfig::default(),
            completion: CompletionConfig::default(),
            determinacy_margin: PipelineConfig::default().determinacy_margin,
            otfs: OtfsConfig::default(),
            baselines: BaselineParams::default(),
            sweep: SweepParams::default(),
            record_runtime: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// Unknown key or type mismatch; `path` is the dotted key path.
    #[error("config error at `{path}`: {message}")]
    Syntax { path: String, message: String },
    #[error(transparent)]
    Invalid(swarmloc::Error),
}

/// Strict parse: unknown keys and type mismatches fail with the key path.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Syntax { path, message: e.into_inner().to_string() }
    })?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub methods: Option<Vec<Method>>,
    pub retention: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.scenario {
            cfg.scenario = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.clone();
        }
        if let Some(r) = self.retention {
            cfg.measurement.retention_ratio = r;
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(swarmloc::Error::Config { field: field.into(), reason: reason.into() })
}

fn check_bounds(field: &str, b: [f64; 3]) -> Result<(), ConfigError> {
    if b.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(())
    } else {
        Err(invalid(field, "every bound must be finite and > 0"))
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            clustering: self.clustering,
            completion: self.completion,
            determinacy_margin: self.determinacy_margin,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(invalid(&format!("methods[{i}]"), format!("`{m}` is listed twice")));
            }
        }
        if self.swarm.size < MIN_SWARM_SIZE {
            return Err(invalid("swarm.size", format!("must be >= {MIN_SWARM_SIZE}")));
        }
        check_bounds("swarm.bounds", self.swarm.bounds)?;
        self.measurement.validate().map_err(ConfigError::Invalid)?;
        self.pipeline().validate().map_err(ConfigError::Invalid)?;
        self.otfs.validate().map_err(ConfigError::Invalid)?;
        if self.baselines.k_fixed == 0 {
            return Err(invalid("baselines.k_fixed", "must be >= 1"));
        }
        if self.baselines.patch_hops == 0 {
            return Err(invalid("baselines.patch_hops", "must be >= 1"));
        }
        for (name, list) in [("sweep.retention_ratios", &self.sweep.retention_ratios), ("sweep.size_ratios", &self.sweep.size_ratios)] {
            if let Some(i) = list.iter().position(|r| !(0.0..=1.0).contains(r)) {
                return Err(invalid(&format!("{name}[{i}]"), format!("{} is outside [0, 1]", list[i])));
            }
        }
        if let Some(i) = self.sweep.swarm_sizes.iter().position(|&s| s < MIN_SWARM_SIZE) {
            return Err(invalid(&format!("sweep.swarm_sizes[{i}]"), format!("must be >= {MIN_SWARM_SIZE}")));
        }
        if let Some(i) = self.sweep.power_ratios_db.iter().position(|p| !p.is_finite()) {
            return Err(invalid(&format!("sweep.power_ratios_db[{i}]"), "must be finite"));
        }
        if self.sweep.isac_swarm_size < MIN_SWARM_SIZE {
            return Err(invalid("sweep.isac_swarm_size", format!("must be >= {MIN_SWARM_SIZE}")));
        }
        check_bounds("sweep.isac_bounds", self.sweep.isac_bounds)
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            methods: self.methods.clone(),
            settings: MethodSettings {
                pipeline: self.pipeline(),
                k_fixed: self.baselines.k_fixed,
                patch_hops: self.baselines.patch_hops,
            },
            swarm_size: self.swarm.size,
            bounds: self.swarm.bounds,
            measurement: self.measurement,
            trials: self.trials,
            base_seed: self.seed,
            record_runtime: self.record_runtime,
        }
    }

    pub fn isac_scene(&self) -> IsacScene {
        IsacScene { swarm_size: self.sweep.isac_swarm_size, bounds: self.sweep.isac_bounds }
    }
}

/// File (if any), then overrides, then validation.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.swarm.size, 50);
        assert_eq!(cfg.swarm.bounds, [1000.0; 3]);
        assert_eq!((cfg.otfs.m, cfg.otfs.n), (32, 32));
        assert_eq!(cfg.otfs.delta_f_hz, 552.3e3);
        assert_eq!(cfg.otfs.carrier_hz, 5.1e9);
        assert_eq!(cfg.otfs.pilot_snr_db, 25.0);
        assert_eq!(cfg.clustering.min_size, 4);
        assert_eq!(cfg.baselines.k_fixed, 6);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_reports_its_path() {
        match parse_config_str(r#"{"swarm": {"size": 10, "colour": 1}}"#) {
            Err(ConfigError::Syntax { path, message }) => {
                assert_eq!(path, "swarm.colour");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_mismatch_reports_its_path() {
        match parse_config_str(r#"{"measurement": {"retention_ratio": "high"}}"#) {
            Err(ConfigError::Syntax { path, .. }) => assert_eq!(path, "measurement.retention_ratio"),
            other => panic!("{other:?}"),
        }
        match parse_config_str(r#"{"methods": ["proposed", "magic"]}"#) {
            Err(ConfigError::Syntax { path, .. }) => assert_eq!(path, "methods[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constraint_violation_names_the_field() {
        let cfg = parse_config_str(r#"{"measurement": {"retention_ratio": 1.5}}"#).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("measurement.retention_ratio"), "{err}");
        let cfg = parse_config_str(r#"{"sweep": {"size_ratios": [0.5, -0.1]}}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("sweep.size_ratios[1]"));
        let cfg = parse_config_str(r#"{"methods": ["mds-map", "mds-map"]}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("methods[1]"));
    }

    #[test]
    fn flags_win_over_file() {
        let mut cfg = parse_config_str(r#"{"measurement": {"retention_ratio": 0.9}, "seed": 4}"#).unwrap();
        Overrides { retention: Some(0.7), trials: Some(3), ..Default::default() }.apply(&mut cfg);
        assert_eq!(cfg.measurement.retention_ratio, 0.7);
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn echo_parses_back() {
        let cfg = RunConfig { scenario: Scenario::SweepIsac, seed: 9, ..Default::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), cfg);
    }

    proptest::proptest! {
        #[test]
        fn valid_configs_survive_their_echo(
            seed in proptest::prelude::any::<u64>(),
            trials in 1usize..100,
            ratio in 0.0f64..=1.0,
            size in 4usize..200,
            methods in proptest::sample::subsequence(Method::ALL.to_vec(), 1..=4),
        ) {
            let cfg = RunConfig {
                seed,
                trials,
                methods,
                swarm: SwarmParams { size, ..Default::default() },
                measurement: MeasurementConfig { retention_ratio: ratio, ..Default::default() },
                ..Default::default()
            };
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            proptest::prop_assert_eq!(parse_config_str(&text).unwrap(), cfg);
        }

        #[test]
        fn flags_always_win(seed in proptest::prelude::any::<u64>(), file_seed in proptest::prelude::any::<u64>(), trials in 1usize..50) {
            let mut cfg = parse_config_str(&format!(r#"{{"seed": {file_seed}, "trials": 7}}"#)).unwrap();
            Overrides { seed: Some(seed), trials: Some(trials), ..Default::default() }.apply(&mut cfg);
            proptest::prop_assert_eq!((cfg.seed, cfg.trials), (seed, trials));
        }
    }
}

//! Experiment runner behind the `swarmloc` binary.

pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use swarmloc::evaluation::{sweep_isac, sweep_retention, sweep_swarm_size, Method, SweepResult};

use config::{parse_config, Overrides, RunConfig, Scenario};
use output::{emit_csv, line_chart, manifest_json, write_atomic, Metric};

#[derive(Debug, Parser)]
#[command(name = "swarmloc", version, about = "Relative localization experiments for agent swarms")]
pub struct Args {
    /// What to run; defaults to the config's `scenario`, then `locate`.
    #[arg(value_enum)]
    pub scenario: Option<Scenario>,
    /// JSON configuration; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated: proposed, proposed-fix, mds-map, mds-map-p.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Retention ratio of the `locate` scenario.
    #[arg(long)]
    pub retention: Option<f64>,
}

impl Args {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            scenario: self.scenario,
            seed: self.seed,
            trials: self.trials,
            output_dir: self.out.clone(),
            methods: self.methods.clone(),
            retention: self.retention,
        }
    }
}

pub fn load(args: &Args) -> Result<RunConfig> {
    Ok(parse_config(args.config.as_deref(), &args.overrides())?)
}

/// Runs the configured scenario in memory.
pub fn execute(cfg: &RunConfig) -> Result<SweepResult> {
    let spec = cfg.sweep_spec();
    let result = match cfg.scenario {
        Scenario::Locate => sweep_retention(&spec, &[cfg.measurement.retention_ratio])?,
        Scenario::SweepRetention => sweep_retention(&spec, &cfg.sweep.retention_ratios)?,
        Scenario::SweepSize => sweep_swarm_size(&spec, &cfg.sweep.swarm_sizes, &cfg.sweep.size_ratios)?,
        Scenario::SweepIsac => sweep_isac(&spec, cfg.isac_scene(), &cfg.sweep.power_ratios_db, &cfg.otfs)?,
    };
    Ok(result)
}

fn x_label(s: Scenario) -> &'static str {
    match s {
        Scenario::Locate | Scenario::SweepRetention => "retention ratio",
        Scenario::SweepSize => "swarm size",
        Scenario::SweepIsac => "data-to-pilot power (dB)",
    }
}

/// Runs the scenario and writes `results.csv`, `plots/*.svg` and `manifest.json`.
/// Nothing is written unless the whole run succeeded.
pub fn run(cfg: &RunConfig) -> Result<SweepResult> {
    let result = execute(cfg)?;
    let out = &cfg.output_dir;
    let plots = out.join("plots");
    std::fs::create_dir_all(&plots).with_context(|| format!("cannot create {}", plots.display()))?;

    let mut files = vec!["results.csv".to_string()];
    let mut charts = Vec::new();
    for (metric, name) in [(Metric::Rmse, "rmse.svg"), (Metric::Ber, "ber.svg")] {
        if let Some(svg) = line_chart(&result, metric, x_label(cfg.scenario)) {
            files.push(format!("plots/{name}"));
            charts.push((plots.join(name), svg));
        }
    }
    files.push("manifest.json".into());
    emit_csv(&result, &out.join("results.csv"))?;
    for (path, svg) in charts {
        write_atomic(&path, svg.as_bytes())?;
    }
    write_atomic(&out.join("manifest.json"), manifest_json(cfg, &result, &files)?.as_bytes())?;
    Ok(result)
}

/// Caps rayon's pool from `SWARMLOC_THREADS`; results do not depend on it.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SWARMLOC_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("SWARMLOC_THREADS must be a positive integer, got {v:?}"))?;
        anyhow::ensure!(n > 0, "SWARMLOC_THREADS must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    Ok(())
}

//! Experiment runner: configs in, `results.csv`, `ratefit.csv` and
//! `manifest.json` out.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod ratefit;
pub mod scenarios;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lclt_core::rng::RNG_ALGORITHM;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use scenarios::{run_scenario, RunOutput};

use output::{write_fits, write_manifest, write_results, Manifest, MANIFEST_SCHEMA_VERSION, SEED_DERIVATION};

pub const DEFAULT_OUTPUT_DIR: &str = "lclt-out";

/// Reads a TOML config, or the config echoed inside a previous `manifest.json`.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("cannot parse manifest: {e}")))?;
        let config = value.get("config").cloned().ok_or_else(|| CliError::Config("manifest has no config".into()))?;
        return serde_json::from_value(config).map_err(|e| CliError::Config(format!("bad config in manifest: {e}")));
    }
    ExperimentConfig::load(path)
}

/// Paths written by [`run_to_dir`].
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub results: PathBuf,
    pub ratefit: Option<PathBuf>,
    pub manifest: PathBuf,
    pub charts: Vec<PathBuf>,
}

/// Runs `cfg` and writes its artifacts into `dir` (created if missing).
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, svg: bool) -> Result<(RunOutput, Artifacts), CliError> {
    let start = Instant::now();
    let out = run_scenario(cfg)?;
    std::fs::create_dir_all(dir)?;
    let results = dir.join("results.csv");
    write_results(&out.rows, BufWriter::new(File::create(&results)?))?;
    let mut outputs = vec!["results.csv".to_string()];
    let ratefit = if out.fits.is_empty() {
        None
    } else {
        let p = dir.join("ratefit.csv");
        write_fits(&out.fits, BufWriter::new(File::create(&p)?))?;
        outputs.push("ratefit.csv".into());
        Some(p)
    };
    let mut charts = Vec::new();
    if svg {
        let mut metrics: Vec<&str> = out.fits.iter().map(|f| f.metric.as_str()).filter(|m| !m.is_empty()).collect();
        metrics.dedup();
        for metric in metrics {
            let mut series: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for r in out.rows.iter().filter(|r| r.metric == metric) {
                if let Some(n) = r.n {
                    series.entry(r.d).or_default().push((n as f64, r.value));
                }
            }
            let series: Vec<_> = series.into_iter().collect();
            if let Some(text) = output::svg_chart(metric, &series) {
                let name = format!("{metric}.svg");
                std::fs::write(dir.join(&name), text)?;
                charts.push(dir.join(&name));
                outputs.push(name);
            }
        }
    }
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        scenario: cfg.scenario.name(),
        config: cfg.clone(),
        rng_algorithm: RNG_ALGORITHM,
        seed_derivation: SEED_DERIVATION,
        threads: rayon::current_num_threads(),
        points: out.points.clone(),
        warnings: out.warnings.clone(),
        outputs,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let manifest_path = dir.join("manifest.json");
    write_manifest(&manifest, &manifest_path)?;
    Ok((out, Artifacts { dir: dir.to_path_buf(), results, ratefit, manifest: manifest_path, charts }))
}

//! Experiment configuration: one scenario per TOML file.

use std::path::{Path, PathBuf};

use lclt_core::chain::{ChainConfig, StartKind};
use lclt_core::potential::{PotentialConfig, PotentialSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    LinearExactRate,
    LinearMcRate,
    NonlinearRate,
    MomentGrowth,
    PairScaling,
    DecompositionCheck,
    JacobiContraction,
    SigmaConvergence,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::LinearExactRate => "linear_exact_rate",
            Scenario::LinearMcRate => "linear_mc_rate",
            Scenario::NonlinearRate => "nonlinear_rate",
            Scenario::MomentGrowth => "moment_growth",
            Scenario::PairScaling => "pair_scaling",
            Scenario::DecompositionCheck => "decomposition_check",
            Scenario::JacobiContraction => "jacobi_contraction",
            Scenario::SigmaConvergence => "sigma_convergence",
        }
    }

    /// Whether grid points carry a chain length and step size.
    fn needs_chain_grid(self) -> bool {
        !matches!(self, Scenario::JacobiContraction)
    }

    fn needs_quadratic(self) -> bool {
        matches!(self, Scenario::LinearExactRate | Scenario::LinearMcRate)
    }

    /// Whether grid points run an LMC chain at step `eta`.
    fn runs_chain(self) -> bool {
        !matches!(self, Scenario::LinearExactRate | Scenario::JacobiContraction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    /// Exponent of the schedule `n = ⌊η^{-p}⌋`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_list: Option<Vec<usize>>,
}

/// Scenario knobs; each scenario reads the ones it needs and ignores the rest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<StartKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    /// Pairs drawn per base run (`pair_scaling`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_per_run: Option<usize>,
    /// Base runs used for the `Ξ` estimators (`pair_scaling`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_runs: Option<usize>,
    /// Seeds for the γ-vs-γ noise floor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor_seeds: Option<usize>,
    /// Random directions for sliced transport beyond the exact cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projections: Option<usize>,
    /// Use one reference Gaussian cloud for every grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub common_reference: Option<bool>,
    /// Build every chain's innovations from one fine Brownian path shared across `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupled_innovations: Option<bool>,
    /// Flow horizon and step (`jacobi_contraction`, `sigma_convergence`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_step: Option<f64>,
    /// Trajectory paths per gradient estimate (`sigma_convergence`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    /// Evaluation points for the trajectory cross-check (`sigma_convergence`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_points: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub potential: PotentialConfig,
    pub grid: Grid,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: Params,
}

/// One expanded grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub d: usize,
    /// `0` for scenarios without a chain grid.
    pub n: usize,
    pub eta: f64,
    pub p: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("cannot parse config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Dimensions named by the grid, or the potential's own.
    pub fn dims(&self) -> Result<Vec<usize>, CliError> {
        match (&self.grid.d_list, self.potential.native_dim()) {
            (Some(list), _) => Ok(list.clone()),
            (None, Some(d)) => Ok(vec![d]),
            (None, None) => Err(CliError::Config("grid.d_list is required for this potential".into())),
        }
    }

    /// `(n, η)` pairs of the schedule, sorted by `n` then `η`.
    fn chain_points(&self) -> Result<Vec<(usize, f64)>, CliError> {
        let g = &self.grid;
        let mut pts: Vec<(usize, f64)> = match (g.p, &g.eta_list, &g.n_list) {
            (Some(p), Some(_), Some(_)) => {
                return Err(CliError::Config(format!("grid with p = {p} takes eta_list or n_list, not both")))
            }
            (Some(p), None, Some(ns)) => ns.iter().map(|&n| (n, (n as f64).powf(-1.0 / p))).collect(),
            (Some(p), Some(etas), None) => etas.iter().map(|&e| ((e.powf(-p)).floor() as usize, e)).collect(),
            (None, Some(etas), Some(ns)) => ns.iter().flat_map(|&n| etas.iter().map(move |&e| (n, e))).collect(),
            (Some(_), None, None) | (None, None, None) => {
                return Err(CliError::Config("grid is empty: give eta_list or n_list".into()))
            }
            (None, _, _) => {
                return Err(CliError::Config("grid needs p with one list, or both eta_list and n_list".into()))
            }
        };
        pts.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Ok(pts)
    }

    /// Grid points in lexicographic `(d, n, η)` order.
    pub fn expand(&self) -> Result<Vec<GridPoint>, CliError> {
        let mut dims = self.dims()?;
        dims.sort_unstable();
        dims.dedup();
        let chain = if self.scenario.needs_chain_grid() { Some(self.chain_points()?) } else { None };
        let mut out = Vec::new();
        for &d in &dims {
            match &chain {
                Some(pts) => {
                    for &(n, eta) in pts {
                        out.push(GridPoint { d, n, eta, p: self.grid.p });
                    }
                }
                None => out.push(GridPoint { d, n: 0, eta: 0.0, p: None }),
            }
        }
        if out.is_empty() {
            return Err(CliError::Config("grid is empty".into()));
        }
        Ok(out)
    }

    pub fn potential_for(&self, d: usize) -> Result<PotentialSpec, CliError> {
        self.potential.build(Some(d)).map_err(|e| CliError::Config(format!("potential for d = {d}: {e}")))
    }

    pub fn start_kind(&self, spec: &PotentialSpec) -> StartKind {
        self.params.start.unwrap_or(if spec.is_quadratic() { StartKind::GaussianExact } else { StartKind::Warmup })
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<Vec<GridPoint>, CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Some(p) = self.grid.p {
            if !(p > 1.0 && p < 3.0) {
                return bad(format!("schedule exponent p = {p} must lie in (1, 3)"));
            }
        }
        if let Some(l) = &self.grid.eta_list {
            if l.is_empty() || l.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return bad("eta_list must be non-empty with positive finite entries".into());
            }
        }
        if let Some(l) = &self.grid.n_list {
            if l.is_empty() || l.contains(&0) {
                return bad("n_list must be non-empty with positive entries".into());
            }
        }
        if let Some(l) = &self.grid.d_list {
            if l.is_empty() || l.contains(&0) {
                return bad("d_list must be non-empty with positive entries".into());
            }
        }
        let min_replicas = match self.scenario {
            Scenario::LinearExactRate => 0,
            Scenario::JacobiContraction => 1,
            _ => 2,
        };
        if self.replicas < min_replicas {
            return bad(format!("{} needs replicas >= {min_replicas}", self.scenario.name()));
        }
        if self.scenario == Scenario::LinearExactRate
            && !matches!(self.params.start, None | Some(StartKind::GaussianExact))
        {
            return bad("linear_exact_rate is closed-form only for the stationary Gaussian start".into());
        }
        let points = self.expand()?;
        for pt in &points {
            let spec = self.potential_for(pt.d)?;
            if self.scenario.needs_quadratic() && !spec.is_quadratic() {
                return bad(format!("{} needs a quadratic potential", self.scenario.name()));
            }
            if self.scenario.needs_chain_grid() && pt.n == 0 {
                return bad(format!("schedule gives n = 0 at eta = {}", pt.eta));
            }
            if self.scenario.runs_chain() {
                let cfg = ChainConfig::new(pt.eta, pt.n, pt.d, 0).with_start(self.start_kind(&spec));
                cfg.validate(&spec).map_err(|e| CliError::Config(format!("grid point d={} n={}: {e}", pt.d, pt.n)))?;
            }
            if self.scenario == Scenario::LinearExactRate && pt.eta * spec.beta >= 2.0 {
                return bad(format!("eta = {} makes the linear chain unstable", pt.eta));
            }
        }
        if self.scenario == Scenario::SigmaConvergence && self.params.paths == Some(0) {
            return bad("paths must be >= 1".into());
        }
        if self.params.coupled_innovations == Some(true) {
            let max_n = points.iter().map(|p| p.n).max().unwrap_or(1);
            if points.iter().any(|p| max_n % p.n != 0) {
                return bad("coupled_innovations needs every n to divide the largest n".into());
            }
        }
        Ok(points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
scenario = "linear_exact_rate"
replicas = 0
seed = 1
[potential]
kind = "quadratic"
a_diag = [1.0, 2.0]
[grid]
p = 2.0
n_list = [65536, 256, 4096]
"#;

    #[test]
    fn expands_in_order() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        let pts = c.validate().unwrap();
        assert_eq!(pts.iter().map(|p| p.n).collect::<Vec<_>>(), vec![256, 4096, 65536]);
        assert_eq!(pts[0].eta, 1.0 / 16.0);
        assert!(pts.iter().all(|p| p.d == 2));
    }

    #[test]
    fn eta_schedule_floors() {
        let text = BASE.replace("n_list = [65536, 256, 4096]", "eta_list = [0.1]").replace("p = 2.0", "p = 1.5");
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(c.expand().unwrap()[0].n, 31);
    }

    #[test]
    fn rejects_bad_configs() {
        for (from, to) in [
            ("p = 2.0", "p = 3.5"),
            ("n_list = [65536, 256, 4096]", "n_list = []"),
            ("n_list = [65536, 256, 4096]", ""),
            ("linear_exact_rate", "linear_mc_rate"),
            ("seed = 1", "seed = 1\nbogus = 3"),
        ] {
            let text = BASE.replace(from, to);
            let r = ExperimentConfig::from_toml_str(&text).and_then(|c| c.validate());
            assert!(matches!(r, Err(CliError::Config(_))), "{from} -> {to}");
        }
        let lc = BASE.replace(
            "kind = \"quadratic\"\na_diag = [1.0, 2.0]",
            "kind = \"logcosh\"\nalpha = 1.0\neps = 0.5\ndim = 2",
        );
        assert!(ExperimentConfig::from_toml_str(&lc).unwrap().validate().is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, again);
    }
}

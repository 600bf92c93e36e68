//! The verification scenarios: each maps a grid point to result rows.

use std::collections::BTreeMap;

use lclt_core::chain::{
    aggregated_innovations, replay, simulate, start_state, stationary_fourth_moment, ChainConfig, ChainRun,
};
use lclt_core::decomposition::{compute_w_n, remainder_norm_scan};
use lclt_core::linalg::{hs_norm, inv_sqrt_spd, op_norm, Matrix, SpdMatrix};
use lclt_core::linear::{exact_w2_to_gamma, lemma_a1_ratio, w_n_from_innovations, LinearCaseModel};
use lclt_core::pair::{conditional_mean_check, d_delta_moments, draw_pairs, theorem_l1_rhs, xi_components};
use lclt_core::potential::{PotentialKind, PotentialSpec};
use lclt_core::rng::{replica_seed, NormalStream};
use lclt_core::stats::Estimate;
use lclt_core::stein::{
    estimate_sigma, grad_phi_trajectory, jacobi_flow, solve_exact, SteinGradientField, TrajectorySettings,
};
use lclt_core::tolerances::EXACT_TRANSPORT_CAP;
use lclt_core::wasserstein::{noise_floor, w1_sliced, w_to_gamma, SampleCloud};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, GridPoint, Scenario};
use crate::error::CliError;
use crate::output::{FitRow, PointSeeds, ResultRow};
use crate::ratefit::fit_rate;

// Auxiliary streams flip one high bit of the seed they derive from.
const TAG_REFERENCE: u64 = 1 << 63;
const TAG_FLOOR: u64 = 1 << 62;
const TAG_PAIRS: u64 = 1 << 61;
const TAG_XI: u64 = 1 << 60;
const TAG_START: u64 = 1 << 59;
const TAG_COUPLED: u64 = 1 << 58;
const TAG_PROJECTIONS: u64 = 1 << 57;
const TAG_TRAJECTORY: u64 = 1 << 56;

const DEFAULT_FLOOR_SEEDS: usize = 8;
const DEFAULT_PROJECTIONS: usize = 256;
const DEFAULT_PAIRS_PER_RUN: usize = 100;

/// Everything a scenario run produces besides the artifacts' file layout.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub fits: Vec<FitRow>,
    pub points: Vec<PointSeeds>,
    pub warnings: Vec<String>,
}

pub fn point_seed(seed: u64, g: usize) -> u64 {
    replica_seed(seed, (g as u64) << 32)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    pt: GridPoint,
    seed: u64,
    spec: PotentialSpec,
}

impl Ctx<'_> {
    fn name(&self) -> &'static str {
        self.cfg.scenario.name()
    }

    fn row(&self, metric: impl Into<String>, value: f64, stderr: Option<f64>) -> ResultRow {
        ResultRow {
            scenario: self.name(),
            d: self.pt.d,
            eta: Some(self.pt.eta),
            n: Some(self.pt.n),
            p: self.pt.p,
            metric: metric.into(),
            value,
            stderr,
            seed: self.seed,
        }
    }

    fn exact(&self, metric: &str, value: f64) -> ResultRow {
        self.row(metric, value, None)
    }

    fn estimate(&self, metric: &str, e: Estimate) -> ResultRow {
        self.row(metric, e.mean, Some(e.stderr))
    }

    fn chain_config(&self, seed: u64) -> ChainConfig {
        let mut c =
            ChainConfig::new(self.pt.eta, self.pt.n, self.pt.d, seed).with_start(self.cfg.start_kind(&self.spec));
        if let Some(w) = self.cfg.params.warmup {
            c = c.with_warmup(w);
        }
        c
    }

    fn replica_seeds(&self, count: usize) -> Vec<u64> {
        (0..count as u64).map(|r| replica_seed(self.seed, r)).collect()
    }
}

/// Exact field and `Σ`-whitening for one dimension.
struct FieldData {
    field: SteinGradientField,
    sigma: SpdMatrix,
    sigma_inv_sqrt: SpdMatrix,
}

fn field_data(spec: &PotentialSpec) -> Result<FieldData, CliError> {
    let field = solve_exact(spec)?;
    let sigma = field.sigma_exact().expect("exact fields have a closed-form covariance")?;
    let sigma_inv_sqrt = inv_sqrt_spd(&sigma)?;
    Ok(FieldData { field, sigma, sigma_inv_sqrt })
}

/// Runs the configured scenario over its whole grid.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let points = cfg.validate()?;
    let mut dims: Vec<usize> = points.iter().map(|p| p.d).collect();
    dims.dedup();
    let specs: BTreeMap<usize, PotentialSpec> =
        dims.iter().map(|&d| Ok((d, cfg.potential_for(d)?))).collect::<Result<_, CliError>>()?;
    let needs_field = matches!(
        cfg.scenario,
        Scenario::NonlinearRate | Scenario::PairScaling | Scenario::DecompositionCheck | Scenario::SigmaConvergence
    );
    let fields: BTreeMap<usize, FieldData> = if needs_field {
        dims.iter().map(|&d| Ok((d, field_data(&specs[&d])?))).collect::<Result<_, CliError>>()?
    } else {
        BTreeMap::new()
    };
    let floors = transport_floors(cfg, &dims)?;

    let mut out = RunOutput::default();
    let per_point: Vec<(Vec<ResultRow>, PointSeeds, Vec<String>)> = points
        .par_iter()
        .enumerate()
        .map(|(g, &pt)| {
            let ctx = Ctx { cfg, pt, seed: point_seed(cfg.seed, g), spec: specs[&pt.d].clone() };
            let mut warnings = Vec::new();
            let (rows, replicas) = match cfg.scenario {
                Scenario::LinearExactRate => (linear_exact_rate(&ctx)?, 0),
                Scenario::LinearMcRate => {
                    (sampled_rate(&ctx, None, floors[&pt.d], &points, &mut warnings)?, cfg.replicas)
                }
                Scenario::NonlinearRate => {
                    (sampled_rate(&ctx, Some(&fields[&pt.d]), floors[&pt.d], &points, &mut warnings)?, cfg.replicas)
                }
                Scenario::MomentGrowth => (moment_growth(&ctx)?, cfg.replicas),
                Scenario::PairScaling => (pair_scaling(&ctx, &fields[&pt.d])?, cfg.replicas),
                Scenario::DecompositionCheck => (decomposition_check(&ctx, &fields[&pt.d])?, cfg.replicas),
                Scenario::JacobiContraction => (jacobi_contraction(&ctx)?, cfg.replicas),
                Scenario::SigmaConvergence => (sigma_convergence(&ctx, &fields[&pt.d])?, cfg.replicas),
            };
            let seeds = PointSeeds {
                d: pt.d,
                n: pt.n,
                eta: pt.eta,
                point_seed: ctx.seed,
                replica_seeds: ctx.replica_seeds(replicas),
            };
            Ok((rows, seeds, warnings))
        })
        .collect::<Result<_, CliError>>()?;
    for (rows, seeds, warnings) in per_point {
        out.rows.extend(rows);
        out.points.push(seeds);
        for w in warnings {
            if !out.warnings.contains(&w) {
                out.warnings.push(w);
            }
        }
    }
    if cfg.scenario == Scenario::SigmaConvergence {
        for &d in &dims {
            out.rows.extend(sigma_dimension_rows(cfg, &specs[&d], &fields[&d])?);
        }
    }
    for (&d, floor) in &floors {
        if !floor.mean.is_nan() {
            out.rows.push(ResultRow {
                scenario: cfg.scenario.name(),
                d,
                eta: None,
                n: None,
                p: cfg.grid.p,
                metric: "noise_floor".into(),
                value: floor.mean,
                stderr: Some(floor.stderr),
                seed: floor_seed(cfg.seed, d),
            });
        }
    }
    out.fits = scenario_fits(cfg, &out.rows, &floors);
    Ok(out)
}

fn floor_seed(seed: u64, d: usize) -> u64 {
    seed ^ TAG_FLOOR ^ ((d as u64) << 40)
}

fn sliced(cfg: &ExperimentConfig) -> bool {
    cfg.replicas > EXACT_TRANSPORT_CAP
}

/// γ-vs-γ transport floor at matched `(m, d)` for the sampled scenarios.
fn transport_floors(cfg: &ExperimentConfig, dims: &[usize]) -> Result<BTreeMap<usize, Estimate>, CliError> {
    if !matches!(cfg.scenario, Scenario::LinearMcRate | Scenario::NonlinearRate) {
        return Ok(BTreeMap::new());
    }
    let seeds = cfg.params.floor_seeds.unwrap_or(DEFAULT_FLOOR_SEEDS);
    let m = cfg.replicas;
    dims.iter()
        .map(|&d| {
            let seed = floor_seed(cfg.seed, d);
            let e = if sliced(cfg) {
                let proj = cfg.params.projections.unwrap_or(DEFAULT_PROJECTIONS);
                let vals: Vec<f64> = (0..seeds.max(2) as u64)
                    .map(|k| {
                        let a = SampleCloud::gaussian(m, d, seed ^ (2 * k))?;
                        let b = SampleCloud::gaussian(m, d, seed ^ (2 * k + 1))?;
                        Ok(w1_sliced(&a, &b, proj, seed ^ TAG_PROJECTIONS ^ k)?.mean)
                    })
                    .collect::<Result<_, CliError>>()?;
                Estimate::from_samples(&vals)
            } else {
                noise_floor(m, d, 1, seeds, seed)?
            };
            Ok((d, e))
        })
        .collect()
}

fn linear_exact_rate(ctx: &Ctx) -> Result<Vec<ResultRow>, CliError> {
    let GridPoint { d, n, eta, p } = ctx.pt;
    let model = LinearCaseModel::from_spec(&ctx.spec, eta, n)?;
    let w2 = exact_w2_to_gamma(&model)?;
    let gap = lemma_a1_ratio(&model)?;
    let mut rows = vec![
        ctx.exact("w2_exact", w2),
        ctx.exact("cov_gap_op", gap.op_norm_gap),
        ctx.exact("bound_ratio", gap.bound_ratio),
    ];
    if let Some(p) = p {
        let rate = (n as f64).powf(1.0 / p - 1.0) * (d as f64).powf(1.5);
        rows.push(ctx.exact("w2_over_rate", w2 / rate));
    }
    Ok(rows)
}

/// One run per replica, with innovations either independent per grid point
/// or aggregated from a fine path shared by every `n`.
fn replica_run(ctx: &Ctx, r: u64, finest: usize) -> Result<ChainRun, CliError> {
    let seed = replica_seed(ctx.seed, r);
    if ctx.cfg.params.coupled_innovations != Some(true) {
        return Ok(simulate(&ctx.spec, &ctx.chain_config(seed))?);
    }
    let shared = replica_seed(ctx.cfg.seed, r) ^ TAG_COUPLED;
    let cfg = ctx.chain_config(shared ^ TAG_START);
    let x0 = start_state(&ctx.spec, &cfg)?;
    let xi = aggregated_innovations(ctx.pt.n, ctx.pt.d, finest, shared)?;
    Ok(replay(&ctx.spec, cfg.with_seed(seed), &x0, xi)?)
}

fn sample_cov_gap(samples: &[Vec<f64>], d: usize) -> f64 {
    let m = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(a, v)| *a += v / m);
    }
    let mut cov = Matrix::identity(d).scale(-1.0);
    for s in samples {
        let c: Vec<f64> = s.iter().zip(&mean).map(|(v, a)| v - a).collect();
        cov.add_assign_scaled(&Matrix::outer(&c, &c), 1.0 / (m - 1.0));
    }
    hs_norm(&cov)
}

/// Distance from `m = replicas` samples of `Σ^{-1/2}W_n` to the standard
/// Gaussian, with the noise floor alongside.
fn sampled_rate(
    ctx: &Ctx,
    field: Option<&FieldData>,
    floor: Estimate,
    points: &[GridPoint],
    warnings: &mut Vec<String>,
) -> Result<Vec<ResultRow>, CliError> {
    let GridPoint { d, .. } = ctx.pt;
    let m = ctx.cfg.replicas;
    let finest = points.iter().map(|p| p.n).max().unwrap_or(ctx.pt.n);
    let linear = match field {
        None => Some(LinearCaseModel::from_spec(&ctx.spec, ctx.pt.eta, ctx.pt.n)?),
        Some(_) => None,
    };
    let (whiten, pi_mean) = match (field, &linear) {
        (Some(f), _) => (f.sigma_inv_sqrt.clone(), f.field.pi_mean()),
        (None, Some(model)) => (lclt_core::linear::sigma_inv_sqrt_linear(&model.a)?, vec![0.0; d]),
        (None, None) => unreachable!(),
    };
    let per_replica: Vec<(Vec<f64>, f64)> = (0..m as u64)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, f64), CliError> {
            let run = replica_run(ctx, r, finest)?;
            let w = compute_w_n(&run, &pi_mean)?;
            let gap = match &linear {
                Some(model) => {
                    let alt = w_n_from_innovations(model, &run)?;
                    w.iter().zip(&alt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                }
                _ => 0.0,
            };
            Ok((whiten.mul_vec(&w), gap))
        })
        .collect::<Result<_, CliError>>()?;
    let samples: Vec<Vec<f64>> = per_replica.iter().map(|(w, _)| w.clone()).collect();
    let cloud = SampleCloud::from_points(&samples)?;
    let reference =
        if ctx.cfg.params.common_reference.unwrap_or(true) { ctx.cfg.seed } else { ctx.seed } ^ TAG_REFERENCE;
    let mut rows = Vec::new();
    if sliced(ctx.cfg) {
        warnings.push(format!("m = {m} exceeds the exact transport cap {EXACT_TRANSPORT_CAP}; using sliced W1"));
        let g = SampleCloud::gaussian(m, d, reference)?;
        let proj = ctx.cfg.params.projections.unwrap_or(DEFAULT_PROJECTIONS);
        rows.push(ctx.estimate("w1_to_gamma", w1_sliced(&cloud, &g, proj, reference ^ TAG_PROJECTIONS)?));
        rows.push(ctx.exact("sliced_mode", 1.0));
    } else {
        rows.push(ctx.exact("w1_to_gamma", w_to_gamma(&cloud, 1, reference)?));
    }
    rows.push(ctx.exact("w1_minus_floor", rows[0].value - floor.mean));
    rows.push(ctx.exact("sample_cov_gap_hs", sample_cov_gap(&samples, d)));
    if let Some(model) = &linear {
        rows.push(ctx.exact("w2_exact", exact_w2_to_gamma(model)?));
        rows.push(ctx.exact("w_n_closed_form_gap", per_replica.iter().map(|(_, g)| *g).fold(0.0, f64::max)));
    }
    Ok(rows)
}

fn moment_growth(ctx: &Ctx) -> Result<Vec<ResultRow>, CliError> {
    let e = stationary_fourth_moment(&ctx.spec, &ctx.chain_config(ctx.seed), ctx.cfg.replicas)?;
    let d2 = (ctx.pt.d * ctx.pt.d) as f64;
    Ok(vec![
        ctx.estimate("fourth_moment", e),
        ctx.estimate("fourth_moment_over_d2", Estimate { mean: e.mean / d2, stderr: e.stderr / d2 }),
    ])
}

fn pair_scaling(ctx: &Ctx, fd: &FieldData) -> Result<Vec<ResultRow>, CliError> {
    let GridPoint { d, n, .. } = ctx.pt;
    let per_run = ctx.cfg.params.pairs_per_run.unwrap_or(DEFAULT_PAIRS_PER_RUN);
    let runs: Vec<ChainRun> = (0..ctx.cfg.replicas as u64)
        .into_par_iter()
        .map(|r| simulate(&ctx.spec, &ctx.chain_config(replica_seed(ctx.seed, r))))
        .collect::<Result<_, _>>()?;
    let target = 1.0 / n as f64;
    let mut lambdas = Vec::with_capacity(runs.len());
    let mut lambda_err: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let mut pairs = Vec::with_capacity(runs.len() * per_run);
    for (r, run) in runs.iter().enumerate() {
        let cm = conditional_mean_check(run, &fd.field, &fd.sigma_inv_sqrt)?;
        residual = residual.max(cm.residual_norm);
        if let Some(l) = cm.lambda_hat {
            lambdas.push(l);
            lambda_err = lambda_err.max((l.abs() - target).abs());
        }
        let seed = replica_seed(ctx.seed, r as u64) ^ TAG_PAIRS;
        pairs.extend(draw_pairs(&ctx.spec, run, &fd.field, &fd.sigma_inv_sqrt, per_run, seed)?);
    }
    let moments = d_delta_moments(&pairs)?;
    let xi_runs = ctx.cfg.params.xi_runs.unwrap_or(runs.len()).clamp(2, runs.len());
    let xi = xi_components(&ctx.spec, &runs[..xi_runs], &fd.field, &fd.sigma, &fd.sigma_inv_sqrt, ctx.seed ^ TAG_XI)?;
    let rhs = theorem_l1_rhs(-target, moments.m2log.mean, xi.xi_hs_mean.mean, d)?;
    Ok(vec![
        ctx.estimate("lambda_hat", Estimate::from_samples(&lambdas)),
        ctx.exact("lambda_abs_err_max", lambda_err),
        ctx.exact("cond_mean_residual_max", residual),
        ctx.estimate("m2", moments.m2),
        ctx.estimate("m2log", moments.m2log),
        ctx.estimate("xi_r1", xi.r1),
        ctx.estimate("xi_r2", xi.r2),
        ctx.estimate("xi_r3", xi.r3),
        ctx.estimate("xi_hs", xi.xi_hs_mean),
        ctx.exact("bound_rhs", rhs),
    ])
}

fn decomposition_check(ctx: &Ctx, fd: &FieldData) -> Result<Vec<ResultRow>, CliError> {
    let scan = remainder_norm_scan(
        &ctx.spec,
        &fd.field,
        &fd.sigma_inv_sqrt,
        &[(ctx.pt.n, ctx.pt.eta)],
        ctx.cfg.replicas,
        ctx.seed,
    )?;
    let mut rows = Vec::with_capacity(scan.len() + 1);
    for s in &scan {
        rows.push(ctx.estimate(&format!("{}_mean_abs", s.term), s.mean_abs));
        if s.term == "residual" {
            rows.push(ctx.exact("residual_max", s.max_abs));
        }
    }
    Ok(rows)
}

fn jacobi_contraction(ctx: &Ctx) -> Result<Vec<ResultRow>, CliError> {
    let d = ctx.pt.d;
    let spec = &ctx.spec;
    let horizon = ctx.cfg.params.horizon.unwrap_or(10.0);
    let step = ctx.cfg.params.flow_step.unwrap_or(1e-3);
    let quad_a = match &spec.kind {
        PotentialKind::Quadratic { a } => Some(a.clone()),
        PotentialKind::SeparableLogCosh { .. } => None,
    };
    // per path: violations, checks, min op/lower, max op/upper, expm error at t = 1
    let per_path: Vec<(usize, usize, f64, f64, f64)> = (0..ctx.cfg.replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<_, CliError> {
            let seed = replica_seed(ctx.seed, r);
            let x0 = NormalStream::new(seed ^ TAG_START).normal_vec(d);
            let path = jacobi_flow(spec, &x0, horizon, step, seed)?;
            let h = if path.times.len() > 1 { path.times[1] - path.times[0] } else { step };
            let (mut bad, mut lo_min, mut hi_max) = (0, f64::INFINITY, 0.0f64);
            for (t, j) in path.times.iter().zip(&path.flows) {
                let op = op_norm(j);
                let lower = (-spec.beta * t).exp() * (1.0 - 10.0 * h * spec.beta);
                let upper = (-spec.alpha * t).exp() * (1.0 + 10.0 * h * spec.beta);
                if op < lower || op > upper {
                    bad += 1;
                }
                lo_min = lo_min.min(op / lower);
                hi_max = hi_max.max(op / upper);
            }
            let mut expm_err = f64::NAN;
            if let (Some(a), true) = (&quad_a, horizon >= 1.0) {
                let k = path
                    .times
                    .iter()
                    .enumerate()
                    .min_by(|x, y| (x.1 - 1.0).abs().total_cmp(&(y.1 - 1.0).abs()))
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                let t = path.times[k];
                let e = a.map_spectrum(|l| (-t * l).exp())?.into_matrix();
                expm_err = op_norm(&path.flows[k].sub(&e)) / op_norm(&e);
            }
            Ok((bad, path.times.len(), lo_min, hi_max, expm_err))
        })
        .collect::<Result<_, CliError>>()?;
    let mut rows = vec![
        ctx.exact("band_violations", per_path.iter().map(|p| p.0).sum::<usize>() as f64),
        ctx.exact("band_checks", per_path.iter().map(|p| p.1).sum::<usize>() as f64),
        ctx.exact("lower_margin_min", per_path.iter().map(|p| p.2).fold(f64::INFINITY, f64::min)),
        ctx.exact("upper_margin_max", per_path.iter().map(|p| p.3).fold(0.0, f64::max)),
    ];
    if quad_a.is_some() && horizon >= 1.0 {
        rows.push(ctx.exact("expm_rel_err_t1", per_path.iter().map(|p| p.4).fold(0.0, f64::max)));
    }
    for r in &mut rows {
        r.n = None;
        r.eta = None;
    }
    Ok(rows)
}

/// `‖Σ̂ − Σ‖_HS` from the states of one run per replica.
fn sigma_convergence(ctx: &Ctx, fd: &FieldData) -> Result<Vec<ResultRow>, CliError> {
    let errs: Vec<f64> = (0..ctx.cfg.replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<f64, CliError> {
            let run = simulate(&ctx.spec, &ctx.chain_config(replica_seed(ctx.seed, r)))?;
            let samples: Vec<Vec<f64>> = (1..=run.n()).map(|k| run.state(k).to_vec()).collect();
            let est = estimate_sigma(&fd.field, &samples)?;
            Ok(hs_norm(&est.sigma.matrix().sub(fd.sigma.matrix())))
        })
        .collect::<Result<_, CliError>>()?;
    Ok(vec![ctx.estimate("sigma_hat_err_hs", Estimate::from_samples(&errs))])
}

/// Per-dimension checks of the solver: covariance band and trajectory cross-check.
fn sigma_dimension_rows(
    cfg: &ExperimentConfig,
    spec: &PotentialSpec,
    fd: &FieldData,
) -> Result<Vec<ResultRow>, CliError> {
    let d = spec.dim;
    let seed = cfg.seed ^ TAG_TRAJECTORY ^ ((d as u64) << 40);
    let row = |metric: String, value: f64, stderr: Option<f64>| ResultRow {
        scenario: cfg.scenario.name(),
        d,
        eta: None,
        n: None,
        p: None,
        metric,
        value,
        stderr,
        seed,
    };
    let eig = fd.sigma.eigen()?;
    let mut rows = vec![
        row("sigma_eig_min".into(), eig.lambda_min(), None),
        row("sigma_eig_max".into(), eig.lambda_max(), None),
        row("sigma_band_lower".into(), 2.0 / (spec.beta * spec.beta), None),
        row("sigma_band_upper".into(), 2.0 / (spec.alpha * spec.alpha), None),
    ];
    let defaults = TrajectorySettings::defaults(spec, seed);
    let probes = cfg.params.probe_points.clone().unwrap_or_else(|| vec![0.0, 1.0]);
    let mut gen_residual: f64 = 0.0;
    for (k, &v) in probes.iter().enumerate() {
        let x = vec![v; d];
        for i in 0..d {
            gen_residual = gen_residual.max(fd.field.generator_residual(spec, i, &x)?.abs());
        }
        let settings = TrajectorySettings {
            horizon: cfg.params.horizon.unwrap_or(defaults.horizon),
            paths: cfg.params.paths.unwrap_or(defaults.paths),
            step: cfg.params.flow_step.unwrap_or(defaults.step),
            seed: seed ^ k as u64,
        };
        let traj = grad_phi_trajectory(spec, &x, &settings)?;
        let g = fd.field.grad_matrix(&x)?;
        let (mut dev, mut se): (f64, f64) = (0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                // column i of the trajectory estimate is −∇φ_i
                dev = dev.max((traj.estimate.get(j, i) + g.get(i, j)).abs());
                se = se.max(traj.stderr.get(j, i));
            }
        }
        rows.push(row(format!("traj_grad_dev_x{v}"), dev, Some(se)));
        rows.push(row(format!("traj_grad_tol_x{v}"), (3.0 * se).max(1e-4), None));
    }
    rows.push(row("generator_residual_max".into(), gen_residual, None));
    Ok(rows)
}

fn scenario_fits(cfg: &ExperimentConfig, rows: &[ResultRow], floors: &BTreeMap<usize, Estimate>) -> Vec<FitRow> {
    let name = cfg.scenario.name();
    let by_n = |metric: &str, against: &'static str| -> Vec<FitRow> {
        let mut curves: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.metric == metric) {
            if let (Some(n), Some(eta)) = (r.n, r.eta) {
                let x = if against == "n_eta" { n as f64 * eta } else { n as f64 };
                curves.entry(r.d).or_default().push((x, r.value));
            }
        }
        curves
            .into_iter()
            .filter(|(_, pts)| pts.len() >= 3)
            .map(|(d, pts)| {
                let floor = floors.get(&d).map(|f| f.mean).unwrap_or(0.0);
                FitRow {
                    scenario: name,
                    d: Some(d),
                    metric: metric.into(),
                    against,
                    floor,
                    outcome: fit_rate(&pts, floor),
                }
            })
            .collect()
    };
    match cfg.scenario {
        Scenario::LinearExactRate => [by_n("w2_exact", "n"), by_n("cov_gap_op", "n_eta")].concat(),
        Scenario::LinearMcRate | Scenario::NonlinearRate => by_n("w1_to_gamma", "n"),
        Scenario::PairScaling => [by_n("m2", "n"), by_n("m2log", "n"), by_n("xi_hs", "n")].concat(),
        Scenario::DecompositionCheck => {
            ["h", "r1", "r2", "r3", "r4", "r5", "r6"].iter().flat_map(|t| by_n(&format!("{t}_mean_abs"), "n")).collect()
        }
        Scenario::SigmaConvergence => by_n("sigma_hat_err_hs", "n"),
        Scenario::JacobiContraction => Vec::new(),
        Scenario::MomentGrowth => {
            let mut curves: BTreeMap<(usize, u64), Vec<(f64, f64)>> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.metric == "fourth_moment") {
                let key = (r.n.unwrap_or(0), r.eta.unwrap_or(0.0).to_bits());
                curves.entry(key).or_default().push((r.d as f64, r.value));
            }
            curves
                .into_values()
                .filter(|pts| pts.len() >= 3)
                .map(|pts| FitRow {
                    scenario: name,
                    d: None,
                    metric: "fourth_moment".into(),
                    against: "d",
                    floor: 0.0,
                    outcome: fit_rate(&pts, 0.0),
                })
                .collect()
        }
    }
}

//! Exchangeable pair obtained by resampling one innovation of the chain.
//!
//! Pick `I` uniform on `1..=n` and replace `ξ_I` by an independent `ξ′`.
//! The states `X_j` for `j ≥ I` move to `X_j^{(I)}`, and with `G(x)` the
//! matrix with rows `∇φ_i(x)`, `S = Σ^{-1/2}`:
//!
//! - `W = S 𝓗_n`, `W′ = S 𝓗′_n`
//! - `D = −√(2/n) S G(X_{I−1}) (ξ′ − ξ_I)`
//! - `δ = W′ − W = D − S r_I`,
//!   `r_I = √(2/n) Σ_{j=I}^{n−1} (G(X_j^{(I)}) − G(X_j)) ξ_{j+1}`
//! - `t_I = −√(2/n) G(X_{I−1}) ξ_I`, `T_I = (2/n) G(X_{I−1}) G(X_{I−1})ᵀ`
//!
//! Averaging `D` over `ξ′` and `I` gives `E[D | X] = −W/n`, so with the sign
//! convention of [`crate::stein`] the linearity constant is `λ = −1/n`.

use rayon::prelude::*;

use crate::chain::{lmc_step_into, ChainRun};
use crate::decomposition::compute_h_n;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{hs_norm, Matrix, SpdMatrix};
use crate::potential::PotentialSpec;
use crate::rng::NormalStream;
use crate::stats::{dot, norm2, Estimate};
use crate::stein::SteinGradientField;

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    /// `I`, 1-based.
    pub index_i: usize,
    pub xi_replacement: Vec<f64>,
    pub w: Vec<f64>,
    pub w_prime: Vec<f64>,
    pub d_vec: Vec<f64>,
    pub delta: Vec<f64>,
    /// `r_I` before multiplication by `S`.
    pub r_vec: Vec<f64>,
    /// `X_j^{(I)}` for `j = I..=n`, row-major; empty unless requested.
    pub perturbed_states: Vec<f64>,
}

/// Runs the perturbed chain from `X_{I−1}` and returns `r_I` (unscaled by
/// `S`). Stops as soon as the perturbed state coincides bitwise with the base
/// state, after which the two paths are identical, unless `keep` collects the
/// whole perturbed path.
fn perturb(
    spec: &PotentialSpec,
    run: &ChainRun,
    field: &SteinGradientField,
    index: usize,
    xi_new: &[f64],
    keep: Option<&mut Vec<f64>>,
) -> Result<Vec<f64>> {
    let d = run.dim();
    let n = run.n();
    let eta = run.eta();
    let mut grad = vec![0.0; d];
    let mut cur = vec![0.0; d];
    let mut next = vec![0.0; d];
    lmc_step_into(spec, eta, run.state(index - 1), xi_new, &mut grad, &mut cur);
    let mut r = vec![0.0; d];
    let constant = field.is_constant_gradient();
    let mut keep = keep;
    let mut merged = false;
    for j in index..=n {
        if let Some(buf) = keep.as_deref_mut() {
            buf.extend_from_slice(if merged { run.state(j) } else { &cur });
        }
        if j == n {
            break;
        }
        if !merged && !constant {
            let xi = run.xi(j + 1);
            let a = field.grad_apply(&cur, xi)?;
            let b = field.grad_apply(run.state(j), xi)?;
            for i in 0..d {
                r[i] += a[i] - b[i];
            }
        }
        if !merged {
            lmc_step_into(spec, eta, &cur, run.xi(j + 1), &mut grad, &mut next);
            std::mem::swap(&mut cur, &mut next);
            if cur.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("perturbed chain diverged".into()));
            }
            merged = cur.as_slice() == run.state(j + 1);
            if merged && keep.is_none() {
                break;
            }
        }
    }
    let c = (2.0 / n as f64).sqrt();
    Ok(r.iter().map(|v| c * v).collect())
}

/// Builds the pair for a given index and replacement innovation.
pub fn build_pair(
    spec: &PotentialSpec,
    run: &ChainRun,
    field: &SteinGradientField,
    sigma_inv_sqrt: &SpdMatrix,
    index: usize,
    xi_replacement: &[f64],
    keep_states: bool,
) -> Result<PairSample> {
    let d = run.dim();
    let n = run.n();
    check_dim(d, xi_replacement.len())?;
    check_dim(d, sigma_inv_sqrt.dim())?;
    if index == 0 || index > n {
        return Err(Error::IndexOutOfRange { index, lo: 1, hi: n });
    }
    let w = sigma_inv_sqrt.mul_vec(&compute_h_n(run, field)?);
    let diff: Vec<f64> = xi_replacement.iter().zip(run.xi(index)).map(|(a, b)| a - b).collect();
    let c = (2.0 / n as f64).sqrt();
    let g_diff = field.grad_apply(run.state(index - 1), &diff)?;
    let d_vec: Vec<f64> = sigma_inv_sqrt.mul_vec(&g_diff).iter().map(|v| -c * v).collect();
    let mut states = Vec::new();
    let r_vec = perturb(spec, run, field, index, xi_replacement, keep_states.then_some(&mut states))?;
    let s_r = sigma_inv_sqrt.mul_vec(&r_vec);
    let delta: Vec<f64> = d_vec.iter().zip(&s_r).map(|(a, b)| a - b).collect();
    let w_prime = w.iter().zip(&delta).map(|(a, b)| a + b).collect();
    Ok(PairSample {
        index_i: index,
        xi_replacement: xi_replacement.to_vec(),
        w,
        w_prime,
        d_vec,
        delta,
        r_vec,
        perturbed_states: states,
    })
}

/// Uniform `I` and standard normal `ξ′` drawn from the stream keyed by `seed`.
pub fn draw_pair(
    spec: &PotentialSpec,
    run: &ChainRun,
    field: &SteinGradientField,
    sigma_inv_sqrt: &SpdMatrix,
    seed: u64,
) -> Result<PairSample> {
    let mut stream = NormalStream::new(seed);
    let index = stream.index(run.n()) + 1;
    let xi = stream.normal_vec(run.dim());
    build_pair(spec, run, field, sigma_inv_sqrt, index, &xi, false)
}

/// `count` pairs on one base run; pair `k` uses seed `seed ^ k`.
pub fn draw_pairs(
    spec: &PotentialSpec,
    run: &ChainRun,
    field: &SteinGradientField,
    sigma_inv_sqrt: &SpdMatrix,
    count: usize,
    seed: u64,
) -> Result<Vec<PairSample>> {
    (0..count as u64).into_par_iter().map(|k| draw_pair(spec, run, field, sigma_inv_sqrt, seed ^ k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMean {
    /// `None` when `W = 0`.
    pub lambda_hat: Option<f64>,
    pub residual_norm: f64,
}

/// `E[D | X]` averaged exactly over `I` and `ξ′`, and the best `λ` in
/// `E[D | X] ≈ λW`.
pub fn conditional_mean_check(
    run: &ChainRun,
    field: &SteinGradientField,
    sigma_inv_sqrt: &SpdMatrix,
) -> Result<ConditionalMean> {
    let d = run.dim();
    let n = run.n();
    let w = sigma_inv_sqrt.mul_vec(&compute_h_n(run, field)?);
    // E_{ξ′}[D] = √(2/n) S G(X_{I−1}) ξ_I; average over I.
    let mut acc = vec![crate::stats::NeumaierAcc::default(); d];
    for i in 1..=n {
        for (a, v) in acc.iter_mut().zip(field.grad_apply(run.state(i - 1), run.xi(i))?) {
            a.add(v);
        }
    }
    let c = (2.0 / n as f64).sqrt() / n as f64;
    let inner: Vec<f64> = acc.iter().map(|a| c * a.value()).collect();
    let mean_d = sigma_inv_sqrt.mul_vec(&inner);
    let ww = dot(&w, &w);
    if ww == 0.0 {
        return Ok(ConditionalMean { lambda_hat: None, residual_norm: norm2(&mean_d) });
    }
    let lambda = dot(&mean_d, &w) / ww;
    let res: Vec<f64> = mean_d.iter().zip(&w).map(|(m, x)| m - lambda * x).collect();
    Ok(ConditionalMean { lambda_hat: Some(lambda), residual_norm: norm2(&res) })
}

/// Monte Carlo estimates of the pieces of `Ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiComponents {
    /// `(√d/2) E‖Σ_I T_I − Σ‖_HS`
    pub r1: Estimate,
    /// `(√d/2) E‖Σ_I t_I t_Iᵀ − Σ‖_HS`
    pub r2: Estimate,
    /// `(√d/2) E‖Σ_I r_I t_Iᵀ‖_HS`
    pub r3: Estimate,
    /// `E‖Ξ‖_HS`
    pub xi_hs_mean: Estimate,
}

impl XiComponents {
    /// `√d E‖Ξ‖_HS`
    pub fn xi_term(&self, d: usize) -> f64 {
        (d as f64).sqrt() * self.xi_hs_mean.mean
    }
}

/// Per-run values `[R1, R2, R3, ‖Ξ‖_HS]` summed over every index `I` of the
/// base run, with `ξ′_I` drawn from the stream keyed by `seed`.
fn xi_single(
    spec: &PotentialSpec,
    run: &ChainRun,
    field: &SteinGradientField,
    sigma: &SpdMatrix,
    sigma_inv_sqrt: &SpdMatrix,
    seed: u64,
) -> Result<[f64; 4]> {
    let d = run.dim();
    let n = run.n();
    let c = (2.0 / n as f64).sqrt();
    let mut sum_t = Matrix::zeros(d, d);
    let mut sum_tt = Matrix::zeros(d, d);
    let mut sum_rt = Matrix::zeros(d, d);
    let mut stream = NormalStream::new(seed);
    let mut xi_new = vec![0.0; d];
    for i in 1..=n {
        let x = run.state(i - 1);
        let g = field.grad_matrix(x)?;
        sum_t.add_assign_scaled(&g.matmul(&g.transpose()), 2.0 / n as f64);
        let t: Vec<f64> = g.mul_vec(run.xi(i)).iter().map(|v| -c * v).collect();
        sum_tt.add_assign_scaled(&Matrix::outer(&t, &t), 1.0);
        stream.fill_normal(&mut xi_new);
        if !field.is_constant_gradient() {
            let r = perturb(spec, run, field, i, &xi_new, None)?;
            sum_rt.add_assign_scaled(&Matrix::outer(&r, &t), 1.0);
        }
    }
    let a1 = sum_t.sub(sigma.matrix());
    let a2 = sum_tt.sub(sigma.matrix());
    let half_sqrt_d = 0.5 * (d as f64).sqrt();
    let s = sigma_inv_sqrt.matrix();
    let inner = a1.add(&a2).add(&sum_rt.transpose());
    let xi = s.matmul(&inner).matmul(s).scale(0.5);
    Ok([half_sqrt_d * hs_norm(&a1), half_sqrt_d * hs_norm(&a2), half_sqrt_d * hs_norm(&sum_rt), hs_norm(&xi)])
}

/// Estimates over base runs; run `k` draws its replacements from seed `seed ^ k`.
pub fn xi_components(
    spec: &PotentialSpec,
    runs: &[ChainRun],
    field: &SteinGradientField,
    sigma: &SpdMatrix,
    sigma_inv_sqrt: &SpdMatrix,
    seed: u64,
) -> Result<XiComponents> {
    if runs.len() < 2 {
        return Err(Error::InvalidParameter("need at least two base runs".into()));
    }
    let vals: Vec<[f64; 4]> = runs
        .par_iter()
        .enumerate()
        .map(|(k, run)| xi_single(spec, run, field, sigma, sigma_inv_sqrt, seed ^ k as u64))
        .collect::<Result<_>>()?;
    let col = |j: usize| Estimate::from_samples(&vals.iter().map(|v| v[j]).collect::<Vec<_>>());
    Ok(XiComponents { r1: col(0), r2: col(1), r3: col(2), xi_hs_mean: col(3) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DDeltaMoments {
    /// `E|D||δ|²`
    pub m2: Estimate,
    /// `E[|D||δ|² (|log|δ|| ∨ 1)]`
    pub m2log: Estimate,
}

pub fn d_delta_moments(batch: &[PairSample]) -> Result<DDeltaMoments> {
    if batch.len() < 2 {
        return Err(Error::InvalidParameter("need at least two pairs".into()));
    }
    let mut m2 = Vec::with_capacity(batch.len());
    let mut m2log = Vec::with_capacity(batch.len());
    for p in batch {
        let dn = norm2(&p.d_vec);
        let en = norm2(&p.delta);
        let base = dn * en * en;
        m2.push(base);
        m2log.push(if en == 0.0 { 0.0 } else { base * en.ln().abs().max(1.0) });
    }
    Ok(DDeltaMoments { m2: Estimate::from_samples(&m2), m2log: Estimate::from_samples(&m2log) })
}

/// `E[|D||δ|²(|log|δ|| ∨ 1)]/|λ| + √d E‖Ξ‖_HS`, the bracket of the Stein
/// bound with unit constant.
pub fn theorem_l1_rhs(lambda: f64, m2log: f64, xi_hs_mean: f64, d: usize) -> Result<f64> {
    if lambda == 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be nonzero and finite, got {lambda}")));
    }
    Ok(m2log / lambda.abs() + (d as f64).sqrt() * xi_hs_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{replay, simulate, ChainConfig, StartKind};
    use crate::linear::sigma_inv_sqrt_linear;
    use crate::stein::{solve_exact, solve_linear};

    fn quad_setup(
        d: usize,
        n: usize,
        seed: u64,
    ) -> (PotentialSpec, ChainRun, SteinGradientField, SpdMatrix, SpdMatrix) {
        let diag: Vec<f64> = (0..d).map(|i| 1.0 + 0.5 * i as f64).collect();
        let a = SpdMatrix::from_diag(&diag);
        let p = PotentialSpec::quadratic(a.clone()).unwrap();
        let run = simulate(&p, &ChainConfig::new(0.05, n, d, seed).with_start(StartKind::GaussianExact)).unwrap();
        let f = solve_linear(&a).unwrap();
        let sigma = f.sigma_exact().unwrap().unwrap();
        (p, run, f, sigma, sigma_inv_sqrt_linear(&a).unwrap())
    }

    #[test]
    fn identical_replacement_gives_zero() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 2).unwrap();
        let run = simulate(&p, &ChainConfig::new(0.05, 50, 2, 1)).unwrap();
        let f = solve_exact(&p).unwrap();
        let s = SpdMatrix::identity(2);
        let xi = run.xi(7).to_vec();
        let pair = build_pair(&p, &run, &f, &s, 7, &xi, true).unwrap();
        assert_eq!(pair.d_vec, vec![0.0; 2]);
        assert_eq!(pair.delta, vec![0.0; 2]);
        assert_eq!(pair.perturbed_states, run.states_flat()[7 * 2..].to_vec());
    }

    #[test]
    fn linear_perturbation_closed_form() {
        let a = 1.5;
        let eta = 0.05;
        let p = PotentialSpec::quadratic_diag(&[a]).unwrap();
        let run = simulate(&p, &ChainConfig::new(eta, 40, 1, 3)).unwrap();
        let f = solve_exact(&p).unwrap();
        let s = SpdMatrix::identity(1);
        let pair = build_pair(&p, &run, &f, &s, 11, &[0.7], true).unwrap();
        let dxi = 0.7 - run.xi(11)[0];
        for (off, j) in (11..=40).enumerate() {
            let expect = (2.0 * eta).sqrt() * (1.0 - eta * a).powi((j - 11) as i32) * dxi;
            assert!((pair.perturbed_states[off] - run.state(j)[0] - expect).abs() < 1e-12);
        }
        // δ = D = −√(2/n)·(−1/a)·Δξ with S = 1
        let expect = (2.0f64 / 40.0).sqrt() / a * dxi;
        assert!((pair.delta[0] - expect).abs() < 1e-12);
        assert_eq!(pair.d_vec, pair.delta);
    }

    #[test]
    fn w_prime_matches_rerun_chain() {
        let p = PotentialSpec::log_cosh(1.0, 0.8, 2).unwrap();
        let run = simulate(&p, &ChainConfig::new(0.1, 60, 2, 9).with_start(StartKind::Warmup)).unwrap();
        let f = solve_exact(&p).unwrap();
        let s = SpdMatrix::from_diag(&[0.9, 1.1]);
        let xi_new = [1.3, -0.4];
        let pair = build_pair(&p, &run, &f, &s, 20, &xi_new, true).unwrap();
        let mut innov = run.innovations_flat().to_vec();
        innov[19 * 2..20 * 2].copy_from_slice(&xi_new);
        let rerun = replay(&p, run.config.clone(), run.state(0), innov).unwrap();
        let w2 = s.mul_vec(&compute_h_n(&rerun, &f).unwrap());
        for (i, expected) in w2.iter().enumerate() {
            assert!((pair.w_prime[i] - expected).abs() < 1e-12);
            assert!((pair.w_prime[i] - pair.w[i] - pair.delta[i]).abs() < 1e-15);
        }
        for (off, j) in (20..=60).enumerate() {
            assert_eq!(&pair.perturbed_states[off * 2..off * 2 + 2], rerun.state(j));
        }
        // δ + S √(2/n) G(X_{I−1})(ξ′ − ξ_I) + S r_I = 0
        let diff = [xi_new[0] - run.xi(20)[0], xi_new[1] - run.xi(20)[1]];
        let g = s.mul_vec(&f.grad_apply(run.state(19), &diff).unwrap());
        let sr = s.mul_vec(&pair.r_vec);
        let c = (2.0f64 / 60.0).sqrt();
        for i in 0..2 {
            assert!((pair.delta[i] + c * g[i] + sr[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn contraction_of_perturbation() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 3).unwrap();
        let eta = 0.1;
        let run = simulate(&p, &ChainConfig::new(eta, 80, 3, 2)).unwrap();
        let f = solve_exact(&p).unwrap();
        let xi_new = [2.0, -1.0, 0.5];
        let pair = build_pair(&p, &run, &f, &SpdMatrix::identity(3), 5, &xi_new, true).unwrap();
        let dxi: f64 = xi_new.iter().zip(run.xi(5)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let rho = 1.0 - 2.0 * eta * p.alpha + eta * eta * p.beta * p.beta;
        for (off, j) in (5..=80).enumerate() {
            let gap = norm2(
                &pair.perturbed_states[off * 3..off * 3 + 3]
                    .iter()
                    .zip(run.state(j))
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            let bound = (2.0 * eta).sqrt() * rho.powf((j - 5) as f64 / 2.0) * dxi;
            assert!(gap <= bound * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn d_is_antisymmetric_under_swap() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 2).unwrap();
        let run = simulate(&p, &ChainConfig::new(0.05, 30, 2, 4)).unwrap();
        let f = solve_exact(&p).unwrap();
        let s = SpdMatrix::from_diag(&[1.2, 0.8]);
        let xi_new = vec![0.25, -1.5];
        let pair = build_pair(&p, &run, &f, &s, 12, &xi_new, false).unwrap();
        let mut innov = run.innovations_flat().to_vec();
        let old = run.xi(12).to_vec();
        innov[11 * 2..12 * 2].copy_from_slice(&xi_new);
        let swapped_run = replay(&p, run.config.clone(), run.state(0), innov).unwrap();
        let swapped = build_pair(&p, &swapped_run, &f, &s, 12, &old, false).unwrap();
        for i in 0..2 {
            assert_eq!(pair.d_vec[i], -swapped.d_vec[i]);
            assert!((pair.w[i] - swapped.w_prime[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn conditional_mean_is_linear() {
        for n in [1, 16, 256] {
            for seed in 0..5 {
                let (_, run, f, _, s) = quad_setup(3, n, seed);
                let cm = conditional_mean_check(&run, &f, &s).unwrap();
                assert!(cm.residual_norm <= 1e-12);
                assert!((cm.lambda_hat.unwrap() + 1.0 / n as f64).abs() <= 1e-12);
            }
        }
        let p = PotentialSpec::log_cosh(1.0, 0.5, 2).unwrap();
        let f = solve_exact(&p).unwrap();
        let run = simulate(&p, &ChainConfig::new(0.05, 64, 2, 1)).unwrap();
        let cm = conditional_mean_check(&run, &f, &SpdMatrix::identity(2)).unwrap();
        assert!((cm.lambda_hat.unwrap() + 1.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_mean_flags_zero_w() {
        let (p, _, f, _, s) = quad_setup(1, 4, 0);
        let run = replay(&p, ChainConfig::new(0.05, 4, 1, 0), &[0.0], vec![0.0; 4]).unwrap();
        let cm = conditional_mean_check(&run, &f, &s).unwrap();
        assert!(cm.lambda_hat.is_none());
    }

    #[test]
    fn exchangeable_locations_agree() {
        let (p, _, f, _, s) = quad_setup(2, 32, 7);
        let pairs: Vec<PairSample> = (0..2000u64)
            .into_par_iter()
            .map(|k| {
                let run = simulate(&p, &ChainConfig::new(0.05, 32, 2, 1000 + k).with_start(StartKind::GaussianExact))
                    .unwrap();
                draw_pair(&p, &run, &f, &s, k).unwrap()
            })
            .collect();
        for i in 0..2 {
            let diff: Vec<f64> = pairs.iter().map(|q| q.w_prime[i] - q.w[i]).collect();
            let e = Estimate::from_samples(&diff);
            // two-sided level 0.01
            assert!(e.mean.abs() <= 2.576 * e.stderr, "{e:?}");
        }
    }

    #[test]
    fn xi_components_quadratic() {
        let (p, _, f, sigma, s) = quad_setup(1, 64, 0);
        let runs: Vec<ChainRun> = (0..50)
            .map(|k| simulate(&p, &ChainConfig::new(0.05, 64, 1, k).with_start(StartKind::GaussianExact)).unwrap())
            .collect();
        let xc = xi_components(&p, &runs, &f, &sigma, &s, 1).unwrap();
        assert!(xc.r1.mean < 1e-12);
        assert_eq!(xc.r3.mean, 0.0);
        assert!(xc.r2.mean > 0.0 && xc.xi_hs_mean.mean > 0.0);
    }

    #[test]
    fn xi_components_nonlinear_has_remainder() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 1).unwrap();
        let f = solve_exact(&p).unwrap();
        let sigma = f.sigma_exact().unwrap().unwrap();
        let s = crate::linalg::inv_sqrt_spd(&sigma).unwrap();
        let runs: Vec<ChainRun> = (0..4)
            .map(|k| simulate(&p, &ChainConfig::new(0.1, 64, 1, k).with_start(StartKind::Warmup)).unwrap())
            .collect();
        let xc = xi_components(&p, &runs, &f, &sigma, &s, 1).unwrap();
        assert!(xc.r3.mean > 0.0 && xc.r1.mean > 0.0);
    }

    #[test]
    fn moments_edge_cases() {
        let zero = PairSample {
            index_i: 1,
            xi_replacement: vec![0.0],
            w: vec![0.0],
            w_prime: vec![0.0],
            d_vec: vec![0.0],
            delta: vec![0.0],
            r_vec: vec![0.0],
            perturbed_states: vec![],
        };
        let m = d_delta_moments(&[zero.clone(), zero.clone()]).unwrap();
        assert_eq!((m.m2.mean, m.m2log.mean), (0.0, 0.0));
        let unit = PairSample { d_vec: vec![2.0], delta: vec![1.0], ..zero };
        let m = d_delta_moments(&[unit.clone(), unit]).unwrap();
        assert_eq!(m.m2.mean, 2.0);
        assert_eq!(m.m2log.mean, 2.0);
    }

    #[test]
    fn rhs_formula() {
        assert_eq!(theorem_l1_rhs(1.0, 0.0, 0.0, 3).unwrap(), 0.0);
        let a = theorem_l1_rhs(1.0 / 16.0, 0.5, 0.0, 1).unwrap();
        assert!((a - 8.0).abs() < 1e-15);
        assert!((theorem_l1_rhs(-1.0 / 16.0, 0.5, 0.0, 1).unwrap() - a).abs() < 1e-15);
        assert!(theorem_l1_rhs(0.0, 1.0, 1.0, 1).is_err());
        assert!((theorem_l1_rhs(1.0, 0.0, 2.0, 4).unwrap() - 4.0).abs() < 1e-15);
    }
}

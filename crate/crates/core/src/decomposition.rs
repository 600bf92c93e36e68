//! Martingale-plus-remainder decomposition of the normalized chain sum.
//!
//! With `Δ_k = X_{k+1} − X_k = −η g_k + √(2η) ξ_{k+1}` and `g_k = ∇U(X_k)`,
//! a third-order Taylor expansion of `φ_i` along each step, summed over
//! `k < n` and combined with `𝒜φ_i = x_i − π(x_i)`, gives
//!
//! `W_n = 𝓗_n − (𝓡₁ + … + 𝓡₆)`
//!
//! with
//! - `𝓗 = −√(2/n) Σ ⟨∇φ_i(X_k), ξ_{k+1}⟩`
//! - `𝓡₁ = [φ_i(X_0) − φ_i(X_n)] / √(nη)`
//! - `𝓡₂ = √(η/n) Σ ⟨∇²φ_i(X_k), ξξᵀ − I⟩`
//! - `𝓡₃ = η/√(2n) Σ [⟨∇²φ_i, −gξᵀ⟩ + ⟨∇²φ_i, −ξgᵀ⟩]`
//! - `𝓡₄ = √2 η/√n Σ ∫(1−t)² ⟨∇³φ_i(X_k + tΔ_k), ξ^{⊗3}⟩ dt`
//! - `𝓡₅ = η^{3/2}/(2√n) Σ ⟨∇²φ_i, ggᵀ⟩ − η^{5/2}/(2√n) Σ ∫(1−t)² ⟨∇³φ_i, g^{⊗3}⟩ dt`
//! - `𝓡₆ = −3η^{3/2}/√n Σ ∫(1−t)² [⟨∇³φ_i, g⊗ξ⊗ξ⟩ − √(η/2) ⟨∇³φ_i, g⊗g⊗ξ⟩] dt`
//!
//! `g_k` is recovered from the stored run as `(√(2η)ξ_{k+1} − Δ_k)/η`, so the
//! split of `Δ_k` used by the expansion is the one the chain actually took.

use rayon::prelude::*;

use crate::chain::{simulate, ChainConfig, ChainRun, StartKind};
use crate::error::{check_dim, Error, Result};
use crate::linalg::SpdMatrix;
use crate::potential::PotentialSpec;
use crate::quadrature::gl16_unit;
use crate::stats::{norm2, Estimate, NeumaierAcc};
use crate::stein::SteinGradientField;

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub w_n: Vec<f64>,
    pub h_n: Vec<f64>,
    pub r_terms: [Vec<f64>; 6],
    /// `w_n − h_n − r_total`
    pub residual: Vec<f64>,
    pub pi_mean: Vec<f64>,
}

impl DecompositionResult {
    /// `𝓡_n = −Σ_j 𝓡_{n,·,j}`
    pub fn r_total(&self) -> Vec<f64> {
        (0..self.w_n.len()).map(|i| -self.r_terms.iter().map(|r| r[i]).sum::<f64>()).collect()
    }

    pub fn residual_norm(&self) -> f64 {
        norm2(&self.residual)
    }
}

/// `√(η/n) (Σ_{k<n} X_k − n·pi_mean)`
pub fn compute_w_n(run: &ChainRun, pi_mean: &[f64]) -> Result<Vec<f64>> {
    let d = run.dim();
    check_dim(d, pi_mean.len())?;
    let n = run.n();
    let scale = (run.eta() / n as f64).sqrt();
    let mut acc = vec![NeumaierAcc::default(); d];
    for k in 0..n {
        for (a, (x, m)) in acc.iter_mut().zip(run.state(k).iter().zip(pi_mean)) {
            a.add(x - m);
        }
    }
    Ok(acc.iter().map(|a| scale * a.value()).collect())
}

/// `𝓗_{n,i} = −√(2/n) Σ_{k<n} ⟨∇φ_i(X_k), ξ_{k+1}⟩`
pub fn compute_h_n(run: &ChainRun, field: &SteinGradientField) -> Result<Vec<f64>> {
    let d = run.dim();
    check_dim(field.dim, d)?;
    let n = run.n();
    let mut acc = vec![NeumaierAcc::default(); d];
    for k in 0..n {
        let v = field.grad_apply(run.state(k), run.xi(k + 1))?;
        for (a, x) in acc.iter_mut().zip(v) {
            a.add(x);
        }
    }
    let scale = -(2.0 / n as f64).sqrt();
    Ok(acc.iter().map(|a| scale * a.value()).collect())
}

/// The six remainder families, each stacked over coordinates.
pub fn compute_r_terms(run: &ChainRun, field: &SteinGradientField) -> Result<[Vec<f64>; 6]> {
    let d = run.dim();
    check_dim(field.dim, d)?;
    if !field.has_higher_derivatives() {
        return Err(Error::MissingDerivatives { order: 3 });
    }
    let n = run.n();
    let nf = n as f64;
    let eta = run.eta();

    let mut r1 = vec![0.0; d];
    let scale1 = 1.0 / (nf * eta).sqrt();
    for (i, r) in r1.iter_mut().enumerate() {
        *r = scale1 * (field.value(i, run.state(0))? - field.value(i, run.state(n))?);
    }
    if field.is_constant_gradient() {
        return Ok([r1, vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]]);
    }

    let (nodes, weights) = gl16_unit();
    let noise = (2.0 * eta).sqrt();
    let half_noise = (0.5 * eta).sqrt();
    // per coordinate: [ξξᵀ−I, −gξᵀ−ξgᵀ, ξ³, ggᵀ, g³, gξξ − √(η/2) ggξ]
    let mut acc = vec![[NeumaierAcc::default(); 6]; d];
    let mut delta = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut y = vec![0.0; d];
    for k in 0..n {
        let x = run.state(k);
        let x_next = run.state(k + 1);
        let xi = run.xi(k + 1);
        for j in 0..d {
            delta[j] = x_next[j] - x[j];
            g[j] = (noise * xi[j] - delta[j]) / eta;
        }
        for (i, a) in acc.iter_mut().enumerate() {
            let hxx = field.hess_contract(i, x, xi, xi)?;
            let lap = field.laplacian(i, x)?;
            a[0].add(hxx - lap);
            a[1].add(-field.hess_contract(i, x, &g, xi)? - field.hess_contract(i, x, xi, &g)?);
            a[3].add(field.hess_contract(i, x, &g, &g)?);
        }
        for (t, w) in nodes.iter().zip(weights) {
            let wt = w * (1.0 - t) * (1.0 - t);
            for j in 0..d {
                y[j] = x[j] + t * delta[j];
            }
            for (i, a) in acc.iter_mut().enumerate() {
                let t3 = |u: &[f64], v: &[f64], z: &[f64]| field.third_contract(i, &y, u, v, z);
                a[2].add(wt * t3(xi, xi, xi)?);
                a[4].add(wt * t3(&g, &g, &g)?);
                a[5].add(wt * (t3(&g, xi, xi)? - half_noise * t3(&g, &g, xi)?));
            }
        }
    }
    let sn = nf.sqrt();
    let c2 = (eta / nf).sqrt();
    let c3 = eta / (2.0 * nf).sqrt();
    let c4 = 2f64.sqrt() * eta / sn;
    let c5a = eta.powf(1.5) / (2.0 * sn);
    let c5b = eta.powf(2.5) / (2.0 * sn);
    let c6 = -3.0 * eta.powf(1.5) / sn;
    let mut out: [Vec<f64>; 6] = [r1, vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for (i, a) in acc.iter().enumerate() {
        out[1][i] = c2 * a[0].value();
        out[2][i] = c3 * a[1].value();
        out[3][i] = c4 * a[2].value();
        out[4][i] = c5a * a[3].value() - c5b * a[4].value();
        out[5][i] = c6 * a[5].value();
    }
    Ok(out)
}

/// All pieces of the decomposition with the identity residual.
pub fn decompose(run: &ChainRun, field: &SteinGradientField) -> Result<DecompositionResult> {
    let pi_mean = field.pi_mean();
    let w_n = compute_w_n(run, &pi_mean)?;
    let h_n = compute_h_n(run, field)?;
    let r_terms = compute_r_terms(run, field)?;
    let residual = (0..run.dim())
        .map(|i| {
            let r_sum: f64 = r_terms.iter().map(|r| r[i]).sum();
            w_n[i] - h_n[i] + r_sum
        })
        .collect();
    Ok(DecompositionResult { w_n, h_n, r_terms, residual, pi_mean })
}

/// Terms reported by [`remainder_norm_scan`].
pub const SCAN_TERMS: [&str; 9] = ["h", "r1", "r2", "r3", "r4", "r5", "r6", "residual", "r_total"];

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub n: usize,
    pub eta: f64,
    pub term: &'static str,
    /// Monte Carlo mean of `|Σ^{-1/2}·term|`; for `residual` the raw norm
    /// `‖W_n − 𝓗_n − 𝓡_n‖` without the `Σ^{-1/2}` factor.
    pub mean_abs: Estimate,
    /// Largest value over replicas.
    pub max_abs: f64,
}

/// `E|Σ^{-1/2}·term|` over `replicas` stationary-started runs at each
/// grid point. Replica `r` at grid point `g` uses seed `seed ^ (g << 32 | r)`.
pub fn remainder_norm_scan(
    spec: &PotentialSpec,
    field: &SteinGradientField,
    sigma_inv_sqrt: &SpdMatrix,
    grid: &[(usize, f64)],
    replicas: usize,
    seed: u64,
) -> Result<Vec<ScanRow>> {
    if replicas == 0 {
        return Err(Error::InvalidParameter("replicas must be >= 1".into()));
    }
    let start = if spec.is_quadratic() { StartKind::GaussianExact } else { StartKind::Warmup };
    let mut rows = Vec::with_capacity(grid.len() * SCAN_TERMS.len());
    for (gi, &(n, eta)) in grid.iter().enumerate() {
        let norms: Vec<[f64; 9]> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| -> Result<[f64; 9]> {
                let cfg = ChainConfig::new(eta, n, spec.dim, seed ^ ((gi as u64) << 32 | r)).with_start(start);
                let run = simulate(spec, &cfg)?;
                let dec = decompose(&run, field)?;
                let norm = |v: &[f64]| norm2(&sigma_inv_sqrt.mul_vec(v));
                let mut out = [0.0; 9];
                out[0] = norm(&dec.h_n);
                for j in 0..6 {
                    out[1 + j] = norm(&dec.r_terms[j]);
                }
                out[7] = dec.residual_norm();
                out[8] = norm(&dec.r_total());
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for (t, term) in SCAN_TERMS.iter().enumerate() {
            let xs: Vec<f64> = norms.iter().map(|v| v[t]).collect();
            let mean_abs =
                if replicas == 1 { Estimate { mean: xs[0], stderr: f64::NAN } } else { Estimate::from_samples(&xs) };
            let max_abs = xs.iter().copied().fold(0.0, f64::max);
            rows.push(ScanRow { n, eta, term, mean_abs, max_abs });
        }
    }
    Ok(rows)
}

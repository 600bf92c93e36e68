//! Closed forms for the linear case `∇U(x) = Ax`.
//!
//! The chain is then an AR(1) process and the scaled ergodic average is an
//! explicit linear combination of the innovations,
//! `W_n = n^{-1/2} Σ_{k=0}^{n-1} √2 A⁻¹(I − (I−ηA)^{n−k}) ξ_k` with
//! `ξ_0 = X_0 / √(2η)`. Every quantity below is evaluated in the
//! eigenbasis of `A`, where matrix powers are scalar powers.

use crate::chain::{linear_stationary_covariance, ChainRun};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{gaussian_w2, op_norm, Eigen, Matrix, SpdMatrix};
use crate::potential::{PotentialKind, PotentialSpec};
use crate::rng::NormalStream;
use crate::stats::{Estimate, VecAcc};

#[derive(Debug, Clone)]
pub struct LinearCaseModel {
    pub a: SpdMatrix,
    pub eta: f64,
    pub n: usize,
    /// Covariance of `X_0`.
    pub sigma0: SpdMatrix,
    /// Whether `X_0` is centered Gaussian (so that `W_n` is exactly Gaussian).
    pub start_gaussian: bool,
}

impl LinearCaseModel {
    pub fn new(a: SpdMatrix, eta: f64, n: usize, sigma0: SpdMatrix, start_gaussian: bool) -> Result<Self> {
        check_dim(a.dim(), sigma0.dim())?;
        let e = a.eigen()?;
        if !(e.lambda_min() > 0.0) {
            return Err(Error::Singular { lambda_min: e.lambda_min() });
        }
        if !(eta > 0.0) || eta * e.lambda_max() >= 2.0 {
            return Err(Error::InvalidParameter(format!(
                "‖I − ηA‖_op must be < 1 (eta = {eta}, lambda_max = {})",
                e.lambda_max()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        Ok(Self { a, eta, n, sigma0, start_gaussian })
    }

    /// Model started from the exact stationary law of the chain.
    pub fn stationary(a: SpdMatrix, eta: f64, n: usize) -> Result<Self> {
        let sigma0 = linear_stationary_covariance(&a, eta)?;
        Self::new(a, eta, n, sigma0, true)
    }

    pub fn from_spec(spec: &PotentialSpec, eta: f64, n: usize) -> Result<Self> {
        match &spec.kind {
            PotentialKind::Quadratic { a } => Self::stationary(a.clone(), eta, n),
            _ => Err(Error::Unsupported("linear analytics need a quadratic potential".into())),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    fn eigen(&self) -> &Eigen {
        self.a.eigen().expect("eigendecomposition checked at construction")
    }
}

/// `√2 A⁻¹ (I − (I − ηA)^{n−k})`, the matrix multiplying `ξ_k` in `Z_k`.
pub fn z_coefficient(model: &LinearCaseModel, k: usize) -> Result<Matrix> {
    if k >= model.n {
        return Err(Error::IndexOutOfRange { index: k, lo: 0, hi: model.n - 1 });
    }
    let power = (model.n - k) as i32;
    let eta = model.eta;
    Ok(model.eigen().map(|l| std::f64::consts::SQRT_2 * (1.0 - (1.0 - eta * l).powi(power)) / l))
}

/// `Σ_{m=1}^{n−1} (1 − b^m)²` by geometric sums.
fn squared_partial_sum(b: f64, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let m = (n - 1) as i32;
    let g1 = b * (1.0 - b.powi(m)) / (1.0 - b);
    let g2 = b * b * (1.0 - b.powi(2 * m)) / (1.0 - b * b);
    (n - 1) as f64 - 2.0 * g1 + g2
}

/// Finite-n covariance `Σ_n = Cov(W_n)`.
pub fn sigma_n(model: &LinearCaseModel) -> Result<SpdMatrix> {
    let (eta, n) = (model.eta, model.n);
    let e = model.eigen();
    let nf = n as f64;
    let p = e.map(|l| (1.0 - (1.0 - eta * l).powi(n as i32)) / l);
    let boundary = p.matmul(model.sigma0.matrix()).matmul(&p).scale(1.0 / (nf * eta));
    let tail = e.map(|l| 2.0 / nf * squared_partial_sum(1.0 - eta * l, n) / (l * l));
    SpdMatrix::new(boundary.add(&tail))
}

/// `Σ = 2A⁻²`.
pub fn sigma_infinity(a: &SpdMatrix) -> Result<SpdMatrix> {
    let inv = a.inverse()?;
    inv.map_spectrum(|l| 2.0 * l * l)
}

/// `Σ^{-1/2} = A / √2` for the linear case.
pub fn sigma_inv_sqrt_linear(a: &SpdMatrix) -> Result<SpdMatrix> {
    a.map_spectrum(|l| l / std::f64::consts::SQRT_2)
}

/// `𝒲₂(Σ^{-1/2} W_n, γ)`, exact because `W_n ~ N(0, Σ_n)` under a Gaussian start.
pub fn exact_w2_to_gamma(model: &LinearCaseModel) -> Result<f64> {
    if !model.start_gaussian {
        return Err(Error::Unsupported(
            "W_n is not Gaussian for a non-Gaussian start; use an empirical distance".into(),
        ));
    }
    let s_n = sigma_n(model)?;
    let whiten = sigma_inv_sqrt_linear(&model.a)?;
    let normalized = s_n.congruence(whiten.matrix())?;
    gaussian_w2(&normalized, &SpdMatrix::identity(model.dim()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceGap {
    /// `‖Σ_n − Σ‖_op`
    pub op_norm_gap: f64,
    /// `op_norm_gap · n η / d`
    pub bound_ratio: f64,
}

pub fn lemma_a1_ratio(model: &LinearCaseModel) -> Result<CovarianceGap> {
    let gap = op_norm(&sigma_n(model)?.matrix().sub(sigma_infinity(&model.a)?.matrix()));
    Ok(CovarianceGap { op_norm_gap: gap, bound_ratio: gap * model.n as f64 * model.eta / model.dim() as f64 })
}

/// `W_n` rebuilt from the innovations of a linear run via the `Z_k` representation.
pub fn w_n_from_innovations(model: &LinearCaseModel, run: &ChainRun) -> Result<Vec<f64>> {
    check_dim(model.dim(), run.dim())?;
    if run.n() < model.n {
        return Err(Error::InvalidParameter("run shorter than model horizon".into()));
    }
    let e = model.eigen();
    let (eta, n, d) = (model.eta, model.n, model.dim());
    let q = &e.vectors;
    // accumulate in the eigenbasis
    let mut acc = VecAcc::new(d);
    let xi0: Vec<f64> = run.state(0).iter().map(|x| x / (2.0 * eta).sqrt()).collect();
    let mut coef = vec![0.0; d];
    for k in 0..n {
        let xi = if k == 0 { xi0.as_slice() } else { run.xi(k) };
        let c = q.tr_mul_vec(xi);
        let power = (n - k) as i32;
        for (j, l) in e.values.iter().enumerate() {
            coef[j] = std::f64::consts::SQRT_2 * (1.0 - (1.0 - eta * l).powi(power)) / l * c[j];
        }
        acc.add_scaled(&coef, 1.0);
    }
    let in_basis = acc.values();
    Ok(q.mul_vec(&in_basis).iter().map(|v| v / (n as f64).sqrt()).collect())
}

/// Synchronous-coupling comparison between a chain started at a fixed
/// point and one started from the stationary Gaussian law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingReport {
    /// RMS of `|Σ^{-1/2}(W_n − W_n′)|` over replicas; an upper bound on the
    /// 2-Wasserstein distance between the two laws of `Σ^{-1/2}W_n`.
    pub measured: f64,
    /// `(nη)^{-1/2} κ RMS|Σ_n^{-1/2}(X_0 − X_0′)|` with the explicit linear-case
    /// constant `κ = ‖Σ^{-1/2} A⁻¹(I − (I−ηA)ⁿ) Σ_n^{1/2}‖_op`.
    pub bound: f64,
    /// RMS of `|Σ_n^{-1/2}(X_0 − X_0′)|`.
    pub start_moment: f64,
    pub kappa: f64,
}

/// Runs `replicas` coupled pairs sharing innovations. Only the start
/// difference propagates into `W_n − W_n′`, so the innovations after `X_0`
/// cancel exactly and are not simulated.
pub fn coupling_gap(model: &LinearCaseModel, start: &[f64], replicas: usize, seed: u64) -> Result<CouplingReport> {
    check_dim(model.dim(), start.len())?;
    if replicas == 0 {
        return Err(Error::InvalidParameter("replicas must be >= 1".into()));
    }
    let d = model.dim();
    let (eta, n) = (model.eta, model.n);
    let stationary = linear_stationary_covariance(&model.a, eta)?;
    let root0 = crate::linalg::sqrt_spd(&stationary)?;
    let e = model.eigen();
    let p = e.map(|l| (1.0 - (1.0 - eta * l).powi(n as i32)) / l);
    let whiten = sigma_inv_sqrt_linear(&model.a)?;
    let s_n = sigma_n(model)?;
    let s_n_inv_half = crate::linalg::inv_sqrt_spd(&s_n)?;
    let s_n_half = crate::linalg::sqrt_spd(&s_n)?;
    let kappa = op_norm(&whiten.matrix().matmul(&p).matmul(s_n_half.matrix()));
    let scale = 1.0 / (n as f64 * eta).sqrt();

    let mut stream = NormalStream::new(seed);
    let mut sq_w = Vec::with_capacity(replicas);
    let mut sq_x = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let z = stream.normal_vec(d);
        let gaussian_start = root0.mul_vec(&z);
        let diff: Vec<f64> = start.iter().zip(&gaussian_start).map(|(a, b)| a - b).collect();
        let dw: Vec<f64> = p.mul_vec(&diff).iter().map(|v| v * scale).collect();
        let wdw = whiten.mul_vec(&dw);
        sq_w.push(wdw.iter().map(|v| v * v).sum::<f64>());
        let wx = s_n_inv_half.mul_vec(&diff);
        sq_x.push(wx.iter().map(|v| v * v).sum::<f64>());
    }
    let measured = Estimate::from_samples(&sq_w).mean.sqrt();
    let start_moment = Estimate::from_samples(&sq_x).mean.sqrt();
    Ok(CouplingReport { measured, bound: scale * kappa * start_moment, start_moment, kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{simulate, ChainConfig, StartKind};
    use crate::linalg::hs_norm;

    fn scalar(a: f64, eta: f64, n: usize, s0: f64) -> LinearCaseModel {
        LinearCaseModel::new(SpdMatrix::from_diag(&[a]), eta, n, SpdMatrix::from_diag(&[s0]), true).unwrap()
    }

    #[test]
    fn z_coefficient_examples() {
        let m = scalar(1.0, 0.1, 10, 1.0);
        let last = z_coefficient(&m, 9).unwrap();
        assert!((last.get(0, 0) - std::f64::consts::SQRT_2 * 0.1).abs() < 1e-15);
        // n - k = 2: √2 (1 − 0.81)
        let z = z_coefficient(&m, 8).unwrap().get(0, 0);
        assert!((z - 0.268_700_576_850_888).abs() < 1e-14);
        let long = scalar(2.0, 0.1, 5000, 1.0);
        let z0 = z_coefficient(&long, 0).unwrap().get(0, 0);
        assert!((z0 - std::f64::consts::SQRT_2 / 2.0).abs() < 1e-14);
        assert!(matches!(z_coefficient(&m, 10), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn sigma_n_single_step_is_eta_sigma0() {
        let a = SpdMatrix::new(Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap()).unwrap();
        let s0 = SpdMatrix::new(Matrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 3.0]]).unwrap()).unwrap();
        let m = LinearCaseModel::new(a, 0.1, 1, s0.clone(), true).unwrap();
        let s1 = sigma_n(&m).unwrap();
        assert!(hs_norm(&s1.matrix().sub(&s0.matrix().scale(0.1))) < 1e-14);
    }

    #[test]
    fn sigma_n_matches_brute_force_series() {
        // direct summation of (1/n) Σ E[Z_k Z_kᵀ] for a scalar model
        for &(a, eta, n, s0) in &[(1.0, 0.1, 7usize, 2.0), (2.0, 0.05, 200, 0.7), (0.5, 0.2, 33, 1.3)] {
            let m = scalar(a, eta, n, s0);
            let b: f64 = 1.0 - eta * a;
            let mut total = (1.0 - b.powi(n as i32)).powi(2) / (a * a) * s0 / eta;
            for i in 1..n {
                total += 2.0 * (1.0 - b.powi((n - i) as i32)).powi(2) / (a * a);
            }
            total /= n as f64;
            let closed = sigma_n(&m).unwrap().matrix().get(0, 0);
            assert!((closed - total).abs() < 1e-12 * total, "{closed} vs {total}");
        }
    }

    #[test]
    fn sigma_infinity_values() {
        assert_eq!(sigma_infinity(&SpdMatrix::identity(2)).unwrap().matrix(), &Matrix::from_diag(&[2.0, 2.0]));
        let s = sigma_infinity(&SpdMatrix::from_diag(&[1.0, 2.0])).unwrap();
        assert!(hs_norm(&s.matrix().sub(&Matrix::from_diag(&[2.0, 0.5]))) < 1e-15);
        let a = SpdMatrix::new(Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.2]]).unwrap()).unwrap();
        let (lo, hi) = (a.lambda_min().unwrap(), a.lambda_max().unwrap());
        for l in &sigma_infinity(&a).unwrap().eigen().unwrap().values {
            assert!(*l >= 2.0 / (hi * hi) - 1e-12 && *l <= 2.0 / (lo * lo) + 1e-12);
        }
        assert!(sigma_infinity(&SpdMatrix::from_diag(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn exact_w2_examples() {
        // Σ_1 = 0.1 · 2 = 0.2, Σ = 2 → |sqrt(0.1) − 1|
        let m = scalar(1.0, 0.1, 1, 2.0);
        let w = exact_w2_to_gamma(&m).unwrap();
        assert!((w - (1.0 - 0.1f64.sqrt())).abs() < 1e-14);
        assert!((w - 0.683_772_233_983_162).abs() < 1e-14);
        let mut g = m.clone();
        g.start_gaussian = false;
        assert!(matches!(exact_w2_to_gamma(&g), Err(Error::Unsupported(_))));
    }

    #[test]
    fn exact_w2_vanishes_when_sigma_n_equals_sigma() {
        // n = 1 with Σ₀ = Σ/η makes Σ_1 = Σ.
        let m = scalar(1.0, 0.1, 1, 20.0);
        assert!(exact_w2_to_gamma(&m).unwrap() < 1e-7);
    }

    #[test]
    fn gap_halves_when_n_doubles() {
        let a = SpdMatrix::from_diag(&[1.0, 2.0]);
        let g1 = lemma_a1_ratio(&LinearCaseModel::stationary(a.clone(), 0.01, 20_000).unwrap()).unwrap();
        let g2 = lemma_a1_ratio(&LinearCaseModel::stationary(a, 0.01, 40_000).unwrap()).unwrap();
        let r = g1.op_norm_gap / g2.op_norm_gap;
        assert!((r - 2.0).abs() < 0.05, "{r}");
        assert!((g1.bound_ratio / g2.bound_ratio - 1.0).abs() < 0.05);
    }

    #[test]
    fn gap_against_series_d1() {
        let m = scalar(1.0, 0.05, 500, 1.0);
        let b: f64 = 0.95;
        let mut total = (1.0 - b.powi(500)).powi(2) / 0.05;
        for i in 1..500 {
            total += 2.0 * (1.0 - b.powi(500 - i)).powi(2);
        }
        total /= 500.0;
        let gap = lemma_a1_ratio(&m).unwrap().op_norm_gap;
        assert!((gap - (total - 2.0).abs()).abs() < 1e-12);
    }

    #[test]
    fn representation_identity_on_simulated_run() {
        let a = SpdMatrix::new(
            Matrix::from_rows(&[vec![1.5, 0.4, 0.0], vec![0.4, 1.0, 0.1], vec![0.0, 0.1, 2.0]]).unwrap(),
        )
        .unwrap();
        let spec = PotentialSpec::quadratic(a.clone()).unwrap();
        let (eta, n) = (0.05, 300);
        let run = simulate(&spec, &ChainConfig::new(eta, n, 3, 5).with_start(StartKind::GaussianExact)).unwrap();
        let model = LinearCaseModel::stationary(a, eta, n).unwrap();
        let rep = w_n_from_innovations(&model, &run).unwrap();
        let mut direct = vec![0.0; 3];
        for k in 0..n {
            for (dv, x) in direct.iter_mut().zip(run.state(k)) {
                *dv += x;
            }
        }
        for (r, dv) in rep.iter().zip(&direct) {
            let w = (eta / n as f64).sqrt() * dv;
            assert!((r - w).abs() < 1e-10, "{r} vs {w}");
        }
    }

    #[test]
    fn sigma_n_matches_monte_carlo() {
        let a = SpdMatrix::from_diag(&[1.0, 2.0]);
        let spec = PotentialSpec::quadratic(a.clone()).unwrap();
        let (eta, n) = (0.1, 64);
        let model = LinearCaseModel::stationary(a, eta, n).unwrap();
        let target = sigma_n(&model).unwrap();
        let reps = 100_000u64;
        let ws: Vec<Vec<f64>> = (0..reps)
            .map(|r| {
                let cfg = ChainConfig::new(eta, n, 2, r).with_start(StartKind::GaussianExact);
                let run = simulate(&spec, &cfg).unwrap();
                let mut s = [0.0; 2];
                for k in 0..n {
                    s[0] += run.state(k)[0];
                    s[1] += run.state(k)[1];
                }
                s.iter().map(|v| v * (eta / n as f64).sqrt()).collect()
            })
            .collect();
        for i in 0..2 {
            for j in 0..2 {
                let e = Estimate::from_samples(&ws.iter().map(|w| w[i] * w[j]).collect::<Vec<_>>());
                assert!(e.within(target.matrix().get(i, j), 4.0), "({i},{j}) {e:?}");
            }
        }
    }

    #[test]
    fn coupling_gap_is_within_bound() {
        let a = SpdMatrix::from_diag(&[1.0, 2.0]);
        for n in [16, 256, 4096] {
            let model = LinearCaseModel::stationary(a.clone(), 0.05, n).unwrap();
            let rep = coupling_gap(&model, &[3.0, -1.0], 2000, 9).unwrap();
            assert!(rep.measured <= rep.bound * (1.0 + 1e-12), "{rep:?}");
            assert!(rep.measured > 0.0);
        }
    }

    #[test]
    fn w2_is_nonincreasing_on_grid() {
        let a = SpdMatrix::from_diag(&[1.0, 2.0]);
        let mut prev = f64::INFINITY;
        for n in [64, 128, 256, 512, 1024, 2048] {
            let w = exact_w2_to_gamma(&LinearCaseModel::stationary(a.clone(), 0.05, n).unwrap()).unwrap();
            assert!(w <= prev);
            prev = w;
        }
    }

    #[test]
    fn rejects_non_contracting_step() {
        assert!(LinearCaseModel::stationary(SpdMatrix::from_diag(&[1.0, 30.0]), 0.1, 10).is_err());
    }
}

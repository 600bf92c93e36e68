//! Strongly convex, smooth potentials and their derivative oracles.
//!
//! Two closed families are supported: quadratics `U(x) = xᵀAx/2` and the
//! separable family `U(x) = Σ_i α x_i²/2 + ε log cosh(x_i)`. Both have
//! `∇U(0) = 0` and explicit constants (α, β, M).

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, SpdMatrix};

/// Grid used to bound the log-cosh derivatives.
const GRID_HALF_WIDTH: f64 = 20.0;
const GRID_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    Quadratic { a: SpdMatrix },
    SeparableLogCosh { alpha: f64, eps: f64 },
}

/// A potential satisfying strong convexity, smoothness and bounded
/// higher derivatives, together with its constants.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub alpha: f64,
    pub beta: f64,
    pub m_bound: f64,
    pub dim: usize,
}

/// Serialized form used in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PotentialConfig {
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a_diag: Option<Vec<f64>>,
        /// Alternative to `a_diag`: eigenvalues spread linearly over `[lo, hi]`
        /// for whatever dimension the grid asks for.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a_range: Option<[f64; 2]>,
    },
    Logcosh {
        alpha: f64,
        eps: f64,
        dim: usize,
    },
}

impl PotentialConfig {
    /// Builds the potential, overriding the dimension when `dim` is given
    /// and the family allows it.
    pub fn build(&self, dim: Option<usize>) -> Result<PotentialSpec> {
        match self {
            PotentialConfig::Quadratic { a_diag: Some(diag), a_range: None } => {
                if let Some(d) = dim {
                    check_dim(diag.len(), d)?;
                }
                PotentialSpec::quadratic_diag(diag)
            }
            PotentialConfig::Quadratic { a_diag: None, a_range: Some([lo, hi]) } => {
                let d = dim.ok_or_else(|| Error::InvalidParameter("a_range needs a dimension from the grid".into()))?;
                PotentialSpec::quadratic_diag(&linspace_spectrum(*lo, *hi, d))
            }
            PotentialConfig::Quadratic { .. } => {
                Err(Error::InvalidParameter("quadratic potential needs exactly one of a_diag, a_range".into()))
            }
            PotentialConfig::Logcosh { alpha, eps, dim: d0 } => {
                PotentialSpec::log_cosh(*alpha, *eps, dim.unwrap_or(*d0))
            }
        }
    }

    /// The dimension fixed by the config itself, if any.
    pub fn native_dim(&self) -> Option<usize> {
        match self {
            PotentialConfig::Quadratic { a_diag: Some(d), .. } => Some(d.len()),
            PotentialConfig::Quadratic { .. } => None,
            PotentialConfig::Logcosh { dim, .. } => Some(*dim),
        }
    }
}

fn linspace_spectrum(lo: f64, hi: f64, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![lo];
    }
    (0..d).map(|i| lo + (hi - lo) * i as f64 / (d - 1) as f64).collect()
}

/// The scalar log-cosh potential `u(t) = α t²/2 + ε log cosh t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLogCosh {
    pub alpha: f64,
    pub eps: f64,
}

impl ScalarLogCosh {
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        0.5 * self.alpha * t * t + self.eps * log_cosh(t)
    }

    #[inline]
    pub fn d1(&self, t: f64) -> f64 {
        self.alpha * t + self.eps * t.tanh()
    }

    #[inline]
    pub fn d2(&self, t: f64) -> f64 {
        self.alpha + self.eps * sech2(t)
    }

    #[inline]
    pub fn d3(&self, t: f64) -> f64 {
        self.eps * log_cosh_d3(t)
    }
}

#[inline]
fn log_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

#[inline]
fn sech2(t: f64) -> f64 {
    let c = t.cosh();
    if c.is_infinite() {
        0.0
    } else {
        1.0 / (c * c)
    }
}

// Derivatives of log cosh beyond the second, in terms of s = sech², τ = tanh.
#[inline]
fn log_cosh_d3(t: f64) -> f64 {
    -2.0 * sech2(t) * t.tanh()
}

#[inline]
fn log_cosh_d4(t: f64) -> f64 {
    let (s, tau) = (sech2(t), t.tanh());
    4.0 * s * tau * tau - 2.0 * s * s
}

#[inline]
fn log_cosh_d5(t: f64) -> f64 {
    let (s, tau) = (sech2(t), t.tanh());
    -8.0 * s * tau.powi(3) + 16.0 * s * s * tau
}

#[inline]
fn log_cosh_d6(t: f64) -> f64 {
    let (s, tau) = (sech2(t), t.tanh());
    16.0 * s * tau.powi(4) - 88.0 * s * s * tau * tau + 16.0 * s.powi(3)
}

#[inline]
fn log_cosh_d7(t: f64) -> f64 {
    // derivative of d6 through ds = -2 s τ, dτ = s
    let (s, tau) = (sech2(t), t.tanh());
    let ds = -2.0 * s * tau;
    16.0 * (ds * tau.powi(4) + 4.0 * s * tau.powi(3) * s) - 88.0 * (2.0 * s * ds * tau * tau + s * s * 2.0 * tau * s)
        + 48.0 * s * s * ds
}

/// Upper bound on `sup |g|` from a uniform grid on `[-20, 20]`.
///
/// When the grid maximizer is interior and `g'` changes sign across it, the
/// true maximum exceeds the grid maximum by at most `max|g''| h² / 2`;
/// otherwise the first-order slack `max|g'| h` is used.
fn certified_abs_max(g: impl Fn(f64) -> f64, g1: impl Fn(f64) -> f64, g2: impl Fn(f64) -> f64) -> f64 {
    let steps = (2.0 * GRID_HALF_WIDTH / GRID_STEP).round() as usize;
    let at = |k: usize| -GRID_HALF_WIDTH + k as f64 * GRID_STEP;
    let mut best = 0.0f64;
    let mut best_k = 0;
    let mut max_g1 = 0.0f64;
    let mut max_g2 = 0.0f64;
    for k in 0..=steps {
        let t = at(k);
        let v = g(t).abs();
        if v > best {
            best = v;
            best_k = k;
        }
        max_g1 = max_g1.max(g1(t).abs());
        max_g2 = max_g2.max(g2(t).abs());
    }
    if best == 0.0 {
        return 0.0;
    }
    let interior = best_k > 0 && best_k < steps;
    let sign_change = interior && {
        let s = g(at(best_k)).signum();
        let left = s * g1(at(best_k - 1));
        let right = s * g1(at(best_k + 1));
        left >= 0.0 && right <= 0.0
    };
    if sign_change {
        best + 0.5 * max_g2 * GRID_STEP * GRID_STEP
    } else {
        best + max_g1 * GRID_STEP
    }
}

fn log_cosh_d3_sup() -> f64 {
    static SUP: OnceLock<f64> = OnceLock::new();
    *SUP.get_or_init(|| certified_abs_max(log_cosh_d3, log_cosh_d4, log_cosh_d5))
}

/// Bound on the third, fourth and fifth derivatives of `log cosh`.
fn log_cosh_m_bound() -> f64 {
    static SUP: OnceLock<f64> = OnceLock::new();
    *SUP.get_or_init(|| {
        let d4 = certified_abs_max(log_cosh_d4, log_cosh_d5, log_cosh_d6);
        let d5 = certified_abs_max(log_cosh_d5, log_cosh_d6, log_cosh_d7);
        log_cosh_d3_sup().max(d4).max(d5)
    })
}

impl PotentialSpec {
    pub fn quadratic(a: SpdMatrix) -> Result<Self> {
        let e = a.eigen()?;
        let (alpha, beta) = (e.lambda_min(), e.lambda_max());
        if !(alpha > 0.0) {
            return Err(Error::Singular { lambda_min: alpha });
        }
        let dim = a.dim();
        Ok(Self { kind: PotentialKind::Quadratic { a }, alpha, beta, m_bound: 0.0, dim })
    }

    pub fn quadratic_diag(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidParameter("empty spectrum".into()));
        }
        Self::quadratic(SpdMatrix::from_diag(diag))
    }

    pub fn log_cosh(alpha: f64, eps: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0) || !(eps >= 0.0) || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "log-cosh potential needs alpha > 0, eps >= 0, dim >= 1 (got {alpha}, {eps}, {dim})"
            )));
        }
        let m_bound = if eps == 0.0 { 0.0 } else { eps * log_cosh_m_bound() };
        Ok(Self { kind: PotentialKind::SeparableLogCosh { alpha, eps }, alpha, beta: alpha + eps, m_bound, dim })
    }

    /// Largest admissible step size, `α / (2β²)`.
    pub fn max_step(&self) -> f64 {
        self.alpha / (2.0 * self.beta * self.beta)
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, PotentialKind::Quadratic { .. })
    }

    /// The per-coordinate scalar potential, for the separable family.
    pub fn scalar(&self) -> Option<ScalarLogCosh> {
        match self.kind {
            PotentialKind::SeparableLogCosh { alpha, eps } => Some(ScalarLogCosh { alpha, eps }),
            PotentialKind::Quadratic { .. } => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(match &self.kind {
            PotentialKind::Quadratic { a } => 0.5 * x.iter().zip(a.mul_vec(x)).map(|(u, v)| u * v).sum::<f64>(),
            PotentialKind::SeparableLogCosh { alpha, eps } => {
                let u = ScalarLogCosh { alpha: *alpha, eps: *eps };
                x.iter().map(|&t| u.value(t)).sum()
            }
        })
    }

    pub fn grad_u(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.grad_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked gradient into a caller buffer.
    #[inline]
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            PotentialKind::Quadratic { a } => a.matrix().mul_vec_into(x, out),
            PotentialKind::SeparableLogCosh { alpha, eps } => {
                for (o, &t) in out.iter_mut().zip(x) {
                    *o = alpha * t + eps * t.tanh();
                }
            }
        }
    }

    pub fn hessian_u(&self, x: &[f64]) -> Result<SpdMatrix> {
        check_dim(self.dim, x.len())?;
        Ok(match &self.kind {
            PotentialKind::Quadratic { a } => a.clone(),
            PotentialKind::SeparableLogCosh { .. } => SpdMatrix::from_diag(&self.hessian_diag(x)),
        })
    }

    /// Hessian as a plain matrix (unchecked dimension).
    pub fn hessian_matrix(&self, x: &[f64]) -> Matrix {
        match &self.kind {
            PotentialKind::Quadratic { a } => a.matrix().clone(),
            PotentialKind::SeparableLogCosh { .. } => Matrix::from_diag(&self.hessian_diag(x)),
        }
    }

    /// Diagonal of the Hessian for the separable family.
    pub fn hessian_diag(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            PotentialKind::Quadratic { a } => a.matrix().diag(),
            PotentialKind::SeparableLogCosh { alpha, eps } => x.iter().map(|&t| alpha + eps * sech2(t)).collect(),
        }
    }

    /// Certified upper bound on `sup_x ‖∇³U(x)‖_op`.
    pub fn third_derivative_bound(&self) -> f64 {
        match self.kind {
            PotentialKind::Quadratic { .. } => 0.0,
            PotentialKind::SeparableLogCosh { eps, .. } => {
                if eps == 0.0 {
                    0.0
                } else {
                    eps * log_cosh_d3_sup()
                }
            }
        }
    }

    pub fn to_config(&self) -> PotentialConfig {
        match &self.kind {
            PotentialKind::Quadratic { a } => {
                PotentialConfig::Quadratic { a_diag: Some(a.matrix().diag()), a_range: None }
            }
            PotentialKind::SeparableLogCosh { alpha, eps } => {
                PotentialConfig::Logcosh { alpha: *alpha, eps: *eps, dim: self.dim }
            }
        }
    }
}

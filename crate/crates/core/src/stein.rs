//! Gradients of the Stein solutions `φ_i` of `𝒜φ_i = x_i − π(x_i)`, where
//! `𝒜f = −∇U·∇f + Δf` is the Langevin generator.
//!
//! Sign convention: `φ_i` solves the generator equation exactly as written,
//! which for a quadratic potential gives `∇φ_i = −A⁻¹e_i`. Every quantity
//! built downstream (`Σ`, `|D|`, `|δ|`, `Ξ`) is invariant under the global
//! flip `φ ↦ −φ`.
//!
//! Three kinds of field are provided:
//! - linear: closed form for `U(x) = xᵀAx/2`;
//! - separable quadrature: for `U(x) = Σ u(x_i)` the problem reduces to the
//!   scalar ODE `−u′ψ′ + ψ″ = t − m`, whose bounded solution is
//!   `ψ′(x) = e^{u(x)} ∫_{−∞}^x (y − m) e^{−u(y)} dy`; it is tabulated on a
//!   uniform grid and interpolated with cubic Hermite splines;
//! - trajectory Monte Carlo: `∇φ = −∫_0^∞ E[∇X_t^x] dt` estimated by
//!   simulating the diffusion together with its Jacobian flow
//!   `d∇X_t = −∇²U(X_t) ∇X_t dt`. First derivatives only.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, SpdMatrix};
use crate::potential::{PotentialKind, PotentialSpec, ScalarLogCosh};
use crate::quadrature::adaptive_simpson;
use crate::rng::NormalStream;
use crate::stats::Estimate;
use crate::tolerances;

/// Knots in a separable table.
pub const TABLE_KNOTS: usize = 4096;

/// `e^{-40}`: integrands are cut where the weight drops below this.
const REACH_LOG: f64 = 40.0;

/// Distance beyond `x` (in direction `sign`) where `u` has grown by `REACH_LOG`,
/// from `u(x + sR) − u(x) ≥ s u′(x) R + α R²/2`.
fn reach(u: &ScalarLogCosh, x: f64, sign: f64) -> f64 {
    let slope = sign * u.d1(x);
    (-slope + (slope * slope + 2.0 * u.alpha * REACH_LOG).sqrt()) / u.alpha
}

/// Integrates on `[a, b]` split into equal panels so that the adaptive rule
/// sees the shape of the integrand.
fn panel_integral(f: impl Fn(f64) -> f64 + Copy, a: f64, b: f64, panels: usize, tol: f64) -> Result<f64> {
    let w = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * w;
        total += adaptive_simpson(f, lo, lo + w, tol / panels as f64)?;
    }
    Ok(total)
}

/// Mean of the density `∝ e^{−u}` and its normalizer.
fn scalar_moments(u: &ScalarLogCosh, tol: f64) -> Result<(f64, f64)> {
    let r = reach(u, 0.0, 1.0).max(reach(u, 0.0, -1.0));
    let u0 = u.value(0.0);
    let z = panel_integral(|y| (u0 - u.value(y)).exp(), -r, r, 16, tol)?;
    let first = panel_integral(|y| y * (u0 - u.value(y)).exp(), -r, r, 16, tol)?;
    Ok((first / z, z))
}

/// `ψ′(x)` straight from the integral representation, using the tail on the
/// side away from the mean so the integrand stays bounded.
fn psi_prime_direct(u: &ScalarLogCosh, m: f64, x: f64, tol: f64) -> Result<f64> {
    let ux = u.value(x);
    let f = |y: f64| (y - m) * (ux - u.value(y)).exp();
    if x >= m {
        let r = reach(u, x, 1.0);
        Ok(-panel_integral(f, x, x + r, 8, tol)?)
    } else {
        let r = reach(u, x, -1.0);
        panel_integral(f, x - r, x, 8, tol)
    }
}

/// Cubic Hermite tables for the scalar Stein solution `ψ` and its
/// derivatives on `[−L, L]`.
#[derive(Debug, Clone)]
pub struct SeparableTable {
    pub u: ScalarLogCosh,
    /// `m = π(h)` for the coordinate map.
    pub mean: f64,
    pub half_width: f64,
    pub tol: f64,
    step: f64,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
    primitive: Vec<f64>,
}

#[inline]
fn hermite(f0: f64, f1: f64, df0: f64, df1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    f0 * (2.0 * s3 - 3.0 * s2 + 1.0) + h * df0 * (s3 - 2.0 * s2 + s) + f1 * (-2.0 * s3 + 3.0 * s2) + h * df1 * (s3 - s2)
}

/// `∫_0^s` of the Hermite cubic, in units of the knot spacing.
#[inline]
fn hermite_integral(f0: f64, f1: f64, df0: f64, df1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    h * (f0 * (0.5 * s4 - s3 + s)
        + h * df0 * (0.25 * s4 - 2.0 / 3.0 * s3 + 0.5 * s2)
        + f1 * (-0.5 * s4 + s3)
        + h * df1 * (0.25 * s4 - s3 / 3.0))
}

impl SeparableTable {
    fn knot(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.step
    }

    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !(x >= -self.half_width && x <= self.half_width) {
            return None;
        }
        let pos = (x + self.half_width) / self.step;
        let j = (pos.floor() as usize).min(self.d1.len() - 2);
        Some((j, pos - j as f64))
    }

    /// `ψ′(x)`
    pub fn d1(&self, x: f64) -> f64 {
        match self.locate(x) {
            Some((j, s)) => hermite(self.d1[j], self.d1[j + 1], self.d2[j], self.d2[j + 1], self.step, s),
            None => psi_prime_direct(&self.u, self.mean, x, self.tol).unwrap_or(f64::NAN),
        }
    }

    /// `ψ″ = u′ψ′ + (x − m)`
    pub fn d2(&self, x: f64) -> f64 {
        self.u.d1(x) * self.d1(x) + (x - self.mean)
    }

    /// `ψ‴ = u″ψ′ + u′ψ″ + 1`
    pub fn d3(&self, x: f64) -> f64 {
        let p1 = self.d1(x);
        let p2 = self.u.d1(x) * p1 + (x - self.mean);
        self.u.d2(x) * p1 + self.u.d1(x) * p2 + 1.0
    }

    /// All three derivatives at once.
    pub fn derivatives(&self, x: f64) -> (f64, f64, f64) {
        let p1 = self.d1(x);
        let u1 = self.u.d1(x);
        let p2 = u1 * p1 + (x - self.mean);
        (p1, p2, self.u.d2(x) * p1 + u1 * p2 + 1.0)
    }

    /// `ψ(x)`, normalized by `ψ(−L) = 0`.
    pub fn value(&self, x: f64) -> f64 {
        if let Some((j, s)) = self.locate(x) {
            return self.primitive[j]
                + hermite_integral(self.d1[j], self.d1[j + 1], self.d2[j], self.d2[j + 1], self.step, s);
        }
        let (edge, base) = if x > 0.0 {
            (self.half_width, *self.primitive.last().expect("non-empty table"))
        } else {
            (-self.half_width, 0.0)
        };
        let f = |y: f64| psi_prime_direct(&self.u, self.mean, y, self.tol).unwrap_or(f64::NAN);
        base + adaptive_simpson(f, edge, x, self.tol).unwrap_or(f64::NAN)
    }

    /// Knot positions and tabulated `(ψ′, ψ″, ψ‴)` values.
    pub fn knots(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        (0..self.d1.len()).map(move |j| (self.knot(j), self.d1[j], self.d2[j], self.d3[j]))
    }

    /// `2 E_π[ψ′²]`, the diagonal entry of `Σ`, by quadrature.
    pub fn sigma_diagonal(&self) -> Result<f64> {
        let u = &self.u;
        let r = reach(u, 0.0, 1.0).max(reach(u, 0.0, -1.0));
        let u0 = u.value(0.0);
        let z = panel_integral(|y| (u0 - u.value(y)).exp(), -r, r, 16, self.tol)?;
        let num = panel_integral(
            |y| {
                let p = self.d1(y);
                p * p * (u0 - u.value(y)).exp()
            },
            -r,
            r,
            16,
            self.tol,
        )?;
        Ok(2.0 * num / z)
    }

    const MAGIC: &'static [u8; 4] = b"LCST";
    const VERSION: u32 = 1;

    /// Little-endian binary dump: magic `LCST`, version, `alpha, eps, mean,
    /// half_width, tol` as f64, knot count u32, then the `ψ′, ψ″, ψ‴, ψ` columns.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        for v in [self.u.alpha, self.u.eps, self.mean, self.half_width, self.tol] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.d1.len() as u32).to_le_bytes())?;
        for col in [&self.d1, &self.d2, &self.d3, &self.primitive] {
            for v in col.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if &b4 != Self::MAGIC {
            return Err(Error::InvalidParameter("not a Stein table (bad magic)".into()));
        }
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != Self::VERSION {
            return Err(Error::Unsupported(format!("Stein table version {version}")));
        }
        let mut head = [0.0; 5];
        for v in head.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        r.read_exact(&mut b4)?;
        let k = u32::from_le_bytes(b4) as usize;
        if k < 2 {
            return Err(Error::InvalidParameter("Stein table needs at least two knots".into()));
        }
        let mut cols: [Vec<f64>; 4] = Default::default();
        for col in cols.iter_mut() {
            col.reserve(k);
            for _ in 0..k {
                r.read_exact(&mut b8)?;
                col.push(f64::from_le_bytes(b8));
            }
        }
        let [d1, d2, d3, primitive] = cols;
        let [alpha, eps, mean, half_width, tol] = head;
        Ok(Self {
            u: ScalarLogCosh { alpha, eps },
            mean,
            half_width,
            tol,
            step: 2.0 * half_width / (k - 1) as f64,
            d1,
            d2,
            d3,
            primitive,
        })
    }
}

/// Tabulates the scalar Stein solution for `u` on `[−L, L]`.
pub fn solve_separable_1d(u: ScalarLogCosh, tol: f64, half_width: f64) -> Result<SeparableTable> {
    if !(u.alpha > 0.0) {
        return Err(Error::InvalidParameter("scalar potential must be strongly convex".into()));
    }
    let (mean, z) = scalar_moments(&u, tol)?;
    // Convexity gives e^{−u(y)} ≤ e^{−u(L) − u′(L)(y − L)} beyond L.
    let u0 = u.value(0.0);
    let tail_hi = (u0 - u.value(half_width)).exp() / (u.d1(half_width) * z);
    let tail_lo = (u0 - u.value(-half_width)).exp() / (-u.d1(-half_width) * z);
    let tail = tail_hi + tail_lo;
    if !(half_width > 0.0) || !(tail <= 1e-12) {
        return Err(Error::InvalidParameter(format!("half width {half_width} leaves tail mass {tail:e} > 1e-12")));
    }
    let k = TABLE_KNOTS;
    let step = 2.0 * half_width / (k - 1) as f64;
    let d1: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|j| psi_prime_direct(&u, mean, -half_width + j as f64 * step, tol))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = (0..k).map(|j| -half_width + j as f64 * step).collect();
    let d2: Vec<f64> = xs.iter().zip(&d1).map(|(&x, &p)| u.d1(x) * p + (x - mean)).collect();
    let d3: Vec<f64> =
        xs.iter().zip(d1.iter().zip(&d2)).map(|(&x, (&p1, &p2))| u.d2(x) * p1 + u.d1(x) * p2 + 1.0).collect();
    let mut primitive = vec![0.0; k];
    for j in 1..k {
        primitive[j] = primitive[j - 1] + hermite_integral(d1[j - 1], d1[j], d2[j - 1], d2[j], step, 1.0);
    }
    Ok(SeparableTable { u, mean, half_width, tol, step, d1, d2, d3, primitive })
}

/// Default half width `max(10, 8/√α)`.
pub fn default_half_width(alpha: f64) -> f64 {
    10f64.max(8.0 / alpha.sqrt())
}

/// Settings of the trajectory estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySettings {
    pub horizon: f64,
    pub paths: usize,
    pub step: f64,
    pub seed: u64,
}

impl TrajectorySettings {
    /// `T = 20/α`, `h = min(1/(50β), 10⁻²)`, 1024 paths.
    pub fn defaults(spec: &PotentialSpec, seed: u64) -> Self {
        Self { horizon: 20.0 / spec.alpha, paths: 1024, step: (1.0 / (50.0 * spec.beta)).min(1e-2), seed }
    }
}

#[derive(Debug, Clone)]
pub enum FieldKind {
    /// `∇φ_i = −A⁻¹e_i`; stores `A⁻¹`.
    LinearAnalytic {
        a_inv: Matrix,
    },
    SeparableQuadrature {
        table: Arc<SeparableTable>,
    },
    TrajectoryMc {
        spec: PotentialSpec,
        settings: TrajectorySettings,
    },
}

#[derive(Debug, Clone)]
pub struct SteinGradientField {
    pub kind: FieldKind,
    pub dim: usize,
}

/// Exact field for a quadratic potential.
pub fn solve_linear(a: &SpdMatrix) -> Result<SteinGradientField> {
    let a_inv = a.inverse()?.into_matrix();
    Ok(SteinGradientField { kind: FieldKind::LinearAnalytic { a_inv }, dim: a.dim() })
}

/// Quadrature field for the separable log-cosh family.
pub fn solve_separable(spec: &PotentialSpec) -> Result<SteinGradientField> {
    let u = spec.scalar().ok_or_else(|| Error::Unsupported("separable solver needs a separable potential".into()))?;
    let table = solve_separable_1d(u, tolerances::QUADRATURE_ABS, default_half_width(u.alpha))?;
    Ok(SteinGradientField { kind: FieldKind::SeparableQuadrature { table: Arc::new(table) }, dim: spec.dim })
}

/// Exact field for any shipped potential.
pub fn solve_exact(spec: &PotentialSpec) -> Result<SteinGradientField> {
    match &spec.kind {
        PotentialKind::Quadratic { a } => solve_linear(a),
        PotentialKind::SeparableLogCosh { .. } => solve_separable(spec),
    }
}

pub fn trajectory_field(spec: &PotentialSpec, settings: TrajectorySettings) -> SteinGradientField {
    SteinGradientField { kind: FieldKind::TrajectoryMc { spec: spec.clone(), settings }, dim: spec.dim }
}

impl SteinGradientField {
    /// Whether `∇²φ` and `∇³φ` are available.
    pub fn has_higher_derivatives(&self) -> bool {
        !matches!(self.kind, FieldKind::TrajectoryMc { .. })
    }

    /// `π(h_i)` per coordinate.
    pub fn pi_mean(&self) -> Vec<f64> {
        match &self.kind {
            FieldKind::SeparableQuadrature { table } => vec![table.mean; self.dim],
            _ => vec![0.0; self.dim],
        }
    }

    /// Whether `∇φ` does not depend on `x`.
    pub fn is_constant_gradient(&self) -> bool {
        matches!(self.kind, FieldKind::LinearAnalytic { .. })
    }

    /// `φ_i(x)`, up to an additive constant per coordinate.
    pub fn value(&self, i: usize, x: &[f64]) -> Result<f64> {
        match &self.kind {
            FieldKind::LinearAnalytic { a_inv } => Ok(-crate::stats::dot(a_inv.row(i), x)),
            FieldKind::SeparableQuadrature { table } => Ok(table.value(x[i])),
            FieldKind::TrajectoryMc { .. } => Err(Error::MissingDerivatives { order: 0 }),
        }
    }

    /// Matrix whose row `i` is `∇φ_i(x)`.
    pub fn grad_matrix(&self, x: &[f64]) -> Result<Matrix> {
        check_dim(self.dim, x.len())?;
        match &self.kind {
            FieldKind::LinearAnalytic { a_inv } => Ok(a_inv.scale(-1.0)),
            FieldKind::SeparableQuadrature { table } => {
                Ok(Matrix::from_diag(&x.iter().map(|&t| table.d1(t)).collect::<Vec<_>>()))
            }
            FieldKind::TrajectoryMc { spec, settings } => {
                let est = grad_phi_trajectory(spec, x, settings)?;
                Ok(est.estimate.transpose().scale(-1.0))
            }
        }
    }

    /// `(⟨∇φ_i(x), v⟩)_i`
    pub fn grad_apply(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            FieldKind::LinearAnalytic { a_inv } => Ok(a_inv.mul_vec(v).iter().map(|y| -y).collect()),
            FieldKind::SeparableQuadrature { table } => Ok(x.iter().zip(v).map(|(&t, &w)| table.d1(t) * w).collect()),
            FieldKind::TrajectoryMc { .. } => Ok(self.grad_matrix(x)?.mul_vec(v)),
        }
    }

    /// `⟨∇²φ_i(x), u vᵀ⟩_HS`
    pub fn hess_contract(&self, i: usize, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        match &self.kind {
            FieldKind::LinearAnalytic { .. } => Ok(0.0),
            FieldKind::SeparableQuadrature { table } => Ok(table.d2(x[i]) * u[i] * v[i]),
            FieldKind::TrajectoryMc { .. } => Err(Error::MissingDerivatives { order: 2 }),
        }
    }

    /// `Δφ_i(x)`
    pub fn laplacian(&self, i: usize, x: &[f64]) -> Result<f64> {
        match &self.kind {
            FieldKind::LinearAnalytic { .. } => Ok(0.0),
            FieldKind::SeparableQuadrature { table } => Ok(table.d2(x[i])),
            FieldKind::TrajectoryMc { .. } => Err(Error::MissingDerivatives { order: 2 }),
        }
    }

    /// `⟨∇³φ_i(x), u ⊗ v ⊗ w⟩`
    pub fn third_contract(&self, i: usize, x: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
        match &self.kind {
            FieldKind::LinearAnalytic { .. } => Ok(0.0),
            FieldKind::SeparableQuadrature { table } => Ok(table.d3(x[i]) * u[i] * v[i] * w[i]),
            FieldKind::TrajectoryMc { .. } => Err(Error::MissingDerivatives { order: 3 }),
        }
    }

    /// `𝒜φ_i(x) − (x_i − π(h_i))`; zero for an exact solution.
    pub fn generator_residual(&self, spec: &PotentialSpec, i: usize, x: &[f64]) -> Result<f64> {
        let g = spec.grad_u(x)?;
        let grad_i = self.grad_matrix(x)?.row(i).to_vec();
        let drift = -crate::stats::dot(&g, &grad_i);
        Ok(drift + self.laplacian(i, x)? - (x[i] - self.pi_mean()[i]))
    }

    /// `Σ` computed without sampling, where a closed form or quadrature exists.
    pub fn sigma_exact(&self) -> Option<Result<SpdMatrix>> {
        match &self.kind {
            FieldKind::LinearAnalytic { a_inv } => Some(SpdMatrix::new(a_inv.matmul(&a_inv.transpose()).scale(2.0))),
            FieldKind::SeparableQuadrature { table } => {
                Some(table.sigma_diagonal().map(|s| SpdMatrix::from_diag(&vec![s; self.dim])))
            }
            FieldKind::TrajectoryMc { .. } => None,
        }
    }
}

/// `Σ̂` with entrywise standard errors.
#[derive(Debug, Clone)]
pub struct SigmaEstimate {
    pub sigma: SpdMatrix,
    pub stderr: Matrix,
}

/// `Σ̂_{ij} = mean over samples of 2 ∇φ_i(x)ᵀ∇φ_j(x)`. The linear field
/// returns `2A⁻²` directly.
pub fn estimate_sigma(field: &SteinGradientField, samples: &[Vec<f64>]) -> Result<SigmaEstimate> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    if let FieldKind::LinearAnalytic { .. } = field.kind {
        let sigma = field.sigma_exact().expect("linear field has a closed form")?;
        return Ok(SigmaEstimate { sigma, stderr: Matrix::zeros(field.dim, field.dim) });
    }
    let d = field.dim;
    let per_sample: Vec<Matrix> = samples
        .par_iter()
        .map(|x| -> Result<Matrix> {
            let g = field.grad_matrix(x)?;
            Ok(g.matmul(&g.transpose()).scale(2.0))
        })
        .collect::<Result<_>>()?;
    let mut mean = Matrix::zeros(d, d);
    let mut stderr = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let e = Estimate::from_samples(&per_sample.iter().map(|m| m.get(i, j)).collect::<Vec<_>>());
            mean.set(i, j, e.mean);
            stderr.set(i, j, e.stderr);
        }
    }
    Ok(SigmaEstimate { sigma: SpdMatrix::new(mean)?, stderr })
}

/// One transition of the Jacobian flow, `J ← exp(−h ∇²U(x)) J`.
///
/// The matrix exponential integrates the linear flow exactly over a step with
/// the Hessian frozen, so the flow stays inside `[e^{−βt}, e^{−αt}]` in
/// operator norm for any step size.
struct FlowPropagator {
    constant: Option<Matrix>,
}

impl FlowPropagator {
    fn new(spec: &PotentialSpec, h: f64) -> Result<Self> {
        let constant = match &spec.kind {
            PotentialKind::Quadratic { a } => Some(a.map_spectrum(|l| (-h * l).exp())?.into_matrix()),
            PotentialKind::SeparableLogCosh { .. } => None,
        };
        Ok(Self { constant })
    }

    fn apply(&self, spec: &PotentialSpec, x: &[f64], h: f64, j: &mut Matrix) {
        match &self.constant {
            Some(e) => *j = e.matmul(j),
            None => {
                let diag = spec.hessian_diag(x);
                for (r, l) in diag.iter().enumerate() {
                    let f = (-h * l).exp();
                    for v in j.row_mut(r) {
                        *v *= f;
                    }
                }
            }
        }
    }
}

/// A simulated diffusion path together with its Jacobian flow.
#[derive(Debug, Clone)]
pub struct JacobiFlowPath {
    pub times: Vec<f64>,
    /// Row-major `(steps + 1) × d`.
    pub states: Vec<f64>,
    /// `∇X_t` at each grid time.
    pub flows: Vec<Matrix>,
}

fn flow_grid(horizon: f64, step: f64) -> (usize, f64) {
    if horizon == 0.0 {
        return (0, 0.0);
    }
    let steps = (horizon / step - 1e-9).ceil().max(1.0) as usize;
    (steps, horizon / steps as f64)
}

/// Euler–Maruyama for `dX = −∇U(X)dt + √2 dB` jointly with the Jacobian flow
/// `d∇X = −∇²U(X)∇X dt`, `∇X_0 = I`, on a uniform grid of step `≤ h`.
pub fn jacobi_flow(spec: &PotentialSpec, x0: &[f64], horizon: f64, step: f64, seed: u64) -> Result<JacobiFlowPath> {
    check_dim(spec.dim, x0.len())?;
    let max_step = (1e-2f64).min(1.0 / (10.0 * spec.beta));
    if !(step > 0.0) || step > max_step {
        return Err(Error::InvalidParameter(format!("flow step {step} must lie in (0, {max_step}]")));
    }
    if !(horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {horizon}")));
    }
    let d = spec.dim;
    let (steps, h) = flow_grid(horizon, step);
    let prop = FlowPropagator::new(spec, h)?;
    let mut stream = NormalStream::new(seed);
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut j = Matrix::identity(d);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * d);
    let mut flows = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.extend_from_slice(&x);
    flows.push(j.clone());
    let noise = (2.0 * h).sqrt();
    for k in 0..steps {
        prop.apply(spec, &x, h, &mut j);
        spec.grad_into(&x, &mut grad);
        stream.fill_normal(&mut xi);
        for i in 0..d {
            x[i] += -h * grad[i] + noise * xi[i];
        }
        times.push((k + 1) as f64 * h);
        states.extend_from_slice(&x);
        flows.push(j.clone());
    }
    Ok(JacobiFlowPath { times, states, flows })
}

/// Monte Carlo estimate of `∫_0^T E[(∇X_t^x)ᵀ] dt`, i.e. `−∇φ` in this
/// module's sign convention (column `i` is `−∇φ_i(x)`).
#[derive(Debug, Clone)]
pub struct TrajectoryGradient {
    pub estimate: Matrix,
    pub stderr: Matrix,
    /// `e^{−αT}/α`, a bound on the truncated tail of the time integral.
    pub tail_bound: f64,
}

pub fn grad_phi_trajectory(
    spec: &PotentialSpec,
    x: &[f64],
    settings: &TrajectorySettings,
) -> Result<TrajectoryGradient> {
    check_dim(spec.dim, x.len())?;
    let TrajectorySettings { horizon, paths, step, seed } = *settings;
    let tail_bound = (-spec.alpha * horizon).exp() / spec.alpha;
    if !(horizon >= 10.0 / spec.alpha) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} < 10/alpha; truncated tail bound {tail_bound:e}"
        )));
    }
    if paths == 0 {
        return Err(Error::InvalidParameter("paths must be >= 1".into()));
    }
    if !(step > 0.0) || step > 1.0 / (10.0 * spec.beta) {
        return Err(Error::InvalidParameter(format!("flow step {step} exceeds 1/(10 beta)")));
    }
    let d = spec.dim;
    let (steps, h) = flow_grid(horizon, step);
    let prop = FlowPropagator::new(spec, h)?;
    let integrals: Vec<Matrix> = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut stream = NormalStream::for_replica(seed, p);
            let mut xs = x.to_vec();
            let mut grad = vec![0.0; d];
            let mut xi = vec![0.0; d];
            let mut j = Matrix::identity(d);
            let mut acc = j.scale(0.5 * h);
            let noise = (2.0 * h).sqrt();
            for k in 0..steps {
                prop.apply(spec, &xs, h, &mut j);
                spec.grad_into(&xs, &mut grad);
                stream.fill_normal(&mut xi);
                for i in 0..d {
                    xs[i] += -h * grad[i] + noise * xi[i];
                }
                let w = if k + 1 == steps { 0.5 * h } else { h };
                acc.add_assign_scaled(&j, w);
            }
            acc.transpose()
        })
        .collect();
    let mut estimate = Matrix::zeros(d, d);
    let mut stderr = Matrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            let e = Estimate::from_samples(&integrals.iter().map(|m| m.get(r, c)).collect::<Vec<_>>());
            estimate.set(r, c, e.mean);
            stderr.set(r, c, if paths == 1 { 0.0 } else { e.stderr });
        }
    }
    Ok(TrajectoryGradient { estimate, stderr, tail_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hs_norm, op_norm};

    fn logcosh_table(eps: f64) -> SeparableTable {
        let u = ScalarLogCosh { alpha: 1.0, eps };
        solve_separable_1d(u, 1e-10, 10.0).unwrap()
    }

    #[test]
    fn quadratic_reduction_is_constant() {
        let u = ScalarLogCosh { alpha: 1.0, eps: 0.0 };
        let t = solve_separable_1d(u, 1e-10, 10.0).unwrap();
        for x in [-9.0, -2.5, 0.0, 0.3, 7.7] {
            assert!((t.d1(x) + 1.0).abs() < 1e-9, "{}", t.d1(x));
            assert!(t.d2(x).abs() < 1e-8);
            assert!(t.d3(x).abs() < 1e-8);
        }
        // a = 2: φ′ = −1/a
        let t = solve_separable_1d(ScalarLogCosh { alpha: 2.0, eps: 0.0 }, 1e-10, 10.0).unwrap();
        assert!((t.d1(1.234) + 0.5).abs() < 1e-8);
    }

    #[test]
    fn symmetric_potential_has_even_gradient() {
        let t = logcosh_table(0.5);
        assert!(t.mean.abs() < 1e-12);
        for x in [0.1, 0.9, 2.2, 4.0] {
            assert!((t.d1(x) - t.d1(-x)).abs() < 1e-10);
        }
    }

    #[test]
    fn knots_match_direct_quadrature_off_grid() {
        let t = logcosh_table(0.5);
        for x in [-3.217, -0.0123, 0.5001, 1.7777, 6.01] {
            let direct = psi_prime_direct(&t.u, t.mean, x, 1e-11).unwrap();
            assert!((t.d1(x) - direct).abs() < 1e-9, "{x}: {} vs {direct}", t.d1(x));
        }
    }

    #[test]
    fn ode_residual_against_finite_differences() {
        // ψ″ from the ODE vs a central difference of the interpolated ψ′,
        // and the ODE residual itself with that difference.
        let t = logcosh_table(0.5);
        let h = 1e-4;
        for (x, _, _, _) in t.knots().step_by(97) {
            if x.abs() > 9.0 {
                continue;
            }
            let fd2 = (t.d1(x + h) - t.d1(x - h)) / (2.0 * h);
            let residual = -t.u.d1(x) * t.d1(x) + fd2 - (x - t.mean);
            assert!(residual.abs() < 1e-6, "{x}: {residual}");
            let fd3 = (t.d2(x + h) - t.d2(x - h)) / (2.0 * h);
            assert!((fd3 - t.d3(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn primitive_is_consistent_with_gradient() {
        let t = logcosh_table(0.5);
        for &(a, b) in &[(-1.0, 2.0), (0.3, 0.31), (-8.0, 8.0)] {
            let integral = adaptive_simpson(|y| t.d1(y), a, b, 1e-12).unwrap();
            assert!((t.value(b) - t.value(a) - integral).abs() < 1e-9);
        }
        // outside the table, continuity at the edge
        assert!((t.value(10.0 + 1e-9) - t.value(10.0)).abs() < 1e-7);
    }

    #[test]
    fn gradient_band() {
        let t = logcosh_table(0.5);
        // 1/β ≤ |ψ′| ≤ 1/α with α = 1, β = 1.5
        for (_, p1, _, _) in t.knots() {
            assert!(p1.abs() <= 1.0 + 1e-9 && p1.abs() >= 1.0 / 1.5 - 1e-9, "{p1}");
        }
    }

    #[test]
    fn tail_check_rejects_narrow_domain() {
        let u = ScalarLogCosh { alpha: 1.0, eps: 0.5 };
        assert!(solve_separable_1d(u, 1e-10, 3.0).is_err());
    }

    #[test]
    fn linear_field_properties() {
        let f = solve_linear(&SpdMatrix::from_diag(&[2.0])).unwrap();
        assert!((f.grad_matrix(&[3.0]).unwrap().get(0, 0).abs() - 0.5).abs() < 1e-15);
        let f = solve_linear(&SpdMatrix::identity(3)).unwrap();
        assert_eq!(f.grad_matrix(&[0.0; 3]).unwrap(), Matrix::identity(3).scale(-1.0));
        let a = SpdMatrix::new(Matrix::from_rows(&[vec![2.0, 0.4], vec![0.4, 1.0]]).unwrap()).unwrap();
        let f = solve_linear(&a).unwrap();
        let s = f.sigma_exact().unwrap().unwrap();
        let inv = a.inverse().unwrap();
        let target = inv.matrix().matmul(inv.matrix()).scale(2.0);
        assert!(hs_norm(&s.matrix().sub(&target)) < 1e-14);
    }

    #[test]
    fn generator_identity_holds() {
        let a = SpdMatrix::new(Matrix::from_rows(&[vec![2.0, 0.4], vec![0.4, 1.0]]).unwrap()).unwrap();
        let q = PotentialSpec::quadratic(a.clone()).unwrap();
        let f = solve_linear(&a).unwrap();
        let p = PotentialSpec::log_cosh(1.0, 0.5, 2).unwrap();
        let g = solve_separable(&p).unwrap();
        let mut s = NormalStream::new(3);
        for _ in 0..50 {
            let x = s.normal_vec(2).iter().map(|v| 2.0 * v).collect::<Vec<_>>();
            for i in 0..2 {
                assert!(f.generator_residual(&q, i, &x).unwrap().abs() < 1e-12);
                assert!(g.generator_residual(&p, i, &x).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn estimate_sigma_linear_is_exact() {
        let a = SpdMatrix::from_diag(&[1.0, 2.0]);
        let f = solve_linear(&a).unwrap();
        let est = estimate_sigma(&f, &[vec![0.0, 1.0], vec![5.0, -3.0]]).unwrap();
        assert_eq!(est.sigma.matrix(), &Matrix::from_diag(&[2.0, 0.5]));
        assert!(estimate_sigma(&f, &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn estimate_sigma_separable_matches_quadrature() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 1).unwrap();
        let f = solve_separable(&p).unwrap();
        let exact = f.sigma_exact().unwrap().unwrap().matrix().get(0, 0);
        // samples from a long stationary-ish chain with a small step
        let cfg = crate::chain::ChainConfig::new(0.01, 200_000, 1, 4).with_start(crate::chain::StartKind::Warmup);
        let run = crate::chain::simulate(&p, &cfg).unwrap();
        let samples: Vec<Vec<f64>> = (0..=run.n()).step_by(50).map(|k| run.state(k).to_vec()).collect();
        let est = estimate_sigma(&f, &samples).unwrap();
        let got = est.sigma.matrix().get(0, 0);
        assert!((got - exact).abs() <= 4.0 * est.stderr.get(0, 0) + 5e-3, "{got} vs {exact}");
        // band [2/β², 2/α²]
        assert!((2.0 / 2.25..=2.0).contains(&exact));
    }

    #[test]
    fn table_round_trips_through_binary() {
        let t = logcosh_table(0.3);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = SeparableTable::read_from(buf.as_slice()).unwrap();
        for x in [-4.2, 0.0, 1.1, 9.99] {
            assert_eq!(t.d1(x), back.d1(x));
            assert_eq!(t.value(x), back.value(x));
        }
        buf[1] = b'X';
        assert!(SeparableTable::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn flow_at_time_zero_is_identity() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 3).unwrap();
        let path = jacobi_flow(&p, &[0.0; 3], 0.0, 1e-3, 1).unwrap();
        assert_eq!(path.flows.len(), 1);
        assert_eq!(path.flows[0], Matrix::identity(3));
    }

    #[test]
    fn quadratic_flow_is_matrix_exponential() {
        let a = SpdMatrix::new(
            Matrix::from_rows(&[vec![1.5, 0.2, 0.0], vec![0.2, 1.0, 0.1], vec![0.0, 0.1, 2.0]]).unwrap(),
        )
        .unwrap();
        let p = PotentialSpec::quadratic(a.clone()).unwrap();
        let path = jacobi_flow(&p, &[1.0, 0.0, -1.0], 1.0, 1e-3, 1).unwrap();
        let last = path.flows.last().unwrap();
        let exact = a.map_spectrum(|l| (-l).exp()).unwrap();
        assert!(hs_norm(&last.sub(exact.matrix())) / hs_norm(exact.matrix()) < 1e-10);
    }

    #[test]
    fn flow_band_logcosh() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 3).unwrap();
        let path = jacobi_flow(&p, &[2.0, -1.0, 0.5], 5.0, 1e-2, 7).unwrap();
        for (t, j) in path.times.iter().zip(&path.flows) {
            let n = op_norm(j);
            assert!(n <= (-p.alpha * t).exp() * (1.0 + 1e-12));
            assert!(n >= (-p.beta * t).exp() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn flow_rejects_large_step() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 1).unwrap();
        assert!(jacobi_flow(&p, &[0.0], 1.0, 0.05, 0).is_err());
    }

    #[test]
    fn trajectory_gradient_quadratic_single_path() {
        let a = SpdMatrix::from_diag(&[1.0, 2.0]);
        let p = PotentialSpec::quadratic(a).unwrap();
        let s = TrajectorySettings { horizon: 20.0, paths: 1, step: 1e-2, seed: 0 };
        let g = grad_phi_trajectory(&p, &[0.5, 0.5], &s).unwrap();
        // A⁻¹(I − e^{−AT}) up to the O(h²) trapezoid error
        assert!((g.estimate.get(0, 0) - (1.0 - (-20.0f64).exp())).abs() < 1e-4);
        assert!((g.estimate.get(1, 1) - 0.5 * (1.0 - (-40.0f64).exp())).abs() < 1e-4);
        assert!(g.estimate.get(0, 1).abs() < 1e-15);
    }

    #[test]
    fn trajectory_gradient_rejects_short_horizon() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 1).unwrap();
        let s = TrajectorySettings { horizon: 5.0, paths: 4, step: 1e-2, seed: 0 };
        assert!(matches!(grad_phi_trajectory(&p, &[0.0], &s), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn trajectory_field_lacks_higher_derivatives() {
        let p = PotentialSpec::log_cosh(1.0, 0.5, 1).unwrap();
        let f = trajectory_field(&p, TrajectorySettings::defaults(&p, 1));
        assert!(!f.has_higher_derivatives());
        assert!(matches!(f.hess_contract(0, &[0.0], &[1.0], &[1.0]), Err(Error::MissingDerivatives { order: 2 })));
    }
}

//! Numerical tolerances shared across the crate.

/// Frobenius relative error allowed when an eigendecomposition reconstructs its input.
pub const RECONSTRUCTION: f64 = 1e-12;

/// Relative Frobenius residual allowed for `sqrt(m)^2 = m`.
pub const SQRT_RESIDUAL: f64 = 1e-10;

/// Negative radicands in the Bures formula down to this value are clamped to zero.
pub const W2_CLAMP: f64 = 1e-10;

/// Eigenvalues at or below this (relative to the spectral radius) count as singular.
pub const SINGULAR: f64 = 1e-14;

/// Hard cap on cyclic Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 64;

/// Absolute tolerance for the adaptive Simpson rule used by the Stein quadrature.
pub const QUADRATURE_ABS: f64 = 1e-10;

/// Largest cloud size accepted by the exact assignment solver.
pub const EXACT_TRANSPORT_CAP: usize = 4096;

/// Trajectories longer than this are not stored densely.
pub const DENSE_TRAJECTORY_CAP: usize = 1 << 24;

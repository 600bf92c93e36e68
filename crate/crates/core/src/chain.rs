//! The constant-step Langevin Monte Carlo chain
//! `X_{k+1} = X_k − η∇U(X_k) + √(2η) ξ_{k+1}`.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::SpdMatrix;
use crate::potential::{PotentialKind, PotentialSpec};
use crate::rng::{replica_seed, NormalStream};
use crate::stats::Estimate;
use crate::tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// `X_0 = 0`.
    Zero,
    /// `X_0` drawn from the exact stationary law of the chain (quadratic potentials only).
    GaussianExact,
    /// `X_0` is the end of a discarded run of `warmup` steps from zero.
    Warmup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub eta: f64,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Burn-in length; `None` means `ceil(10 / (α η))`.
    pub warmup: Option<usize>,
    pub start: StartKind,
}

impl ChainConfig {
    pub fn new(eta: f64, n: usize, d: usize, seed: u64) -> Self {
        Self { eta, n, d, seed, warmup: None, start: StartKind::Zero }
    }

    pub fn with_start(mut self, start: StartKind) -> Self {
        self.start = start;
        self
    }

    pub fn with_warmup(mut self, warmup: usize) -> Self {
        self.warmup = Some(warmup);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn warmup_steps(&self, spec: &PotentialSpec) -> usize {
        self.warmup.unwrap_or_else(|| default_warmup(spec, self.eta))
    }

    pub fn validate(&self, spec: &PotentialSpec) -> Result<()> {
        check_dim(spec.dim, self.d)?;
        if !(self.eta > 0.0) || self.eta >= spec.max_step() {
            return Err(Error::InvalidParameter(format!(
                "step size {} outside (0, alpha/(2 beta^2)) = (0, {})",
                self.eta,
                spec.max_step()
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("chain length n must be >= 1".into()));
        }
        if self.start == StartKind::GaussianExact && !spec.is_quadratic() {
            return Err(Error::Unsupported("exact Gaussian start exists only for quadratic potentials".into()));
        }
        Ok(())
    }
}

/// `ceil(10 / (α η))`, the default burn-in.
pub fn default_warmup(spec: &PotentialSpec, eta: f64) -> usize {
    (10.0 / (spec.alpha * eta)).ceil() as usize
}

/// A stored trajectory `X_0 … X_n` with its innovations `ξ_1 … ξ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub config: ChainConfig,
    states: Vec<f64>,
    innovations: Vec<f64>,
}

impl ChainRun {
    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn dim(&self) -> usize {
        self.config.d
    }

    pub fn eta(&self) -> f64 {
        self.config.eta
    }

    /// `X_k` for `k` in `0..=n`.
    #[inline]
    pub fn state(&self, k: usize) -> &[f64] {
        let d = self.config.d;
        &self.states[k * d..(k + 1) * d]
    }

    /// `ξ_j` for `j` in `1..=n`.
    #[inline]
    pub fn xi(&self, j: usize) -> &[f64] {
        let d = self.config.d;
        &self.innovations[(j - 1) * d..j * d]
    }

    pub fn states_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn innovations_flat(&self) -> &[f64] {
        &self.innovations
    }
}

/// One chain transition.
pub fn lmc_step(spec: &PotentialSpec, eta: f64, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    check_dim(spec.dim, x.len())?;
    check_dim(spec.dim, xi.len())?;
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {eta}")));
    }
    let mut grad = vec![0.0; spec.dim];
    let mut out = vec![0.0; spec.dim];
    lmc_step_into(spec, eta, x, xi, &mut grad, &mut out);
    Ok(out)
}

/// Unchecked transition into caller buffers.
#[inline]
pub fn lmc_step_into(spec: &PotentialSpec, eta: f64, x: &[f64], xi: &[f64], grad: &mut [f64], out: &mut [f64]) {
    spec.grad_into(x, grad);
    let noise = (2.0 * eta).sqrt();
    for i in 0..x.len() {
        out[i] = x[i] - eta * grad[i] + noise * xi[i];
    }
}

/// Stationary covariance of the linear chain: solves `S = (I−ηA) S (I−ηA) + 2ηI`,
/// which in the eigenbasis of `A` is `2 / (λ (2 − ηλ))`.
pub fn linear_stationary_covariance(a: &SpdMatrix, eta: f64) -> Result<SpdMatrix> {
    a.map_spectrum(|l| 2.0 / (l * (2.0 - eta * l)))
}

fn initial_state(spec: &PotentialSpec, config: &ChainConfig, stream: &mut NormalStream) -> Result<Vec<f64>> {
    let d = config.d;
    match config.start {
        StartKind::Zero => Ok(vec![0.0; d]),
        StartKind::GaussianExact => {
            let PotentialKind::Quadratic { a } = &spec.kind else {
                return Err(Error::Unsupported("exact Gaussian start exists only for quadratic potentials".into()));
            };
            let cov = linear_stationary_covariance(a, config.eta)?;
            let root = crate::linalg::sqrt_spd(&cov)?;
            let z = stream.normal_vec(d);
            Ok(root.mul_vec(&z))
        }
        StartKind::Warmup => {
            let mut x = vec![0.0; d];
            let mut next = vec![0.0; d];
            let mut grad = vec![0.0; d];
            let mut xi = vec![0.0; d];
            for _ in 0..config.warmup_steps(spec) {
                stream.fill_normal(&mut xi);
                lmc_step_into(spec, config.eta, &x, &xi, &mut grad, &mut next);
                std::mem::swap(&mut x, &mut next);
            }
            Ok(x)
        }
    }
}

/// `X_0` as [`simulate`] would draw it for `config`.
pub fn start_state(spec: &PotentialSpec, config: &ChainConfig) -> Result<Vec<f64>> {
    config.validate(spec)?;
    initial_state(spec, config, &mut NormalStream::new(config.seed))
}

/// Innovations `ξ_1 … ξ_n` obtained by summing blocks of a finer i.i.d.
/// sequence of length `finest` (a multiple of `n`), scaled back to unit
/// variance. Chains of different lengths built from the same `seed` then
/// share the same underlying Brownian path, while each sequence is still
/// exactly i.i.d. standard normal.
pub fn aggregated_innovations(n: usize, d: usize, finest: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 || !finest.is_multiple_of(n) {
        return Err(Error::InvalidParameter(format!("finest length {finest} is not a multiple of n = {n}")));
    }
    let block = finest / n;
    let scale = 1.0 / (block as f64).sqrt();
    let mut stream = NormalStream::new(seed);
    let mut fine = vec![0.0; d];
    let mut out = vec![0.0; n * d];
    for k in 0..n {
        let dst = &mut out[k * d..(k + 1) * d];
        for _ in 0..block {
            stream.fill_normal(&mut fine);
            for (o, f) in dst.iter_mut().zip(&fine) {
                *o += f;
            }
        }
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}

/// Runs the chain described by `config`.
///
/// Draw order on the stream keyed by `config.seed`: the `d` normals of an
/// exact Gaussian start (if any), the warmup innovations (if any), then
/// `ξ_1 … ξ_n`.
pub fn simulate(spec: &PotentialSpec, config: &ChainConfig) -> Result<ChainRun> {
    config.validate(spec)?;
    if config.n > tolerances::DENSE_TRAJECTORY_CAP {
        return Err(Error::Unsupported(format!("n = {} exceeds the dense storage cap; use ChainStream", config.n)));
    }
    let d = config.d;
    let mut stream = NormalStream::new(config.seed);
    let x0 = initial_state(spec, config, &mut stream)?;
    let mut innovations = vec![0.0; config.n * d];
    stream.fill_normal(&mut innovations);
    replay_unchecked(spec, config.clone(), &x0, innovations)
}

/// Rebuilds a run from an explicit start and innovation sequence.
pub fn replay(spec: &PotentialSpec, config: ChainConfig, x0: &[f64], innovations: Vec<f64>) -> Result<ChainRun> {
    check_dim(spec.dim, config.d)?;
    check_dim(config.d, x0.len())?;
    check_dim(config.n * config.d, innovations.len())?;
    replay_unchecked(spec, config, x0, innovations)
}

fn replay_unchecked(spec: &PotentialSpec, config: ChainConfig, x0: &[f64], innovations: Vec<f64>) -> Result<ChainRun> {
    let d = config.d;
    let n = config.n;
    let mut states = vec![0.0; (n + 1) * d];
    states[..d].copy_from_slice(x0);
    let mut grad = vec![0.0; d];
    for k in 0..n {
        let (done, rest) = states.split_at_mut((k + 1) * d);
        let x = &done[k * d..];
        lmc_step_into(spec, config.eta, x, &innovations[k * d..(k + 1) * d], &mut grad, &mut rest[..d]);
    }
    if states.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("chain diverged".into()));
    }
    Ok(ChainRun { config, states, innovations })
}

/// Streams `X_0, X_1, …, X_n` without storing them; for long runs.
pub struct ChainStream<'a> {
    spec: &'a PotentialSpec,
    eta: f64,
    x: Vec<f64>,
    next: Vec<f64>,
    grad: Vec<f64>,
    xi: Vec<f64>,
    stream: NormalStream,
    remaining: usize,
    started: bool,
}

impl<'a> ChainStream<'a> {
    /// Same draw order (and hence the same states) as [`simulate`].
    pub fn new(spec: &'a PotentialSpec, config: &ChainConfig) -> Result<Self> {
        config.validate(spec)?;
        let mut stream = NormalStream::new(config.seed);
        let x = initial_state(spec, config, &mut stream)?;
        let d = config.d;
        Ok(Self {
            spec,
            eta: config.eta,
            x,
            next: vec![0.0; d],
            grad: vec![0.0; d],
            xi: vec![0.0; d],
            stream,
            remaining: config.n,
            started: false,
        })
    }

    /// Advances and returns the next state, `X_0` first.
    pub fn next_state(&mut self) -> Option<&[f64]> {
        if !self.started {
            self.started = true;
            return Some(&self.x);
        }
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        self.stream.fill_normal(&mut self.xi);
        lmc_step_into(self.spec, self.eta, &self.x, &self.xi, &mut self.grad, &mut self.next);
        std::mem::swap(&mut self.x, &mut self.next);
        Some(&self.x)
    }
}

/// Estimate of `E_{π_η}[|X|⁴ + 1]` from post-warmup states of independent replicas.
///
/// Each replica contributes the time average over its states `X_0 … X_n`;
/// the standard error is taken across replica averages. Replica `r` is
/// seeded with `config.seed ^ r`.
pub fn stationary_fourth_moment(spec: &PotentialSpec, config: &ChainConfig, replicas: usize) -> Result<Estimate> {
    if replicas < 2 {
        return Err(Error::InvalidParameter("need at least two replicas".into()));
    }
    config.validate(spec)?;
    let means: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let cfg = config.clone().with_seed(replica_seed(config.seed, r));
            let mut chain = ChainStream::new(spec, &cfg)?;
            let mut acc = crate::stats::NeumaierAcc::default();
            let mut count = 0usize;
            while let Some(x) = chain.next_state() {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                acc.add(r2 * r2 + 1.0);
                count += 1;
            }
            Ok(acc.value() / count as f64)
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&means))
}

const DUMP_MAGIC: &[u8; 4] = b"LCLT";
const DUMP_VERSION: u32 = 1;

/// Header and states read back from a binary trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDump {
    pub d: u32,
    pub n: u64,
    pub eta: f64,
    pub seed: u64,
    /// `(n + 1) * d` values, row-major.
    pub states: Vec<f64>,
}

/// Writes `magic "LCLT", version u32, d u32, n u64, eta f64, seed u64`
/// followed by the states, all little-endian.
pub fn write_trajectory<W: Write>(run: &ChainRun, mut w: W) -> Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&(run.dim() as u32).to_le_bytes())?;
    w.write_all(&(run.n() as u64).to_le_bytes())?;
    w.write_all(&run.eta().to_le_bytes())?;
    w.write_all(&run.config.seed.to_le_bytes())?;
    for v in &run.states {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(mut r: R) -> Result<TrajectoryDump> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::InvalidParameter("not a trajectory dump (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != DUMP_VERSION {
        return Err(Error::Unsupported(format!("trajectory dump version {version}")));
    }
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4);
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let eta = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    let count = (n as usize + 1) * d as usize;
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        states.push(f64::from_le_bytes(b8));
    }
    Ok(TrajectoryDump { d, n, eta, seed, states })
}

//! Transport distances between equal-size empirical measures.

use crate::error::{Error, Result};
use crate::rng::NormalStream;
use crate::stats::{dot, Estimate};
use crate::tolerances;

/// `m` points in `R^d` with uniform weights, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    dim: usize,
    points: Vec<f64>,
}

impl SampleCloud {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "cloud needs a positive multiple of d = {dim} coordinates, got {}",
                points.len()
            )));
        }
        Ok(Self { dim, points })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidParameter("points have mixed dimensions".into()));
        }
        Self::new(dim, points.concat())
    }

    /// `m` i.i.d. standard normal points from the stream keyed by `seed`.
    pub fn gaussian(m: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut s = NormalStream::new(seed);
        let mut pts = vec![0.0; m * dim];
        s.fill_normal(&mut pts);
        Self::new(dim, pts)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flat(&self) -> &[f64] {
        &self.points
    }

    fn project(&self, dir: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| dot(self.point(i), dir)).collect()
    }
}

fn check_pair(a: &SampleCloud, b: &SampleCloud) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, got: b.dim });
    }
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!("cloud sizes differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

#[inline]
fn ground_cost(x: &[f64], y: &[f64], p: u32) -> f64 {
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    match p {
        1 => s.sqrt(),
        2 => s,
        _ => s.sqrt().powi(p as i32),
    }
}

/// Costs as exact integers `k_ij · 2^shift`, when the dynamic range of the
/// instance fits comfortably in `i128`.
struct ExactCosts {
    ints: Vec<i128>,
    shift: i32,
}

fn decompose(c: f64) -> (u64, i32) {
    let bits = c.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mut mant, mut e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
    if mant == 0 {
        return (0, 0);
    }
    let tz = mant.trailing_zeros();
    mant >>= tz;
    e += tz as i32;
    (mant, e)
}

impl ExactCosts {
    fn new(cost: &[f64], m: usize) -> Option<Self> {
        let parts: Vec<(u64, i32)> = cost.iter().map(|&c| decompose(c)).collect();
        let shift = parts.iter().filter(|p| p.0 != 0).map(|p| p.1).min().unwrap_or(0);
        let headroom = 126 - (usize::BITS - m.leading_zeros()) as i32;
        let mut ints = Vec::with_capacity(cost.len());
        for &(mant, e) in &parts {
            if mant == 0 {
                ints.push(0);
                continue;
            }
            let width = 64 - mant.leading_zeros() as i32 + (e - shift);
            if width > headroom {
                return None;
            }
            ints.push((mant as i128) << (e - shift));
        }
        Some(Self { ints, shift })
    }

    fn total(&self, assign: &[usize], m: usize) -> i128 {
        assign.iter().enumerate().map(|(i, &j)| self.ints[i * m + j]).sum()
    }

    /// `total · 2^shift`, rounded once.
    fn to_f64(&self, total: i128) -> f64 {
        let half = self.shift / 2;
        (total as f64) * 2f64.powi(half) * 2f64.powi(self.shift - half)
    }
}

fn cost_matrix(a: &SampleCloud, b: &SampleCloud, p: u32) -> Vec<f64> {
    let m = a.len();
    let mut cost = vec![0.0; m * m];
    for i in 0..m {
        let x = a.point(i);
        for (j, c) in cost[i * m..(i + 1) * m].iter_mut().enumerate() {
            *c = ground_cost(x, b.point(j), p);
        }
    }
    cost
}

fn finish(total: f64, m: usize, p: u32) -> f64 {
    (total / m as f64).powf(1.0 / p as f64)
}

trait Weight:
    Copy
    + PartialOrd
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
{
    const ZERO: Self;
    const INF: Self;
}

impl Weight for f64 {
    const ZERO: Self = 0.0;
    const INF: Self = f64::INFINITY;
}

impl Weight for i128 {
    const ZERO: Self = 0;
    const INF: Self = i128::MAX;
}

/// Shortest augmenting paths with dual potentials; row `i` → column `assign[i]`.
fn hungarian<T: Weight>(cost: &[T], m: usize) -> Vec<usize> {
    debug_assert_eq!(cost.len(), m * m);
    // 1-based internal indexing; column 0 is the virtual source.
    let mut u = vec![T::ZERO; m + 1];
    let mut v = vec![T::ZERO; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![T::INF; m + 1];
    let mut used = vec![false; m + 1];
    for row in 1..=m {
        owner[0] = row;
        let mut j0 = 0usize;
        minv.fill(T::INF);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let crow = &cost[(i0 - 1) * m..i0 * m];
            let ui = u[i0];
            let mut delta = T::INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = crow[j - 1] - ui - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; m];
    for j in 1..=m {
        assign[owner[j] - 1] = j - 1;
    }
    assign
}

/// Optimal assignment for a square nonnegative cost matrix. Runs in exact
/// integer arithmetic on the floating-point costs whenever their dynamic range
/// allows, so ties and near-ties are resolved exactly.
pub fn solve_assignment(cost: &[f64], m: usize) -> Vec<usize> {
    match ExactCosts::new(cost, m) {
        Some(exact) => hungarian(&exact.ints, m),
        None => hungarian(cost, m),
    }
}

fn assignment_total(cost: &[f64], exact: Option<&ExactCosts>, assign: &[usize], m: usize) -> f64 {
    match exact {
        Some(e) => e.to_f64(e.total(assign, m)),
        None => assign.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum(),
    }
}

/// Exact `W_p` between equal-size clouds, `p ∈ {1, 2}`.
pub fn w_exact(a: &SampleCloud, b: &SampleCloud, p: u32) -> Result<f64> {
    check_pair(a, b)?;
    if p != 1 && p != 2 {
        return Err(Error::InvalidParameter(format!("p must be 1 or 2, got {p}")));
    }
    let m = a.len();
    if m > tolerances::EXACT_TRANSPORT_CAP {
        return Err(Error::Unsupported(format!(
            "exact transport capped at m = {}, got {m}",
            tolerances::EXACT_TRANSPORT_CAP
        )));
    }
    let cost = cost_matrix(a, b, p);
    let exact = ExactCosts::new(&cost, m);
    let assign = match &exact {
        Some(e) => hungarian(&e.ints, m),
        None => hungarian(&cost, m),
    };
    Ok(finish(assignment_total(&cost, exact.as_ref(), &assign, m), m, p))
}

/// Minimum over all permutations; for tests and tiny clouds only.
pub fn w_brute_force(a: &SampleCloud, b: &SampleCloud, p: u32) -> Result<f64> {
    check_pair(a, b)?;
    let m = a.len();
    if m > 9 {
        return Err(Error::Unsupported("brute force limited to m <= 9".into()));
    }
    let cost = cost_matrix(a, b, p);
    let exact = ExactCosts::new(&cost, m);
    let value = |perm: &[usize]| assignment_total(&cost, exact.as_ref(), perm, m);
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = value(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; m];
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(value(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(finish(best, m, p))
}

fn sorted_w1(mut x: Vec<f64>, mut y: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let total: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
    total / x.len() as f64
}

/// `W_1` in one dimension: mean gap between order statistics.
pub fn w1_sorted_1d(a: &SampleCloud, b: &SampleCloud) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim != 1 {
        return Err(Error::Unsupported(format!("sorted W1 needs d = 1, got {}", a.dim)));
    }
    Ok(sorted_w1(a.points.clone(), b.points.clone()))
}

/// Sliced `W_1`: average of 1-d distances along random unit directions.
/// A lower-bound-style proxy, not the full `W_1`.
pub fn w1_sliced(a: &SampleCloud, b: &SampleCloud, projections: usize, seed: u64) -> Result<Estimate> {
    check_pair(a, b)?;
    if projections == 0 {
        return Err(Error::InvalidParameter("projections must be >= 1".into()));
    }
    let mut s = NormalStream::new(seed);
    let mut vals = Vec::with_capacity(projections);
    for _ in 0..projections {
        let mut dir = s.normal_vec(a.dim);
        let norm = dot(&dir, &dir).sqrt();
        if norm == 0.0 {
            dir[0] = 1.0;
        } else {
            dir.iter_mut().for_each(|v| *v /= norm);
        }
        vals.push(sorted_w1(a.project(&dir), b.project(&dir)));
    }
    Ok(if projections == 1 { Estimate { mean: vals[0], stderr: f64::NAN } } else { Estimate::from_samples(&vals) })
}

/// Exact distance from `a` to `m` standard normal points drawn with `seed`.
pub fn w_to_gamma(a: &SampleCloud, p: u32, seed: u64) -> Result<f64> {
    let g = SampleCloud::gaussian(a.len(), a.dim, seed)?;
    w_exact(a, &g, p)
}

/// Mean `γ`-vs-`γ` distance at matched `(m, d)` over `seeds` independent pairs;
/// pair `k` uses seeds `(seed ^ 2k, seed ^ (2k+1))`.
pub fn noise_floor(m: usize, dim: usize, p: u32, seeds: usize, seed: u64) -> Result<Estimate> {
    if seeds < 2 {
        return Err(Error::InvalidParameter("noise floor needs at least two seeds".into()));
    }
    let vals: Vec<f64> = (0..seeds as u64)
        .map(|k| {
            let a = SampleCloud::gaussian(m, dim, seed ^ (2 * k))?;
            w_to_gamma(&a, p, seed ^ (2 * k + 1))
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&vals))
}

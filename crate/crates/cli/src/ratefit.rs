//! Least-squares fits of log-log rate curves.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
    pub noise_floor_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FitOutcome {
    Fit(RateFit),
    NoFit { reason: String, points_used: usize, noise_floor_excluded: usize },
}

impl FitOutcome {
    pub fn fit(&self) -> Option<&RateFit> {
        match self {
            FitOutcome::Fit(f) => Some(f),
            FitOutcome::NoFit { .. } => None,
        }
    }
}

/// Ordinary least squares of `log value` on `log x`, skipping points with
/// `value <= floor` (and any non-finite or non-positive value, which has no
/// logarithm). At least three distinct abscissae must survive.
pub fn fit_rate(points: &[(f64, f64)], floor: f64) -> FitOutcome {
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    let mut excluded = 0;
    for &(x, v) in points {
        if !(v > floor) || !(v > 0.0) || !v.is_finite() || !(x > 0.0) || !x.is_finite() {
            excluded += 1;
            continue;
        }
        xs.push(x.ln());
        ys.push(v.ln());
    }
    let used = xs.len();
    let no_fit = |reason: String| FitOutcome::NoFit { reason, points_used: used, noise_floor_excluded: excluded };
    if used < 3 {
        return no_fit(format!("only {used} points above the floor {floor:?}; need 3"));
    }
    let k = used as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return no_fit("abscissae are all equal".into());
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    FitOutcome::Fit(RateFit { slope, intercept, r_squared, points_used: used, noise_floor_excluded: excluded })
}

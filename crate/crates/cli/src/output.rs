//! Result rows, artifact writers and the run manifest.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::ratefit::FitOutcome;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// One line of `results.csv`. `n`, `eta` and `p` are absent for rows that
/// summarize a whole dimension; `stderr` is absent for exact metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: &'static str,
    pub d: usize,
    pub eta: Option<f64>,
    pub n: Option<usize>,
    pub p: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub seed: u64,
}

pub const RESULT_HEADER: [&str; 9] = ["scenario", "d", "eta", "n", "p", "metric", "value", "stderr", "seed"];

/// Shortest round-trip form (scientific outside `[1e-5, 1e16)`), so equal
/// floats always print equally.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

impl ResultRow {
    fn record(&self) -> [String; 9] {
        [
            self.scenario.to_string(),
            self.d.to_string(),
            opt(self.eta, fmt_f64),
            opt(self.n, |n| n.to_string()),
            opt(self.p, fmt_f64),
            self.metric.clone(),
            fmt_f64(self.value),
            opt(self.stderr, fmt_f64),
            self.seed.to_string(),
        ]
    }
}

/// A rate fit of one metric against one abscissa (`n`, `n_eta` or `d`).
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub scenario: &'static str,
    /// Fixed dimension of the fitted curve; absent when fitting against `d`.
    pub d: Option<usize>,
    pub metric: String,
    pub against: &'static str,
    pub floor: f64,
    pub outcome: FitOutcome,
}

pub const FIT_HEADER: [&str; 11] = [
    "scenario",
    "d",
    "metric",
    "against",
    "slope",
    "intercept",
    "r_squared",
    "points_used",
    "noise_floor_excluded",
    "floor",
    "note",
];

impl FitRow {
    fn record(&self) -> [String; 11] {
        let (slope, intercept, r2, used, excl, note) = match &self.outcome {
            FitOutcome::Fit(f) => (
                fmt_f64(f.slope),
                fmt_f64(f.intercept),
                fmt_f64(f.r_squared),
                f.points_used,
                f.noise_floor_excluded,
                String::new(),
            ),
            FitOutcome::NoFit { reason, points_used, noise_floor_excluded } => {
                (String::new(), String::new(), String::new(), *points_used, *noise_floor_excluded, reason.clone())
            }
        };
        [
            self.scenario.to_string(),
            opt(self.d, |d| d.to_string()),
            self.metric.clone(),
            self.against.to_string(),
            slope,
            intercept,
            r2,
            used.to_string(),
            excl.to_string(),
            fmt_f64(self.floor),
            note,
        ]
    }
}

pub fn write_results<W: Write>(rows: &[ResultRow], w: W) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULT_HEADER)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_fits<W: Write>(fits: &[FitRow], w: W) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(FIT_HEADER)?;
    for f in fits {
        out.write_record(f.record())?;
    }
    out.flush()?;
    Ok(())
}

/// Seeds used at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSeeds {
    pub d: usize,
    pub n: usize,
    pub eta: f64,
    pub point_seed: u64,
    pub replica_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub scenario: &'static str,
    pub config: ExperimentConfig,
    pub rng_algorithm: &'static str,
    pub seed_derivation: &'static str,
    pub threads: usize,
    pub points: Vec<PointSeeds>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

pub const SEED_DERIVATION: &str =
    "point g: seed ^ (g << 32); replica r: point_seed ^ r; auxiliary streams set one of bits 56..63";

pub fn write_manifest(m: &Manifest, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(m).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Log-log chart of one metric against `n`, one polyline per dimension.
pub fn svg_chart(title: &str, series: &[(usize, Vec<(f64, f64)>)]) -> Option<String> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, s)| s.iter().copied())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| pts.iter().map(sel).fold(init, f);
    let (x0, x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (y0, y1) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * pad);
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"20\">{title} (log10 vs log10 n)</text>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = h - pad,
        r = w - pad
    );
    s += &format!(
        "<text x=\"{pad}\" y=\"{}\">{x0:.2}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x1:.2}</text>\n",
        h - pad + 14.0,
        w - pad,
        h - pad + 14.0
    );
    s += &format!("<text x=\"4\" y=\"{}\">{y0:.2}</text><text x=\"4\" y=\"{}\">{y1:.2}</text>\n", h - pad, pad + 4.0);
    for (k, (d, series)) in series.iter().enumerate() {
        let colour = palette[k % palette.len()];
        let coords: Vec<String> = series
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
            .map(|(x, y)| format!("{:.1},{:.1}", sx(x.log10()), sy(y.log10())))
            .collect();
        s += &format!("<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>\n", coords.join(" "));
        s += &format!("<text x=\"{}\" y=\"{}\" fill=\"{colour}\">d={d}</text>\n", w - pad + 2.0, pad + 14.0 * k as f64);
    }
    s += "</svg>\n";
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_render_fixed_columns() {
        let row = ResultRow {
            scenario: "linear_exact_rate",
            d: 2,
            eta: Some(0.0625),
            n: Some(256),
            p: Some(2.0),
            metric: "w2_exact".into(),
            value: 0.1,
            stderr: None,
            seed: 7,
        };
        let mut buf = Vec::new();
        write_results(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "scenario,d,eta,n,p,metric,value,stderr,seed\nlinear_exact_rate,2,0.0625,256,2.0,w2_exact,0.1,,7\n"
        );
    }

    #[test]
    fn chart_needs_two_points() {
        assert!(svg_chart("x", &[(1, vec![(1.0, 1.0)])]).is_none());
        let s = svg_chart("x", &[(1, vec![(1.0, 1.0), (10.0, 0.1)])]).unwrap();
        assert!(s.starts_with("<svg") && s.contains("polyline"));
    }
}

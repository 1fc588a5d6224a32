//! Parameter sweeps over g, R and Ω_c, and the curve fits applied to
//! their output.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DptError, Result};
use crate::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::parallel::par_map;
use crate::probe::{default_k_max, fit_populations, nbar_from_fit, probe_times, simulate_probe, DecayModel};
use crate::protocol::{run, ExperimentConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanAxis {
    G,
    R,
    OmegaC,
}

impl ScanAxis {
    pub fn name(self) -> &'static str {
        match self {
            ScanAxis::G => "g",
            ScanAxis::R => "R",
            ScanAxis::OmegaC => "omega_c",
        }
    }
}

/// How n̄ is read off a steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Readout {
    Direct,
    Probe { omega_probe: f64, shots: Option<u64>, decay: DecayModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Diverging,
    Failed(String),
}

impl PointStatus {
    fn label(&self) -> String {
        match self {
            PointStatus::Ok => "ok".into(),
            PointStatus::Diverging => "diverging".into(),
            PointStatus::Failed(m) => format!("failed: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub axis: f64,
    /// None when the point did not produce a steady state.
    pub nbar: Option<f64>,
    pub sigma: Option<f64>,
    pub converged: bool,
    pub cycles: usize,
    pub n_max: Option<usize>,
    pub status: PointStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub axis: ScanAxis,
    /// The held coordinate: g for R scans, Ω_c (rad/µs) for cooling scans.
    pub fixed: Option<f64>,
    pub points: Vec<ScanPoint>,
    pub config_hash: String,
}

impl ScanResult {
    /// (axis, n̄) for points that produced a value.
    pub fn values(&self) -> Vec<(f64, f64)> {
        self.points.iter().filter_map(|p| p.nbar.map(|n| (p.axis, n))).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["axis", "nbar", "sigma", "converged", "cycles", "n_max", "status"])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for p in &self.points {
            out.write_record([
                p.axis.to_string(),
                opt(p.nbar),
                opt(p.sigma),
                p.converged.to_string(),
                p.cycles.to_string(),
                p.n_max.map(|n| n.to_string()).unwrap_or_default(),
                p.status.label(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn config_hash(config: &ExperimentConfig, extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(extra.as_bytes());
    hex::encode(h.finalize())
}

fn sorted_axis(values: &[f64], min: f64, what: &str) -> Result<Vec<f64>> {
    let mut v = values.to_vec();
    if v.is_empty() {
        return Err(DptError::InvalidParameter(format!("empty {what} list")));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < min) {
        return Err(DptError::InvalidParameter(format!("{what} value {x} must be >= {min}")));
    }
    v.sort_by(f64::total_cmp);
    if v.windows(2).any(|w| w[0] == w[1]) {
        return Err(DptError::InvalidParameter(format!("duplicate {what} values")));
    }
    Ok(v)
}

/// Reads n̄ (and σ for the probe) off a finished trajectory.
pub fn read_out(traj: &Trajectory, readout: &Readout, seed: u64) -> Result<(f64, Option<f64>)> {
    match *readout {
        Readout::Direct => Ok((traj.final_nbar(), None)),
        Readout::Probe { omega_probe, shots, decay } => {
            let k_max = default_k_max(&traj.final_state);
            let times = probe_times(omega_probe, k_max);
            let scan = simulate_probe(&traj.final_state, omega_probe, &times, shots, seed)?;
            let fit = fit_populations(&scan, k_max, decay)?;
            let (n, s) = nbar_from_fit(&fit);
            Ok((n, Some(s)))
        }
    }
}

fn point_seed(seed: u64, axis: f64) -> u64 {
    seed ^ axis.to_bits().rotate_left(17)
}

fn run_point(config: &ExperimentConfig, axis: f64, readout: &Readout) -> ScanPoint {
    let failed = |status| ScanPoint { axis, nbar: None, sigma: None, converged: false, cycles: 0, n_max: None, status };
    let traj = match run(config) {
        Ok(t) => t,
        Err(DptError::Diverging { .. }) => return failed(PointStatus::Diverging),
        Err(e) => return failed(PointStatus::Failed(e.to_string())),
    };
    match read_out(&traj, readout, point_seed(config.seed, axis)) {
        Ok((nbar, sigma)) => ScanPoint {
            axis,
            nbar: Some(nbar),
            sigma,
            converged: traj.converged,
            cycles: traj.cycles_run,
            n_max: Some(traj.n_max),
            status: PointStatus::Ok,
        },
        Err(e) => ScanPoint {
            converged: traj.converged,
            cycles: traj.cycles_run,
            n_max: Some(traj.n_max),
            ..failed(PointStatus::Failed(e.to_string()))
        },
    }
}

fn sweep(configs: Vec<(f64, ExperimentConfig)>, readout: &Readout) -> Vec<ScanPoint> {
    par_map(&configs, |(x, c)| run_point(c, *x, readout))
}

pub fn g_scan(base: &ExperimentConfig, g_values: &[f64], readout: &Readout) -> Result<ScanResult> {
    base.validate()?;
    let gs = sorted_axis(g_values, 0.0, "g")?;
    let configs = gs
        .iter()
        .map(|&g| {
            let mut c = base.clone();
            c.drive = base.drive.with_coupling(g);
            (g, c)
        })
        .collect();
    Ok(ScanResult {
        axis: ScanAxis::G,
        fixed: None,
        points: sweep(configs, readout),
        config_hash: config_hash(base, &format!("g{gs:?}{readout:?}")),
    })
}

/// δ_b − δ_r held at the base value; δ_b + δ_r set by R.
pub fn r_scan(base: &ExperimentConfig, r_values: &[f64], g: f64, readout: &Readout) -> Result<ScanResult> {
    base.validate()?;
    let rs = sorted_axis(r_values, 1.0 + 1e-12, "R")?;
    if !(g >= 0.0) {
        return Err(DptError::InvalidParameter(format!("g must be >= 0, got {g}")));
    }
    let configs = rs
        .iter()
        .map(|&r| {
            let mut c = base.clone();
            c.drive = base.drive.with_ratio(r).with_coupling(g);
            (r, c)
        })
        .collect();
    Ok(ScanResult {
        axis: ScanAxis::R,
        fixed: Some(g),
        points: sweep(configs, readout),
        config_hash: config_hash(base, &format!("R{rs:?}g{g}{readout:?}")),
    })
}

/// One g scan per Ω_c (rad/µs). All points run through one pool.
pub fn cooling_scan(
    base: &ExperimentConfig,
    omega_c_values: &[f64],
    g_values: &[f64],
    readout: &Readout,
) -> Result<Vec<ScanResult>> {
    base.validate()?;
    let ocs = sorted_axis(omega_c_values, 0.0, "omega_c")?;
    let gs = sorted_axis(g_values, 0.0, "g")?;
    let mut jobs = Vec::with_capacity(ocs.len() * gs.len());
    for &oc in &ocs {
        for &g in &gs {
            let mut c = base.clone();
            c.cool.omega_c = oc;
            c.drive = base.drive.with_coupling(g);
            jobs.push((g, c));
        }
    }
    let mut points = sweep(jobs, readout).into_iter();
    Ok(ocs
        .iter()
        .map(|&oc| {
            let mut c = base.clone();
            c.cool.omega_c = oc;
            ScanResult {
                axis: ScanAxis::G,
                fixed: Some(oc),
                points: points.by_ref().take(gs.len()).collect(),
                config_hash: config_hash(&c, &format!("g{gs:?}{readout:?}")),
            }
        })
        .collect())
}

/// Axis value where n̄ first rises through half the scan maximum, by
/// linear interpolation.
pub fn crossover_midpoint(scan: &ScanResult) -> Option<f64> {
    let v = scan.values();
    let max = v.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let half = 0.5 * max;
    v.windows(2).find(|w| w[0].1 < half && w[1].1 >= half).map(|w| {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        x0 + (half - y0) * (x1 - x0) / (y1 - y0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub residual_rms: f64,
    /// Inclusive range of the independent variable used.
    pub window: (f64, f64),
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.params[i], self.errors[i]))
    }
}

fn to_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn range(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

struct Saturation<'a> {
    n: &'a [f64],
    y: &'a [f64],
}

impl LeastSquares for Saturation<'_> {
    fn n_params(&self) -> usize {
        3
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        self.n.iter().zip(self.y).map(|(n, y)| p[0] * (-n / p[1]).exp() + p[2] - y).collect()
    }

    fn jacobian(&self, p: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n.len(), 3, |i, k| {
            let e = (-self.n[i] / p[1]).exp();
            match k {
                0 => e,
                1 => p[0] * e * self.n[i] / (p[1] * p[1]),
                _ => 1.0,
            }
        })
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].max(1e-6);
        p[2] = p[2].max(0.0);
    }
}

/// n̄(N) = A e^{−N/N₀} + B over cycles N = 1, 2, ….
pub fn fit_exponential_saturation(nbar: &[f64]) -> Result<FitResult> {
    if nbar.len() < 10 {
        return Err(DptError::Fit(format!("need at least 10 cycles, got {}", nbar.len())));
    }
    let n: Vec<f64> = (1..=nbar.len()).map(|k| k as f64).collect();
    let names = vec!["A".to_string(), "N0".to_string(), "B".to_string()];
    let (lo, hi) = range(nbar);
    let tail = &nbar[nbar.len() - nbar.len() / 5..];
    let b0 = (tail.iter().sum::<f64>() / tail.len() as f64).max(0.0);
    let n0 = nbar.len() as f64 / 5.0;
    if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
        return Ok(FitResult {
            model: "exponential_saturation".into(),
            names,
            params: vec![0.0, n0, b0],
            errors: vec![0.0; 3],
            covariance: vec![vec![0.0; 3]; 3],
            residual_rms: 0.0,
            window: (1.0, nbar.len() as f64),
            points: nbar.len(),
            note: Some("flat trajectory: N0 undetermined".into()),
        });
    }
    let problem = Saturation { n: &n, y: nbar };
    let sol = levenberg_marquardt(&problem, &[nbar[0] - b0, n0, b0], &LmOptions::default())?;
    Ok(FitResult {
        model: "exponential_saturation".into(),
        names,
        params: sol.params,
        errors: sol.errors,
        covariance: to_rows(&sol.covariance),
        residual_rms: sol.residual_rms,
        window: (1.0, nbar.len() as f64),
        points: nbar.len(),
        note: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SaturationEstimate {
    Saturating {
        n_s: f64,
        err: f64,
        /// None when the data are flat.
        b: Option<f64>,
        c: Option<f64>,
        last_value: f64,
    },
    NonSaturating {
        last_value: f64,
    },
}

/// N_s, b, c from three points of N_s − b R^(−c). None when c ≤ 0.
fn three_point(r: [f64; 3], y: [f64; 3]) -> Option<(f64, f64, f64)> {
    let d1 = y[1] - y[0];
    let d2 = y[2] - y[1];
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if d1.abs() <= 1e-12 * scale && d2.abs() <= 1e-12 * scale {
        return Some((y[2], 0.0, f64::NAN));
    }
    if d1 == 0.0 || d2 / d1 <= 0.0 {
        return None;
    }
    // d2/d1 = (r1^-c − r2^-c)/(r0^-c − r1^-c), decreasing in c; bisect.
    let target = d2 / d1;
    let ratio = |c: f64| (r[1].powf(-c) - r[2].powf(-c)) / (r[0].powf(-c) - r[1].powf(-c));
    let ratio0 = (r[2] / r[1]).ln() / (r[1] / r[0]).ln();
    if target >= ratio0 {
        return None;
    }
    let (mut lo, mut hi) = (1e-9, 1.0);
    while ratio(hi) > target {
        hi *= 2.0;
        if hi > 1e3 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let b = d1 / (r[0].powf(-c) - r[1].powf(-c));
    Some((y[2] + b * r[2].powf(-c), b, c))
}

/// N_s from the three largest-R points of the shifted power law
/// N_s − b R^(−c); the same solve one point further in gives the
/// systematic spread, combined in quadrature with the propagated point
/// errors.
pub fn extrapolate_saturation(scan: &ScanResult) -> Result<SaturationEstimate> {
    let pts: Vec<&ScanPoint> = scan.points.iter().filter(|p| p.nbar.is_some()).collect();
    if pts.len() < 4 {
        return Err(DptError::Fit(format!("need at least 4 R points, got {}", pts.len())));
    }
    let k = pts.len();
    let r = |i: usize| pts[i].axis;
    let y = |i: usize| pts[i].nbar.unwrap();
    let last_value = y(k - 1);
    let solve = |i: usize| three_point([r(i), r(i + 1), r(i + 2)], [y(i), y(i + 1), y(i + 2)]);
    let Some((n_s, b, c)) = solve(k - 3) else {
        return Ok(SaturationEstimate::NonSaturating { last_value });
    };
    if c.is_nan() {
        return Ok(SaturationEstimate::Saturating { n_s, err: 0.0, b: Some(0.0), c: None, last_value });
    }
    let sys = solve(k - 4).map(|(prev, _, _)| (n_s - prev).abs()).unwrap_or(f64::INFINITY);
    // ∂N_s/∂y_i of the Aitken form, numerically, for the point errors.
    let mut stat2 = 0.0;
    for i in 0..3 {
        let s = pts[k - 3 + i].sigma.unwrap_or(0.0);
        if s > 0.0 {
            let mut yy = [y(k - 3), y(k - 2), y(k - 1)];
            let h = 1e-6 * yy[i].abs().max(1e-9);
            yy[i] += h;
            if let Some((ns2, _, _)) = three_point([r(k - 3), r(k - 2), r(k - 1)], yy) {
                stat2 += ((ns2 - n_s) / h * s).powi(2);
            }
        }
    }
    Ok(SaturationEstimate::Saturating { n_s, err: (stat2 + sys * sys).sqrt(), b: Some(b), c: Some(c), last_value })
}

struct CriticalLaw<'a> {
    g: &'a [f64],
    y: &'a [f64],
    w: &'a [f64],
    g_floor: f64,
}

impl LeastSquares for CriticalLaw<'_> {
    fn n_params(&self) -> usize {
        3
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        (0..self.g.len()).map(|i| (p[0] * (p[1] - self.g[i]).powf(-p[2]) - self.y[i]) * self.w[i]).collect()
    }

    fn jacobian(&self, p: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.g.len(), 3, |i, k| {
            let d = p[1] - self.g[i];
            let f = d.powf(-p[2]);
            self.w[i]
                * match k {
                    0 => f,
                    1 => -p[0] * p[2] * f / d,
                    _ => -p[0] * f * d.ln(),
                }
        })
    }

    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].max(1e-12);
        p[1] = p[1].max(self.g_floor);
        p[2] = p[2].max(1e-6);
    }
}

pub const CRITICAL_WINDOW: (f64, f64) = (0.35, 0.01);

/// N_s = C (g_c − g)^(−ν) with g_c > max g. Points are (g, N_s, σ);
/// σ ≤ 0 means unweighted. After a first pass the data are restricted to
/// [g_c − window.0, g_c − window.1] and refit until the window is stable.
pub fn fit_critical_power_law(points: &[(f64, f64, f64)], window: (f64, f64)) -> Result<FitResult> {
    let mut pts: Vec<(f64, f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.iter().any(|p| !(p.1 > 0.0)) {
        return Err(DptError::Fit("critical fit needs N_s > 0".into()));
    }
    let mut used = pts.clone();
    let mut last: Option<FitResult> = None;
    for _ in 0..10 {
        let fit = critical_pass(&used)?;
        let gc = fit.params[1];
        let next: Vec<(f64, f64, f64)> =
            pts.iter().copied().filter(|p| p.0 >= gc - window.0 && p.0 <= gc - window.1).collect();
        let stable = next.len() == used.len() && next.iter().zip(&used).all(|(a, b)| a.0 == b.0);
        last = Some(fit);
        if stable || next.len() < 5 {
            break;
        }
        used = next;
    }
    last.ok_or_else(|| DptError::Fit("no critical fit".into()))
}

fn critical_pass(pts: &[(f64, f64, f64)]) -> Result<FitResult> {
    if pts.len() < 5 {
        return Err(DptError::Fit(format!("need at least 5 points, got {}", pts.len())));
    }
    let g: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let weighted = pts.iter().all(|p| p.2 > 0.0);
    let w: Vec<f64> = pts.iter().map(|p| if weighted { 1.0 / p.2 } else { 1.0 }).collect();
    let gmax = g[g.len() - 1];
    let g_floor = gmax + 1e-4;
    let problem = CriticalLaw { g: &g, y: &y, w: &w, g_floor };

    // Start from the log-linear fit at a few trial g_c and keep the best.
    let mut best: Option<crate::fit::LmSolution> = None;
    for off in [0.005, 0.02, 0.05, 0.1, 0.3] {
        let gc = gmax + off;
        let x: Vec<f64> = g.iter().map(|gi| (gc - gi).ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let Ok(line) = ols(&x, &ly) else { continue };
        let p0 = [line.0.exp(), gc, (-line.1).max(0.05)];
        if let Ok(sol) = levenberg_marquardt(&problem, &p0, &LmOptions::default()) {
            if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                best = Some(sol);
            }
        }
    }
    let sol = best.ok_or_else(|| DptError::Fit("critical power law did not converge from any start".into()))?;
    let runaway = sol.params[1] <= g_floor * (1.0 + 1e-9);
    Ok(FitResult {
        model: "power_law_critical".into(),
        names: vec!["C".into(), "g_c".into(), "nu".into()],
        params: sol.params,
        errors: sol.errors,
        covariance: to_rows(&sol.covariance),
        residual_rms: sol.residual_rms,
        window: range(&g),
        points: g.len(),
        note: runaway.then(|| "g_c pinned at the lower bound".to_string()),
    })
}

/// (intercept, slope, σ_intercept, σ_slope, rms) of y = a + b x.
fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64, f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(DptError::Fit("degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ssr: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let s2 = if x.len() > 2 { ssr / (n - 2.0) } else { 0.0 };
    let sb = (s2 / sxx).sqrt();
    let sa = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    Ok((a, b, sa, sb, (ssr / n).sqrt()))
}

/// OLS of log y on log x.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(DptError::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Err(DptError::Fit(format!("log-log fit needs positive data, got ({}, {})", p.0, p.1)));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (a, b, sa, sb, rms) = ols(&x, &y)?;
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let cov_ab = -mx * sb * sb;
    Ok(FitResult {
        model: "loglog".into(),
        names: vec!["intercept".into(), "slope".into()],
        params: vec![a, b],
        errors: vec![sa, sb],
        covariance: vec![vec![sa * sa, cov_ab], vec![cov_ab, sb * sb]],
        residual_rms: rms,
        window: range(&points.iter().map(|p| p.0).collect::<Vec<_>>()),
        points: points.len(),
        note: None,
    })
}

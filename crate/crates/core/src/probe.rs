//! Blue-sideband population readout: scan emulation, damped-flop fit and
//! n̄ error propagation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{DptError, Result};
use crate::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::fockspace::{BosonDensityMatrix, FockPopulations};
use crate::model::khz_to_rad_per_us;

/// 2π·10 kHz.
pub fn default_omega_probe() -> f64 {
    khz_to_rad_per_us(10.0)
}

pub const MIN_PROBE_POINTS: usize = 60;
/// Probe window in units of the vacuum flop period.
pub const PROBE_PERIODS: f64 = 6.0;
/// Population left above k_max by the automatic choice.
pub const K_MAX_TAIL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScan {
    pub times: Vec<f64>,
    pub p_up: Vec<f64>,
    /// None means exact expectation values.
    pub shots: Option<u64>,
    pub omega_probe: f64,
}

impl ProbeScan {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.p_up.len() {
            return Err(DptError::Schema(format!("{} times but {} p_up values", self.times.len(), self.p_up.len())));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DptError::Schema("probe times must be strictly increasing".into()));
        }
        if let Some(p) = self.p_up.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(DptError::Schema(format!("p_up value {p} outside [0, 1]")));
        }
        if !(self.omega_probe > 0.0) {
            return Err(DptError::InvalidParameter(format!("omega_probe must be > 0, got {}", self.omega_probe)));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        match self.shots {
            Some(s) => {
                out.write_record(["t_us", "p_up", "shots"])?;
                for (t, p) in self.times.iter().zip(&self.p_up) {
                    out.write_record([t.to_string(), p.to_string(), s.to_string()])?;
                }
            }
            None => {
                out.write_record(["t_us", "p_up"])?;
                for (t, p) in self.times.iter().zip(&self.p_up) {
                    out.write_record([t.to_string(), p.to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, omega_probe: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().map(str::trim).collect();
        let has_shots = match cols.as_slice() {
            ["t_us", "p_up"] => false,
            ["t_us", "p_up", "shots"] => true,
            _ => return Err(DptError::Schema(format!("expected header t_us,p_up[,shots], got {}", cols.join(",")))),
        };
        let mut times = Vec::new();
        let mut p_up = Vec::new();
        let mut shots = None;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| DptError::Schema(format!("row {}: bad value in column {}", i + 2, cols[k])))
            };
            times.push(field(0)?);
            p_up.push(field(1)?);
            if has_shots {
                let s = field(2)?;
                if !(s >= 1.0) || s.fract() != 0.0 {
                    return Err(DptError::Schema(format!("row {}: shots must be a positive integer", i + 2)));
                }
                shots = Some(s as u64);
            }
        }
        if times.is_empty() {
            return Err(DptError::Schema("probe scan has no rows".into()));
        }
        let scan = ProbeScan { times, p_up, shots, omega_probe };
        scan.validate()?;
        Ok(scan)
    }

    pub fn read_path(path: &Path, omega_probe: f64) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, omega_probe)
    }
}

/// Evenly spaced probe times over [0, 6·2π/Ω].
pub fn probe_times(omega_probe: f64, k_max: usize) -> Vec<f64> {
    let n = MIN_PROBE_POINTS.max(3 * (k_max + 2));
    let t_end = PROBE_PERIODS * 2.0 * std::f64::consts::PI / omega_probe;
    (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
}

/// Larger of ceil(3 n̄)+2 and the level above which less than 1e-3 of the
/// population remains, capped at n_max.
pub fn default_k_max(rho: &BosonDensityMatrix) -> usize {
    let pops = rho.fock_populations();
    let n_max = pops.len() - 1;
    let nbar = rho.mean_phonon_number();
    let by_mean = (3.0 * nbar).ceil() as usize + 2;
    let mut tail = 0.0;
    let mut by_tail = 0;
    for k in (0..=n_max).rev() {
        tail += pops[k];
        if tail > K_MAX_TAIL {
            by_tail = k;
            break;
        }
    }
    by_mean.max(by_tail).min(n_max)
}

/// Spin-up probability after a blue-sideband pulse of length t on
/// |↓⟩⟨↓| ⊗ ρ_m. Only populations enter: |↓,n⟩ flops with |↑,n+1⟩ at
/// Ω√(n+1); the top level has no partner inside the cutoff.
pub fn p_up_exact(pops: &[f64], omega_probe: f64, t: f64) -> f64 {
    let n_max = pops.len() - 1;
    pops[..n_max]
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let s = (0.5 * omega_probe * ((n + 1) as f64).sqrt() * t).sin();
            p * s * s
        })
        .sum()
}

pub fn simulate_probe(
    rho_m: &BosonDensityMatrix,
    omega_probe: f64,
    times: &[f64],
    shots: Option<u64>,
    seed: u64,
) -> Result<ProbeScan> {
    rho_m.validate()?;
    if !(omega_probe > 0.0) {
        return Err(DptError::InvalidParameter(format!("omega_probe must be > 0, got {omega_probe}")));
    }
    if shots == Some(0) {
        return Err(DptError::InvalidParameter("shots must be >= 1".into()));
    }
    let pops = rho_m.fock_populations();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p_up = Vec::with_capacity(times.len());
    for &t in times {
        let p = p_up_exact(&pops, omega_probe, t).clamp(0.0, 1.0);
        p_up.push(match shots {
            None => p,
            Some(n) => {
                let b = Binomial::new(n, p).map_err(|e| DptError::InvalidParameter(e.to_string()))?;
                b.sample(&mut rng) as f64 / n as f64
            }
        });
    }
    let scan = ProbeScan { times: times.to_vec(), p_up, shots, omega_probe };
    scan.validate()?;
    Ok(scan)
}

/// γ_k = γ₀·f(k).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    #[default]
    Sqrt,
    Power07,
    Constant,
}

impl DecayModel {
    pub fn factor(self, k: usize) -> f64 {
        let x = (k + 1) as f64;
        match self {
            DecayModel::Sqrt => x.sqrt(),
            DecayModel::Power07 => x.powf(0.7),
            DecayModel::Constant => 1.0,
        }
    }
}

impl std::str::FromStr for DecayModel {
    type Err = DptError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(DecayModel::Sqrt),
            "power07" => Ok(DecayModel::Power07),
            "constant" => Ok(DecayModel::Constant),
            _ => Err(DptError::Config(format!("unknown decay model {s:?} (sqrt|power07|constant)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFit {
    pub p: Vec<f64>,
    /// Covariance of p.
    pub covariance: DMatrix<f64>,
    pub gamma0: f64,
    pub gamma0_err: f64,
    pub residual_rms: f64,
    pub decay: DecayModel,
}

impl PopulationFit {
    pub fn k_max(&self) -> usize {
        self.p.len() - 1
    }

    pub fn errors(&self) -> Vec<f64> {
        (0..self.p.len()).map(|k| self.covariance[(k, k)].max(0.0).sqrt()).collect()
    }
}

/// Projects onto {p ≥ 0, Σp ≤ 1}.
pub(crate) fn project_capped_simplex(p: &mut [f64]) {
    for x in p.iter_mut() {
        *x = x.max(0.0);
    }
    let s: f64 = p.iter().sum();
    if s <= 1.0 {
        return;
    }
    let mut u: Vec<f64> = p.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in p.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

struct FlopModel<'a> {
    scan: &'a ProbeScan,
    freqs: Vec<f64>,
    decay: Vec<f64>,
}

impl FlopModel<'_> {
    fn k(&self) -> usize {
        self.freqs.len()
    }
}

impl LeastSquares for FlopModel<'_> {
    fn n_params(&self) -> usize {
        self.k() + 1
    }

    fn residuals(&self, q: &[f64]) -> Vec<f64> {
        let g0 = q[self.k()];
        self.scan
            .times
            .iter()
            .zip(&self.scan.p_up)
            .map(|(&t, &y)| {
                let s: f64 = (0..self.k()).map(|k| q[k] * (-g0 * self.decay[k] * t).exp() * (self.freqs[k] * t).cos()).sum();
                0.5 * (1.0 - s) - y
            })
            .collect()
    }

    fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let kk = self.k();
        let g0 = q[kk];
        let m = self.scan.times.len();
        let mut j = DMatrix::zeros(m, kk + 1);
        for (i, &t) in self.scan.times.iter().enumerate() {
            let mut dg = 0.0;
            for k in 0..kk {
                let e = (-g0 * self.decay[k] * t).exp() * (self.freqs[k] * t).cos();
                j[(i, k)] = -0.5 * e;
                dg += 0.5 * q[k] * self.decay[k] * t * e;
            }
            j[(i, kk)] = dg;
        }
        j
    }

    fn project(&self, q: &mut [f64]) {
        let kk = self.k();
        project_capped_simplex(&mut q[..kk]);
        q[kk] = q[kk].max(0.0);
    }

    fn frozen(&self, q: &[f64], grad: &[f64]) -> Vec<bool> {
        q.iter().zip(grad).map(|(&x, &g)| x <= 0.0 && g > 0.0).collect()
    }

    fn active_linear(&self, q: &[f64]) -> Option<Vec<f64>> {
        let kk = self.k();
        let total: f64 = q[..kk].iter().sum();
        (total >= 1.0 - 1e-12).then(|| (0..q.len()).map(|k| if k < kk { 1.0 } else { 0.0 }).collect())
    }
}

/// Least-squares fit of P↑(t) = ½[1 − Σ_k p_k e^{−γ_k t} cos(Ω√(k+1) t)].
pub fn fit_populations(scan: &ProbeScan, k_max: usize, decay: DecayModel) -> Result<PopulationFit> {
    scan.validate()?;
    let kk = k_max + 1;
    if scan.times.len() < 3 * (k_max + 2) {
        return Err(DptError::Fit(format!(
            "{} probe samples cannot resolve k_max={k_max} (need {})",
            scan.times.len(),
            3 * (k_max + 2)
        )));
    }
    let model = FlopModel {
        scan,
        freqs: (0..kk).map(|k| scan.omega_probe * ((k + 1) as f64).sqrt()).collect(),
        decay: (0..kk).map(|k| decay.factor(k)).collect(),
    };

    // Cosine projection: the γ₀ = 0 problem is linear in p.
    let m = scan.times.len();
    let a = DMatrix::from_fn(m, kk, |i, k| (model.freqs[k] * scan.times[i]).cos());
    let b = DVector::from_iterator(m, scan.p_up.iter().map(|y| 1.0 - 2.0 * y));
    let p_init = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| DptError::Fit(format!("cosine projection failed: {e}")))?;
    let mut q0: Vec<f64> = p_init.iter().copied().collect();
    q0.push(0.0);

    let sol = levenberg_marquardt(&model, &q0, &LmOptions::default())?;
    let p = sol.params[..kk].to_vec();
    let covariance = sol.covariance.view((0, 0), (kk, kk)).into_owned();
    Ok(PopulationFit {
        p,
        covariance,
        gamma0: sol.params[kk],
        gamma0_err: sol.errors[kk],
        residual_rms: sol.residual_rms,
        decay,
    })
}

/// (Σ k p_k, √(N Σ Nᵀ)).
pub fn nbar_from_fit(fit: &PopulationFit) -> (f64, f64) {
    let kk = fit.p.len();
    let n = DVector::from_iterator(kk, (0..kk).map(|k| k as f64));
    let nbar = n.dot(&DVector::from_column_slice(&fit.p));
    let var = (n.transpose() * &fit.covariance * &n)[(0, 0)];
    if var < 0.0 {
        log::warn!("negative n̄ variance {var:.3e} clamped to 0");
    }
    (nbar, var.max(0.0).sqrt())
}

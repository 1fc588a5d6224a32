//! The stroboscopic experiment: initial state, the drive→dissipate loop,
//! convergence detection and cutoff escalation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channels::{
    cooling_channel_exact, cooling_channel_lindblad, lindblad_step, make_noise_jumps, spin_reset,
    ChannelMode, ChannelOptions, NoiseParams,
};
use crate::error::{DptError, Result};
use crate::fockspace::{
    check_state, check_state_cheap, thermal_state, truncation_tail, trace_out_spin, BosonDensityMatrix,
    DensityMatrix, FockCutoff, FockPopulations, DEFAULT_TAIL_EPSILON,
};
use crate::kernel::{CycleKernel, KernelSettings};
use crate::linalg::CMat;
use crate::model::{derive, h_qrm, khz_to_rad_per_us, CoolParams, DerivedParams, DriveParams, IdleSign};

pub const DEFAULT_DOPPLER_NBAR: f64 = 5.0;
pub const DEFAULT_TOL: f64 = 0.05;
pub const DEFAULT_WINDOW: usize = 20;
pub const DEFAULT_CEILING: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialState {
    Ground,
    DopplerThermal { nbar: f64 },
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::DopplerThermal { nbar: DEFAULT_DOPPLER_NBAR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Convergence {
    FixedCycles,
    Tolerance { tol: f64, window: usize },
}

impl Convergence {
    fn criterion(&self) -> (f64, usize) {
        match *self {
            Convergence::FixedCycles => (DEFAULT_TOL, DEFAULT_WINDOW),
            Convergence::Tolerance { tol, window } => (tol, window),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffPolicy {
    pub n_max: usize,
    pub epsilon: f64,
    pub growth: f64,
    pub ceiling: usize,
}

impl Default for CutoffPolicy {
    fn default() -> Self {
        CutoffPolicy { n_max: 40, epsilon: DEFAULT_TAIL_EPSILON, growth: 1.5, ceiling: DEFAULT_CEILING }
    }
}

/// Gaussian per-run perturbation of δ_b and δ_r, rad/µs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub sigma_b: f64,
    pub sigma_r: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        let s = khz_to_rad_per_us(0.1);
        Jitter { sigma_b: s, sigma_r: s }
    }
}

/// Origin of the wall clock entering the frame conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallClock {
    #[default]
    Global,
    PerCycle,
}

/// Cycle evaluation: the reduced phonon-space map, or the full-space
/// channel sequence (slower; keeps explicit frame conversions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Reduced,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub drive: DriveParams,
    pub cool: CoolParams,
    pub noise: NoiseParams,
    pub initial: InitialState,
    pub channel_mode: ChannelMode,
    pub max_cycles: usize,
    pub convergence: Convergence,
    pub cutoff: CutoffPolicy,
    pub jitter: Option<Jitter>,
    pub wall_clock: WallClock,
    pub idle_sign: IdleSign,
    pub engine: Engine,
    pub dt_max: f64,
    pub drive_substeps: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(drive: DriveParams, cool: CoolParams) -> Self {
        ExperimentConfig {
            drive,
            cool,
            noise: NoiseParams::off(),
            initial: InitialState::default(),
            channel_mode: ChannelMode::Exact,
            max_cycles: 200,
            convergence: Convergence::FixedCycles,
            cutoff: CutoffPolicy::default(),
            jitter: None,
            wall_clock: WallClock::Global,
            idle_sign: IdleSign::Plus,
            engine: Engine::Reduced,
            dt_max: crate::channels::DEFAULT_DT_MAX,
            drive_substeps: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.drive.validate()?;
        self.cool.validate()?;
        self.noise.validate()?;
        if self.max_cycles < 1 {
            return Err(DptError::InvalidParameter("max_cycles must be >= 1".into()));
        }
        if let Convergence::Tolerance { tol, window } = self.convergence {
            if !(tol > 0.0) || window < 2 {
                return Err(DptError::InvalidParameter(format!("need tol > 0 and window >= 2, got tol={tol} window={window}")));
            }
        }
        let c = &self.cutoff;
        if c.n_max < 1 || !(c.epsilon > 0.0) || !(c.growth > 1.0) || c.ceiling < c.n_max {
            return Err(DptError::InvalidParameter(format!(
                "cutoff policy needs n_max >= 1, epsilon > 0, growth > 1, ceiling >= n_max; got {c:?}"
            )));
        }
        if let InitialState::DopplerThermal { nbar } = self.initial {
            if !(nbar >= 0.0) || !nbar.is_finite() {
                return Err(DptError::InvalidParameter(format!("initial nbar must be >= 0, got {nbar}")));
            }
        }
        if let Some(j) = self.jitter {
            if !(j.sigma_b >= 0.0) || !(j.sigma_r >= 0.0) {
                return Err(DptError::InvalidParameter("jitter sigmas must be >= 0".into()));
            }
        }
        if !(self.dt_max > 0.0) || self.drive_substeps < 1 {
            return Err(DptError::InvalidParameter("dt_max must be > 0 and drive_substeps >= 1".into()));
        }
        Ok(())
    }

    pub fn cycle_duration(&self) -> f64 {
        self.drive.tau + self.cool.tau_d
    }

    pub fn kernel_settings(&self) -> KernelSettings {
        KernelSettings {
            mode: self.channel_mode,
            idle_sign: self.idle_sign,
            dt_max: self.dt_max,
            drive_substeps: self.drive_substeps,
        }
    }

    /// Drive parameters for this run, with jitter applied when enabled.
    pub fn effective_drive(&self) -> Result<DriveParams> {
        let Some(j) = self.jitter else { return Ok(self.drive) };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let nb = Normal::new(0.0, j.sigma_b).map_err(|e| DptError::InvalidParameter(e.to_string()))?;
        let nr = Normal::new(0.0, j.sigma_r).map_err(|e| DptError::InvalidParameter(e.to_string()))?;
        let drive = DriveParams {
            delta_b: self.drive.delta_b + nb.sample(&mut rng),
            delta_r: self.drive.delta_r + nr.sample(&mut rng),
            ..self.drive
        };
        drive.validate()?;
        Ok(drive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub nbar: f64,
    pub p_up: f64,
    /// Wall time at the end of the cycle, µs.
    pub t_us: f64,
    pub n_max: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<CycleRecord>,
    pub initial_nbar: f64,
    pub final_state: BosonDensityMatrix,
    pub converged: bool,
    pub cycles_run: usize,
    pub n_max: usize,
    pub drive: DriveParams,
}

impl Trajectory {
    pub fn nbar_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.nbar).collect()
    }

    /// ⟨a†a⟩ after the last cycle.
    pub fn final_nbar(&self) -> f64 {
        self.records.last().map(|r| r.nbar).unwrap_or(self.initial_nbar)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// |↓⟩⟨↓| ⊗ ρ_m for the configured initial state, at the smallest cutoff of
/// the escalation ladder that holds it.
pub fn prepare_initial(config: &ExperimentConfig) -> Result<DensityMatrix> {
    config.validate()?;
    let mut cutoff = FockCutoff::new(config.cutoff.n_max)?;
    loop {
        match initial_boson(config, cutoff) {
            Ok(rho) => return Ok(DensityMatrix::spin_down_product(&rho)),
            Err(DptError::Truncation { .. }) => cutoff = escalate(config, cutoff)?,
            Err(e) => return Err(e),
        }
    }
}

fn initial_boson(config: &ExperimentConfig, cutoff: FockCutoff) -> Result<BosonDensityMatrix> {
    match config.initial {
        InitialState::Ground => Ok(BosonDensityMatrix::vacuum(cutoff)),
        InitialState::DopplerThermal { nbar } => {
            let rho = thermal_state(nbar, cutoff, config.cutoff.epsilon)?;
            check_tail(&rho, config.cutoff.epsilon)?;
            Ok(rho)
        }
    }
}

fn check_tail(rho: &BosonDensityMatrix, epsilon: f64) -> Result<()> {
    let cutoff = rho.cutoff();
    let tail = truncation_tail(rho);
    if tail > epsilon {
        return Err(DptError::Truncation { tail, epsilon, n_max: cutoff.n_max() });
    }
    Ok(())
}

fn escalate(config: &ExperimentConfig, cutoff: FockCutoff) -> Result<FockCutoff> {
    let ceiling = config.cutoff.ceiling;
    if cutoff.n_max() >= ceiling {
        return Err(DptError::Diverging { ceiling });
    }
    let next = cutoff.grown(config.cutoff.growth).n_max().min(ceiling);
    log::debug!("escalating cutoff {} -> {}", cutoff.n_max(), next);
    FockCutoff::new(next)
}

/// Exactly `n_cycles` cycles.
pub fn run_cycles(config: &ExperimentConfig, n_cycles: usize) -> Result<Trajectory> {
    simulate(config, n_cycles, None)
}

/// Cycles until the spread of ⟨a†a⟩ over the trailing window drops below
/// tol, or `max_cycles`.
pub fn run_to_convergence(config: &ExperimentConfig) -> Result<Trajectory> {
    match config.convergence {
        Convergence::Tolerance { tol, window } => simulate(config, config.max_cycles, Some((tol, window))),
        Convergence::FixedCycles => {
            Err(DptError::Config("run_to_convergence needs convergence = tolerance".into()))
        }
    }
}

/// Dispatches on the configured convergence mode.
pub fn run(config: &ExperimentConfig) -> Result<Trajectory> {
    match config.convergence {
        Convergence::FixedCycles => run_cycles(config, config.max_cycles),
        Convergence::Tolerance { .. } => run_to_convergence(config),
    }
}

fn window_spread(records: &[CycleRecord], window: usize) -> Option<f64> {
    if records.len() < window {
        return None;
    }
    let tail = &records[records.len() - window..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.nbar), hi.max(r.nbar)));
    Some(hi - lo)
}

fn simulate(config: &ExperimentConfig, n_cycles: usize, stop: Option<(f64, usize)>) -> Result<Trajectory> {
    config.validate()?;
    let drive = config.effective_drive()?;
    let d = derive(&drive)?;
    let mut cutoff = prepare_initial(config)?.cutoff();
    loop {
        match attempt(config, &drive, &d, cutoff, n_cycles, stop) {
            Err(DptError::Truncation { tail, n_max, .. }) => {
                log::debug!("tail {tail:.2e} at n_max={n_max}");
                cutoff = escalate(config, cutoff)?;
            }
            other => return other,
        }
    }
}

enum Stepper {
    Reduced(CycleKernel),
    Full { h: crate::fockspace::SpinBosonOperator, u: CMat, jumps: crate::channels::JumpOperatorSet },
}

fn attempt(
    config: &ExperimentConfig,
    drive: &DriveParams,
    d: &DerivedParams,
    cutoff: FockCutoff,
    n_cycles: usize,
    stop: Option<(f64, usize)>,
) -> Result<Trajectory> {
    let eps = config.cutoff.epsilon;
    let initial = initial_boson(config, cutoff)?;
    let stepper = match config.engine {
        Engine::Reduced => Stepper::Reduced(CycleKernel::new(d, drive.tau, &config.cool, &config.noise, cutoff, &config.kernel_settings())?),
        Engine::Full => {
            let h = h_qrm(d, cutoff);
            let u = crate::linalg::expm_hermitian(h.matrix(), drive.tau);
            Stepper::Full { h, u, jumps: make_noise_jumps(&config.noise, cutoff) }
        }
    };
    let opts = ChannelOptions { idle_sign: config.idle_sign, dt_max: config.dt_max };
    let period = config.cycle_duration();
    let mut rho = initial.matrix().clone();
    let mut records = Vec::with_capacity(n_cycles.min(100_000));
    let mut converged = false;
    for cycle in 1..=n_cycles {
        let start = (cycle - 1) as f64 * period;
        let (next, p_up) = match &stepper {
            Stepper::Reduced(k) => {
                let out = k.cycle(&rho)?;
                (out.rho, out.p_up)
            }
            Stepper::Full { h, u, jumps } => {
                let full = DensityMatrix::spin_down_product(&BosonDensityMatrix::from_raw(rho));
                let driven = if jumps.is_empty() {
                    let mut m = crate::linalg::sandwich(u, full.matrix());
                    crate::linalg::hermitize(&mut m);
                    DensityMatrix::from_raw(m)
                } else {
                    lindblad_step(&full, h, jumps, drive.tau, Some(config.dt_max))?
                };
                let t_wall = match config.wall_clock {
                    WallClock::Global => start + drive.tau,
                    WallClock::PerCycle => drive.tau,
                };
                let (out, p) = match config.channel_mode {
                    ChannelMode::Exact => cooling_channel_exact(&driven, &config.cool, d, t_wall, &config.noise, &opts)?,
                    ChannelMode::Lindblad => cooling_channel_lindblad(&driven, &config.cool, d, t_wall, &config.noise, &opts)?,
                };
                (trace_out_spin(&spin_reset(&out)).matrix().clone(), p)
            }
        };
        rho = next;
        check_state_cheap(&rho)?;
        if cfg!(debug_assertions) {
            check_state(&rho)?;
        }
        let state = BosonDensityMatrix::from_raw(rho);
        check_tail(&state, eps)?;
        records.push(CycleRecord {
            cycle,
            nbar: state.mean_phonon_number(),
            p_up,
            t_us: cycle as f64 * period,
            n_max: cutoff.n_max(),
        });
        rho = state.matrix().clone();
        if let Some((tol, window)) = stop {
            if window_spread(&records, window).is_some_and(|s| s < tol) {
                converged = true;
                break;
            }
        }
    }
    if stop.is_none() {
        let (tol, window) = config.convergence.criterion();
        converged = window_spread(&records, window).is_some_and(|s| s < tol);
    }
    let final_state = BosonDensityMatrix::from_raw(rho);
    final_state.validate()?;
    Ok(Trajectory {
        cycles_run: records.len(),
        records,
        initial_nbar: initial.mean_phonon_number(),
        final_state,
        converged,
        n_max: cutoff.n_max(),
        drive: *drive,
    })
}

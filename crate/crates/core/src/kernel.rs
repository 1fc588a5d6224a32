//! One drive→dissipate cycle acting on the phonon state alone.
//!
//! At every cycle boundary the spin has just been pumped to |↓⟩, so the state
//! is |↓⟩⟨↓| ⊗ ρ_m and the whole cycle is a map on ρ_m. The drive becomes the
//! Kraus pair K_s = ⟨s|U|↓⟩; both cooling channels and all noise generators
//! commute with phonon-number phase rotations, so the frame bookkeeping of a
//! dissipation stage collapses to one diagonal phase per cycle. The full-space
//! routines in [`crate::channels`] remain the reference; tests compare both.

use ndarray::s;

use crate::channels::{ChannelMode, CovariantChannel, Liouvillian, NoiseParams};
use crate::error::Result;
use crate::fockspace::{build_boson_ops, FockCutoff};
use crate::linalg::{self, CMat, C64};
use crate::model::{h_qrm, h_red_sideband, CoolParams, DerivedParams, IdleSign};

/// Knobs that do not change the physics, only how a cycle is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSettings {
    pub mode: ChannelMode,
    pub idle_sign: IdleSign,
    pub dt_max: f64,
    /// Strang substeps for the drive and the cooling pulse when noise
    /// dissipators are on.
    pub drive_substeps: usize,
}

impl Default for KernelSettings {
    fn default() -> Self {
        KernelSettings {
            mode: ChannelMode::Exact,
            idle_sign: IdleSign::Plus,
            dt_max: crate::channels::DEFAULT_DT_MAX,
            drive_substeps: 4,
        }
    }
}

#[derive(Debug, Clone)]
enum Drive {
    Kraus { down: CMat, up: CMat },
    Split { step: CMat, substeps: usize, half: CovariantChannel, inner: CovariantChannel },
}

#[derive(Debug, Clone)]
enum Cooling {
    Exact { cos: Vec<f64>, sin: Vec<f64> },
    ExactNoisy { step: CMat, substeps: usize, half: CovariantChannel, inner: CovariantChannel },
    Damping { channel: CovariantChannel },
}

#[derive(Debug, Clone)]
pub struct CycleKernel {
    cutoff: FockCutoff,
    drive: Drive,
    cooling: Cooling,
    idle_noise: Option<CovariantChannel>,
    phase: Vec<C64>,
    noise: NoiseParams,
    dt_max: f64,
}

/// Output of one cycle.
#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub rho: CMat,
    /// Excited population before the second pump (phonons removed, for the
    /// damping channel).
    pub p_up: f64,
}

impl CycleKernel {
    pub fn new(
        d: &DerivedParams,
        tau: f64,
        cool: &CoolParams,
        noise: &NoiseParams,
        cutoff: FockCutoff,
        settings: &KernelSettings,
    ) -> Result<Self> {
        let m = cutoff.boson_dim();
        let noisy = noise.has_dissipators();
        let substeps = settings.drive_substeps.max(1);
        let noise_for = |t: f64| CovariantChannel::from_noise(noise, 0.0, m, t);

        let h = h_qrm(d, cutoff);
        let drive = if noisy {
            let dt = tau / substeps as f64;
            Drive::Split {
                step: linalg::expm_hermitian(h.matrix(), dt),
                substeps,
                half: noise_for(dt / 2.0),
                inner: noise_for(dt),
            }
        } else {
            let u = linalg::expm_hermitian(h.matrix(), tau);
            Drive::Kraus {
                down: u.slice(s![0..m, 0..m]).to_owned(),
                up: u.slice(s![m..2 * m, 0..m]).to_owned(),
            }
        };

        let cooling = match (settings.mode, noisy) {
            (ChannelMode::Exact, false) => {
                let theta = cool.pulse_angle();
                Cooling::Exact {
                    cos: (0..m).map(|n| ((n as f64).sqrt() * theta).cos()).collect(),
                    sin: (0..m).map(|n| ((n as f64).sqrt() * theta).sin()).collect(),
                }
            }
            (ChannelMode::Exact, true) => {
                let hc = h_red_sideband(cool.omega_c, cutoff);
                let dt = cool.tau_c / substeps as f64;
                Cooling::ExactNoisy {
                    step: linalg::expm_hermitian(hc.matrix(), dt),
                    substeps,
                    half: noise_for(dt / 2.0),
                    inner: noise_for(dt),
                }
            }
            (ChannelMode::Lindblad, _) => Cooling::Damping {
                channel: CovariantChannel::from_noise(noise, cool.damping_rate(), m, cool.tau_c),
            },
        };

        let idle_time = cool.tau_d - cool.tau_c;
        let angle = d.omega_f * (cool.tau_c + settings.idle_sign.sign() * idle_time);
        let phase = (0..m).map(|n| C64::from_polar(1.0, -angle * n as f64)).collect();

        Ok(CycleKernel {
            cutoff,
            drive,
            cooling,
            idle_noise: noisy.then(|| noise_for(idle_time)),
            phase,
            noise: *noise,
            dt_max: settings.dt_max,
        })
    }

    pub fn cutoff(&self) -> FockCutoff {
        self.cutoff
    }

    /// Coherent drive for τ followed by the spin trace.
    pub fn drive(&self, rho: &CMat) -> Result<CMat> {
        match &self.drive {
            Drive::Kraus { down, up } => Ok(kraus_pair(down, up, rho)),
            Drive::Split { step, substeps, half, inner } => {
                let state = strang(&half.apply(rho)?, step, *substeps, inner)?;
                half.apply(&trace_spin(&state, self.cutoff.boson_dim()))
            }
        }
    }

    /// Pumping, cooling pulse, pumping, recoil, idle, and the stage phase.
    pub fn dissipate(&self, rho: &CMat) -> Result<CycleOutcome> {
        let m = self.cutoff.boson_dim();
        let (mut out, p_up) = match &self.cooling {
            Cooling::Exact { cos, sin } => {
                let mut out = CMat::zeros((m, m));
                let mut p_up = 0.0;
                for j in 0..m {
                    p_up += sin[j] * sin[j] * rho[[j, j]].re;
                    for k in 0..m {
                        let mut v = rho[[j, k]] * (cos[j] * cos[k]);
                        if j + 1 < m && k + 1 < m {
                            v += rho[[j + 1, k + 1]] * (sin[j + 1] * sin[k + 1]);
                        }
                        out[[j, k]] = v;
                    }
                }
                (out, p_up)
            }
            Cooling::ExactNoisy { step, substeps, half, inner } => {
                let pulsed = strang(&half.apply(rho)?, step, *substeps, inner)?;
                let p_up = (m..2 * m).map(|k| pulsed[[k, k]].re).sum::<f64>();
                // The closing half step acts on each spin block; only the
                // trace over the spin survives the pump that follows.
                (half.apply(&trace_spin(&pulsed, m))?, p_up)
            }
            Cooling::Damping { channel } => {
                let before = mean_number(rho);
                let damped = channel.apply(rho)?;
                let removed = before - mean_number(&damped);
                (damped, removed)
            }
        };
        let p_up = p_up.clamp(0.0, 1.0);

        let dn = self.noise.recoil_phonons(p_up);
        if dn > 0.0 {
            out = self.recoil(&out, dn)?;
        }
        if let Some(channel) = &self.idle_noise {
            out = channel.apply(&out)?;
        }
        for j in 0..m {
            for k in 0..m {
                out[[j, k]] *= self.phase[j] * self.phase[k].conj();
            }
        }
        Ok(CycleOutcome { rho: out, p_up })
    }

    pub fn cycle(&self, rho: &CMat) -> Result<CycleOutcome> {
        let driven = self.drive(rho)?;
        let mut outcome = self.dissipate(&driven)?;
        linalg::hermitize(&mut outcome.rho);
        Ok(outcome)
    }

    fn recoil(&self, rho: &CMat, dn: f64) -> Result<CMat> {
        let mu = (dn / (mean_number(rho) + 1.0)).ln_1p();
        let l = build_boson_ops(self.cutoff).creation.mapv(|z| z * mu.sqrt());
        let gen = Liouvillian::new(None, &[l], self.cutoff.boson_dim());
        gen.integrate(rho, 1.0, gen.default_dt(self.dt_max))
    }
}

/// |↓⟩⟨↓| ⊗ ρ through `substeps` unitary steps with the noise channel in
/// between, applied to every spin block.
fn strang(rho: &CMat, step: &CMat, substeps: usize, inner: &CovariantChannel) -> Result<CMat> {
    let m = rho.nrows();
    let mut state = CMat::zeros((2 * m, 2 * m));
    state.slice_mut(s![0..m, 0..m]).assign(rho);
    for k in 0..substeps {
        state = linalg::sandwich(step, &state);
        if k + 1 < substeps {
            for (r, c) in [(0, 0), (0, m), (m, 0), (m, m)] {
                let block = inner.apply(&state.slice(s![r..r + m, c..c + m]).to_owned())?;
                state.slice_mut(s![r..r + m, c..c + m]).assign(&block);
            }
        }
    }
    Ok(state)
}

fn kraus_pair(down: &CMat, up: &CMat, rho: &CMat) -> CMat {
    let mut out = down.dot(rho).dot(&linalg::adjoint(down));
    out += &up.dot(rho).dot(&linalg::adjoint(up));
    out
}

fn trace_spin(full: &CMat, m: usize) -> CMat {
    &full.slice(s![0..m, 0..m]) + &full.slice(s![m..2 * m, m..2 * m])
}

fn mean_number(rho: &CMat) -> f64 {
    rho.diag().iter().enumerate().map(|(n, z)| n as f64 * z.re).sum()
}

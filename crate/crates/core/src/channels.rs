//! State-evolution primitives on the full spin ⊗ boson space: unitary and
//! Lindblad propagation, spin reset, both cooling channels, noise, recoil.

use serde::{Deserialize, Serialize};

use crate::error::{DptError, Result};
use crate::fockspace::{
    build_boson_ops, identity, tensor, trace_out_spin, DensityMatrix, FockCutoff, FockPopulations,
    SpinBosonOperator,
};
use crate::linalg::{self, CMat, Csr, C64, I, ONE};
use crate::model::{
    diagonal_conjugate, frame_convert, frame_shift_diagonal, h_red_sideband, CoolParams, DerivedParams,
    FrameDirection, IdleSign,
};

/// ħk²/(2m ω_m) for ¹⁷¹Yb⁺, 369.5 nm, ω_m = 2π·2.35 MHz, shared over three modes.
pub const DEFAULT_RECOIL_DN: f64 = 1.21e-3;
/// Mean occupation of a 2.35 MHz mode at 300 K.
pub const DEFAULT_THERMAL_NTH: f64 = 2.66e6;
/// Duration of the fictitious heating pulse used to apply a recoil kick, µs.
const RECOIL_PULSE: f64 = 1.0;
/// Integrator step-size scale: dt = STEP_SCALE / ‖generator‖.
const STEP_SCALE: f64 = 0.05;
pub const DEFAULT_DT_MAX: f64 = 0.1;
const TRACE_DRIFT_ABORT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// γ·n_th, µs⁻¹
    pub heating_rate: f64,
    pub thermal_nth: f64,
    /// Γ_m, µs⁻¹
    pub dephasing_rate: f64,
    pub recoil_enabled: bool,
    pub photons_per_pump: u32,
    pub recoil_dn: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams::off()
    }
}

impl NoiseParams {
    pub fn off() -> Self {
        NoiseParams {
            heating_rate: 0.0,
            thermal_nth: DEFAULT_THERMAL_NTH,
            dephasing_rate: 0.0,
            recoil_enabled: false,
            photons_per_pump: 3,
            recoil_dn: DEFAULT_RECOIL_DN,
        }
    }

    /// 50 s⁻¹ heating and 200 s⁻¹ motional dephasing.
    pub fn decoherence() -> Self {
        NoiseParams { heating_rate: 5e-5, dephasing_rate: 2e-4, ..NoiseParams::off() }
    }

    pub fn decoherence_and_recoil() -> Self {
        NoiseParams { recoil_enabled: true, ..NoiseParams::decoherence() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("heating_rate", self.heating_rate),
            ("thermal_nth", self.thermal_nth),
            ("dephasing_rate", self.dephasing_rate),
            ("recoil_dn", self.recoil_dn),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(DptError::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.heating_rate > 0.0 && self.thermal_nth <= 0.0 {
            return Err(DptError::InvalidParameter("heating needs thermal_nth > 0".into()));
        }
        Ok(())
    }

    pub fn has_dissipators(&self) -> bool {
        self.heating_rate > 0.0 || self.dephasing_rate > 0.0
    }

    /// Phonons added by one pumping stage that scattered `p_up` excitations.
    pub fn recoil_phonons(&self, p_up: f64) -> f64 {
        if !self.recoil_enabled {
            return 0.0;
        }
        self.recoil_dn * (self.photons_per_pump as f64 * p_up).powi(2)
    }
}

#[derive(Debug, Clone, Default)]
pub struct JumpOperatorSet {
    pub ops: Vec<SpinBosonOperator>,
}

impl JumpOperatorSet {
    pub fn new(ops: Vec<SpinBosonOperator>) -> Self {
        JumpOperatorSet { ops }
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn extend(&mut self, other: &JumpOperatorSet) {
        self.ops.extend(other.ops.iter().cloned());
    }
}

/// Boson-factor jump operators {√(γn_th) a†, √(γ(n_th+1)) a, √(2Γ_m) a†a},
/// zero-rate members omitted.
pub fn boson_noise_jumps(noise: &NoiseParams, cutoff: FockCutoff) -> Vec<CMat> {
    let b = build_boson_ops(cutoff);
    let mut out = Vec::new();
    if noise.heating_rate > 0.0 {
        let up = noise.heating_rate;
        let down = noise.heating_rate * (noise.thermal_nth + 1.0) / noise.thermal_nth;
        out.push(b.creation.mapv(|z| z * up.sqrt()));
        out.push(b.annihilation.mapv(|z| z * down.sqrt()));
    }
    if noise.dephasing_rate > 0.0 {
        out.push(b.number.mapv(|z| z * (2.0 * noise.dephasing_rate).sqrt()));
    }
    out
}

pub fn make_noise_jumps(noise: &NoiseParams, cutoff: FockCutoff) -> JumpOperatorSet {
    let id = identity(2);
    JumpOperatorSet::new(
        boson_noise_jumps(noise, cutoff)
            .iter()
            .map(|l| tensor(&id, l).expect("2x2 spin factor"))
            .collect(),
    )
}

/// exp(tL) on the phonon space for L built from the jumps √down a, √up a†
/// and √(2Γ) a†a. These generators commute with number rotations, so each
/// diagonal band X_{j,j+k} (and X_{j+k,j}) evolves on its own under a
/// tridiagonal matrix; the dephasing part is the exact factor e^{−Γk²t}.
/// Bands are propagated with a scaled Taylor series to roundoff.
#[derive(Debug, Clone)]
pub struct CovariantChannel {
    dim: usize,
    t: f64,
    down: f64,
    up: f64,
    dephasing: f64,
    substeps: usize,
}

impl CovariantChannel {
    pub fn new(dim: usize, t: f64, down: f64, up: f64, dephasing: f64) -> Self {
        // ∞-norm bound on every band matrix.
        let bound = 2.0 * (down + up) * dim as f64;
        let substeps = ((bound * t) / 0.5).ceil().max(1.0) as usize;
        CovariantChannel { dim, t, down, up, dephasing, substeps }
    }

    /// The noise generator, plus optional extra damping on a.
    pub fn from_noise(noise: &NoiseParams, damping: f64, dim: usize, t: f64) -> Self {
        let (up, down) = if noise.heating_rate > 0.0 {
            (noise.heating_rate, noise.heating_rate * (noise.thermal_nth + 1.0) / noise.thermal_nth)
        } else {
            (0.0, 0.0)
        };
        CovariantChannel::new(dim, t, down + damping, up, noise.dephasing_rate)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// ⟨p|a a†|p⟩ in the truncated space.
    fn raise_weight(&self, p: usize) -> f64 {
        if p + 1 < self.dim {
            (p + 1) as f64
        } else {
            0.0
        }
    }

    /// y = G_k v for band offset k.
    fn band_apply(&self, k: usize, v: &[C64], y: &mut [C64]) {
        let len = v.len();
        for j in 0..len {
            let (a, b) = (j as f64, (j + k) as f64);
            let mut acc = v[j] * -(0.5 * self.down * (a + b) + 0.5 * self.up * (self.raise_weight(j) + self.raise_weight(j + k)));
            if j + 1 < len {
                acc += v[j + 1] * (self.down * ((a + 1.0) * (b + 1.0)).sqrt());
            }
            if j > 0 {
                acc += v[j - 1] * (self.up * (a * b).sqrt());
            }
            y[j] = acc;
        }
    }

    fn band_propagate(&self, k: usize, v: &mut [C64]) {
        if self.down > 0.0 || self.up > 0.0 {
            let h = self.t / self.substeps as f64;
            let mut term = vec![C64::new(0.0, 0.0); v.len()];
            let mut next = term.clone();
            for _ in 0..self.substeps {
                term.copy_from_slice(v);
                for i in 1..=40 {
                    self.band_apply(k, &term, &mut next);
                    let f = h / i as f64;
                    let mut small = 0.0_f64;
                    let mut big = 0.0_f64;
                    for (j, x) in next.iter().enumerate() {
                        term[j] = x * f;
                        v[j] += term[j];
                        small = small.max(term[j].norm());
                        big = big.max(v[j].norm());
                    }
                    if small <= 1e-17 * big {
                        break;
                    }
                }
            }
        }
        let decay = (-self.dephasing * (k * k) as f64 * self.t).exp();
        if decay != 1.0 {
            v.iter_mut().for_each(|z| *z *= decay);
        }
    }

    /// Applies the channel to any dim × dim operator (not only states).
    pub fn apply(&self, x: &CMat) -> Result<CMat> {
        let m = self.dim;
        if x.dim() != (m, m) {
            return Err(DptError::Dimension(format!("channel on {m} levels applied to {:?}", x.dim())));
        }
        let mut out = CMat::zeros((m, m));
        let mut v = Vec::with_capacity(m);
        for k in 0..m {
            for lower in [false, true] {
                if lower && k == 0 {
                    continue;
                }
                v.clear();
                v.extend((0..m - k).map(|j| if lower { x[[j + k, j]] } else { x[[j, j + k]] }));
                self.band_propagate(k, &mut v);
                for (j, z) in v.iter().enumerate() {
                    if lower {
                        out[[j + k, j]] = *z;
                    } else {
                        out[[j, j + k]] = *z;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Linear map X ↦ AX + XA† + Σ L X L† with A = −iH − ½ΣL†L, in sparse form.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    a_eff: Csr,
    jumps: Vec<Csr>,
    norm: f64,
    dim: usize,
}

impl Liouvillian {
    pub fn new(h: Option<&CMat>, jumps: &[CMat], dim: usize) -> Self {
        let mut a = match h {
            Some(h) => h.mapv(|z| z * -I),
            None => CMat::zeros((dim, dim)),
        };
        let mut norm = h.map(|h| Csr::from_dense(h).norm_bound()).unwrap_or(0.0);
        let mut sparse = Vec::with_capacity(jumps.len());
        for l in jumps {
            let ls = Csr::from_dense(l);
            let ltl = ls.adjoint().mul_dense(l.view());
            a.scaled_add(C64::new(-0.5, 0.0), &ltl);
            norm += Csr::from_dense(&ltl).norm_bound();
            sparse.push(ls);
        }
        Liouvillian { a_eff: Csr::from_dense(&a), jumps: sparse, norm, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Step size bound min(0.05/‖generator‖, dt_max).
    pub fn default_dt(&self, dt_max: f64) -> f64 {
        if self.norm > 0.0 {
            (STEP_SCALE / self.norm).min(dt_max)
        } else {
            dt_max
        }
    }

    pub fn apply(&self, x: &CMat, out: &mut CMat) {
        out.fill(C64::new(0.0, 0.0));
        self.a_eff.mul_dense_acc(x.view(), ONE, out);
        self.a_eff.dense_mul_adj_acc(x.view(), ONE, out);
        for l in &self.jumps {
            let left = l.mul_dense(x.view());
            l.dense_mul_adj_acc(left.view(), ONE, out);
        }
    }

    /// Fixed-step RK4 over [0, t] with step ≤ `dt`.
    pub fn integrate(&self, x: &CMat, t: f64, dt: f64) -> Result<CMat> {
        if t < 0.0 || !(dt > 0.0) {
            return Err(DptError::InvalidParameter(format!("need t >= 0 and dt > 0, got t={t} dt={dt}")));
        }
        if t == 0.0 {
            return Ok(x.clone());
        }
        let steps = (t / dt).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let tr0 = linalg::trace(x);
        let mut y = x.clone();
        let n = x.nrows();
        let mut k = CMat::zeros((n, n));
        let mut acc = CMat::zeros((n, n));
        let mut stage = CMat::zeros((n, n));
        for step in 0..steps {
            self.apply(&y, &mut k);
            acc.assign(&k);
            stage.assign(&y);
            stage.scaled_add(C64::new(h / 2.0, 0.0), &k);
            self.apply(&stage, &mut k);
            acc.scaled_add(C64::new(2.0, 0.0), &k);
            stage.assign(&y);
            stage.scaled_add(C64::new(h / 2.0, 0.0), &k);
            self.apply(&stage, &mut k);
            acc.scaled_add(C64::new(2.0, 0.0), &k);
            stage.assign(&y);
            stage.scaled_add(C64::new(h, 0.0), &k);
            self.apply(&stage, &mut k);
            acc += &k;
            y.scaled_add(C64::new(h / 6.0, 0.0), &acc);
            let drift = (linalg::trace(&y) - tr0).norm();
            if !(drift <= TRACE_DRIFT_ABORT * tr0.norm().max(1.0)) {
                return Err(DptError::Unstable { drift, elapsed: h * (step + 1) as f64 });
            }
        }
        Ok(y)
    }
}

fn check_hermitian(h: &SpinBosonOperator) -> Result<()> {
    let asym = h.relative_asymmetry();
    if asym > crate::fockspace::HAMILTONIAN_TOL {
        return Err(DptError::NotHermitian(asym));
    }
    Ok(())
}

/// ρ → UρU†, U = exp(−iHt)
pub fn unitary_step(rho: &DensityMatrix, h: &SpinBosonOperator, t: f64) -> Result<DensityMatrix> {
    check_hermitian(h)?;
    if rho.dim() != h.dim() {
        return Err(DptError::Dimension(format!("state {} vs operator {}", rho.dim(), h.dim())));
    }
    if t < 0.0 {
        return Err(DptError::InvalidParameter(format!("t must be >= 0, got {t}")));
    }
    let u = linalg::expm_hermitian(h.matrix(), t);
    let mut out = linalg::sandwich(&u, rho.matrix());
    linalg::hermitize(&mut out);
    Ok(DensityMatrix::from_raw(out))
}

/// Integrates dρ/ds = −i[H,ρ] + Σ D[L_k]ρ over [0, t] with RK4. `dt_max`
/// defaults to 0.1 µs; the step is further capped at 0.05/‖generator‖.
pub fn lindblad_step(
    rho: &DensityMatrix,
    h: &SpinBosonOperator,
    jumps: &JumpOperatorSet,
    t: f64,
    dt_max: Option<f64>,
) -> Result<DensityMatrix> {
    check_hermitian(h)?;
    if rho.dim() != h.dim() || jumps.ops.iter().any(|l| l.dim() != rho.dim()) {
        return Err(DptError::Dimension("state, Hamiltonian and jump operators must share a dimension".into()));
    }
    let ls: Vec<CMat> = jumps.ops.iter().map(|l| l.matrix().clone()).collect();
    let gen = Liouvillian::new(Some(h.matrix()), &ls, rho.dim());
    let dt = gen.default_dt(dt_max.unwrap_or(DEFAULT_DT_MAX));
    let mut out = gen.integrate(rho.matrix(), t, dt)?;
    linalg::hermitize(&mut out);
    Ok(DensityMatrix::from_raw(out))
}

/// ρ → |↓⟩⟨↓| ⊗ Tr_spin ρ
pub fn spin_reset(rho: &DensityMatrix) -> DensityMatrix {
    DensityMatrix::spin_down_product(&trace_out_spin(rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Coherent red-sideband pulse between two spin resets.
    #[default]
    Exact,
    /// Amplitude damping with L = (Ω_c/2)√τ_c a.
    Lindblad,
}

impl std::str::FromStr for ChannelMode {
    type Err = DptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(ChannelMode::Exact),
            "lindblad" => Ok(ChannelMode::Lindblad),
            other => Err(DptError::Config(format!("unknown channel `{other}` (expected exact|lindblad)"))),
        }
    }
}

/// Options shared by both cooling channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelOptions {
    pub idle_sign: IdleSign,
    pub dt_max: f64,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        ChannelOptions { idle_sign: IdleSign::Plus, dt_max: DEFAULT_DT_MAX }
    }
}

/// Reset → red-sideband pulse in the cooling picture → reset → recoil → idle.
/// Returns the state and the excited population just before the second pump.
pub fn cooling_channel_exact(
    rho: &DensityMatrix,
    cool: &CoolParams,
    d: &DerivedParams,
    t_wall: f64,
    noise: &NoiseParams,
    opts: &ChannelOptions,
) -> Result<(DensityMatrix, f64)> {
    let cutoff = rho.cutoff();
    let h_c = h_red_sideband(cool.omega_c, cutoff);
    let jumps = make_noise_jumps(noise, cutoff);
    let pumped = spin_reset(rho);
    let cooling_frame = frame_convert(&pumped, t_wall, d, FrameDirection::ToCoolingFrame);
    let pulsed = if jumps.is_empty() {
        unitary_step(&cooling_frame, &h_c, cool.tau_c)?
    } else {
        lindblad_step(&cooling_frame, &h_c, &jumps, cool.tau_c, Some(opts.dt_max))?
    };
    let back = frame_convert(&pulsed, t_wall + cool.tau_c, d, FrameDirection::ToDriveFrame);
    let p_up = back.spin_up_population().clamp(0.0, 1.0);
    let out = finish_dissipation(&spin_reset(&back), p_up, cool, d, noise, opts)?;
    Ok((out, p_up))
}

/// As [`cooling_channel_exact`] with the pulse replaced by amplitude damping
/// at rate (Ω_c/2)²τ_c for τ_c. The second value is the expected number of
/// phonons removed, which plays the role of the scattered excitation.
pub fn cooling_channel_lindblad(
    rho: &DensityMatrix,
    cool: &CoolParams,
    d: &DerivedParams,
    t_wall: f64,
    noise: &NoiseParams,
    opts: &ChannelOptions,
) -> Result<(DensityMatrix, f64)> {
    let cutoff = rho.cutoff();
    let mut jumps = JumpOperatorSet::new(vec![cooling_jump(cool, cutoff)]);
    jumps.extend(&make_noise_jumps(noise, cutoff));
    let pumped = spin_reset(rho);
    let before = pumped.mean_phonon_number();
    let cooling_frame = frame_convert(&pumped, t_wall, d, FrameDirection::ToCoolingFrame);
    let zero = SpinBosonOperator::zeros(cutoff);
    let damped = lindblad_step(&cooling_frame, &zero, &jumps, cool.tau_c, Some(opts.dt_max))?;
    let back = frame_convert(&damped, t_wall + cool.tau_c, d, FrameDirection::ToDriveFrame);
    let removed = (before - back.mean_phonon_number()).clamp(0.0, 1.0);
    let out = finish_dissipation(&spin_reset(&back), removed, cool, d, noise, opts)?;
    Ok((out, removed))
}

/// (Ω_c/2)√τ_c · 1 ⊗ a
pub fn cooling_jump(cool: &CoolParams, cutoff: FockCutoff) -> SpinBosonOperator {
    let a = build_boson_ops(cutoff).annihilation.mapv(|z| z * cool.damping_rate().sqrt());
    tensor(&identity(2), &a).expect("2x2 spin factor")
}

fn finish_dissipation(
    reset: &DensityMatrix,
    p_up: f64,
    cool: &CoolParams,
    d: &DerivedParams,
    noise: &NoiseParams,
    opts: &ChannelOptions,
) -> Result<DensityMatrix> {
    let kicked = recoil_kick(reset, p_up, noise)?;
    idle(&kicked, cool.tau_d - cool.tau_c, d, noise, opts)
}

/// Free evolution under ±ΔH₀ (plus noise dissipators) for `t`.
pub fn idle(rho: &DensityMatrix, t: f64, d: &DerivedParams, noise: &NoiseParams, opts: &ChannelOptions) -> Result<DensityMatrix> {
    let cutoff = rho.cutoff();
    let diag = frame_shift_diagonal(d, cutoff);
    let sign = opts.idle_sign.sign();
    let jumps = make_noise_jumps(noise, cutoff);
    if jumps.is_empty() {
        return Ok(DensityMatrix::from_raw(diagonal_conjugate(rho.matrix(), &diag, -sign * t)));
    }
    let h = CMat::from_diag(&ndarray::Array1::from_iter(diag.iter().map(|&e| C64::new(sign * e, 0.0))));
    lindblad_step(rho, &SpinBosonOperator::from_matrix(h)?, &jumps, t, Some(opts.dt_max))
}

/// Incoherent heating that raises ⟨a†a⟩ by recoil_dn·(N_p·p_up)².
///
/// Applied as a heating pulse with jump √μ a† of fixed length T; for that
/// generator n̄(T) = (n̄₀+1)e^{μT} − 1, so μT = ln(1 + Δn/(n̄₀+1)).
pub fn recoil_kick(rho: &DensityMatrix, p_up: f64, noise: &NoiseParams) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p_up) {
        return Err(DptError::InvalidParameter(format!("p_up must lie in [0,1], got {p_up}")));
    }
    let dn = noise.recoil_phonons(p_up);
    if dn == 0.0 {
        return Ok(rho.clone());
    }
    let cutoff = rho.cutoff();
    let mu = (dn / (rho.mean_phonon_number() + 1.0)).ln_1p() / RECOIL_PULSE;
    let l = build_boson_ops(cutoff).creation.mapv(|z| z * mu.sqrt());
    let jumps = JumpOperatorSet::new(vec![tensor(&identity(2), &l)?]);
    lindblad_step(rho, &SpinBosonOperator::zeros(cutoff), &jumps, RECOIL_PULSE, None)
}

//! Drive parameters, the Rabi Hamiltonian, sideband Hamiltonians, and the
//! relative phase between the drive and cooling pictures.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{DptError, Result};
use crate::fockspace::{
    build_boson_ops, build_spin_ops, tensor, DensityMatrix, FockCutoff, SpinBosonOperator,
};
use crate::linalg::{CMat, C64};

/// f [kHz] → ω [rad/µs]
pub fn khz_to_rad_per_us(f_khz: f64) -> f64 {
    2.0 * PI * f_khz * 1e-3
}

/// ω [rad/µs] → f [kHz]
pub fn rad_per_us_to_khz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e-3)
}

/// Rate [s⁻¹] → [µs⁻¹]
pub fn per_s_to_per_us(rate: f64) -> f64 {
    rate * 1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    /// Blue-sideband detuning δ_b, rad/µs.
    pub delta_b: f64,
    /// Red-sideband detuning δ_r, rad/µs.
    pub delta_r: f64,
    /// Sideband Rabi frequency Ω_SB, rad/µs.
    pub omega_sb: f64,
    /// Drive duration per cycle, µs.
    pub tau: f64,
}

impl DriveParams {
    pub fn from_khz(delta_b_khz: f64, delta_r_khz: f64, omega_sb_khz: f64, tau_us: f64) -> Self {
        DriveParams {
            delta_b: khz_to_rad_per_us(delta_b_khz),
            delta_r: khz_to_rad_per_us(delta_r_khz),
            omega_sb: khz_to_rad_per_us(omega_sb_khz),
            tau: tau_us,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_r > 0.0) || !(self.delta_b > self.delta_r) {
            return Err(DptError::InvalidParameter(format!(
                "need delta_b > delta_r > 0, got delta_b={} delta_r={}",
                self.delta_b, self.delta_r
            )));
        }
        if !(self.omega_sb >= 0.0) || !self.omega_sb.is_finite() {
            return Err(DptError::InvalidParameter(format!("omega_sb must be >= 0, got {}", self.omega_sb)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(DptError::InvalidParameter(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// Same detunings, Ω_SB chosen so that the dimensionless coupling equals `g`.
    pub fn with_coupling(&self, g: f64) -> Self {
        let omega_sb = g * (self.delta_b.powi(2) - self.delta_r.powi(2)).sqrt() / 2.0;
        DriveParams { omega_sb, ..*self }
    }

    /// Keeps δ_b − δ_r fixed and sets δ_b + δ_r so that ω_a/ω_f = `ratio`.
    pub fn with_ratio(&self, ratio: f64) -> Self {
        let diff = self.delta_b - self.delta_r;
        let sum = ratio * diff;
        DriveParams { delta_b: (sum + diff) / 2.0, delta_r: (sum - diff) / 2.0, ..*self }
    }

    pub fn coupling(&self) -> f64 {
        2.0 * self.omega_sb / (self.delta_b.powi(2) - self.delta_r.powi(2)).sqrt()
    }

    pub fn ratio(&self) -> f64 {
        (self.delta_b + self.delta_r) / (self.delta_b - self.delta_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolParams {
    /// Red-sideband Rabi frequency Ω_c, rad/µs.
    pub omega_c: f64,
    /// Cooling pulse length, µs.
    pub tau_c: f64,
    /// Whole dissipation stage (pulse, pumping, idle), µs.
    pub tau_d: f64,
}

impl CoolParams {
    pub fn from_khz(omega_c_khz: f64, tau_c_us: f64, tau_d_us: f64) -> Self {
        CoolParams { omega_c: khz_to_rad_per_us(omega_c_khz), tau_c: tau_c_us, tau_d: tau_d_us }
    }

    /// Ω_c = 0 is accepted: it switches the cooling off, which the frame
    /// bookkeeping tests rely on.
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_c >= 0.0) || !self.omega_c.is_finite() {
            return Err(DptError::InvalidParameter(format!("omega_c must be >= 0, got {}", self.omega_c)));
        }
        if !(self.tau_c > 0.0) || !(self.tau_d >= self.tau_c) || !self.tau_d.is_finite() {
            return Err(DptError::InvalidParameter(format!(
                "need tau_d >= tau_c > 0, got tau_c={} tau_d={}",
                self.tau_c, self.tau_d
            )));
        }
        Ok(())
    }

    /// Pulse area per phonon amplitude, Ω_c τ_c / 2.
    pub fn pulse_angle(&self) -> f64 {
        self.omega_c * self.tau_c / 2.0
    }

    /// Damping rate κ of the linearised channel, (Ω_c/2)² τ_c.
    pub fn damping_rate(&self) -> f64 {
        self.omega_c.powi(2) * self.tau_c / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub omega_a: f64,
    pub omega_f: f64,
    pub lambda: f64,
    pub ratio_r: f64,
    pub coupling_g: f64,
}

pub fn derive(drive: &DriveParams) -> Result<DerivedParams> {
    drive.validate()?;
    let omega_a = (drive.delta_b + drive.delta_r) / 2.0;
    let omega_f = (drive.delta_b - drive.delta_r) / 2.0;
    Ok(DerivedParams {
        omega_a,
        omega_f,
        lambda: drive.omega_sb / 2.0,
        ratio_r: omega_a / omega_f,
        coupling_g: drive.coupling(),
    })
}

/// (ω_a/2)σ_z ⊗ 1 + ω_f 1 ⊗ a†a + λ(σ₊ + σ₋) ⊗ (a + a†)
pub fn h_qrm(d: &DerivedParams, cutoff: FockCutoff) -> SpinBosonOperator {
    let b = build_boson_ops(cutoff);
    let s = build_spin_ops();
    let m = cutoff.boson_dim();
    let mut h = frame_shift_generator(d, cutoff).into_matrix();
    let sx = &s.sigma_plus + &s.sigma_minus;
    let x = &b.annihilation + &b.creation;
    let coupling = tensor(&sx, &x).expect("2x2 spin factor").into_matrix();
    h.scaled_add(C64::new(d.lambda, 0.0), &coupling);
    debug_assert_eq!(h.nrows(), 2 * m);
    SpinBosonOperator::from_matrix(h).expect("square")
}

/// (Ω_c/2)(a σ₊ + a† σ₋)
pub fn h_red_sideband(omega_c: f64, cutoff: FockCutoff) -> SpinBosonOperator {
    sideband(omega_c, cutoff, false)
}

/// (Ω/2)(a† σ₊ + a σ₋)
pub fn h_blue_sideband(omega_probe: f64, cutoff: FockCutoff) -> SpinBosonOperator {
    sideband(omega_probe, cutoff, true)
}

fn sideband(omega: f64, cutoff: FockCutoff, blue: bool) -> SpinBosonOperator {
    let b = build_boson_ops(cutoff);
    let s = build_spin_ops();
    let (raise, lower) = if blue { (&b.creation, &b.annihilation) } else { (&b.annihilation, &b.creation) };
    let up = tensor(&s.sigma_plus, raise).expect("2x2").into_matrix();
    let down = tensor(&s.sigma_minus, lower).expect("2x2").into_matrix();
    let h = (up + down).mapv(|z| z * (omega / 2.0));
    SpinBosonOperator::from_matrix(h).expect("square")
}

/// ΔH₀ = (ω_a/2)σ_z ⊗ 1 + ω_f 1 ⊗ a†a
pub fn frame_shift_generator(d: &DerivedParams, cutoff: FockCutoff) -> SpinBosonOperator {
    let diag = frame_shift_diagonal(d, cutoff);
    let h = CMat::from_diag(&ndarray::Array1::from_iter(diag.into_iter().map(|v| C64::new(v, 0.0))));
    SpinBosonOperator::from_matrix(h).expect("square")
}

/// Diagonal of ΔH₀ in the |s,n⟩ ordering.
pub fn frame_shift_diagonal(d: &DerivedParams, cutoff: FockCutoff) -> Vec<f64> {
    let m = cutoff.boson_dim();
    let mut out = Vec::with_capacity(2 * m);
    // σ_z eigenvalue per spin index: ↓ = −1, ↑ = +1
    for sz in [-1.0, 1.0] {
        for n in 0..m {
            out.push(sz * d.omega_a / 2.0 + d.omega_f * n as f64);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameDirection {
    ToCoolingFrame,
    ToDriveFrame,
}

/// Hamiltonian seen in the drive picture while neither drive nor cooling
/// laser is on: ±ΔH₀.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdleSign {
    #[default]
    Plus,
    Minus,
}

impl IdleSign {
    pub fn sign(self) -> f64 {
        match self {
            IdleSign::Plus => 1.0,
            IdleSign::Minus => -1.0,
        }
    }
}

/// ρ → VρV† with V = exp(+iΔH₀ t_wall) towards the cooling picture, V† back.
pub fn frame_convert(rho: &DensityMatrix, t_wall: f64, d: &DerivedParams, direction: FrameDirection) -> DensityMatrix {
    let sign = match direction {
        FrameDirection::ToCoolingFrame => 1.0,
        FrameDirection::ToDriveFrame => -1.0,
    };
    let diag = frame_shift_diagonal(d, rho.cutoff());
    DensityMatrix::from_raw(diagonal_conjugate(rho.matrix(), &diag, sign * t_wall))
}

/// exp(iDt) ρ exp(−iDt) for diagonal D.
pub(crate) fn diagonal_conjugate(rho: &CMat, diag: &[f64], t: f64) -> CMat {
    let phases: Vec<C64> = diag.iter().map(|&e| C64::from_polar(1.0, e * t)).collect();
    CMat::from_shape_fn(rho.dim(), |(j, k)| rho[[j, k]] * phases[j] * phases[k].conj())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{basis_ket, identity, DOWN, UP};
    use crate::linalg::{self, expm_hermitian};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cut(n: usize) -> FockCutoff {
        FockCutoff::new(n).unwrap()
    }

    fn fig2_drive() -> DriveParams {
        DriveParams::from_khz(26.0, 24.0, 9.0, 20.0)
    }

    #[test]
    fn derive_examples() {
        let d = derive(&fig2_drive()).unwrap();
        assert_abs_diff_eq!(d.omega_a, khz_to_rad_per_us(25.0), epsilon = 1e-12);
        assert_abs_diff_eq!(d.omega_f, khz_to_rad_per_us(1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(d.ratio_r, 25.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.coupling_g, 1.8, epsilon = 1e-12);
        assert_abs_diff_eq!(d.lambda, khz_to_rad_per_us(4.5), epsilon = 1e-12);

        let doubled = DriveParams::from_khz(52.0, 48.0, 9.0, 20.0);
        assert_abs_diff_eq!(derive(&doubled).unwrap().ratio_r, 25.0, epsilon = 1e-12);

        let bad = DriveParams::from_khz(24.0, 26.0, 9.0, 20.0);
        assert!(derive(&bad).is_err());
    }

    #[test]
    fn ratio_and_coupling_setters() {
        let base = fig2_drive();
        let r = base.with_ratio(400.0);
        assert_abs_diff_eq!(r.ratio(), 400.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.delta_b - r.delta_r, base.delta_b - base.delta_r, epsilon = 1e-12);
        let g = r.with_coupling(1.3);
        assert_abs_diff_eq!(g.coupling(), 1.3, epsilon = 1e-12);
    }

    #[test]
    fn qrm_matrix_elements() {
        let c = cut(3);
        let mut d = derive(&fig2_drive()).unwrap();
        let h = h_qrm(&d, c);
        assert!(h.is_hermitian());
        assert_abs_diff_eq!(h.element((UP, 0), (DOWN, 1)).re, d.lambda, epsilon = 1e-15);

        d.lambda = 0.0;
        let h0 = h_qrm(&d, c);
        assert_abs_diff_eq!(h0.element((DOWN, 0), (DOWN, 0)).re, -d.omega_a / 2.0);
        assert_eq!(h0.matrix(), frame_shift_generator(&d, c).matrix());

        let vals = linalg::eigvalsh(h_qrm(&d, cut(1)).matrix());
        let mut want = vec![-d.omega_a / 2.0, -d.omega_a / 2.0 + d.omega_f, d.omega_a / 2.0, d.omega_a / 2.0 + d.omega_f];
        want.sort_by(f64::total_cmp);
        for (v, w) in vals.iter().zip(&want) {
            assert_abs_diff_eq!(v, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn red_sideband_examples() {
        let c = cut(4);
        let oc = khz_to_rad_per_us(20.0);
        let h = h_red_sideband(oc, c);
        assert!(h.is_hermitian());
        assert_abs_diff_eq!(h.element((UP, 0), (DOWN, 1)).re, oc / 2.0);
        let dark = h.apply(&basis_ket(c, DOWN, 0));
        assert!(dark.iter().all(|z| z.norm() == 0.0));

        for n in 1..4 {
            let t = 7.3;
            let u = expm_hermitian(h.matrix(), t);
            let psi = u.dot(&basis_ket(c, DOWN, n));
            let p_up: f64 = (0..c.boson_dim()).map(|k| psi[c.index(UP, k)].norm_sqr()).sum();
            let want = ((n as f64).sqrt() * oc * t / 2.0).sin().powi(2);
            assert_abs_diff_eq!(p_up, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn blue_sideband_examples() {
        let c = cut(4);
        let om = khz_to_rad_per_us(10.0);
        let h = h_blue_sideband(om, c);
        assert!(h.is_hermitian());
        assert_abs_diff_eq!(h.element((UP, 3), (DOWN, 2)).re, om / 2.0 * 3f64.sqrt());
        // |↓,n_max⟩ would need |↑,n_max+1⟩, which is outside the truncation.
        let row = c.index(DOWN, c.n_max());
        assert!(h.matrix().row(row).iter().all(|z| z.norm() == 0.0));
        let t = 11.0;
        let psi = expm_hermitian(h.matrix(), t).dot(&basis_ket(c, DOWN, 0));
        let p_up: f64 = (0..c.boson_dim()).map(|k| psi[c.index(UP, k)].norm_sqr()).sum();
        assert_abs_diff_eq!(p_up, (om * t / 2.0).sin().powi(2), epsilon = 1e-10);
    }

    #[test]
    fn frame_shift_examples() {
        let c = cut(3);
        let d = derive(&fig2_drive()).unwrap();
        let g = frame_shift_generator(&d, c);
        assert_abs_diff_eq!(g.element((DOWN, 1), (DOWN, 1)).re, -d.omega_a / 2.0 + d.omega_f);
        let n = crate::fockspace::tensor(&identity(2), &build_boson_ops(c).number).unwrap();
        let comm = g.matrix().dot(n.matrix()) - n.matrix().dot(g.matrix());
        assert!(comm.iter().all(|z| z.norm() == 0.0));
    }

    fn random_state(c: FockCutoff, seed: u64) -> DensityMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = c.dim();
        let a = CMat::from_shape_fn((dim, dim), |_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let mut rho = a.dot(&linalg::adjoint(&a));
        let tr = linalg::trace(&rho).re;
        rho.mapv_inplace(|z| z / tr);
        linalg::hermitize(&mut rho);
        DensityMatrix::new(rho).unwrap()
    }

    #[test]
    fn frame_convert_examples() {
        let c = cut(3);
        let d = derive(&fig2_drive()).unwrap();
        let rho = random_state(c, 1);
        let same = frame_convert(&rho, 0.0, &d, FrameDirection::ToCoolingFrame);
        assert_eq!(same.matrix(), rho.matrix());

        let diag = DensityMatrix::basis(c, UP, 2);
        let moved = frame_convert(&diag, 123.4, &d, FrameDirection::ToCoolingFrame);
        assert!(linalg::frobenius((moved.matrix() - diag.matrix()).view()) < 1e-15);

        let there = frame_convert(&rho, 91.7, &d, FrameDirection::ToCoolingFrame);
        let back = frame_convert(&there, 91.7, &d, FrameDirection::ToDriveFrame);
        let err = linalg::frobenius((back.matrix() - rho.matrix()).view());
        assert!(err < 1e-12, "round trip error {err}");

        let v = expm_hermitian(frame_shift_generator(&d, c).matrix(), -91.7);
        let direct = linalg::sandwich(&v, rho.matrix());
        assert!(linalg::frobenius((&direct - there.matrix()).view()) < 1e-12);
    }

    #[test]
    fn decoupled_propagator_factorises() {
        let c = cut(4);
        let mut d = derive(&fig2_drive()).unwrap();
        d.lambda = 0.0;
        let t = 3.7;
        let u = expm_hermitian(h_qrm(&d, c).matrix(), t);
        for s in [DOWN, UP] {
            let sz = if s == DOWN { -1.0 } else { 1.0 };
            for n in 0..c.boson_dim() {
                let k = c.index(s, n);
                let want = C64::from_polar(1.0, -sz * d.omega_a / 2.0 * t) * C64::from_polar(1.0, -d.omega_f * n as f64 * t);
                assert_abs_diff_eq!((u[[k, k]] - want).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn coupling_identity(db in 1.0f64..500.0, frac in 0.01f64..0.99, sb in 0.0f64..50.0) {
            let drive = DriveParams::from_khz(db, db * frac, sb, 20.0);
            let d = derive(&drive).unwrap();
            let lhs = d.coupling_g * (drive.delta_b.powi(2) - drive.delta_r.powi(2)).sqrt();
            prop_assert!((lhs - 2.0 * drive.omega_sb).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn hamiltonians_are_hermitian(db in 1.0f64..500.0, frac in 0.01f64..0.99, sb in 0.0f64..50.0, n in 1usize..12) {
            let d = derive(&DriveParams::from_khz(db, db * frac, sb, 20.0)).unwrap();
            let c = cut(n);
            prop_assert!(h_qrm(&d, c).relative_asymmetry() <= 1e-12);
            prop_assert!(h_red_sideband(d.lambda + 0.1, c).relative_asymmetry() <= 1e-12);
            prop_assert!(h_blue_sideband(d.lambda + 0.1, c).relative_asymmetry() <= 1e-12);
        }

        #[test]
        fn frame_convert_preserves_spectrum(seed in 0u64..1000, t in 0.0f64..500.0) {
            let c = cut(2);
            let d = derive(&fig2_drive()).unwrap();
            let rho = random_state(c, seed);
            let out = frame_convert(&rho, t, &d, FrameDirection::ToCoolingFrame);
            for (a, b) in rho.spectrum().iter().zip(out.spectrum()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

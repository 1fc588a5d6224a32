//! Truncated qubit ⊗ Fock space.
//!
//! Basis ordering is |s⟩ ⊗ |n⟩ with the spin as the slow index: index
//! `s·(n_max+1) + n`, where s = 0 is |↓⟩ and s = 1 is |↑⟩. σ_z|↓⟩ = −|↓⟩.

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::error::{DptError, Result};
use crate::linalg::{self, CMat, C64, ONE, ZERO};

/// ‖ρ − ρ†‖_F bound for an accepted density matrix.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// |Tr ρ − 1| bound.
pub const TRACE_TOL: f64 = 1e-9;
/// Lower bound on the smallest eigenvalue.
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Relative Frobenius asymmetry allowed for Hamiltonians.
pub const HAMILTONIAN_TOL: f64 = 1e-12;
/// Imaginary residue tolerated in an expectation value.
pub const EXPECTATION_IMAG_TOL: f64 = 1e-9;
/// Default truncation acceptance threshold on the tail mass.
pub const DEFAULT_TAIL_EPSILON: f64 = 1e-6;

pub const DOWN: usize = 0;
pub const UP: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FockCutoff {
    n_max: usize,
}

impl FockCutoff {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(DptError::InvalidParameter("n_max must be >= 1".into()));
        }
        Ok(FockCutoff { n_max })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Boson dimension n_max + 1.
    pub fn boson_dim(&self) -> usize {
        self.n_max + 1
    }

    /// Full Hilbert dimension 2·(n_max + 1).
    pub fn dim(&self) -> usize {
        2 * self.boson_dim()
    }

    pub fn index(&self, spin: usize, n: usize) -> usize {
        spin * self.boson_dim() + n
    }

    /// Cutoff scaled by `growth`, rounded up and strictly larger.
    pub fn grown(&self, growth: f64) -> FockCutoff {
        let next = ((self.n_max as f64) * growth).ceil() as usize;
        FockCutoff { n_max: next.max(self.n_max + 1) }
    }
}

/// Boson-factor ladder operators on the (n_max+1)-dimensional Fock space.
#[derive(Debug, Clone)]
pub struct BosonOps {
    pub annihilation: CMat,
    pub creation: CMat,
    pub number: CMat,
}

pub fn build_boson_ops(cutoff: FockCutoff) -> BosonOps {
    let m = cutoff.boson_dim();
    let mut a = CMat::zeros((m, m));
    for n in 1..m {
        a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    let creation = linalg::adjoint(&a);
    let number = creation.dot(&a);
    BosonOps { annihilation: a, creation, number }
}

#[derive(Debug, Clone)]
pub struct SpinOps {
    pub sigma_plus: CMat,
    pub sigma_minus: CMat,
    pub sigma_z: CMat,
    pub projector_down: CMat,
}

pub fn build_spin_ops() -> SpinOps {
    let mut sp = CMat::zeros((2, 2));
    sp[[UP, DOWN]] = ONE;
    let sm = linalg::adjoint(&sp);
    let mut sz = CMat::zeros((2, 2));
    sz[[DOWN, DOWN]] = -ONE;
    sz[[UP, UP]] = ONE;
    let mut pd = CMat::zeros((2, 2));
    pd[[DOWN, DOWN]] = ONE;
    SpinOps { sigma_plus: sp, sigma_minus: sm, sigma_z: sz, projector_down: pd }
}

pub fn identity(n: usize) -> CMat {
    CMat::from_diag_elem(n, ONE)
}

/// Operator on the full spin ⊗ boson space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinBosonOperator {
    matrix: CMat,
}

impl SpinBosonOperator {
    pub fn from_matrix(matrix: CMat) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c || r < 4 || r % 2 != 0 {
            return Err(DptError::Dimension(format!("operator must be square with even dim >= 4, got {r}x{c}")));
        }
        Ok(SpinBosonOperator { matrix })
    }

    pub fn zeros(cutoff: FockCutoff) -> Self {
        SpinBosonOperator { matrix: CMat::zeros((cutoff.dim(), cutoff.dim())) }
    }

    pub fn identity(cutoff: FockCutoff) -> Self {
        SpinBosonOperator { matrix: identity(cutoff.dim()) }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cutoff(&self) -> FockCutoff {
        FockCutoff { n_max: self.dim() / 2 - 1 }
    }

    pub fn adjoint(&self) -> Self {
        SpinBosonOperator { matrix: linalg::adjoint(&self.matrix) }
    }

    pub fn scaled(&self, s: f64) -> Self {
        SpinBosonOperator { matrix: self.matrix.mapv(|z| z * s) }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(SpinBosonOperator { matrix: &self.matrix + &other.matrix })
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(SpinBosonOperator { matrix: self.matrix.dot(&other.matrix) })
    }

    pub fn relative_asymmetry(&self) -> f64 {
        linalg::relative_asymmetry(&self.matrix)
    }

    pub fn is_hermitian(&self) -> bool {
        self.relative_asymmetry() <= HAMILTONIAN_TOL
    }

    /// Matrix element ⟨s,n| O |s',n'⟩.
    pub fn element(&self, bra: (usize, usize), ket: (usize, usize)) -> C64 {
        let c = self.cutoff();
        self.matrix[[c.index(bra.0, bra.1), c.index(ket.0, ket.1)]]
    }

    pub fn apply(&self, ket: &ndarray::Array1<C64>) -> ndarray::Array1<C64> {
        self.matrix.dot(ket)
    }
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(DptError::Dimension(format!("{a} vs {b}")));
    }
    Ok(())
}

/// Kronecker product with the spin as the slow index.
pub fn tensor(spin_part: &CMat, boson_part: &CMat) -> Result<SpinBosonOperator> {
    if spin_part.dim() != (2, 2) {
        return Err(DptError::Dimension(format!("spin factor must be 2x2, got {:?}", spin_part.dim())));
    }
    let (r, c) = boson_part.dim();
    if r != c || r < 2 {
        return Err(DptError::Dimension(format!("boson factor must be square with dim >= 2, got {r}x{c}")));
    }
    SpinBosonOperator::from_matrix(linalg::kron(spin_part, boson_part))
}

/// Basis ket |s, n⟩.
pub fn basis_ket(cutoff: FockCutoff, spin: usize, n: usize) -> ndarray::Array1<C64> {
    let mut v = ndarray::Array1::from_elem(cutoff.dim(), ZERO);
    v[cutoff.index(spin, n)] = ONE;
    v
}

/// Anything exposing Fock-number populations (summed over spin).
pub trait FockPopulations {
    fn fock_populations(&self) -> Vec<f64>;

    fn mean_phonon_number(&self) -> f64 {
        self.fock_populations().iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

/// Density matrix on the full spin ⊗ boson space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMat,
}

impl DensityMatrix {
    /// Wraps a matrix after checking Hermiticity, trace and positivity.
    pub fn new(matrix: CMat) -> Result<Self> {
        let rho = SpinBosonOperator::from_matrix(matrix)?.into_matrix();
        check_state(&rho)?;
        Ok(DensityMatrix { matrix: rho })
    }

    pub(crate) fn from_raw(matrix: CMat) -> Self {
        DensityMatrix { matrix }
    }

    pub fn pure(ket: &ndarray::Array1<C64>) -> Result<Self> {
        let norm: f64 = ket.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(DptError::InvalidState("zero ket".into()));
        }
        let n = ket.len();
        let m = CMat::from_shape_fn((n, n), |(i, j)| ket[i] * ket[j].conj() / (norm * norm));
        DensityMatrix::new(m)
    }

    pub fn basis(cutoff: FockCutoff, spin: usize, n: usize) -> Self {
        let mut m = CMat::zeros((cutoff.dim(), cutoff.dim()));
        let k = cutoff.index(spin, n);
        m[[k, k]] = ONE;
        DensityMatrix { matrix: m }
    }

    /// |↓⟩⟨↓| ⊗ ρ_m
    pub fn spin_down_product(boson: &BosonDensityMatrix) -> Self {
        let m = boson.dim();
        let mut full = CMat::zeros((2 * m, 2 * m));
        full.slice_mut(s![0..m, 0..m]).assign(boson.matrix());
        DensityMatrix { matrix: full }
    }

    /// spin ⊗ boson product state.
    pub fn product(spin: &CMat, boson: &BosonDensityMatrix) -> Result<Self> {
        let op = tensor(spin, boson.matrix())?;
        DensityMatrix::new(op.into_matrix())
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cutoff(&self) -> FockCutoff {
        FockCutoff { n_max: self.dim() / 2 - 1 }
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.matrix).re
    }

    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        check_state(&self.matrix)
    }

    pub fn spin_up_population(&self) -> f64 {
        let m = self.dim() / 2;
        (m..2 * m).map(|k| self.matrix[[k, k]].re).sum()
    }

    pub fn spectrum(&self) -> Vec<f64> {
        linalg::eigvalsh(&self.matrix)
    }
}

impl FockPopulations for DensityMatrix {
    fn fock_populations(&self) -> Vec<f64> {
        let m = self.dim() / 2;
        (0..m).map(|n| self.matrix[[n, n]].re + self.matrix[[m + n, m + n]].re).collect()
    }
}

/// Reduced density matrix of the bosonic mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BosonDensityMatrix {
    matrix: CMat,
}

impl BosonDensityMatrix {
    pub fn new(matrix: CMat) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c || r < 2 {
            return Err(DptError::Dimension(format!("boson state must be square with dim >= 2, got {r}x{c}")));
        }
        check_state(&matrix)?;
        Ok(BosonDensityMatrix { matrix })
    }

    pub(crate) fn from_raw(matrix: CMat) -> Self {
        BosonDensityMatrix { matrix }
    }

    pub fn vacuum(cutoff: FockCutoff) -> Self {
        BosonDensityMatrix::fock(cutoff, 0)
    }

    pub fn fock(cutoff: FockCutoff, n: usize) -> Self {
        let m = cutoff.boson_dim();
        let mut mat = CMat::zeros((m, m));
        mat[[n, n]] = ONE;
        BosonDensityMatrix { matrix: mat }
    }

    /// Diagonal state from (not necessarily normalised) populations.
    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        let total: f64 = populations.iter().sum();
        if populations.iter().any(|&p| p < 0.0) || total <= 0.0 {
            return Err(DptError::InvalidState("populations must be non-negative with positive sum".into()));
        }
        let diag = ndarray::Array1::from_iter(populations.iter().map(|&p| C64::new(p / total, 0.0)));
        BosonDensityMatrix::new(CMat::from_diag(&diag))
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cutoff(&self) -> FockCutoff {
        FockCutoff { n_max: self.dim() - 1 }
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.matrix).re
    }

    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        check_state(&self.matrix)
    }

    /// Embed into a larger cutoff (zero padding).
    pub fn padded(&self, cutoff: FockCutoff) -> Result<Self> {
        let m = cutoff.boson_dim();
        if m < self.dim() {
            return Err(DptError::Dimension(format!("cannot pad {} into {}", self.dim(), m)));
        }
        let mut mat = CMat::zeros((m, m));
        mat.slice_mut(s![0..self.dim(), 0..self.dim()]).assign(&self.matrix);
        Ok(BosonDensityMatrix { matrix: mat })
    }
}

impl FockPopulations for BosonDensityMatrix {
    fn fock_populations(&self) -> Vec<f64> {
        self.matrix.diag().iter().map(|z| z.re).collect()
    }
}

/// Hermiticity, trace and positivity bounds shared by both state types.
pub(crate) fn check_state(m: &CMat) -> Result<()> {
    check_state_cheap(m)?;
    if !linalg::is_positive_within(m, POSITIVITY_TOL) {
        let min = linalg::eigvalsh(m).first().copied().unwrap_or(0.0);
        return Err(DptError::InvalidState(format!("minimum eigenvalue {min:.3e} below -{POSITIVITY_TOL:.0e}")));
    }
    Ok(())
}

/// Hermiticity, trace, and non-negative diagonal: O(dim²).
pub(crate) fn check_state_cheap(m: &CMat) -> Result<()> {
    let asym = linalg::asymmetry(m);
    if !(asym <= HERMITICITY_TOL) {
        return Err(DptError::InvalidState(format!("Hermiticity defect {asym:.3e}")));
    }
    let tr = linalg::trace(m).re;
    if !((tr - 1.0).abs() <= TRACE_TOL) {
        return Err(DptError::InvalidState(format!("trace {tr:.12}")));
    }
    if let Some(d) = m.diag().iter().map(|z| z.re).find(|&d| d < -POSITIVITY_TOL) {
        return Err(DptError::InvalidState(format!("negative population {d:.3e}")));
    }
    Ok(())
}

/// Tr(ρ·O) for Hermitian O.
pub fn expectation(rho: &DensityMatrix, obs: &SpinBosonOperator) -> Result<f64> {
    check_same_dim(rho.dim(), obs.dim())?;
    let rm = rho.matrix();
    let om = obs.matrix();
    let n = rm.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += rm[[i, j]] * om[[j, i]];
        }
    }
    let scale = 1.0 + acc.re.abs();
    if acc.im.abs() > EXPECTATION_IMAG_TOL * scale {
        return Err(DptError::InvalidState(format!("expectation has imaginary residue {:.3e}", acc.im)));
    }
    Ok(acc.re)
}

/// Partial trace over the qubit.
pub fn trace_out_spin(rho: &DensityMatrix) -> BosonDensityMatrix {
    let m = rho.dim() / 2;
    let r = rho.matrix();
    let mat = &r.slice(s![0..m, 0..m]) + &r.slice(s![m..2 * m, m..2 * m]);
    BosonDensityMatrix { matrix: mat }
}

/// Thermal (geometric) populations p_n ∝ (n̄/(n̄+1))^n on the truncated space.
///
/// Fails when the untruncated mass beyond n_max exceeds `epsilon`.
pub fn thermal_state(nbar: f64, cutoff: FockCutoff, epsilon: f64) -> Result<BosonDensityMatrix> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(DptError::InvalidParameter(format!("thermal nbar must be >= 0, got {nbar}")));
    }
    let m = cutoff.boson_dim();
    if nbar == 0.0 {
        return Ok(BosonDensityMatrix::vacuum(cutoff));
    }
    let q = nbar / (nbar + 1.0);
    let beyond = q.powi(m as i32);
    if beyond > epsilon {
        return Err(DptError::Truncation { tail: beyond, epsilon, n_max: cutoff.n_max() });
    }
    let pops: Vec<f64> = (0..m).map(|n| (1.0 - q) * q.powi(n as i32)).collect();
    BosonDensityMatrix::diagonal(&pops)
}

/// Total population in Fock levels ≥ k, summed over spin.
pub fn tail_mass<S: FockPopulations + ?Sized>(rho: &S, k: usize) -> f64 {
    rho.fock_populations().iter().skip(k).sum()
}

/// Population in the highest retained Fock level; checked against ε after
/// every cycle.
pub fn truncation_tail<S: FockPopulations + ?Sized>(rho: &S) -> f64 {
    rho.fock_populations().last().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cut(n: usize) -> FockCutoff {
        FockCutoff::new(n).unwrap()
    }

    #[test]
    fn ladder_operators() {
        let ops = build_boson_ops(cut(1));
        assert_eq!(ops.annihilation[[0, 1]], ONE);
        assert_eq!(ops.annihilation[[0, 0]], ZERO);
        assert_eq!(ops.annihilation[[1, 0]], ZERO);
        let ops = build_boson_ops(cut(2));
        assert_abs_diff_eq!(ops.annihilation[[1, 2]].re, 2f64.sqrt(), epsilon = 1e-15);
        let ops = build_boson_ops(cut(3));
        for n in 0..4 {
            for k in 0..4 {
                let want = if n == k { n as f64 } else { 0.0 };
                assert_abs_diff_eq!(ops.number[[n, k]].re, want, epsilon = 1e-14);
            }
        }
        assert_eq!(ops.creation, linalg::adjoint(&ops.annihilation));
    }

    #[test]
    fn zero_cutoff_rejected() {
        assert!(FockCutoff::new(0).is_err());
    }

    #[test]
    fn spin_algebra() {
        let s = build_spin_ops();
        let p_up = s.sigma_plus.dot(&s.sigma_minus);
        assert_eq!(p_up[[UP, UP]], ONE);
        assert_eq!(p_up[[DOWN, DOWN]], ZERO);
        assert_eq!(s.sigma_z[[DOWN, DOWN]], -ONE);
        let comm = &s.sigma_plus.dot(&s.sigma_minus) - &s.sigma_minus.dot(&s.sigma_plus);
        assert_eq!(comm, s.sigma_z);
        assert_eq!(s.projector_down[[DOWN, DOWN]], ONE);
    }

    #[test]
    fn tensor_conventions() {
        let c = cut(4);
        let m = c.boson_dim();
        let id = tensor(&identity(2), &identity(m)).unwrap();
        assert_eq!(id.matrix(), &identity(c.dim()));

        let s = build_spin_ops();
        let sz = tensor(&s.sigma_z, &identity(m)).unwrap();
        let ket = basis_ket(c, UP, 3);
        assert_eq!(sz.apply(&ket), ket);

        let b = build_boson_ops(c);
        let op = tensor(&s.sigma_plus, &b.annihilation).unwrap();
        let out = op.apply(&basis_ket(c, DOWN, 1));
        assert_eq!(out, basis_ket(c, UP, 0));

        assert!(tensor(&identity(3), &identity(m)).is_err());
    }

    #[test]
    fn expectation_examples() {
        let c = cut(4);
        let b = build_boson_ops(c);
        let s = build_spin_ops();
        let num = tensor(&identity(2), &b.number).unwrap();
        let vac = DensityMatrix::basis(c, DOWN, 0);
        assert_abs_diff_eq!(expectation(&vac, &num).unwrap(), 0.0);

        let th = thermal_state(1.0, cut(60), 1e-6).unwrap();
        let rho = DensityMatrix::spin_down_product(&th);
        let nbar = expectation(&rho, &tensor(&identity(2), &build_boson_ops(cut(60)).number).unwrap()).unwrap();
        assert_abs_diff_eq!(nbar, 1.0, epsilon = 1e-9);

        let up2 = DensityMatrix::basis(c, UP, 2);
        let pu = tensor(&s.sigma_plus.dot(&s.sigma_minus), &identity(5)).unwrap();
        assert_abs_diff_eq!(expectation(&up2, &pu).unwrap(), 1.0);
    }

    #[test]
    fn expectation_rejects_corrupted_state() {
        let mut m = CMat::zeros((4, 4));
        m[[0, 0]] = ONE;
        m[[0, 1]] = C64::new(0.0, 0.5);
        let rho = DensityMatrix::from_raw(m);
        let mut obs = CMat::zeros((4, 4));
        obs[[1, 0]] = ONE;
        obs[[0, 1]] = ONE;
        let obs = SpinBosonOperator::from_matrix(obs).unwrap();
        assert!(expectation(&rho, &obs).is_err());
    }

    #[test]
    fn partial_trace_examples() {
        let c = cut(3);
        let r = trace_out_spin(&DensityMatrix::basis(c, DOWN, 1));
        assert_eq!(r, BosonDensityMatrix::fock(c, 1));

        let mut m = CMat::zeros((8, 8));
        m[[c.index(DOWN, 0), c.index(DOWN, 0)]] = C64::new(0.5, 0.0);
        m[[c.index(UP, 1), c.index(UP, 1)]] = C64::new(0.5, 0.0);
        let r = trace_out_spin(&DensityMatrix::new(m).unwrap());
        assert_abs_diff_eq!(r.matrix()[[0, 0]].re, 0.5);
        assert_abs_diff_eq!(r.matrix()[[1, 1]].re, 0.5);
        assert_abs_diff_eq!(r.trace(), 1.0);

        // (|↓,0⟩ + |↑,1⟩)/√2 is pure; its reduction is mixed.
        let ket = (&basis_ket(c, DOWN, 0) + &basis_ket(c, UP, 1)).mapv(|z| z / 2f64.sqrt());
        let bell = DensityMatrix::pure(&ket).unwrap();
        assert!(trace_out_spin(&bell).purity() < bell.purity());
    }

    #[test]
    fn thermal_examples() {
        let v = thermal_state(0.0, cut(5), 1e-6).unwrap();
        assert_eq!(v, BosonDensityMatrix::vacuum(cut(5)));
        let t = thermal_state(1.0, cut(40), 1e-6).unwrap();
        let p = t.fock_populations();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-11);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-11);
        assert_abs_diff_eq!(p[2], 0.125, epsilon = 1e-11);
        assert_abs_diff_eq!(t.mean_phonon_number(), 1.0, epsilon = 1e-9);
        assert!(matches!(thermal_state(5.0, cut(10), 1e-6), Err(DptError::Truncation { .. })));
        assert!(thermal_state(-1.0, cut(10), 1e-6).is_err());
    }

    #[test]
    fn tail_mass_examples() {
        let c = cut(40);
        assert_abs_diff_eq!(tail_mass(&BosonDensityMatrix::vacuum(c), 1), 0.0);
        let t = thermal_state(1.0, c, 1e-6).unwrap();
        assert_abs_diff_eq!(tail_mass(&t, 1), 0.5, epsilon = 1e-11);
        let full = DensityMatrix::spin_down_product(&t);
        assert_abs_diff_eq!(tail_mass(&full, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tail_mass(&DensityMatrix::basis(c, UP, 3), 3), 1.0);
    }

    #[test]
    fn validation_bounds() {
        let c = cut(2);
        let mut m = DensityMatrix::basis(c, DOWN, 0).into_matrix();
        assert!(DensityMatrix::new(m.clone()).is_ok());
        m[[0, 0]] = C64::new(1.0 + 1e-6, 0.0);
        assert!(DensityMatrix::new(m.clone()).is_err());
        m[[0, 0]] = ONE;
        m[[0, 1]] = C64::new(1e-6, 0.0);
        assert!(DensityMatrix::new(m).is_err());
    }

    #[test]
    fn truncation_tail_is_top_level() {
        let t = thermal_state(1.0, cut(20), 1e-3).unwrap();
        assert_abs_diff_eq!(truncation_tail(&t), t.fock_populations()[20]);
        assert_eq!(truncation_tail(&BosonDensityMatrix::vacuum(cut(3))), 0.0);
    }
}

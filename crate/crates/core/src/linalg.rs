//! Dense and compressed-sparse complex matrix helpers.
//!
//! State matrices live in `ndarray` (its complex `dot` goes through a blocked
//! gemm kernel); eigendecompositions are delegated to `nalgebra`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = Array2<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn adjoint(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

pub fn frobenius(m: ArrayView2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// ‖M − M†‖_F / ‖M‖_F, zero for the zero matrix.
pub fn relative_asymmetry(m: &CMat) -> f64 {
    let norm = frobenius(m.view());
    if norm == 0.0 {
        return 0.0;
    }
    let n = m.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (m[[i, j]] - m[[j, i]].conj()).norm_sqr();
        }
    }
    acc.sqrt() / norm
}

/// Absolute Hermiticity defect ‖M − M†‖_F.
pub fn asymmetry(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += 2.0 * (m[[i, j]] - m[[j, i]].conj()).norm_sqr();
        }
        acc += (2.0 * m[[i, i]].im).powi(2);
    }
    acc.sqrt()
}

pub fn trace(m: &CMat) -> C64 {
    m.diag().sum()
}

/// K ρ K†
pub fn sandwich(k: &CMat, rho: &CMat) -> CMat {
    k.dot(rho).dot(&adjoint(k))
}

/// Replace `m` by (m + m†)/2.
pub fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[[i, i]].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[[i, j]] + m[[j, i]].conj()) * 0.5;
            m[[i, j]] = avg;
            m[[j, i]] = avg.conj();
        }
    }
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMat::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let s = a[[i, j]];
            if s == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = s * b[[k, l]];
                }
            }
        }
    }
    out
}

fn is_real(m: &CMat) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

/// Eigendecomposition of a Hermitian matrix: ascending eigenvalues and the
/// unitary whose columns are the eigenvectors.
pub fn eigh(h: &CMat) -> (Vec<f64>, CMat) {
    let n = h.nrows();
    if is_real(h) {
        let m = DMatrix::<f64>::from_fn(n, n, |i, j| h[[i, j]].re);
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vecs = CMat::from_shape_fn((n, n), |(i, j)| C64::new(eig.eigenvectors[(i, order[j])], 0.0));
        (vals, vecs)
    } else {
        let m = DMatrix::<C64>::from_fn(n, n, |i, j| h[[i, j]]);
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vecs = CMat::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, order[j])]);
        (vals, vecs)
    }
}

pub fn eigvalsh(h: &CMat) -> Vec<f64> {
    let n = h.nrows();
    let m = DMatrix::<C64>::from_fn(n, n, |i, j| h[[i, j]]);
    let mut vals: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// exp(−i H t) for Hermitian H, via eigendecomposition.
pub fn expm_hermitian(h: &CMat, t: f64) -> CMat {
    let (vals, vecs) = eigh(h);
    propagator_from_eigen(&vals, &vecs, t)
}

pub fn propagator_from_eigen(vals: &[f64], vecs: &CMat, t: f64) -> CMat {
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.axis_iter_mut(Axis(1)).enumerate() {
        let phase = C64::from_polar(1.0, -vals[j] * t);
        col.mapv_inplace(|z| z * phase);
    }
    scaled.dot(&adjoint(vecs))
}

/// True when ρ + tol·1 admits a Cholesky factorisation, i.e. λ_min(ρ) > −tol.
///
/// Uses the real embedding [[A, −B], [B, A]] of ρ = A + iB: complex Cholesky
/// in nalgebra takes square roots of negative pivots instead of failing.
pub fn is_positive_within(rho: &CMat, tol: f64) -> bool {
    let n = rho.nrows();
    let herm = |i: usize, j: usize| (rho[[i, j]] + rho[[j, i]].conj()) * 0.5;
    let m = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| {
        let z = herm(i % n, j % n);
        let v = match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        };
        if i == j {
            v + tol
        } else {
            v
        }
    });
    Cholesky::new(m).is_some()
}

/// Compressed sparse row complex matrix; used wherever an operator is applied
/// many times to a dense state (Lindblad right-hand sides, sparse Kraus maps).
#[derive(Debug, Clone)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl Csr {
    pub fn from_dense(m: &CMat) -> Self {
        let (nrows, ncols) = m.dim();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..nrows {
            for j in 0..ncols {
                let v = m[[i, j]];
                if v != ZERO {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr { nrows, ncols, indptr, indices, values }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn to_dense(&self) -> CMat {
        let mut out = CMat::zeros((self.nrows, self.ncols));
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out[[i, self.indices[k]]] += self.values[k];
            }
        }
        out
    }

    pub fn adjoint(&self) -> Csr {
        Csr::from_dense(&adjoint(&self.to_dense()))
    }

    pub fn scaled(&self, s: C64) -> Csr {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Upper bound on the spectral norm: sqrt(max row sum · max column sum).
    pub fn norm_bound(&self) -> f64 {
        let mut row_max: f64 = 0.0;
        let mut col = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                let a = self.values[k].norm();
                s += a;
                col[self.indices[k]] += a;
            }
            row_max = row_max.max(s);
        }
        let col_max = col.into_iter().fold(0.0, f64::max);
        (row_max * col_max).sqrt()
    }

    /// out += alpha · (self · x)
    pub fn mul_dense_acc(&self, x: ArrayView2<C64>, alpha: C64, out: &mut CMat) {
        let ncols = x.ncols();
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let v = self.values[k] * alpha;
                let xr = x.row(self.indices[k]);
                let mut orow = out.row_mut(i);
                for c in 0..ncols {
                    orow[c] += v * xr[c];
                }
            }
        }
    }

    /// out += alpha · (x · self†)
    pub fn dense_mul_adj_acc(&self, x: ArrayView2<C64>, alpha: C64, out: &mut CMat) {
        // (x · A†)[r, i] = Σ_k x[r, j_k] · conj(A[i, j_k])
        let nr = x.nrows();
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let v = self.values[k].conj() * alpha;
                let j = self.indices[k];
                for r in 0..nr {
                    out[[r, i]] += x[[r, j]] * v;
                }
            }
        }
    }

    pub fn mul_dense(&self, x: ArrayView2<C64>) -> CMat {
        let mut out = CMat::zeros((self.nrows, x.ncols()));
        self.mul_dense_acc(x, ONE, &mut out);
        out
    }

    /// A ρ A†
    pub fn sandwich(&self, rho: &CMat) -> CMat {
        let left = self.mul_dense(rho.view());
        let mut out = CMat::zeros((self.nrows, self.nrows));
        self.dense_mul_adj_acc(left.view(), ONE, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> CMat {
        let mut s = seed;
        CMat::from_shape_fn((n, n), |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = ((s >> 33) as f64) / (1u64 << 31) as f64 - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = ((s >> 33) as f64) / (1u64 << 31) as f64 - 0.5;
            C64::new(a, b)
        })
    }

    #[test]
    fn csr_products_match_dense() {
        let mut a = sample(7, 1);
        a[[2, 3]] = ZERO;
        a[[0, 0]] = ZERO;
        let x = sample(7, 2);
        let s = Csr::from_dense(&a);
        let dense = a.dot(&x);
        assert!(frobenius((&s.mul_dense(x.view()) - &dense).view()) < 1e-12);
        let mut out = CMat::zeros((7, 7));
        s.dense_mul_adj_acc(x.view(), ONE, &mut out);
        assert!(frobenius((&out - &x.dot(&adjoint(&a))).view()) < 1e-12);
        assert!(frobenius((&s.sandwich(&x) - &sandwich(&a, &x)).view()) < 1e-12);
    }

    #[test]
    fn expm_is_unitary_and_matches_series() {
        let m = sample(6, 3);
        let h = (&m + &adjoint(&m)).mapv(|z| z * 0.3);
        let u = expm_hermitian(&h, 0.7);
        let id = u.dot(&adjoint(&u));
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { ONE } else { ZERO };
                assert!((id[[i, j]] - want).norm() < 1e-12);
            }
        }
        // Taylor series reference
        let gen = h.mapv(|z| z * C64::new(0.0, -0.7));
        let mut term = CMat::from_diag_elem(6, ONE);
        let mut sum = term.clone();
        for k in 1..40 {
            term = term.dot(&gen).mapv(|z| z / k as f64);
            sum = sum + &term;
        }
        assert!(frobenius((&sum - &u).view()) < 1e-11);
    }

    #[test]
    fn positivity_check_detects_negative_eigenvalue() {
        let mut rho = CMat::zeros((3, 3));
        rho[[0, 0]] = C64::new(0.6, 0.0);
        rho[[1, 1]] = C64::new(0.4, 0.0);
        assert!(is_positive_within(&rho, 1e-8));
        rho[[2, 2]] = C64::new(-1e-6, 0.0);
        assert!(!is_positive_within(&rho, 1e-8));
    }
}

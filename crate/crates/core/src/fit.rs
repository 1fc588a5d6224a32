//! Damped least squares (Levenberg-Marquardt) with projection onto a
//! feasible set, plus Jacobian-based covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{DptError, Result};

/// A nonlinear least-squares problem: minimise |r(p)|².
pub trait LeastSquares {
    fn n_params(&self) -> usize;

    fn residuals(&self, p: &[f64]) -> Vec<f64>;

    /// Defaults to central differences.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        numeric_jacobian(|q| self.residuals(q), p)
    }

    /// Map a trial point back into the feasible set.
    fn project(&self, _p: &mut [f64]) {}

    /// Parameters held fixed for the next step, typically those sitting on
    /// a bound with the gradient pointing out of the feasible set.
    fn frozen(&self, p: &[f64], _grad: &[f64]) -> Vec<bool> {
        vec![false; p.len()]
    }

    /// Normal c of an active linear inequality cᵀp ≤ const; steps that
    /// would cross it are restricted to cᵀδ = 0.
    fn active_linear(&self, _p: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

pub fn numeric_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, p: &[f64]) -> DMatrix<f64> {
    let r0 = f(p);
    let mut jac = DMatrix::zeros(r0.len(), p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-3);
        q[j] = p[j] + h;
        let rp = f(&q);
        q[j] = p[j] - h;
        let rm = f(&q);
        q[j] = p[j];
        for i in 0..r0.len() {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative cost decrease below which a step counts as stalled.
    pub ftol: f64,
    /// Relative step size below which the iteration stops.
    pub xtol: f64,
    pub gtol: f64,
    pub lambda0: f64,
    /// Smallest singular value of J relative to the largest.
    pub rank_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 500, ftol: 1e-12, xtol: 1e-10, gtol: 1e-14, lambda0: 1e-3, rank_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub errors: Vec<f64>,
    pub cost: f64,
    pub residual_rms: f64,
    pub iterations: usize,
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(problem: &P, p0: &[f64], opts: &LmOptions) -> Result<LmSolution> {
    let n = problem.n_params();
    if p0.len() != n {
        return Err(DptError::Dimension(format!("initial guess has {} params, expected {n}", p0.len())));
    }
    let mut p = p0.to_vec();
    problem.project(&mut p);
    let mut r = problem.residuals(&p);
    let m = r.len();
    if m < n {
        return Err(DptError::Fit(format!("{m} residuals for {n} parameters")));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(DptError::Fit("non-finite residual at the initial guess".into()));
    }
    let mut c = cost(&r);
    let mut lambda = opts.lambda0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let j = problem.jacobian(&p);
        let rv = DVector::from_column_slice(&r);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let mut grad = &jt * &rv;
        let frozen = problem.frozen(&p, grad.as_slice());
        let mut jtj = jtj;
        for k in (0..n).filter(|&k| frozen[k]) {
            jtj.row_mut(k).fill(0.0);
            jtj.column_mut(k).fill(0.0);
            jtj[(k, k)] = 1.0;
            grad[k] = 0.0;
        }
        if grad.amax() <= opts.gtol * (1.0 + c) || c == 0.0 {
            converged = true;
            break;
        }
        let active = problem.active_linear(&p);
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in (0..n).filter(|&k| !frozen[k]) {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(ch) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let mut step = ch.solve(&(-&grad));
            if let Some(cv) = &active {
                let cv = DVector::from_iterator(n, (0..n).map(|k| if frozen[k] { 0.0 } else { cv[k] }));
                let push = cv.dot(&step);
                if push > 0.0 {
                    let ac = ch.solve(&cv);
                    let denom = cv.dot(&ac);
                    if denom > 0.0 {
                        step -= ac * (push / denom);
                    }
                }
            }
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            problem.project(&mut trial);
            let rt = problem.residuals(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let dx = trial.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let scale = p.iter().map(|x| x.abs()).fold(0.0, f64::max);
                let dc = c - ct;
                p = trial;
                r = rt;
                c = ct;
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if dc <= opts.ftol * c.max(f64::MIN_POSITIVE) || dx <= opts.xtol * (scale + opts.xtol) {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            // No downhill step at any damping: a (projected) stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(DptError::Fit(format!("no convergence after {} iterations", opts.max_iter)));
    }
    let j = problem.jacobian(&p);
    let covariance = covariance(&j, c, m, n, opts.rank_tol)?;
    let errors = (0..n).map(|k| covariance[(k, k)].max(0.0).sqrt()).collect();
    Ok(LmSolution { params: p, covariance, errors, cost: c, residual_rms: (c / m as f64).sqrt(), iterations })
}

/// s²(JᵀJ)⁻¹ with s² = cost/(m−n).
pub fn covariance(j: &DMatrix<f64>, cost: f64, m: usize, n: usize, rank_tol: f64) -> Result<DMatrix<f64>> {
    let svd = j.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= rank_tol * smax {
        return Err(DptError::Fit(format!("rank-deficient Jacobian (singular values {smin:.3e}/{smax:.3e})")));
    }
    let vt = svd.v_t.expect("requested V^T");
    let inv_s2 = DVector::from_iterator(n, svd.singular_values.iter().map(|s| 1.0 / (s * s)));
    let jtj_inv = vt.transpose() * DMatrix::from_diagonal(&inv_s2) * &vt;
    let s2 = if m > n { cost / (m - n) as f64 } else { 0.0 };
    let mut cov = jtj_inv * s2;
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(cov)
}

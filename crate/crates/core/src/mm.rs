//! Majorization bounds used by the per-block solvers.
//!
//! All bounds are upper bounds of minimization-form objectives: they dominate
//! the true term everywhere and touch it at the expansion point, so each
//! block solve can only improve the true objective.

use crate::model::{C64, CMat, CVec, RVec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmError {
    #[error("matrix must be Hermitian")]
    NonHermitian,
    #[error("matrix must be square")]
    NotSquare,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("expansion point {0} outside [0, 1 - 1e-9]")]
    ExpansionOutOfRange(f64),
    #[error("delta must be positive")]
    InvalidDelta,
    #[error("sub-array count must divide the vector length")]
    SubarrayMismatch,
}

/// Quadratic upper bound of a Hermitian form: `curvature * |d|^2 +
/// 2 Re{d^H linear} + constant >= d^H U d`, with equality at the expansion
/// point.
#[derive(Clone, Debug)]
pub struct QuadSurrogate {
    pub curvature: f64,
    pub linear: CVec,
    pub constant: f64,
}

impl QuadSurrogate {
    pub fn eval(&self, d: &CVec) -> f64 {
        self.curvature * d.norm_squared() + 2.0 * d.dotc(&self.linear).re + self.constant
    }
}

fn hermitian_check(u: &CMat) -> Result<(), MmError> {
    if u.nrows() != u.ncols() {
        return Err(MmError::NotSquare);
    }
    let scale = u.iter().map(|v| v.norm()).fold(1.0f64, f64::max);
    for i in 0..u.nrows() {
        for j in i..u.ncols() {
            if (u[(i, j)] - u[(j, i)].conj()).norm() > 1e-9 * scale {
                return Err(MmError::NonHermitian);
            }
        }
    }
    Ok(())
}

/// Largest eigenvalue of a Hermitian matrix. Shifted power iteration with
/// relative tolerance 1e-10 and a 500-iteration cap; on a stall, small
/// matrices fall back to an exact eigensolve.
pub fn lambda_max(u: &CMat) -> Result<f64, MmError> {
    hermitian_check(u)?;
    let n = u.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    // Gershgorin shift makes the target eigenvalue the one of largest
    // magnitude, so plain power iteration finds the algebraic maximum.
    let shift = (0..n)
        .map(|i| (0..n).map(|j| u[(i, j)].norm()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if shift == 0.0 {
        return Ok(0.0);
    }
    let mut x = CVec::from_fn(n, |i, _| C64::new(1.0 + 0.137 * i as f64, 0.0));
    x /= C64::new(x.norm(), 0.0);
    let mut ray = 0.0;
    for iter in 0..500 {
        let mut y = u * &x;
        y.axpy(C64::new(shift, 0.0), &x, C64::new(1.0, 0.0));
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(-shift);
        }
        y /= C64::new(norm, 0.0);
        let next = (y.adjoint() * u * &y)[(0, 0)].re;
        if iter > 0 && (next - ray).abs() <= 1e-10 * ray.abs().max(1.0) {
            return Ok(next);
        }
        ray = next;
        x = y;
    }
    if n <= 64 {
        let eig = u.clone().symmetric_eigen();
        return Ok(eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(ray)
}

/// Curvature-replacement bound of `d^H U d`. Touching at `d_i` is an
/// algebraic identity for any curvature; dominance needs the curvature to be
/// at least the top eigenvalue, so the computed value gets a hair of
/// inflation to absorb eigensolver error.
pub fn quad_upper_bound(u: &CMat, d_i: &CVec) -> Result<QuadSurrogate, MmError> {
    if u.nrows() != d_i.len() {
        return Err(MmError::DimensionMismatch(format!(
            "matrix is {}x{}, point has length {}",
            u.nrows(),
            u.ncols(),
            d_i.len()
        )));
    }
    let lam = lambda_max(u)?;
    let lam = lam + 2e-12 * (1.0 + lam.abs());
    let mut linear = u * d_i;
    linear.axpy(C64::new(-lam, 0.0), d_i, C64::new(1.0, 0.0));
    let quad_at_i = d_i.dotc(&(u * d_i)).re;
    let constant = lam * d_i.norm_squared() - quad_at_i;
    Ok(QuadSurrogate {
        curvature: lam,
        linear,
        constant,
    })
}

/// Tangent upper bound of the concave term `-lambda b^2` (for `lambda >= 0`)
/// as coefficients `(a, b, c)` of `a x^2 + b x + c`.
pub fn tangent_bound_concave_quad(lambda: f64, beta_i: f64) -> (f64, f64, f64) {
    (0.0, -2.0 * lambda * beta_i, lambda * beta_i * beta_i)
}

/// Tangent upper bound of `sqrt(1 - b^2)` in the variable `t = b^2`,
/// returned as `(a, c)` with `sqrt(1 - b^2) <= a b^2 + c`. Undefined at the
/// domain edge, so the expansion point must stay below `1 - 1e-9`.
pub fn tangent_bound_sqrt(beta_i: f64) -> Result<(f64, f64), MmError> {
    if !(0.0..=1.0 - 1e-9).contains(&beta_i) {
        return Err(MmError::ExpansionOutOfRange(beta_i));
    }
    let t_i = beta_i * beta_i;
    let root = (1.0 - t_i).sqrt();
    let a = -1.0 / (2.0 * root);
    let c = root + t_i / (2.0 * root);
    Ok((a, c))
}

/// Affine-in-norm majorizer of one sub-array's smoothed activity indicator:
/// `indicator <= constant + slope * |alpha_l - 1|`.
#[derive(Clone, Copy, Debug)]
pub struct NormAffine {
    pub constant: f64,
    pub slope: f64,
}

impl NormAffine {
    pub fn eval(&self, norm: f64) -> f64 {
        self.constant + self.slope * norm
    }
}

/// Smoothed sub-array activity count and its per-sub-array majorizers.
#[derive(Clone, Debug)]
pub struct L0Surrogate {
    /// Smoothed count at `alpha`, normalized so a unit-norm deviation scores 1.
    pub value: f64,
    /// One majorizer per sub-array, expanded at `alpha_i`.
    pub bounds: Vec<NormAffine>,
}

/// Smoothed count of amplifying sub-arrays, `ln((delta + |alpha_l - 1|) /
/// delta)` normalized by its value at unit deviation, with tangent
/// majorizers in each sub-array's deviation norm.
pub fn l0_surrogate(
    alpha: &RVec,
    alpha_i: &RVec,
    l_subarrays: usize,
    delta: f64,
) -> Result<L0Surrogate, MmError> {
    if !(delta > 0.0) {
        return Err(MmError::InvalidDelta);
    }
    if alpha.len() != alpha_i.len() {
        return Err(MmError::DimensionMismatch(
            "alpha and alpha_i lengths differ".into(),
        ));
    }
    if l_subarrays == 0 || alpha.len() % l_subarrays != 0 {
        return Err(MmError::SubarrayMismatch);
    }
    let m_sub = alpha.len() / l_subarrays;
    let z = ((delta + 1.0) / delta).ln();
    let mut value = 0.0;
    let mut bounds = Vec::with_capacity(l_subarrays);
    for l in 0..l_subarrays {
        let dev = |v: &RVec| {
            (l * m_sub..(l + 1) * m_sub)
                .map(|i| (v[i] - 1.0) * (v[i] - 1.0))
                .sum::<f64>()
                .sqrt()
        };
        let t = dev(alpha);
        let t_i = dev(alpha_i);
        value += ((delta + t) / delta).ln() / z;
        bounds.push(NormAffine {
            constant: (((delta + t_i) / delta).ln() - t_i / (delta + t_i)) / z,
            slope: 1.0 / (z * (delta + t_i)),
        });
    }
    Ok(L0Surrogate { value, bounds })
}

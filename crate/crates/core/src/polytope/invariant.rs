//! Maximal output-admissible disturbance-invariant sets and safe input sets.

use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::{dot, Real};

use super::{pontryagin_diff, HPolytope, PolytopeError};

/// Maximum number of tightening rounds before giving up on finite determination.
pub const INVARIANT_ITERATION_CAP: usize = 10_000;

/// `Ω` together with the feedback it was built for and the re-checked
/// residuals of its two defining properties.
#[derive(Debug, Clone)]
pub struct InvariantSetCertificate<T: Real> {
    pub omega: HPolytope<T>,
    pub gain_k: Matrix<T>,
    /// Constant term of the affine feedback `u = K x + k` (zero for linear feedback).
    pub feedforward: Vec<T>,
    /// Largest violation of `(A + B K) Ω ⊕ (W + B k) ⊆ Ω`, clipped at zero.
    pub residual_containment: T,
    /// Largest violation of `K Ω + k ⊆ U` and `Ω ⊆ X`, clipped at zero.
    pub residual_input: T,
    pub iterations: usize,
    pub determined: bool,
}

impl<T: Real> InvariantSetCertificate<T> {
    pub fn is_certified(&self) -> bool {
        self.determined && self.residual_containment <= T::cert_tol() && self.residual_input <= T::cert_tol()
    }

    /// Feedback input `K x + k`.
    pub fn feedback(&self, x: &[T]) -> Vec<T> {
        let mut u = self.gain_k.mul_vec(x);
        for (uk, &fk) in u.iter_mut().zip(&self.feedforward) {
            *uk += fk;
        }
        u
    }
}

#[derive(Debug, Error, Clone)]
pub enum InvariantSetError<T: Real> {
    #[error("closed loop A + BK is not Schur stable (spectral radius {radius})")]
    Unstable { radius: T },
    #[error("no admissible invariant set exists for these constraints")]
    Empty,
    #[error("tightening did not determine within {} rounds", .0.iterations)]
    NotDetermined(Box<InvariantSetCertificate<T>>),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

fn check_shapes<T: Real>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    k: &Matrix<T>,
    x: &HPolytope<T>,
    u: &HPolytope<T>,
    w: &HPolytope<T>,
) -> Result<(), PolytopeError> {
    let n = a.rows();
    let m = b.cols();
    let mismatch = |expected, found| PolytopeError::DimensionMismatch { expected, found };
    if a.cols() != n {
        return Err(mismatch(n, a.cols()));
    }
    if b.rows() != n {
        return Err(mismatch(n, b.rows()));
    }
    if k.rows() != m || k.cols() != n {
        return Err(mismatch(m * n, k.rows() * k.cols()));
    }
    for (p, d) in [(x, n), (w, n), (u, m)] {
        if p.dim() != d {
            return Err(mismatch(d, p.dim()));
        }
    }
    Ok(())
}

/// Largest set `Ω ⊆ {x ∈ X : K x ∈ U}` with `(A + B K) Ω ⊕ W ⊆ Ω`, computed by
/// the backward tightening iteration
/// `c·(A+BK)^j x <= d − Σ_{i<j} h_W(((A+BK)^i)ᵀ c)` over every constraint row
/// `(c, d)`, stopping once a round adds only redundant rows.
pub fn max_output_admissible_set<T: Real>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    k: &Matrix<T>,
    x_set: &HPolytope<T>,
    u_set: &HPolytope<T>,
    w_set: &HPolytope<T>,
) -> Result<InvariantSetCertificate<T>, InvariantSetError<T>> {
    let m = b.cols();
    max_output_admissible_set_affine(a, b, k, &vec![T::zero(); m], x_set, u_set, w_set)
}

/// As [`max_output_admissible_set`] for the affine feedback `u = K x + k`,
/// which reduces to the linear case with `U − k` and `W ⊕ {B k}`.
pub fn max_output_admissible_set_affine<T: Real>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    k: &Matrix<T>,
    feedforward: &[T],
    x_set: &HPolytope<T>,
    u_set: &HPolytope<T>,
    w_set: &HPolytope<T>,
) -> Result<InvariantSetCertificate<T>, InvariantSetError<T>> {
    check_shapes(a, b, k, x_set, u_set, w_set)?;
    let n = a.rows();
    if feedforward.len() != b.cols() {
        return Err(PolytopeError::DimensionMismatch {
            expected: b.cols(),
            found: feedforward.len(),
        }
        .into());
    }
    let closed = a.add(&b.matmul(k));
    let radius = closed.spectral_radius();
    if !(radius < T::one()) {
        return Err(InvariantSetError::Unstable { radius });
    }
    if !w_set.is_bounded()? || !x_set.is_bounded()? || !u_set.is_bounded()? {
        return Err(PolytopeError::Unbounded.into());
    }
    if w_set.is_empty()? {
        return Err(PolytopeError::Empty.into());
    }
    let u_shifted = u_set.translate(&feedforward.iter().map(|&v| -v).collect::<Vec<_>>())?;
    let w_shifted = w_set.translate(&b.mul_vec(feedforward))?;

    // output constraints Y = {x ∈ X : K x ∈ U − k}
    let mut base_rows: Vec<Vec<T>> = x_set.normals().to_rows();
    let mut base_rhs: Vec<T> = x_set.offsets().to_vec();
    for i in 0..u_shifted.num_constraints() {
        base_rows.push(k.tr_mul_vec(u_shifted.normals().row(i)));
        base_rhs.push(u_shifted.offsets()[i]);
    }

    let mut rows = base_rows.clone();
    let mut rhs = base_rhs.clone();
    let mut dirs = base_rows.clone();
    let mut tightened = base_rhs.clone();
    let closed_t = closed.transpose();
    let tol = T::cert_tol();

    let mut omega = HPolytope::from_rows(&rows, rhs.clone(), n)?;
    if omega.is_empty()? {
        return Err(InvariantSetError::Empty);
    }
    let mut determined = false;
    let mut iterations = 0;
    while iterations < INVARIANT_ITERATION_CAP {
        iterations += 1;
        for (dir, bound) in dirs.iter_mut().zip(tightened.iter_mut()) {
            *bound -= w_shifted.support(dir)?;
            *dir = closed_t.mul_vec(dir);
        }
        let mut added = false;
        for (dir, &bound) in dirs.iter().zip(&tightened) {
            if dir.iter().all(|&v| v == T::zero()) {
                if bound < -tol {
                    return Err(InvariantSetError::Empty);
                }
                continue;
            }
            if omega.support(dir)? > bound + tol {
                rows.push(dir.clone());
                rhs.push(bound);
                added = true;
            }
        }
        if !added {
            determined = true;
            break;
        }
        omega = HPolytope::from_rows(&rows, rhs.clone(), n)?;
        if omega.is_empty()? {
            return Err(InvariantSetError::Empty);
        }
        omega = omega.simplified()?;
        rows = omega.normals().to_rows();
        rhs = omega.offsets().to_vec();
    }
    let omega = omega.simplified()?;

    let (residual_containment, residual_input) =
        certificate_residuals(&closed, k, feedforward, &omega, x_set, u_set, &w_shifted)?;
    let cert = InvariantSetCertificate {
        omega,
        gain_k: k.clone(),
        feedforward: feedforward.to_vec(),
        residual_containment,
        residual_input,
        iterations,
        determined,
    };
    if determined {
        Ok(cert)
    } else {
        Err(InvariantSetError::NotDetermined(Box::new(cert)))
    }
}

/// Exact residuals of the two defining properties via support functions.
fn certificate_residuals<T: Real>(
    closed: &Matrix<T>,
    k: &Matrix<T>,
    feedforward: &[T],
    omega: &HPolytope<T>,
    x_set: &HPolytope<T>,
    u_set: &HPolytope<T>,
    w_shifted: &HPolytope<T>,
) -> Result<(T, T), PolytopeError> {
    let closed_t = closed.transpose();
    let mut containment = T::zero();
    for i in 0..omega.num_constraints() {
        let c = omega.normals().row(i);
        let reach = omega.support(&closed_t.mul_vec(c))? + w_shifted.support(c)?;
        containment = containment.max(reach - omega.offsets()[i]);
    }
    let mut input = T::zero();
    for i in 0..u_set.num_constraints() {
        let c = u_set.normals().row(i);
        let reach = omega.support(&k.tr_mul_vec(c))? + dot(c, feedforward);
        input = input.max(reach - u_set.offsets()[i]);
    }
    for i in 0..x_set.num_constraints() {
        let c = x_set.normals().row(i);
        input = input.max(omega.support(c)? - x_set.offsets()[i]);
    }
    Ok((containment, input))
}

/// `{u ∈ U : A x + B u + offset ∈ Ω ⊖ W}`; errors with [`PolytopeError::Empty`]
/// when no admissible input exists.
pub fn safe_input_set<T: Real>(
    x: &[T],
    a: &Matrix<T>,
    b: &Matrix<T>,
    offset: &[T],
    omega: &HPolytope<T>,
    w_set: &HPolytope<T>,
    u_set: &HPolytope<T>,
) -> Result<HPolytope<T>, PolytopeError> {
    let target = pontryagin_diff(omega, w_set)?;
    safe_input_set_tightened(x, a, b, offset, &target, u_set)
}

/// As [`safe_input_set`] with `Ω ⊖ W` precomputed.
pub fn safe_input_set_tightened<T: Real>(
    x: &[T],
    a: &Matrix<T>,
    b: &Matrix<T>,
    offset: &[T],
    target: &HPolytope<T>,
    u_set: &HPolytope<T>,
) -> Result<HPolytope<T>, PolytopeError> {
    let m = b.cols();
    if u_set.dim() != m {
        return Err(PolytopeError::DimensionMismatch {
            expected: m,
            found: u_set.dim(),
        });
    }
    let mut drift = a.mul_vec(x);
    for (d, &o) in drift.iter_mut().zip(offset) {
        *d += o;
    }
    let mut rows = u_set.normals().to_rows();
    let mut rhs = u_set.offsets().to_vec();
    for i in 0..target.num_constraints() {
        let c = target.normals().row(i);
        let row = b.tr_mul_vec(c);
        let bound = target.offsets()[i] - dot(c, &drift);
        if row.iter().all(|&v| v == T::zero()) {
            if bound < -T::cert_tol() * (T::one() + target.offsets()[i].abs()) {
                return Err(PolytopeError::Empty);
            }
            continue;
        }
        rows.push(row);
        rhs.push(bound);
    }
    let set = HPolytope::from_rows(&rows, rhs, m)?;
    if set.is_empty()? {
        return Err(PolytopeError::Empty);
    }
    if let Some((lo, hi)) = set.as_box() {
        // absorb round-off crossings of a single-point set
        let hi: Vec<T> = lo.iter().zip(&hi).map(|(&l, &h)| h.max(l)).collect();
        return HPolytope::from_box(&lo, &hi);
    }
    Ok(set)
}

//! Convex sets in half-space form, `{x : normals · x <= offsets}`.
//!
//! Boxes work in any dimension. General polytopes are supported up to
//! dimension three, where support functions come from exact vertex
//! enumeration; every set in the built-in scenarios is an interval or a box.

mod hull;
mod invariant;
mod sample;

use std::sync::OnceLock;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::qp::Projector;
use crate::scalar::{dot, Real};

pub use invariant::{
    max_output_admissible_set, max_output_admissible_set_affine, safe_input_set, safe_input_set_tightened,
    InvariantSetCertificate, InvariantSetError, INVARIANT_ITERATION_CAP,
};
pub use sample::sample_uniform;

/// Largest dimension handled for general (non-box) polytopes.
pub const MAX_GENERAL_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite coefficient in half-space representation")]
    NonFinite,
    #[error("box bounds out of order in coordinate {0}")]
    UnorderedBounds(usize),
    #[error("set is unbounded")]
    Unbounded,
    #[error("set is empty")]
    Empty,
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

/// Half-space representation of a convex polyhedron.
#[derive(Clone)]
pub struct HPolytope<T> {
    normals: Matrix<T>,
    offsets: Vec<T>,
    empty: OnceLock<bool>,
}

impl<T: Real> HPolytope<T> {
    pub fn new(normals: Matrix<T>, offsets: Vec<T>) -> Result<Self, PolytopeError> {
        if normals.rows() != offsets.len() {
            return Err(PolytopeError::DimensionMismatch {
                expected: normals.rows(),
                found: offsets.len(),
            });
        }
        if normals.cols() == 0 {
            return Err(PolytopeError::DimensionMismatch { expected: 1, found: 0 });
        }
        if !normals.is_finite() || offsets.iter().any(|o| !o.is_finite()) {
            return Err(PolytopeError::NonFinite);
        }
        Ok(Self {
            normals,
            offsets,
            empty: OnceLock::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<T>], offsets: Vec<T>, dim: usize) -> Result<Self, PolytopeError> {
        let normals = Matrix::from_rows(rows, dim).ok_or(PolytopeError::DimensionMismatch {
            expected: dim,
            found: rows.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0),
        })?;
        Self::new(normals, offsets)
    }

    /// Axis-aligned box `lo <= x <= hi`.
    pub fn from_box(lo: &[T], hi: &[T]) -> Result<Self, PolytopeError> {
        if lo.len() != hi.len() {
            return Err(PolytopeError::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        let d = lo.len();
        let mut rows = Vec::with_capacity(2 * d);
        let mut offsets = Vec::with_capacity(2 * d);
        for k in 0..d {
            if lo[k] > hi[k] {
                return Err(PolytopeError::UnorderedBounds(k));
            }
            let mut e = vec![T::zero(); d];
            e[k] = T::one();
            rows.push(e.clone());
            offsets.push(hi[k]);
            e[k] = -T::one();
            rows.push(e);
            offsets.push(-lo[k]);
        }
        Self::from_rows(&rows, offsets, d)
    }

    pub fn interval(lo: T, hi: T) -> Result<Self, PolytopeError> {
        Self::from_box(&[lo], &[hi])
    }

    pub fn singleton(point: &[T]) -> Result<Self, PolytopeError> {
        Self::from_box(point, point)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.normals.cols()
    }

    #[inline]
    pub fn num_constraints(&self) -> usize {
        self.offsets.len()
    }

    pub fn normals(&self) -> &Matrix<T> {
        &self.normals
    }

    pub fn offsets(&self) -> &[T] {
        &self.offsets
    }

    /// `(lo, hi)` when every row is axis-aligned and each coordinate is bounded
    /// on both sides. Bounds may cross when the box is empty.
    pub fn as_box(&self) -> Option<(Vec<T>, Vec<T>)> {
        let d = self.dim();
        let mut lo = vec![T::neg_infinity(); d];
        let mut hi = vec![T::infinity(); d];
        for i in 0..self.num_constraints() {
            let row = self.normals.row(i);
            let mut axis = None;
            for (k, &a) in row.iter().enumerate() {
                if a != T::zero() {
                    if axis.is_some() {
                        return None;
                    }
                    axis = Some(k);
                }
            }
            match axis {
                // 0 <= b rows carry no geometry unless they make the set empty
                None => {
                    if self.offsets[i] < T::zero() {
                        return Some((vec![T::one(); d], vec![T::zero(); d]));
                    }
                }
                Some(k) => {
                    let bound = self.offsets[i] / row[k];
                    if row[k] > T::zero() {
                        hi[k] = hi[k].min(bound);
                    } else {
                        lo[k] = lo[k].max(bound);
                    }
                }
            }
        }
        if lo.iter().chain(hi.iter()).all(|v| v.is_finite()) {
            Some((lo, hi))
        } else {
            None
        }
    }

    pub fn is_box(&self) -> bool {
        self.as_box().is_some()
    }

    /// True iff `normals · x <= offsets + tol` componentwise.
    pub fn contains(&self, x: &[T], tol: T) -> bool {
        assert_eq!(x.len(), self.dim(), "point dimension does not match polytope");
        (0..self.num_constraints()).all(|i| dot(self.normals.row(i), x) <= self.offsets[i] + tol)
    }

    /// Largest constraint violation at `x` (zero when inside).
    pub fn violation(&self, x: &[T]) -> T {
        (0..self.num_constraints())
            .map(|i| dot(self.normals.row(i), x) - self.offsets[i])
            .fold(T::zero(), T::max)
    }

    fn require_general_dim(&self, op: &str) -> Result<(), PolytopeError> {
        if self.dim() > MAX_GENERAL_DIM {
            Err(PolytopeError::Unsupported(format!(
                "{op} on a non-box polytope of dimension {} (limit {MAX_GENERAL_DIM})",
                self.dim()
            )))
        } else {
            Ok(())
        }
    }

    /// Vertices of a bounded polytope. Boxes enumerate corners; other sets need
    /// dimension at most three. Empty sets have no vertices.
    pub fn vertices(&self) -> Result<Vec<Vec<T>>, PolytopeError> {
        if let Some((lo, hi)) = self.as_box() {
            if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                return Ok(Vec::new());
            }
            return Ok(hull::box_corners(&lo, &hi));
        }
        self.require_general_dim("vertex enumeration")?;
        let (verts, bounded) = hull::enumerate_vertices(&self.normals, &self.offsets);
        if !bounded {
            return Err(PolytopeError::Unbounded);
        }
        Ok(verts)
    }

    /// Emptiness via a feasibility solve; the answer is cached on the value.
    pub fn is_empty(&self) -> Result<bool, PolytopeError> {
        if let Some(&e) = self.empty.get() {
            return Ok(e);
        }
        let e = if let Some((lo, hi)) = self.as_box() {
            lo.iter().zip(&hi).any(|(l, h)| *l > *h + T::cert_tol())
        } else {
            self.require_general_dim("emptiness check")?;
            hull::enumerate_vertices(&self.normals, &self.offsets).0.is_empty()
        };
        let _ = self.empty.set(e);
        Ok(e)
    }

    /// Boundedness from support problems in the `2·dim` coordinate directions.
    pub fn is_bounded(&self) -> Result<bool, PolytopeError> {
        if self.is_box() {
            return Ok(true);
        }
        self.require_general_dim("boundedness check")?;
        Ok(hull::enumerate_vertices(&self.normals, &self.offsets).1)
    }

    /// Support function `max { dir · x : x in P }`.
    pub fn support(&self, dir: &[T]) -> Result<T, PolytopeError> {
        if dir.len() != self.dim() {
            return Err(PolytopeError::DimensionMismatch {
                expected: self.dim(),
                found: dir.len(),
            });
        }
        if let Some((lo, hi)) = self.as_box() {
            if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                return Err(PolytopeError::Empty);
            }
            return Ok(dir
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(&d, (&l, &h))| if d >= T::zero() { d * h } else { d * l })
                .sum());
        }
        let verts = self.vertices()?;
        support_of_points(&verts, dir).ok_or(PolytopeError::Empty)
    }

    /// `P + v`.
    pub fn translate(&self, v: &[T]) -> Result<Self, PolytopeError> {
        if v.len() != self.dim() {
            return Err(PolytopeError::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        let shift = self.normals.mul_vec(v);
        let offsets = self.offsets.iter().zip(shift).map(|(&b, s)| b + s).collect();
        Self::new(self.normals.clone(), offsets)
    }

    pub fn intersect(&self, other: &Self) -> Result<Self, PolytopeError> {
        if self.dim() != other.dim() {
            return Err(PolytopeError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let mut rows = self.normals.to_rows();
        rows.extend(other.normals.to_rows());
        let mut offsets = self.offsets.clone();
        offsets.extend_from_slice(&other.offsets);
        Self::from_rows(&rows, offsets, self.dim())
    }

    /// A point of the set: the box midpoint or the vertex centroid.
    pub fn center(&self) -> Result<Vec<T>, PolytopeError> {
        if let Some((lo, hi)) = self.as_box() {
            if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                return Err(PolytopeError::Empty);
            }
            return Ok(lo.iter().zip(&hi).map(|(&l, &h)| (l + h) / T::lit(2.0)).collect());
        }
        let verts = self.vertices()?;
        if verts.is_empty() {
            return Err(PolytopeError::Empty);
        }
        let n = T::from_usize(verts.len()).unwrap();
        let mut c = vec![T::zero(); self.dim()];
        for v in &verts {
            for (ck, &vk) in c.iter_mut().zip(v) {
                *ck += vk;
            }
        }
        c.iter_mut().for_each(|ck| *ck /= n);
        Ok(c)
    }

    /// Euclidean projection of `y` onto the (nonempty) set.
    pub fn project(&self, y: &[T]) -> Result<Vec<T>, PolytopeError> {
        let start = self.center()?;
        let proj = Projector::new(self.normals.clone(), self.offsets.clone());
        proj.project(y, &start)
            .map_err(|e| PolytopeError::Unsupported(format!("projection failed: {e}")))
    }

    /// Drops rows that no vertex makes tight; 1-D sets are reduced to two rows.
    pub fn simplified(&self) -> Result<Self, PolytopeError> {
        if self.dim() == 1 {
            if let Some((lo, hi)) = self.as_box() {
                if lo[0] <= hi[0] {
                    return Self::interval(lo[0], hi[0]);
                }
            }
            return Ok(self.clone());
        }
        if self.is_box() {
            let (lo, hi) = self.as_box().unwrap();
            if lo.iter().zip(&hi).all(|(l, h)| l <= h) {
                return Self::from_box(&lo, &hi);
            }
            return Ok(self.clone());
        }
        let verts = self.vertices()?;
        if verts.is_empty() {
            return Ok(self.clone());
        }
        let mut rows = Vec::new();
        let mut offsets = Vec::new();
        for i in 0..self.num_constraints() {
            let row = self.normals.row(i);
            let tight = verts.iter().any(|v| {
                let s = T::one() + self.offsets[i].abs();
                (dot(row, v) - self.offsets[i]).abs() <= T::geom_tol() * s
            });
            let duplicate = rows
                .iter()
                .zip(&offsets)
                .any(|(r, &o): (&Vec<T>, &T)| r.as_slice() == row && o == self.offsets[i]);
            if tight && !duplicate {
                rows.push(row.to_vec());
                offsets.push(self.offsets[i]);
            }
        }
        Self::from_rows(&rows, offsets, self.dim())
    }
}

impl<T: Real> PartialEq for HPolytope<T> {
    fn eq(&self, other: &Self) -> bool {
        self.normals == other.normals && self.offsets == other.offsets
    }
}

impl<T: Real> std::fmt::Debug for HPolytope<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some((lo, hi)) = self.as_box() {
            return f.debug_struct("HPolytope").field("lo", &lo).field("hi", &hi).finish();
        }
        f.debug_struct("HPolytope")
            .field("normals", &self.normals)
            .field("offsets", &self.offsets)
            .finish()
    }
}

pub(crate) fn support_of_points<T: Real>(points: &[Vec<T>], dir: &[T]) -> Option<T> {
    points.iter().map(|p| dot(p, dir)).reduce(T::max)
}

/// `{R·u : u in P}`.
///
/// Invertible maps transform the normals by `R⁻¹`; singular maps fall back to
/// vertex enumeration and a convex hull for dimension at most three.
pub fn linear_map<T: Real>(p: &HPolytope<T>, r: &Matrix<T>) -> Result<HPolytope<T>, PolytopeError> {
    if r.cols() != p.dim() {
        return Err(PolytopeError::DimensionMismatch {
            expected: p.dim(),
            found: r.cols(),
        });
    }
    if r.is_square() {
        if let Some(inv) = r.inverse() {
            return HPolytope::new(p.normals().matmul(&inv), p.offsets().to_vec());
        }
    }
    if p.dim() > MAX_GENERAL_DIM || r.rows() > MAX_GENERAL_DIM {
        return Err(PolytopeError::Unsupported(
            "singular or non-square linear map in dimension above 3".into(),
        ));
    }
    let verts = p.vertices()?;
    if verts.is_empty() {
        return Err(PolytopeError::Empty);
    }
    let mapped: Vec<Vec<T>> = verts.iter().map(|v| r.mul_vec(v)).collect();
    hull::hull_of_points(&mapped, r.rows())
}

/// `P ⊕ Q = {p + q}`. Exact for box pairs in any dimension and for all
/// polytopes in dimension at most three.
pub fn minkowski_sum<T: Real>(p: &HPolytope<T>, q: &HPolytope<T>) -> Result<HPolytope<T>, PolytopeError> {
    if p.dim() != q.dim() {
        return Err(PolytopeError::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    if let (Some((plo, phi)), Some((qlo, qhi))) = (p.as_box(), q.as_box()) {
        if plo.iter().zip(&phi).any(|(l, h)| l > h) || qlo.iter().zip(&qhi).any(|(l, h)| l > h) {
            return Err(PolytopeError::Empty);
        }
        let lo: Vec<T> = plo.iter().zip(&qlo).map(|(&a, &b)| a + b).collect();
        let hi: Vec<T> = phi.iter().zip(&qhi).map(|(&a, &b)| a + b).collect();
        return HPolytope::from_box(&lo, &hi);
    }
    if p.dim() > MAX_GENERAL_DIM {
        return Err(PolytopeError::Unsupported(
            "Minkowski sum of non-box polytopes above dimension 3".into(),
        ));
    }
    // a singleton summand is a translation
    if let Some((lo, hi)) = q.as_box() {
        if lo == hi {
            return p.translate(&lo);
        }
    }
    let pv = p.vertices()?;
    let qv = q.vertices()?;
    if pv.is_empty() || qv.is_empty() {
        return Err(PolytopeError::Empty);
    }
    let mut sums = Vec::with_capacity(pv.len() * qv.len());
    for a in &pv {
        for b in &qv {
            sums.push(a.iter().zip(b).map(|(&x, &y)| x + y).collect());
        }
    }
    hull::hull_of_points(&sums, p.dim())
}

/// `P ⊖ Q = {u : u + Q ⊆ P}`: every offset tightened by the support of `Q`
/// along its normal. The result may be empty.
pub fn pontryagin_diff<T: Real>(p: &HPolytope<T>, q: &HPolytope<T>) -> Result<HPolytope<T>, PolytopeError> {
    if p.dim() != q.dim() {
        return Err(PolytopeError::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    if !q.is_bounded()? {
        return Err(PolytopeError::Unbounded);
    }
    let mut offsets = Vec::with_capacity(p.num_constraints());
    for i in 0..p.num_constraints() {
        offsets.push(p.offsets()[i] - q.support(p.normals().row(i))?);
    }
    HPolytope::new(p.normals().clone(), offsets)
}

/// Hausdorff distance between two nonempty bounded polytopes.
///
/// Distance to a convex set is convex, so the one-sided maxima are attained at
/// vertices; each is measured by Euclidean projection.
pub fn hausdorff_distance<T: Real>(p: &HPolytope<T>, q: &HPolytope<T>) -> Result<T, PolytopeError> {
    if p.dim() != q.dim() {
        return Err(PolytopeError::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let one_sided = |a: &HPolytope<T>, b: &HPolytope<T>| -> Result<T, PolytopeError> {
        let mut worst = T::zero();
        for v in a.vertices()? {
            let proj = b.project(&v)?;
            let d = v.iter().zip(&proj).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
            worst = worst.max(d);
        }
        Ok(worst)
    };
    Ok(one_sided(p, q)?.max(one_sided(q, p)?))
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PolytopeRepr<T> {
    Half { normals: Vec<Vec<T>>, offsets: Vec<T> },
    Box { r#box: BoxRepr<T> },
}

#[derive(Serialize, Deserialize)]
struct BoxRepr<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real + Serialize> Serialize for HPolytope<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolytopeRepr::Half {
            normals: self.normals.to_rows(),
            offsets: self.offsets.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Real + DeserializeOwned> Deserialize<'de> for HPolytope<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match PolytopeRepr::<T>::deserialize(d)? {
            PolytopeRepr::Half { normals, offsets } => {
                let dim = normals.first().map_or(0, Vec::len);
                HPolytope::from_rows(&normals, offsets, dim).map_err(D::Error::custom)
            }
            PolytopeRepr::Box { r#box } => HPolytope::from_box(&r#box.lo, &r#box.hi).map_err(D::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::{dot, Real};

use super::{HPolytope, PolytopeError};

/// Hit-and-run burn-in per dimension; every call restarts the chain.
const BURN_IN_PER_DIM: usize = 50;

fn unit<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.random::<f64>())
}

/// Draws a point of a nonempty bounded polytope.
///
/// Boxes (which include every 1-D set) are sampled exactly uniformly by
/// per-coordinate inversion. Other full-dimensional sets use hit-and-run from
/// the vertex centroid; lower-dimensional ones fall back to a random convex
/// combination of vertices.
pub fn sample_uniform<T: Real, R: Rng + ?Sized>(p: &HPolytope<T>, rng: &mut R) -> Result<Vec<T>, PolytopeError> {
    if let Some((lo, hi)) = p.as_box() {
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(PolytopeError::Empty);
        }
        return Ok(lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| {
                if l == h {
                    l
                } else {
                    (l + (h - l) * unit::<T, R>(rng)).min(h)
                }
            })
            .collect());
    }
    let verts = p.vertices()?;
    if verts.is_empty() {
        return Err(PolytopeError::Empty);
    }
    let d = p.dim();
    let centroid = p.center()?;
    if super::hull::affine_dimension(&verts) < d {
        let weights: Vec<T> = (0..verts.len())
            .map(|_| -T::lit(1.0 - rng.random::<f64>()).ln())
            .collect();
        let total: T = weights.iter().copied().sum();
        let mut x = vec![T::zero(); d];
        for (w, v) in weights.iter().zip(&verts) {
            for (xk, &vk) in x.iter_mut().zip(v) {
                *xk += *w / total * vk;
            }
        }
        return Ok(x);
    }

    let mut x = centroid;
    let mut dir = vec![T::zero(); d];
    for _ in 0..BURN_IN_PER_DIM * d {
        loop {
            for dk in dir.iter_mut() {
                *dk = T::lit(rng.sample::<f64, _>(StandardNormal));
            }
            if dot(&dir, &dir) > T::epsilon() {
                break;
            }
        }
        let mut lo = T::neg_infinity();
        let mut hi = T::infinity();
        for i in 0..p.num_constraints() {
            let a = p.normals().row(i);
            let ad = dot(a, &dir);
            let slack = p.offsets()[i] - dot(a, &x);
            if ad > T::zero() {
                hi = hi.min(slack / ad);
            } else if ad < T::zero() {
                lo = lo.max(slack / ad);
            }
        }
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            continue;
        }
        let lam = lo + (hi - lo) * unit::<T, R>(rng);
        for (xk, &dk) in x.iter_mut().zip(&dir) {
            *xk += lam * dk;
        }
    }
    Ok(x)
}

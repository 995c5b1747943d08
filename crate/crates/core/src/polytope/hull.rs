//! Vertex enumeration and convex hulls for dimension <= 3.

use crate::linalg::{solve, Matrix};
use crate::scalar::{dot, norm2, Real};

use super::{HPolytope, PolytopeError};

pub(crate) fn box_corners<T: Real>(lo: &[T], hi: &[T]) -> Vec<Vec<T>> {
    let d = lo.len();
    let mut out: Vec<Vec<T>> = vec![Vec::with_capacity(d)];
    for k in 0..d {
        let mut next = Vec::with_capacity(out.len() * 2);
        for v in &out {
            let mut a = v.clone();
            a.push(lo[k]);
            next.push(a);
            if hi[k] != lo[k] {
                let mut b = v.clone();
                b.push(hi[k]);
                next.push(b);
            }
        }
        out = next;
    }
    out
}

fn feasible<T: Real>(normals: &Matrix<T>, offsets: &[T], v: &[T]) -> bool {
    let vn = norm2(v);
    (0..normals.rows()).all(|i| {
        let row = normals.row(i);
        let scale = T::one() + offsets[i].abs() + norm2(row) * vn;
        dot(row, v) <= offsets[i] + T::geom_tol() * scale
    })
}

fn push_unique<T: Real>(points: &mut Vec<Vec<T>>, v: Vec<T>) {
    let scale = T::one() + norm2(&v);
    let dup = points.iter().any(|p| {
        let d: T = p.iter().zip(&v).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
        d <= T::geom_tol() * T::lit(10.0) * scale
    });
    if !dup {
        points.push(v);
    }
}

/// Vertices of `{x : N x <= b}` intersected with a large bounding box, and
/// whether the original set is bounded (no vertex touches that box).
pub(crate) fn enumerate_vertices<T: Real>(normals: &Matrix<T>, offsets: &[T]) -> (Vec<Vec<T>>, bool) {
    let d = normals.cols();
    assert!(d <= super::MAX_GENERAL_DIM && d > 0);
    let mut reach = T::one();
    for i in 0..normals.rows() {
        let n = norm2(normals.row(i));
        if n > T::zero() {
            reach = reach.max(offsets[i].abs() / n);
        }
    }
    let big = T::lit(1e6) * (T::one() + reach);

    let mut rows = normals.to_rows();
    let mut rhs = offsets.to_vec();
    for k in 0..d {
        let mut e = vec![T::zero(); d];
        e[k] = T::one();
        rows.push(e.clone());
        rhs.push(big);
        e[k] = -T::one();
        rows.push(e);
        rhs.push(big);
    }
    let all = Matrix::from_rows(&rows, d).unwrap();
    let m = rows.len();

    let mut verts: Vec<Vec<T>> = Vec::new();
    let mut try_combo = |idx: &[usize]| {
        let sub: Vec<Vec<T>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let a = Matrix::from_rows(&sub, d).unwrap();
        let b: Vec<T> = idx.iter().map(|&i| rhs[i]).collect();
        if let Some(v) = solve(&a, &b) {
            if v.iter().all(|x| x.is_finite()) && feasible(&all, &rhs, &v) {
                push_unique(&mut verts, v);
            }
        }
    };
    match d {
        1 => {
            for i in 0..m {
                try_combo(&[i]);
            }
        }
        2 => {
            for i in 0..m {
                for j in i + 1..m {
                    try_combo(&[i, j]);
                }
            }
        }
        _ => {
            for i in 0..m {
                for j in i + 1..m {
                    for k in j + 1..m {
                        try_combo(&[i, j, k]);
                    }
                }
            }
        }
    }
    let half = big / T::lit(2.0);
    let bounded = verts.iter().all(|v| v.iter().all(|x| x.abs() < half));
    (verts, bounded)
}

/// Orthonormal basis of the span of `vectors` (Gram-Schmidt with a relative cut).
fn orthonormal_basis<T: Real>(vectors: &[Vec<T>], scale: T) -> Vec<Vec<T>> {
    let mut basis: Vec<Vec<T>> = Vec::new();
    for v in vectors {
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&r, b);
                for (rk, &bk) in r.iter_mut().zip(b) {
                    *rk -= c * bk;
                }
            }
        }
        let n = norm2(&r);
        if n > T::geom_tol() * T::lit(10.0) * scale {
            r.iter_mut().for_each(|x| *x /= n);
            basis.push(r);
        }
    }
    basis
}

fn cross<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

fn normalized<T: Real>(v: Vec<T>) -> Option<Vec<T>> {
    let n = norm2(&v);
    if n > T::geom_tol() {
        Some(v.into_iter().map(|x| x / n).collect())
    } else {
        None
    }
}

/// Dimension of the affine hull of `points`.
pub(crate) fn affine_dimension<T: Real>(points: &[Vec<T>]) -> usize {
    let refs: Vec<&Vec<T>> = points.iter().collect();
    let scale = T::one() + points.iter().map(|p| norm2(p)).fold(T::zero(), T::max);
    affine_dim(&refs, scale)
}

fn affine_dim<T: Real>(points: &[&Vec<T>], scale: T) -> usize {
    if points.len() < 2 {
        return 0;
    }
    let diffs: Vec<Vec<T>> = points[1..].iter().map(|p| sub(p, points[0])).collect();
    orthonormal_basis(&diffs, scale).len()
}

/// H-representation of the convex hull of a finite point set in dimension <= 3,
/// including lower-dimensional hulls (equality pairs for the affine hull).
pub(crate) fn hull_of_points<T: Real>(points: &[Vec<T>], dim: usize) -> Result<HPolytope<T>, PolytopeError> {
    if points.is_empty() {
        return Err(PolytopeError::Empty);
    }
    assert!(dim <= super::MAX_GENERAL_DIM);
    let mut pts: Vec<Vec<T>> = Vec::new();
    for p in points {
        push_unique(&mut pts, p.clone());
    }
    let scale = T::one() + pts.iter().map(|p| norm2(p)).fold(T::zero(), T::max);
    let diffs: Vec<Vec<T>> = pts[1..].iter().map(|p| sub(p, &pts[0])).collect();
    let basis = orthonormal_basis(&diffs, scale);
    let k = basis.len();

    let axes: Vec<Vec<T>> = (0..dim)
        .map(|i| {
            let mut e = vec![T::zero(); dim];
            e[i] = T::one();
            e
        })
        .collect();
    let mut with_axes = basis.clone();
    with_axes.extend(axes.iter().cloned());
    let complement: Vec<Vec<T>> = orthonormal_basis(&with_axes, T::one())[k..].to_vec();

    let mut normals: Vec<Vec<T>> = Vec::new();
    let add = |n: Vec<T>, normals: &mut Vec<Vec<T>>| {
        let dup = normals.iter().any(|m| {
            m.iter()
                .zip(&n)
                .all(|(&a, &b)| (a - b).abs() <= T::geom_tol() * T::lit(100.0))
        });
        if !dup {
            normals.push(n);
        }
    };
    for c in &complement {
        add(c.clone(), &mut normals);
        add(c.iter().map(|&x| -x).collect(), &mut normals);
    }

    // candidate facet normals lying in the affine hull's direction space
    let mut candidates: Vec<Vec<T>> = Vec::new();
    match k {
        0 => {}
        1 => {
            candidates.push(basis[0].clone());
        }
        2 if dim == 2 => {
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let e = sub(&pts[j], &pts[i]);
                    if let Some(n) = normalized(vec![-e[1], e[0]]) {
                        candidates.push(n);
                    }
                }
            }
        }
        2 => {
            let plane = &complement[0];
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let e = sub(&pts[j], &pts[i]);
                    if let Some(n) = normalized(cross(plane, &e)) {
                        candidates.push(n);
                    }
                }
            }
        }
        _ => {
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    for l in j + 1..pts.len() {
                        let e1 = sub(&pts[j], &pts[i]);
                        let e2 = sub(&pts[l], &pts[i]);
                        if let Some(n) = normalized(cross(&e1, &e2)) {
                            candidates.push(n);
                        }
                    }
                }
            }
        }
    }
    for c in candidates {
        for sign in [T::one(), -T::one()] {
            let n: Vec<T> = c.iter().map(|&x| sign * x).collect();
            let best = super::support_of_points(&pts, &n).unwrap();
            let tol = T::geom_tol() * T::lit(10.0) * scale;
            let attaining: Vec<&Vec<T>> = pts.iter().filter(|p| (dot(p, &n) - best).abs() <= tol).collect();
            if affine_dim(&attaining, scale) + 1 >= k {
                add(n, &mut normals);
            }
        }
    }

    let offsets: Vec<T> = normals
        .iter()
        .map(|n| super::support_of_points(&pts, n).unwrap())
        .collect();
    HPolytope::from_rows(&normals, offsets, dim)
}

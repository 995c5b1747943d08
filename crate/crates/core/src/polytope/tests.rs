use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn iv(lo: f64, hi: f64) -> HPolytope<f64> {
    HPolytope::interval(lo, hi).unwrap()
}

fn bx(lo: &[f64], hi: &[f64]) -> HPolytope<f64> {
    HPolytope::from_box(lo, hi).unwrap()
}

fn m(rows: &[&[f64]]) -> Matrix<f64> {
    let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    Matrix::from_rows(&v, rows[0].len()).unwrap()
}

fn same_set(a: &HPolytope<f64>, b: &HPolytope<f64>) -> bool {
    hausdorff_distance(a, b).unwrap() <= 1e-9
}

#[test]
fn linear_map_identity_and_scaling() {
    assert!(same_set(
        &linear_map(&iv(-1.0, 1.0), &m(&[&[1.0]])).unwrap(),
        &iv(-1.0, 1.0)
    ));
    let scaled = linear_map(&iv(0.0, 1.0), &m(&[&[2.0]])).unwrap();
    assert_eq!(scaled.as_box().unwrap(), (vec![0.0], vec![2.0]));
}

#[test]
fn linear_map_rotation_matches_vertex_images() {
    let unit = bx(&[-1.0, -1.0], &[1.0, 1.0]);
    let rot = m(&[&[0.0, -1.0], &[1.0, 0.0]]);
    let img = linear_map(&unit, &rot).unwrap();
    // oracle: hull of the four rotated corners is the same square
    for v in unit.vertices().unwrap() {
        assert!(img.contains(&rot.mul_vec(&v), 1e-12));
    }
    assert!(same_set(&img, &unit));
}

#[test]
fn linear_map_singular_falls_back_to_hull() {
    let unit = bx(&[0.0, 0.0], &[1.0, 1.0]);
    let proj = m(&[&[1.0, 1.0], &[0.0, 0.0]]);
    let img = linear_map(&unit, &proj).unwrap();
    assert!(img.contains(&[2.0, 0.0], 1e-12));
    assert!(!img.contains(&[1.0, 0.1], 1e-9));
    assert!(!img.contains(&[2.1, 0.0], 1e-9));
}

#[test]
fn minkowski_examples() {
    assert!(same_set(
        &minkowski_sum(&iv(0.0, 1.0), &iv(0.0, 0.0)).unwrap(),
        &iv(0.0, 1.0)
    ));
    assert!(same_set(
        &minkowski_sum(&iv(-1.0, 1.0), &iv(-0.5, 0.5)).unwrap(),
        &iv(-1.5, 1.5)
    ));
}

#[test]
fn minkowski_square_support_oracle() {
    let p = bx(&[-1.0, -1.0], &[1.0, 1.0]);
    let q = bx(&[-0.1, -0.1], &[0.1, 0.1]);
    let s = minkowski_sum(&p, &q).unwrap();
    for i in 0..100 {
        let a = i as f64 * std::f64::consts::TAU / 100.0;
        let d = [a.cos(), a.sin()];
        let expect = p.support(&d).unwrap() + q.support(&d).unwrap();
        assert!((s.support(&d).unwrap() - expect).abs() < 1e-12);
    }
    assert!(same_set(&s, &bx(&[-1.1, -1.1], &[1.1, 1.1])));
}

#[test]
fn minkowski_general_polygon_support_oracle() {
    let tri = HPolytope::from_rows(
        &[vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
        vec![0.0, 0.0, 1.0],
        2,
    )
    .unwrap();
    let sq = bx(&[-0.5, -0.5], &[0.5, 0.5]);
    let s = minkowski_sum(&tri, &sq).unwrap();
    for i in 0..100 {
        let a = i as f64 * std::f64::consts::TAU / 100.0;
        let d = [a.cos(), a.sin()];
        let expect = tri.support(&d).unwrap() + sq.support(&d).unwrap();
        assert!((s.support(&d).unwrap() - expect).abs() < 1e-9, "direction {i}");
    }
}

#[test]
fn minkowski_dimension_mismatch() {
    assert!(matches!(
        minkowski_sum(&iv(0.0, 1.0), &bx(&[0.0, 0.0], &[1.0, 1.0])),
        Err(PolytopeError::DimensionMismatch { .. })
    ));
}

#[test]
fn pontryagin_examples() {
    assert!(same_set(
        &pontryagin_diff(&iv(-1.0, 1.0), &iv(0.0, 0.0)).unwrap(),
        &iv(-1.0, 1.0)
    ));
    assert!(same_set(
        &pontryagin_diff(&iv(0.0, 4.0), &iv(-1.0, 1.0)).unwrap(),
        &iv(1.0, 3.0)
    ));
    let q = iv(-1.0, 1.0);
    let back = minkowski_sum(&pontryagin_diff(&iv(0.0, 2.0), &q).unwrap(), &q).unwrap();
    assert!(same_set(&back, &iv(0.0, 2.0)));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let x = sample_uniform(&back, &mut rng).unwrap();
        assert!(iv(0.0, 2.0).contains(&x, 1e-12));
    }
}

#[test]
fn pontryagin_may_be_empty() {
    let d = pontryagin_diff(&iv(0.0, 1.0), &iv(-1.0, 1.0)).unwrap();
    assert!(d.is_empty().unwrap());
}

#[test]
fn pontryagin_rejects_unbounded_subtrahend() {
    let half = HPolytope::from_rows(&[vec![1.0, 0.0]], vec![1.0], 2).unwrap();
    assert_eq!(
        pontryagin_diff(&bx(&[0.0, 0.0], &[1.0, 1.0]), &half),
        Err(PolytopeError::Unbounded)
    );
}

#[test]
fn contains_examples() {
    let p = iv(-1.0, 1.0);
    assert!(p.contains(&[0.0], 0.0));
    assert!(p.contains(&[1.0], 0.0));
    assert!(!p.contains(&[1.0 + 1e-6], 1e-9));
}

#[test]
fn sampling_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let point = iv(0.5, 0.5);
    for _ in 0..100 {
        assert_eq!(sample_uniform(&point, &mut rng).unwrap(), vec![0.5]);
    }
    let unit = iv(0.0, 1.0);
    let n = 100_000;
    let mean: f64 = (0..n).map(|_| sample_uniform(&unit, &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 0.01);
    let rect = bx(&[1.0, 0.0], &[3.0, 2.0]);
    for _ in 0..1000 {
        assert!(rect.contains(&sample_uniform(&rect, &mut rng).unwrap(), 0.0));
    }
}

#[test]
fn hit_and_run_stays_inside_and_spreads() {
    let tri = HPolytope::from_rows(
        &[vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
        vec![0.0, 0.0, 1.0],
        2,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let mut mean = [0.0; 2];
    for _ in 0..n {
        let x = sample_uniform(&tri, &mut rng).unwrap();
        assert!(tri.contains(&x, 1e-12));
        mean[0] += x[0] / n as f64;
        mean[1] += x[1] / n as f64;
    }
    // centroid of the triangle is (1/3, 1/3)
    assert!((mean[0] - 1.0 / 3.0).abs() < 0.02 && (mean[1] - 1.0 / 3.0).abs() < 0.02);
}

#[test]
fn sampling_flat_polytope_uses_vertex_mixture() {
    // the segment x + y = 1 inside the unit square
    let seg = HPolytope::from_rows(
        &[vec![1.0, 1.0], vec![-1.0, -1.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
        vec![1.0, -1.0, 0.0, 0.0],
        2,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let x = sample_uniform(&seg, &mut rng).unwrap();
        assert!(seg.contains(&x, 1e-12));
    }
}

#[test]
fn sampling_empty_is_an_error() {
    let empty = pontryagin_diff(&iv(0.0, 1.0), &iv(-1.0, 1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(sample_uniform(&empty, &mut rng), Err(PolytopeError::Empty));
}

#[test]
fn invariant_set_first_example() {
    let cert = max_output_admissible_set(
        &m(&[&[0.0]]),
        &m(&[&[1.0]]),
        &m(&[&[0.0]]),
        &iv(-1.0, 1.0),
        &iv(-1.0, 1.0),
        &iv(0.0, 0.0),
    )
    .unwrap();
    assert!(same_set(&cert.omega, &iv(-1.0, 1.0)));
    assert!(cert.is_certified());
}

#[test]
fn invariant_set_second_example() {
    let cert = max_output_admissible_set(
        &m(&[&[0.0]]),
        &m(&[&[0.0]]),
        &m(&[&[0.0]]),
        &iv(-0.5, 0.5),
        &iv(-1.0, 1.0),
        &iv(-0.5, 0.5),
    )
    .unwrap();
    assert!(same_set(&cert.omega, &iv(-0.5, 0.5)));
    assert!(cert.is_certified());
}

#[test]
fn invariant_set_contracting_scalar() {
    let cert = max_output_admissible_set(
        &m(&[&[0.5]]),
        &m(&[&[0.0]]),
        &m(&[&[0.0]]),
        &iv(-1.0, 1.0),
        &iv(-1.0, 1.0),
        &iv(-0.2, 0.2),
    )
    .unwrap();
    // 0.5·1 + 0.2 <= 1, so the whole constraint interval is invariant
    assert!(same_set(&cert.omega, &iv(-1.0, 1.0)));
    assert!(cert.is_certified());
    // the fixed point s = 0.5 s + 0.2 gives the smallest invariant interval
    let inner = iv(-0.4, 0.4);
    let image = minkowski_sum(&linear_map(&inner, &m(&[&[0.5]])).unwrap(), &iv(-0.2, 0.2)).unwrap();
    assert!(same_set(&image, &inner));
    for v in inner.vertices().unwrap() {
        assert!(cert.omega.contains(&v, 0.0));
    }
}

#[test]
fn invariant_set_needs_tightening() {
    // x⁺ = -0.9 x + w with w in [0, 0.5] on X = [-3, 3]: the lower bound tightens
    let cert = max_output_admissible_set(
        &m(&[&[-0.9]]),
        &m(&[&[0.0]]),
        &m(&[&[0.0]]),
        &iv(-3.0, 3.0),
        &iv(-1.0, 1.0),
        &iv(0.0, 0.5),
    )
    .unwrap();
    assert!(cert.is_certified());
    let (lo, hi) = cert.omega.as_box().unwrap();
    assert!(lo[0] > -3.0 + 0.1);
    // brute-force oracle on a grid: x is admissible iff every worst-case
    // forward orbit stays in X
    let admissible = |x0: f64| {
        let (mut a, mut b) = (x0, x0);
        for _ in 0..400 {
            if a < -3.0 - 1e-12 || b > 3.0 + 1e-12 {
                return false;
            }
            (a, b) = (-0.9 * b, -0.9 * a + 0.5);
        }
        true
    };
    for i in 0..=6000 {
        let x = -3.0 + 6.0 * i as f64 / 6000.0;
        if (x - lo[0]).abs() > 1e-9 && (x - hi[0]).abs() > 1e-9 {
            assert_eq!(admissible(x), x >= lo[0] && x <= hi[0], "x = {x}");
        }
    }
}

#[test]
fn invariant_set_two_dimensional_feedback() {
    let a = m(&[&[1.0, 1.0], &[0.0, 1.0]]);
    let b = m(&[&[0.0], &[1.0]]);
    let k = m(&[&[-0.4, -1.2]]);
    let x = bx(&[-5.0, -5.0], &[5.0, 5.0]);
    let u = iv(-1.0, 1.0);
    let w = bx(&[-0.1, -0.1], &[0.1, 0.1]);
    let cert = max_output_admissible_set(&a, &b, &k, &x, &u, &w).unwrap();
    assert!(cert.is_certified(), "{cert:?}");
    let closed = a.add(&b.matmul(&k));
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let p = sample_uniform(&cert.omega, &mut rng).unwrap();
        assert!(x.contains(&p, 1e-9));
        assert!(u.contains(&k.mul_vec(&p), 1e-9));
        let nxt = closed.mul_vec(&p);
        for wv in w.vertices().unwrap() {
            let q: Vec<f64> = nxt.iter().zip(&wv).map(|(a, b)| a + b).collect();
            assert!(cert.omega.contains(&q, 1e-9));
        }
    }
}

#[test]
fn invariant_set_unstable_and_empty() {
    let unstable = max_output_admissible_set(
        &m(&[&[1.5]]),
        &m(&[&[1.0]]),
        &m(&[&[0.0]]),
        &iv(-1.0, 1.0),
        &iv(-1.0, 1.0),
        &iv(0.0, 0.0),
    );
    assert!(matches!(unstable, Err(InvariantSetError::Unstable { .. })));
    let empty = max_output_admissible_set(
        &m(&[&[0.0]]),
        &m(&[&[0.0]]),
        &m(&[&[0.0]]),
        &iv(-0.5, 0.5),
        &iv(-1.0, 1.0),
        &iv(-0.6, 0.6),
    );
    assert!(matches!(empty, Err(InvariantSetError::Empty)));
}

#[test]
fn affine_feedback_reduces_to_shifted_sets() {
    // x⁺ = x + u, u = -0.5 x + 1: fixed point x = 2
    let cert = max_output_admissible_set_affine(
        &m(&[&[1.0]]),
        &m(&[&[1.0]]),
        &m(&[&[-0.5]]),
        &[1.0],
        &iv(0.0, 4.0),
        &iv(-1.0, 1.0),
        &iv(-0.1, 0.1),
    )
    .unwrap();
    assert!(cert.is_certified());
    assert!(cert.omega.contains(&[2.0], 0.0));
    assert!((cert.feedback(&[2.0])[0]).abs() < 1e-12);
}

#[test]
fn safe_input_set_examples() {
    let sis = safe_input_set(
        &[1.0],
        &m(&[&[0.0]]),
        &m(&[&[1.0]]),
        &[0.0],
        &iv(-1.0, 1.0),
        &iv(0.0, 0.0),
        &iv(-1.0, 1.0),
    )
    .unwrap();
    assert_eq!(sis.as_box().unwrap(), (vec![-1.0], vec![1.0]));
    // input does not reach the state: the whole input set is safe
    let u = iv(-1.0, 1.0);
    let sis = safe_input_set(
        &[-0.5],
        &m(&[&[0.0]]),
        &m(&[&[0.0]]),
        &[0.0],
        &iv(-0.5, 0.5),
        &iv(-0.5, 0.5),
        &u,
    )
    .unwrap();
    assert!(same_set(&sis, &u));
    // 0.5 + u in [-0.2, 0.2] with u in [-1, 1] gives u in [-0.7, -0.3]
    let sis = safe_input_set(
        &[1.0],
        &m(&[&[0.5]]),
        &m(&[&[1.0]]),
        &[0.0],
        &iv(-0.5, 0.5),
        &iv(-0.3, 0.3),
        &u,
    )
    .unwrap();
    let (lo, hi) = sis.as_box().unwrap();
    assert!((lo[0] + 0.7).abs() < 1e-12 && (hi[0] + 0.3).abs() < 1e-12);
    let none = safe_input_set(
        &[4.0],
        &m(&[&[0.5]]),
        &m(&[&[1.0]]),
        &[0.0],
        &iv(-0.5, 0.5),
        &iv(-0.3, 0.3),
        &u,
    );
    assert_eq!(none, Err(PolytopeError::Empty));
}

#[test]
fn serde_round_trip_and_box_form() {
    let p = bx(&[1.0, 0.0], &[3.0, 2.0]);
    let s = serde_json::to_string(&p).unwrap();
    let back: HPolytope<f64> = serde_json::from_str(&s).unwrap();
    assert_eq!(back, p);
    let from_box: HPolytope<f64> = serde_json::from_str(r#"{"box": {"lo": [1, 0], "hi": [3, 2]}}"#).unwrap();
    assert_eq!(from_box, p);
    assert!(serde_json::from_str::<HPolytope<f64>>(r#"{"box": {"lo": [3], "hi": [1]}}"#).is_err());
}

#[test]
fn single_precision_operations() {
    let p = HPolytope::<f32>::interval(0.0, 4.0).unwrap();
    let q = HPolytope::<f32>::interval(-1.0, 1.0).unwrap();
    let d = pontryagin_diff(&p, &q).unwrap();
    assert_eq!(d.as_box().unwrap(), (vec![1.0f32], vec![3.0f32]));
    let back = minkowski_sum(&d, &q).unwrap();
    assert_eq!(back.as_box().unwrap(), (vec![0.0f32], vec![4.0f32]));
    let one = Matrix::<f32>::from_rows(&[vec![0.0]], 1).unwrap();
    let b = Matrix::<f32>::from_rows(&[vec![1.0]], 1).unwrap();
    let cert =
        max_output_admissible_set(&one, &b, &one, &q, &q, &HPolytope::<f32>::interval(0.0, 0.0).unwrap()).unwrap();
    assert!(cert.is_certified());
    let tri = HPolytope::<f32>::from_rows(
        &[vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
        vec![0.0, 0.0, 1.0],
        2,
    )
    .unwrap();
    assert_eq!(tri.vertices().unwrap().len(), 3);
}

fn arb_box(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    proptest::collection::vec((-5.0f64..5.0, 0.0f64..4.0), dim)
        .prop_map(|v| (v.iter().map(|p| p.0).collect(), v.iter().map(|p| p.0 + p.1).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn erosion_then_dilation_is_contained(((plo, phi), (qlo, qhi)) in (arb_box(2), arb_box(2)), seed in any::<u64>()) {
        let p = bx(&plo, &phi);
        let q = bx(&qlo, &qhi);
        let d = pontryagin_diff(&p, &q).unwrap();
        prop_assume!(!d.is_empty().unwrap());
        let back = minkowski_sum(&d, &q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let x = sample_uniform(&back, &mut rng).unwrap();
            prop_assert!(p.contains(&x, 1e-9));
        }
    }

    #[test]
    fn samples_are_members((lo, hi) in arb_box(3), seed in any::<u64>()) {
        let p = bx(&lo, &hi);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            prop_assert!(p.contains(&sample_uniform(&p, &mut rng).unwrap(), 1e-12));
        }
    }

    #[test]
    fn support_matches_vertex_maximum(((lo, hi), angle) in (arb_box(2), 0.0f64..6.3)) {
        let p = bx(&lo, &hi);
        let d = [angle.cos(), angle.sin()];
        let best = p.vertices().unwrap().iter().map(|v| v[0] * d[0] + v[1] * d[1]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((p.support(&d).unwrap() - best).abs() < 1e-12);
    }

    #[test]
    fn invertible_map_of_difference_is_contained(((plo, phi), (qlo, qhi)) in (arb_box(2), arb_box(2)),
        r in proptest::collection::vec(-2.0f64..2.0, 4), seed in any::<u64>()) {
        let rm = Matrix::from_row_major(2, 2, r);
        prop_assume!((rm[(0, 0)] * rm[(1, 1)] - rm[(0, 1)] * rm[(1, 0)]).abs() > 0.1);
        let p = bx(&plo, &phi);
        let q = bx(&qlo, &qhi);
        let d = pontryagin_diff(&p, &q).unwrap();
        prop_assume!(!d.is_empty().unwrap());
        let lhs = linear_map(&d, &rm).unwrap();
        let rhs = pontryagin_diff(&linear_map(&p, &rm).unwrap(), &linear_map(&q, &rm).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x = sample_uniform(&lhs, &mut rng).unwrap();
            prop_assert!(rhs.contains(&x, 1e-7));
        }
    }
}

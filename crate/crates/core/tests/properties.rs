use fatou_core::dynamics::{ball_samples, basin_membership, find_regularity_neighborhood, member_at_level, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL};
use fatou_core::gallery::get_example;
use fatou_core::poly::{map_compose, map_eval, map_inverse_formal, CPoly, PolyMap};
use fatou_core::Point;
use num_complex::Complex64;
use proptest::prelude::*;

const ORDER: u32 = 6;

fn coeff() -> impl Strategy<Value = Complex64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| Complex64::new(re, im))
}

/// A map of `C^2` fixing the origin with an invertible linear part and
/// quadratic nonlinearity.
fn germ() -> impl Strategy<Value = PolyMap> {
    (proptest::collection::vec(coeff(), 6), 0.5f64..1.5, 0.5f64..1.5).prop_map(|(c, a, d)| {
        let x = CPoly::from_terms(2, [(vec![1, 0], Complex64::new(a, 0.0)), (vec![2, 0], c[0]), (vec![1, 1], c[1]), (vec![0, 2], c[2])]);
        let y = CPoly::from_terms(
            2,
            [(vec![1, 0], c[3] * 0.3), (vec![0, 1], Complex64::new(d, 0.0)), (vec![2, 0], c[4]), (vec![0, 2], c[5])],
        );
        PolyMap::new(vec![x, y], ORDER).expect("valid map")
    })
}

fn small_point() -> impl Strategy<Value = Vec<Complex64>> {
    proptest::collection::vec((-1e-2f64..1e-2, -1e-2f64..1e-2).prop_map(|(re, im)| Complex64::new(re, im)), 2)
}

fn dist(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_is_associative(a in germ(), b in germ(), c in germ()) {
        let left = map_compose(&map_compose(&a, &b, ORDER).unwrap(), &c, ORDER).unwrap();
        let right = map_compose(&a, &map_compose(&b, &c, ORDER).unwrap(), ORDER).unwrap();
        prop_assert!(left.distance(&right).unwrap() < 1e-9);
    }

    #[test]
    fn formal_inverse_round_trips(a in germ()) {
        let inv = map_inverse_formal(&a, ORDER).unwrap();
        let id = PolyMap::identity(2, ORDER);
        prop_assert!(map_compose(&a, &inv, ORDER).unwrap().distance(&id).unwrap() < 1e-8);
        prop_assert!(map_compose(&inv, &a, ORDER).unwrap().distance(&id).unwrap() < 1e-8);
    }

    #[test]
    fn composition_agrees_with_evaluation(a in germ(), b in germ(), z in small_point()) {
        // Quadratic after quadratic has degree 4 <= ORDER, so nothing is truncated.
        let ab = map_compose(&a, &b, ORDER).unwrap();
        let direct = map_eval(&a, &map_eval(&b, &z));
        prop_assert!(dist(&map_eval(&ab, &z), &direct) < 1e-12);
    }

    #[test]
    fn text_form_round_trips(a in germ()) {
        let back = PolyMap::from_text(&a.to_text()).unwrap();
        prop_assert!(back.distance(&a).unwrap() < 1e-15);
    }
}

#[test]
fn membership_is_invariant_and_nested() {
    let spec = get_example("henon_fb").unwrap();
    let nbhd = find_regularity_neighborhood(&spec.h).unwrap();
    let mut checked = 0;
    for u in ball_samples(2, 100, 2.0, 5) {
        let p: Point = &spec.h.fixed_point + u;
        let m = basin_membership(&spec.h, &nbhd, &p, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL);
        let Some(level) = m.level() else { continue };
        checked += 1;
        let hp = spec.h.eval(&p).unwrap();
        assert!(basin_membership(&spec.h, &nbhd, &hp, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL).is_member());
        assert!(member_at_level(&spec.h, &nbhd, &p, level + 1, DEFAULT_NEWTON_TOL).is_some());
    }
    assert!(checked > 50, "only {checked} members sampled");
}

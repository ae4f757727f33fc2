//! Shrinking property tests over the exact-arithmetic core. The seeded law
//! suites cover breadth; these give minimal counterexamples when an
//! algebraic identity breaks.

use fiberlib::measure::{pushforward, AtomSpace, FunctionClass, Measure, PointMap};
use fiberlib::norms::{FiberNorm, PExp};
use fiberlib::scalar::Scalar;
use proptest::prelude::*;

fn scalar() -> impl Strategy<Value = Scalar> {
    (-20i64..=20, 1i64..=9).prop_map(|(n, d)| Scalar::ratio(n, d))
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<Scalar>> {
    prop::collection::vec(scalar(), dim)
}

fn polytopal_fiber(dim: usize) -> impl Strategy<Value = FiberNorm> {
    let weighted_l1 = prop::collection::vec(0i64..=4, dim).prop_map(|w| {
        FiberNorm::lp(PExp::one(), w.into_iter().map(Scalar::from_int).collect()).unwrap()
    });
    let l_inf = Just(FiberNorm::unweighted_lp(PExp::Inf, dim).unwrap());
    let rows = prop::collection::vec(prop::collection::vec(-3i64..=3, dim), 1..=4).prop_map(|rs| {
        let rows: Vec<Vec<Scalar>> = rs
            .into_iter()
            .map(|r| r.into_iter().map(Scalar::from_int).collect())
            .collect();
        FiberNorm::polyhedral(rows).unwrap()
    });
    prop_oneof![weighted_l1, l_inf, rows]
}

proptest! {
    #[test]
    fn scalar_ring_laws(a in scalar(), b in scalar(), c in scalar()) {
        prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
        prop_assert_eq!(&a + &(-a.clone()), Scalar::zero());
        prop_assert_eq!(&a * &Scalar::one(), a.clone());
    }

    #[test]
    fn scalar_recip_inverts(n in 1i64..=20, d in 1i64..=9) {
        let a = Scalar::ratio(n, d);
        prop_assert_eq!(&a * &a.recip(), Scalar::one());
    }

    #[test]
    fn seminorm_triangle_and_homogeneity(
        (n, v, w) in (1usize..=3).prop_flat_map(|d| (polytopal_fiber(d), vector(d), vector(d))),
        c in scalar(),
    ) {
        let nv = n.eval(&v).unwrap();
        let nw = n.eval(&w).unwrap();
        let sum: Vec<Scalar> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
        let ns = n.eval(&sum).unwrap();
        prop_assert!(ns <= &nv + &nw, "triangle: {} > {} + {}", ns, nv, nw);
        let scaled: Vec<Scalar> = v.iter().map(|x| x * &c).collect();
        prop_assert_eq!(n.eval(&scaled).unwrap(), &c.abs() * &nv);
    }

    #[test]
    fn norming_functional_is_dual_feasible(
        rows in prop::collection::vec(prop::collection::vec(-3i64..=3, 2), 1..=3),
        v in vector(2),
    ) {
        let rows: Vec<Vec<Scalar>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(Scalar::from_int).collect())
            .collect();
        let n = FiberNorm::polyhedral(rows).unwrap();
        let nv = n.eval(&v).unwrap();
        if !nv.is_zero() {
            let omega = n.norming_functional(&v).unwrap();
            let pairing: Scalar = omega
                .omega
                .iter()
                .zip(&v)
                .map(|(a, b)| a * b)
                .fold(Scalar::zero(), |acc, x| &acc + &x);
            prop_assert_eq!(pairing, nv);
            prop_assert!(omega.dual_norm.to_f64() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn pushforward_preserves_mass(
        masses in prop::collection::vec((0i64..=5, 1i64..=4), 1..=6),
        targets in prop::collection::vec(0usize..3, 6),
    ) {
        prop_assume!(masses.iter().any(|(n, _)| *n > 0));
        let n = masses.len();
        let space = AtomSpace::new((0..n).map(|i| format!("x{i}"))).unwrap();
        let m = Measure::new(
            space.clone(),
            masses.iter().map(|&(p, q)| Scalar::ratio(p, q)).collect(),
        )
        .unwrap();
        let ys = AtomSpace::new(["y0", "y1", "y2"]).unwrap();
        let phi = PointMap::new(space, ys.clone(), targets[..n].to_vec()).unwrap();
        let m_y = pushforward(&phi, &m).unwrap();
        prop_assert_eq!(m.total(), m_y.total());
        for y in ys.indices() {
            let fiber_mass = phi
                .fiber(y)
                .into_iter()
                .fold(Scalar::zero(), |acc, x| &acc + m.mass(x));
            prop_assert_eq!(&fiber_mass, m_y.mass(y));
        }
    }

    #[test]
    fn measure_json_round_trip(masses in prop::collection::vec((0i64..=9, 1i64..=7), 1..=5)) {
        prop_assume!(masses.iter().any(|(n, _)| *n > 0));
        let space = AtomSpace::new((0..masses.len()).map(|i| format!("a{i}"))).unwrap();
        let m = Measure::new(
            space,
            masses.iter().map(|&(p, q)| Scalar::ratio(p, q)).collect(),
        )
        .unwrap();
        let back = Measure::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(&back, &m);
    }

    #[test]
    fn function_class_integral_is_linear(
        (masses, fv, gv) in prop::collection::vec(1i64..=4, 1..=5).prop_flat_map(|ms| {
            let n = ms.len();
            (
                Just(ms),
                prop::collection::vec(scalar(), n),
                prop::collection::vec(scalar(), n),
            )
        }),
        scale in scalar(),
    ) {
        let space = AtomSpace::new((0..masses.len()).map(|i| format!("a{i}"))).unwrap();
        let m = Measure::new(space, masses.iter().map(|&p| Scalar::from_int(p)).collect()).unwrap();
        let f = FunctionClass::new(m.clone(), fv).unwrap();
        let g = FunctionClass::new(m.clone(), gv).unwrap();
        let lhs = f.add(&g).unwrap().integral();
        let rhs = &f.integral() + &g.integral();
        prop_assert_eq!(lhs, rhs);
        let scaled = f.scale(&scale).integral();
        prop_assert_eq!(scaled, &scale * &f.integral());
    }
}

//! Liftings at atomic scale: a reroute of null atoms onto positive atoms
//! induces a set lifting, a function lifting with everywhere-defined values,
//! and a lifting of presented modules with per-atom fibers and a lifted
//! duality pairing.
//!
//! Everything here is deterministic; no choice principle enters at finitely
//! many atoms. The fiber evaluation map from the dual is checked to be an
//! isometry; surjectivity is deliberately not claimed.

use crate::error::{FiberError, Result};
use crate::linalg;
use crate::measure::{FunctionClass, Measure, TotalFunction};
use crate::modules::{dual_module, pointwise_norm, ModuleElement, ModulePresentation};
use crate::norms::FiberNorm;
use crate::scalar::{sdot, Scalar};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// Reroute of null atoms onto positive atoms; the induced total map is the
/// identity on positive atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureLifting {
    measure: Arc<Measure>,
    total_map: Vec<usize>,
}

impl MeasureLifting {
    pub fn measure(&self) -> &Arc<Measure> {
        &self.measure
    }

    /// sigma-hat: where atom x reads its value from.
    pub fn route(&self, x: usize) -> usize {
        self.total_map[x]
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for x in self.measure.null_atoms() {
            map.insert(
                self.measure.space().name(x).to_string(),
                serde_json::Value::String(self.measure.space().name(self.total_map[x]).to_string()),
            );
        }
        serde_json::json!({ "reroute": map })
    }

    pub fn from_json(v: &serde_json::Value, m: &Arc<Measure>) -> Result<Self> {
        let obj = v
            .get("reroute")
            .and_then(serde_json::Value::as_object)
            .ok_or_else(|| FiberError::Parse("missing reroute".into()))?;
        let mut reroute = BTreeMap::new();
        for (from, to) in obj {
            let f = m
                .space()
                .index_of(from)
                .ok_or_else(|| FiberError::Parse(format!("unknown atom '{from}'")))?;
            let t_name = to
                .as_str()
                .ok_or_else(|| FiberError::Parse("reroute target must be a string".into()))?;
            let t = m
                .space()
                .index_of(t_name)
                .ok_or_else(|| FiberError::Parse(format!("unknown atom '{t_name}'")))?;
            reroute.insert(f, t);
        }
        make_lifting(m, Some(&reroute))
    }
}

/// Default policy sends every null atom to the first positive atom; a custom
/// reroute must be defined exactly on the null atoms and land on positive
/// ones.
pub fn make_lifting(m: &Arc<Measure>, reroute: Option<&BTreeMap<usize, usize>>) -> Result<MeasureLifting> {
    let positives = m.positive_atoms();
    let first = *positives.first().ok_or(FiberError::AllNull)?;
    let nulls: BTreeSet<usize> = m.null_atoms().into_iter().collect();
    let mut total_map: Vec<usize> = (0..m.space().len()).collect();
    match reroute {
        None => {
            for &x in &nulls {
                total_map[x] = first;
            }
        }
        Some(map) => {
            let keys: BTreeSet<usize> = map.keys().copied().collect();
            if keys != nulls {
                return Err(FiberError::InvalidInput(
                    "reroute must be defined exactly on null atoms".into(),
                ));
            }
            for (&x, &tgt) in map {
                if !m.is_positive_atom(tgt) {
                    return Err(FiberError::InvalidInput(format!(
                        "reroute target '{}' is null",
                        m.space().name(tgt)
                    )));
                }
                total_map[x] = tgt;
            }
        }
    }
    Ok(MeasureLifting {
        measure: m.clone(),
        total_map,
    })
}

/// Preimage of A cap P under the total map: the canonical representative of
/// the class of A.
pub fn lift_set(l: &MeasureLifting, a: &BTreeSet<usize>) -> BTreeSet<usize> {
    let m = &l.measure;
    (0..m.space().len())
        .filter(|&x| {
            let tgt = l.total_map[x];
            m.is_positive_atom(tgt) && a.contains(&tgt)
        })
        .collect()
}

/// Everywhere-defined representative of a class: reads through sigma-hat.
pub fn lift_function(l: &MeasureLifting, f: &FunctionClass) -> Result<TotalFunction> {
    if f.measure() != &l.measure {
        return Err(FiberError::SpaceMismatch(
            "class over a different measure".into(),
        ));
    }
    let values = (0..l.measure.space().len())
        .map(|x| {
            f.value_at(l.total_map[x])
                .expect("total map lands on positive atoms")
                .clone()
        })
        .collect();
    TotalFunction::new(l.measure.space().clone(), values)
}

/// Module with an everywhere-defined fiber: at atom x, the fiber of the base
/// at sigma-hat(x). Carries the quotient data of each fiber.
#[derive(Clone, Debug)]
pub struct LiftedModule {
    base: ModulePresentation,
    lifting: MeasureLifting,
    /// Fiber per atom of the full space.
    fibers: Vec<FiberNorm>,
}

/// Everywhere-defined element: one coefficient vector per atom, understood
/// modulo the kernel of the fiber there.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedElement {
    pub values: Vec<Vec<Scalar>>,
}

impl LiftedModule {
    pub fn base(&self) -> &ModulePresentation {
        &self.base
    }

    pub fn lifting(&self) -> &MeasureLifting {
        &self.lifting
    }

    pub fn fiber(&self, x: usize) -> &FiberNorm {
        &self.fibers[x]
    }

    pub fn atom_count(&self) -> usize {
        self.fibers.len()
    }

    /// Pointwise norm of a lifted element, defined at every atom.
    pub fn norm(&self, e: &LiftedElement) -> Result<TotalFunction> {
        let values = e
            .values
            .iter()
            .zip(&self.fibers)
            .map(|(v, f)| f.eval(v))
            .collect::<Result<Vec<_>>>()?;
        TotalFunction::new(self.lifting.measure.space().clone(), values)
    }

    /// Restriction to a single atom: the fiber element.
    pub fn fiber_value<'a>(&self, e: &'a LiftedElement, x: usize) -> &'a [Scalar] {
        &e.values[x]
    }

    /// Same fiber element at every atom, modulo kernels.
    pub fn fiber_equal(&self, a: &LiftedElement, b: &LiftedElement) -> Result<bool> {
        for x in 0..self.fibers.len() {
            let diff: Vec<Scalar> = a.values[x]
                .iter()
                .zip(&b.values[x])
                .map(|(p, q)| p - q)
                .collect();
            if self.fibers[x].eval(&diff)?.to_f64().abs() > 1e-12 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn lift_module(l: &MeasureLifting, m: &ModulePresentation) -> Result<LiftedModule> {
    if m.measure() != &l.measure {
        return Err(FiberError::SpaceMismatch(
            "presentation over a different measure".into(),
        ));
    }
    let fibers = (0..l.measure.space().len())
        .map(|x| {
            m.fiber_at(l.total_map[x])
                .expect("total map lands on positive atoms")
                .clone()
        })
        .collect();
    Ok(LiftedModule {
        base: m.clone(),
        lifting: l.clone(),
        fibers,
    })
}

/// The lifting of an element: coefficients read through sigma-hat.
pub fn lift_element(lm: &LiftedModule, v: &ModuleElement) -> Result<LiftedElement> {
    let m = &lm.base;
    let slots: Vec<usize> = (0..lm.fibers.len())
        .map(|x| m.slot_of(lm.lifting.total_map[x]).expect("positive"))
        .collect();
    let values = slots.iter().map(|&s| v.vector_at_slot(s)).collect();
    let lifted = LiftedElement { values };
    let _ = pointwise_norm(m, v)?;
    Ok(lifted)
}

/// Forget null atoms: the class of a lifted element.
pub fn project_pi_m(lm: &LiftedModule, e: &LiftedElement) -> Result<ModuleElement> {
    let rows: Vec<Vec<Scalar>> = lm
        .base
        .positive_atoms()
        .into_iter()
        .map(|x| e.values[x].clone())
        .collect();
    lm.base.element_from_rows(&rows)
}

/// Splice lifted elements along a partition of all atoms (null atoms too).
pub fn glue_lifted(
    lm: &LiftedModule,
    partition: &[BTreeSet<usize>],
    parts: &[LiftedElement],
) -> Result<LiftedElement> {
    if partition.len() != parts.len() {
        return Err(FiberError::BadPartition(format!(
            "{} blocks but {} parts",
            partition.len(),
            parts.len()
        )));
    }
    let n = lm.fibers.len();
    let mut assigned = vec![None; n];
    for (b, block) in partition.iter().enumerate() {
        for &x in block {
            if x >= n || assigned[x].is_some() {
                return Err(FiberError::BadPartition("overlap or out of range".into()));
            }
            assigned[x] = Some(b);
        }
    }
    let values = (0..n)
        .map(|x| {
            let b = assigned[x]
                .ok_or_else(|| FiberError::BadPartition(format!("atom {x} uncovered")))?;
            Ok(parts[b].values[x].clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LiftedElement { values })
}

/// Duality pairing of lifted elements, atom by atom. Dual coefficients act
/// through the quotient of the primal fiber.
pub fn lift_pairing(
    primal: &LiftedModule,
    dual: &LiftedModule,
    omega_bar: &LiftedElement,
    v_bar: &LiftedElement,
) -> Result<TotalFunction> {
    if primal.lifting != dual.lifting || primal.base.gens() != dual.base.gens() {
        return Err(FiberError::SpaceMismatch(
            "dual and primal liftings disagree".into(),
        ));
    }
    let values = (0..primal.fibers.len())
        .map(|x| {
            let p = primal.fibers[x].quotient_projector();
            let vq = linalg::mat_vec(&p, &v_bar.values[x]);
            sdot(&omega_bar.values[x], &vq)
        })
        .collect();
    TotalFunction::new(primal.lifting.measure.space().clone(), values)
}

#[derive(Clone, Debug)]
pub struct RxAtomReport {
    pub atom: usize,
    pub operator_norm: f64,
    pub fiber_dual_norm: f64,
    pub defect: f64,
}

/// At each atom, the evaluation functional of a lifted dual element must act
/// on the primal fiber with operator norm equal to its own fiber norm. Two
/// routes: sup over the primal ball (dual_norm of the projected coefficients)
/// against the dual presentation's fiber evaluation.
pub fn rx_isometry_check(
    primal: &LiftedModule,
    omega_bar: &LiftedElement,
    tol: f64,
) -> Result<Vec<RxAtomReport>> {
    let dual_pres = dual_module(&primal.base)?;
    let dual = lift_module(&primal.lifting, &dual_pres)?;
    let mut out = Vec::new();
    for x in 0..primal.fibers.len() {
        let p = primal.fibers[x].quotient_projector();
        let omega_q = linalg::mat_vec(&p, &omega_bar.values[x]);
        let op = primal.fibers[x].dual_norm(&omega_q)?.to_f64();
        let fib = dual.fibers[x].eval(&omega_bar.values[x])?.to_f64();
        out.push(RxAtomReport {
            atom: x,
            operator_norm: op,
            fiber_dual_norm: fib,
            defect: (op - fib).abs(),
        });
    }
    if let Some(worst) = out
        .iter()
        .max_by(|a, b| a.defect.partial_cmp(&b.defect).expect("finite"))
    {
        if worst.defect > tol {
            return Err(FiberError::ContractionViolated {
                atom: primal
                    .lifting
                    .measure
                    .space()
                    .name(worst.atom)
                    .to_string(),
                defect: worst.defect,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::AtomSpace;
    use crate::norms::PExp;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sc(n: i64, d: i64) -> Scalar {
        Scalar::ratio(n, d)
    }

    fn measure(masses: &[(i64, i64)]) -> Arc<Measure> {
        let names: Vec<String> = (0..masses.len()).map(|i| format!("x{i}")).collect();
        let space = AtomSpace::new(names).unwrap();
        Measure::new(space, masses.iter().map(|&(n, d)| sc(n, d)).collect()).unwrap()
    }

    #[test]
    fn make_lifting_policies() {
        let m = measure(&[(1, 1), (0, 1), (0, 1)]);
        let l = make_lifting(&m, None).unwrap();
        assert_eq!(l.route(0), 0);
        assert_eq!(l.route(1), 0);
        assert_eq!(l.route(2), 0);

        // No null atoms: identity.
        let m2 = measure(&[(1, 1), (2, 1)]);
        let l2 = make_lifting(&m2, None).unwrap();
        assert_eq!((0..2).map(|x| l2.route(x)).collect::<Vec<_>>(), vec![0, 1]);

        // All-null measure rejected.
        let m3 = measure(&[(0, 1)]);
        assert!(matches!(make_lifting(&m3, None), Err(FiberError::AllNull)));

        // Custom reroute must cover exactly the null atoms.
        let mut custom = BTreeMap::new();
        custom.insert(1usize, 0usize);
        assert!(make_lifting(&m, Some(&custom)).is_err());
        custom.insert(2, 0);
        assert!(make_lifting(&m, Some(&custom)).is_ok());
        custom.insert(2, 1);
        assert!(make_lifting(&m, Some(&custom)).is_err());
    }

    #[test]
    fn lift_set_boolean_homomorphism_exhaustive() {
        let m = measure(&[(1, 1), (0, 1), (2, 1), (0, 1)]);
        let l = make_lifting(&m, None).unwrap();
        let n = m.space().len();
        let all: BTreeSet<usize> = (0..n).collect();
        assert_eq!(lift_set(&l, &BTreeSet::new()), BTreeSet::new());
        assert_eq!(lift_set(&l, &all), all);

        // Null sets die.
        let null_set: BTreeSet<usize> = [1, 3].into_iter().collect();
        assert_eq!(lift_set(&l, &null_set), BTreeSet::new());

        for abits in 0..(1u32 << n) {
            let a: BTreeSet<usize> = (0..n).filter(|i| abits >> i & 1 == 1).collect();
            let la = lift_set(&l, &a);
            // m(A delta l(A)) = 0.
            let sym: BTreeSet<usize> = a.symmetric_difference(&la).copied().collect();
            assert!(m.mass_of_set(&sym).is_zero(), "A={a:?} lifted {la:?}");
            for bbits in 0..(1u32 << n) {
                let b: BTreeSet<usize> = (0..n).filter(|i| bbits >> i & 1 == 1).collect();
                let lb = lift_set(&l, &b);
                let cap: BTreeSet<usize> = a.intersection(&b).copied().collect();
                let lcap = lift_set(&l, &cap);
                let expected: BTreeSet<usize> = la.intersection(&lb).copied().collect();
                assert_eq!(lcap, expected, "intersection law");
                let delta: BTreeSet<usize> = a.symmetric_difference(&b).copied().collect();
                let ldelta = lift_set(&l, &delta);
                let expected: BTreeSet<usize> = la.symmetric_difference(&lb).copied().collect();
                assert_eq!(ldelta, expected, "symmetric difference law");
            }
        }
    }

    #[test]
    fn lift_function_frozen_and_laws() {
        let m = measure(&[(1, 1), (0, 1)]);
        let l = make_lifting(&m, None).unwrap();
        let f = FunctionClass::new(m.clone(), vec![sc(7, 1)]).unwrap();
        let lf = lift_function(&l, &f).unwrap();
        assert_eq!(lf.values(), &[sc(7, 1), sc(7, 1)]);

        // Constants stay constant.
        let c = FunctionClass::constant(m.clone(), sc(3, 1));
        assert!(lift_function(&l, &c)
            .unwrap()
            .values()
            .iter()
            .all(|v| v == &sc(3, 1)));

        // Laws on seeded random pairs over a bigger space.
        let m = measure(&[(1, 2), (0, 1), (1, 3), (0, 1), (2, 1)]);
        let l = make_lifting(&m, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let npos = m.positive_atoms().len();
        for _ in 0..200 {
            let f = FunctionClass::new(
                m.clone(),
                (0..npos)
                    .map(|_| sc(rng.gen_range(-6..=6), rng.gen_range(1..=3)))
                    .collect(),
            )
            .unwrap();
            let g = FunctionClass::new(
                m.clone(),
                (0..npos)
                    .map(|_| sc(rng.gen_range(-6..=6), rng.gen_range(1..=3)))
                    .collect(),
            )
            .unwrap();
            let lf = lift_function(&l, &f).unwrap();
            let lg = lift_function(&l, &g).unwrap();
            // Linearity.
            let sum = lift_function(&l, &f.add(&g).unwrap()).unwrap();
            assert_eq!(sum.values(), lf.zip(&lg, |a, b| a + b).values());
            // Products are preserved.
            let prod = lift_function(&l, &f.mul(&g).unwrap()).unwrap();
            assert_eq!(prod.values(), lf.zip(&lg, |a, b| a * b).values());
            // Isometry: sup norm of the representative equals ess sup.
            assert_eq!(lf.sup_norm(), f.ess_sup());
            // Right inverse of the class projection.
            let back = crate::measure::project_class(&lf, &m).unwrap();
            assert_eq!(back.values(), f.values());
            // Modulus commutes.
            let labs = lift_function(&l, &f.abs()).unwrap();
            assert_eq!(labs.values(), lf.map(Scalar::abs).values());
            // Monotone.
            if f.values().iter().zip(g.values()).all(|(a, b)| a <= b) {
                assert!(lf.values().iter().zip(lg.values()).all(|(a, b)| a <= b));
            }
        }
    }

    fn setup_module() -> (Arc<Measure>, MeasureLifting, ModulePresentation) {
        let m = measure(&[(1, 1), (0, 1), (1, 2)]);
        let l = make_lifting(&m, None).unwrap();
        let pres = ModulePresentation::new(
            m.clone(),
            2,
            vec![
                FiberNorm::unweighted_lp(PExp::one(), 2).unwrap(),
                FiberNorm::polyhedral(vec![
                    vec![sc(1, 1), sc(0, 1)],
                    vec![sc(1, 1), sc(1, 1)],
                ])
                .unwrap(),
            ],
        )
        .unwrap();
        (m, l, pres)
    }

    #[test]
    fn lifted_module_fibers_follow_reroute() {
        let (_, l, pres) = setup_module();
        let lm = lift_module(&l, &pres).unwrap();
        // Null atom 1 reads the fiber at atom 0.
        assert_eq!(lm.fiber(1), lm.fiber(0));
        assert_eq!(lm.fiber(0), &pres.fibers()[0]);
        assert_eq!(lm.fiber(2), &pres.fibers()[1]);
    }

    #[test]
    fn lift_element_norm_commutes_and_projects_back() {
        let (m, l, pres) = setup_module();
        let lm = lift_module(&l, &pres).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let rows: Vec<Vec<Scalar>> = (0..2)
                .map(|_| {
                    (0..2)
                        .map(|_| sc(rng.gen_range(-5..=5), rng.gen_range(1..=3)))
                        .collect()
                })
                .collect();
            let v = pres.element_from_rows(&rows).unwrap();
            let lv = lift_element(&lm, &v).unwrap();
            // |L(v)| = L(|v|) everywhere.
            let lhs = lm.norm(&lv).unwrap();
            let rhs = lift_function(&l, &pointwise_norm(&pres, &v).unwrap()).unwrap();
            assert_eq!(lhs.values(), rhs.values());
            // L(f v) = L(f) L(v).
            let f = FunctionClass::new(
                m.clone(),
                (0..2).map(|_| sc(rng.gen_range(-4..=4), 1)).collect(),
            )
            .unwrap();
            let lf = lift_function(&l, &f).unwrap();
            let lhs = lift_element(&lm, &v.scale_fn(&f).unwrap()).unwrap();
            let rhs_values: Vec<Vec<Scalar>> = lv
                .values
                .iter()
                .enumerate()
                .map(|(x, vec)| vec.iter().map(|c| c * lf.value(x)).collect())
                .collect();
            assert_eq!(lhs.values, rhs_values);
            // Projection is a right inverse.
            let back = project_pi_m(&lm, &lv).unwrap();
            assert_eq!(&back, &v);
        }
    }

    #[test]
    fn projection_identifies_null_atom_changes() {
        let (_, l, pres) = setup_module();
        let lm = lift_module(&l, &pres).unwrap();
        let v = pres
            .element_from_rows(&[vec![sc(1, 1), sc(2, 1)], vec![sc(3, 1), sc(4, 1)]])
            .unwrap();
        let lv = lift_element(&lm, &v).unwrap();
        let mut tweaked = lv.clone();
        tweaked.values[1] = vec![sc(9, 1), sc(-9, 1)];
        assert_ne!(tweaked, lv);
        assert_eq!(
            project_pi_m(&lm, &tweaked).unwrap(),
            project_pi_m(&lm, &lv).unwrap()
        );

        let zero = LiftedElement {
            values: vec![vec![sc(0, 1); 2]; 3],
        };
        let z = project_pi_m(&lm, &zero).unwrap();
        assert_eq!(z, pres.zero_element());
    }

    #[test]
    fn lifted_elements_are_glued_lifts() {
        let (_, l, pres) = setup_module();
        let lm = lift_module(&l, &pres).unwrap();
        // Arbitrary lifted element, not of the form L(v).
        let e = LiftedElement {
            values: vec![
                vec![sc(1, 1), sc(0, 1)],
                vec![sc(5, 1), sc(5, 1)],
                vec![sc(0, 1), sc(-2, 1)],
            ],
        };
        // Glue per-atom lifts: at atom x use the lift of an element whose
        // coefficients at route(x) match e at x.
        let mut blocks = Vec::new();
        let mut parts = Vec::new();
        for x in 0..3 {
            let tgt = l.route(x);
            let slot = pres.slot_of(tgt).unwrap();
            let mut rows = vec![vec![sc(0, 1); 2]; pres.positive_atoms().len()];
            rows[slot] = e.values[x].clone();
            let w = pres.element_from_rows(&rows).unwrap();
            blocks.push([x].into_iter().collect::<BTreeSet<_>>());
            parts.push(lift_element(&lm, &w).unwrap());
        }
        let glued = glue_lifted(&lm, &blocks, &parts).unwrap();
        assert_eq!(glued, e);
    }

    #[test]
    fn pairing_multiplicative_and_bounded() {
        let (_m, l, pres) = setup_module();
        let lm = lift_module(&l, &pres).unwrap();
        let dual_pres = dual_module(&pres).unwrap();
        let ld = lift_module(&l, &dual_pres).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let v = {
                let rows: Vec<Vec<Scalar>> = (0..2)
                    .map(|_| (0..2).map(|_| sc(rng.gen_range(-5..=5), 1)).collect())
                    .collect();
                pres.element_from_rows(&rows).unwrap()
            };
            let om = {
                let rows: Vec<Vec<Scalar>> = (0..2)
                    .map(|_| (0..2).map(|_| sc(rng.gen_range(-5..=5), 1)).collect())
                    .collect();
                dual_pres.element_from_rows(&rows).unwrap()
            };
            let lv = lift_element(&lm, &v).unwrap();
            let lom = lift_element(&ld, &om).unwrap();
            let pairing = lift_pairing(&lm, &ld, &lom, &lv).unwrap();
            // <L*(omega), L(v)> = L(omega(v)).
            let downstairs = crate::modules::dual_pairing(&pres, &om, &v).unwrap();
            let lifted_down = lift_function(&l, &downstairs).unwrap();
            assert_eq!(pairing.values(), lifted_down.values());
            // |<omega,v>| <= |omega| |v| at every atom.
            let nv = lm.norm(&lv).unwrap();
            let nom = ld.norm(&lom).unwrap();
            for x in 0..3 {
                assert!(
                    pairing.value(x).abs().to_f64()
                        <= nom.value(x).to_f64() * nv.value(x).to_f64() + 1e-9,
                    "pairing unbounded at atom {x}"
                );
            }
            // Zero pairs to zero.
            let zero = pres.zero_element();
            let lz = lift_element(&lm, &zero).unwrap();
            assert!(lift_pairing(&lm, &ld, &lom, &lz)
                .unwrap()
                .values()
                .iter()
                .all(Scalar::is_zero));
        }
    }

    #[test]
    fn rx_isometry_across_variants() {
        let m = measure(&[(1, 1), (0, 1)]);
        let l = make_lifting(&m, None).unwrap();
        let fibers: Vec<FiberNorm> = vec![
            FiberNorm::unweighted_lp(PExp::one(), 2).unwrap(),
            FiberNorm::unweighted_lp(PExp::two(), 3).unwrap(),
            FiberNorm::unweighted_lp(PExp::Inf, 2).unwrap(),
            FiberNorm::polyhedral(vec![
                vec![sc(1, 1), sc(0, 1), sc(1, 1)],
                vec![sc(0, 1), sc(1, 1), sc(-1, 1)],
            ])
            .unwrap(),
            FiberNorm::quadratic(vec![
                vec![sc(2, 1), sc(1, 1)],
                vec![sc(1, 1), sc(2, 1)],
            ])
            .unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for fiber in fibers {
            let pres = ModulePresentation::uniform(m.clone(), fiber.clone()).unwrap();
            let lm = lift_module(&l, &pres).unwrap();
            let dual_pres = dual_module(&pres).unwrap();
            for _ in 0..25 {
                let rows: Vec<Vec<Scalar>> = (0..1)
                    .map(|_| {
                        (0..fiber.dim())
                            .map(|_| sc(rng.gen_range(-4..=4), rng.gen_range(1..=2)))
                            .collect()
                    })
                    .collect();
                let om = dual_pres.element_from_rows(&rows).unwrap();
                let ld = lift_module(&l, &dual_pres).unwrap();
                let lom = lift_element(&ld, &om).unwrap();
                let reports = rx_isometry_check(&lm, &lom, 1e-9).unwrap();
                for r in &reports {
                    assert!(r.defect <= 1e-9, "atom {} defect {}", r.atom, r.defect);
                }
                // Null atom mirrors its reroute target.
                assert_eq!(reports[1].operator_norm, reports[0].operator_norm);
            }
        }

        // Frozen case: ell-1 fiber, omega = (1,-1) acts with norm 1.
        let pres = ModulePresentation::uniform(
            m.clone(),
            FiberNorm::unweighted_lp(PExp::one(), 2).unwrap(),
        )
        .unwrap();
        let lm = lift_module(&l, &pres).unwrap();
        let dual_pres = dual_module(&pres).unwrap();
        let om = dual_pres
            .element_from_rows(&[vec![sc(1, 1), sc(-1, 1)]])
            .unwrap();
        let ld = lift_module(&l, &dual_pres).unwrap();
        let lom = lift_element(&ld, &om).unwrap();
        let reports = rx_isometry_check(&lm, &lom, 1e-9).unwrap();
        assert_eq!(reports[0].operator_norm, 1.0);
        assert_eq!(reports[0].fiber_dual_norm, 1.0);

        // Zero functional.
        let zero = dual_pres.zero_element();
        let lz = lift_element(&ld, &zero).unwrap();
        let reports = rx_isometry_check(&lm, &lz, 1e-12).unwrap();
        assert!(reports.iter().all(|r| r.operator_norm == 0.0 && r.fiber_dual_norm == 0.0));
    }

    #[test]
    fn lifting_json_round_trip() {
        let m = measure(&[(1, 1), (0, 1), (2, 1), (0, 1)]);
        let mut custom = BTreeMap::new();
        custom.insert(1usize, 2usize);
        custom.insert(3, 0);
        let l = make_lifting(&m, Some(&custom)).unwrap();
        let j = l.to_json();
        let back = MeasureLifting::from_json(&j, &m).unwrap();
        assert_eq!(back, l);
    }
}

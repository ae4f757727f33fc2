//! Seeded law suites: random instance generators and one runner per
//! algebraic law, shared by the command-line `check` subcommand and the
//! acceptance gate. Every failure carries a dump of the instance that broke
//! the law, so a red run is directly reproducible.

use crate::bundle::{
    apply_section_functor, compose_morphisms, dense_section_family, gamma_module,
    graded_pointwise_norm, graded_representation, morphism_from_module_map, pr_phi_section,
    pullback_bundle, pullback_commute_check, pullback_section, represent_module,
    represent_module_no_ac, section_norm, Section,
};
use crate::embedding::{cantor_metric, embed_fiber, retract, CantorPoint, EmbedParams};
use crate::error::{FiberError, Result};
use crate::lifting::{lift_element, lift_function, lift_module, lift_set, make_lifting, project_pi_m};
use crate::linalg::{self, Mat};
use crate::measure::{
    disintegrate, pr_phi_function, pr_phi_function_rn, pullback_function, pushforward, AtomSpace,
    FunctionClass, Measure, PointMap,
};
use crate::modules::{
    cr_roundtrip_check, dual_module, glue_elements, pointwise_norm, ModuleElement, ModuleMorphism,
    ModulePresentation,
};
use crate::norms::{FiberNorm, PExp};
use crate::scalar::{sdot, Scalar};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::sync::Arc;

/// Outcome of one law over `cases` random instances.
#[derive(Clone, Debug)]
pub struct LawResult {
    pub law: String,
    pub cases: usize,
    pub failures: usize,
    pub max_error: f64,
    pub first_failure: Option<String>,
}

impl LawResult {
    fn new(law: &str) -> Self {
        LawResult {
            law: law.to_string(),
            cases: 0,
            failures: 0,
            max_error: 0.0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, error: f64, dump: impl FnOnce() -> String) {
        self.cases += 1;
        self.max_error = self.max_error.max(error);
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(dump());
            }
        }
    }

    pub fn pass(&self) -> bool {
        self.failures == 0
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "law": self.law,
            "cases": self.cases,
            "failures": self.failures,
            "max_error": self.max_error,
            "first_failure": self.first_failure,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SuiteSummary {
    pub suite: String,
    pub seed: u64,
    pub laws: Vec<LawResult>,
}

impl SuiteSummary {
    pub fn all_pass(&self) -> bool {
        self.laws.iter().all(LawResult::pass)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "suite": self.suite,
            "seed": self.seed,
            "pass": self.all_pass(),
            "laws": self.laws.iter().map(LawResult::to_json).collect::<Vec<_>>(),
        })
    }
}

/// Deliberate defect injection, for exercising the failure path end to end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Replaces the norm under test by its square, which breaks the
    /// triangle inequality.
    TriangleViolation,
}

// ---------------------------------------------------------------------------
// Generators. All rational-valued; every instance is a pure function of the
// RNG stream.

pub fn gen_space(rng: &mut ChaCha8Rng, max_atoms: usize) -> Arc<AtomSpace> {
    let n = rng.gen_range(1..=max_atoms);
    AtomSpace::new((0..n).map(|i| format!("x{i}"))).expect("nonempty names")
}

pub fn gen_measure(rng: &mut ChaCha8Rng, space: &Arc<AtomSpace>) -> Arc<Measure> {
    loop {
        let mass: Vec<Scalar> = (0..space.len())
            .map(|_| {
                if rng.gen_bool(0.3) {
                    Scalar::zero()
                } else {
                    Scalar::ratio(rng.gen_range(1..=4), rng.gen_range(1..=3))
                }
            })
            .collect();
        if mass.iter().any(Scalar::is_positive) {
            return Measure::new(space.clone(), mass).expect("positive total");
        }
    }
}

pub fn gen_point_map(
    rng: &mut ChaCha8Rng,
    source: &Arc<AtomSpace>,
    target: &Arc<AtomSpace>,
) -> PointMap {
    let assignment = (0..source.len())
        .map(|_| rng.gen_range(0..target.len()))
        .collect();
    PointMap::new(source.clone(), target.clone(), assignment).expect("valid assignment")
}

pub fn gen_function(rng: &mut ChaCha8Rng, m: &Arc<Measure>) -> FunctionClass {
    let values = (0..m.positive_atoms().len())
        .map(|_| Scalar::ratio(rng.gen_range(-6..=6), rng.gen_range(1..=3)))
        .collect();
    FunctionClass::new(m.clone(), values).expect("sized to positives")
}

/// Any variant. `rational_only` restricts to variants whose evaluation stays
/// in exact arithmetic on rational input.
pub fn gen_fiber(rng: &mut ChaCha8Rng, dim: usize, rational_only: bool) -> FiberNorm {
    let die = if rational_only {
        rng.gen_range(0..3)
    } else {
        rng.gen_range(0..6)
    };
    match die {
        0 => {
            let weights = (0..dim)
                .map(|_| {
                    if rng.gen_bool(0.2) {
                        Scalar::zero()
                    } else {
                        Scalar::ratio(rng.gen_range(1..=3), rng.gen_range(1..=2))
                    }
                })
                .collect();
            FiberNorm::lp(PExp::one(), weights).expect("nonnegative weights")
        }
        1 => {
            let weights = (0..dim)
                .map(|_| Scalar::ratio(rng.gen_range(0..=3), 1))
                .collect();
            FiberNorm::lp(PExp::Inf, weights).expect("nonnegative weights")
        }
        2 => {
            let rows: Mat = (0..rng.gen_range(1..=dim + 1))
                .map(|_| {
                    (0..dim)
                        .map(|_| Scalar::from_int(rng.gen_range(-3..=3)))
                        .collect()
                })
                .collect();
            FiberNorm::polyhedral(rows).expect("nonempty rows")
        }
        3 => FiberNorm::lp(
            PExp::two(),
            (0..dim)
                .map(|_| Scalar::ratio(rng.gen_range(0..=3), 1))
                .collect(),
        )
        .expect("nonnegative weights"),
        4 => FiberNorm::lp(
            PExp::Finite(Scalar::from_int(3)),
            (0..dim).map(|_| Scalar::ratio(rng.gen_range(1..=2), 1)).collect(),
        )
        .expect("nonnegative weights"),
        _ => {
            // A^T A is symmetric positive semidefinite by construction.
            let k = rng.gen_range(1..=dim);
            let a: Mat = (0..k)
                .map(|_| {
                    (0..dim)
                        .map(|_| Scalar::from_int(rng.gen_range(-2..=2)))
                        .collect()
                })
                .collect();
            let at = linalg::transpose(&a);
            FiberNorm::quadratic(linalg::mat_mul(&at, &a)).expect("psd by construction")
        }
    }
}

/// Polyhedral with the identity rows included: full rank, exact vertices.
pub fn gen_full_rank_polyhedral(rng: &mut ChaCha8Rng, dim: usize) -> FiberNorm {
    let mut rows = linalg::identity(dim);
    for _ in 0..rng.gen_range(0..=2) {
        rows.push(
            (0..dim)
                .map(|_| Scalar::from_int(rng.gen_range(-2..=2)))
                .collect(),
        );
    }
    FiberNorm::polyhedral(rows).expect("identity rows present")
}

pub fn gen_presentation(
    rng: &mut ChaCha8Rng,
    max_atoms: usize,
    max_gens: usize,
    rational_only: bool,
) -> ModulePresentation {
    let space = gen_space(rng, max_atoms);
    let measure = gen_measure(rng, &space);
    let gens = rng.gen_range(1..=max_gens);
    let fibers = (0..measure.positive_atoms().len())
        .map(|_| gen_fiber(rng, gens, rational_only))
        .collect();
    ModulePresentation::new(measure, gens, fibers).expect("matching fiber dims")
}

pub fn gen_element(rng: &mut ChaCha8Rng, m: &ModulePresentation) -> ModuleElement {
    let rows: Vec<Vec<Scalar>> = (0..m.positive_atoms().len())
        .map(|_| {
            (0..m.gens())
                .map(|_| Scalar::ratio(rng.gen_range(-6..=6), rng.gen_range(1..=3)))
                .collect()
        })
        .collect();
    m.element_from_rows(&rows).expect("sized rows")
}

fn gen_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Scalar> {
    (0..dim)
        .map(|_| Scalar::ratio(rng.gen_range(-8..=8), rng.gen_range(1..=4)))
        .collect()
}

/// Full-rank polytopal presentation plus a strictly contractive morphism on
/// it. The scale is rational, so the contraction certificate is exact.
pub fn gen_contractive_morphism(
    rng: &mut ChaCha8Rng,
    m: &ModulePresentation,
) -> ModuleMorphism {
    let gens = m.gens();
    let slots = m.positive_atoms().len();
    let mats: Vec<Mat> = (0..slots)
        .map(|slot| {
            let raw: Mat = (0..gens)
                .map(|_| {
                    (0..gens)
                        .map(|_| Scalar::ratio(rng.gen_range(-2..=2), rng.gen_range(1..=2)))
                        .collect()
                })
                .collect();
            let fiber = &m.fibers()[slot];
            let report = fiber
                .contraction_check(&raw, fiber, f64::INFINITY)
                .expect("square matrix");
            let d = report.defect.max(Scalar::zero());
            // 9/10 / (1 + d) strictly shrinks the worst excess away.
            let scale = Scalar::ratio(9, 10) * (Scalar::one() + d).recip();
            raw.iter()
                .map(|r| r.iter().map(|x| x * &scale).collect())
                .collect()
        })
        .collect();
    ModuleMorphism::new(m, m, mats, 1e-12).expect("scaled into the unit ball")
}

fn dump_json(label: &str, v: serde_json::Value) -> String {
    format!("{label}: {v}")
}

fn rel_gap(a: &Scalar, b: &Scalar) -> f64 {
    let scale = a.abs().to_f64().max(b.abs().to_f64()).max(1.0);
    (a.to_f64() - b.to_f64()).abs() / scale
}

/// Exact when both sides are rational, 1e-12 relative otherwise.
fn close(a: &Scalar, b: &Scalar) -> bool {
    if a.is_rational() && b.is_rational() {
        a == b
    } else {
        rel_gap(a, b) <= 1e-12
    }
}

// ---------------------------------------------------------------------------
// Measure suite.

pub fn measure_suite(seed: u64, cases: usize) -> Result<Vec<LawResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mass_law = LawResult::new("measure.pushforward-mass");
    let mut disint_law = LawResult::new("measure.disintegration-identity");
    let mut two_paths = LawResult::new("measure.pr-phi-two-paths");
    let mut left_inv = LawResult::new("measure.pr-phi-left-inverse");
    let mut module_laws = LawResult::new("measure.pr-phi-module-laws");

    for _ in 0..cases {
        let xs = gen_space(&mut rng, 5);
        let ys = gen_space(&mut rng, 4);
        let m_x = gen_measure(&mut rng, &xs);
        let phi = gen_point_map(&mut rng, &xs, &ys);
        let m_y = pushforward(&phi, &m_x)?;

        // Total mass and atomwise fiber sums are preserved exactly.
        let fiber_ok = ys.indices().all(|y| {
            let fiber_mass: Scalar = phi
                .fiber(y)
                .iter()
                .fold(Scalar::zero(), |acc, &x| &acc + m_x.mass(x));
            &fiber_mass == m_y.mass(y)
        });
        mass_law.record(
            m_y.total() == m_x.total() && fiber_ok,
            0.0,
            || dump_json("pushforward", serde_json::json!({
                "mass_x": m_x.to_json(), "map": phi.to_json(),
            })),
        );

        // m_X(A) = sum_y m_Y({y}) m_X^y(A) for random A.
        let disint = disintegrate(&phi, &m_x)?;
        let a_set: BTreeSet<usize> = xs.indices().filter(|_| rng.gen_bool(0.5)).collect();
        let lhs = m_x.mass_of_set(&a_set);
        let mut rhs = Scalar::zero();
        for y in ys.indices() {
            if let Some(cond) = disint.conditional(y) {
                let cond_mass: Scalar = a_set
                    .iter()
                    .fold(Scalar::zero(), |acc, &x| &acc + &cond[x]);
                rhs = rhs + m_y.mass(y) * &cond_mass;
            }
        }
        disint_law.record(lhs == rhs, rel_gap(&lhs, &rhs), || {
            dump_json("disintegration", serde_json::json!({
                "measure": m_x.to_json(), "map": phi.to_json(),
                "set": a_set.iter().copied().collect::<Vec<_>>(),
                "lhs": lhs.to_f64(), "rhs": rhs.to_f64(),
            }))
        });

        // Averaging along fibers: conditional route vs Radon-Nikodym route.
        let f = gen_function(&mut rng, &m_x);
        let via_disint = pr_phi_function(&f, &phi, &m_x)?;
        let via_rn = pr_phi_function_rn(&f, &phi, &m_x)?;
        let agree = via_disint
            .values()
            .iter()
            .zip(via_rn.values())
            .all(|(a, b)| close(a, b));
        two_paths.record(agree, 0.0, || {
            dump_json("two-paths", serde_json::json!({
                "measure": m_x.to_json(), "map": phi.to_json(),
                "disint": via_disint.to_json(), "rn": via_rn.to_json(),
            }))
        });

        // Pr of a pulled-back function returns it, exactly.
        let g = gen_function(&mut rng, &m_y);
        let back = pr_phi_function(&pullback_function(&g, &phi, &m_x)?, &phi, &m_x)?;
        left_inv.record(
            back.values() == g.values(),
            0.0,
            || dump_json("left-inverse", serde_json::json!({
                "g": g.to_json(), "back": back.to_json(),
            })),
        );

        // Pr(phi^* g . f) = g Pr(f); |Pr f| <= Pr |f|; monotonicity.
        let gf = pullback_function(&g, &phi, &m_x)?.mul(&f)?;
        let lhs_fn = pr_phi_function(&gf, &phi, &m_x)?;
        let rhs_fn = g.mul(&pr_phi_function(&f, &phi, &m_x)?)?;
        let push_law = lhs_fn.values() == rhs_fn.values();
        let pr_f = pr_phi_function(&f, &phi, &m_x)?;
        let pr_abs = pr_phi_function(&f.abs(), &phi, &m_x)?;
        let lipschitz = pr_f
            .values()
            .iter()
            .zip(pr_abs.values())
            .all(|(a, b)| &a.abs() <= b);
        let h = gen_function(&mut rng, &m_x);
        let f_min = f.zip(&h, |a, b| a.clone().min(b.clone()))?;
        let mono = pr_phi_function(&f_min, &phi, &m_x)?
            .values()
            .iter()
            .zip(pr_f.values())
            .all(|(a, b)| a <= b);
        module_laws.record(push_law && lipschitz && mono, 0.0, || {
            dump_json("pr-phi-module", serde_json::json!({
                "measure": m_x.to_json(), "map": phi.to_json(),
                "f": f.to_json(), "g": g.to_json(),
                "push_law": push_law, "lipschitz": lipschitz, "monotone": mono,
            }))
        });
    }
    Ok(vec![mass_law, disint_law, two_paths, left_inv, module_laws])
}

// ---------------------------------------------------------------------------
// Lifting suite.

pub fn lifting_suite(seed: u64, cases: usize) -> Result<Vec<LawResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boolean = LawResult::new("lifting.boolean-homomorphism");
    let mut ae = LawResult::new("lifting.ae-compatibility");
    let mut transport = LawResult::new("lifting.module-transport");

    for _ in 0..cases {
        let space = gen_space(&mut rng, 8);
        let m = gen_measure(&mut rng, &space);
        let l = make_lifting(&m, None)?;
        let n = space.len();
        let all: BTreeSet<usize> = space.indices().collect();

        // Intersection, union, complement, bottom, top: exhaustive over all
        // subset pairs when that stays cheap, sampled pairs above 5 atoms.
        let mut ok = lift_set(&l, &BTreeSet::new()).is_empty() && lift_set(&l, &all) == all;
        let pairs: Vec<(u32, u32)> = if n <= 5 {
            (0..(1u32 << n))
                .flat_map(|a| (0..(1u32 << n)).map(move |b| (a, b)))
                .collect()
        } else {
            (0..64)
                .map(|_| (rng.gen_range(0..(1u32 << n)), rng.gen_range(0..(1u32 << n))))
                .collect()
        };
        for (bits_a, bits_b) in pairs {
            let a: BTreeSet<usize> = (0..n).filter(|i| bits_a >> i & 1 == 1).collect();
            let b: BTreeSet<usize> = (0..n).filter(|i| bits_b >> i & 1 == 1).collect();
            let sa = lift_set(&l, &a);
            let sb = lift_set(&l, &b);
            let cap: BTreeSet<usize> = a.intersection(&b).copied().collect();
            let cup: BTreeSet<usize> = a.union(&b).copied().collect();
            let comp: BTreeSet<usize> = all.difference(&a).copied().collect();
            if lift_set(&l, &cap) != sa.intersection(&sb).copied().collect()
                || lift_set(&l, &cup) != sa.union(&sb).copied().collect()
                || lift_set(&l, &comp) != all.difference(&sa).copied().collect()
            {
                ok = false;
                break;
            }
        }
        boolean.record(ok, 0.0, || {
            dump_json("boolean-homomorphism", m.to_json())
        });

        // sigma(A) differs from A only on null atoms, and a.e.-equal sets
        // lift identically.
        let a: BTreeSet<usize> = space.indices().filter(|_| rng.gen_bool(0.5)).collect();
        let sa = lift_set(&l, &a);
        let sym_null = sa
            .symmetric_difference(&a)
            .all(|&x| m.mass(x).is_zero());
        let mut b = a.clone();
        for x in m.null_atoms() {
            if rng.gen_bool(0.5) && !b.remove(&x) {
                b.insert(x);
            }
        }
        let same = lift_set(&l, &b) == sa;
        ae.record(sym_null && same, 0.0, || {
            dump_json("ae-compatibility", serde_json::json!({
                "measure": m.to_json(),
                "set": a.iter().copied().collect::<Vec<_>>(),
            }))
        });

        // Transport of module structure through the lifting: additivity,
        // function scaling, norms, and projection back.
        let gens = rng.gen_range(1..=3);
        let fibers = (0..m.positive_atoms().len())
            .map(|_| gen_fiber(&mut rng, gens, true))
            .collect();
        let pres = ModulePresentation::new(m.clone(), gens, fibers)?;
        let lm = lift_module(&l, &pres)?;
        let v = gen_element(&mut rng, &pres);
        let w = gen_element(&mut rng, &pres);
        let f = gen_function(&mut rng, &m);
        let lv = lift_element(&lm, &v)?;
        let lw = lift_element(&lm, &w)?;
        let lsum = lift_element(&lm, &v.add(&w)?)?;
        let lscaled = lift_element(&lm, &v.scale_fn(&f)?)?;
        let f_hat = lift_function(&l, &f)?;
        let mut t_ok = true;
        for x in 0..space.len() {
            let a = lm.fiber_value(&lv, x);
            let b = lm.fiber_value(&lw, x);
            let s = lm.fiber_value(&lsum, x);
            let sc = lm.fiber_value(&lscaled, x);
            for i in 0..gens {
                if s[i] != &a[i] + &b[i] || sc[i] != f_hat.value(x) * &a[i] {
                    t_ok = false;
                }
            }
        }
        let norm_lifted = lm.norm(&lv)?;
        let norm_base = lift_function(&l, &pointwise_norm(&pres, &v)?)?;
        for x in 0..space.len() {
            if !close(norm_lifted.value(x), norm_base.value(x)) {
                t_ok = false;
            }
        }
        if project_pi_m(&lm, &lv)? != v {
            t_ok = false;
        }
        transport.record(t_ok, 0.0, || {
            dump_json("module-transport", serde_json::json!({
                "presentation": pres.to_json(), "element": v.to_json(),
            }))
        });
    }
    Ok(vec![boolean, ae, transport])
}

// ---------------------------------------------------------------------------
// Norms suite.

pub fn norms_suite(seed: u64, cases: usize, fault: Fault) -> Result<Vec<LawResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triangle = LawResult::new("norms.triangle");
    let mut homogeneity = LawResult::new("norms.homogeneity");
    let mut dual = LawResult::new("norms.dual-pairing");
    let mut rx = LawResult::new("norms.rx-isometry");

    for _ in 0..cases {
        let dim = rng.gen_range(1..=4);
        let n = gen_fiber(&mut rng, dim, false);
        let v = gen_vector(&mut rng, dim);
        let w = gen_vector(&mut rng, dim);

        let eval = |u: &[Scalar]| -> Result<Scalar> {
            let base = n.eval(u)?;
            Ok(match fault {
                Fault::None => base,
                Fault::TriangleViolation => &base * &base,
            })
        };
        let sum: Vec<Scalar> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
        let nv = eval(&v)?;
        let nw = eval(&w)?;
        let ns = eval(&sum)?;
        let slack = (&(&nv + &nw) - &ns).to_f64();
        triangle.record(
            slack >= -1e-9 * (nv.to_f64() + nw.to_f64()).max(1.0),
            (-slack).max(0.0),
            || dump_json("triangle", serde_json::json!({
                "norm": n.to_json(), "v": v.iter().map(Scalar::to_f64).collect::<Vec<_>>(),
                "w": w.iter().map(Scalar::to_f64).collect::<Vec<_>>(),
                "norm_v": nv.to_f64(), "norm_w": nw.to_f64(), "norm_sum": ns.to_f64(),
            })),
        );

        let c = Scalar::ratio(rng.gen_range(-5..=5), rng.gen_range(1..=3));
        let cv: Vec<Scalar> = v.iter().map(|x| x * &c).collect();
        let lhs = n.eval(&cv)?;
        let rhs = c.abs() * n.eval(&v)?;
        homogeneity.record(close(&lhs, &rhs), rel_gap(&lhs, &rhs), || {
            dump_json("homogeneity", serde_json::json!({
                "norm": n.to_json(), "c": c.to_f64(),
                "lhs": lhs.to_f64(), "rhs": rhs.to_f64(),
            }))
        });

        // Pairing bound against the dual norm, and the witness achieving it.
        let nv = n.eval(&v)?;
        if nv.is_positive() {
            let omega = n.norming_functional(&v)?;
            let pairing = sdot(&omega.omega, &v);
            let dual_of = n.dual_norm(&omega.omega)?;
            let witness_ok = pairing.approx_eq(&nv, 1e-9 * nv.to_f64().max(1.0))
                && dual_of.to_f64() <= 1.0 + 1e-9;
            let u = gen_vector(&mut rng, dim);
            let bound_ok =
                sdot(&omega.omega, &u).abs().to_f64() <= dual_of.to_f64() * n.eval(&u)?.to_f64() + 1e-9
                || n.eval(&u)?.is_zero();
            dual.record(witness_ok && bound_ok, rel_gap(&pairing, &nv), || {
                dump_json("dual-pairing", serde_json::json!({
                    "norm": n.to_json(), "v": v.iter().map(Scalar::to_f64).collect::<Vec<_>>(),
                    "pairing": pairing.to_f64(), "primal": nv.to_f64(), "dual": dual_of.to_f64(),
                }))
            });
        }
    }

    // Evaluation functionals of lifted dual elements act with operator norm
    // equal to their fiber dual norm, at every atom.
    for _ in 0..cases.min(100) {
        let pres = gen_presentation(&mut rng, 4, 4, false);
        let l = make_lifting(pres.measure(), None)?;
        let primal = lift_module(&l, &pres)?;
        let dual_pres = dual_module(&pres)?;
        let dual_lifted = lift_module(&l, &dual_pres)?;
        let omega = gen_element(&mut rng, &dual_pres);
        let omega_bar = lift_element(&dual_lifted, &omega)?;
        match crate::lifting::rx_isometry_check(&primal, &omega_bar, 1e-9) {
            Ok(report) => {
                let worst = report.iter().map(|r| r.defect).fold(0.0, f64::max);
                rx.record(worst < 1e-9, worst, || {
                    dump_json("rx-isometry", pres.to_json())
                });
            }
            Err(e) => rx.record(false, 1.0, || {
                dump_json("rx-isometry", serde_json::json!({
                    "presentation": pres.to_json(), "error": e.to_string(),
                }))
            }),
        }
    }
    Ok(vec![triangle, homogeneity, dual, rx])
}

// ---------------------------------------------------------------------------
// Modules suite.

pub fn modules_suite(seed: u64, cases: usize) -> Result<Vec<LawResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ptwise = LawResult::new("modules.pointwise-norm-laws");
    let mut locality = LawResult::new("modules.locality");
    let mut glueing = LawResult::new("modules.glueing");
    let mut cr = LawResult::new("modules.cr-roundtrip");

    for case in 0..cases {
        let pres = gen_presentation(&mut rng, 4, 4, false);
        let v = gen_element(&mut rng, &pres);
        let w = gen_element(&mut rng, &pres);
        let f = gen_function(&mut rng, pres.measure());

        // Nonnegativity, homogeneity against a function, triangle.
        let nv = pointwise_norm(&pres, &v)?;
        let nw = pointwise_norm(&pres, &w)?;
        let nsum = pointwise_norm(&pres, &v.add(&w)?)?;
        let nscaled = pointwise_norm(&pres, &v.scale_fn(&f)?)?;
        let nonneg = nv.values().iter().all(|x| !x.is_negative());
        let tri = nsum
            .values()
            .iter()
            .zip(nv.values().iter().zip(nw.values()))
            .all(|(s, (a, b))| s.to_f64() <= (a + b).to_f64() + 1e-12 * (a + b).to_f64().max(1.0));
        let homog = nscaled
            .values()
            .iter()
            .zip(nv.values().iter().zip(f.values()))
            .all(|(s, (a, c))| close(s, &(&c.abs() * a)));
        ptwise.record(nonneg && tri && homog, 0.0, || {
            dump_json("pointwise-norm", serde_json::json!({
                "presentation": pres.to_json(), "v": v.to_json(), "w": w.to_json(),
                "nonneg": nonneg, "triangle": tri, "homogeneity": homog,
            }))
        });

        // Indicator scaling masks the norm outside the set and preserves it
        // inside.
        let a_set: BTreeSet<usize> = pres
            .positive_atoms()
            .into_iter()
            .filter(|_| rng.gen_bool(0.5))
            .collect();
        let chi = FunctionClass::new(
            pres.measure().clone(),
            pres.positive_atoms()
                .iter()
                .map(|a| {
                    if a_set.contains(a) {
                        Scalar::one()
                    } else {
                        Scalar::zero()
                    }
                })
                .collect(),
        )?;
        let masked = pointwise_norm(&pres, &v.scale_fn(&chi)?)?;
        let local_ok = pres.positive_atoms().iter().enumerate().all(|(slot, a)| {
            if a_set.contains(a) {
                masked.values()[slot] == nv.values()[slot]
            } else {
                masked.values()[slot].is_zero()
            }
        });
        locality.record(local_ok, 0.0, || {
            dump_json("locality", serde_json::json!({
                "presentation": pres.to_json(), "v": v.to_json(),
                "set": a_set.iter().copied().collect::<Vec<_>>(),
            }))
        });

        // Glue restricted pieces of independent elements, read them back.
        let pos = pres.positive_atoms();
        let block_count = rng.gen_range(1..=pos.len().min(3));
        let mut partition: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); block_count];
        for &a in &pos {
            partition[rng.gen_range(0..block_count)].insert(a);
        }
        let elems: Vec<ModuleElement> =
            (0..block_count).map(|_| gen_element(&mut rng, &pres)).collect();
        let glued = glue_elements(&pres, &partition, &elems)?;
        let glue_ok = partition
            .iter()
            .zip(&elems)
            .all(|(block, e)| glued.restrict(block) == e.restrict(block));
        glueing.record(glue_ok, 0.0, || {
            dump_json("glueing", serde_json::json!({
                "presentation": pres.to_json(),
                "partition": partition
                    .iter()
                    .map(|b| b.iter().copied().collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            }))
        });

        // Completion and restriction invert each other.
        let report = cr_roundtrip_check(&pres, seed ^ case as u64, 4)?;
        cr.record(report.max_discrepancy.to_f64() == 0.0, report.max_discrepancy.to_f64(), || {
            dump_json("cr-roundtrip", pres.to_json())
        });
    }
    Ok(vec![ptwise, locality, glueing, cr])
}

// ---------------------------------------------------------------------------
// Embedding suite.

pub fn embedding_suite(seed: u64, cases: usize) -> Result<Vec<LawResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut certificate = LawResult::new("embedding.certificate");
    let mut poly_exact = LawResult::new("embedding.polyhedral-exact");
    let mut cantor = LawResult::new("embedding.cantor-retract");

    let params = EmbedParams {
        depth: 10,
        resolution: 64,
        tol: 1.0,
    };
    let vectors_per_case = (1000 / cases.max(1)).max(5);
    for _ in 0..cases {
        let dim = rng.gen_range(1..=4);
        let die = rng.gen_range(0..5);
        let n = match die {
            0 => FiberNorm::unweighted_lp(PExp::one(), dim).unwrap(),
            1 => FiberNorm::unweighted_lp(PExp::two(), dim).unwrap(),
            2 => FiberNorm::unweighted_lp(PExp::Inf, dim).unwrap(),
            3 => FiberNorm::lp(
                PExp::Finite(Scalar::from_int(3)),
                vec![Scalar::one(); dim],
            )
            .unwrap(),
            _ => gen_full_rank_polyhedral(&mut rng, dim),
        };
        let probes: Mat = linalg::identity(dim);
        let emb = embed_fiber(&n, &probes, &params)?;
        let eps = emb.epsilon;
        let mut worst: f64 = 0.0;
        let mut ok = true;
        for _ in 0..vectors_per_case {
            let v = gen_vector(&mut rng, dim);
            let norm = n.eval(&v)?.to_f64();
            let sup = emb.embed(&v)?.sup_norm().to_f64();
            if sup > norm * (1.0 + 1e-9) + 1e-12 {
                ok = false;
                worst = worst.max(sup - norm);
            }
            let floor = (1.0 - eps) * norm;
            if sup < floor - 1e-9 * norm.max(1.0) {
                ok = false;
                worst = worst.max(floor - sup);
            }
        }
        certificate.record(ok, worst, || {
            dump_json("certificate", serde_json::json!({
                "norm": n.to_json(), "epsilon": eps,
            }))
        });

        // Polytopal duals enumerate completely at this size: the embedding
        // is exactly isometric on rational input.
        let pdim = rng.gen_range(1..=3);
        let poly = gen_full_rank_polyhedral(&mut rng, pdim);
        let emb2 = embed_fiber(&poly, &linalg::identity(poly.dim()), &params)?;
        let mut exact = emb2.epsilon == 0.0;
        for _ in 0..vectors_per_case {
            let v = gen_vector(&mut rng, poly.dim());
            if emb2.embed(&v)?.sup_norm() != poly.eval(&v)? {
                exact = false;
            }
        }
        poly_exact.record(exact, emb2.epsilon, || {
            dump_json("polyhedral-exact", poly.to_json())
        });

        // Retraction laws on random truncated Cantor points.
        let depth = rng.gen_range(1..=6);
        let gen_pt = |rng: &mut ChaCha8Rng| {
            CantorPoint::new(
                (0..depth)
                    .map(|_| if rng.gen_bool(0.5) { 0u8 } else { 2u8 })
                    .collect(),
            )
            .unwrap()
        };
        let pts: Vec<CantorPoint> = (0..rng.gen_range(1..=6)).map(|_| gen_pt(&mut rng)).collect();
        let query = gen_pt(&mut rng);
        let r = retract(&query, &pts)?;
        let dr = cantor_metric(&query, r)?;
        let nearest = pts
            .iter()
            .map(|p| cantor_metric(&query, p).unwrap())
            .fold(None::<Scalar>, |acc, d| {
                Some(match acc {
                    None => d,
                    Some(m) => m.min(d),
                })
            })
            .unwrap();
        let again = retract(r, &pts)?;
        cantor.record(dr == nearest && again == r, 0.0, || {
            dump_json("cantor-retract", serde_json::json!({
                "query": query.digits().to_vec(),
                "points": pts.iter().map(|p| p.digits().to_vec()).collect::<Vec<_>>(),
            }))
        });
    }
    Ok(vec![certificate, poly_exact, cantor])
}

// ---------------------------------------------------------------------------
// Bundle suite.

pub fn gen_polytopal_presentation(
    rng: &mut ChaCha8Rng,
    max_atoms: usize,
    max_gens: usize,
) -> ModulePresentation {
    let space = gen_space(rng, max_atoms);
    let measure = gen_measure(rng, &space);
    let gens = rng.gen_range(1..=max_gens);
    let fibers = (0..measure.positive_atoms().len())
        .map(|_| gen_full_rank_polyhedral(rng, gens))
        .collect();
    ModulePresentation::new(measure, gens, fibers).expect("matching dims")
}

pub fn random_section(rng: &mut ChaCha8Rng, b: &crate::bundle::Bundle) -> Section {
    let values = (0..b.positive_atoms().len())
        .map(|slot| {
            let k = b.span_at(slot).len();
            let coords: Vec<Scalar> = (0..k)
                .map(|_| Scalar::ratio(rng.gen_range(-5..=5), rng.gen_range(1..=3)))
                .collect();
            b.combine(slot, &coords).unwrap()
        })
        .collect();
    b.section(values).expect("combined inside fibers")
}

pub fn bundle_suite(seed: u64, cases: usize) -> Result<Vec<LawResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut roundtrip = LawResult::new("bundle.representation-roundtrip");
    let mut graded = LawResult::new("bundle.graded-exact");
    let mut no_ac = LawResult::new("bundle.no-ac-monotone");
    let mut serre_swan = LawResult::new("bundle.serre-swan");
    let mut pullback = LawResult::new("bundle.pullback-sections");
    let mut pr_phi = LawResult::new("bundle.pr-phi-section");

    let params = EmbedParams {
        depth: 7,
        resolution: 32,
        tol: 1e-9,
    };
    for _ in 0..cases {
        let pres = gen_polytopal_presentation(&mut rng, 3, 3);
        let rep = represent_module(&pres, &params)?;
        let gm = gamma_module(&rep.bundle)?;
        let v = gen_element(&mut rng, &pres);
        let s = rep.represent_element(&v)?;
        let w = gm.section_to_element(&s)?;
        let nv = pointwise_norm(&pres, &v)?;
        let ns = section_norm(&rep.bundle, &s)?;
        let nw = pointwise_norm(&gm.presentation, &w)?;
        let rt_ok = rep.report.max_defect == 0.0
            && nv.values() == ns.values()
            && nv.values() == nw.values();
        roundtrip.record(rt_ok, rep.report.max_defect, || {
            dump_json("representation-roundtrip", serde_json::json!({
                "presentation": pres.to_json(), "element": v.to_json(),
            }))
        });

        // The coordinate path has no embedding step and must be exact for
        // every variant, not just polytopal ones.
        let pres_any = gen_presentation(&mut rng, 3, 3, false);
        let gb = graded_representation(&pres_any)?;
        let u = gen_element(&mut rng, &pres_any);
        let direct = pointwise_norm(&pres_any, &u)?;
        let via = graded_pointwise_norm(&gb, &pres_any, &u)?;
        let g_ok = direct
            .values()
            .iter()
            .zip(via.values())
            .all(|(a, b)| close(a, b));
        graded.record(g_ok, 0.0, || {
            dump_json("graded-exact", serde_json::json!({
                "presentation": pres_any.to_json(), "element": u.to_json(),
            }))
        });

        // Pairing-matrix route: defect shrinks as the functional budget
        // grows, and full vertex coverage nails it.
        let gens = pres.gens();
        let ks = [gens, gens + 3, gens + 8];
        let defects: Vec<f64> = ks
            .iter()
            .map(|&k| Ok(represent_module_no_ac(&pres, k)?.1.max_defect))
            .collect::<Result<Vec<_>>>()?;
        let max_vertices = pres
            .fibers()
            .iter()
            .map(|f| f.dual_ball_vertices().map_or(0, |v| v.len()))
            .max()
            .unwrap_or(0);
        let full = represent_module_no_ac(&pres, gens + max_vertices)?.1.max_defect;
        let mono = defects.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        no_ac.record(mono && full == 0.0, full, || {
            dump_json("no-ac-monotone", serde_json::json!({
                "presentation": pres.to_json(), "defects": defects, "full": full,
            }))
        });

        // Functor laws: full on generators, faithful on a differing column,
        // functorial under composition.
        let phi = gen_contractive_morphism(&mut rng, &pres);
        let psi = gen_contractive_morphism(&mut rng, &pres);
        let bm_phi = morphism_from_module_map(&phi, &rep, &rep, 1e-9)?;
        let bm_psi = morphism_from_module_map(&psi, &rep, &rep, 1e-9)?;
        let mut ss_ok = true;
        for j in 0..gens {
            let g = pres.generator(j);
            let through_bundle = gm.section_to_element(&apply_section_functor(
                &bm_phi,
                &rep.represent_element(&g)?,
            )?)?;
            let through_module =
                gm.section_to_element(&rep.represent_element(&phi.apply(&pres, &pres, &g)?)?)?;
            if through_bundle != through_module {
                ss_ok = false;
            }
        }
        let family = dense_section_family(&rep.bundle);
        if phi.mats() != psi.mats() {
            let images_differ = family.iter().any(|sec| {
                apply_section_functor(&bm_phi, sec).unwrap()
                    != apply_section_functor(&bm_psi, sec).unwrap()
            });
            if !images_differ {
                ss_ok = false;
            }
        }
        let composed = compose_morphisms(&bm_psi, &bm_phi, 1e-9)?;
        let sec = random_section(&mut rng, &rep.bundle);
        let two_step = apply_section_functor(&bm_psi, &apply_section_functor(&bm_phi, &sec)?)?;
        let one_step = apply_section_functor(&composed, &sec)?;
        if two_step != one_step {
            ss_ok = false;
        }
        serre_swan.record(ss_ok, 0.0, || {
            dump_json("serre-swan", serde_json::json!({
                "presentation": pres.to_json(),
                "phi": serde_json::json!(format!("{:?}", phi.mats())),
                "psi": serde_json::json!(format!("{:?}", psi.mats())),
            }))
        });

        // Base-change laws over a random map into the bundle's base.
        let xs = gen_space(&mut rng, 4);
        let m_x = gen_measure(&mut rng, &xs);
        let phi_pt = gen_point_map(&mut rng, &xs, pres.measure().space());
        let m_y = pushforward(&phi_pt, &m_x)?;
        // Rebase the represented bundle onto the pushforward so every
        // positive target atom carries a fiber.
        let onto_ok = m_y
            .positive_atoms()
            .iter()
            .all(|y| pres.measure().positive_atoms().contains(y));
        if onto_ok {
            let report = pullback_commute_check(&rep.bundle, &phi_pt, &m_x, seed, 3);
            match report {
                Ok(r) => pullback.record(
                    r.max_residual <= 1e-9 && r.max_norm_gap <= 1e-12,
                    r.max_residual.max(r.max_norm_gap),
                    || dump_json("pullback-sections", serde_json::json!({
                        "presentation": pres.to_json(), "map": phi_pt.to_json(),
                    })),
                ),
                Err(FiberError::NotAbsolutelyContinuous(_)) => {}
                Err(e) => return Err(e),
            }

            let sec_y = random_section(&mut rng, &rep.bundle);
            match pullback_section(&phi_pt, &m_x, &rep.bundle, &sec_y) {
                Ok(ps) => {
                    let back = pr_phi_section(&ps, &phi_pt, &m_x, &rep.bundle)?;
                    let pb = pullback_bundle(&phi_pt, &m_x, &rep.bundle)?;
                    let mut pr_ok = true;
                    for (slot, &y) in rep.bundle.positive_atoms().iter().enumerate() {
                        let hit = m_y.is_positive_atom(y);
                        if hit && back.values()[slot] != sec_y.values()[slot] {
                            pr_ok = false;
                        }
                        if !hit && !back.values()[slot].values.iter().all(Scalar::is_zero) {
                            pr_ok = false;
                        }
                    }
                    // Linearity of the averaging on sections.
                    let t1 = random_section(&mut rng, &pb);
                    let t2 = random_section(&mut rng, &pb);
                    let t_sum = pb.section(
                        t1.values()
                            .iter()
                            .zip(t2.values())
                            .map(|(a, b)| crate::embedding::AmbientVector {
                                depth: a.depth,
                                values: a
                                    .values
                                    .iter()
                                    .zip(&b.values)
                                    .map(|(x, y)| x + y)
                                    .collect(),
                            })
                            .collect(),
                    )?;
                    let pr_sum = pr_phi_section(&t_sum, &phi_pt, &m_x, &rep.bundle)?;
                    let pr1 = pr_phi_section(&t1, &phi_pt, &m_x, &rep.bundle)?;
                    let pr2 = pr_phi_section(&t2, &phi_pt, &m_x, &rep.bundle)?;
                    for slot in 0..rep.bundle.positive_atoms().len() {
                        let added: Vec<Scalar> = pr1.values()[slot]
                            .values
                            .iter()
                            .zip(&pr2.values()[slot].values)
                            .map(|(x, y)| x + y)
                            .collect();
                        if pr_sum.values()[slot].values != added {
                            pr_ok = false;
                        }
                    }
                    pr_phi.record(pr_ok, 0.0, || {
                        dump_json("pr-phi-section", serde_json::json!({
                            "presentation": pres.to_json(), "map": phi_pt.to_json(),
                        }))
                    });
                }
                Err(FiberError::NotAbsolutelyContinuous(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(vec![roundtrip, graded, no_ac, serre_swan, pullback, pr_phi])
}

// ---------------------------------------------------------------------------

pub fn run_suite(suite: &str, seed: u64, cases: usize, fault: Fault) -> Result<SuiteSummary> {
    if cases == 0 {
        return Err(FiberError::InvalidInput("cases must be at least 1".into()));
    }
    let mut laws = Vec::new();
    let mut known = false;
    if suite == "all" || suite == "measure" {
        laws.extend(measure_suite(seed, cases)?);
        known = true;
    }
    if suite == "all" || suite == "lifting" {
        laws.extend(lifting_suite(seed, cases)?);
        known = true;
    }
    if suite == "all" || suite == "norms" {
        laws.extend(norms_suite(seed, cases, fault)?);
        known = true;
    }
    if suite == "all" || suite == "modules" {
        laws.extend(modules_suite(seed, cases)?);
        known = true;
    }
    if suite == "all" || suite == "embedding" {
        laws.extend(embedding_suite(seed, cases.min(40))?);
        known = true;
    }
    if suite == "all" || suite == "bundle" {
        laws.extend(bundle_suite(seed, cases.min(60))?);
        known = true;
    }
    if !known {
        return Err(FiberError::InvalidInput(format!("unknown suite '{suite}'")));
    }
    Ok(SuiteSummary {
        suite: suite.to_string(),
        seed,
        laws,
    })
}

//! Exit gate: ten pinned checks, one verdict line each, nonzero exit if any
//! fail. Case counts, tolerances, and runtime budgets are deliberately fixed
//! here; loosening them is a library regression, not a test fix.

use fiberlib::bundle::{
    apply_section_functor, compose_morphisms, dense_section_family, gamma_module,
    graded_pointwise_norm, graded_representation, morphism_from_module_map, represent_module,
    represent_module_no_ac, section_norm,
};
use fiberlib::checks::{
    embedding_suite, gen_contractive_morphism, gen_element, gen_measure,
    gen_polytopal_presentation, gen_presentation, gen_space, lifting_suite, measure_suite,
    modules_suite, norms_suite, random_section, Fault, LawResult,
};
use fiberlib::embedding::EmbedParams;
use fiberlib::error::FiberError;
use fiberlib::measure::{pr_phi_function, AtomSpace, FunctionClass, Measure, PointMap};
use fiberlib::modules::{cr_roundtrip_check, pointwise_norm, ModulePresentation};
use fiberlib::norms::{FiberNorm, PExp};
use fiberlib::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

type Result<T> = std::result::Result<T, FiberError>;

const SEED: u64 = 42;

type Verdict = (bool, String);

fn law_note(l: &LawResult) -> String {
    let mut note = format!(
        "{} failed {} of {} cases (max error {:.3e})",
        l.law, l.failures, l.cases, l.max_error
    );
    if let Some(dump) = &l.first_failure {
        note.push_str(&format!("; first failure {dump}"));
    }
    note
}

fn all_laws(laws: &[LawResult], elapsed: Duration, budget: Option<Duration>) -> Verdict {
    let mut notes: Vec<String> = laws.iter().filter(|l| !l.pass()).map(law_note).collect();
    if let Some(b) = budget {
        if elapsed > b {
            notes.push(format!("runtime {elapsed:?} exceeds budget {b:?}"));
        }
    }
    (notes.is_empty(), notes.join("; "))
}

fn gate_laws(laws: &[LawResult], names: &[&str]) -> Verdict {
    let mut notes = Vec::new();
    for name in names {
        match laws.iter().find(|l| l.law == *name) {
            Some(l) if l.pass() => {}
            Some(l) => notes.push(law_note(l)),
            None => notes.push(format!("law {name} did not run")),
        }
    }
    (notes.is_empty(), notes.join("; "))
}

/// Exact for rationals, relative gap otherwise.
fn agree(a: &Scalar, b: &Scalar, tol: f64) -> bool {
    if a.is_rational() && b.is_rational() && a == b {
        return true;
    }
    let scale = a.to_f64().abs().max(b.to_f64().abs()).max(1.0);
    (a.to_f64() - b.to_f64()).abs() <= tol * scale
}

// 1. Lifting laws hold exactly on 500 seeded spaces with null atoms (up to 8
//    atoms); the Boolean-homomorphism laws are exhaustive over subset pairs
//    up to 5 atoms. Budget 5 s.
fn criterion_lifting() -> Result<Verdict> {
    let t = Instant::now();
    let laws = lifting_suite(SEED, 500)?;
    Ok(all_laws(&laws, t.elapsed(), Some(Duration::from_secs(5))))
}

// 2. Pointwise-norm laws, locality, and glueing on 500 presentations over at
//    most 4 atoms and 4 generators, every norm variant, zero violations at
//    1e-12. Budget 10 s.
fn criterion_modules() -> Result<Verdict> {
    let t = Instant::now();
    let laws = modules_suite(SEED, 500)?;
    Ok(all_laws(&laws, t.elapsed(), Some(Duration::from_secs(10))))
}

// 3. Completion and restriction invert each other exactly on 100
//    presentations.
fn criterion_cr() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for i in 0..100u64 {
        let pres = gen_presentation(&mut rng, 4, 4, false);
        let report = cr_roundtrip_check(&pres, SEED.wrapping_add(i), 8)?;
        if !report.all_bounded || !report.max_discrepancy.is_zero() {
            return Ok((
                false,
                format!(
                    "instance {i}: discrepancy {} over {} samples",
                    report.max_discrepancy, report.samples
                ),
            ));
        }
    }
    Ok((true, String::new()))
}

// 4. Embedding defect stays within the emitted certificate on every one of
//    1000 sampled vectors (40 fibers x 25 vectors, dims <= 4, depth 10,
//    resolution 64), and a polyhedral fiber whose vertices all fit the net
//    embeds exactly.
fn criterion_embedding() -> Result<Verdict> {
    let t = Instant::now();
    let laws = embedding_suite(SEED, 40)?;
    Ok(all_laws(&laws, t.elapsed(), None))
}

// 5. Representation round trip: section norms through the represented bundle
//    match pointwise norms within 1e-6 on polytopal fibers and 1e-3 on
//    sampled round fibers, 100 presentations total; the coordinate path is
//    exact; the pairing-matrix path is monotone in its functional budget and
//    exact at full vertex coverage. Budget 60 s.
fn criterion_representation() -> Result<Verdict> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut notes = Vec::new();

    let poly_params = EmbedParams {
        depth: 7,
        resolution: 32,
        tol: 1e-6,
    };
    for i in 0..50 {
        let pres = gen_polytopal_presentation(&mut rng, 3, 3);
        let rep = represent_module(&pres, &poly_params)?;
        if rep.report.max_defect > 1e-6 {
            notes.push(format!(
                "polytopal {i}: certified defect {}",
                rep.report.max_defect
            ));
            continue;
        }
        let gm = gamma_module(&rep.bundle)?;
        for _ in 0..3 {
            let v = gen_element(&mut rng, &pres);
            let s = rep.represent_element(&v)?;
            let nv = pointwise_norm(&pres, &v)?;
            let ns = section_norm(&rep.bundle, &s)?;
            let w = gm.section_to_element(&s)?;
            let nw = pointwise_norm(&gm.presentation, &w)?;
            let fwd = nv
                .values()
                .iter()
                .zip(ns.values())
                .all(|(a, b)| agree(a, b, 1e-6));
            let back = nv
                .values()
                .iter()
                .zip(nw.values())
                .all(|(a, b)| agree(a, b, 1e-6));
            if !fwd || !back {
                notes.push(format!("polytopal {i}: norm drift past 1e-6"));
            }
        }

        let u = gen_element(&mut rng, &pres);
        let gb = graded_representation(&pres)?;
        let direct = pointwise_norm(&pres, &u)?;
        let via = graded_pointwise_norm(&gb, &pres, &u)?;
        if direct
            .values()
            .iter()
            .zip(via.values())
            .any(|(a, b)| !agree(a, b, 1e-12))
        {
            notes.push(format!("polytopal {i}: coordinate path drifted"));
        }

        let gens = pres.gens();
        let defects = [gens, gens + 3, gens + 8]
            .iter()
            .map(|&k| Ok(represent_module_no_ac(&pres, k)?.1.max_defect))
            .collect::<Result<Vec<_>>>()?;
        if defects.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            notes.push(format!("polytopal {i}: pairing defects not monotone {defects:?}"));
        }
        let max_vertices = pres
            .fibers()
            .iter()
            .map(|f| f.dual_ball_vertices().map_or(0, |v| v.len()))
            .max()
            .unwrap_or(0);
        let full = represent_module_no_ac(&pres, gens + max_vertices)?.1.max_defect;
        if full != 0.0 {
            notes.push(format!("polytopal {i}: defect {full} at full vertex coverage"));
        }
    }

    let round_params = EmbedParams {
        depth: 10,
        resolution: 256,
        tol: 1e-3,
    };
    for i in 0..50 {
        let space = gen_space(&mut rng, 3);
        let m = gen_measure(&mut rng, &space);
        let gens = rng.gen_range(1..=2);
        let fibers = (0..m.positive_atoms().len())
            .map(|_| {
                let weights = (0..gens)
                    .map(|_| Scalar::ratio(rng.gen_range(1..=3), rng.gen_range(1..=2)))
                    .collect();
                FiberNorm::lp(PExp::Finite(Scalar::from_int(2)), weights).expect("positive weights")
            })
            .collect();
        let pres = ModulePresentation::new(m, gens, fibers)?;
        let rep = represent_module(&pres, &round_params)?;
        if rep.report.max_defect > 1e-3 {
            notes.push(format!("round {i}: certified defect {}", rep.report.max_defect));
            continue;
        }
        for _ in 0..3 {
            let v = gen_element(&mut rng, &pres);
            let s = rep.represent_element(&v)?;
            let nv = pointwise_norm(&pres, &v)?;
            let ns = section_norm(&rep.bundle, &s)?;
            if nv
                .values()
                .iter()
                .zip(ns.values())
                .any(|(a, b)| !agree(a, b, 1e-3))
            {
                notes.push(format!("round {i}: norm drift past 1e-3"));
            }
        }
        let u = gen_element(&mut rng, &pres);
        let gb = graded_representation(&pres)?;
        let direct = pointwise_norm(&pres, &u)?;
        let via = graded_pointwise_norm(&gb, &pres, &u)?;
        if direct
            .values()
            .iter()
            .zip(via.values())
            .any(|(a, b)| !agree(a, b, 1e-12))
        {
            notes.push(format!("round {i}: coordinate path drifted"));
        }
    }

    let elapsed = t.elapsed();
    if elapsed > Duration::from_secs(60) {
        notes.push(format!("runtime {elapsed:?} exceeds budget 60s"));
    }
    notes.truncate(5);
    Ok((notes.is_empty(), notes.join("; ")))
}

// 6. The section functor is full on generators (exactly), faithful (distinct
//    morphisms separate on some dense-family section over a positive atom),
//    and functorial under composition - 200 morphism pairs.
fn criterion_serre_swan() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let params = EmbedParams {
        depth: 7,
        resolution: 32,
        tol: 1e-9,
    };
    for i in 0..200 {
        let pres = gen_polytopal_presentation(&mut rng, 3, 3);
        let rep = represent_module(&pres, &params)?;
        let gm = gamma_module(&rep.bundle)?;
        let phi = gen_contractive_morphism(&mut rng, &pres);
        let psi = gen_contractive_morphism(&mut rng, &pres);
        let bm_phi = morphism_from_module_map(&phi, &rep, &rep, 1e-9)?;
        let bm_psi = morphism_from_module_map(&psi, &rep, &rep, 1e-9)?;

        for j in 0..pres.gens() {
            let g = pres.generator(j);
            let through_bundle = gm.section_to_element(&apply_section_functor(
                &bm_phi,
                &rep.represent_element(&g)?,
            )?)?;
            let through_module =
                gm.section_to_element(&rep.represent_element(&phi.apply(&pres, &pres, &g)?)?)?;
            if through_bundle != through_module {
                return Ok((false, format!("pair {i}: not full on generator {j}")));
            }
        }

        if phi.mats() != psi.mats() {
            let family = dense_section_family(&rep.bundle);
            let separated = family.iter().any(|sec| {
                apply_section_functor(&bm_phi, sec).unwrap()
                    != apply_section_functor(&bm_psi, sec).unwrap()
            });
            if !separated {
                return Ok((false, format!("pair {i}: distinct morphisms not separated")));
            }
        }

        let composed = compose_morphisms(&bm_psi, &bm_phi, 1e-9)?;
        let sec = random_section(&mut rng, &rep.bundle);
        let two_step = apply_section_functor(&bm_psi, &apply_section_functor(&bm_phi, &sec)?)?;
        if two_step != apply_section_functor(&composed, &sec)? {
            return Ok((false, format!("pair {i}: composition not preserved")));
        }
    }
    Ok((true, String::new()))
}

// 7. Evaluation functionals of lifted dual elements act isometrically, all
//    norm variants, up to 4 generators, 100 instances, defect below 1e-9.
fn criterion_rx() -> Result<Verdict> {
    let laws = norms_suite(SEED, 100, Fault::None)?;
    let mut verdict = gate_laws(&laws, &["norms.rx-isometry"]);
    if let Some(l) = laws.iter().find(|l| l.law == "norms.rx-isometry") {
        if l.cases < 100 {
            verdict = (false, format!("only {} instances ran", l.cases));
        }
    }
    Ok(verdict)
}

// 8. Conditional measures reconstruct the source measure exactly on 200 maps,
//    and the density route agrees with the disintegration route.
fn criterion_disintegration(laws: &Result<Vec<LawResult>>) -> Verdict {
    match laws {
        Ok(laws) => gate_laws(
            laws,
            &[
                "measure.pushforward-mass",
                "measure.disintegration-identity",
                "measure.pr-phi-two-paths",
            ],
        ),
        Err(e) => (false, format!("suite error: {e}")),
    }
}

// 9. Fiberwise averaging is function-linear, contractive pointwise, and a
//    left inverse of precomposition - 200 instances.
fn criterion_pr_phi_laws(laws: &Result<Vec<LawResult>>) -> Verdict {
    match laws {
        Ok(laws) => gate_laws(
            laws,
            &[
                "measure.pr-phi-left-inverse",
                "measure.pr-phi-module-laws",
            ],
        ),
        Err(e) => (false, format!("suite error: {e}")),
    }
}

// 10. Collapsing the dyadic staircase to a point averages the n-th simple
//     function to exactly n, so the averaging operator is unbounded on
//     unintegrable inputs.
fn criterion_divergence() -> Result<Verdict> {
    for n in 1..=10u32 {
        let mut names: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
        names.push("rest".to_string());
        let space = AtomSpace::new(names)?;
        let mut mass: Vec<Scalar> = (1..=n).map(|i| Scalar::ratio(1, 1i64 << i)).collect();
        mass.push(Scalar::ratio(1, 1i64 << n));
        let m = Measure::new(space.clone(), mass)?;
        let target = AtomSpace::new(["0"])?;
        let phi = PointMap::new(space, target, vec![0; n as usize + 1])?;
        let mut values: Vec<Scalar> = (1..=n).map(|i| Scalar::from_int(1i64 << i)).collect();
        values.push(Scalar::zero());
        let f = FunctionClass::new(m.clone(), values)?;
        let avg = pr_phi_function(&f, &phi, &m)?;
        if avg.values()[0] != Scalar::from_int(n as i64) {
            return Ok((
                false,
                format!("truncation {n} averaged to {}", avg.values()[0]),
            ));
        }
    }
    Ok((true, String::new()))
}

fn main() {
    let mut failures = 0usize;
    let mut verdict = |num: usize, name: &str, outcome: Result<Verdict>| match outcome {
        Ok((true, _)) => println!("acceptance {num:02} ({name}): PASS"),
        Ok((false, detail)) => {
            println!("acceptance {num:02} ({name}): FAIL");
            if !detail.is_empty() {
                println!("    {detail}");
            }
            failures += 1;
        }
        Err(e) => {
            println!("acceptance {num:02} ({name}): FAIL");
            println!("    error: {e}");
            failures += 1;
        }
    };

    verdict(1, "lifting laws", criterion_lifting());
    verdict(2, "module axioms", criterion_modules());
    verdict(3, "completion-restriction inverse", criterion_cr());
    verdict(4, "embedding defect certificates", criterion_embedding());
    verdict(5, "representation round trip", criterion_representation());
    verdict(6, "section functor laws", criterion_serre_swan());
    verdict(7, "evaluation isometry", criterion_rx());
    let measure_laws = measure_suite(SEED, 200);
    verdict(8, "disintegration and averaging paths", Ok(criterion_disintegration(&measure_laws)));
    verdict(9, "averaging module laws", Ok(criterion_pr_phi_laws(&measure_laws)));
    verdict(10, "unbounded averaging value", criterion_divergence());

    if failures > 0 {
        println!("acceptance: {failures} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: 10/10 criteria passed");
}

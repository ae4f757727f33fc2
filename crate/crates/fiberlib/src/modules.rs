//! Finitely-generated normed modules over a finite measure space, presented
//! concretely: N generators and one seminorm fiber per positive atom.
//!
//! Every abstract object downstream (duals, chains, limits, localizations,
//! pullbacks, fiber averages) is an operation on presentations, so each law
//! is checkable per atom.

use crate::error::{FiberError, Result};
use crate::linalg::{self, Mat};
use crate::measure::{
    pr_phi_function, pullback_function, pushforward, FunctionClass, Measure, PointMap,
};
use crate::norms::FiberNorm;
use crate::scalar::Scalar;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct ModulePresentation {
    measure: Arc<Measure>,
    gens: usize,
    /// Parallel to `measure.positive_atoms()`.
    fibers: Vec<FiberNorm>,
}

impl ModulePresentation {
    pub fn new(measure: Arc<Measure>, gens: usize, fibers: Vec<FiberNorm>) -> Result<Self> {
        if gens == 0 {
            return Err(FiberError::InvalidInput("zero generators".into()));
        }
        let pos = measure.positive_atoms();
        if fibers.len() != pos.len() {
            return Err(FiberError::DimensionMismatch {
                expected: pos.len(),
                got: fibers.len(),
            });
        }
        if fibers.iter().any(|f| f.dim() != gens) {
            return Err(FiberError::InvalidInput("fiber dim differs from gens".into()));
        }
        Ok(ModulePresentation {
            measure,
            gens,
            fibers,
        })
    }

    /// One fiber norm reused at every positive atom.
    pub fn uniform(measure: Arc<Measure>, fiber: FiberNorm) -> Result<Self> {
        let n = measure.positive_atoms().len();
        let gens = fiber.dim();
        Self::new(measure, gens, vec![fiber; n])
    }

    pub fn measure(&self) -> &Arc<Measure> {
        &self.measure
    }

    pub fn gens(&self) -> usize {
        self.gens
    }

    pub fn positive_atoms(&self) -> Vec<usize> {
        self.measure.positive_atoms()
    }

    pub fn fibers(&self) -> &[FiberNorm] {
        &self.fibers
    }

    pub fn slot_of(&self, atom: usize) -> Option<usize> {
        self.positive_atoms().iter().position(|&p| p == atom)
    }

    pub fn fiber_at(&self, atom: usize) -> Option<&FiberNorm> {
        self.slot_of(atom).map(|s| &self.fibers[s])
    }

    pub fn zero_element(&self) -> ModuleElement {
        let coeffs = (0..self.gens)
            .map(|_| FunctionClass::zero(self.measure.clone()))
            .collect();
        ModuleElement { coeffs }
    }

    /// j-th coordinate generator: coefficient e_j at every atom.
    pub fn generator(&self, j: usize) -> ModuleElement {
        let coeffs = (0..self.gens)
            .map(|i| {
                let c = if i == j { Scalar::one() } else { Scalar::zero() };
                FunctionClass::constant(self.measure.clone(), c)
            })
            .collect();
        ModuleElement { coeffs }
    }

    /// Element from one coefficient vector per positive atom, in order.
    pub fn element_from_rows(&self, rows: &[Vec<Scalar>]) -> Result<ModuleElement> {
        let pos = self.positive_atoms();
        if rows.len() != pos.len() || rows.iter().any(|r| r.len() != self.gens) {
            return Err(FiberError::DimensionMismatch {
                expected: pos.len() * self.gens,
                got: rows.iter().map(Vec::len).sum(),
            });
        }
        let coeffs = (0..self.gens)
            .map(|i| {
                FunctionClass::new(
                    self.measure.clone(),
                    rows.iter().map(|r| r[i].clone()).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModuleElement { coeffs })
    }

    fn check_element(&self, v: &ModuleElement) -> Result<()> {
        if v.coeffs.len() != self.gens {
            return Err(FiberError::DimensionMismatch {
                expected: self.gens,
                got: v.coeffs.len(),
            });
        }
        if v.coeffs.iter().any(|c| c.measure() != &self.measure) {
            return Err(FiberError::SpaceMismatch(
                "element over a different measure".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut fibers = serde_json::Map::new();
        for (slot, atom) in self.positive_atoms().into_iter().enumerate() {
            fibers.insert(
                self.measure.space().name(atom).to_string(),
                self.fibers[slot].to_json(),
            );
        }
        serde_json::json!({
            "measure": self.measure.to_json(),
            "gens": self.gens,
            "fibers": fibers,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let measure = Measure::from_json(
            v.get("measure")
                .ok_or_else(|| FiberError::Parse("missing measure".into()))?,
        )?;
        let gens = v
            .get("gens")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| FiberError::Parse("missing gens".into()))? as usize;
        let fiber_map = v
            .get("fibers")
            .and_then(serde_json::Value::as_object)
            .ok_or_else(|| FiberError::Parse("missing fibers".into()))?;
        let mut fibers = Vec::new();
        for atom in measure.positive_atoms() {
            let name = measure.space().name(atom);
            let fj = fiber_map
                .get(name)
                .ok_or_else(|| FiberError::Parse(format!("no fiber for atom '{name}'")))?;
            fibers.push(FiberNorm::from_json(fj)?);
        }
        ModulePresentation::new(measure, gens, fibers)
    }
}

/// Element of a presented module: one coefficient class per generator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleElement {
    coeffs: Vec<FunctionClass>,
}

impl ModuleElement {
    pub fn new(coeffs: Vec<FunctionClass>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(FiberError::InvalidInput("no coefficients".into()));
        }
        if coeffs.iter().any(|c| c.measure() != coeffs[0].measure()) {
            return Err(FiberError::SpaceMismatch(
                "coefficients over different measures".into(),
            ));
        }
        Ok(ModuleElement { coeffs })
    }

    pub fn coeffs(&self) -> &[FunctionClass] {
        &self.coeffs
    }

    /// Coefficient vector at the positive-atom slot `s`.
    pub fn vector_at_slot(&self, s: usize) -> Vec<Scalar> {
        self.coeffs.iter().map(|c| c.values()[s].clone()).collect()
    }

    pub fn add(&self, other: &ModuleElement) -> Result<ModuleElement> {
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.add(b))
            .collect::<Result<Vec<_>>>()?;
        ModuleElement::new(coeffs)
    }

    pub fn sub(&self, other: &ModuleElement) -> Result<ModuleElement> {
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        ModuleElement::new(coeffs)
    }

    /// Module action of a function: multiply every coefficient pointwise.
    pub fn scale_fn(&self, f: &FunctionClass) -> Result<ModuleElement> {
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| c.mul(f))
            .collect::<Result<Vec<_>>>()?;
        ModuleElement::new(coeffs)
    }

    pub fn scale(&self, c: &Scalar) -> ModuleElement {
        ModuleElement {
            coeffs: self.coeffs.iter().map(|f| f.scale(c)).collect(),
        }
    }

    /// Coefficients multiplied by the indicator of `a`.
    pub fn restrict(&self, a: &BTreeSet<usize>) -> ModuleElement {
        let m = self.coeffs[0].measure().clone();
        let pos = m.positive_atoms();
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                let values = pos
                    .iter()
                    .zip(c.values())
                    .map(|(atom, v)| {
                        if a.contains(atom) {
                            v.clone()
                        } else {
                            Scalar::zero()
                        }
                    })
                    .collect();
                FunctionClass::new(m.clone(), values).expect("same length")
            })
            .collect();
        ModuleElement { coeffs }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "coeffs": self.coeffs.iter().map(FunctionClass::to_json).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &serde_json::Value, m: &Arc<Measure>) -> Result<Self> {
        let arr = v
            .get("coeffs")
            .and_then(serde_json::Value::as_array)
            .ok_or_else(|| FiberError::Parse("missing coeffs".into()))?;
        let coeffs = arr
            .iter()
            .map(|c| FunctionClass::from_json(c, m))
            .collect::<Result<Vec<_>>>()?;
        ModuleElement::new(coeffs)
    }
}

/// |v|(x) = fiber(x) applied to the coefficient vector at x.
pub fn pointwise_norm(m: &ModulePresentation, v: &ModuleElement) -> Result<FunctionClass> {
    m.check_element(v)?;
    let values = (0..m.fibers.len())
        .map(|s| m.fibers[s].eval(&v.vector_at_slot(s)))
        .collect::<Result<Vec<_>>>()?;
    FunctionClass::new(m.measure.clone(), values)
}

/// L0 module distance: truncated integral of the pointwise norm gap.
pub fn module_distance(m: &ModulePresentation, v: &ModuleElement, w: &ModuleElement) -> Result<Scalar> {
    let diff = v.sub(w)?;
    let n = pointwise_norm(m, &diff)?;
    crate::measure::l0_distance(&n, &FunctionClass::zero(m.measure.clone()))
}

/// Blockwise splice of elements along a partition of the positive atoms.
pub fn glue_elements(
    m: &ModulePresentation,
    partition: &[BTreeSet<usize>],
    elems: &[ModuleElement],
) -> Result<ModuleElement> {
    if partition.len() != elems.len() {
        return Err(FiberError::BadPartition(format!(
            "{} blocks but {} elements",
            partition.len(),
            elems.len()
        )));
    }
    for e in elems {
        m.check_element(e)?;
    }
    let coeffs = (0..m.gens)
        .map(|i| {
            let parts: Vec<FunctionClass> = elems.iter().map(|e| e.coeffs[i].clone()).collect();
            crate::measure::glue_functions(&m.measure, partition, &parts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModuleElement { coeffs })
}

/// Outcome of the completion/restriction round trip.
#[derive(Clone, Debug)]
pub struct CrReport {
    pub all_bounded: bool,
    pub max_discrepancy: Scalar,
    pub samples: usize,
}

/// At finitely many atoms every element is bounded and the module is
/// complete, so restriction and completion are mutually inverse presentation
/// transforms. Verifies both composites elementwise on seeded samples:
/// boundedness of every element, and exact agreement of the module metric
/// before and after the round trip.
pub fn cr_roundtrip_check(m: &ModulePresentation, seed: u64, cases: usize) -> Result<CrReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Both composites are the identity on presentations.
    let completed = m.clone();
    let restricted = m.clone();
    let mut max_disc = Scalar::zero();
    for _ in 0..cases {
        let v = sample_element(m, &mut rng);
        let w = sample_element(m, &mut rng);
        let bounded = pointwise_norm(m, &v)?.ess_sup();
        if bounded.to_f64().is_infinite() {
            return Ok(CrReport {
                all_bounded: false,
                max_discrepancy: max_disc,
                samples: cases,
            });
        }
        let before = module_distance(m, &v, &w)?;
        let after_c = module_distance(&completed, &v, &w)?;
        let after_r = module_distance(&restricted, &v, &w)?;
        for gap in [&before - &after_c, &before - &after_r] {
            let g = gap.abs();
            if g > max_disc {
                max_disc = g;
            }
        }
    }
    Ok(CrReport {
        all_bounded: true,
        max_discrepancy: max_disc,
        samples: cases,
    })
}

pub(crate) fn sample_element(m: &ModulePresentation, rng: &mut ChaCha8Rng) -> ModuleElement {
    let pos = m.positive_atoms();
    let rows: Vec<Vec<Scalar>> = pos
        .iter()
        .map(|_| {
            (0..m.gens)
                .map(|_| Scalar::ratio(rng.gen_range(-8..=8), rng.gen_range(1..=4)))
                .collect()
        })
        .collect();
    m.element_from_rows(&rows).expect("shapes match")
}

/// Presentation whose fiber at each atom is the dual seminorm; kernel
/// directions of the primal stay kernel directions of the dual, so ranks
/// match atomwise.
pub fn dual_module(m: &ModulePresentation) -> Result<ModulePresentation> {
    let fibers = m
        .fibers
        .iter()
        .map(FiberNorm::dual_fiber)
        .collect::<Result<Vec<_>>>()?;
    ModulePresentation::new(m.measure.clone(), m.gens, fibers)
}

/// Pairing of a dual element against a primal element, atom by atom. The
/// dual coefficients act through the quotient: components along the primal
/// kernel are projected away before the inner product.
pub fn dual_pairing(
    m: &ModulePresentation,
    omega: &ModuleElement,
    v: &ModuleElement,
) -> Result<FunctionClass> {
    m.check_element(v)?;
    m.check_element(omega)?;
    let values = (0..m.fibers.len())
        .map(|s| {
            let p = m.fibers[s].quotient_projector();
            let vq = linalg::mat_vec(&p, &v.vector_at_slot(s));
            Ok(crate::scalar::sdot(&omega.vector_at_slot(s), &vq))
        })
        .collect::<Result<Vec<_>>>()?;
    FunctionClass::new(m.measure.clone(), values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DimensionalDecomposition {
    /// blocks[n] = atoms whose fiber has rank n, for n in 0..=gens.
    pub blocks: Vec<BTreeSet<usize>>,
}

pub fn dimensional_decomposition(m: &ModulePresentation) -> DimensionalDecomposition {
    let mut blocks = vec![BTreeSet::new(); m.gens + 1];
    for (slot, atom) in m.positive_atoms().into_iter().enumerate() {
        blocks[m.fibers[slot].rank()].insert(atom);
    }
    DimensionalDecomposition { blocks }
}

/// Greedy lowest-index generator subset whose images stay independent in the
/// fiber quotient.
fn greedy_selection(fiber: &FiberNorm) -> Vec<usize> {
    let p = fiber.quotient_projector();
    let n = fiber.dim();
    let mut sel: Vec<usize> = Vec::new();
    let mut rows: Mat = Vec::new();
    for j in 0..n {
        let mut e = vec![Scalar::zero(); n];
        e[j] = Scalar::one();
        let img = linalg::mat_vec(&p, &e);
        if img.iter().all(Scalar::is_zero) {
            continue;
        }
        rows.push(img);
        if linalg::rank(&rows) == sel.len() + 1 {
            sel.push(j);
        } else {
            rows.pop();
        }
    }
    sel
}

/// Per-atom generator selections glued into module elements: independent on
/// `a` and generating there. Requires constant rank on `a`.
pub fn local_basis(m: &ModulePresentation, a: &BTreeSet<usize>) -> Result<Vec<ModuleElement>> {
    let pos = m.positive_atoms();
    let slots: Vec<usize> = pos
        .iter()
        .enumerate()
        .filter(|(_, atom)| a.contains(atom))
        .map(|(s, _)| s)
        .collect();
    if slots.is_empty() {
        return Err(FiberError::InvalidInput("no positive atoms in set".into()));
    }
    let ranks: Vec<usize> = slots.iter().map(|&s| m.fibers[s].rank()).collect();
    let r = ranks[0];
    if ranks.iter().any(|&x| x != r) {
        return Err(FiberError::NonConstantRank(format!(
            "ranks {ranks:?} on the requested set"
        )));
    }
    let selections: Vec<Vec<usize>> = slots.iter().map(|&s| greedy_selection(&m.fibers[s])).collect();
    let mut out = Vec::new();
    for k in 0..r {
        let rows: Vec<Vec<Scalar>> = (0..pos.len())
            .map(|s| {
                let mut row = vec![Scalar::zero(); m.gens];
                if let Some(pos_in_a) = slots.iter().position(|&t| t == s) {
                    row[selections[pos_in_a][k]] = Scalar::one();
                }
                row
            })
            .collect();
        out.push(m.element_from_rows(&rows)?);
    }
    Ok(out)
}

/// One member of an increasing chain of sub-presentations.
#[derive(Clone, Debug)]
pub struct ChainStage {
    pub pres: ModulePresentation,
    /// Per positive-atom slot: gens x n matrix embedding stage coefficients
    /// into the parent module.
    pub embed: Vec<Mat>,
}

/// Increasing chain N_1 c ... c N_d built from glued generator selections;
/// stage n has local dimension n everywhere and the top stage generates.
pub fn nested_chain(m: &ModulePresentation) -> Result<Vec<ChainStage>> {
    let pos = m.positive_atoms();
    let all: BTreeSet<usize> = pos.iter().copied().collect();
    let ranks: Vec<usize> = m.fibers.iter().map(FiberNorm::rank).collect();
    let d = *ranks.first().unwrap_or(&0);
    if ranks.iter().any(|&x| x != d) {
        return Err(FiberError::NonConstantRank(format!("ranks {ranks:?}")));
    }
    let _ = all;
    if d == 0 {
        return Ok(Vec::new());
    }
    let selections: Vec<Vec<usize>> = m.fibers.iter().map(greedy_selection).collect();
    let mut stages = Vec::new();
    for n in 1..=d {
        let mut fibers = Vec::new();
        let mut embed = Vec::new();
        for (slot, sel) in selections.iter().enumerate() {
            let mut b = linalg::zeros(m.gens, n);
            for (col, &j) in sel.iter().take(n).enumerate() {
                b[j][col] = Scalar::one();
            }
            fibers.push(m.fibers[slot].compose(&b)?);
            embed.push(b);
        }
        stages.push(ChainStage {
            pres: ModulePresentation::new(m.measure.clone(), n, fibers)?,
            embed,
        });
    }
    Ok(stages)
}

/// Embed a stage element into the parent module.
pub fn chain_include(m: &ModulePresentation, stage: &ChainStage, v: &ModuleElement) -> Result<ModuleElement> {
    stage.pres.check_element(v)?;
    let rows: Vec<Vec<Scalar>> = (0..m.positive_atoms().len())
        .map(|s| linalg::mat_vec(&stage.embed[s], &v.vector_at_slot(s)))
        .collect();
    m.element_from_rows(&rows)
}

fn inclusion_is_isometry(src: &FiberNorm, dst: &FiberNorm, j: &Mat, tol: f64) -> Result<bool> {
    if let Some(verts) = src.unit_ball_vertices() {
        for u in &verts {
            let img = linalg::mat_vec(j, u);
            let a = src.eval(u)?.to_f64();
            let b = dst.eval(&img)?.to_f64();
            if (a - b).abs() > tol * a.abs().max(1.0) {
                return Ok(false);
            }
        }
        for b in src.kernel_basis() {
            let img = linalg::mat_vec(j, &b);
            if dst.eval(&img)?.to_f64() > tol {
                return Ok(false);
            }
        }
        return Ok(true);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for _ in 0..2_000 {
        let u: Vec<Scalar> = (0..src.dim())
            .map(|_| Scalar::Fl(rng.gen_range(-1.0..1.0)))
            .collect();
        let a = src.eval(&u)?.to_f64();
        let b = dst.eval(&linalg::mat_vec(j, &u))?.to_f64();
        if (a - b).abs() > tol * a.abs().max(1.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The colimit of an increasing chain is its top member at finite scale.
/// Inclusions must preserve the pointwise norm atom by atom.
pub fn direct_limit_chain(
    chain: &[ModulePresentation],
    inclusions: &[Vec<Mat>],
) -> Result<ModulePresentation> {
    if chain.is_empty() {
        return Err(FiberError::InvalidInput("empty chain".into()));
    }
    if inclusions.len() + 1 != chain.len() {
        return Err(FiberError::InvalidInput(
            "need one inclusion per consecutive pair".into(),
        ));
    }
    for (k, inc) in inclusions.iter().enumerate() {
        let (a, b) = (&chain[k], &chain[k + 1]);
        if a.measure != b.measure {
            return Err(FiberError::SpaceMismatch("chain over mixed measures".into()));
        }
        if b.gens < a.gens {
            return Err(FiberError::InvalidInput("chain not increasing".into()));
        }
        for (slot, j) in inc.iter().enumerate() {
            if !inclusion_is_isometry(&a.fibers[slot], &b.fibers[slot], j, 1e-9)? {
                return Err(FiberError::ContractionViolated {
                    atom: a.measure.space().name(a.positive_atoms()[slot]).to_string(),
                    defect: f64::NAN,
                });
            }
        }
    }
    Ok(chain.last().unwrap().clone())
}

/// Verifies a compatible cone over the chain and returns the unique
/// factorization through the limit (the top morphism).
pub fn factor_through_limit(
    chain: &[ModulePresentation],
    inclusions: &[Vec<Mat>],
    target: &ModulePresentation,
    cone: &[Vec<Mat>],
) -> Result<Vec<Mat>> {
    let limit = direct_limit_chain(chain, inclusions)?;
    if cone.len() != chain.len() {
        return Err(FiberError::InvalidInput("one cone map per member".into()));
    }
    if target.measure != limit.measure {
        return Err(FiberError::SpaceMismatch("target over a different measure".into()));
    }
    // Compatibility: cone[k] = cone[k+1] after the inclusion, atomwise.
    for k in 0..inclusions.len() {
        for (slot, j) in inclusions[k].iter().enumerate() {
            let lhs = &cone[k][slot];
            let rhs = linalg::mat_mul(&cone[k + 1][slot], j);
            let close = lhs
                .iter()
                .flatten()
                .zip(rhs.iter().flatten())
                .all(|(a, b)| a.approx_eq(b, 1e-9));
            if !close {
                return Err(FiberError::InvalidInput(format!(
                    "cone maps disagree after inclusion at stage {k}, slot {slot}"
                )));
            }
        }
    }
    // Contraction of the factoring morphism at every atom.
    for (slot, mats) in cone.last().unwrap().iter().enumerate() {
        let rep = limit.fibers[slot].contraction_check(mats, &target.fibers[slot], 1e-9)?;
        if !rep.ok {
            return Err(FiberError::ContractionViolated {
                atom: limit
                    .measure
                    .space()
                    .name(limit.positive_atoms()[slot])
                    .to_string(),
                defect: rep.defect.to_f64(),
            });
        }
    }
    Ok(cone.last().unwrap().clone())
}

/// Localization to a set of positive mass, with the extension-by-zero back.
#[derive(Clone, Debug)]
pub struct Localization {
    /// Presentation over the measure restricted to the set.
    pub localized: ModulePresentation,
    /// Presentation over the original measure with zero fibers off the set.
    pub extension: ModulePresentation,
    set: BTreeSet<usize>,
}

pub fn localize_extend(m: &ModulePresentation, a: &BTreeSet<usize>) -> Result<Localization> {
    let space = m.measure.space().clone();
    let masses: Vec<Scalar> = space
        .indices()
        .map(|i| {
            if a.contains(&i) {
                m.measure.mass(i).clone()
            } else {
                Scalar::zero()
            }
        })
        .collect();
    let sub_measure = Measure::new(space, masses)?;
    if !sub_measure.total().is_positive() {
        return Err(FiberError::AllNull);
    }
    let pos = m.positive_atoms();
    let kept: Vec<usize> = pos
        .iter()
        .enumerate()
        .filter(|(_, atom)| a.contains(atom))
        .map(|(s, _)| s)
        .collect();
    let localized = ModulePresentation::new(
        sub_measure,
        m.gens,
        kept.iter().map(|&s| m.fibers[s].clone()).collect(),
    )?;
    let extension_fibers: Vec<FiberNorm> = pos
        .iter()
        .enumerate()
        .map(|(s, atom)| {
            if a.contains(atom) {
                m.fibers[s].clone()
            } else {
                m.fibers[s].zeroed_like()
            }
        })
        .collect();
    let extension = ModulePresentation::new(m.measure.clone(), m.gens, extension_fibers)?;
    Ok(Localization {
        localized,
        extension,
        set: a.clone(),
    })
}

impl Localization {
    pub fn localize_element(&self, m: &ModulePresentation, v: &ModuleElement) -> Result<ModuleElement> {
        m.check_element(v)?;
        let sub = self.localized.measure().clone();
        let kept_atoms = sub.positive_atoms();
        let pos = m.positive_atoms();
        let coeffs = v
            .coeffs
            .iter()
            .map(|c| {
                let values = kept_atoms
                    .iter()
                    .map(|atom| {
                        let s = pos.iter().position(|p| p == atom).expect("subset");
                        c.values()[s].clone()
                    })
                    .collect();
                FunctionClass::new(sub.clone(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        ModuleElement::new(coeffs)
    }

    pub fn extend_element(&self, v: &ModuleElement) -> Result<ModuleElement> {
        self.localized.check_element(v)?;
        let m = self.extension.measure().clone();
        let pos = m.positive_atoms();
        let sub_atoms = self.localized.measure().positive_atoms();
        let coeffs = v
            .coeffs
            .iter()
            .map(|c| {
                let values = pos
                    .iter()
                    .map(|atom| {
                        if self.set.contains(atom) {
                            let s = sub_atoms.iter().position(|p| p == atom).expect("kept");
                            c.values()[s].clone()
                        } else {
                            Scalar::zero()
                        }
                    })
                    .collect();
                FunctionClass::new(m.clone(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        ModuleElement::new(coeffs)
    }
}

/// Fibers copied along the map: fiber_X(x) = fiber_Y(phi(x)). Requires every
/// positive source atom to land on an atom carrying a fiber.
pub fn pullback_module(
    phi: &PointMap,
    m: &ModulePresentation,
    m_x: &Arc<Measure>,
) -> Result<ModulePresentation> {
    if phi.source() != m_x.space() {
        return Err(FiberError::SpaceMismatch("map source mismatch".into()));
    }
    if phi.target() != m.measure.space() {
        return Err(FiberError::SpaceMismatch("map target mismatch".into()));
    }
    let fibers = m_x
        .positive_atoms()
        .into_iter()
        .map(|x| {
            m.fiber_at(phi.apply(x)).cloned().ok_or_else(|| {
                FiberError::NotAbsolutelyContinuous(m_x.space().name(x).to_string())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ModulePresentation::new(m_x.clone(), m.gens, fibers)
}

/// phi^* v: coefficients precomposed with the map.
pub fn pullback_element(
    phi: &PointMap,
    m: &ModulePresentation,
    m_x: &Arc<Measure>,
    v: &ModuleElement,
) -> Result<ModuleElement> {
    m.check_element(v)?;
    let coeffs = v
        .coeffs
        .iter()
        .map(|c| pullback_function(c, phi, m_x))
        .collect::<Result<Vec<_>>>()?;
    ModuleElement::new(coeffs)
}

/// Coefficientwise fiber average along the map: the unique L0-linear
/// continuous left inverse of the pullback. Atoms of the target measure
/// missed by the image carry zero.
pub fn pr_phi_module(
    t: &ModuleElement,
    phi: &PointMap,
    m_x: &Arc<Measure>,
    m: &ModulePresentation,
) -> Result<ModuleElement> {
    if t.coeffs.len() != m.gens {
        return Err(FiberError::DimensionMismatch {
            expected: m.gens,
            got: t.coeffs.len(),
        });
    }
    let push = pushforward(phi, m_x)?;
    for y in push.positive_atoms() {
        if !m.measure.is_positive_atom(y) {
            return Err(FiberError::NotAbsolutelyContinuous(
                phi.target().name(y).to_string(),
            ));
        }
    }
    let push_pos = push.positive_atoms();
    let tgt_pos = m.measure.positive_atoms();
    let coeffs = t
        .coeffs
        .iter()
        .map(|c| {
            let projected = pr_phi_function(c, phi, m_x)?;
            let values = tgt_pos
                .iter()
                .map(|atom| match push_pos.iter().position(|p| p == atom) {
                    Some(s) => projected.values()[s].clone(),
                    None => Scalar::zero(),
                })
                .collect();
            FunctionClass::new(m.measure.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    ModuleElement::new(coeffs)
}

/// Per-atom linear map between presentations over the same measure, certified
/// contractive fiber by fiber.
#[derive(Clone, Debug)]
pub struct ModuleMorphism {
    mats: Vec<Mat>,
}

impl ModuleMorphism {
    pub fn new(
        src: &ModulePresentation,
        tgt: &ModulePresentation,
        mats: Vec<Mat>,
        tol: f64,
    ) -> Result<Self> {
        if src.measure != tgt.measure {
            return Err(FiberError::SpaceMismatch(
                "morphism endpoints over different measures".into(),
            ));
        }
        if mats.len() != src.fibers.len() {
            return Err(FiberError::DimensionMismatch {
                expected: src.fibers.len(),
                got: mats.len(),
            });
        }
        for (slot, t) in mats.iter().enumerate() {
            let rep = src.fibers[slot].contraction_check(t, &tgt.fibers[slot], tol)?;
            if !rep.ok {
                return Err(FiberError::ContractionViolated {
                    atom: src
                        .measure
                        .space()
                        .name(src.positive_atoms()[slot])
                        .to_string(),
                    defect: rep.defect.to_f64(),
                });
            }
        }
        Ok(ModuleMorphism { mats })
    }

    pub fn mats(&self) -> &[Mat] {
        &self.mats
    }

    pub fn apply(&self, src: &ModulePresentation, tgt: &ModulePresentation, v: &ModuleElement) -> Result<ModuleElement> {
        src.check_element(v)?;
        let rows: Vec<Vec<Scalar>> = (0..self.mats.len())
            .map(|s| linalg::mat_vec(&self.mats[s], &v.vector_at_slot(s)))
            .collect();
        tgt.element_from_rows(&rows)
    }
}

//! Banach bundles over finite measured spaces: fibers as spans inside the
//! shared ambient space, sections and the section functor, the embedding
//! and pairing-matrix representation pipelines, the graded coordinate
//! representation, pullbacks, and the universal bundle with full fibers.
//!
//! The three representation paths (embedding-based, pairing-matrix based
//! with no lifting, and graded coordinates) are kept independent so their
//! agreement can be checked; none of them is allowed to borrow data from
//! another.

use crate::embedding::{
    embed_collection, AmbientSpace, AmbientVector, EmbedParams, FiberEmbedding,
    MeasurableCollection,
};
use crate::error::{FiberError, Result};
use crate::lifting::{lift_module, make_lifting};
use crate::linalg::{self, Mat};
use crate::measure::{disintegrate, pushforward, FunctionClass, Measure, PointMap};
use crate::modules::{
    dimensional_decomposition, local_basis, ModuleElement, ModuleMorphism, ModulePresentation,
};
use crate::norms::FiberNorm;
use crate::scalar::{sdot, Scalar};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// Residual above which an ambient vector is not accepted as a fiber member.
const MEMBERSHIP_TOL: f64 = 1e-9;

fn zero_ambient(ambient: &AmbientSpace) -> AmbientVector {
    AmbientVector {
        depth: ambient.depth(),
        values: vec![Scalar::zero(); ambient.dim()],
    }
}

fn ambient_add(a: &AmbientVector, b: &AmbientVector) -> AmbientVector {
    AmbientVector {
        depth: a.depth,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect(),
    }
}

fn ambient_scale(a: &AmbientVector, c: &Scalar) -> AmbientVector {
    AmbientVector {
        depth: a.depth,
        values: a.values.iter().map(|x| x * c).collect(),
    }
}

/// Bundle over the positive atoms of a measure: each fiber is the span of
/// its listed vectors inside one shared ambient space. The total-space view
/// {(x, w) : w in fiber(x)} is derivable and never materialized.
#[derive(Clone, Debug)]
pub struct Bundle {
    measure: Arc<Measure>,
    ambient: AmbientSpace,
    /// Per positive atom. Zero vectors are legal entries; rank is computed,
    /// not read off the list length.
    fiber_span: Vec<Vec<AmbientVector>>,
}

impl Bundle {
    pub fn new(
        measure: Arc<Measure>,
        ambient: AmbientSpace,
        fiber_span: Vec<Vec<AmbientVector>>,
    ) -> Result<Bundle> {
        if fiber_span.len() != measure.positive_atoms().len() {
            return Err(FiberError::DimensionMismatch {
                expected: measure.positive_atoms().len(),
                got: fiber_span.len(),
            });
        }
        for span in &fiber_span {
            for w in span {
                if w.depth != ambient.depth() || w.values.len() != ambient.dim() {
                    return Err(FiberError::SpaceMismatch(
                        "span vector lives in a different ambient space".into(),
                    ));
                }
            }
        }
        Ok(Bundle {
            measure,
            ambient,
            fiber_span,
        })
    }

    pub fn measure(&self) -> &Arc<Measure> {
        &self.measure
    }

    pub fn ambient(&self) -> &AmbientSpace {
        &self.ambient
    }

    pub fn positive_atoms(&self) -> Vec<usize> {
        self.measure.positive_atoms()
    }

    pub fn slot_of(&self, atom: usize) -> Option<usize> {
        self.positive_atoms().iter().position(|&a| a == atom)
    }

    pub fn span_at(&self, slot: usize) -> &[AmbientVector] {
        &self.fiber_span[slot]
    }

    pub fn fiber_rank(&self, slot: usize) -> usize {
        let rows: Mat = self.fiber_span[slot]
            .iter()
            .map(|w| w.values.clone())
            .collect();
        linalg::rank(&rows)
    }

    /// Ambient-dim x span-size matrix whose columns are the span vectors.
    fn span_matrix(&self, slot: usize) -> Mat {
        let span = &self.fiber_span[slot];
        (0..self.ambient.dim())
            .map(|a| span.iter().map(|w| w.values[a].clone()).collect())
            .collect()
    }

    /// Coordinates of `w` over the span; rejects vectors outside the fiber.
    pub fn span_coordinates(&self, slot: usize, w: &AmbientVector) -> Result<Vec<Scalar>> {
        let span = &self.fiber_span[slot];
        if span.is_empty() {
            let residual = w.sup_norm().to_f64();
            if residual > MEMBERSHIP_TOL {
                return Err(self.membership_error(slot, residual));
            }
            return Ok(Vec::new());
        }
        let a = self.span_matrix(slot);
        let coords = linalg::least_squares(&a, &w.values);
        let residual = self.residual_of(slot, w, &coords);
        if residual > MEMBERSHIP_TOL {
            return Err(self.membership_error(slot, residual));
        }
        Ok(coords)
    }

    fn residual_of(&self, slot: usize, w: &AmbientVector, coords: &[Scalar]) -> f64 {
        let recon = self.combine_unchecked(slot, coords);
        w.values
            .iter()
            .zip(&recon.values)
            .map(|(x, y)| (x - y).abs().to_f64())
            .fold(0.0, f64::max)
    }

    fn membership_error(&self, slot: usize, residual: f64) -> FiberError {
        let atom = self.positive_atoms()[slot];
        FiberError::FiberMembership {
            atom: self.measure.space().name(atom).to_string(),
            residual,
        }
    }

    pub fn membership_residual(&self, slot: usize, w: &AmbientVector) -> f64 {
        let span = &self.fiber_span[slot];
        if span.is_empty() {
            return w.sup_norm().to_f64();
        }
        let a = self.span_matrix(slot);
        let coords = linalg::least_squares(&a, &w.values);
        self.residual_of(slot, w, &coords)
    }

    fn combine_unchecked(&self, slot: usize, coords: &[Scalar]) -> AmbientVector {
        let mut out = zero_ambient(&self.ambient);
        for (c, w) in coords.iter().zip(&self.fiber_span[slot]) {
            out = ambient_add(&out, &ambient_scale(w, c));
        }
        out
    }

    pub fn combine(&self, slot: usize, coords: &[Scalar]) -> Result<AmbientVector> {
        if coords.len() != self.fiber_span[slot].len() {
            return Err(FiberError::DimensionMismatch {
                expected: self.fiber_span[slot].len(),
                got: coords.len(),
            });
        }
        Ok(self.combine_unchecked(slot, coords))
    }

    /// Checked section constructor: one value per positive atom, each inside
    /// its fiber.
    pub fn section(&self, values: Vec<AmbientVector>) -> Result<Section> {
        if values.len() != self.fiber_span.len() {
            return Err(FiberError::DimensionMismatch {
                expected: self.fiber_span.len(),
                got: values.len(),
            });
        }
        for (slot, w) in values.iter().enumerate() {
            let residual = self.membership_residual(slot, w);
            if residual > MEMBERSHIP_TOL {
                return Err(self.membership_error(slot, residual));
            }
        }
        Ok(Section { values })
    }

    pub fn zero_section(&self) -> Section {
        Section {
            values: vec![zero_ambient(&self.ambient); self.fiber_span.len()],
        }
    }

    /// `{"ambient":{"depth":…},"fibers":{atom:[span vectors]}}`. The base
    /// measure travels separately; the schema carries none.
    pub fn to_json(&self) -> serde_json::Value {
        let mut fibers = serde_json::Map::new();
        for (slot, &atom) in self.positive_atoms().iter().enumerate() {
            fibers.insert(
                self.measure.space().name(atom).to_string(),
                serde_json::json!(self.fiber_span[slot]
                    .iter()
                    .map(|w| &w.values)
                    .collect::<Vec<_>>()),
            );
        }
        serde_json::json!({
            "ambient": { "depth": self.ambient.depth() },
            "fibers": fibers,
        })
    }

    pub fn section_to_json(&self, s: &Section) -> serde_json::Value {
        let mut values = serde_json::Map::new();
        for (slot, &atom) in self.positive_atoms().iter().enumerate() {
            values.insert(
                self.measure.space().name(atom).to_string(),
                serde_json::json!(s.values[slot].values),
            );
        }
        serde_json::json!({ "depth": self.ambient.depth(), "values": values })
    }
}

/// Measurable selector of the bundle: one ambient vector per positive atom,
/// each inside its fiber.
#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    values: Vec<AmbientVector>,
}

impl Section {
    pub fn values(&self) -> &[AmbientVector] {
        &self.values
    }

    pub fn value_at_slot(&self, slot: usize) -> &AmbientVector {
        &self.values[slot]
    }
}

/// Pointwise norm of a section: the ambient sup norm per atom.
pub fn section_norm(b: &Bundle, s: &Section) -> Result<FunctionClass> {
    FunctionClass::new(
        b.measure.clone(),
        s.values.iter().map(AmbientVector::sup_norm).collect(),
    )
}

/// Bundle whose fiber at each atom is the span of the given family values.
pub fn bundle_from_sections(
    measure: Arc<Measure>,
    ambient: AmbientSpace,
    families: &[Vec<AmbientVector>],
) -> Result<Bundle> {
    let slots = measure.positive_atoms().len();
    for f in families {
        if f.len() != slots {
            return Err(FiberError::DimensionMismatch {
                expected: slots,
                got: f.len(),
            });
        }
    }
    let fiber_span = (0..slots)
        .map(|slot| families.iter().map(|f| f[slot].clone()).collect())
        .collect();
    Bundle::new(measure, ambient, fiber_span)
}

/// Finite generating family: section n picks the n-th span vector where it
/// exists and zero elsewhere. Every section is an exact coefficient
/// combination of this family.
pub fn dense_section_family(b: &Bundle) -> Vec<Section> {
    let count = b.fiber_span.iter().map(Vec::len).max().unwrap_or(0);
    (0..count)
        .map(|n| Section {
            values: b
                .fiber_span
                .iter()
                .map(|span| span.get(n).cloned().unwrap_or_else(|| zero_ambient(&b.ambient)))
                .collect(),
        })
        .collect()
}

/// Coefficient functions expressing `s` over the family, atom by atom.
pub fn reconstruct_section(
    b: &Bundle,
    family: &[Section],
    s: &Section,
) -> Result<Vec<FunctionClass>> {
    let slots = b.fiber_span.len();
    let mut coeff_rows: Vec<Vec<Scalar>> = Vec::with_capacity(slots);
    for slot in 0..slots {
        let a: Mat = (0..b.ambient.dim())
            .map(|ad| {
                family
                    .iter()
                    .map(|f| f.values[slot].values[ad].clone())
                    .collect()
            })
            .collect();
        let coords = if family.is_empty() {
            Vec::new()
        } else {
            linalg::least_squares(&a, &s.values[slot].values)
        };
        // Exactness check at this atom.
        let mut recon = zero_ambient(&b.ambient);
        for (c, f) in coords.iter().zip(family) {
            recon = ambient_add(&recon, &ambient_scale(&f.values[slot], c));
        }
        let residual = s.values[slot]
            .values
            .iter()
            .zip(&recon.values)
            .map(|(x, y)| (x - y).abs().to_f64())
            .fold(0.0, f64::max);
        if residual > MEMBERSHIP_TOL {
            return Err(b.membership_error(slot, residual));
        }
        coeff_rows.push(coords);
    }
    (0..family.len())
        .map(|n| {
            FunctionClass::new(
                b.measure.clone(),
                coeff_rows.iter().map(|r| r[n].clone()).collect(),
            )
        })
        .collect()
}

/// Ambient sup norm restricted to a span, in span coordinates: one
/// coordinate-functional row per ambient address, sign-canonicalized and
/// deduplicated. Exact, and keeps the norm engine in one place.
fn span_sup_norm(span: &[AmbientVector], pad_to: usize) -> Result<FiberNorm> {
    let dim = pad_to.max(span.len());
    let addresses = span.first().map(|w| w.values.len()).unwrap_or(0);
    let mut rows: Mat = Vec::new();
    for a in 0..addresses {
        let mut row: Vec<Scalar> = span.iter().map(|w| w.values[a].clone()).collect();
        row.resize(dim, Scalar::zero());
        if row.iter().all(Scalar::is_zero) {
            continue;
        }
        if row
            .iter()
            .find(|x| !x.is_zero())
            .map(Scalar::is_negative)
            .unwrap_or(false)
        {
            row = row.iter().map(|x| -x.clone()).collect();
        }
        if !rows.contains(&row) {
            rows.push(row);
        }
    }
    if rows.is_empty() {
        rows.push(vec![Scalar::zero(); dim]);
    }
    FiberNorm::polyhedral(rows)
}

/// Section module of a bundle: a presentation whose fiber norms are the
/// ambient sup norms restricted to the spans, plus the dictionary between
/// sections and coefficient elements.
#[derive(Clone, Debug)]
pub struct GammaModule {
    pub presentation: ModulePresentation,
    bundle: Bundle,
}

impl GammaModule {
    pub fn section_to_element(&self, s: &Section) -> Result<ModuleElement> {
        let gens = self.presentation.gens();
        let rows: Vec<Vec<Scalar>> = (0..self.bundle.fiber_span.len())
            .map(|slot| {
                let mut coords = self.bundle.span_coordinates(slot, &s.values[slot])?;
                coords.resize(gens, Scalar::zero());
                Ok(coords)
            })
            .collect::<Result<Vec<_>>>()?;
        self.presentation.element_from_rows(&rows)
    }

    pub fn element_to_section(&self, v: &ModuleElement) -> Result<Section> {
        let values = (0..self.bundle.fiber_span.len())
            .map(|slot| {
                let coords = v.vector_at_slot(slot);
                let k = self.bundle.fiber_span[slot].len();
                self.bundle.combine(slot, &coords[..k])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Section { values })
    }
}

pub fn gamma_module(b: &Bundle) -> Result<GammaModule> {
    let gens = b.fiber_span.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let fibers = b
        .fiber_span
        .iter()
        .map(|span| span_sup_norm(span, gens))
        .collect::<Result<Vec<_>>>()?;
    Ok(GammaModule {
        presentation: ModulePresentation::new(b.measure.clone(), gens, fibers)?,
        bundle: b.clone(),
    })
}

/// Outcome of a representation run: certified per-atom norm defects and the
/// generator correspondence.
#[derive(Clone, Debug)]
pub struct RepresentationReport {
    pub atom_defects: Vec<(String, f64)>,
    pub max_defect: f64,
    pub correspondence: Vec<(String, String)>,
}

impl RepresentationReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "atom_defects": self.atom_defects
                .iter()
                .map(|(a, d)| serde_json::json!({"atom": a, "defect": d}))
                .collect::<Vec<_>>(),
            "max_defect": self.max_defect,
            "correspondence": self.correspondence
                .iter()
                .map(|(g, s)| serde_json::json!({"generator": g, "section": s}))
                .collect::<Vec<_>>(),
        })
    }
}

/// Represented module: the bundle, the per-atom embedding handles realizing
/// the isomorphism, and the defect report.
#[derive(Clone, Debug)]
pub struct ModuleRepresentation {
    pub bundle: Bundle,
    handles: Vec<FiberEmbedding>,
    gens: usize,
    pub report: RepresentationReport,
}

impl ModuleRepresentation {
    /// The isomorphism on elements: per-atom embedding of the coefficient
    /// vector. Pointwise norms land in [(1 - defect) |v|, |v|].
    pub fn represent_element(&self, v: &ModuleElement) -> Result<Section> {
        let values = self
            .handles
            .iter()
            .enumerate()
            .map(|(slot, h)| h.embed(&v.vector_at_slot(slot)))
            .collect::<Result<Vec<_>>>()?;
        self.bundle.section(values)
    }

    pub fn gens(&self) -> usize {
        self.gens
    }
}

fn unit_vec(dim: usize, i: usize) -> Vec<Scalar> {
    let mut v = vec![Scalar::zero(); dim];
    v[i] = Scalar::one();
    v
}

/// Embedding-based representation: lift the presentation over the whole
/// atom space, embed the lifted fiber collection (probes are the generator
/// images), and assemble the bundle from the embedded generators.
pub fn represent_module(
    m: &ModulePresentation,
    params: &EmbedParams,
) -> Result<ModuleRepresentation> {
    let measure = m.measure().clone();
    let lifting = make_lifting(&measure, None)?;
    let lifted = lift_module(&lifting, m)?;
    let gens = m.gens();
    let probes: Vec<Vec<Scalar>> = (0..gens).map(|k| unit_vec(gens, k)).collect();
    let atom_count = measure.space().len();
    let fibers: Vec<FiberNorm> = (0..atom_count).map(|x| lifted.fiber(x).clone()).collect();
    let collection =
        MeasurableCollection::from_fibers_with_probes(&fibers, &vec![probes.clone(); atom_count])?;
    let out = embed_collection(&collection, params)?;

    let pos = measure.positive_atoms();
    let handles: Vec<FiberEmbedding> = pos.iter().map(|&x| out.handles[x].clone()).collect();
    let fiber_span: Vec<Vec<AmbientVector>> = handles
        .iter()
        .map(|h| probes.iter().map(|p| h.embed(p)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let bundle = Bundle::new(measure.clone(), out.ambient.clone(), fiber_span)?;

    let mut atom_defects = Vec::new();
    let mut max_defect: f64 = 0.0;
    for (slot, &atom) in pos.iter().enumerate() {
        // Certified defect, sharpened against nothing: the measured
        // generator gaps only corroborate (probes are recovered exactly up
        // to float noise), so the certificate is reported as is.
        let mut defect = handles[slot].epsilon;
        for p in &probes {
            let norm = m.fibers()[slot].eval(p)?.to_f64();
            if norm > 0.0 {
                let sup = bundle.fiber_span[slot][probes.iter().position(|q| q == p).unwrap()]
                    .sup_norm()
                    .to_f64();
                let gap = ((norm - sup) / norm).max(0.0);
                defect = defect.max(gap);
            }
        }
        max_defect = max_defect.max(defect);
        atom_defects.push((measure.space().name(atom).to_string(), defect));
    }
    let correspondence = (0..gens)
        .map(|k| (format!("g{k}"), format!("section {k}")))
        .collect();
    Ok(ModuleRepresentation {
        bundle,
        handles,
        gens,
        report: RepresentationReport {
            atom_defects,
            max_defect,
            correspondence,
        },
    })
}

const GOLDEN_FRAC: f64 = 0.618_033_988_749_894_9;

/// Deterministic dual-probe sequence for one fiber, with the prefix
/// property: the first entries are the norming functionals of the
/// coordinate generators, then a variant-specific tail (cycled polytope
/// vertices, a golden-angle grid, or a seeded sphere sample).
fn dual_probe_sequence(n: &FiberNorm, count: usize, atom_seed: u64) -> Result<Vec<Vec<Scalar>>> {
    let dim = n.dim();
    if n.rank() == 0 {
        return Ok(vec![vec![Scalar::zero(); dim]; count]);
    }
    let mut seq: Vec<Vec<Scalar>> = Vec::with_capacity(count);
    for k in 0..dim {
        if seq.len() == count {
            break;
        }
        let e = unit_vec(dim, k);
        if n.eval(&e)?.is_positive() {
            seq.push(n.norming_functional(&e)?.omega);
        }
    }
    if let Some(mut verts) = n.dual_ball_vertices() {
        verts.sort_by(|a, b| {
            let fa: Vec<f64> = a.iter().map(Scalar::to_f64).collect();
            let fb: Vec<f64> = b.iter().map(Scalar::to_f64).collect();
            fa.partial_cmp(&fb).unwrap()
        });
        let mut i = 0;
        while seq.len() < count {
            seq.push(verts[i % verts.len()].clone());
            i += 1;
        }
        return Ok(seq);
    }
    match n.rank() {
        1 => {
            let base = seq
                .first()
                .cloned()
                .ok_or_else(|| FiberError::DegenerateProbes("rank-one fiber with no generator of positive norm".into()))?;
            let neg: Vec<Scalar> = base.iter().map(|x| -x.clone()).collect();
            let mut i = 0;
            while seq.len() < count {
                seq.push(if i % 2 == 0 { neg.clone() } else { base.clone() });
                i += 1;
            }
        }
        2 => {
            let bt = linalg::transpose(&n.quotient_basis());
            let mut i: u64 = 1;
            while seq.len() < count {
                let theta = 2.0 * std::f64::consts::PI * ((i as f64 * GOLDEN_FRAC) % 1.0);
                let u = vec![Scalar::Fl(theta.cos()), Scalar::Fl(theta.sin())];
                let raw = linalg::mat_vec(&bt, &u);
                let nr = n.eval(&raw)?;
                if nr.is_positive() {
                    let unit: Vec<Scalar> = raw.iter().map(|x| x / &nr).collect();
                    seq.push(n.norming_functional(&unit)?.omega);
                }
                i += 1;
            }
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0xA11C_E000 ^ atom_seed);
            while seq.len() < count {
                let raw: Vec<Scalar> = (0..dim)
                    .map(|_| Scalar::Fl(rng.gen_range(-1.0..=1.0)))
                    .collect();
                let nr = n.eval(&raw)?;
                if nr.to_f64() > 1e-6 {
                    let unit: Vec<Scalar> = raw.iter().map(|x| x / &nr).collect();
                    seq.push(n.norming_functional(&unit)?.omega);
                }
            }
        }
    }
    Ok(seq)
}

/// Pairing-matrix representation with no lifting step: ambient coordinates
/// are the first K dual probes per atom, fiber vectors are the pairing
/// columns (omega_n(e_k))_n. The per-atom defect is measured on a fixed
/// sample and is monotone non-increasing in K by the prefix property.
pub fn represent_module_no_ac(
    m: &ModulePresentation,
    k_trunc: usize,
) -> Result<(Bundle, RepresentationReport)> {
    let gens = m.gens();
    if k_trunc < gens {
        return Err(FiberError::InvalidInput(format!(
            "truncation {k_trunc} below generator count {gens}"
        )));
    }
    let mut depth = 1usize;
    while (1usize << depth) < k_trunc {
        depth += 1;
    }
    let ambient = AmbientSpace::new(depth)?;
    let measure = m.measure().clone();
    let pos = measure.positive_atoms();

    // Fixed sample, independent of K so defects are comparable across runs.
    let mut rng = ChaCha8Rng::seed_from_u64(0xDEF_EC7);
    let mut samples: Vec<Vec<Scalar>> = (0..gens).map(|k| unit_vec(gens, k)).collect();
    for _ in 0..200 {
        samples.push(
            (0..gens)
                .map(|_| Scalar::ratio(rng.gen_range(-8..=8), rng.gen_range(1..=4)))
                .collect(),
        );
    }

    let mut fiber_span = Vec::with_capacity(pos.len());
    let mut atom_defects = Vec::new();
    let mut max_defect: f64 = 0.0;
    for (slot, &atom) in pos.iter().enumerate() {
        let fiber = &m.fibers()[slot];
        let duals = dual_probe_sequence(fiber, k_trunc, atom as u64)?;
        let span: Vec<AmbientVector> = (0..gens)
            .map(|k| {
                let e = unit_vec(gens, k);
                AmbientVector {
                    depth,
                    values: (0..ambient.dim())
                        .map(|a| sdot(&duals[a.min(k_trunc - 1)], &e))
                        .collect(),
                }
            })
            .collect();
        let mut defect: f64 = 0.0;
        for v in &samples {
            let norm = fiber.eval(v)?;
            if !norm.is_positive() {
                continue;
            }
            let sup = duals
                .iter()
                .map(|w| sdot(w, v).abs())
                .fold(Scalar::zero(), Scalar::max);
            let gap = 1.0 - (sup / norm).to_f64();
            defect = defect.max(gap.max(0.0));
        }
        max_defect = max_defect.max(defect);
        atom_defects.push((measure.space().name(atom).to_string(), defect));
        fiber_span.push(span);
    }
    let bundle = Bundle::new(measure, ambient, fiber_span)?;
    let correspondence = (0..gens)
        .map(|k| (format!("g{k}"), format!("pairing column {k}")))
        .collect();
    Ok((
        bundle,
        RepresentationReport {
            atom_defects,
            max_defect,
            correspondence,
        },
    ))
}

/// Morphism of bundles over one measure: a per-atom matrix in span
/// coordinates, contractive fiber by fiber for the restricted sup norms.
#[derive(Clone, Debug)]
pub struct BundleMorphism {
    pub source: Bundle,
    pub target: Bundle,
    mats: Vec<Mat>,
}

impl BundleMorphism {
    pub fn mats(&self) -> &[Mat] {
        &self.mats
    }
}

pub fn bundle_morphism(
    source: Bundle,
    target: Bundle,
    mats: Vec<Mat>,
    tol: f64,
) -> Result<BundleMorphism> {
    if source.measure != target.measure {
        return Err(FiberError::SpaceMismatch(
            "morphism endpoints over different measures".into(),
        ));
    }
    let slots = source.fiber_span.len();
    if mats.len() != slots {
        return Err(FiberError::DimensionMismatch {
            expected: slots,
            got: mats.len(),
        });
    }
    let pos = source.positive_atoms();
    for slot in 0..slots {
        let sk = source.fiber_span[slot].len();
        let tk = target.fiber_span[slot].len();
        if mats[slot].len() != tk || mats[slot].iter().any(|r| r.len() != sk) {
            return Err(FiberError::DimensionMismatch {
                expected: tk * sk,
                got: mats[slot].len() * mats[slot].first().map_or(0, Vec::len),
            });
        }
        if sk == 0 || tk == 0 {
            continue;
        }
        let src_norm = span_sup_norm(&source.fiber_span[slot], 0)?;
        let dst_norm = span_sup_norm(&target.fiber_span[slot], 0)?;
        let report = src_norm.contraction_check(&mats[slot], &dst_norm, tol)?;
        if !report.ok {
            return Err(FiberError::ContractionViolated {
                atom: source.measure.space().name(pos[slot]).to_string(),
                defect: report.defect.to_f64(),
            });
        }
    }
    Ok(BundleMorphism {
        source,
        target,
        mats,
    })
}

/// The section functor on morphisms: pointwise application in span
/// coordinates.
pub fn apply_section_functor(phi: &BundleMorphism, s: &Section) -> Result<Section> {
    let values = (0..phi.mats.len())
        .map(|slot| {
            let coords = phi.source.span_coordinates(slot, &s.values[slot])?;
            let out = linalg::mat_vec(&phi.mats[slot], &coords);
            phi.target.combine(slot, &out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Section { values })
}

pub fn compose_morphisms(
    outer: &BundleMorphism,
    inner: &BundleMorphism,
    tol: f64,
) -> Result<BundleMorphism> {
    let mats = outer
        .mats
        .iter()
        .zip(&inner.mats)
        .map(|(o, i)| linalg::mat_mul(o, i))
        .collect();
    bundle_morphism(inner.source.clone(), outer.target.clone(), mats, tol)
}

/// Transport of a module morphism to the represented bundles. Span
/// coordinates are generator coordinates, so the matrices carry over; the
/// ambient-side contraction is then re-verified against `tol`, which must
/// absorb the representation defects.
pub fn morphism_from_module_map(
    phi: &ModuleMorphism,
    src: &ModuleRepresentation,
    dst: &ModuleRepresentation,
    tol: f64,
) -> Result<BundleMorphism> {
    bundle_morphism(
        src.bundle.clone(),
        dst.bundle.clone(),
        phi.mats().to_vec(),
        tol,
    )
}

/// Pullback bundle: fiber at x is a copy of the fiber at phi(x). Requires
/// positive atoms to map to positive atoms.
pub fn pullback_bundle(phi: &PointMap, m_x: &Arc<Measure>, b: &Bundle) -> Result<Bundle> {
    if phi.source() != m_x.space() {
        return Err(FiberError::SpaceMismatch(
            "map source differs from measure space".into(),
        ));
    }
    if phi.target() != b.measure.space() {
        return Err(FiberError::SpaceMismatch(
            "map target differs from bundle space".into(),
        ));
    }
    let fiber_span = m_x
        .positive_atoms()
        .iter()
        .map(|&x| {
            let y = phi.apply(x);
            b.slot_of(y)
                .map(|slot| b.fiber_span[slot].clone())
                .ok_or_else(|| {
                    FiberError::NotAbsolutelyContinuous(m_x.space().name(x).to_string())
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Bundle::new(m_x.clone(), b.ambient.clone(), fiber_span)
}

/// Pullback of a section: value at x is the value at phi(x).
pub fn pullback_section(
    phi: &PointMap,
    m_x: &Arc<Measure>,
    b: &Bundle,
    s: &Section,
) -> Result<Section> {
    let pb = pullback_bundle(phi, m_x, b)?;
    let values = m_x
        .positive_atoms()
        .iter()
        .map(|&x| {
            let slot = b.slot_of(phi.apply(x)).expect("checked by pullback_bundle");
            s.values[slot].clone()
        })
        .collect();
    pb.section(values)
}

#[derive(Clone, Debug)]
pub struct PullbackCommuteReport {
    pub max_residual: f64,
    pub max_norm_gap: f64,
    pub cases: usize,
}

/// Checks that pullback and sections commute: every section of the pullback
/// bundle is an exact coefficient combination of pulled-back sections, both
/// by direct span solves and through the fiber-average approximants on the
/// singleton partition; pointwise norms transport exactly.
pub fn pullback_commute_check(
    b: &Bundle,
    phi: &PointMap,
    m_x: &Arc<Measure>,
    seed: u64,
    cases: usize,
) -> Result<PullbackCommuteReport> {
    let pb = pullback_bundle(phi, m_x, b)?;
    let family = dense_section_family(b);
    let pulled: Vec<Section> = family
        .iter()
        .map(|s| pullback_section(phi, m_x, b, s))
        .collect::<Result<Vec<_>>>()?;
    let disint = disintegrate(phi, m_x)?;
    let pos_x = m_x.positive_atoms();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_residual: f64 = 0.0;
    let mut max_norm_gap: f64 = 0.0;
    for _ in 0..cases {
        // Random section of the pullback bundle.
        let values: Vec<AmbientVector> = (0..pos_x.len())
            .map(|slot| {
                let k = pb.fiber_span[slot].len();
                let coords: Vec<Scalar> = (0..k)
                    .map(|_| Scalar::ratio(rng.gen_range(-6..=6), rng.gen_range(1..=3)))
                    .collect();
                pb.combine_unchecked(slot, &coords)
            })
            .collect();
        let t = pb.section(values)?;

        // Route one: direct reconstruction over the pulled-back family.
        let coeffs = reconstruct_section(&pb, &pulled, &t)?;
        let mut recon = pb.zero_section();
        for (c, f) in coeffs.iter().zip(&pulled) {
            for slot in 0..pos_x.len() {
                recon.values[slot] = ambient_add(
                    &recon.values[slot],
                    &ambient_scale(&f.values[slot], &c.values()[slot]),
                );
            }
        }
        for slot in 0..pos_x.len() {
            let r = t.values[slot]
                .values
                .iter()
                .zip(&recon.values[slot].values)
                .map(|(x, y)| (x - y).abs().to_f64())
                .fold(0.0, f64::max);
            max_residual = max_residual.max(r);
        }

        // Route two: the singleton-partition fiber averages. For the piece
        // {a}, the conditional average of t over the piece is t(a), and the
        // indicator-weighted pullbacks reassemble t exactly.
        let pos_y = disint.base().positive_atoms();
        for (slot_x, &a) in pos_x.iter().enumerate() {
            let y = phi.apply(a);
            let cond = pos_y
                .iter()
                .position(|&p| p == y)
                .and_then(|_| disint.conditional(y))
                .ok_or_else(|| {
                    FiberError::NotAbsolutelyContinuous(m_x.space().name(a).to_string())
                })?;
            // Average of t over {a} against the conditional at y.
            let weight = cond[a].clone();
            if !weight.is_positive() {
                return Err(FiberError::NotAbsolutelyContinuous(
                    m_x.space().name(a).to_string(),
                ));
            }
            let integral = ambient_scale(&t.values[slot_x], &weight);
            let average = ambient_scale(&integral, &weight.clone().recip());
            let r = average
                .values
                .iter()
                .zip(&t.values[slot_x].values)
                .map(|(x, y)| (x - y).abs().to_f64())
                .fold(0.0, f64::max);
            max_residual = max_residual.max(r);
        }

        // Norm transport for pulled-back family sections.
        for (s, ps) in family.iter().zip(&pulled) {
            let ns = section_norm(b, s)?;
            let nps = section_norm(&pb, ps)?;
            for (slot_x, &x) in pos_x.iter().enumerate() {
                let via_phi = ns.value_at(phi.apply(x)).map(Scalar::to_f64).unwrap_or(0.0);
                let gap = (nps.values()[slot_x].to_f64() - via_phi).abs();
                max_norm_gap = max_norm_gap.max(gap);
            }
        }
    }
    Ok(PullbackCommuteReport {
        max_residual,
        max_norm_gap,
        cases,
    })
}

/// Averaging of a section of the pullback bundle along the fibers of phi:
/// value at y is the conditional average of t. Linear and 1-Lipschitz for
/// pointwise norms; missing positive targets receive zero.
pub fn pr_phi_section(
    t: &Section,
    phi: &PointMap,
    m_x: &Arc<Measure>,
    b: &Bundle,
) -> Result<Section> {
    if phi.source() != m_x.space() || phi.target() != b.measure.space() {
        return Err(FiberError::SpaceMismatch(
            "map endpoints do not match the data".into(),
        ));
    }
    let m_y = pushforward(phi, m_x)?;
    for &y in &m_y.positive_atoms() {
        if !b.measure.positive_atoms().contains(&y) {
            return Err(FiberError::NotAbsolutelyContinuous(
                b.measure.space().name(y).to_string(),
            ));
        }
    }
    let disint = disintegrate(phi, m_x)?;
    let pos_x = m_x.positive_atoms();
    let values = b
        .positive_atoms()
        .iter()
        .map(|&y| match disint.conditional(y) {
            Some(cond) => {
                let mut acc = zero_ambient(&b.ambient);
                for (slot_x, &x) in pos_x.iter().enumerate() {
                    if cond[x].is_zero() {
                        continue;
                    }
                    acc = ambient_add(&acc, &ambient_scale(&t.values[slot_x], &cond[x]));
                }
                acc
            }
            None => zero_ambient(&b.ambient),
        })
        .collect();
    b.section(values)
}

/// Coordinate bundle graded by pointwise rank: one block per dimension,
/// with a genuine norm of that dimension at each atom, in the coordinates
/// of a glued local basis.
#[derive(Clone, Debug)]
pub struct GradedBlock {
    pub atoms: BTreeSet<usize>,
    pub dim: usize,
    /// Per atom of the block.
    pub fibers: BTreeMap<usize, FiberNorm>,
    /// Per atom: gens x dim matrix whose columns are the basis vectors.
    pub basis: BTreeMap<usize, Mat>,
}

#[derive(Clone, Debug)]
pub struct GradedBundle {
    pub blocks: Vec<GradedBlock>,
}

impl GradedBundle {
    /// `{"blocks":[{"atoms":[…],"dim":…,"fibers":{atom:norm}}]}`. Basis
    /// matrices are internal glue and stay out of the interchange form.
    pub fn to_json(&self, space: &crate::measure::AtomSpace) -> serde_json::Value {
        let blocks: Vec<serde_json::Value> = self
            .blocks
            .iter()
            .map(|b| {
                let atoms: Vec<&str> = b.atoms.iter().map(|&a| space.name(a)).collect();
                let mut fibers = serde_json::Map::new();
                for (&a, f) in &b.fibers {
                    fibers.insert(space.name(a).to_string(), f.to_json());
                }
                serde_json::json!({ "atoms": atoms, "dim": b.dim, "fibers": fibers })
            })
            .collect();
        serde_json::json!({ "blocks": blocks })
    }
}

pub fn graded_representation(m: &ModulePresentation) -> Result<GradedBundle> {
    let dd = dimensional_decomposition(m);
    let mut blocks = Vec::new();
    for (n, atoms) in dd.blocks.iter().enumerate() {
        if atoms.is_empty() {
            continue;
        }
        if n == 0 {
            blocks.push(GradedBlock {
                atoms: atoms.clone(),
                dim: 0,
                fibers: BTreeMap::new(),
                basis: BTreeMap::new(),
            });
            continue;
        }
        let basis_elems = local_basis(m, atoms)?;
        let mut fibers = BTreeMap::new();
        let mut basis = BTreeMap::new();
        for &a in atoms {
            let slot = m.slot_of(a).expect("block atoms are positive");
            // gens x n, columns are the basis coefficient vectors at a.
            let b_mat: Mat = (0..m.gens())
                .map(|row| {
                    basis_elems
                        .iter()
                        .map(|e| e.vector_at_slot(slot)[row].clone())
                        .collect()
                })
                .collect();
            let coord_norm = m.fibers()[slot].compose(&b_mat)?;
            if coord_norm.rank() != n {
                return Err(FiberError::NonConstantRank(format!(
                    "coordinate norm at atom {a} is degenerate"
                )));
            }
            fibers.insert(a, coord_norm);
            basis.insert(a, b_mat);
        }
        blocks.push(GradedBlock {
            atoms: atoms.clone(),
            dim: n,
            fibers,
            basis,
        });
    }
    // Blocks partition the positive atoms.
    let mut seen = BTreeSet::new();
    for b in &blocks {
        for &a in &b.atoms {
            if !seen.insert(a) {
                return Err(FiberError::BadPartition(format!("atom {a} in two blocks")));
            }
        }
    }
    let all: BTreeSet<usize> = m.positive_atoms().into_iter().collect();
    if seen != all {
        return Err(FiberError::BadPartition("blocks miss positive atoms".into()));
    }
    Ok(GradedBundle { blocks })
}

/// Pointwise norm of an element read through the graded coordinates. Exact:
/// no embedding is involved, so this must agree with the presentation norm
/// with defect zero.
pub fn graded_pointwise_norm(
    gb: &GradedBundle,
    m: &ModulePresentation,
    v: &ModuleElement,
) -> Result<FunctionClass> {
    let pos = m.positive_atoms();
    let mut values = Vec::with_capacity(pos.len());
    for (slot, &a) in pos.iter().enumerate() {
        let block = gb
            .blocks
            .iter()
            .find(|b| b.atoms.contains(&a))
            .ok_or_else(|| FiberError::BadPartition(format!("atom {a} not covered")))?;
        if block.dim == 0 {
            values.push(Scalar::zero());
            continue;
        }
        let b_mat = &block.basis[&a];
        let fiber = &m.fibers()[slot];
        // Solve B lambda = v modulo the fiber kernel: append a kernel basis
        // and solve exactly.
        let kernel = fiber.kernel_basis();
        let aug: Mat = (0..m.gens())
            .map(|row| {
                let mut r: Vec<Scalar> = b_mat[row].clone();
                r.extend(kernel.iter().map(|kv| kv[row].clone()));
                r
            })
            .collect();
        let sol = linalg::solve(&aug, &v.vector_at_slot(slot)).ok_or_else(|| {
            FiberError::NonConstantRank(format!("basis does not span at atom {a}"))
        })?;
        let lambda: Vec<Scalar> = sol[..block.dim].to_vec();
        values.push(block.fibers[&a].eval(&lambda)?);
    }
    FunctionClass::new(m.measure().clone(), values)
}

/// Bundle whose fiber is the whole ambient space at every atom.
pub fn universal_bundle(measure: Arc<Measure>, depth: usize) -> Result<Bundle> {
    let ambient = AmbientSpace::new(depth)?;
    let basis: Vec<AmbientVector> = (0..ambient.dim())
        .map(|i| {
            let mut values = vec![Scalar::zero(); ambient.dim()];
            values[i] = Scalar::one();
            AmbientVector { depth, values }
        })
        .collect();
    let slots = measure.positive_atoms().len();
    Bundle::new(measure, ambient, vec![basis; slots])
}

/// Represents the module, then includes the represented bundle into the
/// universal bundle. The inclusion is the identity on ambient vectors, so
/// it preserves pointwise norms exactly.
pub fn embed_into_universal(
    m: &ModulePresentation,
    params: &EmbedParams,
) -> Result<(ModuleRepresentation, BundleMorphism)> {
    let rep = represent_module(m, params)?;
    let uni = universal_bundle(m.measure().clone(), params.depth)?;
    let mats: Vec<Mat> = (0..rep.bundle.fiber_span.len())
        .map(|slot| {
            let span = &rep.bundle.fiber_span[slot];
            (0..rep.bundle.ambient.dim())
                .map(|a| span.iter().map(|w| w.values[a].clone()).collect())
                .collect()
        })
        .collect();
    let incl = bundle_morphism(rep.bundle.clone(), uni, mats, 1e-9)?;
    Ok((rep, incl))
}

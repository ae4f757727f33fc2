//! Finite measure spaces and the a.e. calculus on them.
//!
//! A space is a finite ordered list of named atoms with the power-set sigma
//! algebra; a measure assigns a nonnegative mass to each atom, and null atoms
//! are first-class (they are what makes the class projection, liftings, and
//! a.e. semantics non-trivial). Function classes live on the positive atoms
//! only. The normalized measure (mass divided by total) drives the L0
//! distance and the measure-algebra distance.

use crate::error::{FiberError, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

/// Finite measurable space: ordered, unique atom names. The order is the
/// canonical iteration and tie-break order everywhere in the crate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomSpace {
    atoms: Vec<String>,
}

impl AtomSpace {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(atoms: I) -> Result<Arc<Self>> {
        let atoms: Vec<String> = atoms.into_iter().map(Into::into).collect();
        if atoms.is_empty() {
            return Err(FiberError::InvalidInput("empty atom list".into()));
        }
        let mut seen = BTreeSet::new();
        for a in &atoms {
            if !seen.insert(a.clone()) {
                return Err(FiberError::InvalidInput(format!("duplicate atom '{a}'")));
            }
        }
        Ok(Arc::new(AtomSpace { atoms }))
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.atoms[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.atoms
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a == name)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> {
        0..self.atoms.len()
    }
}

impl fmt::Display for AtomSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.atoms.join(", "))
    }
}

/// Finite measure on an [`AtomSpace`]; masses indexed by atom position.
#[derive(Clone, Debug, PartialEq)]
pub struct Measure {
    space: Arc<AtomSpace>,
    mass: Vec<Scalar>,
}

impl Measure {
    pub fn new(space: Arc<AtomSpace>, mass: Vec<Scalar>) -> Result<Arc<Self>> {
        if mass.len() != space.len() {
            return Err(FiberError::DimensionMismatch {
                expected: space.len(),
                got: mass.len(),
            });
        }
        if mass.iter().any(Scalar::is_negative) {
            return Err(FiberError::InvalidInput("negative atom mass".into()));
        }
        Ok(Arc::new(Measure { space, mass }))
    }

    pub fn space(&self) -> &Arc<AtomSpace> {
        &self.space
    }

    pub fn mass(&self, idx: usize) -> &Scalar {
        &self.mass[idx]
    }

    pub fn total(&self) -> Scalar {
        crate::scalar::ssum(self.mass.iter())
    }

    /// Indices of atoms with positive mass, in canonical order.
    pub fn positive_atoms(&self) -> Vec<usize> {
        self.space
            .indices()
            .filter(|&i| self.mass[i].is_positive())
            .collect()
    }

    pub fn null_atoms(&self) -> Vec<usize> {
        self.space
            .indices()
            .filter(|&i| !self.mass[i].is_positive())
            .collect()
    }

    pub fn is_positive_atom(&self, idx: usize) -> bool {
        self.mass[idx].is_positive()
    }

    pub fn mass_of_set(&self, set: &BTreeSet<usize>) -> Scalar {
        crate::scalar::ssum(set.iter().map(|&i| &self.mass[i]))
    }
}

/// Everywhere-defined bounded function (defined on null atoms too).
#[derive(Clone, Debug, PartialEq)]
pub struct TotalFunction {
    space: Arc<AtomSpace>,
    values: Vec<Scalar>,
}

impl TotalFunction {
    pub fn new(space: Arc<AtomSpace>, values: Vec<Scalar>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(FiberError::DimensionMismatch {
                expected: space.len(),
                got: values.len(),
            });
        }
        Ok(TotalFunction { space, values })
    }

    pub fn constant(space: Arc<AtomSpace>, c: Scalar) -> Self {
        let n = space.len();
        TotalFunction {
            space,
            values: vec![c; n],
        }
    }

    pub fn indicator(space: Arc<AtomSpace>, set: &BTreeSet<usize>) -> Self {
        let values = space
            .indices()
            .map(|i| {
                if set.contains(&i) {
                    Scalar::one()
                } else {
                    Scalar::zero()
                }
            })
            .collect();
        TotalFunction { space, values }
    }

    pub fn space(&self) -> &Arc<AtomSpace> {
        &self.space
    }

    pub fn value(&self, idx: usize) -> &Scalar {
        &self.values[idx]
    }

    pub fn values(&self) -> &[Scalar] {
        &self.values
    }

    pub fn sup_norm(&self) -> Scalar {
        self.values
            .iter()
            .map(Scalar::abs)
            .fold(Scalar::zero(), Scalar::max)
    }

    pub fn map<F: Fn(&Scalar) -> Scalar>(&self, f: F) -> TotalFunction {
        TotalFunction {
            space: self.space.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn zip<F: Fn(&Scalar, &Scalar) -> Scalar>(&self, other: &TotalFunction, f: F) -> TotalFunction {
        debug_assert_eq!(self.space, other.space);
        TotalFunction {
            space: self.space.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }
}

/// A.e. class of a bounded function: values on the positive atoms of its
/// measure, nothing else.
#[derive(Clone, Debug)]
pub struct FunctionClass {
    measure: Arc<Measure>,
    /// Parallel to `measure.positive_atoms()`.
    values: Vec<Scalar>,
}

impl FunctionClass {
    pub fn new(measure: Arc<Measure>, values_on_positive: Vec<Scalar>) -> Result<Self> {
        let pos = measure.positive_atoms();
        if values_on_positive.len() != pos.len() {
            return Err(FiberError::DimensionMismatch {
                expected: pos.len(),
                got: values_on_positive.len(),
            });
        }
        Ok(FunctionClass {
            measure,
            values: values_on_positive,
        })
    }

    pub fn constant(measure: Arc<Measure>, c: Scalar) -> Self {
        let n = measure.positive_atoms().len();
        FunctionClass {
            measure,
            values: vec![c; n],
        }
    }

    pub fn zero(measure: Arc<Measure>) -> Self {
        Self::constant(measure, Scalar::zero())
    }

    pub fn measure(&self) -> &Arc<Measure> {
        &self.measure
    }

    /// Value at a positive atom (by atom index in the space).
    pub fn value_at(&self, atom: usize) -> Option<&Scalar> {
        let pos = self.measure.positive_atoms();
        pos.iter().position(|&p| p == atom).map(|i| &self.values[i])
    }

    /// (atom index, value) pairs in canonical order.
    pub fn entries(&self) -> Vec<(usize, &Scalar)> {
        self.measure
            .positive_atoms()
            .into_iter()
            .zip(self.values.iter())
            .collect()
    }

    pub fn values(&self) -> &[Scalar] {
        &self.values
    }

    pub fn map<F: Fn(&Scalar) -> Scalar>(&self, f: F) -> FunctionClass {
        FunctionClass {
            measure: self.measure.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn zip<F: Fn(&Scalar, &Scalar) -> Scalar>(&self, other: &FunctionClass, f: F) -> Result<FunctionClass> {
        self.check_same_measure(other)?;
        Ok(FunctionClass {
            measure: self.measure.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &FunctionClass) -> Result<FunctionClass> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &FunctionClass) -> Result<FunctionClass> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &FunctionClass) -> Result<FunctionClass> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: &Scalar) -> FunctionClass {
        self.map(|v| v * c)
    }

    pub fn abs(&self) -> FunctionClass {
        self.map(Scalar::abs)
    }

    pub fn ess_sup(&self) -> Scalar {
        self.values
            .iter()
            .map(Scalar::abs)
            .fold(Scalar::zero(), Scalar::max)
    }

    /// Integral against the (unnormalized) measure.
    pub fn integral(&self) -> Scalar {
        self.entries()
            .iter()
            .fold(Scalar::zero(), |acc, (atom, v)| {
                acc + &(*v).clone() * self.measure.mass(*atom)
            })
    }

    fn check_same_measure(&self, other: &FunctionClass) -> Result<()> {
        if self.measure != other.measure {
            return Err(FiberError::SpaceMismatch(
                "function classes over different measures".into(),
            ));
        }
        Ok(())
    }
}

impl PartialEq for FunctionClass {
    fn eq(&self, other: &Self) -> bool {
        self.measure == other.measure && self.values == other.values
    }
}

/// Total map between atom spaces, stored as target indices per source atom.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMap {
    source: Arc<AtomSpace>,
    target: Arc<AtomSpace>,
    assignment: Vec<usize>,
}

impl PointMap {
    pub fn new(source: Arc<AtomSpace>, target: Arc<AtomSpace>, assignment: Vec<usize>) -> Result<Self> {
        if assignment.len() != source.len() {
            return Err(FiberError::DimensionMismatch {
                expected: source.len(),
                got: assignment.len(),
            });
        }
        if assignment.iter().any(|&t| t >= target.len()) {
            return Err(FiberError::InvalidInput("assignment out of range".into()));
        }
        Ok(PointMap {
            source,
            target,
            assignment,
        })
    }

    pub fn identity(space: Arc<AtomSpace>) -> Self {
        let assignment = space.indices().collect();
        PointMap {
            source: space.clone(),
            target: space,
            assignment,
        }
    }

    pub fn source(&self) -> &Arc<AtomSpace> {
        &self.source
    }

    pub fn target(&self) -> &Arc<AtomSpace> {
        &self.target
    }

    pub fn apply(&self, source_atom: usize) -> usize {
        self.assignment[source_atom]
    }

    pub fn fiber(&self, target_atom: usize) -> Vec<usize> {
        self.source
            .indices()
            .filter(|&x| self.assignment[x] == target_atom)
            .collect()
    }
}

/// Conditional masses on the fibers of a map: for each positive atom y of the
/// base, a probability vector over the source atoms supported on the fiber
/// over y.
#[derive(Clone, Debug)]
pub struct Disintegration {
    base: Arc<Measure>,
    /// Keyed like `base.positive_atoms()`; each entry has source-space length.
    family: Vec<Vec<Scalar>>,
}

impl Disintegration {
    pub fn base(&self) -> &Arc<Measure> {
        &self.base
    }

    /// Conditional mass vector over the source space at base atom `y`.
    pub fn conditional(&self, y: usize) -> Option<&Vec<Scalar>> {
        let pos = self.base.positive_atoms();
        pos.iter().position(|&p| p == y).map(|i| &self.family[i])
    }
}

/// Restriction of a total function to the positive atoms of `m`.
pub fn project_class(f: &TotalFunction, m: &Arc<Measure>) -> Result<FunctionClass> {
    if f.space() != m.space() {
        return Err(FiberError::SpaceMismatch(
            "function defined on a different space".into(),
        ));
    }
    let values = m
        .positive_atoms()
        .into_iter()
        .map(|i| f.value(i).clone())
        .collect();
    FunctionClass::new(m.clone(), values)
}

/// L0 distance: the integral of |f-g| truncated at 1 against the normalized
/// measure.
pub fn l0_distance(f: &FunctionClass, g: &FunctionClass) -> Result<Scalar> {
    if f.measure() != g.measure() {
        return Err(FiberError::SpaceMismatch(
            "classes over different measures".into(),
        ));
    }
    let m = f.measure();
    let total = m.total();
    if !total.is_positive() {
        return Err(FiberError::ZeroTotalMass);
    }
    let mut acc = Scalar::zero();
    for ((atom, fv), (_, gv)) in f.entries().iter().zip(g.entries().iter()) {
        let d = ((*fv).clone() - (*gv).clone()).abs().clamp_one();
        acc = acc + d * m.mass(*atom).clone();
    }
    Ok(acc / total)
}

/// Normalized mass of the symmetric difference.
pub fn measure_algebra_distance(
    a: &BTreeSet<usize>,
    b: &BTreeSet<usize>,
    m: &Arc<Measure>,
) -> Result<Scalar> {
    let total = m.total();
    if !total.is_positive() {
        return Err(FiberError::ZeroTotalMass);
    }
    let sym: BTreeSet<usize> = a.symmetric_difference(b).copied().collect();
    Ok(m.mass_of_set(&sym) / total)
}

/// Image measure: mass(y) = sum of masses over the fiber of y.
pub fn pushforward(phi: &PointMap, m: &Arc<Measure>) -> Result<Arc<Measure>> {
    if phi.source() != m.space() {
        return Err(FiberError::SpaceMismatch(
            "map source differs from measure space".into(),
        ));
    }
    let mut mass = vec![Scalar::zero(); phi.target().len()];
    for x in phi.source().indices() {
        let y = phi.apply(x);
        mass[y] = &mass[y] + m.mass(x);
    }
    Measure::new(phi.target().clone(), mass)
}

/// Fiber-normalized conditional masses: on the fiber over a positive atom y
/// of the pushforward, mass(x) / mass(fiber); zero off the fiber.
pub fn disintegrate(phi: &PointMap, m_x: &Arc<Measure>) -> Result<Disintegration> {
    let m_y = pushforward(phi, m_x)?;
    let mut family = Vec::new();
    for y in m_y.positive_atoms() {
        let fiber = phi.fiber(y);
        let fiber_mass = crate::scalar::ssum(fiber.iter().map(|&x| m_x.mass(x)));
        // Positive atoms of the pushforward always have positive fiber mass.
        debug_assert!(fiber_mass.is_positive());
        let mut cond = vec![Scalar::zero(); phi.source().len()];
        for x in fiber {
            cond[x] = m_x.mass(x) / &fiber_mass;
        }
        family.push(cond);
    }
    Ok(Disintegration { base: m_y, family })
}

/// Projection of a function along a map, via the disintegration formula:
/// the conditional average of f over each fiber.
pub fn pr_phi_function(f: &FunctionClass, phi: &PointMap, m_x: &Arc<Measure>) -> Result<FunctionClass> {
    if f.measure() != m_x {
        return Err(FiberError::SpaceMismatch(
            "function class over a different measure".into(),
        ));
    }
    let disint = disintegrate(phi, m_x)?;
    let m_y = disint.base().clone();
    let mut out = Vec::new();
    for (pos_idx, y) in m_y.positive_atoms().into_iter().enumerate() {
        let _ = y;
        let cond = &disint.family[pos_idx];
        let mut acc = Scalar::zero();
        for (x, fv) in f.entries() {
            acc = acc + fv.clone() * cond[x].clone();
        }
        out.push(acc);
    }
    FunctionClass::new(m_y, out)
}

/// Projection of a function along a map, via signed-measure pushforward and
/// an atom-by-atom Radon-Nikodym quotient. Independent of
/// [`pr_phi_function`]; the two agree on every input.
pub fn pr_phi_function_rn(f: &FunctionClass, phi: &PointMap, m_x: &Arc<Measure>) -> Result<FunctionClass> {
    if f.measure() != m_x {
        return Err(FiberError::SpaceMismatch(
            "function class over a different measure".into(),
        ));
    }
    let m_y = pushforward(phi, m_x)?;
    // Pushforward of the signed measures (f+ m) and (f- m), then divide by
    // the pushforward mass where it is positive.
    let mut plus = vec![Scalar::zero(); phi.target().len()];
    let mut minus = vec![Scalar::zero(); phi.target().len()];
    for (x, fv) in f.entries() {
        let y = phi.apply(x);
        let w = fv.clone() * m_x.mass(x).clone();
        if fv.is_negative() {
            minus[y] = &minus[y] + &(-w);
        } else {
            plus[y] = &plus[y] + &w;
        }
    }
    let mut out = Vec::new();
    for y in m_y.positive_atoms() {
        let dplus = &plus[y] / m_y.mass(y);
        let dminus = &minus[y] / m_y.mass(y);
        out.push(dplus - dminus);
    }
    FunctionClass::new(m_y, out)
}

/// Pullback of a function class along a map (precomposition). Requires every
/// positive source atom to land on a positive target atom.
pub fn pullback_function(g: &FunctionClass, phi: &PointMap, m_x: &Arc<Measure>) -> Result<FunctionClass> {
    if phi.source() != m_x.space() {
        return Err(FiberError::SpaceMismatch(
            "map source differs from measure space".into(),
        ));
    }
    if g.measure().space() != phi.target() {
        return Err(FiberError::SpaceMismatch(
            "class space differs from map target".into(),
        ));
    }
    let mut values = Vec::new();
    for x in m_x.positive_atoms() {
        let y = phi.apply(x);
        match g.value_at(y) {
            Some(v) => values.push(v.clone()),
            None => {
                return Err(FiberError::NotAbsolutelyContinuous(
                    m_x.space().name(x).to_string(),
                ))
            }
        }
    }
    FunctionClass::new(m_x.clone(), values)
}

/// Splice classes along a partition of the positive atoms.
pub fn glue_functions(
    m: &Arc<Measure>,
    partition: &[BTreeSet<usize>],
    parts: &[FunctionClass],
) -> Result<FunctionClass> {
    if partition.len() != parts.len() {
        return Err(FiberError::BadPartition(format!(
            "{} blocks but {} parts",
            partition.len(),
            parts.len()
        )));
    }
    let positive: BTreeSet<usize> = m.positive_atoms().into_iter().collect();
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    for block in partition {
        for &x in block {
            if !seen.insert(x) {
                return Err(FiberError::BadPartition(format!(
                    "atom '{}' in two blocks",
                    m.space().name(x)
                )));
            }
        }
    }
    let covered: BTreeSet<usize> = seen.intersection(&positive).copied().collect();
    if covered != positive {
        return Err(FiberError::BadPartition("positive atoms not covered".into()));
    }
    let mut values = Vec::new();
    for x in m.positive_atoms() {
        let block = partition
            .iter()
            .position(|b| b.contains(&x))
            .expect("covered above");
        if parts[block].measure() != m {
            return Err(FiberError::SpaceMismatch(
                "part over a different measure".into(),
            ));
        }
        values.push(parts[block].value_at(x).expect("positive atom").clone());
    }
    FunctionClass::new(m.clone(), values)
}

// ---------------------------------------------------------------------------
// JSON forms

#[derive(Serialize, Deserialize)]
struct SpaceJson {
    atoms: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    mass: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct FunctionJson {
    values: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct MapJson {
    assign: serde_json::Map<String, serde_json::Value>,
}

impl AtomSpace {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "atoms": self.atoms })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Arc<Self>> {
        let parsed: SpaceJson =
            serde_json::from_value(v.clone()).map_err(|e| FiberError::Parse(e.to_string()))?;
        AtomSpace::new(parsed.atoms)
    }
}

fn scalar_from_value(v: &serde_json::Value) -> Result<Scalar> {
    serde_json::from_value(v.clone()).map_err(|e| FiberError::Parse(e.to_string()))
}

impl Measure {
    /// `{"mass":{"a":1,"b":0}}`; key order defines the canonical atom order.
    pub fn from_json(v: &serde_json::Value) -> Result<Arc<Self>> {
        let parsed: MeasureJson =
            serde_json::from_value(v.clone()).map_err(|e| FiberError::Parse(e.to_string()))?;
        let space = AtomSpace::new(parsed.mass.keys().cloned())?;
        let mass = parsed
            .mass
            .values()
            .map(scalar_from_value)
            .collect::<Result<Vec<_>>>()?;
        Measure::new(space, mass)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for i in self.space.indices() {
            map.insert(
                self.space.name(i).to_string(),
                serde_json::to_value(&self.mass[i]).unwrap(),
            );
        }
        serde_json::json!({ "mass": map })
    }
}

impl TotalFunction {
    pub fn from_json(v: &serde_json::Value, space: &Arc<AtomSpace>) -> Result<Self> {
        let parsed: FunctionJson =
            serde_json::from_value(v.clone()).map_err(|e| FiberError::Parse(e.to_string()))?;
        let mut values = vec![Scalar::zero(); space.len()];
        for (name, val) in &parsed.values {
            let idx = space
                .index_of(name)
                .ok_or_else(|| FiberError::Parse(format!("unknown atom '{name}'")))?;
            values[idx] = scalar_from_value(val)?;
        }
        TotalFunction::new(space.clone(), values)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for i in self.space.indices() {
            map.insert(
                self.space.name(i).to_string(),
                serde_json::to_value(&self.values[i]).unwrap(),
            );
        }
        serde_json::json!({ "values": map })
    }
}

impl FunctionClass {
    /// `{"values":{...}}` keyed by positive atom names; missing entries are
    /// zero, entries on null atoms are ignored (classes do not see them).
    pub fn from_json(v: &serde_json::Value, m: &Arc<Measure>) -> Result<Self> {
        let parsed: FunctionJson =
            serde_json::from_value(v.clone()).map_err(|e| FiberError::Parse(e.to_string()))?;
        let pos = m.positive_atoms();
        let mut values = vec![Scalar::zero(); pos.len()];
        for (name, val) in &parsed.values {
            let idx = m
                .space()
                .index_of(name)
                .ok_or_else(|| FiberError::Parse(format!("unknown atom '{name}'")))?;
            if let Some(slot) = pos.iter().position(|&p| p == idx) {
                values[slot] = scalar_from_value(val)?;
            }
        }
        FunctionClass::new(m.clone(), values)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (atom, v) in self.entries() {
            map.insert(
                self.measure.space().name(atom).to_string(),
                serde_json::to_value(v).unwrap(),
            );
        }
        serde_json::json!({ "values": map })
    }
}

impl PointMap {
    /// `{"assign":{"a":"y1"}}`; the target space is the assignment values in
    /// order of first appearance.
    pub fn from_json(v: &serde_json::Value, source: &Arc<AtomSpace>) -> Result<Self> {
        let parsed: MapJson =
            serde_json::from_value(v.clone()).map_err(|e| FiberError::Parse(e.to_string()))?;
        let mut target_names: Vec<String> = Vec::new();
        for val in parsed.assign.values() {
            let name = val
                .as_str()
                .ok_or_else(|| FiberError::Parse("assignment value must be a string".into()))?;
            if !target_names.iter().any(|n| n == name) {
                target_names.push(name.to_string());
            }
        }
        let target = AtomSpace::new(target_names)?;
        let mut assignment = vec![usize::MAX; source.len()];
        for (name, val) in &parsed.assign {
            let idx = source
                .index_of(name)
                .ok_or_else(|| FiberError::Parse(format!("unknown atom '{name}'")))?;
            assignment[idx] = target.index_of(val.as_str().unwrap()).unwrap();
        }
        if assignment.contains(&usize::MAX) {
            return Err(FiberError::Parse("assignment not total on source".into()));
        }
        PointMap::new(source.clone(), target, assignment)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for x in self.source.indices() {
            map.insert(
                self.source.name(x).to_string(),
                serde_json::Value::String(self.target.name(self.apply(x)).to_string()),
            );
        }
        serde_json::json!({ "assign": map })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space3() -> Arc<AtomSpace> {
        AtomSpace::new(["a", "b", "c"]).unwrap()
    }

    fn sc(n: i64, d: i64) -> Scalar {
        Scalar::ratio(n, d)
    }

    #[test]
    fn project_drops_null_atoms() {
        let sp = AtomSpace::new(["a", "b"]).unwrap();
        let m = Measure::new(sp.clone(), vec![sc(1, 1), sc(0, 1)]).unwrap();
        let f = TotalFunction::new(sp, vec![sc(1, 1), sc(5, 1)]).unwrap();
        let cls = project_class(&f, &m).unwrap();
        assert_eq!(cls.entries(), vec![(0, &sc(1, 1))]);
    }

    #[test]
    fn project_restriction_is_identity_on_fully_positive() {
        let sp = AtomSpace::new(["a", "b"]).unwrap();
        let m = Measure::new(sp.clone(), vec![sc(1, 1), sc(1, 1)]).unwrap();
        let f = TotalFunction::new(sp, vec![sc(2, 1), sc(4, 1)]).unwrap();
        let cls = project_class(&f, &m).unwrap();
        assert_eq!(cls.values(), &[sc(2, 1), sc(4, 1)]);
    }

    #[test]
    fn l0_distance_frozen_values() {
        let sp = AtomSpace::new(["a"]).unwrap();
        let m = Measure::new(sp, vec![sc(1, 1)]).unwrap();
        let f = FunctionClass::new(m.clone(), vec![sc(0, 1)]).unwrap();
        let g = FunctionClass::new(m.clone(), vec![sc(1, 2)]).unwrap();
        let h = FunctionClass::new(m.clone(), vec![sc(3, 1)]).unwrap();
        assert_eq!(l0_distance(&f, &f).unwrap(), sc(0, 1));
        // Direct evaluation of the truncated integral against the
        // normalized measure, kept exact.
        assert_eq!(l0_distance(&f, &g).unwrap(), sc(1, 2));
        // |0-3| clamps to 1.
        assert_eq!(l0_distance(&f, &h).unwrap(), sc(1, 1));
    }

    #[test]
    fn measure_algebra_distance_frozen_values() {
        let sp = AtomSpace::new(["a", "b"]).unwrap();
        let m = Measure::new(sp, vec![sc(1, 1), sc(1, 1)]).unwrap();
        let a: BTreeSet<usize> = [0].into_iter().collect();
        let b: BTreeSet<usize> = [1].into_iter().collect();
        assert_eq!(measure_algebra_distance(&a, &a, &m).unwrap(), sc(0, 1));
        assert_eq!(measure_algebra_distance(&a, &b, &m).unwrap(), sc(1, 1));
        // Symmetric difference of a set with itself plus a null atom.
        let sp2 = AtomSpace::new(["a", "b"]).unwrap();
        let m2 = Measure::new(sp2, vec![sc(1, 1), sc(0, 1)]).unwrap();
        let c: BTreeSet<usize> = [0, 1].into_iter().collect();
        let d: BTreeSet<usize> = [0].into_iter().collect();
        assert_eq!(measure_algebra_distance(&c, &d, &m2).unwrap(), sc(0, 1));
    }

    fn two_fiber_map() -> (Arc<AtomSpace>, PointMap) {
        let sp = space3();
        let target = AtomSpace::new(["y1", "y2"]).unwrap();
        let phi = PointMap::new(sp.clone(), target, vec![0, 0, 1]).unwrap();
        (sp, phi)
    }

    #[test]
    fn pushforward_adds_fiber_masses() {
        let (sp, phi) = two_fiber_map();
        let m = Measure::new(sp, vec![sc(1, 1), sc(1, 1), sc(2, 1)]).unwrap();
        let my = pushforward(&phi, &m).unwrap();
        assert_eq!(my.mass(0), &sc(2, 1));
        assert_eq!(my.mass(1), &sc(2, 1));

        let id = PointMap::identity(m.space().clone());
        assert_eq!(pushforward(&id, &m).unwrap().as_ref(), m.as_ref());
    }

    #[test]
    fn disintegrate_two_fibers() {
        let (sp, phi) = two_fiber_map();
        let m = Measure::new(sp, vec![sc(1, 1), sc(1, 1), sc(2, 1)]).unwrap();
        let d = disintegrate(&phi, &m).unwrap();
        assert_eq!(d.conditional(0).unwrap(), &vec![sc(1, 2), sc(1, 2), sc(0, 1)]);
        assert_eq!(d.conditional(1).unwrap(), &vec![sc(0, 1), sc(0, 1), sc(1, 1)]);
    }

    #[test]
    fn disintegrate_identity_gives_point_masses() {
        let sp = space3();
        let m = Measure::new(sp.clone(), vec![sc(1, 1), sc(2, 1), sc(3, 1)]).unwrap();
        let id = PointMap::identity(sp);
        let d = disintegrate(&id, &m).unwrap();
        for (i, x) in m.positive_atoms().into_iter().enumerate() {
            let cond = &d.conditional(x).unwrap();
            for j in 0..cond.len() {
                let expect = if j == x { sc(1, 1) } else { sc(0, 1) };
                assert_eq!(cond[j], expect, "conditional {i} slot {j}");
            }
        }
    }

    /// Oracle for the reconstruction identity: integrate every indicator
    /// directly and through the conditional family, demand exact equality.
    fn check_reconstruction_on_indicators(phi: &PointMap, m: &Arc<Measure>) {
        let d = disintegrate(phi, m).unwrap();
        let my = d.base().clone();
        let n = m.space().len();
        for bits in 0..(1u32 << n) {
            let set: BTreeSet<usize> = (0..n).filter(|i| bits >> i & 1 == 1).collect();
            let f = project_class(&TotalFunction::indicator(m.space().clone(), &set), m).unwrap();
            let direct = f.integral();
            let mut via_family = Scalar::zero();
            for y in my.positive_atoms() {
                let cond = d.conditional(y).unwrap();
                let mut inner = Scalar::zero();
                for (x, fv) in f.entries() {
                    inner = inner + fv.clone() * cond[x].clone();
                }
                via_family = via_family + inner * my.mass(y).clone();
            }
            assert_eq!(direct, via_family, "indicator bits {bits:b}");
        }
    }

    #[test]
    fn disintegrate_uneven_masses_reconstructs() {
        let sp = AtomSpace::new(["a", "b"]).unwrap();
        let target = AtomSpace::new(["y"]).unwrap();
        let phi = PointMap::new(sp.clone(), target, vec![0, 0]).unwrap();
        let m = Measure::new(sp, vec![sc(1, 1), sc(3, 1)]).unwrap();
        let d = disintegrate(&phi, &m).unwrap();
        assert_eq!(d.conditional(0).unwrap(), &vec![sc(1, 4), sc(3, 4)]);
        check_reconstruction_on_indicators(&phi, &m);
    }

    #[test]
    fn disintegrate_reconstructs_with_null_atoms() {
        let (sp, phi) = two_fiber_map();
        let m = Measure::new(sp, vec![sc(1, 1), sc(0, 1), sc(2, 1)]).unwrap();
        check_reconstruction_on_indicators(&phi, &m);
    }

    #[test]
    fn pr_phi_constant_is_constant() {
        let (sp, phi) = two_fiber_map();
        let m = Measure::new(sp, vec![sc(1, 1), sc(1, 1), sc(2, 1)]).unwrap();
        let f = FunctionClass::constant(m.clone(), sc(7, 1));
        let pf = pr_phi_function(&f, &phi, &m).unwrap();
        assert!(pf.values().iter().all(|v| v == &sc(7, 1)));
    }

    #[test]
    fn pr_phi_agrees_with_radon_nikodym_path() {
        let (sp, phi) = two_fiber_map();
        let m = Measure::new(sp, vec![sc(1, 1), sc(1, 1), sc(2, 1)]).unwrap();
        let f = FunctionClass::new(m.clone(), vec![sc(4, 1), sc(0, 1), sc(5, 1)]).unwrap();
        let by_disint = pr_phi_function(&f, &phi, &m).unwrap();
        let by_rn = pr_phi_function_rn(&f, &phi, &m).unwrap();
        assert_eq!(by_disint.values(), by_rn.values());
        assert_eq!(by_disint.values(), &[sc(2, 1), sc(5, 1)]);
    }

    #[test]
    fn pr_phi_blows_up_average_of_dyadic_tail() {
        // Four atoms with masses 1/2, 1/4, 1/8 and a remainder atom 1/8
        // absorbing the tail; f doubles against each halving mass, so the
        // fiber average is exactly the truncation depth.
        let sp = AtomSpace::new(["x1", "x2", "x3", "r"]).unwrap();
        let m = Measure::new(
            sp.clone(),
            vec![sc(1, 2), sc(1, 4), sc(1, 8), sc(1, 8)],
        )
        .unwrap();
        let target = AtomSpace::new(["y"]).unwrap();
        let phi = PointMap::new(sp, target, vec![0, 0, 0, 0]).unwrap();
        let f = FunctionClass::new(
            m.clone(),
            vec![sc(2, 1), sc(4, 1), sc(8, 1), sc(0, 1)],
        )
        .unwrap();
        let pf = pr_phi_function(&f, &phi, &m).unwrap();
        assert_eq!(pf.values(), &[sc(3, 1)]);
    }

    #[test]
    fn pr_phi_after_pullback_is_identity() {
        let (sp, phi) = two_fiber_map();
        let m = Measure::new(sp, vec![sc(1, 1), sc(1, 1), sc(2, 1)]).unwrap();
        let my = pushforward(&phi, &m).unwrap();
        let g = FunctionClass::new(my.clone(), vec![sc(9, 1), sc(-3, 1)]).unwrap();
        let pulled = pullback_function(&g, &phi, &m).unwrap();
        let back = pr_phi_function(&pulled, &phi, &m).unwrap();
        assert_eq!(back.values(), g.values());
    }

    #[test]
    fn glue_functions_splices_blocks() {
        let sp = space3();
        let m = Measure::new(sp, vec![sc(1, 1), sc(1, 1), sc(0, 1)]).unwrap();
        let one = FunctionClass::constant(m.clone(), sc(1, 1));
        let two = FunctionClass::constant(m.clone(), sc(2, 1));
        let blocks = vec![
            [0usize].into_iter().collect::<BTreeSet<_>>(),
            [1usize, 2].into_iter().collect(),
        ];
        let glued = glue_functions(&m, &blocks, &[one.clone(), two.clone()]).unwrap();
        assert_eq!(glued.values(), &[sc(1, 1), sc(2, 1)]);

        // Single block: returns the part itself.
        let whole: BTreeSet<usize> = [0, 1, 2].into_iter().collect();
        let same = glue_functions(&m, &[whole], std::slice::from_ref(&two)).unwrap();
        assert_eq!(same.values(), two.values());

        // Overlapping blocks rejected.
        let bad = vec![
            [0usize, 1].into_iter().collect::<BTreeSet<_>>(),
            [1usize].into_iter().collect(),
        ];
        assert!(glue_functions(&m, &bad, &[one.clone(), two.clone()]).is_err());

        // Gap rejected.
        let gap = vec![[0usize].into_iter().collect::<BTreeSet<_>>()];
        assert!(glue_functions(&m, &gap, &[one]).is_err());
    }

    #[test]
    fn json_round_trips() {
        let v: serde_json::Value =
            serde_json::from_str(r#"{"mass":{"a":1,"b":"1/3","c":0}}"#).unwrap();
        let m = Measure::from_json(&v).unwrap();
        assert_eq!(m.space().names(), &["a", "b", "c"]);
        assert_eq!(m.mass(1), &sc(1, 3));
        assert_eq!(m.positive_atoms(), vec![0, 1]);
        let back = Measure::from_json(&m.to_json()).unwrap();
        assert_eq!(back.as_ref(), m.as_ref());

        let fj: serde_json::Value = serde_json::from_str(r#"{"values":{"a":2,"b":"5/2"}}"#).unwrap();
        let f = FunctionClass::from_json(&fj, &m).unwrap();
        assert_eq!(f.values(), &[sc(2, 1), sc(5, 2)]);
        let f2 = FunctionClass::from_json(&f.to_json(), &m).unwrap();
        assert_eq!(f2.values(), f.values());

        let mj: serde_json::Value =
            serde_json::from_str(r#"{"assign":{"a":"y1","b":"y1","c":"y2"}}"#).unwrap();
        let phi = PointMap::from_json(&mj, m.space()).unwrap();
        assert_eq!(phi.target().names(), &["y1", "y2"]);
        assert_eq!(phi.apply(2), 1);
        let phi2 = PointMap::from_json(&phi.to_json(), m.space()).unwrap();
        assert_eq!(phi2, phi);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(AtomSpace::new(Vec::<String>::new()).is_err());
        assert!(AtomSpace::new(["a", "a"]).is_err());
        let sp = AtomSpace::new(["a"]).unwrap();
        assert!(Measure::new(sp.clone(), vec![sc(-1, 1)]).is_err());
        assert!(Measure::new(sp.clone(), vec![]).is_err());
        let zero = Measure::new(sp, vec![sc(0, 1)]).unwrap();
        let f = FunctionClass::zero(zero.clone());
        assert!(matches!(
            l0_distance(&f, &f),
            Err(FiberError::ZeroTotalMass)
        ));
    }
}

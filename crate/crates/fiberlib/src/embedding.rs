//! Finite-resolution universal-space machinery: a truncated Cantor set, the
//! coordinate surjection onto the cube, a retraction onto planted address
//! sets, functional nets on dual spheres, and per-fiber linear embeddings
//! into the space of functions on the Cantor set with a certified recovery
//! defect.
//!
//! Every ambient coordinate of an embedded vector is a net functional
//! applied to the vector, so the sup norm of the image never exceeds the
//! fiber norm; the certificate bounds the loss from below. Polytopal fibers
//! get exact nets (defect zero); smooth fibers of rank one or two get sharp
//! small certificates; higher smooth ranks fall back to a conservative
//! lattice bound that is reported honestly rather than hidden.

use crate::error::{FiberError, Result};
use crate::linalg::{self, Mat};
use crate::norms::FiberNorm;
use crate::scalar::{sdot, Scalar};
use serde::{Deserialize, Serialize};

const MAX_DEPTH: usize = 22;

/// Point of the depth-d Cantor set: digits over {0,2}, lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CantorPoint {
    digits: Vec<u8>,
}

impl CantorPoint {
    pub fn new(digits: Vec<u8>) -> Result<Self> {
        if digits.is_empty() || digits.len() > MAX_DEPTH {
            return Err(FiberError::InvalidInput(format!(
                "depth must be in 1..={MAX_DEPTH}"
            )));
        }
        if digits.iter().any(|&d| d != 0 && d != 2) {
            return Err(FiberError::InvalidInput("digits must be 0 or 2".into()));
        }
        Ok(CantorPoint { digits })
    }

    /// idx-th point in lexicographic order at the given depth.
    pub fn from_index(idx: usize, depth: usize) -> Result<Self> {
        if depth == 0 || depth > MAX_DEPTH || idx >= (1usize << depth) {
            return Err(FiberError::InvalidInput("index out of range".into()));
        }
        let digits = (0..depth)
            .map(|n| if idx >> (depth - 1 - n) & 1 == 1 { 2 } else { 0 })
            .collect();
        Ok(CantorPoint { digits })
    }

    pub fn index(&self) -> usize {
        self.digits
            .iter()
            .fold(0usize, |acc, &d| (acc << 1) | usize::from(d == 2))
    }

    pub fn depth(&self) -> usize {
        self.digits.len()
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }
}

/// d(a,b) = sum |a_n - b_n| / 3^n, n starting at 1.
pub fn cantor_metric(a: &CantorPoint, b: &CantorPoint) -> Result<Scalar> {
    if a.depth() != b.depth() {
        return Err(FiberError::DimensionMismatch {
            expected: a.depth(),
            got: b.depth(),
        });
    }
    let mut acc = Scalar::zero();
    let mut weight = Scalar::one();
    let third = Scalar::ratio(1, 3);
    for (&x, &y) in a.digits.iter().zip(&b.digits) {
        weight = weight * third.clone();
        if x != y {
            acc = acc + Scalar::from_int(2) * weight.clone();
        }
    }
    Ok(acc)
}

/// Integer comparison key for the Cantor distance: sum of digit differences
/// weighted 3^(d-n). Strictly order-isomorphic to the metric (base-3 digit
/// uniqueness), safe in u64 up to the depth cap.
fn cantor_key(a: &CantorPoint, b: &CantorPoint) -> u64 {
    let d = a.depth();
    let mut acc: u64 = 0;
    let mut weight: u64 = 3u64.pow(d as u32 - 1);
    for n in 0..d {
        if a.digits[n] != b.digits[n] {
            acc += 2 * weight;
        }
        if n + 1 < d {
            weight /= 3;
        }
    }
    acc
}

/// Round-robin digit distribution onto K cube coordinates: coordinate k
/// collects digits k, k+K, ..., reads them as binary (2 -> 1, first digit
/// most significant), scales to [0,1] by the all-ones denominator, and maps
/// affinely onto [-1,1]. All-zero digits give -1, all-two digits give +1.
pub fn psi_surjection(a: &CantorPoint, k: usize) -> Result<Vec<Scalar>> {
    if k == 0 {
        return Err(FiberError::InvalidInput("need at least one coordinate".into()));
    }
    let mut out = Vec::with_capacity(k);
    for coord in 0..k {
        let bits: Vec<u64> = a
            .digits
            .iter()
            .skip(coord)
            .step_by(k)
            .map(|&d| u64::from(d == 2))
            .collect();
        let t = bits.len() as u32;
        if t == 0 {
            out.push(Scalar::from_int(-1));
            continue;
        }
        let int: u64 = bits.iter().fold(0, |acc, &b| (acc << 1) | b);
        let den = (1u64 << t) - 1;
        let unit = if den == 0 {
            Scalar::zero()
        } else {
            Scalar::ratio(int as i64, den as i64)
        };
        out.push(Scalar::from_int(2) * unit - Scalar::one());
    }
    Ok(out)
}

/// Nearest element of the planted set; exact ties (only possible between
/// duplicate list entries) go to the lexicographically smaller point.
pub fn retract<'a>(a: &CantorPoint, k_image: &'a [CantorPoint]) -> Result<&'a CantorPoint> {
    if k_image.is_empty() {
        return Err(FiberError::InvalidInput("empty retraction target".into()));
    }
    let mut best = &k_image[0];
    let mut best_key = cantor_key(a, best);
    for p in &k_image[1..] {
        if p.depth() != a.depth() {
            return Err(FiberError::DimensionMismatch {
                expected: a.depth(),
                got: p.depth(),
            });
        }
        let key = cantor_key(a, p);
        if key < best_key || (key == best_key && p < best) {
            best = p;
            best_key = key;
        }
    }
    Ok(best)
}

/// Functions on the depth-d Cantor set with the sup norm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmbientSpace {
    depth: usize,
}

impl AmbientSpace {
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(FiberError::InvalidInput(format!(
                "depth must be in 1..={MAX_DEPTH}"
            )));
        }
        Ok(AmbientSpace { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        1 << self.depth
    }

    pub fn point(&self, idx: usize) -> Result<CantorPoint> {
        CantorPoint::from_index(idx, self.depth)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmbientVector {
    pub depth: usize,
    pub values: Vec<Scalar>,
}

impl AmbientVector {
    pub fn sup_norm(&self) -> Scalar {
        self.values
            .iter()
            .map(Scalar::abs)
            .fold(Scalar::zero(), Scalar::max)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "depth": self.depth, "values": self.values })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let depth = v
            .get("depth")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| FiberError::Parse("missing depth".into()))? as usize;
        let values: Vec<Scalar> = serde_json::from_value(
            v.get("values")
                .cloned()
                .ok_or_else(|| FiberError::Parse("missing values".into()))?,
        )
        .map_err(|e| FiberError::Parse(e.to_string()))?;
        if depth == 0 || depth > MAX_DEPTH || values.len() != 1 << depth {
            return Err(FiberError::Parse("depth and value count disagree".into()));
        }
        Ok(AmbientVector { depth, values })
    }
}

/// Net of functionals in the dual unit ball together with its cube
/// coordinates and a recovery certificate.
#[derive(Clone, Debug)]
pub struct FunctionalNet {
    /// Functionals, each of dual norm <= 1.
    pub duals: Vec<Vec<Scalar>>,
    /// Coordinates omega[v_k]/max(|v_k|,1) per probe, inside [-1,1]^K.
    pub iota_images: Vec<Vec<Scalar>>,
    /// Geometric covering estimate backing the certificate; 0 means exact.
    pub covering_radius: f64,
    /// Sound lower-recovery defect: sup over the net of |omega(v)| is at
    /// least (1 - epsilon) |v| for every v.
    pub epsilon: f64,
    /// True when the net recovers every norm exactly.
    pub exact: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EmbedParams {
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_embed_tol")]
    pub tol: f64,
}

fn default_depth() -> usize {
    10
}

fn default_resolution() -> usize {
    64
}

fn default_embed_tol() -> f64 {
    1e-6
}

impl Default for EmbedParams {
    fn default() -> Self {
        EmbedParams {
            depth: default_depth(),
            resolution: default_resolution(),
            tol: default_embed_tol(),
        }
    }
}

fn probes_span_quotient(n: &FiberNorm, probes: &[Vec<Scalar>]) -> Result<bool> {
    let r = n.rank();
    if r == 0 {
        return Ok(true);
    }
    if probes.is_empty() {
        return Ok(false);
    }
    let p = n.quotient_projector();
    let projected: Mat = probes.iter().map(|v| linalg::mat_vec(&p, v)).collect();
    Ok(linalg::rank(&projected) == r)
}

/// Norming functionals of an angular grid of primal directions, for rank-2
/// quotients. Returns (duals, covering, epsilon, hilbert_exactness).
fn rank2_angle_net(
    n: &FiberNorm,
    m: usize,
) -> Result<(Vec<Vec<Scalar>>, f64, f64)> {
    let basis = n.quotient_basis();
    debug_assert_eq!(basis.len(), 2);
    let bt = linalg::transpose(&basis);
    let nq = n.compose(&bt)?;
    // Inner-product geometry: whiten, so the angle grid is exactly uniform
    // on the norm's own circle and the mid-gap bound is sharp.
    let whitening: Option<Vec<Vec<f64>>> = nq.as_quadratic_form().and_then(|g| {
        let (vals, vecs) = linalg::sym_eig_f64(&g);
        if vals.iter().any(|&l| l <= 0.0) {
            return None;
        }
        // Rows: preimages of the whitened unit frame.
        Some(
            (0..2)
                .map(|k| vecs[k].iter().map(|&c| c / vals[k].sqrt()).collect())
                .collect(),
        )
    });
    let hilbert = whitening.is_some();
    let mut duals = Vec::with_capacity(m);
    let mut directions: Vec<Vec<Scalar>> = Vec::with_capacity(m);
    for i in 0..m {
        let theta = 2.0 * std::f64::consts::PI * (i as f64) / (m as f64);
        let (c, s) = (theta.cos(), theta.sin());
        let u: Vec<Scalar> = match &whitening {
            Some(w) => (0..2)
                .map(|j| Scalar::Fl(c * w[0][j] + s * w[1][j]))
                .collect(),
            None => vec![Scalar::Fl(c), Scalar::Fl(s)],
        };
        let raw = linalg::mat_vec(&bt, &u);
        let nr = n.eval(&raw)?;
        if !nr.is_positive() {
            continue;
        }
        let unit: Vec<Scalar> = raw.iter().map(|x| x / &nr).collect();
        duals.push(n.norming_functional(&unit)?.omega);
        directions.push(unit);
    }
    if duals.len() < 3 {
        return Err(FiberError::DegenerateProbes(
            "angular net collapsed".into(),
        ));
    }
    if hilbert {
        // Uniform whitened grid: the worst vector sits mid-gap.
        let gap = std::f64::consts::PI / (duals.len() as f64);
        Ok((duals, gap, 1.0 - gap.cos()))
    } else {
        // Generic smooth sphere: consecutive chord lengths in the fiber
        // norm bound the covering, and the recovery loss is twice that.
        let mut smax = 0.0_f64;
        for i in 0..directions.len() {
            let j = (i + 1) % directions.len();
            let diff: Vec<Scalar> = directions[i]
                .iter()
                .zip(&directions[j])
                .map(|(a, b)| a - b)
                .collect();
            smax = smax.max(n.eval(&diff)?.to_f64());
        }
        Ok((duals, smax, (2.0 * smax).min(1.0)))
    }
}

/// Lattice fallback for smooth quotients of rank >= 3: norming functionals
/// of normalized lattice directions. The certificate is coarse and grows
/// with the rank; it is reported, never tightened artificially.
fn lattice_net(n: &FiberNorm, budget: usize) -> Result<(Vec<Vec<Scalar>>, f64, f64)> {
    let basis = n.quotient_basis();
    let r = basis.len();
    let bt = linalg::transpose(&basis);
    let nq = n.compose(&bt)?;
    // Coordinate extents of the unit ball in quotient coordinates.
    let mut extents = Vec::with_capacity(r);
    for i in 0..r {
        let mut e = vec![Scalar::zero(); r];
        e[i] = Scalar::one();
        extents.push(nq.dual_norm(&e)?.to_f64().max(1e-9));
    }
    let per_dim = ((budget as f64).powf(1.0 / r as f64).floor() as usize).max(2);
    let steps: Vec<f64> = extents.iter().map(|&ext| 2.0 * ext / per_dim as f64).collect();
    // Unit fiber-norm cost of one infinity-ball cell.
    let mut cell = 0.0_f64;
    for i in 0..r {
        let mut e = vec![Scalar::zero(); r];
        e[i] = Scalar::one();
        cell += 0.5 * steps[i] * nq.eval(&e)?.to_f64();
    }
    let covering = 2.0 * cell;
    let epsilon = (4.0 * cell).min(1.0);
    let mut duals = Vec::new();
    let mut idx = vec![0usize; r];
    loop {
        let g: Vec<Scalar> = (0..r)
            .map(|i| Scalar::Fl(-extents[i] + steps[i] * (idx[i] as f64 + 0.5)))
            .collect();
        let norm_g = nq.eval(&g)?.to_f64();
        if norm_g > 0.4 {
            let unit_q: Vec<Scalar> = g.iter().map(|x| x / &Scalar::Fl(norm_g)).collect();
            let unit = linalg::mat_vec(&bt, &unit_q);
            duals.push(n.norming_functional(&unit)?.omega);
        }
        let mut carry = 0;
        loop {
            idx[carry] += 1;
            if idx[carry] < per_dim {
                break;
            }
            idx[carry] = 0;
            carry += 1;
            if carry == r {
                return finish_lattice(duals, covering, epsilon);
            }
        }
    }
}

fn finish_lattice(
    duals: Vec<Vec<Scalar>>,
    covering: f64,
    epsilon: f64,
) -> Result<(Vec<Vec<Scalar>>, f64, f64)> {
    if duals.is_empty() {
        return Err(FiberError::DegenerateProbes("lattice net collapsed".into()));
    }
    Ok((duals, covering, epsilon))
}

/// Net on the dual unit sphere of a fiber: exact polytope vertices where the
/// geometry is polyhedral, sharp angular nets on rank-2 smooth quotients, a
/// reported-coarse lattice otherwise. Probe norming functionals are always
/// included, so probe norms are recovered exactly.
pub fn build_functional_net(
    n: &FiberNorm,
    probes: &[Vec<Scalar>],
    resolution: usize,
) -> Result<FunctionalNet> {
    if resolution < 2 {
        return Err(FiberError::UnsatisfiableParams("resolution < 2".into()));
    }
    if !probes_span_quotient(n, probes)? {
        return Err(FiberError::DegenerateProbes(
            "probes do not span the quotient".into(),
        ));
    }
    let r = n.rank();
    let mut duals: Vec<Vec<Scalar>>;
    let covering_radius;
    let epsilon;
    let mut exact = false;

    if r == 0 {
        duals = Vec::new();
        covering_radius = 0.0;
        epsilon = 0.0;
        exact = true;
    } else if let Some(verts) = n.dual_ball_vertices() {
        duals = verts;
        covering_radius = 0.0;
        epsilon = 0.0;
        exact = true;
        // Enrich with rational midpoints up to the resolution budget; they
        // stay inside the dual ball and change nothing about exactness.
        let base = duals.clone();
        'outer: for i in 0..base.len() {
            for j in i + 1..base.len() {
                if duals.len() >= resolution.max(base.len()) {
                    break 'outer;
                }
                let mid: Vec<Scalar> = base[i]
                    .iter()
                    .zip(&base[j])
                    .map(|(a, b)| (a + b) * Scalar::ratio(1, 2))
                    .collect();
                if mid.iter().all(Scalar::is_zero) {
                    continue;
                }
                duals.push(mid);
            }
        }
    } else if r == 1 {
        // Two-point dual sphere: the norming functional of any direction of
        // positive norm, and its negative.
        let probe = probes
            .iter()
            .find(|v| {
                n.eval(v)
                    .map(|x| x.is_positive())
                    .unwrap_or(false)
            })
            .ok_or_else(|| FiberError::DegenerateProbes("no probe of positive norm".into()))?;
        let nf = n.norming_functional(probe)?;
        let neg = nf.omega.iter().map(|x| -x.clone()).collect();
        duals = vec![nf.omega, neg];
        covering_radius = 0.0;
        epsilon = 0.0;
        exact = true;
    } else if r == 2 {
        let (d, cov, eps) = rank2_angle_net(n, resolution)?;
        duals = d;
        covering_radius = cov;
        epsilon = eps;
    } else {
        let (d, cov, eps) = lattice_net(n, resolution)?;
        duals = d;
        covering_radius = cov;
        epsilon = eps;
    }

    // Norming functionals of the probes themselves.
    if !exact {
        for p in probes {
            if n.eval(p)?.is_positive() {
                duals.push(n.norming_functional(p)?.omega);
            }
        }
    }

    let iota_images = duals
        .iter()
        .map(|omega| {
            probes
                .iter()
                .map(|v| {
                    let nv = n.eval(v)?;
                    Ok(sdot(omega, v) / nv.max(Scalar::one()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FunctionalNet {
        duals,
        iota_images,
        covering_radius,
        epsilon,
        exact,
    })
}

/// Linear embedding of one fiber into the ambient space: every address
/// carries a net functional (planted addresses spread across the Cantor set,
/// all others read through the retraction), so embedding is exact functional
/// application coordinate by coordinate.
#[derive(Clone, Debug)]
pub struct FiberEmbedding {
    ambient: AmbientSpace,
    net: FunctionalNet,
    planted: Vec<CantorPoint>,
    /// Net functional index per ambient address; empty net means the zero
    /// fiber and a zero embedding.
    assign: Vec<usize>,
    dim: usize,
    pub epsilon: f64,
}

impl FiberEmbedding {
    pub fn ambient(&self) -> &AmbientSpace {
        &self.ambient
    }

    pub fn net(&self) -> &FunctionalNet {
        &self.net
    }

    pub fn planted(&self) -> &[CantorPoint] {
        &self.planted
    }

    pub fn embed(&self, v: &[Scalar]) -> Result<AmbientVector> {
        if v.len() != self.dim {
            return Err(FiberError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let values = if self.net.duals.is_empty() {
            vec![Scalar::zero(); self.ambient.dim()]
        } else {
            self.assign
                .iter()
                .map(|&j| sdot(&self.net.duals[j], v))
                .collect()
        };
        Ok(AmbientVector {
            depth: self.ambient.depth(),
            values,
        })
    }
}

fn build_embedding(
    n: &FiberNorm,
    probes: &[Vec<Scalar>],
    params: &EmbedParams,
    allow_zero_rank: bool,
) -> Result<FiberEmbedding> {
    let ambient = AmbientSpace::new(params.depth)?;
    if n.rank() == 0 {
        if !allow_zero_rank {
            return Err(FiberError::DegenerateProbes(
                "fiber has rank zero".into(),
            ));
        }
        return Ok(FiberEmbedding {
            ambient,
            net: FunctionalNet {
                duals: Vec::new(),
                iota_images: Vec::new(),
                covering_radius: 0.0,
                epsilon: 0.0,
                exact: true,
            },
            planted: Vec::new(),
            assign: Vec::new(),
            dim: n.dim(),
            epsilon: 0.0,
        });
    }
    let net = build_functional_net(n, probes, params.resolution)?;
    let count = net.duals.len();
    if count > ambient.dim() {
        return Err(FiberError::UnsatisfiableParams(format!(
            "net of {count} functionals cannot be planted at depth {} ({} addresses)",
            params.depth,
            ambient.dim()
        )));
    }
    if net.epsilon > params.tol {
        return Err(FiberError::UnsatisfiableParams(format!(
            "achievable defect {:.3e} exceeds requested tolerance {:.3e}",
            net.epsilon, params.tol
        )));
    }
    let planted: Vec<CantorPoint> = (0..count)
        .map(|j| ambient.point(j * ambient.dim() / count))
        .collect::<Result<Vec<_>>>()?;
    let assign = (0..ambient.dim())
        .map(|idx| {
            let a = ambient.point(idx)?;
            let nearest = retract(&a, &planted)?;
            Ok(planted.iter().position(|p| p == nearest).expect("member"))
        })
        .collect::<Result<Vec<_>>>()?;
    let epsilon = net.epsilon;
    Ok(FiberEmbedding {
        ambient,
        net,
        planted,
        assign,
        dim: n.dim(),
        epsilon,
    })
}

/// Embedding of a single fiber; rejects rank-zero fibers and unreachable
/// tolerances.
pub fn embed_fiber(
    n: &FiberNorm,
    probes: &[Vec<Scalar>],
    params: &EmbedParams,
) -> Result<FiberEmbedding> {
    if probes.iter().all(|p| {
        n.eval(p)
            .map(|x| !x.is_positive())
            .unwrap_or(true)
    }) {
        return Err(FiberError::DegenerateProbes(
            "no probe of positive norm".into(),
        ));
    }
    build_embedding(n, probes, params, false)
}

/// Per-atom data of a measurable collection: fiber geometry, spanning
/// probes, and a norming functional per probe of positive norm.
#[derive(Clone, Debug)]
pub struct CollectionAtom {
    pub fiber: FiberNorm,
    pub probes: Vec<Vec<Scalar>>,
    /// One entry per probe; `None` where the probe has zero norm.
    pub norming: Vec<Option<Vec<Scalar>>>,
}

#[derive(Clone, Debug)]
pub struct MeasurableCollection {
    pub atoms: Vec<CollectionAtom>,
}

impl MeasurableCollection {
    /// Checks the collection laws: spanning probes, witnessing functionals
    /// of unit dual norm, and the pairing matrix bound.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let count = match self.atoms.first() {
            Some(a) => a.probes.len(),
            None => return Err(FiberError::InvalidInput("empty collection".into())),
        };
        for (i, atom) in self.atoms.iter().enumerate() {
            if atom.probes.len() != count || atom.norming.len() != count {
                return Err(FiberError::InvalidInput(format!(
                    "probe count differs at atom {i}"
                )));
            }
            if !probes_span_quotient(&atom.fiber, &atom.probes)? {
                return Err(FiberError::DegenerateProbes(format!(
                    "probes do not span at atom {i}"
                )));
            }
            for (k, probe) in atom.probes.iter().enumerate() {
                let norm = atom.fiber.eval(probe)?;
                match &atom.norming[k] {
                    Some(omega) => {
                        let pairing = sdot(omega, probe);
                        if (pairing.to_f64() - norm.to_f64()).abs() > tol * norm.to_f64().max(1.0) {
                            return Err(FiberError::InvalidInput(format!(
                                "functional {k} does not witness its probe at atom {i}"
                            )));
                        }
                        let dn = atom.fiber.dual_norm(omega)?.to_f64();
                        if dn > 1.0 + tol {
                            return Err(FiberError::InvalidInput(format!(
                                "functional {k} leaves the dual ball at atom {i}"
                            )));
                        }
                        // Pairing-matrix bound against every probe.
                        for other in &atom.probes {
                            let entry = sdot(omega, other).to_f64().abs();
                            let bound = atom.fiber.eval(other)?.to_f64();
                            if entry > bound * (1.0 + tol) + tol {
                                return Err(FiberError::InvalidInput(format!(
                                    "pairing matrix unbounded at atom {i}"
                                )));
                            }
                        }
                    }
                    None => {
                        if norm.is_positive() {
                            return Err(FiberError::InvalidInput(format!(
                                "probe {k} at atom {i} lacks a witnessing functional"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Probes plus witnesses generated straight from the fibers.
    pub fn from_fibers_with_probes(fibers: &[FiberNorm], probes: &[Vec<Vec<Scalar>>]) -> Result<Self> {
        if fibers.len() != probes.len() {
            return Err(FiberError::DimensionMismatch {
                expected: fibers.len(),
                got: probes.len(),
            });
        }
        let atoms = fibers
            .iter()
            .zip(probes)
            .map(|(fiber, ps)| {
                let norming = ps
                    .iter()
                    .map(|p| {
                        if fiber.eval(p)?.is_positive() {
                            Ok(Some(fiber.norming_functional(p)?.omega))
                        } else {
                            Ok(None)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(CollectionAtom {
                    fiber: fiber.clone(),
                    probes: ps.clone(),
                    norming,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasurableCollection { atoms })
    }
}

/// Embeddings of every atom of a collection into one shared ambient space.
#[derive(Clone, Debug)]
pub struct CollectionEmbedding {
    pub ambient: AmbientSpace,
    pub handles: Vec<FiberEmbedding>,
}

pub fn embed_collection(
    collection: &MeasurableCollection,
    params: &EmbedParams,
) -> Result<CollectionEmbedding> {
    collection.validate(1e-9_f64.max(params.tol.min(1e-6)))?;
    let ambient = AmbientSpace::new(params.depth)?;
    let mut handles: Vec<FiberEmbedding> = Vec::with_capacity(collection.atoms.len());
    for (i, atom) in collection.atoms.iter().enumerate() {
        // The whole pipeline is deterministic, so identical fiber data
        // reuses the handle already built.
        if let Some(j) = (0..i).find(|&j| {
            collection.atoms[j].fiber == atom.fiber && collection.atoms[j].probes == atom.probes
        }) {
            handles.push(handles[j].clone());
            continue;
        }
        handles.push(build_embedding(&atom.fiber, &atom.probes, params, true)?);
    }
    Ok(CollectionEmbedding { ambient, handles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::PExp;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sc(n: i64, d: i64) -> Scalar {
        Scalar::ratio(n, d)
    }

    fn cp(digits: &[u8]) -> CantorPoint {
        CantorPoint::new(digits.to_vec()).unwrap()
    }

    #[test]
    fn cantor_metric_frozen_values() {
        let a = cp(&[0, 0]);
        assert_eq!(cantor_metric(&a, &a).unwrap(), sc(0, 1));
        assert_eq!(cantor_metric(&a, &cp(&[2, 0])).unwrap(), sc(2, 3));
        assert_eq!(cantor_metric(&a, &cp(&[2, 2])).unwrap(), sc(8, 9));
        assert!(cantor_metric(&a, &cp(&[0])).is_err());
    }

    #[test]
    fn cantor_metric_is_a_metric_and_key_agrees() {
        let depth = 3;
        let pts: Vec<CantorPoint> = (0..8).map(|i| CantorPoint::from_index(i, depth).unwrap()).collect();
        for x in &pts {
            for y in &pts {
                let dxy = cantor_metric(x, y).unwrap();
                assert_eq!(dxy, cantor_metric(y, x).unwrap());
                assert_eq!(dxy.is_zero(), x == y);
                for z in &pts {
                    let dxz = cantor_metric(x, z).unwrap();
                    let dzy = cantor_metric(z, y).unwrap();
                    assert!(dxy <= dxz + dzy);
                }
                // The integer key induces the same order as the metric.
                for z in &pts {
                    let dxz = cantor_metric(x, z).unwrap();
                    assert_eq!(dxy < dxz, cantor_key(x, y) < cantor_key(x, z));
                }
            }
        }
    }

    #[test]
    fn psi_frozen_values() {
        let zero = cp(&[0; 6]);
        assert_eq!(psi_surjection(&zero, 3).unwrap(), vec![sc(-1, 1); 3]);

        let two = cp(&[2; 6]);
        let img = psi_surjection(&two, 3).unwrap();
        let bound = 1.0 - 2f64.powi(-(6 / 3));
        for c in &img {
            assert!(c.to_f64() >= bound, "coordinate {c:?} under {bound}");
            assert!(c.to_f64() <= 1.0);
        }
        // Determinism.
        assert_eq!(psi_surjection(&two, 3).unwrap(), img);

        // Surjection onto the corners: all-zero and all-two hit the cube
        // extremes exactly.
        assert_eq!(img, vec![sc(1, 1); 3]);
    }

    #[test]
    fn psi_image_in_cube_many_points() {
        for idx in 0..(1 << 8) {
            let a = CantorPoint::from_index(idx, 8).unwrap();
            for k in [1, 2, 3, 5] {
                for c in psi_surjection(&a, k).unwrap() {
                    let x = c.to_f64();
                    assert!((-1.0..=1.0).contains(&x));
                }
            }
        }
    }

    #[test]
    fn retract_nearest_and_idempotent() {
        let members = vec![cp(&[0, 0, 0]), cp(&[2, 2, 0]), cp(&[2, 2, 2])];
        // Members retract to themselves.
        for m in &members {
            assert_eq!(retract(m, &members).unwrap(), m);
        }
        // Nearest under the metric, exhaustively at depth 3.
        for idx in 0..8 {
            let a = CantorPoint::from_index(idx, 3).unwrap();
            let r = retract(&a, &members).unwrap();
            let dr = cantor_metric(&a, r).unwrap();
            for m in &members {
                assert!(dr <= cantor_metric(&a, m).unwrap());
            }
            // Idempotent.
            assert_eq!(retract(r, &members).unwrap(), r);
        }
        // Singleton.
        let single = vec![cp(&[2, 0, 2])];
        assert_eq!(retract(&cp(&[0, 0, 0]), &single).unwrap(), &single[0]);
        // Duplicate entries tie; the point itself (lexicographic order on
        // equal keys) wins deterministically.
        let dup = vec![cp(&[2, 0, 0]), cp(&[2, 0, 0])];
        assert_eq!(retract(&cp(&[0, 0, 0]), &dup).unwrap(), &dup[0]);
        assert!(retract(&cp(&[0, 0, 0]), &[]).is_err());
    }

    fn e(dim: usize, i: usize) -> Vec<Scalar> {
        let mut v = vec![Scalar::zero(); dim];
        v[i] = Scalar::one();
        v
    }

    #[test]
    fn net_for_one_dimensional_fiber() {
        let n = FiberNorm::unweighted_lp(PExp::one(), 1).unwrap();
        let net = build_functional_net(&n, &[e(1, 0)], 8).unwrap();
        assert!(net.exact);
        assert_eq!(net.covering_radius, 0.0);
        assert_eq!(net.epsilon, 0.0);
        let mut ds: Vec<Vec<Scalar>> = net.duals.clone();
        ds.sort();
        assert_eq!(ds, vec![vec![sc(-1, 1)], vec![sc(1, 1)]]);
    }

    #[test]
    fn net_for_ell1_is_exact_box() {
        let n = FiberNorm::unweighted_lp(PExp::one(), 2).unwrap();
        let net = build_functional_net(&n, &[e(2, 0), e(2, 1)], 4).unwrap();
        assert!(net.exact);
        assert_eq!(net.epsilon, 0.0);
        // Dual ball vertices are the four sign vectors.
        for signs in [[1, 1], [1, -1], [-1, 1], [-1, -1]] {
            let v: Vec<Scalar> = signs.iter().map(|&s| Scalar::from_int(s)).collect();
            assert!(net.duals.contains(&v), "missing vertex {signs:?}");
        }
    }

    #[test]
    fn net_for_ell2_reports_arc_bound() {
        let n = FiberNorm::unweighted_lp(PExp::two(), 2).unwrap();
        let net = build_functional_net(&n, &[e(2, 0), e(2, 1)], 360).unwrap();
        assert!(!net.exact);
        assert!(net.covering_radius <= std::f64::consts::PI / 360.0 + 1e-12);
        assert!(net.epsilon <= 1.0 - (std::f64::consts::PI / 360.0).cos() + 1e-12);
        // All duals inside the ball.
        for d in &net.duals {
            assert!(n.dual_norm(d).unwrap().to_f64() <= 1.0 + 1e-9);
        }
        // Iota coordinates inside the cube.
        for row in &net.iota_images {
            for c in row {
                assert!(c.to_f64().abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_probes_rejected() {
        let n = FiberNorm::unweighted_lp(PExp::two(), 2).unwrap();
        assert!(matches!(
            build_functional_net(&n, &[e(2, 0)], 8),
            Err(FiberError::DegenerateProbes(_))
        ));
    }

    #[test]
    fn embed_fiber_linear_and_certified() {
        let params = EmbedParams {
            depth: 7,
            resolution: 64,
            tol: 1e-2,
        };
        let cases: Vec<(FiberNorm, Vec<Vec<Scalar>>)> = vec![
            (
                FiberNorm::unweighted_lp(PExp::one(), 1).unwrap(),
                vec![e(1, 0)],
            ),
            (
                FiberNorm::unweighted_lp(PExp::one(), 2).unwrap(),
                vec![e(2, 0), e(2, 1)],
            ),
            (
                FiberNorm::unweighted_lp(PExp::Inf, 2).unwrap(),
                vec![e(2, 0), e(2, 1)],
            ),
            (
                FiberNorm::polyhedral(vec![
                    vec![sc(1, 1), sc(0, 1)],
                    vec![sc(1, 1), sc(1, 1)],
                ])
                .unwrap(),
                vec![e(2, 0), e(2, 1)],
            ),
            (
                FiberNorm::unweighted_lp(PExp::two(), 2).unwrap(),
                vec![e(2, 0), e(2, 1)],
            ),
            (
                FiberNorm::quadratic(vec![
                    vec![sc(2, 1), sc(1, 1)],
                    vec![sc(1, 1), sc(2, 1)],
                ])
                .unwrap(),
                vec![e(2, 0), e(2, 1)],
            ),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for (n, probes) in cases {
            let emb = embed_fiber(&n, &probes, &params).unwrap();
            // Zero goes to zero and the map is exactly linear.
            let z = emb.embed(&vec![Scalar::zero(); n.dim()]).unwrap();
            assert!(z.values.iter().all(Scalar::is_zero));
            let u: Vec<Scalar> = (0..n.dim()).map(|_| sc(rng.gen_range(-5..=5), 1)).collect();
            let v: Vec<Scalar> = (0..n.dim()).map(|_| sc(rng.gen_range(-5..=5), 1)).collect();
            let sum: Vec<Scalar> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
            let eu = emb.embed(&u).unwrap();
            let ev = emb.embed(&v).unwrap();
            let esum = emb.embed(&sum).unwrap();
            for i in 0..esum.values.len() {
                let lin = &eu.values[i] + &ev.values[i];
                if esum.values[i].is_rational() && lin.is_rational() {
                    assert_eq!(esum.values[i], lin);
                } else {
                    // Float nets: the same linear functional, summed in a
                    // different order.
                    assert!((esum.values[i].to_f64() - lin.to_f64()).abs() < 1e-12);
                }
            }
            // Certificate on 1000 random vectors.
            for _ in 0..1000 {
                let w: Vec<Scalar> = (0..n.dim())
                    .map(|_| sc(rng.gen_range(-9..=9), rng.gen_range(1..=3)))
                    .collect();
                let norm = n.eval(&w).unwrap().to_f64();
                let sup = emb.embed(&w).unwrap().sup_norm().to_f64();
                assert!(sup <= norm + 1e-9 * norm.max(1.0), "sup {sup} above norm {norm}");
                assert!(
                    sup >= (1.0 - emb.epsilon) * norm - 1e-9,
                    "sup {sup} under certified floor for norm {norm} (eps {})",
                    emb.epsilon
                );
            }
        }
    }

    #[test]
    fn dim1_absolute_value_recovers_exactly() {
        let n = FiberNorm::unweighted_lp(PExp::one(), 1).unwrap();
        let emb = embed_fiber(&n, &[e(1, 0)], &EmbedParams::default()).unwrap();
        let img = emb.embed(&[sc(2, 1)]).unwrap();
        assert_eq!(img.sup_norm(), sc(2, 1));
        assert_eq!(emb.epsilon, 0.0);
    }

    #[test]
    fn polyhedral_full_net_is_exactly_isometric() {
        let n = FiberNorm::polyhedral(vec![
            vec![sc(1, 1), sc(0, 1), sc(1, 1)],
            vec![sc(0, 1), sc(1, 1), sc(-1, 1)],
            vec![sc(1, 1), sc(1, 1), sc(0, 1)],
        ])
        .unwrap();
        let probes = vec![e(3, 0), e(3, 1), e(3, 2)];
        let emb = embed_fiber(&n, &probes, &EmbedParams {
            depth: 8,
            resolution: 32,
            tol: 0.0,
        })
        .unwrap();
        assert_eq!(emb.epsilon, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..300 {
            let w: Vec<Scalar> = (0..3)
                .map(|_| sc(rng.gen_range(-9..=9), rng.gen_range(1..=4)))
                .collect();
            let norm = n.eval(&w).unwrap();
            let sup = emb.embed(&w).unwrap().sup_norm();
            assert_eq!(sup, norm, "exact isometry broken at {w:?}");
        }
    }

    #[test]
    fn embedding_rejects_unreachable_tolerance() {
        let n = FiberNorm::unweighted_lp(PExp::two(), 2).unwrap();
        let params = EmbedParams {
            depth: 6,
            resolution: 16,
            tol: 1e-9,
        };
        assert!(matches!(
            embed_fiber(&n, &[e(2, 0), e(2, 1)], &params),
            Err(FiberError::UnsatisfiableParams(_))
        ));

        // Oversized net cannot be planted.
        let params = EmbedParams {
            depth: 2,
            resolution: 64,
            tol: 1e-2,
        };
        assert!(matches!(
            embed_fiber(&n, &[e(2, 0), e(2, 1)], &params),
            Err(FiberError::UnsatisfiableParams(_))
        ));
    }

    #[test]
    fn collection_shares_ambient_and_dedupes() {
        let l1 = FiberNorm::unweighted_lp(PExp::one(), 2).unwrap();
        let zero = FiberNorm::lp(PExp::one(), vec![sc(0, 1), sc(0, 1)]).unwrap();
        let probes = vec![e(2, 0), e(2, 1)];
        let coll = MeasurableCollection::from_fibers_with_probes(
            &[l1.clone(), l1.clone(), zero],
            &[probes.clone(), probes.clone(), probes.clone()],
        )
        .unwrap();
        let out = embed_collection(&coll, &EmbedParams {
            depth: 6,
            resolution: 16,
            tol: 1e-6,
        })
        .unwrap();
        assert_eq!(out.handles.len(), 3);
        // Identical atoms produce identical images.
        let v = vec![sc(3, 1), sc(-2, 1)];
        assert_eq!(
            out.handles[0].embed(&v).unwrap(),
            out.handles[1].embed(&v).unwrap()
        );
        // Rank-zero atom embeds to zero with a zero certificate.
        let z = out.handles[2].embed(&v).unwrap();
        assert!(z.values.iter().all(Scalar::is_zero));
        assert_eq!(out.handles[2].epsilon, 0.0);

        // Image subspace dimension equals the fiber rank.
        let images: Mat = probes
            .iter()
            .map(|p| out.handles[0].embed(p).unwrap().values)
            .collect();
        assert_eq!(linalg::rank(&images), l1.rank());
    }

    #[test]
    fn collection_rejects_mismatched_probe_counts() {
        let l1 = FiberNorm::unweighted_lp(PExp::one(), 2).unwrap();
        let coll = MeasurableCollection::from_fibers_with_probes(
            &[l1.clone(), l1],
            &[vec![e(2, 0), e(2, 1)], vec![e(2, 0)]],
        )
        .unwrap();
        assert!(embed_collection(&coll, &EmbedParams::default()).is_err());
    }

    #[test]
    fn ambient_vector_json_round_trip() {
        let v = AmbientVector {
            depth: 2,
            values: vec![sc(1, 2), sc(0, 1), sc(-3, 1), sc(7, 1)],
        };
        let j = v.to_json();
        let back = AmbientVector::from_json(&j).unwrap();
        assert_eq!(back, v);
    }
}

//! Finite-dimensional seminorm fibers: evaluation, kernels, quotients, dual
//! norms, norming functionals, and contraction certificates.
//!
//! Three families cover everything downstream: weighted ell-p, polyhedral
//! (max of finitely many linear functionals), and quadratic forms. Seminorms
//! are the primitive; the kernel is first-class and quotients are taken
//! exactly where degeneracy appears.

use crate::error::{FiberError, Result};
use crate::linalg::{self, Mat};
use crate::scalar::{sdot, ssum, Scalar};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Exponent of a weighted ell-p fiber. `Finite` carries p >= 1.
#[derive(Clone, Debug, PartialEq)]
pub enum PExp {
    Finite(Scalar),
    Inf,
}

impl PExp {
    pub fn one() -> Self {
        PExp::Finite(Scalar::one())
    }

    pub fn two() -> Self {
        PExp::Finite(Scalar::from_int(2))
    }

    pub fn is_one(&self) -> bool {
        matches!(self, PExp::Finite(p) if p == &Scalar::one())
    }

    pub fn is_two(&self) -> bool {
        matches!(self, PExp::Finite(p) if p == &Scalar::from_int(2))
    }

    /// Hoelder conjugate: 1 <-> inf, p <-> p/(p-1).
    pub fn conjugate(&self) -> PExp {
        match self {
            PExp::Inf => PExp::one(),
            PExp::Finite(p) if p == &Scalar::one() => PExp::Inf,
            PExp::Finite(p) => PExp::Finite(p / &(p - &Scalar::one())),
        }
    }
}

impl Serialize for PExp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PExp::Inf => s.serialize_str("inf"),
            PExp::Finite(p) => p.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for PExp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        if v.as_str().map(|s| s.eq_ignore_ascii_case("inf")) == Some(true) {
            return Ok(PExp::Inf);
        }
        let p: Scalar = serde_json::from_value(v).map_err(serde::de::Error::custom)?;
        Ok(PExp::Finite(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormVariant {
    Lp { p: PExp, weights: Vec<Scalar> },
    Polyhedral { rows: Mat },
    Quadratic { q: Mat },
}

/// Seminorm on R^dim.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberNorm {
    dim: usize,
    variant: NormVariant,
}

/// Relative tolerance for kernel membership and rank decisions.
const KERNEL_TOL: f64 = 1e-10;

fn is_rational_mat(m: &Mat) -> bool {
    m.iter().flatten().all(Scalar::is_rational)
}

/// Exact positive-semidefiniteness for a symmetric rational matrix, by
/// pivoted elimination: every pivot nonnegative, and a zero pivot forces a
/// zero row.
#[allow(clippy::needless_range_loop)]
fn psd_rational(q: &Mat) -> bool {
    let n = q.len();
    let mut m = q.clone();
    for i in 0..n {
        if m[i][i].is_negative() {
            return false;
        }
        if m[i][i].is_zero() {
            if (i + 1..n).any(|j| !m[i][j].is_zero()) {
                return false;
            }
            continue;
        }
        let pivot = m[i][i].clone();
        for r in i + 1..n {
            let factor = &m[r][i] / &pivot;
            for c in i..n {
                m[r][c] = &m[r][c] - &(&factor * &m[i][c]);
            }
        }
    }
    true
}

fn mat_to_f64(m: &Mat) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(Scalar::to_f64).collect()).collect()
}

impl FiberNorm {
    pub fn lp(p: PExp, weights: Vec<Scalar>) -> Result<Self> {
        if weights.is_empty() {
            return Err(FiberError::InvalidNorm("empty weight vector".into()));
        }
        if weights.iter().any(Scalar::is_negative) {
            return Err(FiberError::InvalidNorm("negative weight".into()));
        }
        if let PExp::Finite(p) = &p {
            if p < &Scalar::one() {
                return Err(FiberError::InvalidNorm("p < 1".into()));
            }
        }
        Ok(FiberNorm {
            dim: weights.len(),
            variant: NormVariant::Lp { p, weights },
        })
    }

    pub fn unweighted_lp(p: PExp, dim: usize) -> Result<Self> {
        Self::lp(p, vec![Scalar::one(); dim])
    }

    pub fn polyhedral(rows: Mat) -> Result<Self> {
        if rows.is_empty() {
            return Err(FiberError::InvalidNorm("no rows".into()));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(FiberError::InvalidNorm("ragged or empty rows".into()));
        }
        Ok(FiberNorm {
            dim,
            variant: NormVariant::Polyhedral { rows },
        })
    }

    pub fn quadratic(q: Mat) -> Result<Self> {
        let dim = q.len();
        if dim == 0 || q.iter().any(|r| r.len() != dim) {
            return Err(FiberError::InvalidNorm("not square".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                let sym = if is_rational_mat(&q) {
                    q[i][j] == q[j][i]
                } else {
                    q[i][j].approx_eq(&q[j][i], 1e-9)
                };
                if !sym {
                    return Err(FiberError::InvalidNorm("not symmetric".into()));
                }
            }
        }
        let ok = if is_rational_mat(&q) {
            psd_rational(&q)
        } else {
            let (eigs, _) = linalg::sym_eig_f64(&mat_to_f64(&q));
            let scale = eigs.iter().fold(1.0_f64, |a, &e| a.max(e.abs()));
            eigs.iter().all(|&e| e >= -1e-10 * scale)
        };
        if !ok {
            return Err(FiberError::InvalidNorm("not positive semidefinite".into()));
        }
        Ok(FiberNorm {
            dim,
            variant: NormVariant::Quadratic { q },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variant(&self) -> &NormVariant {
        &self.variant
    }

    fn check_dim(&self, v: &[Scalar]) -> Result<()> {
        if v.len() != self.dim {
            return Err(FiberError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Magnitude scale of the defining data, for relative tolerances.
    pub fn scale(&self) -> f64 {
        let vals: Vec<f64> = match &self.variant {
            NormVariant::Lp { weights, .. } => weights.iter().map(Scalar::to_f64).collect(),
            NormVariant::Polyhedral { rows } => {
                rows.iter().flatten().map(Scalar::to_f64).collect()
            }
            NormVariant::Quadratic { q } => q.iter().flatten().map(Scalar::to_f64).collect(),
        };
        vals.iter().fold(1.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn eval(&self, v: &[Scalar]) -> Result<Scalar> {
        self.check_dim(v)?;
        Ok(match &self.variant {
            NormVariant::Lp { p, weights } => match p {
                PExp::Inf => v
                    .iter()
                    .zip(weights)
                    .map(|(x, w)| (x * w).abs())
                    .fold(Scalar::zero(), Scalar::max),
                PExp::Finite(p) if p == &Scalar::one() => {
                    ssum(&v.iter().zip(weights).map(|(x, w)| (x * w).abs()).collect::<Vec<_>>())
                }
                PExp::Finite(p) if p == &Scalar::from_int(2) => {
                    let s = v
                        .iter()
                        .zip(weights)
                        .map(|(x, w)| {
                            let t = x * w;
                            &t * &t
                        })
                        .fold(Scalar::zero(), |a, b| a + b);
                    s.sqrt()
                }
                PExp::Finite(p) => {
                    let pf = p.to_f64();
                    let s: f64 = v
                        .iter()
                        .zip(weights)
                        .map(|(x, w)| (x.to_f64() * w.to_f64()).abs().powf(pf))
                        .sum();
                    Scalar::Fl(s.powf(1.0 / pf))
                }
            },
            NormVariant::Polyhedral { rows } => rows
                .iter()
                .map(|r| sdot(r, v).abs())
                .fold(Scalar::zero(), Scalar::max),
            NormVariant::Quadratic { q } => {
                let qv = linalg::mat_vec(q, v);
                let s = sdot(v, &qv);
                // Tiny negative values only arise from float roundoff on
                // near-singular forms; clamp.
                if s.is_negative() {
                    Scalar::zero()
                } else {
                    s.sqrt()
                }
            }
        })
    }

    /// Basis of the null space {v : |v| = 0}.
    pub fn kernel_basis(&self) -> Vec<Vec<Scalar>> {
        match &self.variant {
            NormVariant::Lp { weights, .. } => weights
                .iter()
                .enumerate()
                .filter(|(_, w)| w.is_zero())
                .map(|(i, _)| unit_vec(self.dim, i))
                .collect(),
            NormVariant::Polyhedral { rows } => linalg::null_space(rows),
            NormVariant::Quadratic { q } => {
                if is_rational_mat(q) {
                    linalg::null_space(q)
                } else {
                    let (eigs, vecs) = linalg::sym_eig_f64(&mat_to_f64(q));
                    let scale = eigs.iter().fold(1.0_f64, |a, &e| a.max(e.abs()));
                    eigs.iter()
                        .zip(vecs)
                        .filter(|(&e, _)| e.abs() < KERNEL_TOL * scale)
                        .map(|(_, vrow)| vrow.into_iter().map(Scalar::Fl).collect())
                        .collect()
                }
            }
        }
    }

    /// dim minus kernel dimension.
    pub fn rank(&self) -> usize {
        self.dim - self.kernel_basis().len()
    }

    /// Rows spanning the orthogonal complement of the kernel.
    pub fn quotient_basis(&self) -> Mat {
        match &self.variant {
            NormVariant::Lp { weights, .. } => weights
                .iter()
                .enumerate()
                .filter(|(_, w)| !w.is_zero())
                .map(|(i, _)| unit_vec(self.dim, i))
                .collect(),
            NormVariant::Polyhedral { rows } => row_space_basis(rows),
            NormVariant::Quadratic { q } => {
                if is_rational_mat(q) {
                    row_space_basis(q)
                } else {
                    let (eigs, vecs) = linalg::sym_eig_f64(&mat_to_f64(q));
                    let scale = eigs.iter().fold(1.0_f64, |a, &e| a.max(e.abs()));
                    eigs.iter()
                        .zip(vecs)
                        .filter(|(&e, _)| e.abs() >= KERNEL_TOL * scale)
                        .map(|(_, vrow)| vrow.into_iter().map(Scalar::Fl).collect())
                        .collect()
                }
            }
        }
    }

    /// Orthogonal projector onto the complement of the kernel.
    pub fn quotient_projector(&self) -> Mat {
        let b = self.quotient_basis();
        if b.is_empty() {
            return linalg::zeros(self.dim, self.dim);
        }
        linalg::row_space_projector(&b, self.dim)
    }

    fn omega_kills_kernel(&self, omega: &[Scalar]) -> bool {
        let scale: f64 = omega.iter().map(|x| x.to_f64().abs()).fold(1.0, f64::max);
        self.kernel_basis()
            .iter()
            .all(|b| sdot(omega, b).to_f64().abs() <= KERNEL_TOL * scale * 10.0)
    }

    /// sup { <omega, v> : |v| <= 1 }. Finite exactly when omega annihilates
    /// the kernel.
    pub fn dual_norm(&self, omega: &[Scalar]) -> Result<Scalar> {
        self.check_dim(omega)?;
        if omega.iter().all(Scalar::is_zero) {
            return Ok(Scalar::zero());
        }
        if !self.omega_kills_kernel(omega) {
            return Err(FiberError::InfiniteDual);
        }
        Ok(match &self.variant {
            NormVariant::Lp { p, weights } => {
                lp_dual(&p.conjugate(), weights, omega)
            }
            NormVariant::Polyhedral { .. } => {
                let verts = self.unit_ball_vertices().expect("polyhedral");
                verts
                    .iter()
                    .map(|u| sdot(omega, u).abs())
                    .fold(Scalar::zero(), Scalar::max)
            }
            NormVariant::Quadratic { q } => {
                let x = quad_pseudo_apply(q, omega);
                if x.is_negative() {
                    Scalar::zero()
                } else {
                    x.sqrt()
                }
            }
        })
    }

    /// Vertices of {v : |v| <= 1} intersected with the complement of the
    /// kernel; `None` for smooth variants whose ball is not a polytope.
    pub fn unit_ball_vertices(&self) -> Option<Vec<Vec<Scalar>>> {
        match &self.variant {
            NormVariant::Polyhedral { rows } => {
                let basis = row_space_basis(rows);
                if basis.is_empty() {
                    return Some(Vec::new());
                }
                let bt = linalg::transpose(&basis);
                let reduced = linalg::mat_mul(rows, &bt);
                let verts_u = linalg::symmetric_polytope_vertices(&reduced);
                Some(
                    verts_u
                        .iter()
                        .map(|u| linalg::mat_vec(&bt, u))
                        .collect(),
                )
            }
            NormVariant::Lp { p, weights } => match p {
                PExp::Finite(pv) if pv == &Scalar::one() => Some(
                    weights
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| !w.is_zero())
                        .flat_map(|(i, w)| {
                            let mut plus = unit_vec(self.dim, i);
                            plus[i] = w.recip();
                            let mut minus = plus.clone();
                            minus[i] = -plus[i].clone();
                            [plus, minus]
                        })
                        .collect(),
                ),
                PExp::Inf => {
                    let pos: Vec<usize> = weights
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| !w.is_zero())
                        .map(|(i, _)| i)
                        .collect();
                    if pos.len() > 20 {
                        return None;
                    }
                    let mut out = Vec::new();
                    for bits in 0..(1u32 << pos.len()) {
                        let mut v = vec![Scalar::zero(); self.dim];
                        for (slot, &i) in pos.iter().enumerate() {
                            let w = weights[i].recip();
                            v[i] = if bits >> slot & 1 == 1 { -w } else { w };
                        }
                        out.push(v);
                    }
                    Some(out)
                }
                _ => None,
            },
            NormVariant::Quadratic { .. } => None,
        }
    }

    /// Vertices of the dual unit ball (the polar of the primal ball), within
    /// the annihilator of the kernel; `None` for smooth variants.
    pub fn dual_ball_vertices(&self) -> Option<Vec<Vec<Scalar>>> {
        match &self.variant {
            NormVariant::Polyhedral { rows } => {
                // Polar of {max |r_i . v| <= 1} is conv{+-r_i}; keep only the
                // rows that are genuine extreme points.
                let kept = extreme_rows(rows);
                let mut out = Vec::new();
                for r in kept {
                    out.push(r.iter().map(|x| -x.clone()).collect());
                    out.push(r);
                }
                Some(out)
            }
            NormVariant::Lp { p, weights } => match p {
                // Dual of weighted ell-1 is a box; dual of weighted ell-inf
                // is a cross-polytope with vertices +- w_i e_i.
                PExp::Finite(pv) if pv == &Scalar::one() => {
                    let pos: Vec<usize> = weights
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| !w.is_zero())
                        .map(|(i, _)| i)
                        .collect();
                    if pos.len() > 20 {
                        return None;
                    }
                    let mut out = Vec::new();
                    for bits in 0..(1u32 << pos.len()) {
                        let mut v = vec![Scalar::zero(); self.dim];
                        for (slot, &i) in pos.iter().enumerate() {
                            let w = weights[i].clone();
                            v[i] = if bits >> slot & 1 == 1 { -w } else { w };
                        }
                        out.push(v);
                    }
                    Some(out)
                }
                PExp::Inf => Some(
                    weights
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| !w.is_zero())
                        .flat_map(|(i, w)| {
                            let mut plus = vec![Scalar::zero(); self.dim];
                            plus[i] = w.clone();
                            let mut minus = plus.clone();
                            minus[i] = -w.clone();
                            [plus, minus]
                        })
                        .collect(),
                ),
                _ => None,
            },
            NormVariant::Quadratic { .. } => None,
        }
    }

    /// Seminorm whose value at omega is `dual_norm(omega)` on the annihilator
    /// of the kernel, and whose own kernel matches the primal kernel (dual
    /// coordinates along the primal kernel act as zero).
    pub fn dual_fiber(&self) -> Result<FiberNorm> {
        match &self.variant {
            NormVariant::Lp { p, weights } => {
                let dual_w = weights
                    .iter()
                    .map(|w| if w.is_zero() { Scalar::zero() } else { w.recip() })
                    .collect();
                FiberNorm::lp(p.conjugate(), dual_w)
            }
            NormVariant::Quadratic { q } => {
                let pinv = if is_rational_mat(q) {
                    linalg::pseudo_inverse(q)
                } else {
                    float_pseudo_inverse(q)
                };
                FiberNorm::quadratic(pinv)
            }
            NormVariant::Polyhedral { .. } => {
                let verts = self.unit_ball_vertices().expect("polyhedral");
                if verts.is_empty() {
                    // Zero seminorm: dual supported on nothing.
                    return FiberNorm::polyhedral(vec![vec![Scalar::zero(); self.dim]]);
                }
                FiberNorm::polyhedral(verts)
            }
        }
    }

    /// Functional with unit dual norm pairing to exactly `|v|`. Ties go to
    /// minimal support, then lowest support indices, then lexicographically
    /// smallest coefficients.
    pub fn norming_functional(&self, v: &[Scalar]) -> Result<NormingFunctional> {
        self.check_dim(v)?;
        let n = self.eval(v)?;
        if !n.is_positive() {
            return Err(FiberError::ZeroVector);
        }
        let omega = match &self.variant {
            NormVariant::Lp { p, weights } => match p {
                PExp::Finite(pv) if pv == &Scalar::one() => v
                    .iter()
                    .zip(weights)
                    .map(|(x, w)| Scalar::from_int(x.signum_int()) * w.clone())
                    .collect(),
                PExp::Inf => {
                    // Max is attained on a set of coordinates; support size 1
                    // is minimal, lowest index wins.
                    let mut best: Option<(usize, Scalar)> = None;
                    for (i, (x, w)) in v.iter().zip(weights).enumerate() {
                        let m = (x * w).abs();
                        if m == n {
                            best = Some((i, Scalar::from_int(x.signum_int()) * w.clone()));
                            break;
                        }
                        let _ = &best;
                    }
                    let (i, coeff) = best.expect("norm positive, max attained");
                    let mut omega = vec![Scalar::zero(); self.dim];
                    omega[i] = coeff;
                    omega
                }
                PExp::Finite(pv) if pv == &Scalar::from_int(2) => v
                    .iter()
                    .zip(weights)
                    .map(|(x, w)| &(&(x * w) * w) / &n)
                    .collect(),
                PExp::Finite(pv) => {
                    let pf = pv.to_f64();
                    let nf = n.to_f64();
                    v.iter()
                        .zip(weights)
                        .map(|(x, w)| {
                            let xf = x.to_f64();
                            let wf = w.to_f64();
                            Scalar::Fl(
                                xf.signum() * wf * ((wf * xf.abs()) / nf).powf(pf - 1.0),
                            )
                        })
                        .collect()
                }
            },
            NormVariant::Polyhedral { rows } => {
                // Each achieving row, oriented, is a candidate; rank by the
                // tie-break order.
                let mut cands: Vec<Vec<Scalar>> = Vec::new();
                for r in rows {
                    let val = sdot(r, v);
                    if val.abs() == n {
                        let sign = Scalar::from_int(val.signum_int());
                        cands.push(r.iter().map(|x| x * &sign).collect());
                    }
                }
                debug_assert!(!cands.is_empty());
                pick_tie_break(cands)
            }
            NormVariant::Quadratic { q } => {
                let qv = linalg::mat_vec(q, v);
                qv.into_iter().map(|x| &x / &n).collect()
            }
        };
        Ok(NormingFunctional {
            omega,
            dual_norm: Scalar::one(),
        })
    }

    /// Test-set certificate that `t` maps the unit ball of `self` into the
    /// unit ball of `dst`, with the worst observed excess.
    pub fn contraction_check(&self, t: &Mat, dst: &FiberNorm, tol: f64) -> Result<ContractionReport> {
        if t.len() != dst.dim || t.iter().any(|r| r.len() != self.dim) {
            return Err(FiberError::DimensionMismatch {
                expected: dst.dim * self.dim,
                got: t.len() * t.first().map_or(0, Vec::len),
            });
        }
        let mut defect = Scalar::zero();
        let bump = |d: Scalar, defect: &mut Scalar| {
            if &d > defect {
                *defect = d;
            }
        };

        // Kernel directions: anything the source seminorm cannot see must be
        // annihilated downstream.
        for b in self.kernel_basis() {
            let img = linalg::mat_vec(t, &b);
            bump(dst.eval(&img)?, &mut defect);
        }

        let vertices = match &self.variant {
            NormVariant::Polyhedral { rows } => {
                let r = linalg::rank(rows);
                if binomial(rows.len(), r) <= 20_000 {
                    self.unit_ball_vertices()
                } else {
                    None
                }
            }
            _ => self.unit_ball_vertices(),
        };
        if let Some(verts) = vertices {
            for v in &verts {
                let img = linalg::mat_vec(t, v);
                bump(dst.eval(&img)? - self.eval(v)?, &mut defect);
            }
        } else {
            // Smooth or oversized ball: deterministic sphere sample plus an
            // exact operator bound when both ends are quadratic forms.
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_CAFE);
            for _ in 0..10_000 {
                let raw: Vec<Scalar> = (0..self.dim)
                    .map(|_| Scalar::Fl(rng.gen_range(-1.0..1.0)))
                    .collect();
                let s = self.eval(&raw)?;
                if s.to_f64() <= 1e-9 {
                    continue;
                }
                let v: Vec<Scalar> = raw.iter().map(|x| x / &s).collect();
                let img = linalg::mat_vec(t, &v);
                bump(dst.eval(&img)? - Scalar::one(), &mut defect);
            }
            if let (Some(qs), Some(qd)) = (self.as_quadratic_form(), dst.as_quadratic_form()) {
                let bound = quad_operator_bound(&qs, &qd, t);
                bump(Scalar::Fl(bound - 1.0), &mut defect);
            }
        }

        Ok(ContractionReport {
            ok: defect.to_f64() <= tol,
            defect,
        })
    }

    /// Seminorm u -> |B u| for a dim x n matrix B, kept inside the three
    /// families. Weighted ell-p survives coordinate selections for every p;
    /// general B needs p in {1, 2, inf} (or a non-Lp variant).
    pub fn compose(&self, b: &Mat) -> Result<FiberNorm> {
        if b.len() != self.dim {
            return Err(FiberError::DimensionMismatch {
                expected: self.dim,
                got: b.len(),
            });
        }
        let n = b.first().map_or(0, Vec::len);
        if n == 0 || b.iter().any(|r| r.len() != n) {
            return Err(FiberError::InvalidNorm("ragged composition matrix".into()));
        }
        if let Some(sel) = selection_columns(b) {
            if let NormVariant::Lp { p, weights } = &self.variant {
                let w = sel.iter().map(|&i| weights[i].clone()).collect();
                return FiberNorm::lp(p.clone(), w);
            }
        }
        match &self.variant {
            NormVariant::Polyhedral { rows } => FiberNorm::polyhedral(linalg::mat_mul(rows, b)),
            NormVariant::Quadratic { q } => {
                let bt = linalg::transpose(b);
                FiberNorm::quadratic(linalg::mat_mul(&linalg::mat_mul(&bt, q), b))
            }
            NormVariant::Lp { p, weights } => {
                if p.is_two() {
                    let mut dq = linalg::zeros(self.dim, self.dim);
                    for (i, w) in weights.iter().enumerate() {
                        dq[i][i] = w * w;
                    }
                    let bt = linalg::transpose(b);
                    return FiberNorm::quadratic(linalg::mat_mul(&linalg::mat_mul(&bt, &dq), b));
                }
                if p.is_one() {
                    if self.dim > 16 {
                        return Err(FiberError::InvalidNorm(
                            "ell-1 composition needs <= 16 source rows".into(),
                        ));
                    }
                    // ell-1 of Bu is the max over sign patterns of a linear
                    // functional in u.
                    let mut rows = Vec::new();
                    for bits in 0..(1u32 << (self.dim.max(1) - 1)) {
                        let mut row = vec![Scalar::zero(); n];
                        for i in 0..self.dim {
                            let sign = if i + 1 < self.dim && bits >> i & 1 == 1 {
                                -Scalar::one()
                            } else {
                                Scalar::one()
                            };
                            for j in 0..n {
                                row[j] = &row[j] + &(&(&sign * &weights[i]) * &b[i][j]);
                            }
                        }
                        rows.push(row);
                    }
                    return FiberNorm::polyhedral(rows);
                }
                if matches!(p, PExp::Inf) {
                    let rows = b
                        .iter()
                        .zip(weights)
                        .map(|(r, w)| r.iter().map(|x| x * w).collect())
                        .collect();
                    return FiberNorm::polyhedral(rows);
                }
                Err(FiberError::InvalidNorm(
                    "general ell-p composition not representable".into(),
                ))
            }
        }
    }

    /// Same-variant seminorm that is identically zero, for extension by zero.
    pub fn zeroed_like(&self) -> FiberNorm {
        let dim = self.dim;
        match &self.variant {
            NormVariant::Lp { p, .. } => {
                FiberNorm::lp(p.clone(), vec![Scalar::zero(); dim]).expect("zero weights")
            }
            NormVariant::Polyhedral { .. } => {
                FiberNorm::polyhedral(vec![vec![Scalar::zero(); dim]]).expect("zero row")
            }
            NormVariant::Quadratic { .. } => {
                FiberNorm::quadratic(linalg::zeros(dim, dim)).expect("zero form")
            }
        }
    }

    /// Q such that |v| = sqrt(v' Q v), for the variants that admit one.
    pub fn as_quadratic_form(&self) -> Option<Vec<Vec<f64>>> {
        match &self.variant {
            NormVariant::Quadratic { q } => Some(mat_to_f64(q)),
            NormVariant::Lp { p, weights } if p.is_two() => {
                let n = self.dim;
                let mut q = vec![vec![0.0; n]; n];
                for (i, w) in weights.iter().enumerate() {
                    let wf = w.to_f64();
                    q[i][i] = wf * wf;
                }
                Some(q)
            }
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match &self.variant {
            NormVariant::Lp { p, weights } => serde_json::json!({
                "kind": "lp",
                "p": p,
                "weights": weights,
            }),
            NormVariant::Polyhedral { rows } => serde_json::json!({
                "kind": "polyhedral",
                "rows": rows,
            }),
            NormVariant::Quadratic { q } => serde_json::json!({
                "kind": "quadratic",
                "q": q,
            }),
        }
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let variant: NormVariant =
            serde_json::from_value(v.clone()).map_err(|e| FiberError::Parse(e.to_string()))?;
        match variant {
            NormVariant::Lp { p, weights } => FiberNorm::lp(p, weights),
            NormVariant::Polyhedral { rows } => FiberNorm::polyhedral(rows),
            NormVariant::Quadratic { q } => FiberNorm::quadratic(q),
        }
    }
}

/// Functional witnessing the norm of some vector: unit dual norm, pairing
/// equal to the primal norm.
#[derive(Clone, Debug, PartialEq)]
pub struct NormingFunctional {
    pub omega: Vec<Scalar>,
    pub dual_norm: Scalar,
}

#[derive(Clone, Debug)]
pub struct ContractionReport {
    pub ok: bool,
    pub defect: Scalar,
}

fn unit_vec(dim: usize, i: usize) -> Vec<Scalar> {
    let mut v = vec![Scalar::zero(); dim];
    v[i] = Scalar::one();
    v
}

/// If every column of `b` is a distinct standard basis vector, the selected
/// coordinate indices in column order.
fn selection_columns(b: &Mat) -> Option<Vec<usize>> {
    let n = b.first()?.len();
    let mut sel = Vec::with_capacity(n);
    for j in 0..n {
        let mut hit = None;
        for (i, row) in b.iter().enumerate() {
            if row[j].is_zero() {
                continue;
            }
            if row[j] != Scalar::one() || hit.is_some() {
                return None;
            }
            hit = Some(i);
        }
        let i = hit?;
        if sel.contains(&i) {
            return None;
        }
        sel.push(i);
    }
    Some(sel)
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut acc: usize = 1;
    for i in 0..k.min(n - k) {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Basis of the row space, read off the reduced echelon form.
fn row_space_basis(a: &Mat) -> Mat {
    let (r, pivots) = linalg::rref(a);
    r.into_iter().take(pivots.len()).collect()
}

fn lp_dual(q: &PExp, weights: &[Scalar], omega: &[Scalar]) -> Scalar {
    // Coordinates with zero weight are kernel directions; the annihilation
    // check has already passed, so they are skipped.
    let terms: Vec<Scalar> = weights
        .iter()
        .zip(omega)
        .filter(|(w, _)| !w.is_zero())
        .map(|(w, o)| (o / w).abs())
        .collect();
    match q {
        PExp::Inf => terms.into_iter().fold(Scalar::zero(), Scalar::max),
        PExp::Finite(qv) if qv == &Scalar::one() => ssum(&terms),
        PExp::Finite(qv) if qv == &Scalar::from_int(2) => {
            terms.iter().map(|t| t * t).fold(Scalar::zero(), |a, b| a + b).sqrt()
        }
        PExp::Finite(qv) => {
            let qf = qv.to_f64();
            let s: f64 = terms.iter().map(|t| t.to_f64().powf(qf)).sum();
            Scalar::Fl(s.powf(1.0 / qf))
        }
    }
}

/// omega' Q^+ omega.
fn quad_pseudo_apply(q: &Mat, omega: &[Scalar]) -> Scalar {
    if is_rational_mat(q) && omega.iter().all(Scalar::is_rational) {
        let pinv = linalg::pseudo_inverse(q);
        let x = linalg::mat_vec(&pinv, omega);
        sdot(omega, &x)
    } else {
        let pinv = float_pseudo_inverse(q);
        let x = linalg::mat_vec(&pinv, omega);
        sdot(omega, &x)
    }
}

fn float_pseudo_inverse(q: &Mat) -> Mat {
    let (eigs, vecs) = linalg::sym_eig_f64(&mat_to_f64(q));
    let n = q.len();
    let scale = eigs.iter().fold(1.0_f64, |a, &e| a.max(e.abs()));
    let mut out = vec![vec![Scalar::zero(); n]; n];
    for (e, vrow) in eigs.iter().zip(&vecs) {
        if e.abs() < KERNEL_TOL * scale {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[i][j] = &out[i][j] + &Scalar::Fl(vrow[i] * vrow[j] / e);
            }
        }
    }
    out
}

/// sup over the Q_src unit ball of sqrt(v' T' Q_dst T v), computed on the
/// positive eigenspace of Q_src.
fn quad_operator_bound(q_src: &[Vec<f64>], q_dst: &[Vec<f64>], t: &Mat) -> f64 {
    let (eigs, vecs) = linalg::sym_eig_f64(q_src);
    let scale = eigs.iter().fold(1.0_f64, |a, &e| a.max(e.abs()));
    let cols: Vec<(f64, &Vec<f64>)> = eigs
        .iter()
        .zip(&vecs)
        .filter(|(&e, _)| e > KERNEL_TOL * scale)
        .map(|(&e, v)| (e, v))
        .collect();
    if cols.is_empty() {
        return 0.0;
    }
    let k = q_src.len();
    let kd = q_dst.len();
    let tf: Vec<Vec<f64>> = t.iter().map(|r| r.iter().map(Scalar::to_f64).collect()).collect();
    // Columns of the whitened map: T v_i / sqrt(lambda_i).
    let mut w: Vec<Vec<f64>> = Vec::new();
    for (e, v) in &cols {
        let mut col = vec![0.0; kd];
        for (r, row) in tf.iter().enumerate() {
            let mut s = 0.0;
            for c in 0..k {
                s += row[c] * v[c];
            }
            col[r] = s / e.sqrt();
        }
        w.push(col);
    }
    // Gram matrix in the destination form; top eigenvalue is the squared
    // operator norm.
    let r = w.len();
    let mut gram = vec![vec![0.0; r]; r];
    for i in 0..r {
        let mut qd_wi = vec![0.0; kd];
        for a in 0..kd {
            for b in 0..kd {
                qd_wi[a] += q_dst[a][b] * w[i][b];
            }
        }
        for j in 0..r {
            let mut s = 0.0;
            for a in 0..kd {
                s += w[j][a] * qd_wi[a];
            }
            gram[j][i] = s;
        }
    }
    let (geigs, _) = linalg::sym_eig_f64(&gram);
    geigs.iter().fold(0.0_f64, |a, &e| a.max(e)).max(0.0).sqrt()
}

/// Rows that are extreme points of conv{+-rows}; drops anything expressible
/// as a convex combination of the others (exact linear program).
pub fn extreme_rows(rows: &Mat) -> Vec<Vec<Scalar>> {
    // Dedupe up to sign before the hull test: duplicated rows would
    // otherwise certify each other as interior and both disappear.
    let mut unique: Vec<Vec<Scalar>> = Vec::new();
    'dedup: for r in rows {
        if r.iter().all(Scalar::is_zero) {
            continue;
        }
        for prev in &unique {
            if prev == r || prev.iter().zip(r).all(|(a, b)| a == &-b.clone()) {
                continue 'dedup;
            }
        }
        unique.push(r.clone());
    }
    let mut kept: Vec<Vec<Scalar>> = Vec::new();
    for (j, r) in unique.iter().enumerate() {
        let others: Vec<&Vec<Scalar>> = unique
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, x)| x)
            .collect();
        if !others.is_empty() {
            // min sum |c| subject to sum c_i rows_i = r; if at most 1, the
            // row lies inside the hull of the rest.
            let k = r.len();
            let m = others.len();
            let mut a = linalg::zeros(k, 2 * m);
            for (col, o) in others.iter().enumerate() {
                for i in 0..k {
                    a[i][col] = o[i].clone();
                    a[i][m + col] = -o[i].clone();
                }
            }
            let c = vec![Scalar::one(); 2 * m];
            if let Some((_, val)) = linalg::simplex_min(&a, r, &c) {
                if val <= Scalar::one() {
                    continue;
                }
            }
        }
        kept.push(r.clone());
    }
    kept
}

/// Minimal support size, then lowest support index set, then smallest
/// coefficient vector.
fn pick_tie_break(mut cands: Vec<Vec<Scalar>>) -> Vec<Scalar> {
    cands.sort_by(|a, b| {
        let sa: Vec<usize> = a.iter().enumerate().filter(|(_, x)| !x.is_zero()).map(|(i, _)| i).collect();
        let sb: Vec<usize> = b.iter().enumerate().filter(|(_, x)| !x.is_zero()).map(|(i, _)| i).collect();
        sa.len().cmp(&sb.len()).then(sa.cmp(&sb)).then(a.cmp(b))
    });
    cands.into_iter().next().expect("nonempty candidates")
}

//! Small dense linear algebra over [`Scalar`], exact on the rational branch.
//!
//! Everything here operates on row-major `Vec<Vec<Scalar>>` matrices of the
//! sizes this crate meets in practice (fiber dimensions up to a handful,
//! ambient coordinate counts up to a few thousand). Pivoting uses exact
//! nonzero tests for rationals and a relative threshold for floats, the same
//! 1e-10 relative cut used for rank decisions everywhere in the crate.

// Elimination code reads better with explicit row/column indices.
#![allow(clippy::needless_range_loop)]

use crate::scalar::{sdot, Scalar};

pub type Mat = Vec<Vec<Scalar>>;

/// Relative pivot threshold for float data.
pub const RANK_REL_TOL: f64 = 1e-10;

pub fn zeros(rows: usize, cols: usize) -> Mat {
    vec![vec![Scalar::zero(); cols]; rows]
}

pub fn identity(n: usize) -> Mat {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = Scalar::one();
    }
    m
}

pub fn transpose(a: &Mat) -> Mat {
    if a.is_empty() {
        return Vec::new();
    }
    let (r, c) = (a.len(), a[0].len());
    let mut t = zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            t[j][i] = a[i][j].clone();
        }
    }
    t
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let bt = transpose(b);
    a.iter()
        .map(|row| bt.iter().map(|col| sdot(row, col)).collect())
        .collect()
}

pub fn mat_vec(a: &Mat, v: &[Scalar]) -> Vec<Scalar> {
    a.iter().map(|row| sdot(row, v)).collect()
}

fn magnitude(s: &Scalar) -> f64 {
    s.to_f64().abs()
}

/// Reduced row echelon form; returns the pivot column indices.
///
/// The zero test is exact for rational entries; for floats an entry counts as
/// zero when it is below `RANK_REL_TOL` times the largest magnitude of the
/// input matrix.
pub fn rref(a: &Mat) -> (Mat, Vec<usize>) {
    let mut m = a.clone();
    let rows = m.len();
    let cols = if rows == 0 { 0 } else { m[0].len() };
    let scale = m
        .iter()
        .flatten()
        .map(magnitude)
        .fold(0.0f64, f64::max)
        .max(1.0);
    let is_zero = |s: &Scalar| match s {
        Scalar::Rat(_) => s.is_zero(),
        Scalar::Fl(x) => x.abs() <= RANK_REL_TOL * scale,
    };

    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        // Partial pivot: largest magnitude keeps the float branch stable and
        // is harmless on the exact branch.
        let mut best = None;
        let mut best_mag = 0.0;
        for i in r..rows {
            let mag = magnitude(&m[i][c]);
            if !is_zero(&m[i][c]) && mag > best_mag {
                best = Some(i);
                best_mag = mag;
            }
        }
        let Some(p) = best else { continue };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for j in c..cols {
            m[r][j] = &m[r][j] * &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in c..cols {
                    let sub = &f * &m[r][j];
                    m[i][j] = &m[i][j] - &sub;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows {
            break;
        }
    }
    (m, pivots)
}

pub fn rank(a: &Mat) -> usize {
    rref(a).1.len()
}

/// Basis of the null space {v : Av = 0}, one vector per free column.
pub fn null_space(a: &Mat) -> Vec<Vec<Scalar>> {
    if a.is_empty() {
        return Vec::new();
    }
    let cols = a[0].len();
    let (r, pivots) = rref(a);
    let mut basis = Vec::new();
    for free in 0..cols {
        if pivots.contains(&free) {
            continue;
        }
        let mut v = vec![Scalar::zero(); cols];
        v[free] = Scalar::one();
        for (row, &pc) in pivots.iter().enumerate() {
            v[pc] = -r[row][free].clone();
        }
        basis.push(v);
    }
    basis
}

/// Solve Ax = b. `None` when inconsistent. For underdetermined systems the
/// free coordinates are set to zero.
pub fn solve(a: &Mat, b: &[Scalar]) -> Option<Vec<Scalar>> {
    let rows = a.len();
    if rows == 0 {
        return if b.iter().all(Scalar::is_zero) {
            Some(Vec::new())
        } else {
            None
        };
    }
    let cols = a[0].len();
    let mut aug: Mat = a
        .iter()
        .zip(b)
        .map(|(row, bi)| {
            let mut r = row.clone();
            r.push(bi.clone());
            r
        })
        .collect();
    let scale = aug
        .iter()
        .flatten()
        .map(magnitude)
        .fold(0.0f64, f64::max)
        .max(1.0);
    let (r, pivots) = rref(&aug);
    aug = r;
    // Inconsistent iff some row is (0 .. 0 | nonzero).
    for row in &aug {
        let lead_zero = row[..cols].iter().all(|s| match s {
            Scalar::Rat(_) => s.is_zero(),
            Scalar::Fl(x) => x.abs() <= RANK_REL_TOL * scale,
        });
        let rhs_zero = match &row[cols] {
            s @ Scalar::Rat(_) => s.is_zero(),
            Scalar::Fl(x) => x.abs() <= 1e-9 * scale,
        };
        if lead_zero && !rhs_zero {
            return None;
        }
    }
    let mut x = vec![Scalar::zero(); cols];
    for (row, &pc) in pivots.iter().enumerate() {
        if pc < cols {
            x[pc] = aug[row][cols].clone();
        }
    }
    Some(x)
}

/// Inverse of a square matrix, `None` when singular.
pub fn invert(a: &Mat) -> Option<Mat> {
    let n = a.len();
    let mut aug: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            for j in 0..n {
                r.push(if i == j { Scalar::one() } else { Scalar::zero() });
            }
            r
        })
        .collect();
    let (r, pivots) = rref(&aug);
    if pivots.len() < n {
        return None;
    }
    aug = r;
    Some(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}

/// Least-squares solution of Ax ~= b via the normal equations. Exact when the
/// data is rational. Returns the minimizer with free coordinates zeroed.
pub fn least_squares(a: &Mat, b: &[Scalar]) -> Vec<Scalar> {
    let at = transpose(a);
    let ata = mat_mul(&at, a);
    let atb = mat_vec(&at, b);
    solve(&ata, &atb).expect("normal equations are always consistent")
}

/// Moore-Penrose pseudo-inverse via full-rank decomposition A = C F,
/// A+ = F' (F F')^{-1} (C' C)^{-1} C'. Exact on rational input.
pub fn pseudo_inverse(a: &Mat) -> Mat {
    let rows = a.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = a[0].len();
    let (r, pivots) = rref(a);
    let rk = pivots.len();
    if rk == 0 {
        return zeros(cols, rows);
    }
    // C = pivot columns of A (rows x rk), F = first rk rows of rref (rk x cols).
    let c: Mat = (0..rows)
        .map(|i| pivots.iter().map(|&p| a[i][p].clone()).collect())
        .collect();
    let f: Mat = (0..rk).map(|i| r[i].clone()).collect();
    let ft = transpose(&f);
    let ct = transpose(&c);
    let fft_inv = invert(&mat_mul(&f, &ft)).expect("FF' invertible by construction");
    let ctc_inv = invert(&mat_mul(&ct, &c)).expect("C'C invertible by construction");
    mat_mul(&mat_mul(&mat_mul(&ft, &fft_inv), &ctc_inv), &ct)
}

/// Orthogonal projector onto the row space of `a` (equivalently, onto the
/// orthogonal complement of its null space).
pub fn row_space_projector(a: &Mat, dim: usize) -> Mat {
    let rows: Mat = {
        let (r, pivots) = rref(a);
        (0..pivots.len()).map(|i| r[i].clone()).collect()
    };
    if rows.is_empty() {
        return zeros(dim, dim);
    }
    // P = B' (B B')^{-1} B with B the row basis.
    let bt = transpose(&rows);
    let bbt_inv = invert(&mat_mul(&rows, &bt)).expect("Gram matrix of a basis is invertible");
    mat_mul(&mat_mul(&bt, &bbt_inv), &rows)
}

/// Minimize c'x subject to Ax = b, x >= 0 (two-phase simplex, Bland's rule).
///
/// All data is lifted to exact rationals (every float is a dyadic rational),
/// so cycling cannot occur and the optimum is exact. Returns `None` when
/// infeasible, `Some((x, value))` at an optimum. Unbounded problems do not
/// arise from the gauge/feasibility uses in this crate and panic if met.
pub fn simplex_min(a: &Mat, b: &[Scalar], c: &[Scalar]) -> Option<(Vec<Scalar>, Scalar)> {
    use num_rational::BigRational;
    use num_traits::Zero;
    type Q = BigRational;

    let m = a.len();
    let n = if m == 0 { 0 } else { a[0].len() };
    let to_q = |s: &Scalar| s.to_rational().expect("finite scalar");
    let mut ta: Vec<Vec<Q>> = a.iter().map(|r| r.iter().map(to_q).collect()).collect();
    let mut tb: Vec<Q> = b.iter().map(to_q).collect();
    let tc: Vec<Q> = c.iter().map(to_q).collect();

    // Make b >= 0.
    for i in 0..m {
        if tb[i] < Q::zero() {
            tb[i] = -tb[i].clone();
            for j in 0..n {
                ta[i][j] = -ta[i][j].clone();
            }
        }
    }

    // Phase 1 tableau: [A | I | b], minimize sum of artificials.
    let total = n + m;
    let mut tab: Vec<Vec<Q>> = (0..m)
        .map(|i| {
            let mut row: Vec<Q> = ta[i].clone();
            for j in 0..m {
                row.push(if i == j { Q::from_integer(1.into()) } else { Q::zero() });
            }
            row.push(tb[i].clone());
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..total).collect();

    let pivot = |tab: &mut Vec<Vec<Q>>, basis: &mut Vec<usize>, r: usize, col: usize| {
        let inv = tab[r][col].recip();
        for x in tab[r].iter_mut() {
            *x = &*x * &inv;
        }
        for i in 0..tab.len() {
            if i != r && !tab[i][col].is_zero() {
                let f = tab[i][col].clone();
                for j in 0..tab[i].len() {
                    let sub = &f * &tab[r][j];
                    tab[i][j] = &tab[i][j] - &sub;
                }
            }
        }
        basis[r] = col;
    };

    let run = |tab: &mut Vec<Vec<Q>>,
               basis: &mut Vec<usize>,
               cost: &[Q],
               ncols: usize|
     -> Q {
        loop {
            // Reduced costs under Bland's rule: first negative enters.
            let mut z = vec![Q::zero(); ncols];
            for (i, &bi) in basis.iter().enumerate() {
                if !cost[bi].is_zero() {
                    for j in 0..ncols {
                        z[j] = &z[j] + &(&cost[bi] * &tab[i][j]);
                    }
                }
            }
            let mut enter = None;
            for j in 0..ncols {
                if basis.contains(&j) {
                    continue;
                }
                let red = &cost[j] - &z[j];
                if red < Q::zero() {
                    enter = Some(j);
                    break;
                }
            }
            let Some(col) = enter else {
                let rhs_col = tab[0].len() - 1;
                let mut val = Q::zero();
                for (i, &bi) in basis.iter().enumerate() {
                    val = &val + &(&cost[bi] * &tab[i][rhs_col]);
                }
                return val;
            };
            // Ratio test, Bland tie-break on smallest basis index.
            let rhs_col = tab[0].len() - 1;
            let mut leave: Option<(usize, Q)> = None;
            for i in 0..tab.len() {
                if tab[i][col] > Q::zero() {
                    let ratio = &tab[i][rhs_col] / &tab[i][col];
                    match &leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < *lr || (ratio == *lr && basis[i] < basis[*li]) {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let (row, _) = leave.expect("LP unbounded; not expected from gauge problems");
            pivot(tab, basis, row, col);
        }
    };

    let mut phase1_cost = vec![Q::zero(); total];
    for item in phase1_cost.iter_mut().skip(n) {
        *item = Q::from_integer(1.into());
    }
    let art_sum = run(&mut tab, &mut basis, &phase1_cost, total);
    if !art_sum.is_zero() {
        return None;
    }
    // Drive any artificial variables out of the basis where possible.
    for i in 0..m {
        if basis[i] >= n {
            if let Some(col) = (0..n).find(|&j| !tab[i][j].is_zero() && !basis.contains(&j)) {
                pivot(&mut tab, &mut basis, i, col);
            }
        }
    }

    // Phase 2 on the original columns only.
    let mut phase2_cost = tc.clone();
    phase2_cost.resize(total, Q::from_integer(1_000_000.into())); // block re-entry of artificials
    let val = run(&mut tab, &mut basis, &phase2_cost, n);

    let rhs_col = tab[0].len() - 1;
    let mut x = vec![Q::zero(); n];
    for (i, &bi) in basis.iter().enumerate() {
        if bi < n {
            x[bi] = tab[i][rhs_col].clone();
        }
    }
    Some((x.into_iter().map(Scalar::Rat).collect(), Scalar::Rat(val)))
}

/// Vertices of the symmetric polytope {v : |r_i . v| <= 1}. The rows must have
/// full column rank (bounded polytope); callers pass quotient coordinates.
pub fn symmetric_polytope_vertices(rows: &Mat) -> Vec<Vec<Scalar>> {
    let m = rows.len();
    if m == 0 {
        return Vec::new();
    }
    let k = rows[0].len();
    if k == 0 {
        return Vec::new();
    }
    let mut verts: Vec<Vec<Scalar>> = Vec::new();
    let mut subset = vec![0usize; k];
    // Enumerate k-subsets of row indices.
    fn subsets(m: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            subsets(m, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    subset.clear();
    subsets(m, k, 0, &mut subset, &mut all);

    for idx in &all {
        // Sign patterns; fix the first sign to +1, add +-v at the end.
        for bits in 0..(1u32 << (k - 1)) {
            let mut a: Mat = Vec::with_capacity(k);
            let mut b: Vec<Scalar> = Vec::with_capacity(k);
            for (pos, &ri) in idx.iter().enumerate() {
                a.push(rows[ri].clone());
                let sign = if pos == 0 {
                    1
                } else if (bits >> (pos - 1)) & 1 == 1 {
                    -1
                } else {
                    1
                };
                b.push(Scalar::from_int(sign));
            }
            if rank(&a) < k {
                continue;
            }
            let Some(v) = solve(&a, &b) else { continue };
            // Feasibility: |r . v| <= 1 for all rows (exact on rationals).
            let mut ok = true;
            for r in rows {
                let val = sdot(r, &v).abs();
                let slack = val - Scalar::one();
                if slack.is_positive() && !slack.approx_eq(&Scalar::zero(), 1e-9) {
                    ok = false;
                    break;
                }
            }
            if ok {
                let neg: Vec<Scalar> = v.iter().map(|s| -s.clone()).collect();
                if !verts.iter().any(|w| w == &v) {
                    verts.push(v);
                }
                if !verts.iter().any(|w| w == &neg) {
                    verts.push(neg);
                }
            }
        }
    }
    verts
}

/// Eigenvalues and eigenvectors of a symmetric matrix, float branch (cyclic
/// Jacobi). Returns (eigenvalues, eigenvectors as rows).
pub fn sym_eig_f64(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[p][k], v[q][k]);
                    v[p][k] = c * vkp - s * vkq;
                    v[q][k] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| m[i][i]).collect();
    (eig, v)
}

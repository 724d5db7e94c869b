//! Integer-lattice and Diophantine routines: simultaneous approximation,
//! torus lattices with minimal-diameter fundamental parallelepipeds, dual
//! resonant vectors, unimodular completion, and the vague-point test.
//!
//! All lattice arithmetic is exact: rational points with denominator q are
//! stored as integer numerators, and searches compare integer quantities.

use crate::error::{Error, Result};
use crate::geom;
use crate::model::ModelSpec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Calibrated constant of the dual-vector bound |k*|_∞ < c_n / r_min.
///
/// Generated by the sweep in `tests/lattice_calibration.rs`
/// (`cargo test -p sepdiff-core --test lattice_calibration -- --ignored`):
/// max of |k*|_∞ · r_min over 10³ random lattices with q ≤ 500, times a
/// safety factor 2.
pub fn c_n(n: usize) -> f64 {
    match n {
        1 => 4.0,
        2 => 6.0,
        3 => 8.5,
        _ => 3.0 * n as f64,
    }
}

/// Calibrated constant of the orthogonal-vector bound |b| < c★ / δ
/// (same sweep as [`c_n`], tracking |b|₂ · r_min).
pub fn c_star(n: usize) -> f64 {
    c_n(n)
}

/// Smallest q < n_bound with max_i ‖q Δ_i‖_ℤ ≤ n_bound^{−1/n}.
///
/// Exhaustive scan; existence is the Dirichlet theorem. If no q < n_bound
/// satisfies the bound (possible only at the theorem's boundary case), the
/// q minimising the residual is returned.
pub fn dirichlet_approx(delta: &[f64], n_bound: u64) -> Result<u64> {
    if n_bound < 2 {
        return Err(Error::domain("dirichlet_approx requires N >= 2"));
    }
    let n = delta.len() as f64;
    let target = (n_bound as f64).powf(-1.0 / n);
    let mut best_q = 1;
    let mut best_res = f64::INFINITY;
    for q in 1..n_bound {
        let res = delta
            .iter()
            .map(|&d| geom::dist_to_int(q as f64 * d))
            .fold(0.0, f64::max);
        if res <= target {
            return Ok(q);
        }
        if res < best_res {
            best_res = res;
            best_q = q;
        }
    }
    Ok(best_q)
}

/// Exact rational vector Δ̄ = nums / q.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RationalVector {
    pub nums: Vec<i64>,
    pub q: i64,
}

impl RationalVector {
    /// Nearest rational approximation with denominator q, numerators
    /// reduced mod q into [0, q).
    pub fn approx(delta: &[f64], q: i64) -> Self {
        let nums = delta
            .iter()
            .map(|&d| {
                let v = (d * q as f64).round() as i64;
                v.rem_euclid(q)
            })
            .collect();
        RationalVector { nums, q }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.nums.iter().map(|&v| v as f64 / self.q as f64).collect()
    }

    pub fn dim(&self) -> usize {
        self.nums.len()
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Extended gcd: returns (g, s, t) with s·a + t·b = g.
fn egcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        if a < 0 {
            (-a, -1, 0)
        } else {
            (a, 1, 0)
        }
    } else {
        let (g, s, t) = egcd(b, a % b);
        (g, t, s - (a / b) * t)
    }
}

/// Integer rank of a set of integer row vectors (fraction-free elimination).
fn int_rank(rows: &[Vec<i128>]) -> usize {
    let mut m: Vec<Vec<i128>> = rows.to_vec();
    let nrows = m.len();
    if nrows == 0 {
        return 0;
    }
    let ncols = m[0].len();
    let mut rank = 0;
    let mut col = 0;
    while rank < nrows && col < ncols {
        let piv = (rank..nrows).find(|&r| m[r][col] != 0);
        let Some(piv) = piv else {
            col += 1;
            continue;
        };
        m.swap(rank, piv);
        for r in rank + 1..nrows {
            if m[r][col] != 0 {
                let (a, b) = (m[rank][col], m[r][col]);
                let g = {
                    let (mut x, mut y) = (a.abs(), b.abs());
                    while y != 0 {
                        let t = x % y;
                        x = y;
                        y = t;
                    }
                    x.max(1)
                };
                let (fa, fb) = (b / g, a / g);
                for c in col..ncols {
                    m[r][c] = m[r][c] * fb - m[rank][c] * fa;
                }
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}

/// Determinant of a square integer matrix (Bareiss, exact in i128).
fn int_det(rows: &[Vec<i128>]) -> i128 {
    let n = rows.len();
    let mut m: Vec<Vec<i128>> = rows.to_vec();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if m[k][k] == 0 {
            let Some(p) = (k + 1..n).find(|&r| m[r][k] != 0) else {
                return 0;
            };
            m.swap(k, p);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
            m[i][k] = 0;
        }
        prev = m[k][k];
    }
    sign * m[n - 1][n - 1]
}

/// A rational lattice Λ = {l·Δ̄ mod ℤⁿ} on the torus together with a greedy
/// shortest fundamental system and its parallelepiped diameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RationalLattice {
    pub generator: RationalVector,
    /// Fundamental system: integer numerators over q, greedily shortest.
    pub basis_nums: Vec<Vec<i64>>,
    /// Diameter of the fundamental parallelepiped spanned by the system.
    pub r_min: f64,
    /// |Λ| = q (guaranteed at construction).
    pub order: i64,
}

impl RationalLattice {
    pub fn build(generator: RationalVector) -> Result<Self> {
        let q = generator.q;
        if q < 1 {
            return Err(Error::domain("lattice denominator must be positive"));
        }
        let n = generator.dim();
        // |Λ| = q / gcd(q, gcd of numerators).
        let g_nums = generator.nums.iter().fold(0i64, |acc, &v| gcd(acc, v));
        let order = q / gcd(q, g_nums).max(1);
        if order < q {
            return Err(Error::domain(format!(
                "degenerate lattice: |Λ| = {order} < q = {q}"
            )));
        }

        // Candidate short vectors: numerators l·nums + q·m with coordinates
        // in (-3q/2, 3q/2). The greedy minimiser always lies in this range
        // because q·e_i belongs to the lattice.
        let mut cands: Vec<Vec<i64>> = Vec::new();
        for l in 0..q {
            let base: Vec<i64> = generator.nums.iter().map(|&v| (l * v).rem_euclid(q)).collect();
            let mut stack: Vec<Vec<i64>> = vec![Vec::with_capacity(n)];
            for i in 0..n {
                let mut next = Vec::new();
                for pref in stack {
                    for off in [-q, 0, q] {
                        let c = base[i] + off;
                        if c > -3 * q / 2 - 1 && c < 3 * q / 2 + 1 {
                            let mut p = pref.clone();
                            p.push(c);
                            next.push(p);
                        }
                    }
                }
                stack = next;
            }
            cands.extend(stack.into_iter().filter(|v| v.iter().any(|&c| c != 0)));
        }
        // Sort by exact squared length, then lexicographically.
        cands.sort_by(|a, b| {
            let la: i128 = a.iter().map(|&v| (v as i128) * (v as i128)).sum();
            let lb: i128 = b.iter().map(|&v| (v as i128) * (v as i128)).sum();
            la.cmp(&lb).then_with(|| a.cmp(b))
        });
        cands.dedup();

        let mut basis: Vec<Vec<i64>> = Vec::new();
        for c in &cands {
            if basis.len() == n {
                break;
            }
            let mut rows: Vec<Vec<i128>> = basis
                .iter()
                .map(|r| r.iter().map(|&v| v as i128).collect())
                .collect();
            rows.push(c.iter().map(|&v| v as i128).collect());
            if int_rank(&rows) == basis.len() + 1 {
                basis.push(c.clone());
            }
        }
        if basis.len() < n {
            return Err(Error::numerical("failed to assemble a fundamental system"));
        }

        let r_min = parallelepiped_diameter(&basis, q);
        Ok(RationalLattice {
            generator,
            basis_nums: basis,
            r_min,
            order,
        })
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    /// Basis vectors as floating-point rows.
    pub fn basis_f64(&self) -> Vec<Vec<f64>> {
        self.basis_nums
            .iter()
            .map(|r| r.iter().map(|&v| v as f64 / self.generator.q as f64).collect())
            .collect()
    }

    /// Exact volume of the fundamental parallelepiped as |det|·q^{-n};
    /// must equal 1/q.
    pub fn parallelepiped_volume(&self) -> f64 {
        let rows: Vec<Vec<i128>> = self
            .basis_nums
            .iter()
            .map(|r| r.iter().map(|&v| v as i128).collect())
            .collect();
        let d = int_det(&rows).unsigned_abs() as f64;
        d / (self.generator.q as f64).powi(self.dim() as i32)
    }

    /// Angle condition |cos α_ij| ≤ 1/2 of the greedy system, checked with
    /// exact integer arithmetic.
    pub fn angles_ok(&self) -> bool {
        let b = &self.basis_nums;
        for i in 0..b.len() {
            for j in i + 1..b.len() {
                let dotij: i128 = b[i]
                    .iter()
                    .zip(&b[j])
                    .map(|(&x, &y)| x as i128 * y as i128)
                    .sum();
                let ni: i128 = b[i].iter().map(|&x| x as i128 * x as i128).sum();
                let nj: i128 = b[j].iter().map(|&x| x as i128 * x as i128).sum();
                if 4 * dotij * dotij > ni * nj {
                    return false;
                }
            }
        }
        true
    }

    /// Brute-force check that the fundamental parallelepiped contains no
    /// lattice point besides its vertices. Exact; intended for q ≤ 10⁴.
    pub fn verify_fundamental(&self) -> Result<bool> {
        let n = self.dim();
        let q = self.generator.q;
        let rows: Vec<Vec<i128>> = self
            .basis_nums
            .iter()
            .map(|r| r.iter().map(|&v| v as i128).collect())
            .collect();
        let det = int_det(&rows);
        if det == 0 {
            return Ok(false);
        }
        // Transpose for solving X^T t = p.
        let xt: Vec<Vec<i128>> = (0..n)
            .map(|i| (0..n).map(|j| rows[j][i]).collect())
            .collect();
        // Bounding box of the parallelepiped.
        let mut lo = vec![0i64; n];
        let mut hi = vec![0i64; n];
        for r in &self.basis_nums {
            for i in 0..n {
                if r[i] < 0 {
                    lo[i] += r[i];
                } else {
                    hi[i] += r[i];
                }
            }
        }
        for l in 0..q {
            let base: Vec<i64> = self
                .generator
                .nums
                .iter()
                .map(|&v| (l * v).rem_euclid(q))
                .collect();
            // Enumerate lifts within the bounding box.
            let mut offsets: Vec<Vec<i64>> = vec![Vec::new()];
            for i in 0..n {
                let mut next = Vec::new();
                let mlo = (lo[i] - base[i]).div_euclid(q) - 1;
                let mhi = (hi[i] - base[i]).div_euclid(q) + 1;
                for pref in &offsets {
                    for m in mlo..=mhi {
                        let c = base[i] + m * q;
                        if c >= lo[i] && c <= hi[i] {
                            let mut p = pref.clone();
                            p.push(c);
                            next.push(p);
                        }
                    }
                }
                offsets = next;
            }
            for p in offsets {
                // Solve X^T t = p by Cramer.
                let pv: Vec<i128> = p.iter().map(|&v| v as i128).collect();
                let mut ts = Vec::with_capacity(n);
                let mut inside = true;
                for col in 0..n {
                    let mut m2 = xt.clone();
                    for r in 0..n {
                        m2[r][col] = pv[r];
                    }
                    let di = int_det(&m2);
                    // t_col = di / det must be in [0, 1].
                    let (num, den) = if det < 0 { (-di, -det) } else { (di, det) };
                    if num < 0 || num > den {
                        inside = false;
                        break;
                    }
                    ts.push((num, den));
                }
                if inside {
                    let is_vertex = ts.iter().all(|&(num, den)| num == 0 || num == den);
                    if !is_vertex {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }
}

/// Max distance between two vertices of the parallelepiped spanned by the
/// basis (exact numerators over q).
fn parallelepiped_diameter(basis: &[Vec<i64>], q: i64) -> f64 {
    let n = basis.len();
    let mut best: i128 = 0;
    let mut deltas = vec![0i8; n];
    loop {
        let mut sq: i128 = 0;
        for c in 0..basis[0].len() {
            let mut s: i128 = 0;
            for (i, &d) in deltas.iter().enumerate() {
                s += d as i128 * basis[i][c] as i128;
            }
            sq += s * s;
        }
        best = best.max(sq);
        // Next delta in {-1,0,1}^n.
        let mut i = 0;
        loop {
            if i == n {
                return (best as f64).sqrt() / q as f64;
            }
            if deltas[i] < 1 {
                deltas[i] += 1;
                break;
            }
            deltas[i] = -1;
            i += 1;
        }
    }
}

/// Shortest (by |·|_∞) nonzero k* = (k̂*, k₀*) with ⟨Δ̄, k̂*⟩ = k₀* exactly.
/// Ties break by canonical sign (first nonzero positive), then
/// lexicographically.
pub fn dual_resonant_vector(lat: &RationalLattice) -> (Vec<i64>, i64) {
    let n = lat.dim();
    let q = lat.generator.q as i128;
    let nums: Vec<i128> = lat.generator.nums.iter().map(|&v| v as i128).collect();
    for radius in 1i64.. {
        let mut best: Option<Vec<i64>> = None;
        let mut k_hat = vec![-radius; n];
        loop {
            if k_hat.iter().any(|&v| v.abs() == radius) {
                let s: i128 = nums.iter().zip(&k_hat).map(|(&a, &b)| a * b as i128).sum();
                if s.rem_euclid(q) == 0 {
                    let k0 = (s / q) as i64;
                    if k0.abs() <= radius {
                        let mut full = k_hat.clone();
                        full.push(k0);
                        let canon = canonical_sign(&full);
                        best = Some(match best {
                            None => canon,
                            Some(b) if canon < b => canon,
                            Some(b) => b,
                        });
                    }
                }
            }
            if !advance(&mut k_hat, radius) {
                break;
            }
        }
        // Also pure-k₀ candidates are impossible (k̂ = 0 ⟹ k₀ = 0), so the
        // radius loop terminates by the existence lemma.
        if let Some(b) = best {
            let k0 = b[n];
            return (b[..n].to_vec(), k0);
        }
    }
    unreachable!()
}

fn canonical_sign(v: &[i64]) -> Vec<i64> {
    match v.iter().find(|&&x| x != 0) {
        Some(&x) if x < 0 => v.iter().map(|&y| -y).collect(),
        _ => v.to_vec(),
    }
}

fn advance(v: &mut [i64], radius: i64) -> bool {
    for x in v.iter_mut() {
        if *x < radius {
            *x += 1;
            return true;
        }
        *x = -radius;
    }
    false
}

/// Unimodular completion: K ∈ SL(m, ℤ) whose first row is the primitive
/// vector k, size-reduced so that ‖K‖₂ ≤ √m |k|₂.
pub fn unimodular_completion(k: &[i64]) -> Result<Vec<Vec<i64>>> {
    let m = k.len();
    if m == 0 {
        return Err(Error::domain("empty vector"));
    }
    let g = k.iter().fold(0i64, |acc, &v| gcd(acc, v));
    if g != 1 {
        return Err(Error::domain(format!(
            "gcd of completion vector must be 1, got {g}"
        )));
    }
    let mut rows = complete_rec(k);
    // det = ±1 by construction; normalise to +1 by negating the last row.
    let det = int_det(
        &rows
            .iter()
            .map(|r| r.iter().map(|&v| v as i128).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    );
    if det == -1 {
        let last = rows.len() - 1;
        for v in rows[last].iter_mut() {
            *v = -*v;
        }
    }
    size_reduce(&mut rows);
    Ok(rows)
}

fn complete_rec(k: &[i64]) -> Vec<Vec<i64>> {
    let m = k.len();
    if m == 1 {
        return vec![vec![k[0]]];
    }
    let g_tail = k[1..].iter().fold(0i64, |acc, &v| gcd(acc, v));
    if g_tail == 0 {
        // k = (±1, 0, ..., 0): complete with unit rows.
        let mut rows = vec![k.to_vec()];
        for i in 1..m {
            let mut r = vec![0i64; m];
            r[i] = 1;
            rows.push(r);
        }
        return rows;
    }
    let tail: Vec<i64> = k[1..].iter().map(|&v| v / g_tail).collect();
    let sub = complete_rec(&tail);
    let (_, s, t) = egcd(k[0], g_tail);
    // First row: (k₁, g·tail). Second: (−t, s·tail). Rest: (0, sub rows 2..).
    let mut rows = Vec::with_capacity(m);
    rows.push(k.to_vec());
    let mut r2 = vec![-t];
    r2.extend(tail.iter().map(|&v| s * v));
    rows.push(r2);
    for r in sub.iter().skip(1) {
        let mut row = vec![0i64];
        row.extend_from_slice(r);
        rows.push(row);
    }
    rows
}

/// Lagrange-style size reduction of rows 2..m against each other and row 1.
fn size_reduce(rows: &mut [Vec<i64>]) {
    let m = rows.len();
    for _ in 0..4 * m {
        let mut changed = false;
        for i in 1..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let dot: i128 = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(&a, &b)| a as i128 * b as i128)
                    .sum();
                let nj: i128 = rows[j].iter().map(|&a| a as i128 * a as i128).sum();
                if nj == 0 {
                    continue;
                }
                let mu = ((2 * dot + nj.signum() * nj) / (2 * nj)) as i64; // round(dot/nj)
                if mu != 0 {
                    for c in 0..rows[i].len() {
                        rows[i][c] -= mu * rows[j][c];
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Exact inverse of a unimodular integer matrix (adjugate; det must be ±1).
pub fn unimodular_inverse(rows: &[Vec<i64>]) -> Result<Vec<Vec<i64>>> {
    let m = rows.len();
    let as_i128: Vec<Vec<i128>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v as i128).collect())
        .collect();
    let det = int_det(&as_i128);
    if det != 1 && det != -1 {
        return Err(Error::domain(format!("matrix is not unimodular (det = {det})")));
    }
    let mut inv = vec![vec![0i64; m]; m];
    for i in 0..m {
        for j in 0..m {
            // Cofactor C_ji for the (i, j) entry of the inverse.
            let minor: Vec<Vec<i128>> = (0..m)
                .filter(|&r| r != j)
                .map(|r| {
                    (0..m)
                        .filter(|&c| c != i)
                        .map(|c| as_i128[r][c])
                        .collect()
                })
                .collect();
            let cof = if minor.is_empty() { 1 } else { int_det(&minor) };
            let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
            inv[i][j] = (sign as i128 * cof * det) as i64;
        }
    }
    Ok(inv)
}

/// Spectral norm of an integer matrix.
pub fn spectral_norm(rows: &[Vec<i64>]) -> f64 {
    let m = rows.len();
    let n = rows[0].len();
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j] as f64);
    a.svd(false, false).singular_values[0]
}

/// Verdict of the vague-point test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VagueVerdict {
    pub eta: Vec<f64>,
    pub d: f64,
    pub time_budget: f64,
    /// Direct covering test outcome: true when some cell of the fiber is
    /// missed by the winding sweep.
    pub vague: bool,
    /// Witness resonance l ∦ k with |⟨ν(η), l⟩| ≤ eps, when one exists in
    /// the searched range.
    pub witness: Option<Vec<i64>>,
    pub witness_residual: Option<f64>,
    pub eps: f64,
    pub l_bound_theory: f64,
    pub l_bound_searched: i64,
    /// Set when the direct test and the witness search disagree (the
    /// proposition is one-directional).
    pub advisory: Option<String>,
}

/// Direct (d, K)-vagueness test on the resonant fiber of k at η, plus the
/// witness search of the multiple-resonance proposition.
pub fn vague_test(
    model: &ModelSpec,
    eta: &[f64],
    k: &[i64],
    d: f64,
    time_budget: f64,
) -> Result<VagueVerdict> {
    let n = model.n;
    if k.len() != n + 1 {
        return Err(Error::domain("resonance vector must have dimension n+1"));
    }
    if d <= 0.0 || time_budget <= 0.0 {
        return Err(Error::domain("d and K must be positive"));
    }
    let nu = model.nu_extended(eta);
    let k_inf = k.iter().map(|&v| v.abs()).max().unwrap() as f64;
    let k_2 = (k.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt();

    // Transform the fiber to coordinates where it is {s₁ = const}.
    let g = k.iter().fold(0i64, |acc, &v| gcd(acc, v));
    let k_prim: Vec<i64> = k.iter().map(|&v| v / g.max(1)).collect();
    let completion = unimodular_completion(&k_prim)?;
    // Winding direction inside the fiber: rows 2.. of K applied to ν.
    let fiber_dir: Vec<f64> = completion[1..]
        .iter()
        .map(|row| row.iter().zip(&nu).map(|(&a, &b)| a as f64 * b).sum())
        .collect();

    let d_star = d / ((n as f64 + 1.0).powf(n as f64 / 2.0) * k_inf.powi(n as i32));
    let cells_per_axis = (4.0 / d_star).ceil() as usize;
    if cells_per_axis.pow(n as u32) > 50_000_000 {
        return Err(Error::domain(format!(
            "covering grid too fine: {cells_per_axis}^{n} cells (d★ = {d_star:.3e})"
        )));
    }

    // Sweep one ball: by translation invariance of the winding flow the
    // covering property does not depend on the ball's centre.
    let speed = geom::norm(&fiber_dir).max(1e-300);
    let dt = d_star / (4.0 * speed);
    let steps = (time_budget / dt).ceil() as usize;
    let mut covered = vec![false; cells_per_axis.pow(n as u32)];
    let mut mark = |z: &[f64]| {
        // Mark every cell whose centre is within d★/2 of z.
        let reach = (0.5 * d_star * cells_per_axis as f64).ceil() as i64 + 1;
        let mut idx = vec![0i64; n];
        let base: Vec<i64> = z
            .iter()
            .map(|&c| (c * cells_per_axis as f64).floor() as i64)
            .collect();
        fn rec(
            dim: usize,
            n: usize,
            base: &[i64],
            reach: i64,
            idx: &mut Vec<i64>,
            z: &[f64],
            cells: usize,
            covered: &mut [bool],
            d_star: f64,
        ) {
            if dim == n {
                // Cell centre.
                let mut dist2 = 0.0;
                let mut flat = 0usize;
                for i in 0..n {
                    let ci = idx[i].rem_euclid(cells as i64) as usize;
                    let centre = (ci as f64 + 0.5) / cells as f64;
                    let dd = geom::to_nearest_int(centre - z[i]);
                    dist2 += dd * dd;
                    flat = flat * cells + ci;
                }
                if dist2.sqrt() <= 0.5 * d_star {
                    covered[flat] = true;
                }
                return;
            }
            for o in -reach..=reach {
                idx[dim] = base[dim] + o;
                rec(dim + 1, n, base, reach, idx, z, cells, covered, d_star);
            }
        }
        rec(
            0,
            n,
            &base,
            reach,
            &mut idx,
            z,
            cells_per_axis,
            &mut covered,
            d_star,
        );
    };
    for s in 0..=steps {
        let t = s as f64 * dt;
        let z: Vec<f64> = fiber_dir.iter().map(|&v| geom::frac(v * t)).collect();
        mark(&z);
    }
    let vague = covered.iter().any(|&c| !c);

    // Witness search with the proposition's constants; the theoretical
    // radius can be astronomically large, so the scan is capped and both
    // radii are reported.
    let l_dn = 3.0 * 2f64.powi(n as i32)
        / (std::f64::consts::PI * d_star.powi(n as i32) * (std::f64::consts::PI * d_star / 2.0).sin())
        + 1.0;
    let eps = 4.0 * n as f64 * (2.0 * l_dn + 1.0).ln() / (std::f64::consts::PI * time_budget);
    let l_bound_theory = 2.0 * ((n + 1) as f64).sqrt() * l_dn * k_2;
    let l_bound_searched = (l_bound_theory.min(12.0)) as i64;
    let mut witness: Option<Vec<i64>> = None;
    let mut wit_res = f64::INFINITY;
    let mut l = vec![-l_bound_searched; n + 1];
    loop {
        if l.iter().any(|&v| v != 0) && !parallel(&l, k) {
            let r = l
                .iter()
                .zip(&nu)
                .map(|(&a, &b)| a as f64 * b)
                .sum::<f64>()
                .abs();
            if r <= eps && r < wit_res {
                wit_res = r;
                witness = Some(l.clone());
            }
        }
        if !advance(&mut l, l_bound_searched) {
            break;
        }
    }

    let advisory = if !vague && witness.is_some() {
        Some("winding covers the fiber, yet a near-orthogonal l exists; the proposition is one-directional".into())
    } else {
        None
    };
    Ok(VagueVerdict {
        eta: eta.to_vec(),
        d,
        time_budget,
        vague,
        witness_residual: witness.as_ref().map(|_| wit_res),
        witness,
        eps,
        l_bound_theory,
        l_bound_searched,
        advisory,
    })
}

fn parallel(a: &[i64], b: &[i64]) -> bool {
    // a ∥ b over ℤ: all 2x2 minors vanish.
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            if a[i] as i128 * b[j] as i128 != a[j] as i128 * b[i] as i128 {
                return false;
            }
        }
    }
    true
}

/// Nonzero b ∈ ℤⁿ with ⟨b, x⟩ = 0 mod ℤ for all x ∈ Λ and |b| < c★/δ.
/// Precondition: the minimal parallelepiped diameter exceeds `delta_floor`.
pub fn lattice_orthogonal_vector(lat: &RationalLattice, delta_floor: f64) -> Result<Vec<i64>> {
    if lat.r_min <= delta_floor {
        return Err(Error::domain(format!(
            "a fundamental parallelepiped of diameter {:.3e} <= δ = {delta_floor:.3e} exists (system {:?})",
            lat.r_min, lat.basis_nums
        )));
    }
    let n = lat.dim();
    let q = lat.generator.q as i128;
    let nums: Vec<i128> = lat.generator.nums.iter().map(|&v| v as i128).collect();
    let bound = (c_star(n) / delta_floor).ceil() as i64;
    for radius in 1..=bound.max(1) {
        let mut best: Option<(i128, Vec<i64>)> = None;
        let mut b = vec![-radius; n];
        loop {
            if b.iter().any(|&v| v.abs() == radius) {
                let s: i128 = nums.iter().zip(&b).map(|(&a, &x)| a * x as i128).sum();
                if s.rem_euclid(q) == 0 {
                    let len: i128 = b.iter().map(|&v| v as i128 * v as i128).sum();
                    let cand = canonical_sign(&b);
                    best = Some(match best {
                        None => (len, cand),
                        Some((l0, b0)) if len < l0 || (len == l0 && cand < b0) => (len, cand),
                        Some(other) => other,
                    });
                }
            }
            if !advance(&mut b, radius) {
                break;
            }
        }
        if let Some((_, b)) = best {
            return Ok(b);
        }
    }
    Err(Error::numerical(format!(
        "no orthogonal vector with |b|_∞ ≤ {bound}; bound c★/δ violated"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_rational_input_is_exact() {
        let q = dirichlet_approx(&[1.0 / 3.0, 2.0 / 3.0], 10).unwrap();
        assert_eq!(q, 3);
        for d in [1.0 / 3.0, 2.0 / 3.0] {
            assert!(geom::dist_to_int(q as f64 * d) < 1e-12);
        }
    }

    #[test]
    fn dirichlet_matches_exhaustive_scan() {
        let delta = [std::f64::consts::SQRT_2 - 1.0, 3f64.sqrt() - 1.0];
        let n_bound = 100u64;
        let q = dirichlet_approx(&delta, n_bound).unwrap();
        let target = (n_bound as f64).powf(-0.5);
        let oracle = (1..n_bound)
            .find(|&cand| {
                delta
                    .iter()
                    .map(|&d| geom::dist_to_int(cand as f64 * d))
                    .fold(0.0, f64::max)
                    <= target
            })
            .unwrap();
        assert_eq!(q, oracle);
    }

    #[test]
    fn dirichlet_fibonacci_golden_ratio() {
        // Continued-fraction oracle: for Δ = frac(φ) and N = F_m the
        // minimum is q = F_{m-1}.
        let mut fib = vec![1u64, 1];
        while fib.len() < 20 {
            let k = fib.len();
            fib.push(fib[k - 1] + fib[k - 2]);
        }
        let phi = 0.5 * (1.0 + 5f64.sqrt());
        for m in [10, 14, 18] {
            let q = dirichlet_approx(&[phi.fract()], fib[m]).unwrap();
            assert_eq!(q, fib[m - 1], "m = {m}");
        }
    }

    #[test]
    fn lattice_one_third_two_thirds() {
        let lat = RationalLattice::build(RationalVector {
            nums: vec![1, 2],
            q: 3,
        })
        .unwrap();
        assert_eq!(lat.order, 3);
        // Shortest vector is (1/3, -1/3) (length √2/3).
        let len0 = geom::norm(&lat.basis_f64()[0]);
        assert!((len0 - 2f64.sqrt() / 3.0).abs() < 1e-12);
        assert!(lat.angles_ok());
        assert!(lat.verify_fundamental().unwrap());
        assert!((lat.parallelepiped_volume() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_lattice_q_equals_one() {
        let lat = RationalLattice::build(RationalVector {
            nums: vec![0, 0],
            q: 1,
        })
        .unwrap();
        assert_eq!(lat.order, 1);
        // Fundamental cell of ℤ² has diameter √2.
        assert!((lat.r_min - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_lattice_reports_order() {
        let err = RationalLattice::build(RationalVector {
            nums: vec![2, 4],
            q: 6,
        })
        .unwrap_err();
        assert!(format!("{err}").contains("|Λ| = 3"));
    }

    #[test]
    fn dual_vector_examples() {
        let lat = RationalLattice::build(RationalVector {
            nums: vec![1, 2],
            q: 3,
        })
        .unwrap();
        let (k_hat, k0) = dual_resonant_vector(&lat);
        assert_eq!((k_hat, k0), (vec![1, 1], 1));

        let lat = RationalLattice::build(RationalVector {
            nums: vec![1, 0],
            q: 2,
        })
        .unwrap();
        let (k_hat, k0) = dual_resonant_vector(&lat);
        assert_eq!((k_hat.clone(), k0), (vec![0, 1], 0));

        // Integer generator: q = 1, so k̂ = e₁ with k₀ = Δ̄₁.
        let lat = RationalLattice::build(RationalVector {
            nums: vec![0, 0],
            q: 1,
        })
        .unwrap();
        let (k_hat, k0) = dual_resonant_vector(&lat);
        assert_eq!((k_hat, k0), (vec![0, 1], 0));
    }

    #[test]
    fn dual_vector_exactness_and_minimality_brute_force() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, "lattice", "dual-brute");
        for _ in 0..40 {
            let q = rng.gen_range(2..50i64);
            let nums: Vec<i64> = (0..2).map(|_| rng.gen_range(0..q)).collect();
            let Ok(lat) = RationalLattice::build(RationalVector { nums, q }) else {
                continue;
            };
            let (k_hat, k0) = dual_resonant_vector(&lat);
            let s: i64 = lat
                .generator
                .nums
                .iter()
                .zip(&k_hat)
                .map(|(&a, &b)| a * b)
                .sum();
            assert_eq!(s, k0 * q, "exactness");
            let norm_inf = k_hat
                .iter()
                .chain(std::iter::once(&k0))
                .map(|&v| v.abs())
                .max()
                .unwrap();
            // No shorter vector up to |k|_∞ = norm_inf - 1 by brute force.
            for r in 1..norm_inf {
                let mut kh = vec![-r; 2];
                loop {
                    if kh.iter().any(|&v| v != 0) {
                        let s: i64 = lat
                            .generator
                            .nums
                            .iter()
                            .zip(&kh)
                            .map(|(&a, &b)| a * b)
                            .sum();
                        if s % q == 0 {
                            assert!(
                                (s / q).abs() > r,
                                "found shorter dual vector {kh:?} for q={q}"
                            );
                        }
                    }
                    if !advance(&mut kh, r) {
                        break;
                    }
                }
            }
        }
    }

    #[test]
    fn unimodular_completion_examples() {
        let k = vec![1, 0, 0];
        let rows = unimodular_completion(&k).unwrap();
        assert_eq!(rows[0], k);
        assert_eq!(
            int_det(&rows.iter().map(|r| r.iter().map(|&v| v as i128).collect()).collect::<Vec<_>>()),
            1
        );

        let rows = unimodular_completion(&[2, 3]).unwrap();
        assert_eq!(rows[0], vec![2, 3]);
        let det = rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0];
        assert_eq!(det, 1);
        assert!(spectral_norm(&rows) <= 2f64.sqrt() * 13f64.sqrt() + 1e-9);

        let rows = unimodular_completion(&[1, -1, 0]).unwrap();
        assert_eq!(rows[0], vec![1, -1, 0]);
        let k2 = (2f64).sqrt();
        assert!(spectral_norm(&rows) <= 3f64.sqrt() * k2 + 1e-9);
    }

    #[test]
    fn unimodular_completion_norm_bound_randomised() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5, "lattice", "completion");
        for _ in 0..200 {
            let m = rng.gen_range(2..=6usize);
            let mut k: Vec<i64> = (0..m).map(|_| rng.gen_range(-10..=10i64)).collect();
            let g = k.iter().fold(0i64, |acc, &v| gcd(acc, v));
            if g == 0 {
                k[0] = 1;
            } else {
                for v in k.iter_mut() {
                    *v /= g;
                }
            }
            let rows = unimodular_completion(&k).unwrap();
            assert_eq!(rows[0], k);
            let d = int_det(
                &rows
                    .iter()
                    .map(|r| r.iter().map(|&v| v as i128).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            );
            assert_eq!(d, 1);
            let k2 = (k.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt();
            assert!(
                spectral_norm(&rows) <= (m as f64).sqrt() * k2 + 1e-9,
                "k = {k:?}, norm = {}",
                spectral_norm(&rows)
            );
        }
    }

    #[test]
    fn orthogonal_vector_examples() {
        // Λ = {0}: e₁ qualifies.
        let lat = RationalLattice::build(RationalVector {
            nums: vec![0, 0],
            q: 1,
        })
        .unwrap();
        let b = lattice_orthogonal_vector(&lat, 0.5).unwrap();
        // Any unit vector qualifies; the tie-break picks a canonical one.
        assert_eq!(b.iter().map(|v| v * v).sum::<i64>(), 1);

        // Λ from Δ̄ = (1/3, 2/3): b = (1, 1) works.
        let lat = RationalLattice::build(RationalVector {
            nums: vec![1, 2],
            q: 3,
        })
        .unwrap();
        let b = lattice_orthogonal_vector(&lat, 0.1).unwrap();
        let s: i64 = lat.generator.nums.iter().zip(&b).map(|(&a, &x)| a * x).sum();
        assert_eq!(s % 3, 0);
        assert_eq!(b.iter().map(|v| v.abs()).max().unwrap(), 1);
    }

    #[test]
    fn vague_test_rational_winding_is_vague() {
        let model = ModelSpec::model_a();
        // On the diagonal resonance with rational ν̂ and a tiny budget the
        // winding cannot cover the fiber.
        let verdict = vague_test(&model, &[0.5, 0.5], &[1, -1, 0], 0.15, 2.0).unwrap();
        assert!(verdict.vague);
    }

    #[test]
    fn vague_test_large_ball_covers() {
        let model = ModelSpec::model_a();
        // d close to the fiber diameter: covered trivially.
        let verdict = vague_test(&model, &[0.5, 0.5], &[1, -1, 0], 3.0, 50.0).unwrap();
        assert!(!verdict.vague);
    }
}

//! Sections of the resonant fibration and the integral map 𝒫.
//!
//! For a resonance vector k the torus 𝕋^{n+1} is foliated by the fibers
//! 𝕋ⁿ_φ = {x : ⟨k, x⟩ = φ}. A section is a piecewise-smooth choice of a
//! critical point of Θ|_fiber per φ; the map 𝒫(w) = ∫ grad Θ(w(φ)) dφ
//! vanishes on the per-fiber extremal sections and is steered to a target
//! by switching between branches and a first-order in-fiber correction.

use super::field::MelnikovField;
use crate::error::{Error, Result};
use crate::geom;
use crate::lattice;
use crate::model::LoopSign;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A branch discontinuity of a section, with the one-sided limit points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakPoint {
    pub phi: f64,
    /// w(φ⁻).
    pub left: Vec<f64>,
    /// w(φ⁺).
    pub right: Vec<f64>,
}

/// Piecewise-smooth section w : 𝕋¹ → 𝕋^{n+1}, w(φ) ∈ 𝕋ⁿ_φ, sampled on a
/// uniform φ-grid with refined breakpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectionMap {
    pub k: Vec<i64>,
    /// Sample points x_i = w(i/m) ∈ 𝕋^{n+1}.
    pub samples: Vec<Vec<f64>>,
    /// Branch discontinuities, sorted by φ.
    pub breaks: Vec<BreakPoint>,
}

impl SectionMap {
    pub fn grid(&self) -> usize {
        self.samples.len()
    }

    /// w(φ) from the nearest grid node.
    pub fn eval(&self, phi: f64) -> &[f64] {
        let m = self.samples.len();
        let i = ((geom::frac(phi) * m as f64).round() as usize) % m;
        &self.samples[i]
    }

    /// Smallest circle distance from φ to a breakpoint.
    pub fn dist_to_breakpoint(&self, phi: f64) -> f64 {
        self.breaks
            .iter()
            .map(|b| geom::dist_to_int(phi - b.phi))
            .fold(f64::INFINITY, f64::min)
    }

    /// Fiber constraint residual max_i ‖⟨k, w(φ_i)⟩ − φ_i‖_ℤ.
    pub fn fiber_residual(&self) -> f64 {
        let m = self.samples.len();
        let mut worst = 0.0f64;
        for (i, x) in self.samples.iter().enumerate() {
            let phi = i as f64 / m as f64;
            let v: f64 = self.k.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum();
            worst = worst.max(geom::dist_to_int(v - phi));
        }
        worst
    }
}

/// Fiber parametrization through the unimodular completion of k:
/// x(φ, z) = c₀ φ + Σ c_j z_j with integer columns c of K⁻¹.
pub struct FiberChart {
    pub k: Vec<i64>,
    cols: Vec<Vec<f64>>,
}

impl FiberChart {
    pub fn new(k: &[i64]) -> Result<Self> {
        let g = k
            .iter()
            .fold(0i64, |acc, &v| {
                let (mut a, mut b) = (acc.abs(), v.abs());
                while b != 0 {
                    let t = a % b;
                    a = b;
                    b = t;
                }
                a
            })
            .max(1);
        let prim: Vec<i64> = k.iter().map(|&v| v / g).collect();
        let completion = lattice::unimodular_completion(&prim)?;
        let inv = lattice::unimodular_inverse(&completion)?;
        let m = k.len();
        let cols = (0..m)
            .map(|j| (0..m).map(|i| inv[i][j] as f64).collect())
            .collect();
        Ok(FiberChart { k: prim, cols })
    }

    pub fn dim(&self) -> usize {
        self.k.len() - 1
    }

    /// Point of 𝕋^{n+1} with fiber coordinate φ and chart coordinate z.
    pub fn point(&self, phi: f64, z: &[f64]) -> Vec<f64> {
        let m = self.k.len();
        let mut x = vec![0.0; m];
        for i in 0..m {
            x[i] = self.cols[0][i] * phi;
            for (j, zj) in z.iter().enumerate() {
                x[i] += self.cols[j + 1][i] * zj;
            }
            x[i] = geom::frac(x[i]);
        }
        x
    }

    /// Tangent basis of the fiber (columns 2..m of K⁻¹).
    pub fn tangent(&self) -> Vec<Vec<f64>> {
        self.cols[1..].to_vec()
    }
}

/// Extremum kind for the per-fiber optimisation.
#[derive(Clone, Copy, PartialEq)]
enum Extremum {
    Max,
    Min,
}

struct FiberOptimizer<'a, 'b> {
    field: &'a MelnikovField<'b>,
    sigma: LoopSign,
    y: Vec<f64>,
    chart: &'a FiberChart,
    zgrid: usize,
}

impl FiberOptimizer<'_, '_> {
    /// Grid + Newton-polished extremum of Θ on the fiber at φ; returns
    /// (z, θ-value).
    fn global(&self, phi: f64, kind: Extremum) -> Result<(Vec<f64>, f64)> {
        let zdim = self.chart.dim();
        let sign = if kind == Extremum::Max { 1.0 } else { -1.0 };
        let mut best = (f64::NEG_INFINITY, vec![0.0; zdim]);
        let mut idx = vec![0usize; zdim];
        loop {
            let z: Vec<f64> = idx.iter().map(|&v| v as f64 / self.zgrid as f64).collect();
            let x = self.chart.point(phi, &z);
            let v = sign * self.field.theta_jet(self.sigma, &self.y, &x)?.value;
            if v > best.0 {
                best = (v, z);
            }
            let mut d = 0;
            let mut done = false;
            loop {
                if d == zdim {
                    done = true;
                    break;
                }
                if idx[d] < self.zgrid - 1 {
                    idx[d] += 1;
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if done {
                break;
            }
        }
        let z = self.polish(phi, &best.1)?;
        let x = self.chart.point(phi, &z);
        let v = self.field.theta_jet(self.sigma, &self.y, &x)?.value;
        Ok((z, v))
    }

    /// Track an extremum branch from a nearby chart point.
    fn local(&self, phi: f64, z0: &[f64]) -> Result<(Vec<f64>, f64)> {
        let z = self.polish(phi, z0)?;
        let x = self.chart.point(phi, &z);
        let v = self.field.theta_jet(self.sigma, &self.y, &x)?.value;
        Ok((z, v))
    }

    fn polish(&self, phi: f64, z0: &[f64]) -> Result<Vec<f64>> {
        let tangent = self.chart.tangent();
        let zdim = tangent.len();
        let mut z = z0.to_vec();
        for _ in 0..40 {
            let x = self.chart.point(phi, &z);
            let jet = self.field.theta_jet(self.sigma, &self.y, &x)?;
            let g = DVector::from_fn(zdim, |a, _| geom::dot(&tangent[a], &jet.grad));
            let h = DMatrix::from_fn(zdim, zdim, |a, b| {
                let mut s = 0.0;
                for i in 0..tangent[a].len() {
                    for j in 0..tangent[b].len() {
                        s += tangent[a][i] * jet.hess[(i, j)] * tangent[b][j];
                    }
                }
                s
            });
            let step = match h.lu().solve(&g) {
                Some(s) => s,
                None => break,
            };
            let norm_step = step.norm();
            for a in 0..zdim {
                z[a] = geom::frac(z[a] - step[a].clamp(-0.03, 0.03));
            }
            if norm_step < 1e-12 {
                break;
            }
        }
        Ok(z)
    }
}

/// Global per-fiber maximum and minimum sections x₊, x₋ of Θ(y, ·)|_fiber.
///
/// Requires y on the resonance (res(y, k) = 0) so the winding direction is
/// tangent to the fibers. Breakpoints (maximizer branch switches) are
/// refined by bisection and carry both one-sided limits.
pub fn extremal_sections(
    field: &MelnikovField,
    sigma: LoopSign,
    y: &[f64],
    k: &[i64],
    grid: usize,
) -> Result<(SectionMap, SectionMap)> {
    let n = field.model.n;
    let res = field.model.residual(y, &k[..n], k[n]);
    if res.abs() > 1e-9 {
        return Err(Error::domain(format!(
            "extremal sections require y on the resonance; res = {res:.3e}"
        )));
    }
    let chart = FiberChart::new(k)?;
    let zgrid = 24usize;
    let opt = FiberOptimizer {
        field,
        sigma,
        y: y.to_vec(),
        chart: &chart,
        zgrid,
    };
    // Branch switches move the maximizer by O(1); smooth drift moves it by
    // O(1/grid) per node. A false positive only splits a smooth piece.
    let jump_threshold = (10.0 / grid as f64).min(0.2);

    let build = |kind: Extremum| -> Result<SectionMap> {
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(grid);
        for i in 0..grid {
            let phi = i as f64 / grid as f64;
            let (z, _) = opt.global(phi, kind)?;
            zs.push(z);
        }
        let mut samples = Vec::with_capacity(grid);
        for (i, z) in zs.iter().enumerate() {
            samples.push(chart.point(i as f64 / grid as f64, z));
        }
        // Breakpoints where the maximizer location jumps; refine each by
        // bisection on the branch values.
        let mut breaks = Vec::new();
        for i in 0..grid {
            let j = (i + 1) % grid;
            if geom::torus_dist(&zs[i], &zs[j]) > jump_threshold {
                let mut lo = i as f64 / grid as f64;
                let mut hi = lo + 1.0 / grid as f64;
                let mut z_lo = zs[i].clone();
                let mut z_hi = zs[j].clone();
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    let (zl, vl) = opt.local(mid, &z_lo)?;
                    let (zr, vr) = opt.local(mid, &z_hi)?;
                    // The branch that still attains the global extremum
                    // owns the midpoint.
                    let left_wins = match kind {
                        Extremum::Max => vl >= vr,
                        Extremum::Min => vl <= vr,
                    };
                    if left_wins {
                        lo = mid;
                        z_lo = zl;
                    } else {
                        hi = mid;
                        z_hi = zr;
                    }
                }
                let phi_b = geom::frac(0.5 * (lo + hi));
                breaks.push(BreakPoint {
                    phi: phi_b,
                    left: chart.point(phi_b, &z_lo),
                    right: chart.point(phi_b, &z_hi),
                });
            }
        }
        breaks.sort_by(|a, b| a.phi.partial_cmp(&b.phi).unwrap());
        Ok(SectionMap {
            k: chart.k.clone(),
            samples,
            breaks,
        })
    };
    Ok((build(Extremum::Max)?, build(Extremum::Min)?))
}

/// 𝒫(w) = ∫ grad Θ(w(φ)) dφ: periodic trapezoid over the sample grid,
/// split at breakpoints with one-sided limit values.
///
/// Break-free sections integrate with spectral accuracy; each breakpoint
/// contributes an O(h²) local error through its refined one-sided limits.
pub fn section_integral(
    field: &MelnikovField,
    sigma: LoopSign,
    y: &[f64],
    w: &SectionMap,
) -> Result<Vec<f64>> {
    let m = w.samples.len();
    let dim = w.samples[0].len();
    let h = 1.0 / m as f64;
    let grad_at = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(field.theta_jet(sigma, y, x)?.grad)
    };
    if w.breaks.is_empty() {
        let mut acc = vec![0.0; dim];
        for x in &w.samples {
            let g = grad_at(x)?;
            for a in 0..dim {
                acc[a] += g[a] * h;
            }
        }
        return Ok(acc);
    }
    // Nodes between consecutive breakpoints, with the one-sided limits as
    // piece endpoints; trapezoid on each piece.
    let mut acc = vec![0.0; dim];
    let nb = w.breaks.len();
    for bi in 0..nb {
        let b0 = &w.breaks[bi];
        let b1 = &w.breaks[(bi + 1) % nb];
        let start = b0.phi;
        let end = if bi + 1 == nb { b1.phi + 1.0 } else { b1.phi };
        // Interior grid nodes in (start, end).
        let first = (start * m as f64).floor() as i64 + 1;
        let last = (end * m as f64).ceil() as i64 - 1;
        let mut knots: Vec<(f64, Vec<f64>)> = Vec::new();
        knots.push((start, grad_at(&b0.right)?));
        for i in first..=last {
            let phi = i as f64 / m as f64;
            if phi <= start + 1e-15 || phi >= end - 1e-15 {
                continue;
            }
            let idx = (i.rem_euclid(m as i64)) as usize;
            knots.push((phi, grad_at(&w.samples[idx])?));
        }
        knots.push((end, grad_at(&b1.left)?));
        for pair in knots.windows(2) {
            let dphi = pair[1].0 - pair[0].0;
            for a in 0..dim {
                acc[a] += 0.5 * dphi * (pair[0].1[a] + pair[1].1[a]);
            }
        }
    }
    Ok(acc)
}

/// Result of the section construction toward a target 𝒫 value.
#[derive(Debug, Clone)]
pub struct SectionForDirection {
    pub section: SectionMap,
    pub requested: Vec<f64>,
    pub achieved: Vec<f64>,
    /// Half of the reachable range of the k-component of 𝒫 via branch
    /// switching.
    pub omega_k_range: f64,
}

/// Search switch points between the extremal branches plus a first-order
/// in-fiber correction so that 𝒫(w) ≈ ω·b, where b is the unit embedding
/// (β, ⟨ν̂(y), β⟩)/|·| of the requested action direction β.
///
/// When the target is outside the reachable set the best-achievable section
/// is returned (no error); compare `achieved` against `requested`.
pub fn construct_section_for_direction(
    field: &MelnikovField,
    sigma: LoopSign,
    y: &[f64],
    k: &[i64],
    beta: &[f64],
    omega: f64,
    grid: usize,
) -> Result<SectionForDirection> {
    let n = field.model.n;
    let (x_plus, x_minus) = extremal_sections(field, sigma, y, k, grid)?;
    let kf: Vec<f64> = x_plus.k.iter().map(|&v| v as f64).collect();
    let k2 = geom::dot(&kf, &kf);

    // Branch-difference profile D(φ) = Θ(x₊(φ)) − Θ(x₋(φ)).
    let m = grid;
    let mut d_profile = Vec::with_capacity(m);
    for i in 0..m {
        let a = field.theta_jet(sigma, y, &x_plus.samples[i])?.value;
        let b = field.theta_jet(sigma, y, &x_minus.samples[i])?.value;
        d_profile.push(a - b);
    }
    let (i_max, d_max) = d_profile
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let (i_min, d_min) = d_profile
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let omega_k_range = k2 * (d_max - d_min);

    if omega == 0.0 {
        // The extremal section itself: 𝒫(x₊) = 0.
        let achieved = section_integral(field, sigma, y, &x_plus)?;
        return Ok(SectionForDirection {
            section: x_plus,
            requested: vec![0.0; n + 1],
            achieved,
            omega_k_range,
        });
    }

    // Target in ℝ^{n+1}: the embedded unit direction scaled by ω.
    let nu = field.model.nu_hat(y);
    let mut emb = beta.to_vec();
    emb.push(geom::dot(beta, &nu));
    let l = geom::norm(&emb);
    let target: Vec<f64> = emb.iter().map(|v| omega * v / l).collect();

    // k-component target: ⟨P, k⟩ = |k|²(D(φ₁) − D(φ₂)) for a switch pair
    // (x₊ → x₋ at φ₁, back at φ₂).
    let want_k = geom::dot(&target, &kf);
    let val = (want_k / k2).clamp(d_min - d_max, d_max - d_min);
    let mut w = x_plus.clone();
    if val.abs() > 1e-14 * (1.0 + d_max.abs()) {
        let (anchor, lift) = if val >= 0.0 {
            (i_min, d_min + val)
        } else {
            (i_max, d_max + val)
        };
        let mut sw = anchor;
        let mut best = f64::INFINITY;
        for (i, &v) in d_profile.iter().enumerate() {
            if i == anchor {
                continue;
            }
            let e = (v - lift).abs();
            if e < best {
                best = e;
                sw = i;
            }
        }
        let (from, to) = if val >= 0.0 { (sw, anchor) } else { (anchor, sw) };
        let mut i = from;
        loop {
            w.samples[i] = x_minus.samples[i].clone();
            i = (i + 1) % m;
            if i == to {
                break;
            }
        }
        // Switch breakpoints with one-sided limits from the two branches,
        // merged with the natural breaks of the branches in use.
        let mut breaks: Vec<BreakPoint> = Vec::new();
        breaks.push(BreakPoint {
            phi: from as f64 / m as f64,
            left: x_plus.samples[from].clone(),
            right: x_minus.samples[from].clone(),
        });
        breaks.push(BreakPoint {
            phi: to as f64 / m as f64,
            left: x_minus.samples[(to + m - 1) % m].clone(),
            right: x_plus.samples[to].clone(),
        });
        let on_minus = |phi: f64| -> bool {
            let a = from as f64 / m as f64;
            let b = to as f64 / m as f64;
            if a <= b {
                phi >= a && phi < b
            } else {
                phi >= a || phi < b
            }
        };
        for b in x_plus.breaks.iter().filter(|b| !on_minus(b.phi)) {
            breaks.push(b.clone());
        }
        for b in x_minus.breaks.iter().filter(|b| on_minus(b.phi)) {
            breaks.push(b.clone());
        }
        breaks.sort_by(|a, b| a.phi.partial_cmp(&b.phi).unwrap());
        breaks.dedup_by(|a, b| (a.phi - b.phi).abs() < 1e-12);
        w.breaks = breaks;
    }

    // First-order in-fiber correction for the components orthogonal to k:
    // move the nodes inside {⟨k, v⟩ = 0, ⟨A α, v⟩ = 0} and re-project onto
    // the critical set.
    let alpha = field.alpha(y);
    for _ in 0..4 {
        let achieved = section_integral(field, sigma, y, &w)?;
        let resid = geom::sub(&target, &achieved);
        let resid_perp = reject(&resid, &kf);
        if geom::norm(&resid_perp) < 1e-9 {
            break;
        }
        let mut frames: Vec<Vec<Vec<f64>>> = Vec::with_capacity(m);
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let zdim = n + 1 - 2;
        for x in &w.samples {
            let jet = field.theta_jet(sigma, y, x)?;
            let mut a_alpha = vec![0.0; n + 1];
            for a in 0..n + 1 {
                a_alpha[a] = (0..n + 1).map(|b| jet.hess[(a, b)] * alpha[b]).sum();
            }
            frames.push(orth_complement(&[kf.clone(), a_alpha]));
        }
        for b in 0..zdim {
            let mut col = vec![0.0; n + 1];
            for (x, frame) in w.samples.iter().zip(&frames) {
                if frame.len() <= b {
                    continue;
                }
                let jet = field.theta_jet(sigma, y, x)?;
                for a in 0..n + 1 {
                    col[a] += (0..n + 1)
                        .map(|c| jet.hess[(a, c)] * frame[b][c])
                        .sum::<f64>()
                        / m as f64;
                }
            }
            columns.push(col);
        }
        if columns.is_empty() {
            break;
        }
        let mat = DMatrix::from_fn(n + 1, columns.len(), |i, j| columns[j][i]);
        let rhs = DVector::from_row_slice(&resid_perp);
        let coef = match (mat.transpose() * &mat)
            .lu()
            .solve(&(mat.transpose() * rhs))
        {
            Some(c) => c,
            None => break,
        };
        let damp = 0.8;
        for (i, x) in w.samples.iter_mut().enumerate() {
            let frame = &frames[i];
            let mut moved = x.clone();
            for (b, f) in frame.iter().enumerate() {
                if b >= coef.len() {
                    break;
                }
                for a in 0..n + 1 {
                    moved[a] += damp * coef[b] * f[a];
                }
            }
            if let Ok(fixed) = project_to_critical(field, sigma, y, &alpha, &kf, &moved) {
                *x = fixed;
            }
        }
    }
    let achieved = section_integral(field, sigma, y, &w)?;
    Ok(SectionForDirection {
        section: w,
        requested: target,
        achieved,
        omega_k_range,
    })
}

/// Component of v orthogonal to d.
fn reject(v: &[f64], d: &[f64]) -> Vec<f64> {
    let c = geom::dot(v, d) / geom::dot(d, d);
    v.iter().zip(d).map(|(&a, &b)| a - c * b).collect()
}

/// Orthonormal basis of the complement of the span of the given vectors.
fn orth_complement(span: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = span[0].len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in span {
        let mut u = v.clone();
        for b in &basis {
            let c = geom::dot(&u, b);
            u = geom::axpy(&u, -c, b);
        }
        let n = geom::norm(&u);
        if n > 1e-12 {
            basis.push(geom::scale(&u, 1.0 / n));
        }
    }
    let span_rank = basis.len();
    for i in 0..dim {
        let mut u = vec![0.0; dim];
        u[i] = 1.0;
        for b in &basis {
            let c = geom::dot(&u, b);
            u = geom::axpy(&u, -c, b);
        }
        let n = geom::norm(&u);
        if n > 1e-8 {
            basis.push(geom::scale(&u, 1.0 / n));
        }
    }
    basis[span_rank..].to_vec()
}

/// Newton bringing x back onto {∂_α Θ = 0} without leaving its fiber.
fn project_to_critical(
    field: &MelnikovField,
    sigma: LoopSign,
    y: &[f64],
    alpha: &[f64],
    kf: &[f64],
    x0: &[f64],
) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    for _ in 0..20 {
        let jet = field.theta_jet(sigma, y, &x)?;
        let f = geom::dot(alpha, &jet.grad);
        if f.abs() < 1e-12 {
            return Ok(geom::wrap(&x));
        }
        let dim = x.len();
        let mut a_alpha = vec![0.0; dim];
        for a in 0..dim {
            a_alpha[a] = (0..dim).map(|b| jet.hess[(a, b)] * alpha[b]).sum();
        }
        let dir = reject(&a_alpha, kf);
        let df = geom::dot(&a_alpha, &dir);
        if df.abs() < 1e-300 {
            break;
        }
        let step = (f / df).clamp(-0.05, 0.05);
        for a in 0..dim {
            x[a] -= step * dir[a];
        }
        if step.abs() < 1e-13 {
            return Ok(geom::wrap(&x));
        }
    }
    Err(Error::numerical("projection onto the critical set failed"))
}

//! Critical sets of the winding derivative of Θ and the implicit solver Ψ.

use super::field::MelnikovField;
use crate::error::{Error, Result};
use crate::geom;
use crate::model::LoopSign;
use serde::{Deserialize, Serialize};

/// A nondegenerate critical point of ∂Θ(y, ·, ·) on 𝕋^{n+1}, with the
/// window constants for which the implicit solver was certified.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub tau: f64,
    /// ∂²Θ at the point.
    pub second_derivative: f64,
    pub window: Option<WindowCert>,
}

/// Sampled certification of the implicit solver over the (c′, c″) window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowCert {
    pub c_prime: f64,
    pub c_second: f64,
    pub psi_max: f64,
    pub psi_zeta_max: f64,
    pub psi_z_max: f64,
    pub ok: bool,
}

impl CriticalPoint {
    /// The (ζ, τ) representative with ζ = ξ + ν̂(y)τ.
    pub fn zeta(&self, field: &MelnikovField) -> Vec<f64> {
        let nu = field.model.nu_hat(&self.y);
        self.xi
            .iter()
            .zip(&nu)
            .map(|(&x, &n)| geom::frac(x + n * self.tau))
            .collect()
    }
}

/// Options for the critical-set scan.
#[derive(Debug, Clone)]
pub struct CriticalScanConfig {
    /// Grid nodes per period per dimension (≥ 8).
    pub grid_density: usize,
    /// Degeneracy floor factor relative to the grid sup of |∂²Θ|.
    pub floor_factor: f64,
    /// When set, run the sampled Ψ certification over this (c′, c″).
    pub certify: Option<(f64, f64)>,
    /// ε used for the ρ-window scaling during certification.
    pub eps: f64,
}

impl Default for CriticalScanConfig {
    fn default() -> Self {
        CriticalScanConfig {
            grid_density: 12,
            floor_factor: 1e-6,
            certify: Some((0.1, 0.1)),
            eps: 1e-2,
        }
    }
}

/// Scan ∂Θ(y, ξ, τ) = 0 along τ for each ξ-fiber, refine by Newton, reject
/// points with |∂²Θ| below the scaled floor, deduplicate by torus distance.
pub fn find_critical_set(
    field: &MelnikovField,
    sigma: LoopSign,
    y: &[f64],
    cfg: &CriticalScanConfig,
) -> Result<Vec<CriticalPoint>> {
    let n = field.model.n;
    if cfg.grid_density < 8 {
        return Err(Error::domain("grid_density must be at least 8"));
    }
    let g = cfg.grid_density;
    // Scaled degeneracy floor from the grid sup of |∂²Θ|.
    let mut sup_d2 = 0.0f64;
    {
        let mut idx = vec![0usize; n + 1];
        loop {
            let x: Vec<f64> = idx.iter().map(|&i| i as f64 / g as f64).collect();
            let d = field.directional(sigma, y, &x[..n], x[n])?;
            sup_d2 = sup_d2.max(d.d2_theta.abs());
            if !advance_idx(&mut idx, g) {
                break;
            }
        }
    }
    if sup_d2 == 0.0 {
        return Ok(Vec::new());
    }
    let floor = cfg.floor_factor * sup_d2;

    let mut points: Vec<CriticalPoint> = Vec::new();
    let mut degenerate_fibers = 0usize;
    let mut fibers = 0usize;
    let mut idx = vec![0usize; n];
    loop {
        fibers += 1;
        let xi: Vec<f64> = idx.iter().map(|&i| i as f64 / g as f64).collect();
        // Roots of h(τ) = ∂Θ(y, ξ, τ) on the τ-circle.
        let mut vals = Vec::with_capacity(g + 1);
        for i in 0..=g {
            let tau = i as f64 / g as f64;
            vals.push(field.directional(sigma, y, &xi, tau)?.d_theta);
        }
        let mut found_any = false;
        for i in 0..g {
            if vals[i] == 0.0 || vals[i] * vals[i + 1] < 0.0 {
                let mut tau = (i as f64 + 0.5) / g as f64;
                let mut converged = false;
                for _ in 0..50 {
                    let d = field.directional(sigma, y, &xi, tau)?;
                    if d.d_theta_dtau.abs() < 1e-300 {
                        break;
                    }
                    let step = d.d_theta / d.d_theta_dtau;
                    tau -= step;
                    if step.abs() < 1e-13 {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    continue;
                }
                let tau = geom::frac(tau);
                let d = field.directional(sigma, y, &xi, tau)?;
                if d.d_theta.abs() > 1e-9 {
                    continue;
                }
                if d.d2_theta.abs() <= floor {
                    degenerate_fibers += 1;
                    continue;
                }
                found_any = true;
                let mut x = xi.clone();
                x.push(tau);
                if points.iter().any(|p| {
                    let mut px = p.xi.clone();
                    px.push(p.tau);
                    geom::torus_dist(&px, &x) < 0.25 / g as f64
                }) {
                    continue;
                }
                points.push(CriticalPoint {
                    y: y.to_vec(),
                    xi: xi.clone(),
                    tau,
                    second_derivative: d.d2_theta,
                    window: None,
                });
            }
        }
        let _ = found_any;
        if !advance_idx(&mut idx, g) {
            break;
        }
    }
    if points.is_empty() && degenerate_fibers > fibers / 2 {
        return Err(Error::numerical(
            "all critical seeds hit degenerate points: the perturbation violates the \
             nondegeneracy hypothesis on this fiber family",
        ));
    }
    if let Some((cp, cs)) = cfg.certify {
        for p in points.iter_mut() {
            let cert = certify_window(field, sigma, p, cp, cs, cfg.eps)?;
            p.window = Some(cert);
        }
    }
    Ok(points)
}

fn advance_idx(idx: &mut [usize], g: usize) -> bool {
    for v in idx.iter_mut() {
        if *v < g - 1 {
            *v += 1;
            return true;
        }
        *v = 0;
    }
    false
}

/// Newton solve of Θ̂_τ(y, ζ, τ) = z starting from the seed's τ.
///
/// The seed fixes the branch; the result is guaranteed in (−2, 2).
pub fn solve_tau(
    field: &MelnikovField,
    sigma: LoopSign,
    seed: &CriticalPoint,
    y: &[f64],
    zeta: &[f64],
    z: f64,
) -> Result<f64> {
    let mut tau = seed.tau;
    // Start from the seed's τ on the branch through (ζ₀, τ₀).
    for it in 0..50 {
        let f = field.theta_hat_tau(sigma, y, zeta, tau)? - z;
        let df = field.theta_hat_tautau(sigma, y, zeta, tau)?;
        if df.abs() < 1e-300 {
            return Err(Error::numerical(format!(
                "Ψ solve: vanishing Θ̂_ττ at iteration {it}"
            )));
        }
        let step = f / df;
        tau -= step;
        if !(-2.0..=2.0).contains(&tau) {
            return Err(Error::numerical(format!(
                "Ψ solve left (−2, 2): τ = {tau:.4}"
            )));
        }
        if step.abs() < 1e-13 {
            return Ok(tau);
        }
    }
    Err(Error::numerical(
        "Ψ solve: Newton did not converge in 50 iterations (outside the seed window?)",
    ))
}

/// Solve Θ̂_τ(y, ζ, τ) = 0 for the root nearest to `seed`, bracketing
/// before Newton so the branch cannot be lost. Returns the seed itself in
/// the degenerate (Θ ≡ 0) case.
pub fn solve_tau_near(
    field: &MelnikovField,
    sigma: LoopSign,
    y: &[f64],
    zeta: &[f64],
    seed: f64,
) -> Result<f64> {
    let dd = field.theta_hat_tautau(sigma, y, zeta, seed)?;
    let f0 = field.theta_hat_tau(sigma, y, zeta, seed)?;
    if dd.abs() < 1e-12 && f0.abs() < 1e-12 {
        return Ok(seed);
    }
    // Bracket the nearest sign change around the seed.
    let scan = 96;
    let h = 1.0 / scan as f64;
    let mut bracket: Option<(f64, f64)> = None;
    let mut prev_lo = f0;
    let mut prev_hi = f0;
    for i in 1..=scan {
        let tau_hi = seed + i as f64 * h;
        let tau_lo = seed - i as f64 * h;
        if tau_hi <= 2.0 {
            let fh = field.theta_hat_tau(sigma, y, zeta, tau_hi)?;
            if prev_hi == 0.0 || prev_hi * fh < 0.0 {
                bracket = Some((tau_hi - h, tau_hi));
                break;
            }
            prev_hi = fh;
        }
        if tau_lo >= -2.0 {
            let fl = field.theta_hat_tau(sigma, y, zeta, tau_lo)?;
            if prev_lo == 0.0 || prev_lo * fl < 0.0 {
                bracket = Some((tau_lo, tau_lo + h));
                break;
            }
            prev_lo = fl;
        }
    }
    let (mut a, mut b) = bracket.ok_or_else(|| {
        Error::numerical("no root of Θ̂_τ within (−2, 2) around the seed")
    })?;
    let mut fa = field.theta_hat_tau(sigma, y, zeta, a)?;
    // Safeguarded Newton–bisection inside the bracket.
    let mut tau = 0.5 * (a + b);
    for _ in 0..80 {
        let f = field.theta_hat_tau(sigma, y, zeta, tau)?;
        let df = field.theta_hat_tautau(sigma, y, zeta, tau)?;
        let newton = if df.abs() > 1e-300 { tau - f / df } else { f64::NAN };
        if f == 0.0 {
            return Ok(tau);
        }
        if fa * f < 0.0 {
            b = tau;
        } else {
            a = tau;
            fa = f;
        }
        tau = if newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (b - a).abs() < 1e-14 {
            return Ok(tau);
        }
    }
    Ok(tau)
}

/// Sampled certification of the Ψ bounds |Ψ| < 2, |Ψ_ζ| < 1/c″,
/// |Ψ_z| < 1/c″ over the (c′, c″) window around the seed.
pub fn certify_window(
    field: &MelnikovField,
    sigma: LoopSign,
    seed: &CriticalPoint,
    c_prime: f64,
    c_second: f64,
    eps: f64,
) -> Result<WindowCert> {
    let n = field.model.n;
    let zeta0 = seed.zeta(field);
    // ε^{3/4}|ρ − ρ₀| < c′ translates to |y − y₀| < c′ ε^{1/4}.
    let dy = c_prime * eps.powf(0.25);
    let mut psi_max = 0.0f64;
    let mut psi_zeta = 0.0f64;
    let mut psi_z = 0.0f64;
    let h = 1e-5;
    let mut ok = true;
    'outer: for sy in [-1.0f64, 0.0, 1.0] {
        for sz in [-0.6f64, 0.0, 0.6] {
            for szeta in [-0.6f64, 0.0, 0.6] {
                let mut y = seed.y.clone();
                y[0] = (y[0] + sy * dy).clamp(
                    field.model.domain_dcal.lo[0],
                    field.model.domain_dcal.hi[0],
                );
                let mut zeta = zeta0.clone();
                zeta[0] += szeta * c_prime;
                let z = sz * c_prime;
                let tau = match solve_tau(field, sigma, seed, &y, &zeta, z) {
                    Ok(t) => t,
                    Err(_) => {
                        ok = false;
                        break 'outer;
                    }
                };
                psi_max = psi_max.max(tau.abs());
                // FD derivatives of Ψ in ζ₁ and z.
                let mut zp = zeta.clone();
                zp[0] += h;
                let mut zm = zeta.clone();
                zm[0] -= h;
                if let (Ok(tp), Ok(tm)) = (
                    solve_tau(field, sigma, seed, &y, &zp, z),
                    solve_tau(field, sigma, seed, &y, &zm, z),
                ) {
                    psi_zeta = psi_zeta.max(((tp - tm) / (2.0 * h)).abs());
                }
                if let (Ok(tp), Ok(tm)) = (
                    solve_tau(field, sigma, seed, &y, &zeta, z + h),
                    solve_tau(field, sigma, seed, &y, &zeta, z - h),
                ) {
                    psi_z = psi_z.max(((tp - tm) / (2.0 * h)).abs());
                }
                let _ = n;
            }
        }
    }
    let ok = ok && psi_max < 2.0 && psi_zeta < 1.0 / c_second && psi_z < 1.0 / c_second;
    Ok(WindowCert {
        c_prime,
        c_second,
        psi_max,
        psi_zeta_max: psi_zeta,
        psi_z_max: psi_z,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melnikov::field::MelnikovField;
    use crate::model::{ModelSpec, PerturbationSpec};

    fn setup() -> (ModelSpec, PerturbationSpec) {
        (ModelSpec::model_a(), PerturbationSpec::model_a_default())
    }

    #[test]
    fn critical_roots_per_fiber_match_closed_form() {
        // Closed-form oracle at y = (1, 2): with ν̂ = (1, 2),
        // ∂Θ = −4π I [sin 2πξ₁ + sin 2π(ξ₂+τ)], so each ξ-fiber carries
        // exactly two roots in τ: sin 2π(ξ₂+τ) = −sin 2πξ₁. On one root
        // cos 2π(ξ₂+τ) = cos 2πξ₁ (nondegenerate for generic ξ₁); on the
        // other the cosines cancel and ∂²Θ = 0 exactly, so the scan keeps
        // one point per generic fiber and rejects the flat branch.
        let (model, pert) = setup();
        let field = MelnikovField::new(&model, &pert);
        let y = [1.0, 2.0];
        let cfg = CriticalScanConfig {
            grid_density: 8,
            certify: None,
            ..Default::default()
        };
        let pts = find_critical_set(&field, 1, &y, &cfg).unwrap();
        // 64 fibers minus the 16 tangency fibers (|sin 2πξ₁| = 1), one
        // nondegenerate root each.
        assert_eq!(pts.len(), 48, "got {}", pts.len());
        for p in &pts {
            let d = field.directional(1, &p.y, &p.xi, p.tau).unwrap();
            assert!(d.d_theta.abs() < 1e-9);
            assert!(d.d2_theta.abs() > 1e-6);
            // Verify against the oracle: two τ-roots of the closed form on
            // this fiber, and the found one satisfies the nondegenerate
            // branch equation cos 2π(ξ₂+τ) ≈ cos 2πξ₁.
            let tau2pi = std::f64::consts::TAU;
            let lhs = (tau2pi * (p.xi[1] + p.tau)).sin();
            let rhs = -(tau2pi * p.xi[0]).sin();
            assert!((lhs - rhs).abs() < 1e-8);
            let c1 = (tau2pi * (p.xi[1] + p.tau)).cos();
            let c2 = (tau2pi * p.xi[0]).cos();
            assert!((c1 - c2).abs() < 1e-6, "flat branch kept: {c1} vs {c2}");
        }
        // The set is torus-periodic: shifting ξ by a full period reproduces
        // a member of the set.
        let probe = &pts[0];
        let mut shifted = probe.xi.clone();
        shifted[0] = geom::frac(shifted[0] + 1.0);
        assert!(pts
            .iter()
            .any(|q| geom::torus_dist(&q.xi, &shifted) < 1e-9 && (q.tau - probe.tau).abs() < 1e-9));
    }

    #[test]
    fn single_mode_degenerate_fibers_flagged() {
        // One mode pair (e₁, 0): ∂Θ ∝ sin 2πξ₁, independent of τ: every
        // fiber is degenerate (no isolated roots in τ), so the scan flags
        // the violation.
        let model = ModelSpec::model_a();
        let mut pert = PerturbationSpec::zero();
        pert.push_pair(vec![1, 0], 0, 0.5, crate::model::Envelope::USquared);
        let field = MelnikovField::new(&model, &pert);
        let cfg = CriticalScanConfig {
            grid_density: 8,
            certify: None,
            ..Default::default()
        };
        let r = find_critical_set(&field, 1, &[0.7, 0.6], &cfg);
        // ∂Θ is constant along τ on each fiber: either no sign change at
        // all (empty result) or the degenerate-fiber error fires.
        match r {
            Ok(pts) => assert!(pts.is_empty()),
            Err(e) => assert!(!e.is_domain()),
        }
    }

    #[test]
    fn solve_tau_fixed_point_and_derivative() {
        let (model, pert) = setup();
        let field = MelnikovField::new(&model, &pert);
        let y = [1.0, 2.0];
        let cfg = CriticalScanConfig {
            grid_density: 8,
            certify: None,
            ..Default::default()
        };
        let pts = find_critical_set(&field, 1, &y, &cfg).unwrap();
        let seed = &pts[0];
        let zeta = seed.zeta(&field);
        // z = 0 at the seed returns the seed's τ.
        let tau = solve_tau(&field, 1, seed, &y, &zeta, 0.0).unwrap();
        assert!((tau - seed.tau).abs() < 1e-10);
        // Ψ_z ≈ 1/Θ̂_ττ at the seed.
        let h = 1e-6;
        let tp = solve_tau(&field, 1, seed, &y, &zeta, h).unwrap();
        let tm = solve_tau(&field, 1, seed, &y, &zeta, -h).unwrap();
        let psi_z = (tp - tm) / (2.0 * h);
        let dd = field.theta_hat_tautau(1, &y, &zeta, seed.tau).unwrap();
        assert!(
            (psi_z - 1.0 / dd).abs() < 1e-4 * (1.0 / dd).abs().max(1.0),
            "{psi_z} vs {}",
            1.0 / dd
        );
    }

    #[test]
    fn solve_tau_beyond_fold_fails() {
        let (model, pert) = setup();
        let field = MelnikovField::new(&model, &pert);
        let y = [1.0, 2.0];
        let cfg = CriticalScanConfig {
            grid_density: 8,
            certify: None,
            ..Default::default()
        };
        let pts = find_critical_set(&field, 1, &y, &cfg).unwrap();
        let seed = &pts[0];
        let zeta = seed.zeta(&field);
        // z far beyond the range of Θ̂_τ has no real solution.
        let (_, s1, _) = field.c2_scale(1, &y).unwrap();
        let r = solve_tau(&field, 1, seed, &y, &zeta, 10.0 * s1 + 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn certification_holds_at_model_a_points() {
        let (model, pert) = setup();
        let field = MelnikovField::new(&model, &pert);
        let cfg = CriticalScanConfig {
            grid_density: 8,
            certify: Some((0.1, 0.1)),
            eps: 1e-2,
            ..Default::default()
        };
        let pts = find_critical_set(&field, 1, &[0.6, 0.5], &cfg).unwrap();
        assert!(!pts.is_empty());
        let certified = pts.iter().filter(|p| p.window.as_ref().unwrap().ok).count();
        assert!(
            certified * 2 >= pts.len(),
            "only {certified} of {} certified",
            pts.len()
        );
    }
}

//! The quasi-trajectory (code) calculus: the weighted metric, validity and
//! compatibility checks, code extension with steering, and numerical
//! shadowing.

use crate::error::{Error, Result};
use crate::geom;
use crate::melnikov::{solve_tau_near, MelnikovField, SteeringProfile};
use crate::model::LoopSign;
use crate::resonance::SmoothedField;
use crate::sepmap::{self, SepState, WindowConfig};
use serde::{Deserialize, Serialize};

/// One code entry Ω = (ρ, ζ, τ, t).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodePoint {
    pub rho: Vec<f64>,
    pub zeta: Vec<f64>,
    pub tau: f64,
    pub t: i64,
}

impl CodePoint {
    pub fn y(&self, eps: f64) -> Vec<f64> {
        self.rho.iter().map(|r| r * eps).collect()
    }
}

/// Metric weights. Paper mode derives them from (b, C, K₀); scaled mode
/// takes them directly (the paper's e^{K₀} factors are astronomically
/// large at honest ε).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibleParams {
    pub b: f64,
    pub b_rho: f64,
    pub b_tau: f64,
    pub b_zeta: f64,
}

impl AdmissibleParams {
    /// Derived weights b_ρ = b⁵e^{K₀}/(60C³), b_τ = b⁴e^{K₀}/(3C²),
    /// b_ζ = b⁵e^{K₀}/(48C³).
    pub fn paper(b: f64, c_big: f64, k0: f64) -> Result<Self> {
        if !(0.0 < b && b < 1.0 / 3.0) {
            return Err(Error::domain("b must lie in (0, min(1/3, c'/2))"));
        }
        let e = k0.exp();
        let p = AdmissibleParams {
            b,
            b_rho: b.powi(5) * e / (60.0 * c_big.powi(3)),
            b_tau: b.powi(4) * e / (3.0 * c_big.powi(2)),
            b_zeta: b.powi(5) * e / (48.0 * c_big.powi(3)),
        };
        Ok(p)
    }

    /// True when the derived weights are in the regime the construction
    /// assumes (all large).
    pub fn weights_large(&self) -> bool {
        self.b_rho >= 10.0 && self.b_tau >= 10.0 && self.b_zeta >= 10.0
    }

    pub fn scaled(b: f64, b_rho: f64, b_tau: f64, b_zeta: f64) -> Self {
        AdmissibleParams {
            b,
            b_rho,
            b_tau,
            b_zeta,
        }
    }
}

impl Default for AdmissibleParams {
    fn default() -> Self {
        AdmissibleParams::scaled(0.2, 1.0, 1.0, 0.25)
    }
}

/// d(Ω′, Ω″): +∞ for different excursion times, otherwise the weighted
/// max of the coordinate distances (ζ on the torus).
pub fn code_metric(p: &AdmissibleParams, eps: f64, a: &CodePoint, b: &CodePoint) -> f64 {
    if a.t != b.t {
        return f64::INFINITY;
    }
    let d_rho = geom::norm(&geom::sub(&a.rho, &b.rho));
    let d_zeta = geom::torus_dist(&a.zeta, &b.zeta);
    let d_tau = (a.tau - b.tau).abs();
    (p.b_rho * d_rho)
        .max(eps.powf(-0.75) * p.b_zeta * d_zeta)
        .max(p.b_tau * d_tau)
}

/// Distance of a realized separatrix-map state to a code point.
pub fn state_metric(p: &AdmissibleParams, eps: f64, s: &SepState, c: &CodePoint) -> f64 {
    let sc = CodePoint {
        rho: s.rho.clone(),
        zeta: s.zeta.clone(),
        tau: s.tau,
        t: s.t,
    };
    code_metric(p, eps, &sc, c)
}

/// Settings shared by the code checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodesConfig {
    pub eps: f64,
    pub sigma: LoopSign,
    pub window: WindowConfig,
    pub params: AdmissibleParams,
    /// Residual tolerance for the critical-set membership |Θ̂_τ| at a code
    /// point.
    pub membership_tol: f64,
    /// Degeneracy floor for |Θ̂_ττ| at a code point.
    pub d2_floor: f64,
    /// Compatibility thresholds; None derives the paper formulas
    /// b²/(2b_ρ), b²ε^{3/4}/(2b_ζ) from the params.
    pub compat_rho_tol: Option<f64>,
    pub compat_zeta_tol: Option<f64>,
}

impl CodesConfig {
    pub fn scaled(eps: f64) -> Self {
        CodesConfig {
            eps,
            sigma: 1,
            window: WindowConfig::scaled(eps),
            params: AdmissibleParams::default(),
            membership_tol: 1e-9,
            d2_floor: 1e-6,
            // Honest desk-scale residual envelopes: the ρ residual carries
            // the ε|Δρ|·‖Θ_y‖ evaluation-point shift, the ζ residual the
            // ν̂′·ε|Δρ|·t drift.
            compat_rho_tol: Some(0.2),
            compat_zeta_tol: Some(0.08),
        }
    }

    pub fn rho_threshold(&self) -> f64 {
        self.compat_rho_tol
            .unwrap_or(self.params.b * self.params.b / (2.0 * self.params.b_rho))
    }

    pub fn zeta_threshold(&self) -> f64 {
        self.compat_zeta_tol.unwrap_or(
            self.params.b * self.params.b * self.eps.powf(0.75) / (2.0 * self.params.b_zeta),
        )
    }
}

/// Verdict of the quasi-trajectory check with per-point diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasiVerdict {
    pub valid: bool,
    pub issues: Vec<(usize, String)>,
}

/// Check the three quasi-trajectory conditions: critical-set membership,
/// |τ| < 1 with t ∈ ℕ, and the excursion window for j ≥ 1.
pub fn is_quasi_trajectory(
    field: &MelnikovField,
    code: &[CodePoint],
    cfg: &CodesConfig,
) -> Result<QuasiVerdict> {
    if code.is_empty() {
        return Err(Error::domain("empty code"));
    }
    let mut issues = Vec::new();
    for (j, p) in code.iter().enumerate() {
        let y = p.y(cfg.eps);
        let dt = field.theta_hat_tau(cfg.sigma, &y, &p.zeta, p.tau)?;
        let dtt = field.theta_hat_tautau(cfg.sigma, &y, &p.zeta, p.tau)?;
        // Θ ≡ 0 degenerates the membership test to a tautology (the twist
        // case); only flag genuine residuals.
        if dt.abs() > cfg.membership_tol && dtt.abs() > cfg.d2_floor {
            issues.push((j, format!("critical-set residual |Θ̂_τ| = {:.3e}", dt.abs())));
        }
        if p.tau.abs() >= 1.0 {
            issues.push((j, format!("|τ| = {} not < 1", p.tau.abs())));
        }
        if p.t < 1 {
            issues.push((j, format!("t = {} not a natural number", p.t)));
        }
        if j >= 1 {
            let lambda = field.model.lambda(&y);
            if !cfg.window.contains(lambda, p.t) {
                let v = lambda * p.t as f64 + cfg.eps.ln();
                issues.push((
                    j,
                    format!(
                        "window violated: λt + log ε = {v:.3} outside [{}, {}]",
                        cfg.window.k0,
                        cfg.window.k0 + cfg.window.kbar
                    ),
                ));
            }
        }
    }
    Ok(QuasiVerdict {
        valid: issues.is_empty(),
        issues,
    })
}

/// Residuals of the two compatibility inequalities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompatVerdict {
    pub compatible: bool,
    pub rho_residual: f64,
    pub zeta_residual: f64,
    pub rho_threshold: f64,
    pub zeta_threshold: f64,
}

/// Evaluate the compatibility of a candidate extension point against the
/// code tail.
pub fn is_compatible(
    field: &MelnikovField,
    smoothed: &SmoothedField,
    tail: &CodePoint,
    cand: &CodePoint,
    cfg: &CodesConfig,
) -> Result<CompatVerdict> {
    let eps = cfg.eps;
    let y_new = cand.y(eps);
    let tz = field.theta_hat_zeta(cfg.sigma, &y_new, &tail.zeta, tail.tau)?;
    let hz = smoothed.h_bold_grad_x(&y_new, &tail.zeta);
    let h_rho: Vec<f64> = smoothed
        .h_bold_grad_y(&y_new, &tail.zeta)
        .iter()
        .map(|v| v * eps)
        .collect();
    let corr = cand.tau - tail.tau - cand.t as f64;
    let n = tail.rho.len();
    let mut rho_res = 0.0f64;
    for a in 0..n {
        let r = cand.rho[a] - tail.rho[a] + tz[a] - corr * hz[a];
        rho_res = rho_res.max(r.abs());
    }
    let nu_new = field.model.nu_hat(&y_new);
    let mut zeta_res = 0.0f64;
    for a in 0..n {
        let predicted = tail.zeta[a] + nu_new[a] * cand.t as f64 - corr * h_rho[a];
        zeta_res = zeta_res.max(geom::dist_to_int(cand.zeta[a] - predicted));
    }
    let rho_threshold = cfg.rho_threshold();
    let zeta_threshold = cfg.zeta_threshold();
    Ok(CompatVerdict {
        compatible: rho_res < rho_threshold && zeta_res < zeta_threshold,
        rho_residual: rho_res,
        zeta_residual: zeta_res,
        rho_threshold,
        zeta_threshold,
    })
}

/// Diagnostics of one code extension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtendDiagnostics {
    /// Hit time s of the steering profile.
    pub s: f64,
    pub hit: bool,
    /// Steering force ℱ_{β,p} at the aimed phase.
    pub force: Vec<f64>,
    /// Θ̂_ζ at the new point.
    pub achieved: Vec<f64>,
    /// |achieved − force| (the α_β defect).
    pub alpha_beta_defect: f64,
    /// ζ-noise |ζ₊ − ζ_m − ν̂(ερ_m) t₊|.
    pub s_noise: f64,
}

/// Extend the code by one point, steering with the profile at the aimed
/// phase ζ_m + ν̂(ερ_m)·t̄.
pub fn extend_code(
    field: &MelnikovField,
    smoothed: &SmoothedField,
    profile: &SteeringProfile,
    code: &[CodePoint],
    t_bar: i64,
    cfg: &CodesConfig,
) -> Result<(CodePoint, ExtendDiagnostics)> {
    let tail = code
        .last()
        .ok_or_else(|| Error::domain("cannot extend an empty code"))?;
    let eps = cfg.eps;
    let y_m = tail.y(eps);
    let nu_m = field.model.nu_hat(&y_m);
    let n = y_m.len();

    // Aimed phase and hit time (Eq. of the extension proof).
    let phase: Vec<f64> = (0..n)
        .map(|a| geom::frac(tail.zeta[a] + nu_m[a] * t_bar as f64))
        .collect();
    let (force, hit) = profile.force_with_hit(field, cfg.sigma, &phase)?;
    let s = hit.s;
    // t₊ − τ_β = t̄ − s with t₊ ∈ ℤ, τ_β ∈ (−1/2, 1/2].
    let x = t_bar as f64 - s;
    let t_plus = x.round() as i64;
    let tau_beta = t_plus as f64 - x;
    let lambda = field.model.lambda(&y_m);
    if !cfg.window.contains(lambda, t_plus) {
        return Err(Error::domain(format!(
            "extension time t₊ = {t_plus} outside the excursion window"
        )));
    }

    // New point by the explicit formulas at the old action.
    let tz = field.theta_hat_zeta(cfg.sigma, &y_m, &tail.zeta, tail.tau)?;
    let hz = smoothed.h_bold_grad_x(&y_m, &tail.zeta);
    let h_rho: Vec<f64> = smoothed
        .h_bold_grad_y(&y_m, &tail.zeta)
        .iter()
        .map(|v| v * eps)
        .collect();
    let corr = tau_beta - tail.tau - t_plus as f64;
    let mut rho_plus = vec![0.0; n];
    let mut zeta_plus = vec![0.0; n];
    for a in 0..n {
        rho_plus[a] = tail.rho[a] - tz[a] + corr * hz[a];
        zeta_plus[a] = geom::frac(tail.zeta[a] + nu_m[a] * t_plus as f64 - corr * h_rho[a]);
    }
    let y_plus: Vec<f64> = rho_plus.iter().map(|r| r * eps).collect();
    if !field.model.domain_dcal.contains(&y_plus) {
        return Err(Error::numerical("extension left the action domain"));
    }

    // τ₊ solves Θ̂_τ(ερ₊, ζ₊, ·) = 0 on the branch seeded at τ_β.
    let tau_plus = solve_tau_near(field, cfg.sigma, &y_plus, &zeta_plus, tau_beta)?;

    let achieved = field.theta_hat_zeta(cfg.sigma, &y_plus, &zeta_plus, tau_plus)?;
    let defect = geom::norm(&geom::sub(&achieved, &force));
    let mut s_noise = 0.0f64;
    for a in 0..n {
        s_noise = s_noise.max(geom::dist_to_int(
            zeta_plus[a] - tail.zeta[a] - nu_m[a] * t_plus as f64,
        ));
    }
    Ok((
        CodePoint {
            rho: rho_plus,
            zeta: zeta_plus,
            tau: tau_plus,
            t: t_plus,
        },
        ExtendDiagnostics {
            s,
            hit: hit.hit,
            force,
            achieved,
            alpha_beta_defect: defect,
            s_noise,
        },
    ))
}

/// Report of the numerical shadowing run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShadowReport {
    pub trajectory: Vec<SepState>,
    /// d(Ω_j, Ω̄_j) per index.
    pub distances: Vec<f64>,
    /// b(2 − b^{1+m−j}) per index.
    pub envelopes: Vec<f64>,
    pub envelope_ok: bool,
    pub violations: Vec<usize>,
}

/// Numerical surrogate of the shadowing lemma: iterate the separatrix map
/// with the code's excursion times, pinning τ on the code's branch, and
/// measure the weighted distances against the admissibility envelope.
pub fn shadow(
    field: &MelnikovField,
    smoothed: &SmoothedField,
    code: &[CodePoint],
    cfg: &CodesConfig,
) -> Result<ShadowReport> {
    let verdict = is_quasi_trajectory(field, code, cfg)?;
    if !verdict.valid {
        return Err(Error::domain(format!(
            "shadow requires a valid quasi-trajectory: {:?}",
            verdict.issues
        )));
    }
    let m = code.len() - 1;
    let mut state = SepState {
        rho: code[0].rho.clone(),
        zeta: code[0].zeta.clone(),
        tau: code[0].tau,
        t: code[0].t,
        sigma: cfg.sigma,
        theta: 1,
    };
    let mut trajectory = vec![state.clone()];
    let mut distances = vec![0.0];
    let mut envelopes = vec![envelope(cfg.params.b, m, 0)];
    let mut violations = Vec::new();
    for j in 1..code.len() {
        let (next, _diag) = sepmap::step(
            field,
            smoothed,
            &cfg.window,
            &state,
            code[j].t,
            1,
            Some(code[j].tau),
        )?;
        state = next;
        let d = state_metric(&cfg.params, cfg.eps, &state, &code[j]);
        let env = envelope(cfg.params.b, m, j);
        if d >= env {
            violations.push(j);
        }
        distances.push(d);
        envelopes.push(env);
        trajectory.push(state.clone());
    }
    Ok(ShadowReport {
        trajectory,
        distances,
        envelope_ok: violations.is_empty(),
        envelopes,
        violations,
    })
}

/// Admissibility envelope b(2 − b^{1+m−j}).
pub fn envelope(b: f64, m: usize, j: usize) -> f64 {
    b * (2.0 - b.powi((1 + m - j) as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melnikov::MelnikovField;
    use crate::model::{ModelSpec, PerturbationSpec};
    use crate::resonance::SmoothedField;

    #[test]
    fn metric_definition() {
        let p = AdmissibleParams::scaled(0.2, 2.0, 3.0, 0.5);
        let eps = 1e-2;
        let a = CodePoint {
            rho: vec![1.0, 2.0],
            zeta: vec![0.1, 0.2],
            tau: 0.3,
            t: 9,
        };
        // Identical points → 0.
        assert_eq!(code_metric(&p, eps, &a, &a), 0.0);
        // Different excursion times → ∞.
        let mut b = a.clone();
        b.t = 10;
        assert_eq!(code_metric(&p, eps, &a, &b), f64::INFINITY);
        // ρ differing by 1/b_ρ only → 1.
        let mut c = a.clone();
        c.rho[0] += 1.0 / p.b_rho;
        assert!((code_metric(&p, eps, &a, &c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metric_axioms_on_the_finite_part() {
        let p = AdmissibleParams::default();
        let eps = 1e-2;
        let mk = |r: f64, z: f64, tau: f64| CodePoint {
            rho: vec![r, 0.0],
            zeta: vec![z, 0.0],
            tau,
            t: 9,
        };
        let a = mk(1.0, 0.1, 0.0);
        let b = mk(1.3, 0.9, 0.2);
        let c = mk(0.7, 0.4, -0.1);
        let d_ab = code_metric(&p, eps, &a, &b);
        let d_ba = code_metric(&p, eps, &b, &a);
        assert!((d_ab - d_ba).abs() < 1e-14, "symmetry");
        let d_ac = code_metric(&p, eps, &a, &c);
        let d_cb = code_metric(&p, eps, &c, &b);
        assert!(d_ab <= d_ac + d_cb + 1e-12, "triangle");
        assert!(code_metric(&p, eps, &a, &a) == 0.0);
    }

    #[test]
    fn paper_weights_formulas() {
        let p = AdmissibleParams::paper(0.2, 10.0, 10.0).unwrap();
        let e10 = 10f64.exp();
        assert!((p.b_rho - 0.2f64.powi(5) * e10 / 60000.0).abs() < 1e-12);
        assert!((p.b_tau - 0.2f64.powi(4) * e10 / 300.0).abs() < 1e-12);
        assert!((p.b_zeta - 0.2f64.powi(5) * e10 / 48000.0).abs() < 1e-12);
        // At K₀ = 10, C = 10 the weights are not yet "large".
        assert!(!p.weights_large());
    }

    #[test]
    fn quasi_checks_fire() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::zero();
        let field = MelnikovField::new(&model, &pert);
        let cfg = CodesConfig::scaled(1e-2);
        // Single point, no window check needed: valid (Θ ≡ 0 membership is
        // vacuous).
        let p0 = CodePoint {
            rho: vec![50.0, 40.0],
            zeta: vec![0.2, 0.3],
            tau: 0.1,
            t: 9,
        };
        let v = is_quasi_trajectory(&field, &[p0.clone()], &cfg).unwrap();
        assert!(v.valid);
        // t below the window at index 1 → invalid.
        let mut p1 = p0.clone();
        p1.t = 3;
        let v = is_quasi_trajectory(&field, &[p0.clone(), p1], &cfg).unwrap();
        assert!(!v.valid);
        assert_eq!(v.issues[0].0, 1);
        // τ = 1 exactly → invalid (strict inequality).
        let mut p2 = p0.clone();
        p2.tau = 1.0;
        let v = is_quasi_trajectory(&field, &[p2], &cfg).unwrap();
        assert!(!v.valid);
    }

    #[test]
    fn twist_extension_and_compatibility() {
        // H₁ ≡ 0: the exact twist image must be compatible with zero
        // residuals; perturbing ζ beyond threshold must flip the verdict.
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::zero();
        let field = MelnikovField::new(&model, &pert);
        let eps = 1e-2;
        let smoothed = SmoothedField::new(&model, &pert, eps);
        let cfg = CodesConfig::scaled(eps);
        let tail = CodePoint {
            rho: vec![50.0, 40.0],
            zeta: vec![0.2, 0.3],
            tau: 0.1,
            t: 9,
        };
        let nu = model.nu_hat(&tail.y(eps));
        let cand = CodePoint {
            rho: tail.rho.clone(),
            zeta: (0..2)
                .map(|a| geom::frac(tail.zeta[a] + nu[a] * 9.0))
                .collect(),
            tau: 0.1,
            t: 9,
        };
        let v = is_compatible(&field, &smoothed, &tail, &cand, &cfg).unwrap();
        assert!(v.compatible);
        assert!(v.rho_residual < 1e-12);
        assert!(v.zeta_residual < 1e-12);
        // Perturb ζ by twice the threshold.
        let mut bad = cand.clone();
        bad.zeta[0] = geom::frac(bad.zeta[0] + 2.0 * v.zeta_threshold);
        let vb = is_compatible(&field, &smoothed, &tail, &bad, &cfg).unwrap();
        assert!(!vb.compatible);
        assert!((vb.zeta_residual - 2.0 * v.zeta_threshold).abs() < 1e-9);
    }

    #[test]
    fn shadow_twist_code_is_exact() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::zero();
        let field = MelnikovField::new(&model, &pert);
        let eps = 1e-2;
        let smoothed = SmoothedField::new(&model, &pert, eps);
        let cfg = CodesConfig::scaled(eps);
        // Exact twist orbit as the code.
        let mut code = vec![CodePoint {
            rho: vec![50.0, 40.0],
            zeta: vec![0.2, 0.3],
            tau: 0.1,
            t: 9,
        }];
        let nu = model.nu_hat(&code[0].y(eps));
        for j in 1..=10 {
            let prev = code.last().unwrap();
            code.push(CodePoint {
                rho: prev.rho.clone(),
                zeta: (0..2)
                    .map(|a| geom::frac(code[0].zeta[a] + nu[a] * 9.0 * j as f64))
                    .collect(),
                tau: 0.1,
                t: 9,
            });
        }
        let rep = shadow(&field, &smoothed, &code, &cfg).unwrap();
        assert!(rep.envelope_ok);
        assert!(rep.distances.iter().all(|&d| d < 1e-9));
    }

    #[test]
    fn envelope_shape() {
        // b(2 − b^{1+m−j}) tightens toward the newest index: the exponent
        // falls with j, so for b < 1 the subtracted power grows.
        let b = 0.2;
        let m = 12;
        for j in 1..=m {
            assert!(envelope(b, m, j) <= envelope(b, m, j - 1));
        }
        assert!(envelope(b, m, m) >= b * (2.0 - b) - 1e-15);
        assert!(envelope(b, m, 0) < 2.0 * b);
    }
}

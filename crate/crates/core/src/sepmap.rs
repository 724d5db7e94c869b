//! The separatrix map: state, admissible excursion-time window, and the
//! explicit iteration with the error terms dropped and budgeted.

use crate::error::{Error, Result};
use crate::geom;
use crate::melnikov::{solve_tau_near, MelnikovField};
use crate::resonance::SmoothedField;
use serde::{Deserialize, Serialize};

/// A point (ρ, ζ, τ, t, σ, θ) of the separatrix map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SepState {
    /// Scaled action, ε·rho ≈ y.
    pub rho: Vec<f64>,
    pub zeta: Vec<f64>,
    pub tau: f64,
    /// Excursion time that brought the orbit here (integer ≥ 1).
    pub t: i64,
    /// Loop label.
    pub sigma: i8,
    /// Branch sign.
    pub theta: i8,
}

/// Excursion-window parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowConfig {
    pub eps: f64,
    /// Offset constant K₀.
    pub k0: f64,
    /// Window length K̄ (the asymptotic choice is |log ε|/10).
    pub kbar: f64,
    /// Enforce K̄ + K₀ < |log ε|/9; scaled mode only warns.
    pub strict: bool,
}

impl WindowConfig {
    pub fn scaled(eps: f64) -> Self {
        WindowConfig {
            eps,
            k0: 2.0,
            kbar: 16.0,
            strict: false,
        }
    }

    pub fn paper(eps: f64, k0: f64) -> Self {
        WindowConfig {
            eps,
            k0,
            kbar: eps.ln().abs() / 10.0,
            strict: true,
        }
    }

    /// True when the strict inequality K̄ + K₀ < |log ε|/9 holds.
    pub fn strict_ok(&self) -> bool {
        self.kbar + self.k0 < self.eps.ln().abs() / 9.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps <= 0.0 || self.eps >= 1.0 {
            return Err(Error::domain("eps must lie in (0, 1)"));
        }
        if self.strict && !self.strict_ok() {
            return Err(Error::domain(format!(
                "window violates K̄ + K₀ < |log ε|/9: {} + {} vs {}",
                self.kbar,
                self.k0,
                self.eps.ln().abs() / 9.0
            )));
        }
        Ok(())
    }

    /// Hit-time budget √(K̄/λ).
    pub fn s_max(&self, lambda: f64) -> f64 {
        (self.kbar / lambda).sqrt()
    }

    /// All integers t with K₀ ≤ λt + log ε ≤ K₀ + K̄.
    pub fn excursion_window(&self, lambda: f64) -> Result<(i64, i64)> {
        self.validate()?;
        let log_eps = self.eps.ln();
        let lo = (self.k0 - log_eps) / lambda;
        let hi = (self.k0 + self.kbar - log_eps) / lambda;
        let t_min = lo.ceil() as i64;
        let t_max = hi.floor() as i64;
        if t_min > t_max {
            return Err(Error::domain(format!(
                "empty excursion window: ε = {:.3e}, K₀ = {}, K̄ = {}, λ = {lambda}",
                self.eps, self.k0, self.kbar
            )));
        }
        Ok((t_min.max(1), t_max))
    }

    pub fn contains(&self, lambda: f64, t: i64) -> bool {
        let v = lambda * t as f64 + self.eps.ln();
        v >= self.k0 - 1e-12 && v <= self.k0 + self.kbar + 1e-12
    }
}

/// Per-step diagnostics of the explicit map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub fixed_point_residual: f64,
    pub iterations: usize,
    /// Forward exponential term (λ/ε)(θ⁺/κ^σ) e^{λ(τ⁺−τ−t⁺)} of the third
    /// map equation, reported rather than solved for.
    pub exp_forward: f64,
    /// Whether the τ⁺ solve degenerated to the twist fallback (Θ ≡ 0).
    pub twist_fallback: bool,
}

/// One application of the explicit part of the separatrix map.
///
/// ρ⁺ enters its own right-hand side; a damped fixed point resolves it.
/// τ⁺ solves Θ̂_τ(ερ⁺, ζ⁺, τ⁺) = 0 on the branch seeded by `tau_seed`
/// (falling back to the incoming τ when no seed is given).
pub fn step(
    field: &MelnikovField,
    smoothed: &SmoothedField,
    cfg: &WindowConfig,
    state: &SepState,
    t_next: i64,
    theta_next: i8,
    tau_seed: Option<f64>,
) -> Result<(SepState, StepDiagnostics)> {
    let eps = cfg.eps;
    let n = state.rho.len();
    let y_old: Vec<f64> = state.rho.iter().map(|r| r * eps).collect();
    let lambda = field.model.lambda(&y_old);
    if !cfg.contains(lambda, t_next) {
        return Err(Error::domain(format!(
            "t = {t_next} outside the excursion window {:?}",
            cfg.excursion_window(lambda)?
        )));
    }
    let nu_old = field.model.nu_hat(&y_old);
    let sigma = state.sigma;

    let mut rho_new = state.rho.clone();
    let mut tau_new = tau_seed.unwrap_or(state.tau);
    let mut zeta_new = state.zeta.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;
    let mut twist_fallback = false;
    for it in 0..30 {
        iterations = it + 1;
        let y_new: Vec<f64> = rho_new.iter().map(|r| r * eps).collect();
        if !field.model.domain_dcal.contains(&y_new) {
            return Err(Error::numerical(format!(
                "fixed point left the action domain at {y_new:?}"
            )));
        }
        // ζ⁺ = ζ + ν̂(ερ)t − (τ⁺−τ−t)𝐇_ρ(ερ⁺, ζ).
        let h_rho: Vec<f64> = smoothed
            .h_bold_grad_y(&y_new, &state.zeta)
            .iter()
            .map(|v| v * eps)
            .collect();
        let corr = tau_new - state.tau - t_next as f64;
        for a in 0..n {
            zeta_new[a] = geom::frac(state.zeta[a] + nu_old[a] * t_next as f64 - corr * h_rho[a]);
        }
        // τ⁺ from Θ̂_τ(ερ⁺, ζ⁺, ·) = 0 on the branch nearest the seed.
        let dd = field.theta_hat_tautau(sigma, &y_new, &zeta_new, tau_new)?;
        let f0 = field.theta_hat_tau(sigma, &y_new, &zeta_new, tau_new)?;
        if dd.abs() < 1e-12 && f0.abs() < 1e-12 {
            // Θ degenerate along this branch (e.g. H₁ ≡ 0): integrable
            // twist, keep τ.
            twist_fallback = true;
        } else {
            tau_new = solve_tau_near(field, sigma, &y_new, &zeta_new, tau_new)?;
            if !(-2.0..2.0).contains(&tau_new) {
                return Err(Error::numerical(format!(
                    "τ⁺ solve left (−2, 2): τ = {tau_new:.4}"
                )));
            }
        }
        // ρ⁺ = ρ − Θ̂_ζ(ερ⁺, ζ, τ) + (τ⁺−τ−t)𝐇_ζ(ερ⁺, ζ).
        let theta_zeta = field.theta_hat_zeta(sigma, &y_new, &state.zeta, state.tau)?;
        let h_zeta = smoothed.h_bold_grad_x(&y_new, &state.zeta);
        let corr = tau_new - state.tau - t_next as f64;
        let mut rhs = vec![0.0; n];
        for a in 0..n {
            rhs[a] = state.rho[a] - theta_zeta[a] + corr * h_zeta[a];
        }
        residual = geom::norm_inf(&geom::sub(&rhs, &rho_new));
        rho_new = rhs;
        if residual < 1e-12 {
            break;
        }
    }
    if residual > 1e-10 {
        return Err(Error::numerical(format!(
            "ρ⁺ fixed point stalled at residual {residual:.3e} after {iterations} iterations"
        )));
    }
    let y_new: Vec<f64> = rho_new.iter().map(|r| r * eps).collect();
    let kappa = field.model.kappa(&y_new, sigma);
    let exp_forward = lambda / eps * (theta_next as f64 / kappa)
        * (lambda * (tau_new - state.tau - t_next as f64)).exp();
    Ok((
        SepState {
            rho: rho_new,
            zeta: zeta_new,
            tau: tau_new,
            t: t_next,
            sigma: sigma * theta_next,
            theta: theta_next,
        },
        StepDiagnostics {
            fixed_point_residual: residual,
            iterations,
            exp_forward,
            twist_fallback,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melnikov::{solve_tau_near, MelnikovField};
    use crate::model::{ModelSpec, PerturbationSpec};
    use crate::resonance::SmoothedField;

    #[test]
    fn window_arithmetic() {
        // λ = 1, ε = e⁻²⁰, K₀ = 2, K̄ = 2 → t ∈ {22, 23, 24}.
        let cfg = WindowConfig {
            eps: (-20.0f64).exp(),
            k0: 2.0,
            kbar: 2.0,
            strict: false,
        };
        assert_eq!(cfg.excursion_window(1.0).unwrap(), (22, 24));
        // λ = 2 halves the endpoints.
        assert_eq!(cfg.excursion_window(2.0).unwrap(), (11, 12));
    }

    #[test]
    fn strict_mode_rejects_fat_windows() {
        let cfg = WindowConfig {
            eps: 1e-3,
            k0: 5.0,
            kbar: 0.69,
            strict: true,
        };
        assert!(cfg.excursion_window(1.0).is_err());
        // The asymptotic configuration passes for tiny ε.
        let cfg = WindowConfig::paper(1e-90, 2.0);
        assert!(cfg.strict_ok());
        assert!(cfg.excursion_window(1.0).is_ok());
    }

    #[test]
    fn integrable_case_is_a_twist() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::zero();
        let field = MelnikovField::new(&model, &pert);
        let smoothed = SmoothedField::new(&model, &pert, 1e-2);
        let cfg = WindowConfig::scaled(1e-2);
        let mut st = SepState {
            rho: vec![60.0, 45.0],
            zeta: vec![0.2, 0.7],
            tau: 0.1,
            t: 1,
            sigma: 1,
            theta: 1,
        };
        let rho0 = st.rho.clone();
        let nu = model.nu_hat(&[0.6, 0.45]);
        let mut zeta_expect = st.zeta.clone();
        for _ in 0..200 {
            let (next, diag) = step(&field, &smoothed, &cfg, &st, 8, 1, None).unwrap();
            assert!(diag.twist_fallback);
            st = next;
            for a in 0..2 {
                zeta_expect[a] = crate::geom::frac(zeta_expect[a] + nu[a] * 8.0);
            }
        }
        // ρ preserved to machine precision; ζ advances linearly.
        assert_eq!(st.rho, rho0);
        assert!(crate::geom::torus_dist(&st.zeta, &zeta_expect) < 1e-9);
    }

    #[test]
    fn step_self_consistency() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_diffusion(0.05, 0.5);
        let field = MelnikovField::new(&model, &pert);
        let eps = 1e-2;
        let smoothed = SmoothedField::new(&model, &pert, eps);
        let cfg = WindowConfig::scaled(eps);
        let st = SepState {
            rho: vec![47.0, 42.0],
            zeta: vec![0.31, 0.64],
            tau: 0.05,
            t: 9,
            sigma: 1,
            theta: 1,
        };
        let (next, diag) = step(&field, &smoothed, &cfg, &st, 9, 1, None).unwrap();
        assert!(diag.fixed_point_residual < 1e-10);
        // Re-evaluating the right-hand side at the returned ρ⁺ reproduces it.
        let y_new: Vec<f64> = next.rho.iter().map(|r| r * eps).collect();
        let tz = field
            .theta_hat_zeta(1, &y_new, &st.zeta, st.tau)
            .unwrap();
        let hz = smoothed.h_bold_grad_x(&y_new, &st.zeta);
        let corr = next.tau - st.tau - 9.0;
        for a in 0..2 {
            let rhs = st.rho[a] - tz[a] + corr * hz[a];
            assert!((rhs - next.rho[a]).abs() < 1e-10);
        }
        // With 𝐇 ≡ 0 at this point (far from the resonant strip), Δρ is
        // exactly −Θ̂_ζ.
        if crate::geom::norm(&hz) == 0.0 {
            for a in 0..2 {
                assert!((next.rho[a] - st.rho[a] + tz[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_is_deterministic() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_diffusion(0.05, 0.5);
        let field = MelnikovField::new(&model, &pert);
        let eps = 1e-2;
        let smoothed = SmoothedField::new(&model, &pert, eps);
        let cfg = WindowConfig::scaled(eps);
        let st = SepState {
            rho: vec![47.0, 42.0],
            zeta: vec![0.31, 0.64],
            tau: 0.05,
            t: 9,
            sigma: 1,
            theta: 1,
        };
        let (a, _) = step(&field, &smoothed, &cfg, &st, 10, 1, None).unwrap();
        let (b, _) = step(&field, &smoothed, &cfg, &st, 10, 1, None).unwrap();
        assert_eq!(a.rho, b.rho);
        assert_eq!(a.zeta, b.zeta);
        assert_eq!(a.tau, b.tau);
    }
}

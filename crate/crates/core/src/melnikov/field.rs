//! Evaluator for the Poincaré–Melnikov potentials Θ^σ and Θ̂^σ.
//!
//! For a finite Fourier perturbation the potential is a trigonometric
//! polynomial in (ξ, τ) whose coefficients are improper time integrals
//! along the homoclinic loop,
//!
//!   Θ^σ(y, ξ, τ) = −Σ_m amp_m e^{2πi(⟨k_m, ξ⟩ − k₀_m τ)} W^σ_m(y),
//!   W^σ_m(y)    = ∫ (env_m(γ^σ(t)) − env_m(0,0)) e^{2πi Ω_m(y) t} dt,
//!
//! with Ω_m(y) = ⟨k_m, ν̂(y)⟩ + k₀_m the mode's phase speed along the
//! unperturbed flow. The W integrals are cached per (σ, mode, Ω).

use crate::error::{Error, Result};
use crate::geom;
use crate::model::{LoopSign, ModelSpec, PerturbationSpec};
use crate::quad;
use nalgebra::DMatrix;
use std::collections::HashMap;
use std::sync::RwLock;

/// Truncation and tolerance settings for the improper integrals.
#[derive(Debug, Clone)]
pub struct QuadratureConfig {
    /// Absolute tail tolerance for the W integrals.
    pub tol: f64,
    /// T_max = (t_max_offset + |log tol|)/λ.
    pub t_max_offset: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            tol: 1e-12,
            t_max_offset: 40.0,
        }
    }
}

/// Value, gradient and Hessian of Θ^σ at a point x = (ξ, τ) ∈ 𝕋^{n+1}.
#[derive(Debug, Clone)]
pub struct ThetaJet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

pub struct MelnikovField<'a> {
    pub model: &'a ModelSpec,
    pub pert: &'a PerturbationSpec,
    pub quad: QuadratureConfig,
    w_cache: RwLock<HashMap<(LoopSign, usize, u64), (f64, f64)>>,
}

impl<'a> MelnikovField<'a> {
    pub fn new(model: &'a ModelSpec, pert: &'a PerturbationSpec) -> Self {
        MelnikovField {
            model,
            pert,
            quad: QuadratureConfig::default(),
            w_cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_quadrature(mut self, quad: QuadratureConfig) -> Self {
        self.quad = quad;
        self
    }

    /// W^σ_m(Ω) as (re, im); cached.
    fn mode_w(&self, sigma: LoopSign, mode_idx: usize, omega: f64) -> Result<(f64, f64)> {
        let key = (sigma, mode_idx, omega.to_bits());
        if let Some(&v) = self.w_cache.read().unwrap().get(&key) {
            return Ok(v);
        }
        let mode = &self.pert.modes[mode_idx];
        let lambda = self.model.lambda(&vec![0.0; self.model.n]);
        let t_max = (self.quad.t_max_offset + self.quad.tol.ln().abs()) / lambda;
        let env0 = mode.envelope.at_torus();
        let g = |t: f64| {
            let (v, u) = self.model.separatrix(sigma, t);
            mode.envelope.eval(v, u) - env0
        };
        // Certify the truncation: the envelope difference must have decayed
        // below tolerance at ±T_max.
        let tail = g(t_max).abs().max(g(-t_max).abs());
        if tail > self.quad.tol {
            return Err(Error::numerical(format!(
                "Melnikov tail bound unattainable: |g(±T)| = {tail:.3e} > tol {:.1e} at T = {t_max:.1}",
                self.quad.tol
            )));
        }
        let w_rad = std::f64::consts::TAU * omega;
        let re = quad::gl_oscillatory(|t| g(t) * (w_rad * t).cos(), -t_max, t_max, w_rad);
        let im = quad::gl_oscillatory(|t| g(t) * (w_rad * t).sin(), -t_max, t_max, w_rad);
        let val = (re.value, im.value);
        self.w_cache.write().unwrap().insert(key, val);
        Ok(val)
    }

    /// Θ^σ(y, ξ, τ).
    pub fn theta(&self, sigma: LoopSign, y: &[f64], xi: &[f64], tau: f64) -> Result<f64> {
        let mut x = xi.to_vec();
        x.push(tau);
        Ok(self.theta_jet(sigma, y, &x)?.value)
    }

    /// Full jet of Θ^σ at x = (ξ, τ).
    pub fn theta_jet(&self, sigma: LoopSign, y: &[f64], x: &[f64]) -> Result<ThetaJet> {
        let n = self.model.n;
        if x.len() != n + 1 {
            return Err(Error::domain("theta_jet expects x = (ξ, τ) of dimension n+1"));
        }
        if !self.model.domain_dcal.contains(y) {
            return Err(Error::domain(format!("action {y:?} outside the domain box")));
        }
        let tau2pi = std::f64::consts::TAU;
        let nu = self.model.nu_hat(y);
        let mut value = 0.0;
        let mut grad = vec![0.0; n + 1];
        let mut hess = DMatrix::zeros(n + 1, n + 1);
        for (idx, m) in self.pert.modes.iter().enumerate() {
            let omega = m.frequency(&nu);
            let (wr, wi) = self.mode_w(sigma, idx, omega)?;
            if wr == 0.0 && wi == 0.0 {
                continue;
            }
            // Phase vector v = (k, −k₀) so the mode is e^{2πi⟨v, x⟩}.
            let mut v: Vec<f64> = m.k.iter().map(|&ki| ki as f64).collect();
            v.push(-(m.k0 as f64));
            let phase = tau2pi * geom::dot(&v, x);
            let (sin, cos) = phase.sin_cos();
            // c = amp · W; mode contribution to ∫H_* is Re[c e^{iφ}].
            let cr = m.amp_re * wr - m.amp_im * wi;
            let ci = m.amp_re * wi + m.amp_im * wr;
            // Θ = −Re[c e^{iφ}]
            value -= cr * cos - ci * sin;
            // dΘ/dx_a = −Re[c · 2πi v_a e^{iφ}] = (cr sin + ci cos)·2π v_a
            let dcoef = (cr * sin + ci * cos) * tau2pi;
            for a in 0..n + 1 {
                grad[a] += dcoef * v[a];
            }
            // d²Θ/dx_a dx_b = +Re[c e^{iφ}]·(2π)² v_a v_b
            let hcoef = (cr * cos - ci * sin) * tau2pi * tau2pi;
            for a in 0..n + 1 {
                for b in 0..n + 1 {
                    hess[(a, b)] += hcoef * v[a] * v[b];
                }
            }
        }
        Ok(ThetaJet { value, grad, hess })
    }

    /// Winding direction α(y) = (−ν̂(y), 1); the derivative ∂ of the paper
    /// is ∂ = ⟨α, ∂/∂x⟩.
    pub fn alpha(&self, y: &[f64]) -> Vec<f64> {
        let mut a: Vec<f64> = self.model.nu_hat(y).iter().map(|v| -v).collect();
        a.push(1.0);
        a
    }

    /// Directional derivative ∂Θ = −⟨ν̂, Θ_ξ⟩ + Θ_τ and its square
    /// ∂²Θ = αᵀ (Hess Θ) α, together with the plain gradient pieces.
    pub fn directional(&self, sigma: LoopSign, y: &[f64], xi: &[f64], tau: f64) -> Result<Directional> {
        let mut x = xi.to_vec();
        x.push(tau);
        let jet = self.theta_jet(sigma, y, &x)?;
        let alpha = self.alpha(y);
        let d1 = geom::dot(&alpha, &jet.grad);
        let mut ha = vec![0.0; x.len()];
        for a in 0..x.len() {
            ha[a] = (0..x.len()).map(|b| jet.hess[(a, b)] * alpha[b]).sum();
        }
        let d2 = geom::dot(&alpha, &ha);
        let n = self.model.n;
        Ok(Directional {
            value: jet.value,
            theta_xi: jet.grad[..n].to_vec(),
            theta_tau: jet.grad[n],
            d_theta: d1,
            d2_theta: d2,
            d_theta_dtau: ha[n],
        })
    }

    /// Θ̂^σ(y, ζ, τ) = Θ^σ(y, ζ − ν̂(y)τ, τ).
    pub fn theta_hat(&self, sigma: LoopSign, y: &[f64], zeta: &[f64], tau: f64) -> Result<f64> {
        let xi = self.hat_to_xi(y, zeta, tau);
        self.theta(sigma, y, &xi, tau)
    }

    /// ξ = ζ − ν̂(y)τ reduced mod 1.
    pub fn hat_to_xi(&self, y: &[f64], zeta: &[f64], tau: f64) -> Vec<f64> {
        let nu = self.model.nu_hat(y);
        zeta.iter()
            .zip(&nu)
            .map(|(&z, &nv)| geom::frac(z - nv * tau))
            .collect()
    }

    /// Θ̂_ζ(y, ζ, τ) = Θ_ξ at the pulled-back point.
    pub fn theta_hat_zeta(&self, sigma: LoopSign, y: &[f64], zeta: &[f64], tau: f64) -> Result<Vec<f64>> {
        let xi = self.hat_to_xi(y, zeta, tau);
        Ok(self.directional(sigma, y, &xi, tau)?.theta_xi)
    }

    /// Θ̂_τ(y, ζ, τ) = ∂Θ at the pulled-back point (chain rule).
    pub fn theta_hat_tau(&self, sigma: LoopSign, y: &[f64], zeta: &[f64], tau: f64) -> Result<f64> {
        let xi = self.hat_to_xi(y, zeta, tau);
        Ok(self.directional(sigma, y, &xi, tau)?.d_theta)
    }

    /// Θ̂_ττ(y, ζ, τ) = ∂²Θ at the pulled-back point.
    pub fn theta_hat_tautau(&self, sigma: LoopSign, y: &[f64], zeta: &[f64], tau: f64) -> Result<f64> {
        let xi = self.hat_to_xi(y, zeta, tau);
        Ok(self.directional(sigma, y, &xi, tau)?.d2_theta)
    }

    /// Sup of |Θ|, |grad|, |Hess| over a coarse grid, used for scaled
    /// floors and noise envelopes.
    pub fn c2_scale(&self, sigma: LoopSign, y: &[f64]) -> Result<(f64, f64, f64)> {
        let n = self.model.n;
        let g = 8usize;
        let mut s0 = 0.0f64;
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        let mut idx = vec![0usize; n + 1];
        loop {
            let x: Vec<f64> = idx.iter().map(|&i| i as f64 / g as f64).collect();
            let jet = self.theta_jet(sigma, y, &x)?;
            s0 = s0.max(jet.value.abs());
            s1 = s1.max(geom::norm(&jet.grad));
            s2 = s2.max(jet.hess.amax());
            let mut d = 0;
            loop {
                if d == n + 1 {
                    return Ok((s0, s1, s2));
                }
                if idx[d] < g - 1 {
                    idx[d] += 1;
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }
}

/// Directional-derivative bundle at one (y, ξ, τ).
#[derive(Debug, Clone)]
pub struct Directional {
    pub value: f64,
    pub theta_xi: Vec<f64>,
    pub theta_tau: f64,
    /// ∂Θ = −⟨ν̂, Θ_ξ⟩ + Θ_τ.
    pub d_theta: f64,
    /// ∂²Θ (second derivative along the winding direction).
    pub d2_theta: f64,
    /// ∂(∂Θ)/∂τ at fixed ξ, the slope used by the fiber scan.
    pub d_theta_dtau: f64,
}

/// Closed-form oracle for Model A with the default perturbation:
/// Θ = −2[I(2πy₁) cos 2πξ₁ + I(2π(y₂−1)) cos 2π(ξ₂+τ)],
/// I(w) = πw / sinh(πw/2) (I(0) = 2).
pub fn model_a_theta_closed_form(y: &[f64], xi: &[f64], tau: f64) -> f64 {
    let i = |w: f64| {
        if w == 0.0 {
            2.0
        } else {
            std::f64::consts::PI * w / (std::f64::consts::PI * w / 2.0).sinh()
        }
    };
    let tau2pi = std::f64::consts::TAU;
    -2.0 * (i(tau2pi * y[0]) * (tau2pi * xi[0]).cos()
        + i(tau2pi * (y[1] - 1.0)) * (tau2pi * (xi[1] + tau)).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, PerturbationSpec};
    use rand::Rng;

    #[test]
    fn zero_perturbation_gives_zero_theta() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::zero();
        let field = MelnikovField::new(&model, &pert);
        let d = field.directional(1, &[1.0, 2.0], &[0.1, 0.2], 0.3).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.d_theta, 0.0);
    }

    #[test]
    fn model_a_matches_closed_form() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_default();
        let field = MelnikovField::new(&model, &pert);
        let mut rng = crate::rng::stream(17, "melnikov", "closed-form");
        for _ in 0..100 {
            let y = [rng.gen_range(0.1..1.75), rng.gen_range(0.1..1.75)];
            let xi = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let tau = rng.gen_range(0.0..1.0);
            let got = field.theta(1, &y, &xi, tau).unwrap();
            let want = model_a_theta_closed_form(&y, &xi, tau);
            assert!(
                (got - want).abs() <= 1e-8 * want.abs().max(1e-12),
                "y={y:?} ξ={xi:?} τ={tau}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn spec_point_value() {
        // y = (1,2), ξ = 0, τ = 0 → −2[I(2π) + I(2π)].
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_default();
        let field = MelnikovField::new(&model, &pert);
        let got = field.theta(1, &[1.0, 2.0], &[0.0, 0.0], 0.0).unwrap();
        let i2pi = std::f64::consts::PI * std::f64::consts::TAU
            / (std::f64::consts::PI * std::f64::consts::PI).sinh();
        let want = -4.0 * i2pi;
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn periodicity_on_the_torus() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_default();
        let field = MelnikovField::new(&model, &pert);
        let y = [0.7, 0.6];
        let a = field.theta(1, &y, &[0.3, 0.4], 0.2).unwrap();
        let b = field.theta(1, &y, &[1.3, 0.4], 0.2).unwrap();
        let c = field.theta(1, &y, &[0.3, 0.4], 1.2).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!((a - c).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_resonant(0.05);
        let field = MelnikovField::new(&model, &pert);
        let mut rng = crate::rng::stream(19, "melnikov", "fd");
        for _ in 0..20 {
            let y = [rng.gen_range(0.3..1.2), rng.gen_range(0.3..1.2)];
            let xi = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let tau = rng.gen_range(0.0..1.0);
            let d = field.directional(1, &y, &xi, tau).unwrap();
            let h = 1e-6;
            for a in 0..2 {
                let mut xp = xi;
                xp[a] += h;
                let mut xm = xi;
                xm[a] -= h;
                let fd = (field.theta(1, &y, &xp, tau).unwrap()
                    - field.theta(1, &y, &xm, tau).unwrap())
                    / (2.0 * h);
                assert!((d.theta_xi[a] - fd).abs() < 1e-6, "{} vs {}", d.theta_xi[a], fd);
            }
            let fd_tau = (field.theta(1, &y, &xi, tau + h).unwrap()
                - field.theta(1, &y, &xi, tau - h).unwrap())
                / (2.0 * h);
            assert!((d.theta_tau - fd_tau).abs() < 1e-6);
        }
    }

    #[test]
    fn hat_chain_rule_identity() {
        // Θ̂_τ(y, ζ, τ) = ∂Θ at ξ = ζ − ν̂τ; check against direct FD in τ.
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_default();
        let field = MelnikovField::new(&model, &pert);
        let y = [0.8, 0.55];
        let zeta = [0.21, 0.64];
        for tau in [-0.4, 0.0, 0.37] {
            let analytic = field.theta_hat_tau(1, &y, &zeta, tau).unwrap();
            let h = 1e-6;
            let fd = (field.theta_hat(1, &y, &zeta, tau + h).unwrap()
                - field.theta_hat(1, &y, &zeta, tau - h).unwrap())
                / (2.0 * h);
            assert!((analytic - fd).abs() < 1e-8, "{analytic} vs {fd}");
        }
    }

    #[test]
    fn torus_active_mode_contributes_nothing() {
        // env ≡ 1 modes have env(γ) − env(0,0) ≡ 0 along the loop.
        let model = ModelSpec::model_a();
        let def = PerturbationSpec::model_a_default();
        let res = PerturbationSpec::model_a_resonant(0.3);
        let f1 = MelnikovField::new(&model, &def);
        let f2 = MelnikovField::new(&model, &res);
        let y = [0.6, 0.6];
        let a = f1.theta(1, &y, &[0.12, 0.9], -0.3).unwrap();
        let b = f2.theta(1, &y, &[0.12, 0.9], -0.3).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn mirror_loop_symmetry() {
        // For the u² envelope both loops give the same Θ.
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_default();
        let field = MelnikovField::new(&model, &pert);
        let y = [0.9, 0.4];
        let a = field.theta(1, &y, &[0.3, 0.8], 0.1).unwrap();
        let b = field.theta(-1, &y, &[0.3, 0.8], 0.1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

//! Steering profiles: per-phase winding hit-times into the critical set so
//! that the mean of Θ̂_ζ over ζ points along a chosen action direction.

use super::field::MelnikovField;
use super::section::SectionMap;
use crate::error::{Error, Result};
use crate::geom;
use crate::model::LoopSign;
use crate::rng::Qmc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Settings for the profile construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteeringConfig {
    /// Force tolerance: a hit must satisfy |Θ̂_ζ − G(φ)| ≤ eps0·(grad scale).
    /// This widens the target ball along the critical curve of the fiber,
    /// which is what a finite hit budget can reach.
    pub eps0: f64,
    /// Criticality tolerance as a fraction of the gradient scale:
    /// |∂Θ| ≤ crit_frac·scale at an accepted point.
    pub crit_frac: f64,
    /// Hit-time budget √(K̄/λ).
    pub s_max: f64,
    /// Half-width of the break band around section breakpoints (in φ).
    pub break_band: f64,
    /// QMC sample count for the drift estimate.
    pub qmc_samples: usize,
    /// Maximum tolerated fraction of winding misses.
    pub max_miss_fraction: f64,
    /// Abort floor for the estimated drift λ_Θ.
    pub min_drift: f64,
    pub seed: u64,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            eps0: 0.15,
            crit_frac: 0.12,
            s_max: 6.0,
            break_band: 0.02,
            qmc_samples: 1 << 14,
            max_miss_fraction: 0.02,
            min_drift: 1e-6,
            seed: 1,
        }
    }
}

/// Result of one hit-time query.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub s: f64,
    /// The fiber phase at the hit.
    pub phi: f64,
    /// False when ζ sits in a break band (s = 0 by convention) or the
    /// winding missed within the budget.
    pub hit: bool,
    pub miss: bool,
}

/// Per-phase hit times s_{β,p} into the critical curve near a section,
/// with the drift estimate λ_Θ and the sampled break-set data.
#[derive(Debug, Clone)]
pub struct SteeringProfile {
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
    pub section: SectionMap,
    pub cfg: SteeringConfig,
    /// Θ_ζ at the section nodes (the function G on the φ-grid).
    pub g_values: Vec<Vec<f64>>,
    /// Scale of |grad Θ| used to normalise the tolerances.
    pub grad_scale: f64,
    /// |QMC mean of ℱ|.
    pub lambda_theta: f64,
    /// QMC mean direction of ℱ (unit).
    pub achieved_direction: Vec<f64>,
    /// Raw QMC mean of ℱ.
    pub mean_force: Vec<f64>,
    pub miss_fraction: f64,
    pub break_fraction: f64,
}

impl SteeringProfile {
    /// First s ∈ [0, s_max] at which the winding (ζ − ν̂(p)s, s) reaches
    /// the critical curve with the force value of its fiber's section
    /// point: |∂Θ| small and |Θ_ζ − G(φ)| within the force tolerance.
    pub fn hit_time(&self, field: &MelnikovField, sigma: LoopSign, zeta: &[f64]) -> Hit {
        let nu = field.model.nu_hat(&self.p);
        let n = zeta.len();
        let kf: Vec<f64> = self.section.k.iter().map(|&v| v as f64).collect();
        let res = field
            .model
            .residual(&self.p, &self.section.k[..n], self.section.k[n]);
        let phi0 = geom::frac(zeta.iter().zip(&kf).map(|(&z, &k)| z * k).sum());
        if self.section.dist_to_breakpoint(phi0) < self.cfg.break_band {
            return Hit {
                s: 0.0,
                phi: phi0,
                hit: false,
                miss: false,
            };
        }
        let m = self.section.grid();
        let crit_tol = self.cfg.crit_frac * self.grad_scale;
        let force_tol = self.cfg.eps0 * self.grad_scale;
        let speed = (1.0 + geom::dot(&nu, &nu)).sqrt();
        let ds = 0.04 / speed.max(1.0);
        let steps = (self.cfg.s_max / ds).ceil() as usize;
        let mut xi = vec![0.0; n];
        for i in 0..=steps {
            let s = (i as f64 * ds).min(self.cfg.s_max);
            // ξ-coordinates of the winding point (ζ − ν̂s, s).
            for a in 0..n {
                xi[a] = geom::frac(zeta[a] - nu[a] * s);
            }
            let phi = geom::frac(phi0 - res * s);
            let node = ((phi * m as f64).round() as usize) % m;
            let d = match field.directional(sigma, &self.p, &xi, s) {
                Ok(d) => d,
                Err(_) => continue,
            };
            if d.d_theta.abs() > crit_tol {
                continue;
            }
            let g = &self.g_values[node];
            let mismatch: f64 = d
                .theta_xi
                .iter()
                .zip(g)
                .map(|(&a, &b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if mismatch <= force_tol {
                return Hit {
                    s,
                    phi,
                    hit: true,
                    miss: false,
                };
            }
        }
        Hit {
            s: 0.0,
            phi: phi0,
            hit: false,
            miss: true,
        }
    }

    /// ℱ_{β,p}(ζ) = Θ̂_ζ(p, ζ, s(ζ)).
    pub fn force(&self, field: &MelnikovField, sigma: LoopSign, zeta: &[f64]) -> Result<Vec<f64>> {
        let hit = self.hit_time(field, sigma, zeta);
        field.theta_hat_zeta(sigma, &self.p, zeta, hit.s)
    }

    /// Hit plus force in one call (saves the doubled search).
    pub fn force_with_hit(
        &self,
        field: &MelnikovField,
        sigma: LoopSign,
        zeta: &[f64],
    ) -> Result<(Vec<f64>, Hit)> {
        let hit = self.hit_time(field, sigma, zeta);
        let f = field.theta_hat_zeta(sigma, &self.p, zeta, hit.s)?;
        Ok((f, hit))
    }

    /// Fraction of 𝕋ⁿ within distance r of the sampled break set 𝒜(p),
    /// estimated by probing the hit-time continuity along the axes.
    pub fn break_measure(
        &self,
        field: &MelnikovField,
        sigma: LoopSign,
        r: f64,
        samples: usize,
        seed: u64,
    ) -> f64 {
        let n = self.p.len();
        let mut q = Qmc::new(n, seed, "break-measure");
        let mut hits = 0usize;
        for _ in 0..samples {
            let z = q.next_point();
            let h0 = self.hit_time(field, sigma, &z);
            let mut near_break = !h0.hit && !h0.miss;
            if !near_break {
                for a in 0..n {
                    let mut zp = z.clone();
                    zp[a] = geom::frac(zp[a] + r);
                    let h1 = self.hit_time(field, sigma, &zp);
                    if (h1.s - h0.s).abs() > 0.5 || h1.hit != h0.hit {
                        near_break = true;
                        break;
                    }
                }
            }
            if near_break {
                hits += 1;
            }
        }
        hits as f64 / samples as f64
    }
}

/// Build the steering profile for a base point p near the resonance and a
/// requested mean direction β, using a prepared section w_β.
pub fn build_steering_profile(
    field: &MelnikovField,
    sigma: LoopSign,
    p: &[f64],
    beta: &[f64],
    section: SectionMap,
    cfg: SteeringConfig,
) -> Result<SteeringProfile> {
    let n = field.model.n;
    if beta.len() != n {
        return Err(Error::domain("beta must be an action-space direction"));
    }
    // Precompute G on the section grid and the gradient scale.
    let mut g_values = Vec::with_capacity(section.grid());
    let mut grad_scale = 0.0f64;
    for x in &section.samples {
        let jet = field.theta_jet(sigma, p, x)?;
        grad_scale = grad_scale.max(geom::norm(&jet.grad));
        g_values.push(jet.grad[..n].to_vec());
    }
    let (_, s1, _) = field.c2_scale(sigma, p)?;
    grad_scale = grad_scale.max(s1);
    let mut profile = SteeringProfile {
        p: p.to_vec(),
        beta: geom::scale(beta, 1.0 / geom::norm(beta).max(1e-300)),
        section,
        cfg,
        g_values,
        grad_scale,
        lambda_theta: 0.0,
        achieved_direction: vec![0.0; n],
        mean_force: vec![0.0; n],
        miss_fraction: 0.0,
        break_fraction: 0.0,
    };
    let mut qmc = Qmc::new(n, profile.cfg.seed, "steering-drift");
    let pts = qmc.take(profile.cfg.qmc_samples);
    let results: Vec<(Vec<f64>, Hit)> = pts
        .par_iter()
        .map(|z| {
            let hit = profile.hit_time(field, sigma, z);
            let f = field
                .theta_hat_zeta(sigma, &profile.p, z, hit.s)
                .unwrap_or_else(|_| vec![0.0; n]);
            (f, hit)
        })
        .collect();
    let total = results.len() as f64;
    let mut mean = vec![0.0; n];
    let mut misses = 0usize;
    let mut breaks = 0usize;
    for (f, hit) in &results {
        for a in 0..n {
            mean[a] += f[a] / total;
        }
        if hit.miss {
            misses += 1;
        }
        if !hit.hit && !hit.miss {
            breaks += 1;
        }
    }
    profile.miss_fraction = misses as f64 / total;
    profile.break_fraction = breaks as f64 / total;
    if profile.miss_fraction > profile.cfg.max_miss_fraction {
        return Err(Error::run(format!(
            "vague point: the winding misses the critical curve for {:.1}% of phases \
             (budget s_max = {})",
            100.0 * profile.miss_fraction,
            profile.cfg.s_max
        )));
    }
    profile.lambda_theta = geom::norm(&mean);
    if profile.lambda_theta < profile.cfg.min_drift {
        return Err(Error::run(format!(
            "steering drift λ_Θ = {:.3e} below the abort floor {:.1e}",
            profile.lambda_theta, profile.cfg.min_drift
        )));
    }
    profile.achieved_direction = geom::scale(&mean, 1.0 / profile.lambda_theta);
    profile.mean_force = mean;
    Ok(profile)
}

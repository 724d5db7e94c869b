//! Smoothed resonant averages, resonance strips, essential-point detection,
//! the single-resonance profile, and polygonization of the target curve.

use crate::error::{Error, Result};
use crate::geom;
use crate::model::{ModelSpec, PerturbationSpec};
use serde::{Deserialize, Serialize};

/// C^∞ bump: φ(r) = 1 for |r| ≤ 1/2, 0 for |r| ≥ 1, glued with exp(−1/x).
pub struct Bump;

fn glue(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

fn glue_deriv(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp() / (x * x)
    } else {
        0.0
    }
}

impl Bump {
    pub fn eval(r: f64) -> f64 {
        let a = r.abs();
        if a <= 0.5 {
            return 1.0;
        }
        if a >= 1.0 {
            return 0.0;
        }
        let g1 = glue(2.0 - 2.0 * a);
        let g2 = glue(2.0 * a - 1.0);
        g1 / (g1 + g2)
    }

    /// dφ/dr (zero on both plateaus).
    pub fn deriv(r: f64) -> f64 {
        let a = r.abs();
        if a <= 0.5 || a >= 1.0 {
            return 0.0;
        }
        let g1 = glue(2.0 - 2.0 * a);
        let g2 = glue(2.0 * a - 1.0);
        let d1 = -2.0 * glue_deriv(2.0 - 2.0 * a);
        let d2 = 2.0 * glue_deriv(2.0 * a - 1.0);
        let val = (d1 * (g1 + g2) - g1 * (d1 + d2)) / ((g1 + g2) * (g1 + g2));
        if r >= 0.0 {
            val
        } else {
            -val
        }
    }
}

/// Resonance strip S^k_δ = {y : |⟨k̂, ν̂(y)⟩ − k₀| ≤ δ}.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResonanceStrip {
    pub k_hat: Vec<i64>,
    pub k0: i64,
    pub delta: f64,
}

impl ResonanceStrip {
    pub fn residual(&self, model: &ModelSpec, y: &[f64]) -> f64 {
        model.residual(y, &self.k_hat, self.k0)
    }

    pub fn contains(&self, model: &ModelSpec, y: &[f64]) -> bool {
        self.residual(model, y).abs() <= self.delta
    }

    /// Full (n+1)-vector (k̂, k₀).
    pub fn vector(&self) -> Vec<i64> {
        let mut v = self.k_hat.clone();
        v.push(self.k0);
        v
    }
}

/// Evaluator for the smoothed averages H̄ (time-dependent) and 𝐇 = H̄(·,·,0)
/// with analytic gradients.
pub struct SmoothedField<'a> {
    pub model: &'a ModelSpec,
    pub pert: &'a PerturbationSpec,
    pub eps: f64,
}

impl<'a> SmoothedField<'a> {
    pub fn new(model: &'a ModelSpec, pert: &'a PerturbationSpec, eps: f64) -> Self {
        SmoothedField { model, pert, eps }
    }

    fn cutoff(&self) -> f64 {
        self.eps.powf(0.25)
    }

    /// Smoothed average H̄(y, x, t): each mode is weighted by the bump of
    /// its phase speed along the unperturbed flow, scaled by ε^{1/4}.
    pub fn h_bar(&self, y: &[f64], x: &[f64], t: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let nu = self.model.nu_hat(y);
        let cut = self.cutoff();
        self.pert
            .modes
            .iter()
            .map(|m| {
                let w = Bump::eval(m.frequency(&nu) / cut);
                if w == 0.0 {
                    return 0.0;
                }
                let phase = tau
                    * (m.k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum::<f64>()
                        + m.k0 as f64 * t);
                w * m.envelope.at_torus() * (m.amp_re * phase.cos() - m.amp_im * phase.sin())
            })
            .sum()
    }

    /// 𝐇(y, x) = H̄(y, x, 0).
    pub fn h_bold(&self, y: &[f64], x: &[f64]) -> f64 {
        self.h_bar(y, x, 0.0)
    }

    /// 𝐇_x(y, x).
    pub fn h_bold_grad_x(&self, y: &[f64], x: &[f64]) -> Vec<f64> {
        let tau = std::f64::consts::TAU;
        let nu = self.model.nu_hat(y);
        let cut = self.cutoff();
        let mut out = vec![0.0; x.len()];
        for m in &self.pert.modes {
            let w = Bump::eval(m.frequency(&nu) / cut);
            if w == 0.0 {
                continue;
            }
            let phase = tau * (m.k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum::<f64>());
            let d = -(m.amp_re * phase.sin() + m.amp_im * phase.cos())
                * m.envelope.at_torus()
                * w;
            for (o, &kj) in out.iter_mut().zip(&m.k) {
                *o += d * tau * kj as f64;
            }
        }
        out
    }

    /// 𝐇_y(y, x): the bump weight carries the only y-dependence for
    /// constant-amplitude modes.
    pub fn h_bold_grad_y(&self, y: &[f64], x: &[f64]) -> Vec<f64> {
        let tau = std::f64::consts::TAU;
        let nu = self.model.nu_hat(y);
        let jac = self.model.nu_hat_jacobian(y);
        let cut = self.cutoff();
        let n = y.len();
        let mut out = vec![0.0; n];
        for m in &self.pert.modes {
            let arg = m.frequency(&nu) / cut;
            let dw = Bump::deriv(arg);
            if dw == 0.0 {
                continue;
            }
            let phase = tau * (m.k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum::<f64>());
            let c = (m.amp_re * phase.cos() - m.amp_im * phase.sin()) * m.envelope.at_torus();
            // ∂Ω/∂y = ν̂'(y)ᵀ k̂.
            for i in 0..n {
                let dom: f64 = (0..n).map(|j| jac[(j, i)] * m.k[j] as f64).sum();
                out[i] += c * dw * dom / cut;
            }
        }
        out
    }

    /// max over ζ of |𝐇_ζ(y, ζ)| by a 64ⁿ grid with local polish.
    pub fn max_grad_norm(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let n = self.model.n;
        let grid = 64usize;
        let mut best = (0.0f64, vec![0.0; n]);
        let mut idx = vec![0usize; n];
        loop {
            let x: Vec<f64> = idx.iter().map(|&i| i as f64 / grid as f64).collect();
            let g = geom::norm(&self.h_bold_grad_x(y, &x));
            if g > best.0 {
                best = (g, x);
            }
            let mut d = 0;
            loop {
                if d == n {
                    // Polish by coordinate ascent around the best grid node.
                    let mut x = best.1.clone();
                    let mut step = 0.5 / grid as f64;
                    for _ in 0..20 {
                        let mut improved = false;
                        for i in 0..n {
                            for s in [-1.0, 1.0] {
                                let mut xt = x.clone();
                                xt[i] = geom::frac(xt[i] + s * step);
                                let g = geom::norm(&self.h_bold_grad_x(y, &xt));
                                if g > best.0 {
                                    best.0 = g;
                                    x = xt;
                                    improved = true;
                                }
                            }
                        }
                        if !improved {
                            step *= 0.5;
                        }
                    }
                    best.1 = x;
                    return best;
                }
                if idx[d] < grid - 1 {
                    idx[d] += 1;
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }
}

/// Outcome of the d-essential test at a point η.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EssentialVerdict {
    pub eta: Vec<f64>,
    pub d: f64,
    pub essential: bool,
    /// (|log ε|/λ)·max_ζ|𝐇_ζ|, the quantity compared against d.
    pub strength: f64,
    /// Shortest resonance vector h = (ĥ, h₀) with |res(η, h)| ≤ ε^{1/4}
    /// and |h|_∞ < h_c(d), when the point is essential.
    pub witness: Option<Vec<i64>>,
    pub h_c: f64,
    pub enumeration_radius: i64,
}

/// Order bound h_c(d) = (|log ε| / (c d λ̲))^{1/(r−n−1)} with the smoothness
/// budget r = n + 4.
pub fn h_c_bound(eps: f64, d: f64, lambda_min: f64, c: f64) -> f64 {
    let log_eps = eps.ln().abs();
    (log_eps / (c * d * lambda_min)).powf(1.0 / 3.0)
}

/// Decide whether η is d-essential and, if so, find the shortest witness
/// resonance within the enumeration bound.
pub fn essential_test(
    model: &ModelSpec,
    pert: &PerturbationSpec,
    eta: &[f64],
    d: f64,
    eps: f64,
) -> Result<EssentialVerdict> {
    if d <= 0.0 {
        return Err(Error::domain("essential_test requires d > 0"));
    }
    let field = SmoothedField::new(model, pert, eps);
    let lambda = model.lambda(eta);
    let (gmax, _) = field.max_grad_norm(eta);
    let strength = eps.ln().abs() / lambda * gmax;
    let essential = strength > d;
    let h_c = h_c_bound(eps, d, lambda, 1.0);
    let radius = h_c.ceil() as i64;
    let mut witness: Option<Vec<i64>> = None;
    if essential {
        let cut = eps.powf(0.25);
        // Shortest witness; among equal radii prefer the smallest residual
        // (the resonance actually responsible), then the shortest l² norm.
        'outer: for r in 1..=radius {
            let mut h = vec![-r; model.n + 1];
            let mut best: Option<(f64, i64, Vec<i64>)> = None;
            loop {
                if h.iter().any(|&v| v.abs() == r) && h.iter().any(|&v| v != 0) {
                    let res = model.residual(eta, &h[..model.n], h[model.n]).abs();
                    if res <= cut {
                        let l2: i64 = h.iter().map(|&v| v * v).sum();
                        let cand = canonical(&h);
                        let better = match &best {
                            None => true,
                            Some((br, b2, bv)) => {
                                res < br - 1e-12
                                    || ((res - br).abs() <= 1e-12
                                        && (l2 < *b2 || (l2 == *b2 && cand < *bv)))
                            }
                        };
                        if better {
                            best = Some((res, l2, cand));
                        }
                    }
                }
                if !advance_vec(&mut h, r) {
                    break;
                }
            }
            if let Some((_, _, b)) = best {
                witness = Some(b);
                break 'outer;
            }
        }
        if witness.is_none() {
            return Err(Error::numerical(format!(
                "point {eta:?} is essential (strength {strength:.3e} > d = {d:.3e}) but no witness \
                 with |h|_∞ ≤ {radius} satisfies |res| ≤ ε^(1/4); enumeration radius reported"
            )));
        }
    }
    Ok(EssentialVerdict {
        eta: eta.to_vec(),
        d,
        essential,
        strength,
        witness,
        h_c,
        enumeration_radius: radius,
    })
}

fn canonical(v: &[i64]) -> Vec<i64> {
    match v.iter().find(|&&x| x != 0) {
        Some(&x) if x < 0 => v.iter().map(|&y| -y).collect(),
        _ => v.to_vec(),
    }
}

fn advance_vec(v: &mut [i64], radius: i64) -> bool {
    for x in v.iter_mut() {
        if *x < radius {
            *x += 1;
            return true;
        }
        *x = -radius;
    }
    false
}

/// Single-resonance profile Ĥ(η, φ): the restriction of the smoothed
/// average to the modes parallel to the resonance vector h, as a function
/// of the resonant phase φ = ⟨ĥ, ζ⟩.
#[derive(Debug, Clone)]
pub struct SingleResonanceProfile {
    pub h: Vec<i64>,
    pub eta_star: Vec<f64>,
    pub eps: f64,
    /// Harmonics (j, amp_re, amp_im): contributions of the mode j·(ĥ, −h₀).
    pub harmonics: Vec<(i64, f64, f64)>,
    /// Critical points of Ĥ(η★, ·) with their second derivatives.
    pub critical_points: Vec<(f64, f64)>,
    /// Sampled bound of |𝐇_ζ − Ĥ_φ ĥ| over ζ at η★.
    pub defect: f64,
}

impl SingleResonanceProfile {
    /// Build the profile; errors when a critical point of Ĥ(η★,·) is
    /// degenerate (the run must pick a different perturbation).
    pub fn build(
        model: &ModelSpec,
        pert: &PerturbationSpec,
        h: &[i64],
        eta_star: &[f64],
        eps: f64,
    ) -> Result<Self> {
        let n = model.n;
        if h.len() != n + 1 {
            return Err(Error::domain("resonance vector must have dimension n+1"));
        }
        let h_hat = &h[..n];
        let h0 = h[n];
        // Modes with (k, k₀) = j·(ĥ, −h₀).
        let mut harmonics: Vec<(i64, f64, f64)> = Vec::new();
        for m in &pert.modes {
            let j = match mode_multiple(&m.k, m.k0, h_hat, h0) {
                Some(j) => j,
                None => continue,
            };
            let a = m.envelope.at_torus();
            if a == 0.0 {
                continue;
            }
            harmonics.push((j, m.amp_re * a, m.amp_im * a));
        }
        let mut profile = SingleResonanceProfile {
            h: h.to_vec(),
            eta_star: eta_star.to_vec(),
            eps,
            harmonics,
            critical_points: Vec::new(),
            defect: 0.0,
        };
        // Reduction defect, sampled on a ζ-grid.
        let field = SmoothedField::new(model, pert, eps);
        let grid = 24usize;
        let mut idx = vec![0usize; n];
        let mut defect = 0.0f64;
        loop {
            let z: Vec<f64> = idx.iter().map(|&i| i as f64 / grid as f64).collect();
            let hz = field.h_bold_grad_x(eta_star, &z);
            let phi = geom::frac(h_hat.iter().zip(&z).map(|(&a, &b)| a as f64 * b).sum());
            let hp = profile.h_hat_phi(model, eta_star, phi);
            let diff: f64 = hz
                .iter()
                .zip(h_hat)
                .map(|(&g, &hh)| (g - hp * hh as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            defect = defect.max(diff);
            let mut d = 0;
            loop {
                if d == n {
                    profile.defect = defect;
                    profile.locate_critical_points(model)?;
                    return Ok(profile);
                }
                if idx[d] < grid - 1 {
                    idx[d] += 1;
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    fn weight(&self, model: &ModelSpec, eta: &[f64], j: i64) -> f64 {
        let res = model.residual(eta, &self.h[..model.n], self.h[model.n]);
        Bump::eval(j as f64 * res / self.eps.powf(0.25))
    }

    /// Ĥ(η, φ) = Σ_j φ_bump(j·res/ε^{1/4}) amp_j e^{2πijφ}.
    pub fn h_hat(&self, model: &ModelSpec, eta: &[f64], phi: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        self.harmonics
            .iter()
            .map(|&(j, re, im)| {
                let w = self.weight(model, eta, j);
                w * (re * (tau * j as f64 * phi).cos() - im * (tau * j as f64 * phi).sin())
            })
            .sum()
    }

    /// ∂Ĥ/∂φ.
    pub fn h_hat_phi(&self, model: &ModelSpec, eta: &[f64], phi: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        self.harmonics
            .iter()
            .map(|&(j, re, im)| {
                let w = self.weight(model, eta, j);
                let a = tau * j as f64;
                -w * a * (re * (a * phi).sin() + im * (a * phi).cos())
            })
            .sum()
    }

    /// ∂²Ĥ/∂φ².
    pub fn h_hat_phiphi(&self, model: &ModelSpec, eta: &[f64], phi: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        self.harmonics
            .iter()
            .map(|&(j, re, im)| {
                let w = self.weight(model, eta, j);
                let a = tau * j as f64;
                -w * a * a * (re * (a * phi).cos() - im * (a * phi).sin())
            })
            .sum()
    }

    /// Scaled variant ℋ(η, φ): amplitudes frozen at η★, bump evaluated at
    /// the supplied η (used by the reduced system near the resonance).
    pub fn h_frozen(&self, model: &ModelSpec, eta_bump: &[f64], phi: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let res = model.residual(eta_bump, &self.h[..model.n], self.h[model.n]);
        self.harmonics
            .iter()
            .map(|&(j, re, im)| {
                let w = Bump::eval(j as f64 * res / self.eps.powf(0.25));
                w * (re * (tau * j as f64 * phi).cos() - im * (tau * j as f64 * phi).sin())
            })
            .sum()
    }

    /// ∂ℋ/∂φ with frozen amplitudes.
    pub fn h_frozen_phi(&self, model: &ModelSpec, eta_bump: &[f64], phi: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let res = model.residual(eta_bump, &self.h[..model.n], self.h[model.n]);
        self.harmonics
            .iter()
            .map(|&(j, re, im)| {
                let w = Bump::eval(j as f64 * res / self.eps.powf(0.25));
                let a = tau * j as f64;
                -w * a * (re * (a * phi).sin() + im * (a * phi).cos())
            })
            .sum()
    }

    fn locate_critical_points(&mut self, model: &ModelSpec) -> Result<()> {
        if self.harmonics.is_empty() {
            return Ok(());
        }
        let eta = self.eta_star.clone();
        let grid = 1024usize;
        let floor = {
            let mut sup = 0.0f64;
            for i in 0..grid {
                let phi = i as f64 / grid as f64;
                sup = sup.max(self.h_hat_phiphi(model, &eta, phi).abs());
            }
            1e-6 * sup.max(1e-300)
        };
        let mut pts = Vec::new();
        for i in 0..grid {
            let a = i as f64 / grid as f64;
            let b = (i + 1) as f64 / grid as f64;
            let fa = self.h_hat_phi(model, &eta, a);
            let fb = self.h_hat_phi(model, &eta, b);
            if fa == 0.0 || fa * fb < 0.0 {
                let mut phi = 0.5 * (a + b);
                for _ in 0..60 {
                    let f = self.h_hat_phi(model, &eta, phi);
                    let df = self.h_hat_phiphi(model, &eta, phi);
                    if df.abs() < 1e-300 {
                        break;
                    }
                    let step = f / df;
                    phi -= step;
                    if step.abs() < 1e-14 {
                        break;
                    }
                }
                let phi = geom::frac(phi);
                if pts
                    .iter()
                    .all(|&(p, _): &(f64, f64)| geom::dist_to_int(p - phi) > 1e-8)
                {
                    let dd = self.h_hat_phiphi(model, &eta, phi);
                    if dd.abs() <= floor {
                        return Err(Error::numerical(format!(
                            "degenerate critical point of the resonant profile at φ = {phi:.6} \
                             (|Ĥ_φφ| = {:.3e} ≤ floor {floor:.3e})",
                            dd.abs()
                        )));
                    }
                    pts.push((phi, dd));
                }
            }
        }
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        self.critical_points = pts;
        Ok(())
    }
}

fn mode_multiple(k: &[i64], k0: i64, h_hat: &[i64], h0: i64) -> Option<i64> {
    // Solve (k, k0) = j (ĥ, −h0) for integer j ≠ 0.
    let mut j: Option<i64> = None;
    for (&a, &b) in k.iter().zip(h_hat).chain(std::iter::once((&k0, &-h0))) {
        if b == 0 {
            if a != 0 {
                return None;
            }
            continue;
        }
        if a % b != 0 {
            return None;
        }
        let cand = a / b;
        match j {
            None => j = Some(cand),
            Some(p) if p != cand => return None,
            _ => {}
        }
    }
    j.filter(|&v| v != 0)
}

/// Segment of the polygonized curve.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum SegmentKind {
    /// Clear of essential strips.
    TypeA,
    /// Crosses exactly one essential resonance.
    TypeB,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub kind: SegmentKind,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Crossing direction for type (b), satisfying the half-norm
    /// inequality ⟨ν̂′(η₀)ĥ, β⟩ > |ν̂′(η₀)ĥ|/2.
    pub beta: Option<Vec<f64>>,
    /// Resonance vector h = (ĥ, h₀) for type (b).
    pub h: Option<Vec<i64>>,
    /// Crossing point η₀ for type (b).
    pub crossing: Option<Vec<f64>>,
}

impl SegmentPlan {
    pub fn length(&self) -> f64 {
        geom::norm(&geom::sub(&self.end, &self.start))
    }

    pub fn direction(&self) -> Vec<f64> {
        let d = geom::sub(&self.end, &self.start);
        geom::scale(&d, 1.0 / geom::norm(&d).max(1e-300))
    }
}

/// Desk-scale margins for the polygonization (multipliers standing in for
/// the exponents ε^{1/(7n)}, ε^{1/(8n)}).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolygonizeConfig {
    /// Half-length of the type-(b) segment around each crossing.
    pub b_half_length: f64,
    /// Clearance margin demanded of type-(a) segments (in residual units
    /// normalised by |ν̂′ĥ|).
    pub clear_margin: f64,
    /// Essentiality threshold d used for crossing detection.
    pub d_essential: f64,
}

impl Default for PolygonizeConfig {
    fn default() -> Self {
        PolygonizeConfig {
            b_half_length: 0.04,
            clear_margin: 0.01,
            d_essential: 0.05,
        }
    }
}

/// Replace χ by a polygon line whose segments are either clear of
/// essential strips (type a) or cross exactly one of them transversally
/// (type b).
pub fn polygonize_curve(
    model: &ModelSpec,
    pert: &PerturbationSpec,
    chi: &[Vec<f64>],
    eps: f64,
    cfg: &PolygonizeConfig,
) -> Result<Vec<SegmentPlan>> {
    if chi.len() < 2 {
        return Err(Error::domain("curve must have at least two vertices"));
    }
    let n = model.n;
    // Candidate essential resonance vectors: the torus-active modes of the
    // perturbation (the only sources of 𝐇 for a finite table).
    let mut essentials: Vec<Vec<i64>> = Vec::new();
    for m in &pert.modes {
        if m.envelope.at_torus() == 0.0 {
            continue;
        }
        let (k_hat, k0) = m.resonance_vector();
        let mut h = k_hat;
        h.push(k0);
        if h.iter().all(|&v| v == 0) {
            continue;
        }
        let h = canonical(&h);
        if !essentials.iter().any(|e| para(e, &h)) {
            essentials.push(h);
        }
    }

    // Find crossings of χ with each essential S^h_0.
    struct Crossing {
        t: f64,
        eta: Vec<f64>,
        h: Vec<i64>,
    }
    let mut crossings: Vec<Crossing> = Vec::new();
    let samples = 512usize;
    for h in &essentials {
        for s in 0..samples {
            let t0 = s as f64 / samples as f64;
            let t1 = (s + 1) as f64 / samples as f64;
            let r0 = model.residual(&curve_point(chi, t0), &h[..n], h[n]);
            let r1 = model.residual(&curve_point(chi, t1), &h[..n], h[n]);
            if r0 == 0.0 || r0 * r1 < 0.0 {
                let (mut a, mut b) = (t0, t1);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    let rm = model.residual(&curve_point(chi, m), &h[..n], h[n]);
                    if r0 * rm <= 0.0 {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                let t = 0.5 * (a + b);
                let eta = curve_point(chi, t);
                let verdict = essential_test(model, pert, &eta, cfg.d_essential, eps)?;
                if verdict.essential {
                    crossings.push(Crossing {
                        t,
                        eta,
                        h: h.clone(),
                    });
                }
            }
        }
    }
    crossings.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());

    // Reject multiple essential resonances closer than the deformation
    // budget.
    for w in crossings.windows(2) {
        let gap = geom::norm(&geom::sub(&w[1].eta, &w[0].eta));
        if gap < 2.0 * cfg.b_half_length && !para(&w[0].h, &w[1].h) {
            return Err(Error::run(format!(
                "curve passes through a multiple essential resonance: {:?} and {:?} within {gap:.3e}",
                w[0].h, w[1].h
            )));
        }
    }

    // Assemble segments.
    let mut plans: Vec<SegmentPlan> = Vec::new();
    let mut cursor = chi[0].clone();
    for c in &crossings {
        let jac = model.nu_hat_jacobian(&c.eta);
        let w: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| jac[(i, j)] * c.h[j] as f64).sum())
            .collect();
        let wn = geom::norm(&w);
        // β: the curve tangent when transversal enough, otherwise ν̂′ĥ
        // normalised; always oriented so ⟨ν̂′ĥ, β⟩ > |ν̂′ĥ|/2.
        let tangent = tangent_at(chi, c.t);
        let beta = if geom::dot(&tangent, &w).abs() > 0.5 * wn {
            if geom::dot(&tangent, &w) > 0.0 {
                tangent.clone()
            } else {
                geom::scale(&tangent, -1.0)
            }
        } else {
            geom::scale(&w, 1.0 / wn)
        };
        // Traverse the type-(b) piece in the direction the curve runs.
        let advance = geom::dot(&tangent, &beta) >= 0.0;
        let (b_start, b_end) = if advance {
            (
                geom::axpy(&c.eta, -cfg.b_half_length, &beta),
                geom::axpy(&c.eta, cfg.b_half_length, &beta),
            )
        } else {
            (
                geom::axpy(&c.eta, cfg.b_half_length, &beta),
                geom::axpy(&c.eta, -cfg.b_half_length, &beta),
            )
        };
        if geom::norm(&geom::sub(&b_start, &cursor)) > 1e-12 {
            plans.push(SegmentPlan {
                kind: SegmentKind::TypeA,
                start: cursor.clone(),
                end: b_start.clone(),
                beta: None,
                h: None,
                crossing: None,
            });
        }
        plans.push(SegmentPlan {
            kind: SegmentKind::TypeB,
            start: b_start,
            end: b_end.clone(),
            beta: Some(beta),
            h: Some(c.h.clone()),
            crossing: Some(c.eta.clone()),
        });
        cursor = b_end;
    }
    let last = chi.last().unwrap();
    if geom::norm(&geom::sub(last, &cursor)) > 1e-12 {
        plans.push(SegmentPlan {
            kind: SegmentKind::TypeA,
            start: cursor,
            end: last.clone(),
            beta: None,
            h: None,
            crossing: None,
        });
    }

    // Validity checks: total length, deviation from χ, type-(a) clearance.
    let chi_len: f64 = chi.windows(2).map(|w| geom::norm(&geom::sub(&w[1], &w[0]))).sum();
    let total: f64 = plans.iter().map(|p| p.length()).sum();
    if total >= 2.0 * chi_len + 1e-12 {
        return Err(Error::run(format!(
            "polygon length {total:.4} exceeds twice the curve length {chi_len:.4}"
        )));
    }
    for p in &plans {
        for s in 0..=8 {
            let t = s as f64 / 8.0;
            let pt = geom::axpy(&p.start, t * p.length(), &p.direction());
            if geom::dist_point_polyline(&pt, chi) > cfg.b_half_length + 1e-9 {
                return Err(Error::run("polygon deviates from the curve beyond budget"));
            }
            if p.kind == SegmentKind::TypeA {
                for h in &essentials {
                    let r = model.residual(&pt, &h[..n], h[n]).abs();
                    let jac = model.nu_hat_jacobian(&pt);
                    let w: Vec<f64> = (0..n)
                        .map(|i| (0..n).map(|j| jac[(i, j)] * h[j] as f64).sum())
                        .collect();
                    if r / geom::norm(&w).max(1e-300) < cfg.clear_margin {
                        return Err(Error::run(format!(
                            "type-(a) segment comes within {:.3e} of essential strip {h:?}",
                            r / geom::norm(&w)
                        )));
                    }
                }
            }
        }
    }
    Ok(plans)
}

fn para(a: &[i64], b: &[i64]) -> bool {
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            if a[i] as i128 * b[j] as i128 != a[j] as i128 * b[i] as i128 {
                return false;
            }
        }
    }
    true
}

/// Point on the polyline at arclength fraction t ∈ [0, 1].
pub fn curve_point(chi: &[Vec<f64>], t: f64) -> Vec<f64> {
    let total: f64 = chi.windows(2).map(|w| geom::norm(&geom::sub(&w[1], &w[0]))).sum();
    let mut remaining = t.clamp(0.0, 1.0) * total;
    for w in chi.windows(2) {
        let l = geom::norm(&geom::sub(&w[1], &w[0]));
        if remaining <= l || l == 0.0 {
            let s = if l == 0.0 { 0.0 } else { remaining / l };
            return geom::axpy(&w[0], s, &geom::sub(&w[1], &w[0]));
        }
        remaining -= l;
    }
    chi.last().unwrap().clone()
}

fn tangent_at(chi: &[Vec<f64>], t: f64) -> Vec<f64> {
    let h = 1e-4;
    let a = curve_point(chi, (t - h).max(0.0));
    let b = curve_point(chi, (t + h).min(1.0));
    let d = geom::sub(&b, &a);
    geom::scale(&d, 1.0 / geom::norm(&d).max(1e-300))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Envelope, ModelSpec, PerturbationSpec};

    #[test]
    fn bump_plateaus_are_exact() {
        assert_eq!(Bump::eval(0.0), 1.0);
        assert_eq!(Bump::eval(0.5), 1.0);
        assert_eq!(Bump::eval(-0.3), 1.0);
        assert_eq!(Bump::eval(1.0), 0.0);
        assert_eq!(Bump::eval(-2.0), 0.0);
        assert!(Bump::eval(0.75) > 0.0 && Bump::eval(0.75) < 1.0);
        let mut prev = 1.0;
        for i in 0..=100 {
            let r = 0.5 + 0.005 * i as f64;
            let v = Bump::eval(r);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn bump_derivative_matches_finite_differences() {
        for r in [-0.9, -0.6, 0.55, 0.7, 0.85, 0.95] {
            let h = 1e-6;
            let fd = (Bump::eval(r + h) - Bump::eval(r - h)) / (2.0 * h);
            assert!(
                (Bump::deriv(r) - fd).abs() < 1e-6,
                "r = {r}: {} vs {fd}",
                Bump::deriv(r)
            );
        }
        assert_eq!(Bump::deriv(0.2), 0.0);
        assert_eq!(Bump::deriv(1.3), 0.0);
    }

    #[test]
    fn h_bold_vanishes_far_from_resonances() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_resonant(0.05);
        let field = SmoothedField::new(&model, &pert, 1e-2);
        let y = [1.5, 0.5];
        for x in [[0.0, 0.0], [0.13, 0.77]] {
            assert_eq!(field.h_bold(&y, &x), 0.0);
            assert_eq!(geom::norm(&field.h_bold_grad_x(&y, &x)), 0.0);
        }
    }

    #[test]
    fn h_bold_is_the_resonant_cosine_on_the_strip() {
        let model = ModelSpec::model_a();
        let a = 0.05;
        let pert = PerturbationSpec::model_a_resonant(a);
        let field = SmoothedField::new(&model, &pert, 1e-2);
        let y = [0.7, 0.7];
        let x = [0.3, 0.1];
        let expect = 2.0 * a * (std::f64::consts::TAU * (x[0] - x[1])).cos();
        assert!((field.h_bold(&y, &x) - expect).abs() < 1e-14);
    }

    #[test]
    fn h_bold_grad_y_matches_fd() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_resonant(0.05);
        let eps = 1e-2;
        let field = SmoothedField::new(&model, &pert, eps);
        // res = y₁ − y₂ inside the bump's transition band.
        let y = [0.7 + 0.75 * eps.powf(0.25), 0.7];
        let x = [0.2, 0.05];
        let g = field.h_bold_grad_y(&y, &x);
        let fd = geom::fd_gradient(|p| field.h_bold(p, &x), &y, 1e-7);
        for i in 0..2 {
            assert!((g[i] - fd[i]).abs() < 1e-5, "{:?} vs {:?}", g, fd);
        }
    }

    #[test]
    fn zeta_average_of_gradient_vanishes() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_resonant(0.08);
        let field = SmoothedField::new(&model, &pert, 1e-2);
        let y = [0.7, 0.7];
        let grid = 64;
        let mut sum = [0.0f64; 2];
        for i in 0..grid {
            for j in 0..grid {
                let x = [i as f64 / grid as f64, j as f64 / grid as f64];
                let g = field.h_bold_grad_x(&y, &x);
                sum[0] += g[0];
                sum[1] += g[1];
            }
        }
        let cells = (grid * grid) as f64;
        assert!(sum[0].abs() / cells < 1e-12);
        assert!(sum[1].abs() / cells < 1e-12);
    }

    #[test]
    fn essential_test_examples() {
        let model = ModelSpec::model_a();
        let eps = 1e-2;
        let pert = PerturbationSpec::model_a_resonant(0.05);
        // 𝐇 ≡ 0 at η far from the mode resonance: not essential.
        let v = essential_test(&model, &pert, &[1.5, 0.5], 0.01, eps).unwrap();
        assert!(!v.essential);
        // On the diagonal with the resonant mode: essential with witness
        // (1, −1, 0).
        let v = essential_test(&model, &pert, &[0.7, 0.7], 0.05, eps).unwrap();
        assert!(v.essential);
        assert_eq!(v.witness, Some(vec![1, -1, 0]));
        // Monotone in d: essential at d implies essential at smaller d.
        let v2 = essential_test(&model, &pert, &[0.7, 0.7], 0.01, eps).unwrap();
        assert!(v2.essential);
        // h_c decreasing in d.
        assert!(h_c_bound(eps, 0.2, 1.0, 1.0) < h_c_bound(eps, 0.1, 1.0, 1.0));
    }

    #[test]
    fn single_resonance_profile_single_mode() {
        let model = ModelSpec::model_a();
        let a = 0.05;
        let pert = PerturbationSpec::model_a_resonant(a);
        let prof =
            SingleResonanceProfile::build(&model, &pert, &[1, -1, 0], &[0.7, 0.7], 1e-2).unwrap();
        for phi in [0.0, 0.2, 0.37] {
            let expect = 2.0 * a * (std::f64::consts::TAU * phi).cos();
            assert!((prof.h_hat(&model, &[0.7, 0.7], phi) - expect).abs() < 1e-14);
        }
        assert_eq!(prof.critical_points.len(), 2);
        let expect_dd = 8.0 * std::f64::consts::PI.powi(2) * a;
        for &(phi, dd) in &prof.critical_points {
            assert!(geom::dist_to_int(phi * 2.0) < 1e-9, "phi = {phi}");
            assert!((dd.abs() - expect_dd).abs() < 1e-9);
        }
        // The only torus-active mode is parallel to h, so the reduction is
        // exact.
        assert!(prof.defect < 1e-12);
    }

    #[test]
    fn profile_with_no_parallel_modes_is_flat() {
        let model = ModelSpec::model_a();
        let mut pert = PerturbationSpec::model_a_default();
        pert.push_pair(vec![1, 1], -1, 0.03, Envelope::One);
        let prof =
            SingleResonanceProfile::build(&model, &pert, &[1, -1, 0], &[0.5, 0.5], 1e-2).unwrap();
        assert!(prof.harmonics.is_empty());
        assert_eq!(prof.h_hat(&model, &[0.5, 0.5], 0.3), 0.0);
        // Sampled defect then equals max |𝐇_ζ|.
        let field = SmoothedField::new(&model, &pert, 1e-2);
        let (gmax, _) = field.max_grad_norm(&[0.5, 0.5]);
        assert!((prof.defect - gmax).abs() < 0.05 * gmax);
    }

    #[test]
    fn polygonize_no_essential_crossing_is_single_segment() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_default(); // 𝐇 ≡ 0
        let chi = vec![vec![0.62, 0.42], vec![0.38, 0.58]];
        let plans =
            polygonize_curve(&model, &pert, &chi, 1e-2, &PolygonizeConfig::default()).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].kind, SegmentKind::TypeA);
    }

    #[test]
    fn polygonize_one_crossing_gives_aba() {
        let model = ModelSpec::model_a();
        let pert = PerturbationSpec::model_a_resonant(0.05);
        let chi = vec![vec![0.62, 0.42], vec![0.38, 0.58]];
        let plans =
            polygonize_curve(&model, &pert, &chi, 1e-2, &PolygonizeConfig::default()).unwrap();
        let kinds: Vec<_> = plans.iter().map(|p| p.kind.clone()).collect();
        assert_eq!(
            kinds,
            vec![SegmentKind::TypeA, SegmentKind::TypeB, SegmentKind::TypeA]
        );
        let b = &plans[1];
        let h = b.h.as_ref().unwrap();
        let beta = b.beta.as_ref().unwrap();
        let jac = model.nu_hat_jacobian(b.crossing.as_ref().unwrap());
        let w: Vec<f64> = (0..2)
            .map(|i| (0..2).map(|j| jac[(i, j)] * h[j] as f64).sum())
            .collect();
        assert!(geom::dot(&w, beta) > 0.5 * geom::norm(&w));
    }

    #[test]
    fn polygonize_two_parallel_strips() {
        // Two parallel essential strips crossing χ: two type-(b) segments
        // with per-segment witnesses.
        let model = ModelSpec::model_a();
        let mut pert = PerturbationSpec::model_a_default();
        pert.push_pair(vec![1, -1], 0, 0.05, Envelope::One); // slow on y₁ − y₂ = 0
        pert.push_pair(vec![2, -2], -1, 0.05, Envelope::One); // slow on 2(y₁ − y₂) = 1
        let chi = vec![vec![0.9, 0.3], vec![0.3, 0.9]];
        let plans =
            polygonize_curve(&model, &pert, &chi, 1e-2, &PolygonizeConfig::default()).unwrap();
        let bs: Vec<_> = plans
            .iter()
            .filter(|p| p.kind == SegmentKind::TypeB)
            .collect();
        assert_eq!(bs.len(), 2);
        for b in bs {
            assert!(b.h.is_some());
        }
    }
}

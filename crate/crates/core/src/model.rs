//! The class of a priori unstable systems H₀(y,v,u) = F(y, f(v,u)) with a
//! finite-Fourier perturbation, plus the built-in reference model.
//!
//! Model A: n = 2, F(y,e) = |y|²/2 + e, f(v,u) = v²/2 + u⁴/4 − u²/2 (planar
//! Duffing figure-eight). The homoclinic loops have the closed form
//! u(t) = ±√2 sech t, v = u̇, which the tests use as an independent oracle.

use crate::error::{Error, Result};
use crate::geom;
use crate::ode::Integrator;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Loop label σ ∈ {+1, −1} distinguishing the two homoclinic loops.
pub type LoopSign = i8;

/// A polynomial in several variables: terms (exponents, coefficient).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Poly {
    pub terms: Vec<(Vec<u32>, f64)>,
}

impl Poly {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product::<f64>())
            .sum()
    }

    pub fn partial(&self, var: usize) -> Poly {
        let mut terms = Vec::new();
        for (e, c) in &self.terms {
            if e[var] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[var] -= 1;
            terms.push((e2, c * e[var] as f64));
        }
        Poly { terms }
    }
}

/// Envelope factor of a perturbation mode, a function of (v, u).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum Envelope {
    /// env ≡ 1 (active on the torus u = v = 0).
    One,
    /// env = u² (vanishes on the torus; Model A default).
    USquared,
    /// General polynomial in (v, u).
    Poly(Poly),
}

impl Envelope {
    pub fn eval(&self, v: f64, u: f64) -> f64 {
        match self {
            Envelope::One => 1.0,
            Envelope::USquared => u * u,
            Envelope::Poly(p) => p.eval(&[v, u]),
        }
    }

    /// Value on the hyperbolic torus, env(0, 0).
    pub fn at_torus(&self) -> f64 {
        self.eval(0.0, 0.0)
    }

    pub fn grad(&self, v: f64, u: f64) -> (f64, f64) {
        match self {
            Envelope::One => (0.0, 0.0),
            Envelope::USquared => (0.0, 2.0 * u),
            Envelope::Poly(p) => (p.partial(0).eval(&[v, u]), p.partial(1).eval(&[v, u])),
        }
    }
}

/// One Fourier mode of the perturbation:
/// amp · env(v,u) · exp(2πi(⟨k, x⟩ + k₀ t)).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mode {
    pub k: Vec<i64>,
    pub k0: i64,
    pub amp_re: f64,
    pub amp_im: f64,
    pub envelope: Envelope,
}

impl Mode {
    /// Phase speed of this mode along the unperturbed flow at action y:
    /// d/dt (⟨k, x₀ + ν̂ t⟩ + k₀ t) = ⟨k, ν̂(y)⟩ + k₀.
    pub fn frequency(&self, nu_hat: &[f64]) -> f64 {
        self.k.iter().zip(nu_hat).map(|(&ki, &ni)| ki as f64 * ni).sum::<f64>() + self.k0 as f64
    }

    /// Resonance vector (k̂, k₀) on whose strip this mode is slow, under the
    /// fixed residual convention res(y, k) = ⟨k̂, ν̂(y)⟩ − k₀.
    pub fn resonance_vector(&self) -> (Vec<i64>, i64) {
        (self.k.clone(), -self.k0)
    }
}

/// The perturbation H₁ as a finite Fourier family.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct PerturbationSpec {
    pub modes: Vec<Mode>,
}

impl PerturbationSpec {
    /// Empty perturbation (H₁ ≡ 0).
    pub fn zero() -> Self {
        PerturbationSpec { modes: Vec::new() }
    }

    /// Add a conjugate mode pair with per-mode amplitude `a`; the real
    /// contribution is 2a·env·cos(2π(⟨k,x⟩ + k₀ t)).
    pub fn push_pair(&mut self, k: Vec<i64>, k0: i64, a: f64, envelope: Envelope) {
        let neg: Vec<i64> = k.iter().map(|&v| -v).collect();
        self.modes.push(Mode {
            k,
            k0,
            amp_re: a,
            amp_im: 0.0,
            envelope: envelope.clone(),
        });
        self.modes.push(Mode {
            k: neg,
            k0: -k0,
            amp_re: a,
            amp_im: 0.0,
            envelope,
        });
    }

    /// Model A default: H₁ = u²(cos 2πx₁ + cos 2π(x₂ − t)).
    pub fn model_a_default() -> Self {
        let mut p = PerturbationSpec::zero();
        p.push_pair(vec![1, 0], 0, 0.5, Envelope::USquared);
        p.push_pair(vec![0, 1], -1, 0.5, Envelope::USquared);
        p
    }

    /// Default plus a torus-active resonant pair of amplitude a (real part
    /// 2a·cos 2π(x₁ − x₂)), sitting on the strong resonance k = (1, −1, 0).
    pub fn model_a_resonant(a: f64) -> Self {
        let mut p = Self::model_a_default();
        p.push_pair(vec![1, -1], 0, a, Envelope::One);
        p
    }

    /// Perturbation for diffusion runs across k = (1, −1, 0): the resonant
    /// table plus a third independent hyperbolic mode 2c·u²·cos 2π(2x₁ − t).
    ///
    /// With only the two default modes the potential is separable on the
    /// resonant fibers (every fiber extremum has the same value), so branch
    /// switching cannot produce a k-component of the section integral. The
    /// extra mode satisfies −v₁ − v₂ + v₃ = k in phase exponents, which
    /// couples the fiber coordinate into the profile.
    pub fn model_a_diffusion(a_res: f64, c_aux: f64) -> Self {
        let mut p = Self::model_a_resonant(a_res);
        p.push_pair(vec![2, 0], -1, c_aux, Envelope::USquared);
        p
    }

    /// H₁ must be real: modes closed under (k, k₀) ↦ (−k, −k₀) with
    /// conjugate amplitudes.
    pub fn validate_real(&self, n: usize) -> Result<()> {
        for m in &self.modes {
            if m.k.len() != n {
                return Err(Error::domain(format!(
                    "mode k has dimension {}, model has n = {n}",
                    m.k.len()
                )));
            }
            let found = self.modes.iter().any(|m2| {
                m2.k.iter().zip(&m.k).all(|(&a, &b)| a == -b)
                    && m2.k0 == -m.k0
                    && (m2.amp_re - m.amp_re).abs() < 1e-15
                    && (m2.amp_im + m.amp_im).abs() < 1e-15
                    && m2.envelope == m.envelope
            });
            if !found {
                return Err(Error::domain(format!(
                    "perturbation is not real: mode k={:?}, k0={} lacks its conjugate",
                    m.k, m.k0
                )));
            }
        }
        Ok(())
    }

    /// Evaluate H₁(y, x, v, u, t). Amplitudes are y-independent constants.
    pub fn eval(&self, x: &[f64], v: f64, u: f64, t: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        self.modes
            .iter()
            .map(|m| {
                let phase = tau
                    * (m.k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum::<f64>()
                        + m.k0 as f64 * t);
                m.envelope.eval(v, u) * (m.amp_re * phase.cos() - m.amp_im * phase.sin())
            })
            .sum()
    }

    /// Gradient of H₁ with respect to x.
    pub fn grad_x(&self, x: &[f64], v: f64, u: f64, t: f64, out: &mut [f64]) {
        let tau = std::f64::consts::TAU;
        out.iter_mut().for_each(|o| *o = 0.0);
        for m in &self.modes {
            let phase = tau
                * (m.k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum::<f64>()
                    + m.k0 as f64 * t);
            // d/dx_j Re(amp e^{iφ}) = -Re(amp) sinφ·φ' - Im(amp) cosφ·φ'
            let d = -(m.amp_re * phase.sin() + m.amp_im * phase.cos()) * m.envelope.eval(v, u);
            for (o, &kj) in out.iter_mut().zip(&m.k) {
                *o += d * tau * kj as f64;
            }
        }
    }

    /// Partial derivatives of H₁ with respect to (v, u).
    pub fn grad_vu(&self, x: &[f64], v: f64, u: f64, t: f64) -> (f64, f64) {
        let tau = std::f64::consts::TAU;
        let mut gv = 0.0;
        let mut gu = 0.0;
        for m in &self.modes {
            let phase = tau
                * (m.k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum::<f64>()
                    + m.k0 as f64 * t);
            let c = m.amp_re * phase.cos() - m.amp_im * phase.sin();
            let (ev, eu) = m.envelope.grad(v, u);
            gv += c * ev;
            gu += c * eu;
        }
        (gv, gu)
    }
}

/// Axis-aligned rectangle in the (v, u) plane.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Rect {
    pub v: (f64, f64),
    pub u: (f64, f64),
}

impl Rect {
    pub fn contains(&self, v: f64, u: f64) -> bool {
        v >= self.v.0 && v <= self.v.1 && u >= self.u.0 && u <= self.u.1
    }
}

/// Closed box in action space.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ActionBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionBox {
    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&l, &h))| v >= l && v <= h)
    }
}

/// Numerically continued homoclinic loop for polynomial models.
#[derive(Debug, Clone)]
struct NumericLoop {
    /// Samples of (v, u) at uniform times, apex at index `apex`.
    times: Vec<f64>,
    points: Vec<(f64, f64)>,
}

impl NumericLoop {
    fn at(&self, t: f64, lambda: f64, kappa: f64, dirs: ((f64, f64), (f64, f64))) -> (f64, f64) {
        let t0 = self.times[0];
        let t1 = *self.times.last().unwrap();
        if t < t0 {
            // Asymptotic tail along the unstable eigendirection.
            let a = kappa * (lambda * t).exp();
            return (dirs.0 .0 * a, dirs.0 .1 * a);
        }
        if t > t1 {
            let a = kappa * (-lambda * t).exp();
            return (dirs.1 .0 * a, dirs.1 .1 * a);
        }
        let h = self.times[1] - self.times[0];
        let idx = (((t - t0) / h).floor() as usize).min(self.points.len() - 2);
        let s = (t - self.times[idx]) / h;
        let (v0, u0) = self.points[idx];
        let (v1, u1) = self.points[idx + 1];
        (v0 + s * (v1 - v0), u0 + s * (u1 - u0))
    }
}

/// A model of the class H₀(y, v, u) = E(y) + f(v, u) with a nondegenerate
/// saddle of f at the origin.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub n: usize,
    pub name: String,
    pub domain_d: Rect,
    pub domain_dcal: ActionBox,
    kind: ModelKind,
}

#[derive(Debug, Clone)]
enum ModelKind {
    ModelA,
    Poly {
        energy: Poly,
        f: Poly,
        lambda: f64,
        kappa: (f64, f64),
        loops: Vec<NumericLoop>,
        /// Unit eigendirections (incoming unstable, outgoing stable) per loop.
        loop_dirs: Vec<((f64, f64), (f64, f64))>,
    },
}

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// A non-multiple point of the strong resonance y₁ = y₂ of Model A:
/// (1/√5, 1/√5). With ν̂ = y, the only integer vector (l̂, l₀) with
/// ⟨l̂, ν̂⟩ = l₀ is parallel to (1, −1, 0), so the winding equidistributes
/// on the resonant fibers. Rational points such as (1/2, 1/2) are multiple
/// resonances with periodic windings and must be avoided.
pub fn model_a_resonance_point() -> Vec<f64> {
    let c = 1.0 / 5f64.sqrt();
    vec![c, c]
}

impl ModelSpec {
    /// The built-in reference model.
    pub fn model_a() -> Self {
        ModelSpec {
            n: 2,
            name: "modelA".into(),
            domain_d: Rect {
                v: (-2.0, 2.0),
                u: (-2.0, 2.0),
            },
            domain_dcal: ActionBox {
                lo: vec![-2.0, -2.0],
                hi: vec![2.0, 2.0],
            },
            kind: ModelKind::ModelA,
        }
    }

    /// Build a polynomial model E(y) + f(v, u); the homoclinic loops are
    /// continued numerically from the saddle.
    pub fn from_polynomials(
        n: usize,
        name: &str,
        energy: Poly,
        f: Poly,
        domain_d: Rect,
        domain_dcal: ActionBox,
    ) -> Result<Self> {
        // Saddle check at the origin by finite differences on the gradient.
        let h = 1e-5;
        let fv = f.partial(0);
        let fu = f.partial(1);
        if fv.eval(&[0.0, 0.0]).abs() > 1e-10 || fu.eval(&[0.0, 0.0]).abs() > 1e-10 {
            return Err(Error::domain("f has no critical point at the origin"));
        }
        let fvv = fv.partial(0).eval(&[0.0, 0.0]);
        let fvu = fv.partial(1).eval(&[0.0, 0.0]);
        let fuu = fu.partial(1).eval(&[0.0, 0.0]);
        let det = fvv * fuu - fvu * fvu;
        if det >= 0.0 {
            return Err(Error::domain(format!(
                "origin is not a nondegenerate saddle of f (det Hess = {det:.3e})"
            )));
        }
        let lambda = (-det).sqrt();
        let _ = h;

        // Unstable eigendirections of the linearized flow
        // (δv̇, δu̇) = (−f_uv δv − f_uu δu, f_vv δv + f_vu δu).
        let m = [[-fvu, -fuu], [fvv, fvu]];
        // Eigenvector for +lambda.
        let dir = eig_dir(m, lambda);
        let mut loops = Vec::new();
        let mut loop_dirs = Vec::new();
        let mut kappa = (0.0, 0.0);
        for sgn in [1.0f64, -1.0] {
            let d0 = (sgn * dir.0, sgn * dir.1);
            let (lp, kap, dout) = continue_loop(&f, d0, lambda, &domain_d)?;
            if sgn > 0.0 {
                kappa.0 = kap;
            } else {
                kappa.1 = kap;
            }
            loops.push(lp);
            loop_dirs.push((d0, dout));
        }
        Ok(ModelSpec {
            n,
            name: name.into(),
            domain_d,
            domain_dcal,
            kind: ModelKind::Poly {
                energy,
                f,
                lambda,
                kappa,
                loops,
                loop_dirs,
            },
        })
    }

    /// f(v, u).
    pub fn f_eval(&self, v: f64, u: f64) -> f64 {
        match &self.kind {
            ModelKind::ModelA => 0.5 * v * v + 0.25 * u.powi(4) - 0.5 * u * u,
            ModelKind::Poly { f, .. } => f.eval(&[v, u]),
        }
    }

    /// (∂f/∂v, ∂f/∂u).
    pub fn f_grad(&self, v: f64, u: f64) -> (f64, f64) {
        match &self.kind {
            ModelKind::ModelA => (v, u.powi(3) - u),
            ModelKind::Poly { f, .. } => {
                (f.partial(0).eval(&[v, u]), f.partial(1).eval(&[v, u]))
            }
        }
    }

    /// H₀(y, v, u) = E(y) + f(v, u) with domain checks.
    pub fn eval_unperturbed(&self, y: &[f64], v: f64, u: f64) -> Result<f64> {
        if !self.domain_dcal.contains(y) {
            return Err(Error::domain(format!("action {y:?} outside the domain box")));
        }
        if !self.domain_d.contains(v, u) {
            return Err(Error::domain(format!(
                "(v, u) = ({v}, {u}) outside the hyperbolic domain"
            )));
        }
        Ok(self.energy(y) + self.f_eval(v, u) - self.f_eval(0.0, 0.0))
    }

    /// E(y) = H₀(y, 0, 0).
    pub fn energy(&self, y: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::ModelA => 0.5 * geom::dot(y, y),
            ModelKind::Poly { energy, .. } => energy.eval(y),
        }
    }

    /// ν̂(y) = ∂E/∂y.
    pub fn nu_hat(&self, y: &[f64]) -> Vec<f64> {
        match &self.kind {
            ModelKind::ModelA => y.to_vec(),
            ModelKind::Poly { energy, .. } => {
                (0..self.n).map(|i| energy.partial(i).eval(y)).collect()
            }
        }
    }

    /// Extended frequency vector ν(y) = (ν̂(y), −1), fixed so that the
    /// resonance residual is res(y, k) = ⟨k̂, ν̂(y)⟩ − k₀.
    pub fn nu_extended(&self, y: &[f64]) -> Vec<f64> {
        let mut v = self.nu_hat(y);
        v.push(-1.0);
        v
    }

    /// Jacobian ν̂′(y) = ∂²E/∂y² (analytic for built-ins).
    pub fn nu_hat_jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            ModelKind::ModelA => DMatrix::identity(self.n, self.n),
            ModelKind::Poly { energy, .. } => {
                let mut m = DMatrix::zeros(self.n, self.n);
                for i in 0..self.n {
                    let pi = energy.partial(i);
                    for j in 0..self.n {
                        m[(i, j)] = pi.partial(j).eval(y);
                    }
                }
                m
            }
        }
    }

    /// Resonance residual res(y, k) = ⟨k̂, ν̂(y)⟩ − k₀.
    pub fn residual(&self, y: &[f64], k_hat: &[i64], k0: i64) -> f64 {
        let nu = self.nu_hat(y);
        k_hat
            .iter()
            .zip(&nu)
            .map(|(&ki, &ni)| ki as f64 * ni)
            .sum::<f64>()
            - k0 as f64
    }

    /// Hyperbolic rate λ(y) at the saddle. For the E + f class this is the
    /// positive eigenvalue √(−det Hess f(0,0)), independent of y.
    pub fn lambda(&self, _y: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::ModelA => 1.0,
            ModelKind::Poly { lambda, .. } => *lambda,
        }
    }

    /// Asymptotic amplitude κ^σ(y): |γ^σ(t)| ~ κ e^{−λ|t|}, measured in the
    /// Euclidean norm of (v, u).
    pub fn kappa(&self, _y: &[f64], sigma: LoopSign) -> f64 {
        match &self.kind {
            ModelKind::ModelA => 4.0,
            ModelKind::Poly { kappa, .. } => {
                if sigma > 0 {
                    kappa.0
                } else {
                    kappa.1
                }
            }
        }
    }

    /// Homoclinic solution (v, u) on loop γ^σ, time origin at the apex of
    /// the loop (the point farthest from the saddle).
    pub fn separatrix(&self, sigma: LoopSign, t: f64) -> (f64, f64) {
        match &self.kind {
            ModelKind::ModelA => {
                let s = sigma as f64;
                let sech = 1.0 / t.cosh();
                (-s * SQRT2 * sech * t.tanh(), s * SQRT2 * sech)
            }
            ModelKind::Poly {
                loops,
                loop_dirs,
                lambda,
                kappa,
                ..
            } => {
                let idx = if sigma > 0 { 0 } else { 1 };
                let kap = if sigma > 0 { kappa.0 } else { kappa.1 };
                loops[idx].at(t, *lambda, kap, loop_dirs[idx])
            }
        }
    }

    /// True where the separatrix is available in closed form; tests use a
    /// tighter tolerance there.
    pub fn has_closed_form(&self) -> bool {
        matches!(self.kind, ModelKind::ModelA)
    }
}

fn eig_dir(m: [[f64; 2]; 2], lambda: f64) -> (f64, f64) {
    // (M - λI) w = 0; pick the larger row for stability.
    let r1 = (m[0][0] - lambda, m[0][1]);
    let r2 = (m[1][0], m[1][1] - lambda);
    let w = if r1.0.abs() + r1.1.abs() > r2.0.abs() + r2.1.abs() {
        (-r1.1, r1.0)
    } else {
        (-r2.1, r2.0)
    };
    let n = (w.0 * w.0 + w.1 * w.1).sqrt();
    let w = (w.0 / n, w.1 / n);
    // Prefer positive u-component, then positive v.
    if w.1 < 0.0 || (w.1 == 0.0 && w.0 < 0.0) {
        (-w.0, -w.1)
    } else {
        w
    }
}

/// Continue one homoclinic loop of the f-flow from the saddle along the
/// unstable direction `d0`, recenter time at the apex, and measure the
/// asymptotic amplitude. Returns (loop, κ, outgoing stable direction).
fn continue_loop(
    f: &Poly,
    d0: (f64, f64),
    lambda: f64,
    domain: &Rect,
) -> Result<(NumericLoop, f64, (f64, f64))> {
    let fv = f.partial(0);
    let fu = f.partial(1);
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = -fu.eval(&[y[0], y[1]]);
        dy[1] = fv.eval(&[y[0], y[1]]);
    };
    let delta = 1e-9;
    let start = [d0.0 * delta, d0.1 * delta];
    let integ = Integrator::with_tol(1e-12);
    // March forward until we come back near the saddle.
    let mut t = 0.0;
    let mut y = start.to_vec();
    let mut samples = vec![(t, (y[0], y[1]))];
    let dt = 0.01;
    let t_escape = 5.0 * (1.0 / delta).ln() / lambda;
    let mut left_vicinity = false;
    // The unstable component of the integration error regrows near the
    // saddle, so the closest return sits around 1e-5..1e-4; march until the
    // distance starts increasing again and truncate there.
    let mut min_r = f64::INFINITY;
    let mut min_idx = 0usize;
    loop {
        let sol = integ.solve(&rhs, t, &y, t + dt, &[])?;
        t = sol.t_end;
        y = sol.y_end;
        if !domain.contains(y[0], y[1]) {
            return Err(Error::domain(
                "homoclinic continuation left the domain: no bounded loop found",
            ));
        }
        let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
        samples.push((t, (y[0], y[1])));
        if r > 0.1 {
            left_vicinity = true;
        }
        if left_vicinity && r < 1e-3 {
            if r < min_r {
                min_r = r;
                min_idx = samples.len() - 1;
            } else if r > 2.0 * min_r {
                samples.truncate(min_idx + 1);
                break;
            }
        }
        if t > t_escape {
            if min_r.is_finite() {
                samples.truncate(min_idx + 1);
                break;
            }
            return Err(Error::numerical(
                "homoclinic continuation did not return to the saddle",
            ));
        }
    }
    // Apex = farthest sample from the saddle; recenter time there.
    let apex = samples
        .iter()
        .enumerate()
        .max_by(|a, b| {
            let ra = a.1 .1 .0.powi(2) + a.1 .1 .1.powi(2);
            let rb = b.1 .1 .0.powi(2) + b.1 .1 .1.powi(2);
            ra.partial_cmp(&rb).unwrap()
        })
        .map(|(i, _)| i)
        .unwrap();
    let t_apex = samples[apex].0;
    let times: Vec<f64> = samples.iter().map(|(s, _)| s - t_apex).collect();
    let points: Vec<(f64, f64)> = samples.iter().map(|(_, p)| *p).collect();
    // κ from the late-time decay, averaged over a few samples.
    let mut kap = 0.0;
    let mut cnt = 0;
    for (i, (s, p)) in samples.iter().enumerate() {
        let tt = s - t_apex;
        if tt > 0.6 * (times.last().unwrap()) && i < samples.len() - 2 {
            let r = (p.0 * p.0 + p.1 * p.1).sqrt();
            kap += r * (lambda * tt).exp();
            cnt += 1;
        }
    }
    if cnt > 0 {
        kap /= cnt as f64;
    }
    // Outgoing direction: final point normalized.
    let last = points.last().unwrap();
    let rn = (last.0 * last.0 + last.1 * last.1).sqrt();
    let dout = (last.0 / rn, last.1 / rn);
    // Resample to a uniform grid for interpolation.
    let t0 = times[0];
    let t1 = *times.last().unwrap();
    let m = 16384;
    let h = (t1 - t0) / (m - 1) as f64;
    let mut grid_t = Vec::with_capacity(m);
    let mut grid_p = Vec::with_capacity(m);
    let mut j = 0usize;
    for i in 0..m {
        let tt = t0 + i as f64 * h;
        while j + 1 < times.len() && times[j + 1] < tt {
            j += 1;
        }
        let j2 = (j + 1).min(times.len() - 1);
        let span = (times[j2] - times[j]).max(1e-300);
        let s = ((tt - times[j]) / span).clamp(0.0, 1.0);
        let p = (
            points[j].0 + s * (points[j2].0 - points[j].0),
            points[j].1 + s * (points[j2].1 - points[j].1),
        );
        grid_t.push(tt);
        grid_p.push(p);
    }
    Ok((
        NumericLoop {
            times: grid_t,
            points: grid_p,
        },
        kap,
        dout,
    ))
}

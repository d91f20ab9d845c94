//! Quantitative scaffolding of the existence scheme: the first eigenvalue of
//! `-Δ_p`, the embedding constant into `C(Ω̄)`, the a priori radii `R₁` and
//! `R = C_S R₁`, the right-hand-side estimate constant, and a sampled audit
//! of the structural hypotheses on `g` and `f`.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::sparse::Triplet;
use serde::{Deserialize, Serialize};

use crate::error::SpecError;
use crate::fespace::{grad_power_integral, lr_norm, power_integral, sup_norm, grad_norm_lp, FeFunction, FeSpace};
use crate::linalg::{norm_inf, solve_sparse};
use crate::mesh::{build_hierarchy, DomainDescriptor};
use crate::operators::{dot, flux, flux_derivative, ProblemSpec, Regime, DEFAULT_EPSILON};
use crate::sampling::{halton, random_fields};

/// How the Poincaré step converts `‖u‖_{L^p}` into `‖∇u‖_{L^p}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoincareConvention {
    /// `‖u‖_p ≤ λ₁^{-1/p} ‖∇u‖_p`, which follows from the Rayleigh quotient.
    #[default]
    Standard,
    /// `‖u‖_p ≤ λ₁^{-1} ‖∇u‖_p`, the literal `1/λ₁` form of the inequality.
    Literal,
}

impl PoincareConvention {
    /// Factor `κ` with `‖u‖_p^e ≤ κ ‖∇u‖_p^e`.
    pub fn factor(self, lambda1: f64, p: f64, e: f64) -> f64 {
        match self {
            PoincareConvention::Standard => lambda1.powf(-e / p),
            PoincareConvention::Literal => lambda1.powf(-e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda1Provenance {
    Analytic1d,
    DiscreteRayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SobolevProvenance {
    Analytic1d,
    DiscreteSurrogate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lambda1Estimate {
    /// Value used downstream (for 2D already multiplied by the safety factor).
    pub value: f64,
    pub provenance: Lambda1Provenance,
    /// Unscaled discrete Rayleigh minimum, when one was computed.
    pub rayleigh: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Safety factor applied to the 2D discrete Rayleigh minimum.
pub const LAMBDA1_SAFETY: f64 = 0.5;
/// Inflation applied to the 2D sampled embedding ratio.
pub const SOBOLEV_SAFETY: f64 = 2.0;

/// `π_p = 2π (p-1)^{1/p} / (p sin(π/p))`.
pub fn pi_p(p: f64) -> f64 {
    2.0 * PI * (p - 1.0).powf(1.0 / p) / (p * (PI / p).sin())
}

/// First eigenvalue `(π_p/L)^p` of the 1D p-Laplacian on an interval of
/// length `L`. The `(p-1)` factor already lives inside `π_p`.
pub fn analytic_lambda1_1d(p: f64, length: f64) -> f64 {
    (pi_p(p) / length).powf(p)
}

pub fn rayleigh_quotient(u: &FeFunction, p: f64) -> f64 {
    grad_power_integral(u, p) / power_integral(u, p)
}

#[derive(Debug, Clone)]
pub struct RayleighResult {
    pub quotient: f64,
    pub eigenfunction: FeFunction,
    pub iterations: usize,
    pub converged: bool,
}

/// Discrete minimum of `∫|∇u|^p / ∫|u|^p` over the space by nonlinear
/// inverse iteration: solve `-Δ_p w = |u|^{p-2}u`, normalize, repeat until
/// the quotient stagnates to relative `tol`.
pub fn discrete_rayleigh(space: &Arc<FeSpace>, p: f64, tol: f64, max_iter: usize) -> RayleighResult {
    let (lo, hi) = space.mesh().domain().bounds();
    let dim = space.mesh().dim();
    let mut u = FeFunction::interpolate(space, |x| {
        (0..dim).map(|d| (PI * (x[d] - lo[d]) / (hi[d] - lo[d])).sin()).product()
    });
    normalize_lp(&mut u, p);
    let mut quotient = rayleigh_quotient(&u, p);
    for it in 1..=max_iter {
        let load = weighted_power_vector(&u, p);
        let w = solve_p_poisson(space, p, &load, &u);
        let mut next = w;
        normalize_lp(&mut next, p);
        let q_next = rayleigh_quotient(&next, p);
        let change = (quotient - q_next).abs();
        u = next;
        quotient = q_next;
        if change <= tol * quotient {
            return RayleighResult { quotient, eigenfunction: u, iterations: it, converged: true };
        }
    }
    RayleighResult { quotient, eigenfunction: u, iterations: max_iter, converged: false }
}

fn normalize_lp(u: &mut FeFunction, p: f64) {
    let n = lr_norm(u, p);
    if n > 0.0 {
        for c in u.coefficients_mut() {
            *c /= n;
        }
    }
}

/// `b_i = ∫ |u|^{p-2} u φ_i` by quadrature.
fn weighted_power_vector(u: &FeFunction, p: f64) -> Vec<f64> {
    let space = u.space();
    let mesh = space.mesh();
    let quad = space.quadrature();
    let nodal = u.nodal_values();
    let mut b = vec![0.0; space.dim()];
    for k in 0..mesh.num_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_measure(k) / quad.reference_measure();
        for (bary, w) in quad.points().iter().zip(quad.weights()) {
            let uq: f64 = cell.iter().enumerate().map(|(l, &v)| bary[l] * nodal[v]).sum();
            let val = if uq == 0.0 { 0.0 } else { uq.abs().powf(p - 2.0) * uq };
            for (l, &v) in cell.iter().enumerate() {
                if let Some(i) = space.vertex_dof(v) {
                    b[i] += w * scale * val * bary[l];
                }
            }
        }
    }
    b
}

/// Minimize `(1/p)∫|∇w|^p - b·w` by damped Newton, starting from the best
/// multiple of `start`.
fn solve_p_poisson(space: &Arc<FeSpace>, p: f64, b: &[f64], start: &FeFunction) -> FeFunction {
    let mesh = space.mesh();
    let energy = |w: &FeFunction| grad_power_integral(w, p) / p - dot_vec(b, w.coefficients());
    let a = grad_power_integral(start, p);
    let bu = dot_vec(b, start.coefficients());
    let mut w = if a > 0.0 && bu > 0.0 { start.scaled((bu / a).powf(1.0 / (p - 1.0))) } else { start.clone() };
    let bscale = norm_inf(b).max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let nodal = w.nodal_values();
        let mut grad = b.iter().map(|x| -x).collect::<Vec<f64>>();
        let mut trip = Vec::new();
        for k in 0..mesh.num_cells() {
            let cell = mesh.cell(k);
            let gb = mesh.basis_gradients(k);
            let g = space.cell_gradient(&nodal, k);
            let m = mesh.cell_measure(k);
            let fl = flux(p, &g);
            let dfl = flux_derivative(p, &g, DEFAULT_EPSILON);
            for (i, &vi) in cell.iter().enumerate() {
                let Some(r) = space.vertex_dof(vi) else { continue };
                grad[r] += m * dot(&fl, &gb[i]);
                for (j, &vj) in cell.iter().enumerate() {
                    let Some(c) = space.vertex_dof(vj) else { continue };
                    let dj = [dot(&dfl[0], &gb[j]), dot(&dfl[1], &gb[j])];
                    trip.push(Triplet::new(r, c, m * dot(&gb[i], &dj)));
                }
            }
        }
        if norm_inf(&grad) <= 1e-13 * bscale {
            break;
        }
        let neg: Vec<f64> = grad.iter().map(|x| -x).collect();
        let Some(step) = solve_sparse(space.dim(), &trip, &neg) else { break };
        let e0 = energy(&w);
        let slope = dot_vec(&grad, &step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = FeFunction::from_coefficients(
                space,
                w.coefficients().iter().zip(&step).map(|(x, d)| x + t * d).collect(),
            )
            .expect("length matches");
            if energy(&trial) <= e0 + 1e-4 * t * slope {
                w = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    w
}

fn dot_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Analytic value in 1D; in 2D the discrete Rayleigh minimum over `space`
/// times [`LAMBDA1_SAFETY`].
pub fn estimate_lambda1(space: &Arc<FeSpace>, p: f64) -> Lambda1Estimate {
    match *space.mesh().domain() {
        DomainDescriptor::Interval { a, b } => Lambda1Estimate {
            value: analytic_lambda1_1d(p, b - a),
            provenance: Lambda1Provenance::Analytic1d,
            rayleigh: None,
            converged: true,
            iterations: 0,
        },
        DomainDescriptor::Rectangle { .. } => {
            let r = discrete_rayleigh(space, p, 1e-8, 500);
            Lambda1Estimate {
                value: LAMBDA1_SAFETY * r.quotient,
                provenance: Lambda1Provenance::DiscreteRayleigh,
                rayleigh: Some(r.quotient),
                converged: r.converged,
                iterations: r.iterations,
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SobolevEstimate {
    pub value: f64,
    pub provenance: SobolevProvenance,
    pub samples: usize,
}

/// Constant `C_S` with `max|u| ≤ C_S ‖∇u‖_{L^p}`: `(L/2)^{(p-1)/p}` in 1D;
/// in 2D the largest sampled ratio over `samples` random fields on a
/// 32×32-cell reference mesh, times [`SOBOLEV_SAFETY`].
pub fn sobolev_constant(domain: &DomainDescriptor, p: f64, samples: usize, seed: u64) -> Result<SobolevEstimate, SpecError> {
    let dim = domain.dim();
    if !(p > dim as f64) {
        return Err(SpecError::DimensionExponent { dim, p });
    }
    match *domain {
        DomainDescriptor::Interval { a, b } => Ok(SobolevEstimate {
            value: (0.5 * (b - a)).powf((p - 1.0) / p),
            provenance: SobolevProvenance::Analytic1d,
            samples: 0,
        }),
        DomainDescriptor::Rectangle { .. } => {
            let levels = build_hierarchy(*domain, 4, 4)?;
            let space = FeSpace::new(Arc::clone(levels.last().expect("non-empty")));
            let ratio = random_fields(&space, samples, seed)
                .iter()
                .filter_map(|u| {
                    let g = grad_norm_lp(u, p);
                    (g > 0.0).then(|| sup_norm(u) / g)
                })
                .fold(0.0, f64::max);
            Ok(SobolevEstimate { value: SOBOLEV_SAFETY * ratio, provenance: SobolevProvenance::DiscreteSurrogate, samples })
        }
    }
}

/// `ψ(t) = lead·t^p − q_coef·t^q − alpha_coef·t^α − constant`; every weak
/// (and every Galerkin) solution has `ψ(‖∇u‖_p) ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityPolynomial {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub lead: f64,
    pub q_coef: f64,
    pub alpha_coef: f64,
    pub constant: f64,
}

impl CoercivityPolynomial {
    pub fn eval(&self, t: f64) -> f64 {
        self.lead * t.powf(self.p) - self.q_coef * t.powf(self.q) - self.alpha_coef * t.powf(self.alpha) - self.constant
    }

    /// `ψ(t)/t^p`, increasing in `t > 0`.
    fn scaled(&self, t: f64) -> f64 {
        self.lead
            - self.q_coef * t.powf(self.q - self.p)
            - self.alpha_coef * t.powf(self.alpha - self.p)
            - self.constant * t.powf(-self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriRadius {
    pub r1: f64,
    pub r: f64,
    pub psi: CoercivityPolynomial,
}

/// Builds `ψ` for the spec's regime, checking the regime's preconditions.
pub fn coercivity_polynomial(
    spec: &ProblemSpec,
    lambda1: f64,
    convention: PoincareConvention,
) -> Result<CoercivityPolynomial, SpecError> {
    let (p, q) = (spec.p, spec.q);
    let a0 = spec.a0();
    let g = spec.convection.constants.growth;
    let measure = spec.domain.measure();
    let q_coef = measure.powf((p - q) / p);
    let constant = g.c1 * measure;
    match spec.regime {
        Regime::H3 => {
            if !(g.c0 < a0) {
                return Err(SpecError::H3(format!("c_0 = {} must be < a_0 = {a0}", g.c0)));
            }
            if !(g.alpha >= 1.0 && g.alpha < p) {
                return Err(SpecError::H3(format!("alpha = {} must lie in [1, p = {p})", g.alpha)));
            }
            let alpha_coef = g.c1 * measure.powf((p - g.alpha) / p) * convention.factor(lambda1, p, g.alpha);
            Ok(CoercivityPolynomial { p, q, alpha: g.alpha, lead: a0 - g.c0, q_coef, alpha_coef, constant })
        }
        Regime::H3a => {
            check_h3a_gate(spec, lambda1)?;
            let lead = a0 - g.c0 - g.c1 * convention.factor(lambda1, p, p);
            if !(lead > 0.0) {
                return Err(SpecError::H3a(format!(
                    "a_0 - c_0 - c_1·λ_1^(-1) = {lead} is not positive under the standard Poincaré convention"
                )));
            }
            Ok(CoercivityPolynomial { p, q, alpha: p, lead, q_coef, alpha_coef: 0.0, constant })
        }
    }
}

/// `c_1/λ₁^p < a_0 − c_0` and `c_0 < a_0`.
pub fn check_h3a_gate(spec: &ProblemSpec, lambda1: f64) -> Result<(), SpecError> {
    let a0 = spec.a0();
    let g = spec.convection.constants.growth;
    if !(g.c0 < a0) {
        return Err(SpecError::H3a(format!("c_0 = {} must be < a_0 = {a0}", g.c0)));
    }
    let lhs = g.c1 / lambda1.powf(spec.p);
    if !(lhs < a0 - g.c0) {
        return Err(SpecError::H3a(format!("c_1/λ_1^p = {lhs} must be < a_0 - c_0 = {}", a0 - g.c0)));
    }
    Ok(())
}

/// Largest root of `ψ`: bracket by doubling from `t = 1`, then bisect to
/// relative width `1e-12`. Returns the upper bracket end, where `ψ > 0`.
pub fn largest_root(psi: &CoercivityPolynomial) -> f64 {
    let mut hi = 1.0;
    while psi.scaled(hi) <= 0.0 {
        hi *= 2.0;
    }
    let mut lo = hi;
    let mut guard = 0;
    while psi.scaled(lo) > 0.0 {
        lo *= 0.5;
        guard += 1;
        if guard > 2000 {
            return hi;
        }
    }
    for _ in 0..400 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if psi.scaled(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn apriori_radius(
    spec: &ProblemSpec,
    lambda1: f64,
    c_s: f64,
    convention: PoincareConvention,
) -> Result<AprioriRadius, SpecError> {
    let psi = coercivity_polynomial(spec, lambda1, convention)?;
    let r1 = largest_root(&psi);
    Ok(AprioriRadius { r1, r: c_s * r1, psi })
}

/// `C = max(C_S|Ω|^{(r_1-1)/r_1}, b·C_S, c·κ)` with `κ` the Poincaré factor.
pub fn rhs_estimate_constant(spec: &ProblemSpec, lambda1: f64, c_s: f64, convention: PoincareConvention) -> f64 {
    let h2 = spec.convection.constants.h2;
    let measure = spec.domain.measure();
    let first = c_s * measure.powf((h2.r1 - 1.0) / h2.r1);
    let second = h2.b * c_s;
    let third = h2.c * convention.factor(lambda1, spec.p, 1.0);
    first.max(second).max(third)
}

/// `‖σ‖_{L^{r_1}} + ‖u‖_{L^{r_2}}^{r_2} + ‖∇u‖_{L^p}^{p-1}`.
pub fn rhs_bound_factor(spec: &ProblemSpec, u: &FeFunction) -> f64 {
    let h2 = spec.convection.constants.h2;
    let sigma_norm = h2.sigma * spec.domain.measure().powf(1.0 / h2.r1);
    sigma_norm + power_integral(u, h2.r2) + grad_norm_lp(u, spec.p).powf(spec.p - 1.0)
}

/// Box for the pointwise hypothesis audit: `x` ranges over Ω̄.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub s_max: f64,
    pub xi_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub applicable: bool,
    pub passed: bool,
    /// Smallest normalized margin `(rhs - lhs) / (1 + |rhs| + |lhs|)`.
    pub worst_margin: f64,
    /// `(x..., s, ξ...)` where the worst margin occurred.
    pub worst_point: Vec<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisAudit {
    pub checks: Vec<HypothesisCheck>,
    pub samples: usize,
    pub sampling_box: SamplingBox,
}

impl HypothesisAudit {
    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self, name: &str) -> bool {
        self.check(name).is_some_and(|c| c.passed)
    }
}

pub const AUDIT_TOLERANCE: f64 = 1e-9;

struct MarginTracker {
    worst: f64,
    point: Vec<f64>,
}

impl MarginTracker {
    fn new() -> Self {
        MarginTracker { worst: f64::INFINITY, point: Vec::new() }
    }

    fn record(&mut self, rhs: f64, lhs: f64, point: &[f64]) {
        let m = if rhs.is_finite() && lhs.is_finite() {
            (rhs - lhs) / (1.0 + rhs.abs() + lhs.abs())
        } else {
            f64::NEG_INFINITY
        };
        if m < self.worst {
            self.worst = m;
            self.point = point.to_vec();
        }
    }

    fn finish(self, name: &str, structural: Result<(), String>) -> HypothesisCheck {
        let (passed, note, worst) = match structural {
            Ok(()) => (self.worst >= -AUDIT_TOLERANCE, String::new(), self.worst),
            Err(msg) => (false, msg, self.worst.min(-1.0)),
        };
        HypothesisCheck { name: name.into(), applicable: true, passed, worst_margin: worst, worst_point: self.point, note }
    }
}

/// Pointwise check of (H1), (H2), (H3) or (H3a), and (H4) when declared, on
/// `samples` Halton points of `Ω̄ × [-s_max, s_max] × {|ξ| ≤ xi_max}` plus
/// the corners of the box. `lambda1` is needed for the (H3a) gate.
pub fn audit_hypotheses(spec: &ProblemSpec, samples: usize, sbox: SamplingBox, lambda1: Option<f64>) -> HypothesisAudit {
    let dim = spec.dim();
    let p = spec.p;
    let (lo, hi) = spec.domain.bounds();
    let consts = spec.convection.constants;
    let law = &spec.convection.law;
    let a0 = spec.a0();

    let mut points: Vec<([f64; 2], f64, [f64; 2])> = Vec::with_capacity(samples + 64);
    for i in 0..samples as u64 {
        let h = halton(i, 2 * dim + 1);
        let mut x = [0.0; 2];
        for d in 0..dim {
            x[d] = lo[d] + h[d] * (hi[d] - lo[d]);
        }
        let s = sbox.s_max * (2.0 * h[dim] - 1.0);
        let xi = if dim == 1 {
            [sbox.xi_max * (2.0 * h[dim + 1] - 1.0), 0.0]
        } else {
            let (r, th) = (sbox.xi_max * h[dim + 1], 2.0 * PI * h[dim + 2]);
            [r * th.cos(), r * th.sin()]
        };
        points.push((x, s, xi));
    }
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    for s in [-sbox.s_max, -1.0, 0.0, 1.0, sbox.s_max] {
        for r in [0.0, 1.0, sbox.xi_max] {
            points.push((mid, s, [r, 0.0]));
            points.push((mid, s, [-r, 0.0]));
        }
    }

    let pack = |x: &[f64; 2], s: f64, xi: &[f64; 2]| -> Vec<f64> {
        let mut v = x[..dim].to_vec();
        v.push(s);
        v.extend_from_slice(&xi[..dim]);
        v
    };
    let norm = |xi: &[f64; 2]| (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();

    let mut checks = Vec::new();

    let mut h1 = MarginTracker::new();
    for (i, &(_, s, _)) in points.iter().enumerate() {
        let t = if i % 2 == 0 { s } else { -s };
        h1.record(spec.weight.eval(t), a0, &[t]);
    }
    checks.push(h1.finish("H1", if a0 > 0.0 { Ok(()) } else { Err(format!("a_0 = {a0} is not positive")) }));

    let h2c = consts.h2;
    let mut h2 = MarginTracker::new();
    for (x, s, xi) in &points {
        let f = law.eval(x, *s, xi);
        let rhs = h2c.sigma + h2c.b * s.abs().powf(h2c.r2) + h2c.c * norm(xi).powf(p - 1.0);
        h2.record(rhs, f.abs(), &pack(x, *s, xi));
    }
    let h2_struct = if h2c.r1 >= 1.0 && h2c.r2 >= 1.0 && h2c.sigma >= 0.0 && h2c.b >= 0.0 && h2c.c >= 0.0 {
        Ok(())
    } else {
        Err("requires σ, b, c ≥ 0 and r_1, r_2 ≥ 1".to_string())
    };
    checks.push(h2.finish("H2", h2_struct));

    let g = consts.growth;
    let growth_name = match spec.regime {
        Regime::H3 => "H3",
        Regime::H3a => "H3a",
    };
    let exponent = match spec.regime {
        Regime::H3 => g.alpha,
        Regime::H3a => p,
    };
    let mut h3 = MarginTracker::new();
    for (x, s, xi) in &points {
        let f = law.eval(x, *s, xi);
        let rhs = g.c0 * norm(xi).powf(p) + g.c1 * (s.abs().powf(exponent) + 1.0);
        h3.record(rhs, f * s, &pack(x, *s, xi));
    }
    let growth_struct = match spec.regime {
        Regime::H3 => {
            if !(g.c0 < a0) {
                Err(format!("c_0 = {} is not < a_0 = {a0}", g.c0))
            } else if !(g.alpha >= 1.0 && g.alpha < p) {
                Err(format!("alpha = {} is outside [1, p)", g.alpha))
            } else {
                Ok(())
            }
        }
        Regime::H3a => match lambda1 {
            Some(l) => check_h3a_gate(spec, l).map_err(|e| e.to_string()),
            None => Err("λ_1 not supplied".to_string()),
        },
    };
    checks.push(h3.finish(growth_name, growth_struct));

    match consts.h4 {
        Some(h4c) => {
            let e_xi = h4c.gradient_exponent(p);
            let mut h4 = MarginTracker::new();
            for (x, s, xi) in &points {
                let f = law.eval(x, *s, xi);
                let rhs = h4c.sigma + h4c.c1 * s.abs().powf(h4c.s_exponent) + h4c.c2 * norm(xi).powf(e_xi);
                h4.record(rhs, f.abs(), &pack(x, *s, xi));
            }
            let st = if h4c.r2 >= 1.0 && h4c.r2 < p && h4c.c1 >= 0.0 && h4c.c2 >= 0.0 && h4c.sigma >= 0.0 {
                Ok(())
            } else {
                Err("requires c_1, c_2, σ ≥ 0 and r_2 ∈ [1, p)".to_string())
            };
            checks.push(h4.finish("H4", st));
        }
        None => checks.push(HypothesisCheck {
            name: "H4".into(),
            applicable: false,
            passed: false,
            worst_margin: 0.0,
            worst_point: Vec::new(),
            note: "no (H4) constants declared".into(),
        }),
    }

    HypothesisAudit { checks, samples: points.len(), sampling_box: sbox }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub convention: PoincareConvention,
    pub sobolev_samples: usize,
    pub audit_samples: usize,
    pub xi_max: f64,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig { convention: PoincareConvention::Standard, sobolev_samples: 1000, audit_samples: 10_000, xi_max: 100.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub lambda1: f64,
    pub lambda1_provenance: Lambda1Provenance,
    pub lambda1_rayleigh: Option<f64>,
    pub lambda1_converged: bool,
    pub sobolev_constant: f64,
    pub sobolev_provenance: SobolevProvenance,
    pub rhs_constant: f64,
    pub radius_r1: f64,
    pub radius_r: f64,
    pub regime: Regime,
    pub poincare_convention: PoincareConvention,
    pub psi: CoercivityPolynomial,
    /// `ψ(R₁(1 - 10⁻⁶))` and `ψ(R₁(1 + 10⁻⁶))`.
    pub root_bracket: [f64; 2],
    pub audit: HypothesisAudit,
}

/// Everything the solver needs before the first Galerkin level. `space` is
/// used for the 2D eigenvalue estimate.
pub fn compute_estimates(spec: &ProblemSpec, space: &Arc<FeSpace>, cfg: &EstimateConfig) -> Result<EstimateReport, SpecError> {
    spec.validate()?;
    let l1 = estimate_lambda1(space, spec.p);
    let cs = sobolev_constant(&spec.domain, spec.p, cfg.sobolev_samples, cfg.seed)?;
    let radius = apriori_radius(spec, l1.value, cs.value, cfg.convention)?;
    let rhs = rhs_estimate_constant(spec, l1.value, cs.value, cfg.convention);
    let delta = 1e-6 * radius.r1;
    let root_bracket = [radius.psi.eval(radius.r1 - delta), radius.psi.eval(radius.r1 + delta)];
    let sbox = SamplingBox { s_max: 10.0 * radius.r, xi_max: cfg.xi_max };
    let audit = audit_hypotheses(spec, cfg.audit_samples, sbox, Some(l1.value));
    Ok(EstimateReport {
        lambda1: l1.value,
        lambda1_provenance: l1.provenance,
        lambda1_rayleigh: l1.rayleigh,
        lambda1_converged: l1.converged,
        sobolev_constant: cs.value,
        sobolev_provenance: cs.provenance,
        rhs_constant: rhs,
        radius_r1: radius.r1,
        radius_r: radius.r,
        regime: spec.regime,
        poincare_convention: cfg.convention,
        psi: radius.psi,
        root_bracket,
        audit,
    })
}

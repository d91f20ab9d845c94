//! Weights, convection laws and the assembled competing / cooperative
//! (p,q)-Laplacian operators.
//!
//! Every residual is split into three nonnegative-sense pieces per basis
//! function `φ_i`:
//!
//! * `p_term_i = ∫ g(u) |∇u|^{p-2} ∇u·∇φ_i`
//! * `q_term_i = ∫ |∇u|^{q-2} ∇u·∇φ_i`
//! * `convection_i = ∫ f(x, u, ∇u) φ_i`
//!
//! The competing operator is `p_term - q_term - convection`, the cooperative
//! one `p_term + q_term - convection`.

use std::fmt::Debug;
use std::sync::Arc;

use faer::sparse::Triplet;
use serde::{Deserialize, Serialize};

use crate::error::{OperatorError, SpaceError, SpecError};
use crate::fespace::{DualVector, FeFunction, FeSpace};
use crate::mesh::DomainDescriptor;

/// Default gradient regularization used in Jacobians.
pub const DEFAULT_EPSILON: f64 = 1e-10;

pub trait WeightFunction: Send + Sync + Debug {
    fn eval(&self, t: f64) -> f64;

    fn derivative(&self, t: f64) -> f64 {
        let h = 1e-6 * (1.0 + t.abs());
        (self.eval(t + h) - self.eval(t - h)) / (2.0 * h)
    }

    /// The constant `a_0 > 0` with `g ≥ a_0`.
    fn lower_bound(&self) -> f64;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantWeight(pub f64);

impl WeightFunction for ConstantWeight {
    fn eval(&self, _t: f64) -> f64 {
        self.0
    }
    fn derivative(&self, _t: f64) -> f64 {
        0.0
    }
    fn lower_bound(&self) -> f64 {
        self.0
    }
    fn describe(&self) -> String {
        format!("constant({})", self.0)
    }
}

/// `g(t) = a_0 + k t²` with `k ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticWeight {
    pub a0: f64,
    pub k: f64,
}

impl WeightFunction for QuadraticWeight {
    fn eval(&self, t: f64) -> f64 {
        self.a0 + self.k * t * t
    }
    fn derivative(&self, t: f64) -> f64 {
        2.0 * self.k * t
    }
    fn lower_bound(&self) -> f64 {
        self.a0
    }
    fn describe(&self) -> String {
        format!("quadratic(a0={}, k={})", self.a0, self.k)
    }
}

/// `g_R(t) = g(clamp(t, -R, R))`.
#[derive(Debug, Clone)]
pub struct TruncatedWeight {
    base: Arc<dyn WeightFunction>,
    radius: f64,
}

impl TruncatedWeight {
    pub fn base(&self) -> &Arc<dyn WeightFunction> {
        &self.base
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Upper bound `max_{[-R,R]} g`, by sampling.
    pub fn sampled_max(&self) -> f64 {
        (0..=2000)
            .map(|i| self.base.eval(-self.radius + 2.0 * self.radius * i as f64 / 2000.0))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl WeightFunction for TruncatedWeight {
    fn eval(&self, t: f64) -> f64 {
        self.base.eval(t.clamp(-self.radius, self.radius))
    }
    fn derivative(&self, t: f64) -> f64 {
        if t.abs() >= self.radius {
            0.0
        } else {
            self.base.derivative(t)
        }
    }
    fn lower_bound(&self) -> f64 {
        self.base.lower_bound()
    }
    fn describe(&self) -> String {
        format!("truncated({}, R={})", self.base.describe(), self.radius)
    }
}

pub fn truncate_weight(g: Arc<dyn WeightFunction>, radius: f64) -> Result<TruncatedWeight, OperatorError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(OperatorError::BadRadius(radius));
    }
    Ok(TruncatedWeight { base: g, radius })
}

/// A Carathéodory convection law `f(x, s, ξ)`. Gradients are padded to two
/// components; in one dimension `ξ[1] = 0`.
pub trait ConvectionLaw: Send + Sync + Debug {
    fn eval(&self, x: &[f64; 2], s: f64, xi: &[f64; 2]) -> f64;

    /// `(∂f/∂s, ∂f/∂ξ)`.
    fn partials(&self, x: &[f64; 2], s: f64, xi: &[f64; 2]) -> (f64, [f64; 2]) {
        let hs = 1e-6 * (1.0 + s.abs());
        let ds = (self.eval(x, s + hs, xi) - self.eval(x, s - hs, xi)) / (2.0 * hs);
        let mut dxi = [0.0; 2];
        for d in 0..2 {
            let h = 1e-6 * (1.0 + xi[d].abs());
            let (mut a, mut b) = (*xi, *xi);
            a[d] += h;
            b[d] -= h;
            dxi[d] = (self.eval(x, s, &a) - self.eval(x, s, &b)) / (2.0 * h);
        }
        (ds, dxi)
    }

    fn name(&self) -> String;
}

fn norm2(v: &[f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroLaw;

impl ConvectionLaw for ZeroLaw {
    fn eval(&self, _x: &[f64; 2], _s: f64, _xi: &[f64; 2]) -> f64 {
        0.0
    }
    fn partials(&self, _x: &[f64; 2], _s: f64, _xi: &[f64; 2]) -> (f64, [f64; 2]) {
        (0.0, [0.0; 2])
    }
    fn name(&self) -> String {
        "zero".into()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantLaw(pub f64);

impl ConvectionLaw for ConstantLaw {
    fn eval(&self, _x: &[f64; 2], _s: f64, _xi: &[f64; 2]) -> f64 {
        self.0
    }
    fn partials(&self, _x: &[f64; 2], _s: f64, _xi: &[f64; 2]) -> (f64, [f64; 2]) {
        (0.0, [0.0; 2])
    }
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }
}

/// `f(x,s,ξ) = |s|^{α-2}s + s/(1+s²)(|ξ|^{p-1} + h) + source`.
#[derive(Debug, Clone, Copy)]
pub struct ModelLaw {
    pub alpha: f64,
    pub h: f64,
    pub p: f64,
    pub source: f64,
}

impl ConvectionLaw for ModelLaw {
    fn eval(&self, _x: &[f64; 2], s: f64, xi: &[f64; 2]) -> f64 {
        let power = if s == 0.0 { 0.0 } else { s.abs().powf(self.alpha - 2.0) * s };
        power + s / (1.0 + s * s) * (norm2(xi).powf(self.p - 1.0) + self.h) + self.source
    }

    fn partials(&self, _x: &[f64; 2], s: f64, xi: &[f64; 2]) -> (f64, [f64; 2]) {
        let n = norm2(xi);
        let ds_power = if s == 0.0 {
            if self.alpha == 2.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (self.alpha - 1.0) * s.abs().powf(self.alpha - 2.0)
        };
        let s2 = 1.0 + s * s;
        let ds = ds_power + (1.0 - s * s) / (s2 * s2) * (n.powf(self.p - 1.0) + self.h);
        let factor = if n == 0.0 { 0.0 } else { s / s2 * (self.p - 1.0) * n.powf(self.p - 3.0) };
        (ds, [factor * xi[0], factor * xi[1]])
    }

    fn name(&self) -> String {
        format!("model(alpha={}, h={}, source={})", self.alpha, self.h, self.source)
    }
}

/// `f(x,s,ξ) = 2 a_0 |ξ|^p / (1+|s|) sign(s)`, built to break the (H3) growth bound.
#[derive(Debug, Clone, Copy)]
pub struct AdversarialLaw {
    pub a0: f64,
    pub p: f64,
}

impl ConvectionLaw for AdversarialLaw {
    fn eval(&self, _x: &[f64; 2], s: f64, xi: &[f64; 2]) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        2.0 * self.a0 * norm2(xi).powf(self.p) / (1.0 + s.abs()) * s.signum()
    }
    fn name(&self) -> String {
        format!("adversarial(a0={})", self.a0)
    }
}

/// (H2): `|f| ≤ σ + b|s|^{r_2} + c|ξ|^{p-1}` with constant σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct H2Constants {
    pub sigma: f64,
    pub b: f64,
    pub c: f64,
    pub r1: f64,
    pub r2: f64,
}

/// (H3) / (H3a): `f s ≤ c_0|ξ|^p + c_1(|s|^α + 1)`; (H3a) is the case α = p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthConstants {
    pub c0: f64,
    pub c1: f64,
    pub alpha: f64,
}

/// (H4): `|f| ≤ σ + c_1|s|^{e_s} + c_2|ξ|^{p/r_2'}` with `r_2 ∈ [1, p)`.
/// `s_exponent` stands for `p*/r_1'`, unconstrained since `N < p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct H4Constants {
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub s_exponent: f64,
    pub r2: f64,
}

impl H4Constants {
    /// `p / r_2'`, zero when `r_2 = 1`.
    pub fn gradient_exponent(&self, p: f64) -> f64 {
        if self.r2 <= 1.0 {
            0.0
        } else {
            p * (self.r2 - 1.0) / self.r2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredConstants {
    pub h2: H2Constants,
    pub growth: GrowthConstants,
    pub h4: Option<H4Constants>,
}

/// A convection law together with the hypothesis constants it claims.
#[derive(Debug, Clone)]
pub struct ConvectionFamily {
    pub law: Arc<dyn ConvectionLaw>,
    pub constants: DeclaredConstants,
}

impl ConvectionFamily {
    pub fn zero() -> ConvectionFamily {
        ConvectionFamily {
            law: Arc::new(ZeroLaw),
            constants: DeclaredConstants {
                h2: H2Constants { sigma: 0.0, b: 0.0, c: 0.0, r1: 1.0, r2: 1.0 },
                growth: GrowthConstants { c0: 0.0, c1: 0.0, alpha: 1.0 },
                h4: Some(H4Constants { sigma: 0.0, c1: 0.0, c2: 0.0, s_exponent: 1.0, r2: 1.0 }),
            },
        }
    }

    pub fn constant(value: f64) -> ConvectionFamily {
        let a = value.abs();
        ConvectionFamily {
            law: Arc::new(ConstantLaw(value)),
            constants: DeclaredConstants {
                h2: H2Constants { sigma: a, b: 0.0, c: 0.0, r1: 1.0, r2: 1.0 },
                growth: GrowthConstants { c0: 0.0, c1: a, alpha: 1.0 },
                h4: Some(H4Constants { sigma: a, c1: 0.0, c2: 0.0, s_exponent: 1.0, r2: 1.0 }),
            },
        }
    }

    /// The model convection with constant `h`, an optional constant `source`
    /// and the (H3) splitting constant `c0 ∈ (0, 1)`.
    ///
    /// Constants: `s²/(1+s²) ≤ 1` and Young's inequality
    /// `t^{p-1} ≤ c_0 t^p + K`, `K = t*^{p-1}/p`, `t* = (p-1)/(c_0 p)`, give
    /// `f s ≤ c_0|ξ|^p + c_1(|s|^α + 1)` with
    /// `c_1 = max(1 + |source|, K + |h| + |source|)`.
    pub fn model(alpha: f64, h: f64, p: f64, c0: f64, source: f64) -> Result<ConvectionFamily, SpecError> {
        if !(alpha >= 1.0 && alpha <= p) {
            return Err(SpecError::Parameter(format!("alpha = {alpha} must lie in [1, p]")));
        }
        if !(c0 > 0.0) {
            return Err(SpecError::Parameter(format!("c0 = {c0} must be positive")));
        }
        let t_star = (p - 1.0) / (c0 * p);
        let young = t_star.powf(p - 1.0) / p;
        let c1 = (1.0 + source.abs()).max(young + h.abs() + source.abs());
        let h2 = if alpha >= 2.0 {
            H2Constants { sigma: 0.5 * h.abs() + source.abs(), b: 1.0, c: 0.5, r1: 1.0, r2: alpha - 1.0 }
        } else {
            H2Constants { sigma: 1.0 + 0.5 * h.abs() + source.abs(), b: 1.0, c: 0.5, r1: 1.0, r2: 1.0 }
        };
        Ok(ConvectionFamily {
            law: Arc::new(ModelLaw { alpha, h, p, source }),
            constants: DeclaredConstants { h2, growth: GrowthConstants { c0, c1, alpha }, h4: None },
        })
    }

    /// Deliberately (H3)-violating law; declares the constants it cannot meet.
    pub fn adversarial(a0: f64, p: f64) -> ConvectionFamily {
        ConvectionFamily {
            law: Arc::new(AdversarialLaw { a0, p }),
            constants: DeclaredConstants {
                h2: H2Constants { sigma: 0.0, b: 0.0, c: 2.0 * a0, r1: 1.0, r2: 1.0 },
                growth: GrowthConstants { c0: 0.5 * a0, c1: 1.0, alpha: 1.0 },
                h4: None,
            },
        }
    }

    pub fn with_constants(mut self, constants: DeclaredConstants) -> ConvectionFamily {
        self.constants = constants;
        self
    }
}

pub fn eval_convection(family: &ConvectionFamily, x: &[f64; 2], s: f64, xi: &[f64; 2]) -> f64 {
    family.law.eval(x, s, xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `-div(g|∇u|^{p-2}∇u) + div(|∇u|^{q-2}∇u) = f`
    Competing,
    /// `-div(g|∇u|^{p-2}∇u + |∇u|^{q-2}∇u) = f`
    Cooperative,
}

impl Variant {
    /// Coefficient of the q-term in the residual.
    pub fn q_sign(self) -> f64 {
        match self {
            Variant::Competing => -1.0,
            Variant::Cooperative => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    H3,
    H3a,
}

/// Full problem statement.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub p: f64,
    pub q: f64,
    pub domain: DomainDescriptor,
    pub weight: Arc<dyn WeightFunction>,
    pub convection: ConvectionFamily,
    pub variant: Variant,
    pub regime: Regime,
}

impl ProblemSpec {
    /// Checks everything that does not need `λ₁`; (H3a)'s eigenvalue
    /// condition is checked by the estimates module.
    pub fn validate(&self) -> Result<(), SpecError> {
        let (p, q) = (self.p, self.q);
        if !(p.is_finite() && q.is_finite() && p > q && q > 1.0) {
            return Err(SpecError::Exponents { p, q });
        }
        self.domain.validate()?;
        let dim = self.domain.dim();
        if !(p > dim as f64) {
            return Err(SpecError::DimensionExponent { dim, p });
        }
        let a0 = self.weight.lower_bound();
        if !(a0 > 0.0) {
            return Err(SpecError::H1(a0));
        }
        let g = self.convection.constants.growth;
        match self.regime {
            Regime::H3 => {
                if !(g.c0 < a0) {
                    return Err(SpecError::H3(format!("c_0 = {} must be < a_0 = {a0}", g.c0)));
                }
                if !(g.alpha >= 1.0 && g.alpha < p) {
                    return Err(SpecError::H3(format!("alpha = {} must lie in [1, p)", g.alpha)));
                }
            }
            Regime::H3a => {
                if !(g.c0 < a0) {
                    return Err(SpecError::H3a(format!("c_0 = {} must be < a_0 = {a0}", g.c0)));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn p_conjugate(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn q_conjugate(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    pub fn a0(&self) -> f64 {
        self.weight.lower_bound()
    }
}

/// Which weight the operator uses.
#[derive(Debug, Clone)]
pub enum WeightMode {
    /// `g_R`, the default for every solve.
    Truncated(TruncatedWeight),
    /// The raw weight `g` of the untruncated operator `A`.
    Raw,
}

/// The three residual pieces of one state.
#[derive(Debug, Clone)]
pub struct ResidualParts {
    pub p_term: DualVector,
    pub q_term: DualVector,
    pub convection: DualVector,
}

/// Assembled operator `A_R` (or `A`) of one problem on one space, optionally
/// deformed by a load factor and a q-term coefficient for continuation.
#[derive(Debug, Clone)]
pub struct FeOperator {
    spec: Arc<ProblemSpec>,
    space: Arc<FeSpace>,
    weight: Arc<dyn WeightFunction>,
    q_coefficient: f64,
    load: f64,
    epsilon: f64,
}

/// `|ξ|^{e-2} ξ`, zero at `ξ = 0`.
pub(crate) fn flux(e: f64, g: &[f64; 2]) -> [f64; 2] {
    let n = norm2(g);
    if n == 0.0 {
        return [0.0; 2];
    }
    let s = n.powf(e - 2.0);
    [s * g[0], s * g[1]]
}

/// Derivative of `ξ ↦ |ξ|^{e-2} ξ`, regularized by `ε` on flat cells.
pub(crate) fn flux_derivative(e: f64, g: &[f64; 2], eps: f64) -> [[f64; 2]; 2] {
    let n = norm2(g);
    let m = if n < eps { (n * n + eps * eps).sqrt() } else { n };
    let a = m.powf(e - 2.0);
    let b = (e - 2.0) * m.powf(e - 4.0);
    [
        [a + b * g[0] * g[0], b * g[0] * g[1]],
        [b * g[1] * g[0], a + b * g[1] * g[1]],
    ]
}

pub(crate) fn dot(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl FeOperator {
    pub fn new(spec: Arc<ProblemSpec>, space: Arc<FeSpace>, mode: WeightMode) -> FeOperator {
        let weight: Arc<dyn WeightFunction> = match mode {
            WeightMode::Truncated(w) => Arc::new(w),
            WeightMode::Raw => Arc::clone(&spec.weight),
        };
        let q_coefficient = spec.variant.q_sign();
        FeOperator { spec, space, weight, q_coefficient, load: 1.0, epsilon: DEFAULT_EPSILON }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> FeOperator {
        self.epsilon = epsilon;
        self
    }

    /// Scale the convection by `load` and blend the q-term coefficient from
    /// the cooperative `+1` (`blend = 0`) to the variant's own sign (`blend = 1`).
    pub fn deformed(&self, load: f64, blend: f64) -> FeOperator {
        let target = self.spec.variant.q_sign();
        FeOperator { load, q_coefficient: (1.0 - blend) + blend * target, ..self.clone() }
    }

    pub fn spec(&self) -> &Arc<ProblemSpec> {
        &self.spec
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn weight(&self) -> &Arc<dyn WeightFunction> {
        &self.weight
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The same operator on another space of the hierarchy.
    pub fn on_space(&self, space: Arc<FeSpace>) -> FeOperator {
        FeOperator { space, ..self.clone() }
    }

    fn check_space(&self, u: &FeFunction) -> Result<(), SpaceError> {
        if self.space.same_as(u.space()) {
            Ok(())
        } else {
            Err(SpaceError::SpaceMismatch)
        }
    }

    /// Cellwise evaluation of the three residual pieces.
    pub fn parts(&self, u: &FeFunction) -> Result<ResidualParts, OperatorError> {
        self.check_space(u)?;
        let space = &self.space;
        let mesh = space.mesh();
        let quad = space.quadrature();
        let nodal = u.nodal_values();
        let (p, q) = (self.spec.p, self.spec.q);
        let law = &self.spec.convection.law;
        let n = space.dim();
        let (mut pt, mut qt, mut ct) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for k in 0..mesh.num_cells() {
            let cell = mesh.cell(k);
            let grads = mesh.basis_gradients(k);
            let grad = space.cell_gradient(&nodal, k);
            let measure = mesh.cell_measure(k);
            let scale = measure / quad.reference_measure();
            let (fp, fq) = (flux(p, &grad), flux(q, &grad));
            let mut weight_integral = 0.0;
            let mut load = [0.0; 3];
            for (bary, w) in quad.points().iter().zip(quad.weights()) {
                let uq: f64 = cell.iter().enumerate().map(|(l, &v)| bary[l] * nodal[v]).sum();
                let x = mesh.map_point(k, bary);
                weight_integral += w * scale * self.weight.eval(uq);
                let fv = law.eval(&x, uq, &grad);
                for l in 0..cell.len() {
                    load[l] += w * scale * fv * bary[l];
                }
            }
            for (l, &v) in cell.iter().enumerate() {
                let Some(i) = space.vertex_dof(v) else { continue };
                let a = weight_integral * dot(&fp, &grads[l]);
                let b = measure * dot(&fq, &grads[l]);
                let c = load[l];
                if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                    return Err(OperatorError::NonFinite { cell: k });
                }
                pt[i] += a;
                qt[i] += b;
                ct[i] += c;
            }
        }
        Ok(ResidualParts {
            p_term: DualVector::from_values(space, pt)?,
            q_term: DualVector::from_values(space, qt)?,
            convection: DualVector::from_values(space, ct)?,
        })
    }

    fn combine_parts(&self, parts: &ResidualParts) -> Vec<f64> {
        let (a, b, c) = (parts.p_term.values(), parts.q_term.values(), parts.convection.values());
        (0..a.len()).map(|i| a[i] + self.q_coefficient * b[i] - self.load * c[i]).collect()
    }

    /// Residual vector `F_i = ⟨A(u), φ_i⟩`.
    pub fn residual(&self, u: &FeFunction) -> Result<DualVector, OperatorError> {
        let parts = self.parts(u)?;
        Ok(DualVector::from_values(&self.space, self.combine_parts(&parts))?)
    }

    /// `(principal, lower)` with residual `= principal - lower`: competing
    /// puts the q-term in `lower`, cooperative in `principal`.
    pub fn split(&self, u: &FeFunction) -> Result<(DualVector, DualVector), OperatorError> {
        let parts = self.parts(u)?;
        let (a, b, c) = (parts.p_term.values(), parts.q_term.values(), parts.convection.values());
        let n = a.len();
        let (principal, lower): (Vec<f64>, Vec<f64>) = if self.q_coefficient < 0.0 {
            (
                a.to_vec(),
                (0..n).map(|i| -self.q_coefficient * b[i] + self.load * c[i]).collect(),
            )
        } else {
            (
                (0..n).map(|i| a[i] + self.q_coefficient * b[i]).collect(),
                (0..n).map(|i| self.load * c[i]).collect(),
            )
        };
        Ok((DualVector::from_values(&self.space, principal)?, DualVector::from_values(&self.space, lower)?))
    }

    /// Direct evaluation of `⟨A(u), v⟩` without forming the residual vector.
    pub fn pairing(&self, u: &FeFunction, v: &FeFunction) -> Result<f64, OperatorError> {
        let (a, b, c) = self.pairing_parts(u, v)?;
        Ok(a + self.q_coefficient * b - self.load * c)
    }

    /// `(∫ g(u)|∇u|^{p-2}∇u·∇v, ∫ |∇u|^{q-2}∇u·∇v, ∫ f(x,u,∇u) v)`.
    pub fn pairing_parts(&self, u: &FeFunction, v: &FeFunction) -> Result<(f64, f64, f64), OperatorError> {
        self.check_space(u)?;
        self.check_space(v)?;
        let space = &self.space;
        let mesh = space.mesh();
        let quad = space.quadrature();
        let (un, vn) = (u.nodal_values(), v.nodal_values());
        let (p, q) = (self.spec.p, self.spec.q);
        let law = &self.spec.convection.law;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for k in 0..mesh.num_cells() {
            let cell = mesh.cell(k);
            let gu = space.cell_gradient(&un, k);
            let gv = space.cell_gradient(&vn, k);
            let measure = mesh.cell_measure(k);
            let scale = measure / quad.reference_measure();
            let mut wi = 0.0;
            let mut ci = 0.0;
            for (bary, w) in quad.points().iter().zip(quad.weights()) {
                let uq: f64 = cell.iter().enumerate().map(|(l, &x)| bary[l] * un[x]).sum();
                let vq: f64 = cell.iter().enumerate().map(|(l, &x)| bary[l] * vn[x]).sum();
                let x = mesh.map_point(k, bary);
                wi += w * scale * self.weight.eval(uq);
                ci += w * scale * law.eval(&x, uq, &gu) * vq;
            }
            let ai = wi * dot(&flux(p, &gu), &gv);
            let bi = measure * dot(&flux(q, &gu), &gv);
            if !(ai.is_finite() && bi.is_finite() && ci.is_finite()) {
                return Err(OperatorError::NonFinite { cell: k });
            }
            a += ai;
            b += bi;
            c += ci;
        }
        Ok((a, b, c))
    }

    /// Jacobian of the residual as sparse triplets `(row, col, value)` over
    /// degrees of freedom, using the ε-regularized flux derivative.
    pub fn jacobian(&self, u: &FeFunction) -> Result<Vec<Triplet<usize, usize, f64>>, OperatorError> {
        self.check_space(u)?;
        let space = &self.space;
        let mesh = space.mesh();
        let quad = space.quadrature();
        let nodal = u.nodal_values();
        let (p, q) = (self.spec.p, self.spec.q);
        let law = &self.spec.convection.law;
        let mut out = Vec::with_capacity(mesh.num_cells() * 9);
        for k in 0..mesh.num_cells() {
            let cell = mesh.cell(k);
            let nl = cell.len();
            let grads = mesh.basis_gradients(k);
            let grad = space.cell_gradient(&nodal, k);
            let measure = mesh.cell_measure(k);
            let scale = measure / quad.reference_measure();
            let fp = flux(p, &grad);
            let dp = flux_derivative(p, &grad, self.epsilon);
            let dq = flux_derivative(q, &grad, self.epsilon);
            let mut weight_integral = 0.0;
            let mut weight_slope = [0.0; 3];
            let mut local = [[0.0; 3]; 3];
            for (bary, w) in quad.points().iter().zip(quad.weights()) {
                let uq: f64 = cell.iter().enumerate().map(|(l, &v)| bary[l] * nodal[v]).sum();
                let x = mesh.map_point(k, bary);
                let ws = w * scale;
                weight_integral += ws * self.weight.eval(uq);
                let dg = self.weight.derivative(uq);
                for j in 0..nl {
                    weight_slope[j] += ws * dg * bary[j];
                }
                let (fs, fxi) = law.partials(&x, uq, &grad);
                for i in 0..nl {
                    for j in 0..nl {
                        local[i][j] -= self.load * ws * (fs * bary[j] + dot(&fxi, &grads[j])) * bary[i];
                    }
                }
            }
            for i in 0..nl {
                let fpi = dot(&fp, &grads[i]);
                for j in 0..nl {
                    let dpj = [dot(&dp[0], &grads[j]), dot(&dp[1], &grads[j])];
                    let dqj = [dot(&dq[0], &grads[j]), dot(&dq[1], &grads[j])];
                    local[i][j] += weight_slope[j] * fpi
                        + weight_integral * dot(&grads[i], &dpj)
                        + self.q_coefficient * measure * dot(&grads[i], &dqj);
                }
            }
            for (i, &vi) in cell.iter().enumerate() {
                let Some(r) = space.vertex_dof(vi) else { continue };
                for (j, &vj) in cell.iter().enumerate() {
                    let Some(c) = space.vertex_dof(vj) else { continue };
                    if !local[i][j].is_finite() {
                        return Err(OperatorError::NonFinite { cell: k });
                    }
                    out.push(Triplet::new(r, c, local[i][j]));
                }
            }
        }
        Ok(out)
    }
}

/// `F = ⟨A_R(u), φ_i⟩` for the spec's variant.
pub fn assemble_residual(
    spec: &Arc<ProblemSpec>,
    g_r: &TruncatedWeight,
    u: &FeFunction,
) -> Result<DualVector, OperatorError> {
    FeOperator::new(Arc::clone(spec), Arc::clone(u.space()), WeightMode::Truncated(g_r.clone())).residual(u)
}

/// `⟨A_R(u), v⟩`, or `⟨A(u), v⟩` when `g_r` is `None`.
pub fn pairing_with(
    spec: &Arc<ProblemSpec>,
    g_r: Option<&TruncatedWeight>,
    u: &FeFunction,
    v: &FeFunction,
) -> Result<f64, OperatorError> {
    let mode = g_r.map_or(WeightMode::Raw, |w| WeightMode::Truncated(w.clone()));
    FeOperator::new(Arc::clone(spec), Arc::clone(u.space()), mode).pairing(u, v)
}

/// `(A_R¹(u), A_R²(u))` with `A_R = A_R¹ - A_R²`.
pub fn split_residuals(
    spec: &Arc<ProblemSpec>,
    g_r: &TruncatedWeight,
    u: &FeFunction,
) -> Result<(DualVector, DualVector), OperatorError> {
    FeOperator::new(Arc::clone(spec), Arc::clone(u.space()), WeightMode::Truncated(g_r.clone())).split(u)
}

/// `∫ |∇u|^{e-2} ∇u · ∇w`, the action of `-Δ_e u` on `w`.
pub fn laplacian_pairing(e: f64, u: &FeFunction, w: &FeFunction) -> Result<f64, SpaceError> {
    if !u.space().same_as(w.space()) {
        return Err(SpaceError::SpaceMismatch);
    }
    let space = u.space();
    let mesh = space.mesh();
    let (un, wn) = (u.nodal_values(), w.nodal_values());
    Ok((0..mesh.num_cells())
        .map(|k| {
            let gu = space.cell_gradient(&un, k);
            let gw = space.cell_gradient(&wn, k);
            mesh.cell_measure(k) * dot(&flux(e, &gu), &gw)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, DomainDescriptor};
    use approx::assert_relative_eq;

    fn one_dof_spec(f: ConvectionFamily, variant: Variant) -> (Arc<ProblemSpec>, Arc<FeSpace>) {
        let domain = DomainDescriptor::interval(0.0, 1.0).unwrap();
        let spec = ProblemSpec {
            p: 3.0,
            q: 2.0,
            domain,
            weight: Arc::new(ConstantWeight(1.0)),
            convection: f,
            variant,
            regime: Regime::H3,
        };
        (Arc::new(spec), FeSpace::new(build_mesh(domain, 2).unwrap()))
    }

    fn g_r(spec: &ProblemSpec) -> TruncatedWeight {
        truncate_weight(Arc::clone(&spec.weight), 10.0).unwrap()
    }

    #[test]
    fn truncation_window() {
        let g: Arc<dyn WeightFunction> = Arc::new(QuadraticWeight { a0: 2.0, k: 1.0 });
        let gr = truncate_weight(g, 1.0).unwrap();
        assert_eq!(gr.eval(0.5), 2.25);
        assert_eq!(gr.eval(5.0), 3.0);
        assert_eq!(gr.eval(-5.0), 3.0);
        assert_eq!(gr.sampled_max(), 3.0);
        assert!(truncate_weight(Arc::new(ConstantWeight(1.0)), 0.0).is_err());
        assert!(truncate_weight(Arc::new(ConstantWeight(1.0)), -1.0).is_err());
    }

    #[test]
    fn zero_state_zero_residual() {
        let (spec, space) = one_dof_spec(ConvectionFamily::zero(), Variant::Competing);
        let r = assemble_residual(&spec, &g_r(&spec), &FeFunction::zeros(&space)).unwrap();
        assert_eq!(r.values(), &[0.0]);
    }

    #[test]
    fn one_dof_competing_residual() {
        for (f, load) in [(ConvectionFamily::zero(), 0.0), (ConvectionFamily::constant(1.0), 0.5)] {
            let (spec, space) = one_dof_spec(f, Variant::Competing);
            for t in [0.1, 0.6, 2.0] {
                let u = FeFunction::basis(&space, 0).scaled(t);
                let r = assemble_residual(&spec, &g_r(&spec), &u).unwrap();
                assert_relative_eq!(r.values()[0], 8.0 * t * t - 4.0 * t - load, max_relative = 1e-13);
                let pv = pairing_with(&spec, Some(&g_r(&spec)), &u, &u).unwrap();
                assert_relative_eq!(pv, t * (8.0 * t * t - 4.0 * t - load), max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn one_dof_split() {
        let (spec, space) = one_dof_spec(ConvectionFamily::zero(), Variant::Competing);
        let t = 0.3;
        let u = FeFunction::basis(&space, 0).scaled(t);
        let (a1, a2) = split_residuals(&spec, &g_r(&spec), &u).unwrap();
        assert_relative_eq!(a2.values()[0], 4.0 * t, max_relative = 1e-14);
        assert_relative_eq!(a1.values()[0], 8.0 * t * t, max_relative = 1e-14);
    }

    #[test]
    fn pairing_with_zero_test_function() {
        let (spec, space) = one_dof_spec(ConvectionFamily::constant(1.0), Variant::Competing);
        let u = FeFunction::basis(&space, 0).scaled(0.4);
        assert_eq!(pairing_with(&spec, None, &u, &FeFunction::zeros(&space)).unwrap(), 0.0);
    }

    #[test]
    fn model_law_values() {
        let f = ConvectionFamily::model(2.0, 0.0, 3.0, 0.5, 0.0).unwrap();
        assert_eq!(eval_convection(&f, &[0.3, 0.0], 1.0, &[2.0, 0.0]), 3.0);
        let f = ConvectionFamily::model(2.0, 1.0, 3.0, 0.5, 0.0).unwrap();
        assert_eq!(eval_convection(&f, &[0.3, 0.0], -1.0, &[0.0, 0.0]), -1.5);
        for alpha in [1.0, 1.5, 2.0, 2.9, 3.0] {
            let f = ConvectionFamily::model(alpha, 0.7, 3.0, 0.5, 0.0).unwrap();
            assert_eq!(eval_convection(&f, &[0.1, 0.2], 0.0, &[5.0, -1.0]), 0.0);
        }
        let f = ConvectionFamily::model(2.0, 1.0, 3.0, 0.5, 0.0).unwrap();
        assert_relative_eq!(f.constants.growth.c1, 1.0 + 16.0 / 27.0, max_relative = 1e-14);
    }

    #[test]
    fn analytic_partials_match_differences() {
        let law = ModelLaw { alpha: 2.5, h: 0.3, p: 3.0, source: 0.2 };
        let x = [0.2, 0.0];
        for (s, xi) in [(0.7, [1.3, -0.4]), (-1.9, [0.2, 0.9]), (0.05, [-2.0, 0.0])] {
            let (ds, dxi) = law.partials(&x, s, &xi);
            let h = 1e-6;
            let fd_s = (law.eval(&x, s + h, &xi) - law.eval(&x, s - h, &xi)) / (2.0 * h);
            assert_relative_eq!(ds, fd_s, max_relative = 1e-6);
            for d in 0..2 {
                let (mut a, mut b) = (xi, xi);
                a[d] += h;
                b[d] -= h;
                let fd = (law.eval(&x, s, &a) - law.eval(&x, s, &b)) / (2.0 * h);
                assert_relative_eq!(dxi[d], fd, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let domain = DomainDescriptor::rectangle(0.0, 1.0, 0.0, 1.0).unwrap();
        let spec = Arc::new(ProblemSpec {
            p: 3.0,
            q: 1.5,
            domain,
            weight: Arc::new(QuadraticWeight { a0: 1.0, k: 1.0 }),
            convection: ConvectionFamily::model(2.0, 1.0, 3.0, 0.5, 0.3).unwrap(),
            variant: Variant::Competing,
            regime: Regime::H3,
        });
        let space = FeSpace::new(build_mesh(domain, 4).unwrap());
        let gr = truncate_weight(Arc::clone(&spec.weight), 0.8).unwrap();
        let op = FeOperator::new(spec, Arc::clone(&space), WeightMode::Truncated(gr));
        let u = FeFunction::interpolate(&space, |x| {
            (std::f64::consts::PI * x[0]).sin() * (2.0 * x[1] + 0.3 * x[0]) * (1.0 - x[1])
        });
        let n = space.dim();
        let mut dense = vec![vec![0.0; n]; n];
        for t in op.jacobian(&u).unwrap() {
            dense[t.row][t.col] += t.val;
        }
        let h = 1e-7;
        for j in 0..n {
            let mut up = u.clone();
            up.coefficients_mut()[j] += h;
            let mut um = u.clone();
            um.coefficients_mut()[j] -= h;
            let (rp, rm) = (op.residual(&up).unwrap(), op.residual(&um).unwrap());
            for i in 0..n {
                let fd = (rp.values()[i] - rm.values()[i]) / (2.0 * h);
                assert!((dense[i][j] - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "J[{i}][{j}] {} vs {fd}", dense[i][j]);
            }
        }
    }

    #[test]
    fn variants_differ_by_twice_q_term() {
        let (spec_c, space) = one_dof_spec(ConvectionFamily::constant(0.4), Variant::Competing);
        let mut coop = (*spec_c).clone();
        coop.variant = Variant::Cooperative;
        let coop = Arc::new(coop);
        let u = FeFunction::basis(&space, 0).scaled(0.8);
        let gr = g_r(&spec_c);
        let rc = assemble_residual(&spec_c, &gr, &u).unwrap();
        let rk = assemble_residual(&coop, &gr, &u).unwrap();
        let op = FeOperator::new(spec_c, space, WeightMode::Truncated(gr));
        let q = op.parts(&u).unwrap().q_term;
        assert_relative_eq!(rk.values()[0] - rc.values()[0], 2.0 * q.values()[0], max_relative = 1e-14);
    }

    #[test]
    fn spec_validation() {
        let (spec, _) = one_dof_spec(ConvectionFamily::zero(), Variant::Competing);
        assert!(spec.validate().is_ok());
        let mut bad = (*spec).clone();
        bad.q = 3.5;
        assert!(matches!(bad.validate(), Err(SpecError::Exponents { .. })));
        let mut bad = (*spec).clone();
        bad.domain = DomainDescriptor::rectangle(0.0, 1.0, 0.0, 1.0).unwrap();
        bad.p = 1.8;
        bad.q = 1.2;
        assert!(matches!(bad.validate(), Err(SpecError::DimensionExponent { .. })));
        let mut bad = (*spec).clone();
        bad.convection.constants.growth.c0 = 1.0;
        assert!(matches!(bad.validate(), Err(SpecError::H3(_))));
        assert_relative_eq!(spec.p_conjugate(), 1.5);
        assert_relative_eq!(spec.q_conjugate(), 2.0);
    }
}

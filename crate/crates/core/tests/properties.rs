//! Property tests for the invariants the solver and the estimates rely on.

use std::sync::Arc;

use pqlap_core::estimates::{
    analytic_lambda1_1d, check_h3a_gate, largest_root, rhs_bound_factor, rhs_estimate_constant, sobolev_constant,
    CoercivityPolynomial, PoincareConvention,
};
use pqlap_core::fespace::{grad_norm_lp, lr_norm, pair, prolongate, sup_norm};
use pqlap_core::mesh::{build_hierarchy, build_mesh};
use pqlap_core::operators::{ConstantWeight, GrowthConstants, QuadraticWeight, WeightMode};
use pqlap_core::sampling::random_fields;
use pqlap_core::verify::monotonicity_margin;
use pqlap_core::{
    ConvectionFamily, DomainDescriptor, DualVector, FeFunction, FeOperator, FeSpace, ProblemSpec, QuadratureRule, Regime, Variant,
};
use proptest::prelude::*;

fn interval() -> DomainDescriptor {
    DomainDescriptor::interval(0.0, 1.0).unwrap()
}

fn square() -> DomainDescriptor {
    DomainDescriptor::rectangle(0.0, 1.0, 0.0, 1.0).unwrap()
}

fn space_1d() -> Arc<FeSpace> {
    FeSpace::new(build_mesh(interval(), 16).unwrap())
}

fn space_2d() -> Arc<FeSpace> {
    FeSpace::new(build_mesh(square(), 4).unwrap())
}

fn function(space: &Arc<FeSpace>, c: &[f64]) -> FeFunction {
    FeFunction::from_coefficients(space, c[..space.dim()].to_vec()).unwrap()
}

fn spec(domain: DomainDescriptor, p: f64, q: f64, convection: ConvectionFamily) -> Arc<ProblemSpec> {
    Arc::new(ProblemSpec {
        p,
        q,
        domain,
        weight: Arc::new(QuadraticWeight { a0: 1.0, k: 1.0 }),
        convection,
        variant: Variant::Competing,
        regime: Regime::H3,
    })
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 15)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairing_is_linear_in_the_test_function(
        u in coeffs(), v in coeffs(), w in coeffs(), a in -3.0..3.0f64, b in -3.0..3.0f64, two_d in any::<bool>()
    ) {
        let (space, dom) = if two_d { (space_2d(), square()) } else { (space_1d(), interval()) };
        let s = spec(dom, 3.0, 2.0, ConvectionFamily::model(2.0, 1.0, 3.0, 0.5, 1.0).unwrap());
        let op = FeOperator::new(s, Arc::clone(&space), WeightMode::Raw);
        let (u, v, w) = (function(&space, &u), function(&space, &v), function(&space, &w));
        let lhs = op.pairing(&u, &v.combine(a, &w, b).unwrap()).unwrap();
        let rhs = a * op.pairing(&u, &v).unwrap() + b * op.pairing(&u, &w).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn residual_vector_reproduces_pairing(u in coeffs(), v in coeffs(), two_d in any::<bool>(), cooperative in any::<bool>()) {
        let (space, dom) = if two_d { (space_2d(), square()) } else { (space_1d(), interval()) };
        let mut s = (*spec(dom, 3.0, 2.0, ConvectionFamily::model(2.0, 1.0, 3.0, 0.5, 1.0).unwrap())).clone();
        if cooperative {
            s.variant = Variant::Cooperative;
        }
        let op = FeOperator::new(Arc::new(s), Arc::clone(&space), WeightMode::Raw);
        let (u, v) = (function(&space, &u), function(&space, &v));
        let via_vector = pair(&op.residual(&u).unwrap(), &v).unwrap();
        let direct = op.pairing(&u, &v).unwrap();
        prop_assert!(close(via_vector, direct, 1e-12), "{via_vector} vs {direct}");
    }

    #[test]
    fn dual_pairing_is_bilinear(f in coeffs(), g in coeffs(), v in coeffs(), w in coeffs(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let space = space_1d();
        let n = space.dim();
        let (f, g) = (
            DualVector::from_values(&space, f[..n].to_vec()).unwrap(),
            DualVector::from_values(&space, g[..n].to_vec()).unwrap(),
        );
        let (v, w) = (function(&space, &v), function(&space, &w));
        let lhs = pair(&f, &v.combine(a, &w, b).unwrap()).unwrap();
        prop_assert!(close(lhs, a * pair(&f, &v).unwrap() + b * pair(&f, &w).unwrap(), 1e-13));
        let lhs = pair(&f.combine(a, &g, b).unwrap(), &v).unwrap();
        prop_assert!(close(lhs, a * pair(&f, &v).unwrap() + b * pair(&g, &v).unwrap(), 1e-13));
    }

    #[test]
    fn gradient_norms_obey_hoelder(c in coeffs(), p in 2.1..5.0f64, t in 0.05..0.95f64, two_d in any::<bool>()) {
        let q = 1.0 + t * (p - 1.0);
        let dom = if two_d {
            DomainDescriptor::rectangle(0.0, 3.0, 0.0, 0.5).unwrap()
        } else {
            DomainDescriptor::interval(-1.0, 2.0).unwrap()
        };
        let space = FeSpace::new(build_mesh(dom, 16 / if two_d { 4 } else { 1 }).unwrap());
        let u = function(&space, &c);
        let bound = dom.measure().powf((p - q) / p) * grad_norm_lp(&u, p).powf(q);
        prop_assert!(grad_norm_lp(&u, q).powf(q) <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn prolongation_preserves_the_function(c in coeffs(), two_d in any::<bool>(), p in 1.5..5.0f64) {
        let dom = if two_d { square() } else { interval() };
        let meshes = build_hierarchy(dom, if two_d { 4 } else { 16 }, 3).unwrap();
        let coarse = FeSpace::new(Arc::clone(&meshes[0]));
        let fine = FeSpace::new(Arc::clone(&meshes[2]));
        let u = function(&coarse, &c);
        let v = prolongate(&u, &fine).unwrap();
        prop_assert!(close(grad_norm_lp(&u, p), grad_norm_lp(&v, p), 1e-12));
        prop_assert_eq!(sup_norm(&u), sup_norm(&v));
    }

    #[test]
    fn competing_operator_has_the_coercivity_floor(c in coeffs(), p in 2.2..5.0f64, t in 0.05..0.95f64, two_d in any::<bool>()) {
        let q = 1.0 + t * (p - 1.0);
        let (space, dom) = if two_d { (space_2d(), square()) } else { (space_1d(), interval()) };
        let op = FeOperator::new(spec(dom, p, q, ConvectionFamily::zero()), Arc::clone(&space), WeightMode::Raw);
        let v = function(&space, &c);
        let g = grad_norm_lp(&v, p);
        // g ≥ a₀ = 1 and |Ω| = 1
        let floor = g.powf(p) - g.powf(q);
        let pairing = op.pairing(&v, &v).unwrap();
        prop_assert!(pairing >= floor - 1e-12 * (1.0 + g.powf(p)), "{pairing} < {floor}");
    }

    #[test]
    fn monotonicity_with_two_to_the_minus_exponent(e in 2.0..6.0f64, seed in any::<u64>(), two_d in any::<bool>()) {
        let space = if two_d { space_2d() } else { space_1d() };
        let (worst, violations) = monotonicity_margin(e, &space, 12, seed).unwrap();
        prop_assert_eq!(violations, 0, "worst {}", worst);
    }

    #[test]
    fn poincare_and_embedding_hold_in_one_dimension(c in coeffs(), p in 2.0..6.0f64) {
        let space = space_1d();
        let u = function(&space, &c);
        let g = grad_norm_lp(&u, p);
        let lam = analytic_lambda1_1d(p, 1.0);
        prop_assert!(lr_norm(&u, p) <= lam.powf(-1.0 / p) * g * (1.0 + 1e-12));
        let cs = sobolev_constant(&interval(), p, 0, 0).unwrap().value;
        prop_assert!(sup_norm(&u) <= cs * g * (1.0 + 1e-12));
    }

    #[test]
    fn interval_rule_integrates_cubics(c in prop::collection::vec(-5.0..5.0f64, 4)) {
        let rule = QuadratureRule::gauss_1d(2);
        let exact: f64 = c.iter().enumerate().map(|(k, a)| a / (k as f64 + 1.0)).sum();
        let approx: f64 = rule
            .points()
            .iter()
            .zip(rule.weights())
            .map(|(b, w)| w * c.iter().enumerate().map(|(k, a)| a * b[1].powi(k as i32)).sum::<f64>())
            .sum();
        prop_assert!(close(approx, exact, 1e-13), "{approx} vs {exact}");
    }

    #[test]
    fn triangle_rule_integrates_quartics(c in prop::collection::vec(-5.0..5.0f64, 15)) {
        let rule = QuadratureRule::triangle(4);
        let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
        let monomials: Vec<(usize, usize)> = (0..=4).flat_map(|d| (0..=d).map(move |i| (i, d - i))).collect();
        // ∫_T x^i y^j = i! j! / (i + j + 2)!
        let exact: f64 = monomials.iter().zip(&c).map(|(&(i, j), a)| a * fact(i) * fact(j) / fact(i + j + 2)).sum();
        let approx: f64 = rule
            .points()
            .iter()
            .zip(rule.weights())
            .map(|(b, w)| w * monomials.iter().zip(&c).map(|(&(i, j), a)| a * b[1].powi(i as i32) * b[2].powi(j as i32)).sum::<f64>())
            .sum();
        // tabulated abscissae carry 15 digits
        prop_assert!(close(approx, exact, 1e-12), "{approx} vs {exact}");
    }

    #[test]
    fn largest_root_brackets_the_sign_change(
        p in 2.0..5.0f64, tq in 0.05..0.95f64, ta in 0.0..0.95f64,
        lead in 0.1..2.0f64, q_coef in 0.0..2.0f64, alpha_coef in 0.0..2.0f64, constant in 0.01..2.0f64
    ) {
        let psi = CoercivityPolynomial {
            p, q: 1.0 + tq * (p - 1.0), alpha: 1.0 + ta * (p - 1.0), lead, q_coef, alpha_coef, constant,
        };
        let r = largest_root(&psi);
        prop_assert!(psi.eval(r) >= 0.0);
        prop_assert!(psi.eval(r * (1.0 - 1e-9)) <= 0.0);
        for k in [1.0 + 1e-9, 2.0, 10.0, 1e3] {
            prop_assert!(psi.eval(r * k) > 0.0);
        }
    }

    #[test]
    fn h3a_gate_is_the_strict_inequality(c0 in 0.0..0.99f64, c1 in 0.0..50.0f64, lam in 1.0..30.0f64, p in 2.0..5.0f64) {
        let mut f = ConvectionFamily::zero();
        f.constants.growth = GrowthConstants { c0, c1, alpha: p };
        let s = ProblemSpec {
            p, q: 1.5, domain: interval(), weight: Arc::new(ConstantWeight(1.0)), convection: f,
            variant: Variant::Competing, regime: Regime::H3a,
        };
        prop_assert_eq!(check_h3a_gate(&s, lam).is_ok(), c1 / lam.powf(p) < 1.0 - c0);
    }
}

#[test]
fn rhs_estimate_bounds_random_pairs() {
    let space = FeSpace::new(build_mesh(interval(), 32).unwrap());
    let s = spec(interval(), 3.0, 2.0, ConvectionFamily::model(2.0, 1.0, 3.0, 0.5, 1.0).unwrap());
    let lam = analytic_lambda1_1d(3.0, 1.0);
    let cs = sobolev_constant(&interval(), 3.0, 0, 0).unwrap().value;
    let c = rhs_estimate_constant(&s, lam, cs, PoincareConvention::Standard);
    let op = FeOperator::new(Arc::clone(&s), Arc::clone(&space), WeightMode::Raw);
    let us = random_fields(&space, 500, 5);
    let vs = random_fields(&space, 500, 6);
    let mut worst = 0.0f64;
    for (u, v) in us.iter().zip(&vs) {
        let (_, _, conv) = op.pairing_parts(u, v).unwrap();
        let bound = c * rhs_bound_factor(&s, u) * grad_norm_lp(v, 3.0);
        worst = worst.max(conv.abs() / bound);
    }
    assert!(worst <= 1.0, "worst ratio {worst}");
}

//! Galerkin scheme: a guarded nonlinear solve on each space of a nested
//! hierarchy, and the tables that track the generalized-solution conditions
//! across levels.

use std::collections::BTreeMap;
use std::sync::Arc;

use faer::sparse::Triplet;
use serde::{Deserialize, Serialize};

use crate::error::{OperatorError, SolveError};
use crate::fespace::{grad_norm_lp, pair, prolongate, sup_norm, DualVector, FeFunction, FeSpace};
use crate::linalg::{norm2, norm_inf, solve_sparse, transpose_apply};
use crate::mesh::{build_hierarchy, MeshLevel};
use crate::operators::{truncate_weight, FeOperator, ProblemSpec, WeightMode};
use crate::sampling::random_fields;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorProperties {
    pub bounded: bool,
    pub coercive: bool,
    pub continuous: bool,
}

/// Finite-dimensional operator `E_n → E_n*`, with the right-hand side folded
/// into the residual.
pub trait AbstractOperator: Clone {
    fn space(&self) -> &Arc<FeSpace>;
    fn residual(&self, u: &FeFunction) -> Result<DualVector, OperatorError>;
    fn jacobian(&self, u: &FeFunction) -> Result<Vec<Triplet<usize, usize, f64>>, OperatorError>;
    fn pairing(&self, u: &FeFunction, v: &FeFunction) -> Result<f64, OperatorError>;
    /// Norm of the energy space, `‖∇v‖_{L^p}`.
    fn norm(&self, v: &FeFunction) -> f64;
    fn properties(&self) -> OperatorProperties;
    fn radius_hint(&self) -> Option<f64> {
        None
    }
    /// Member of a homotopy family; `homotopy(1, 1)` is the operator itself
    /// and `homotopy(0, 0)` has the zero solution.
    fn homotopy(&self, load: f64, blend: f64) -> Self;
}

impl AbstractOperator for FeOperator {
    fn space(&self) -> &Arc<FeSpace> {
        FeOperator::space(self)
    }
    fn residual(&self, u: &FeFunction) -> Result<DualVector, OperatorError> {
        FeOperator::residual(self, u)
    }
    fn jacobian(&self, u: &FeFunction) -> Result<Vec<Triplet<usize, usize, f64>>, OperatorError> {
        FeOperator::jacobian(self, u)
    }
    fn pairing(&self, u: &FeFunction, v: &FeFunction) -> Result<f64, OperatorError> {
        FeOperator::pairing(self, u, v)
    }
    fn norm(&self, v: &FeFunction) -> f64 {
        grad_norm_lp(v, self.spec().p)
    }
    fn properties(&self) -> OperatorProperties {
        OperatorProperties { bounded: true, coercive: true, continuous: true }
    }
    fn homotopy(&self, load: f64, blend: f64) -> Self {
        self.deformed(load, blend)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub continuation_steps: usize,
    pub epsilon: f64,
    pub polish_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tolerance: 1e-10, max_iterations: 200, continuation_steps: 10, epsilon: 1e-10, polish_steps: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    /// Damped Newton from the warm start.
    Newton,
    /// Load continuation with the lower-order data scaled from 0 to 1.
    Continuation,
    /// Joint continuation in the load and in the q-term sign, starting from
    /// the cooperative operator.
    SignHomotopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardRecord {
    /// Sphere radius that was finally tested.
    pub radius: f64,
    /// Radius the guard started from.
    pub initial_radius: f64,
    pub doublings: usize,
    pub min_pairing: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Minimum of `⟨A(v), v⟩` over `samples` seeded random fields rescaled to
/// `norm(v) = radius`.
pub fn brouwer_guard<O: AbstractOperator>(op: &O, radius: f64, samples: usize, seed: u64) -> Result<GuardRecord, OperatorError> {
    let mut min_pairing = f64::INFINITY;
    let mut count = 0;
    for v in random_fields(op.space(), samples, seed) {
        let n = op.norm(&v);
        if !(n > 0.0) {
            continue;
        }
        let v = v.scaled(radius / n);
        min_pairing = min_pairing.min(op.pairing(&v, &v)?);
        count += 1;
    }
    if count == 0 {
        min_pairing = 0.0;
    }
    Ok(GuardRecord {
        radius,
        initial_radius: radius,
        doublings: 0,
        min_pairing,
        samples: count,
        passed: min_pairing >= 0.0,
    })
}

/// [`brouwer_guard`], doubling the radius on failure at most `max_doublings` times.
pub fn guarded_radius<O: AbstractOperator>(
    op: &O,
    radius: f64,
    samples: usize,
    seed: u64,
    max_doublings: usize,
) -> Result<GuardRecord, OperatorError> {
    let mut r = radius;
    let mut rec = brouwer_guard(op, r, samples, seed)?;
    let mut doublings = 0;
    while !rec.passed && doublings < max_doublings {
        r *= 2.0;
        doublings += 1;
        rec = brouwer_guard(op, r, samples, seed)?;
    }
    rec.initial_radius = radius;
    rec.doublings = doublings;
    Ok(rec)
}

#[derive(Debug, Clone)]
pub struct LevelSolve {
    pub level: usize,
    pub solution: FeFunction,
    pub residual_sup: f64,
    pub iterations: usize,
    pub guard: Option<GuardRecord>,
    pub path: SolverPath,
    /// `norm(u_n) ≤ guard radius (1 + 1e-9)`, when a guard was run.
    pub within_guard: Option<bool>,
}

struct NewtonOutcome {
    u: FeFunction,
    residual: f64,
    iterations: usize,
    converged: bool,
}

fn add(u: &FeFunction, d: &[f64], t: f64) -> FeFunction {
    let c = u.coefficients().iter().zip(d).map(|(x, y)| x + t * y).collect();
    FeFunction::from_coefficients(u.space(), c).expect("length matches")
}

/// Triplets of `JᵀJ + μ I`.
fn normal_matrix(n: usize, jac: &[Triplet<usize, usize, f64>], mu: f64) -> Vec<Triplet<usize, usize, f64>> {
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for t in jac {
        *rows[t.row].entry(t.col).or_insert(0.0) += t.val;
    }
    let mut out = Vec::new();
    for row in &rows {
        for (&a, &va) in row {
            for (&b, &vb) in row {
                out.push(Triplet::new(a, b, va * vb));
            }
        }
    }
    for i in 0..n {
        out.push(Triplet::new(i, i, mu));
    }
    out
}

/// Damped Newton on `‖F‖₂` with a Levenberg–Marquardt step when the Newton
/// direction is unusable; stops at sup-norm `tol` then polishes.
fn newton<O: AbstractOperator>(op: &O, start: FeFunction, tol: f64, cfg: &SolverConfig) -> Result<NewtonOutcome, OperatorError> {
    let n = op.space().dim();
    let mut u = start;
    let mut f = op.residual(&u)?.into_values();
    let mut iterations = 0;
    let mut polished = 0;
    let mut converged = norm_inf(&f) <= tol;
    while iterations < cfg.max_iterations {
        if converged && polished >= cfg.polish_steps {
            break;
        }
        if n == 0 || norm_inf(&f) == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let jac = op.jacobian(&u)?;
        let merit = norm2(&f);
        let neg: Vec<f64> = f.iter().map(|x| -x).collect();
        let mut accepted = None;
        if let Some(d) = solve_sparse(n, &jac, &neg) {
            let mut t = 1.0;
            for _ in 0..30 {
                let trial = add(&u, &d, t);
                if let Ok(r) = op.residual(&trial) {
                    let r = r.into_values();
                    if norm2(&r) < (1.0 - 1e-4 * t) * merit {
                        accepted = Some((trial, r));
                        break;
                    }
                }
                t *= 0.5;
                if converged {
                    break;
                }
            }
        }
        if accepted.is_none() && !converged {
            let g: Vec<f64> = transpose_apply(n, &jac, &f).iter().map(|x| -x).collect();
            let diag_scale = jac.iter().fold(0.0f64, |m, t| m.max(t.val.abs())).max(1e-300);
            let mut mu = 1e-8 * diag_scale * diag_scale;
            for _ in 0..20 {
                if let Some(d) = solve_sparse(n, &normal_matrix(n, &jac, mu), &g) {
                    let trial = add(&u, &d, 1.0);
                    if let Ok(r) = op.residual(&trial) {
                        let r = r.into_values();
                        if norm2(&r) < merit {
                            accepted = Some((trial, r));
                            break;
                        }
                    }
                }
                mu *= 10.0;
            }
        }
        match accepted {
            Some((trial, r)) => {
                u = trial;
                f = r;
                if converged {
                    polished += 1;
                }
                converged = norm_inf(&f) <= tol;
            }
            None => break,
        }
    }
    Ok(NewtonOutcome { residual: norm_inf(&f), u, iterations, converged })
}

/// Tracks `homotopy(s, blend(s))` from `s = 0` (zero solution) to `s = 1`,
/// halving the step on failure.
fn continuation<O: AbstractOperator>(op: &O, cfg: &SolverConfig, with_sign: bool) -> Result<NewtonOutcome, OperatorError> {
    let member = |s: f64| op.homotopy(s, if with_sign { s } else { 1.0 });
    let mut u = FeFunction::zeros(op.space());
    let mut s = 0.0;
    let mut ds = 1.0 / cfg.continuation_steps.max(1) as f64;
    let mut iterations = 0;
    while s < 1.0 {
        let target = (s + ds).min(1.0);
        let tol = if target >= 1.0 { cfg.tolerance } else { cfg.tolerance.max(1e-8) };
        let out = newton(&member(target), u.clone(), tol, cfg)?;
        iterations += out.iterations;
        if out.converged {
            u = out.u;
            s = target;
        } else {
            ds *= 0.5;
            if ds < 1e-4 || iterations > 20 * cfg.max_iterations {
                return Ok(NewtonOutcome { u: out.u, residual: out.residual, iterations, converged: false });
            }
        }
    }
    let f = op.residual(&u)?.into_values();
    Ok(NewtonOutcome { residual: norm_inf(&f), u, iterations, converged: true })
}

/// Solves `⟨A(u_n), φ_i⟩ = 0` for all basis functions. A nonzero warm start
/// goes to Newton first; a zero start goes to the sign homotopy first.
pub fn solve_level<O: AbstractOperator>(
    op: &O,
    cfg: &SolverConfig,
    warm: Option<&FeFunction>,
    level: usize,
) -> Result<LevelSolve, SolveError> {
    let warm = match warm {
        Some(w) => prolongate(w, op.space())?,
        None => FeFunction::zeros(op.space()),
    };
    let warm_is_zero = warm.coefficients().iter().all(|&c| c == 0.0);
    let order: &[SolverPath] = if warm_is_zero {
        &[SolverPath::SignHomotopy, SolverPath::Newton, SolverPath::Continuation]
    } else {
        &[SolverPath::Newton, SolverPath::SignHomotopy, SolverPath::Continuation]
    };
    let mut total = 0;
    let mut best: Option<(f64, SolverPath)> = None;
    for &path in order {
        let out = match path {
            SolverPath::Newton => newton(op, warm.clone(), cfg.tolerance, cfg)?,
            SolverPath::Continuation => continuation(op, cfg, false)?,
            SolverPath::SignHomotopy => continuation(op, cfg, true)?,
        };
        total += out.iterations;
        if out.converged {
            return Ok(LevelSolve {
                level,
                solution: out.u,
                residual_sup: out.residual,
                iterations: total,
                guard: None,
                path,
                within_guard: None,
            });
        }
        if best.is_none_or(|(r, _)| out.residual < r) {
            best = Some((out.residual, path));
        }
    }
    let (residual, path) = best.expect("at least one path ran");
    Err(SolveError::NoConvergence { level, residual, iterations: total, stage: format!("{path:?}").to_lowercase() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyConfig {
    pub base_cells: usize,
    pub levels: usize,
    /// Random coarse test functions added to the level-0 basis.
    pub random_tests: usize,
    pub guard_samples: usize,
    pub guard_max_doublings: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            base_cells: 2,
            levels: 6,
            random_tests: 5,
            guard_samples: 16,
            guard_max_doublings: 8,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

/// Relative factor applied to condition thresholds.
pub const CONDITION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    pub dofs: usize,
    pub coefficients: Vec<f64>,
    pub residual_sup: f64,
    pub iterations: usize,
    pub path: SolverPath,
    pub guard: GuardRecord,
    pub within_guard: bool,
    pub grad_norm_p: f64,
    pub sup_norm: f64,
    pub within_r1: bool,
    pub within_r: bool,
    /// `⟨A_R(u_n), u_n⟩` on the level's own space.
    pub self_pairing: f64,
}

/// All tables are finest-level proxies: `u` stands for `u_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedSolutionReport {
    pub radius_r1: f64,
    pub radius_r: f64,
    pub tolerance: f64,
    /// `max(1, max_i |⟨N_f(u_N), φ_i⟩| / ‖∇φ_i‖_p)` on the finest level.
    pub scale: f64,
    pub levels: Vec<LevelRecord>,
    pub test_count: usize,
    /// `cond_b[j][n] = |⟨A_R(u_n), v_j⟩|`.
    pub cond_b: Vec<Vec<f64>>,
    /// `⟨A_R(u_n), u_n − u⟩` evaluated on the finest space.
    pub cond_c: Vec<f64>,
    /// `−⟨A_R(u_n), u⟩`, the bookkeeping form of `cond_c`.
    pub cond_c_bookkeeping: Vec<f64>,
    /// `⟨A_R¹(u_n) ∓ Δ_q-term, u_n − u⟩`: the principal part with the
    /// variant's q-term sign.
    pub cond_cprime: Vec<f64>,
    /// `∫ f(x,u_n,∇u_n)(u_n − u)`.
    pub convection: Vec<f64>,
    /// `‖∇(u_n − u)‖_p`.
    pub gradient_gap: Vec<f64>,
    /// Residual dual vector of the finest level.
    pub eta: Vec<f64>,
    pub failure: Option<String>,
}

impl GeneralizedSolutionReport {
    pub fn norm_history(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.grad_norm_p).collect()
    }

    pub fn sup_history(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.sup_norm).collect()
    }

    pub fn complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn threshold(&self) -> f64 {
        CONDITION_TOLERANCE * self.scale
    }

    /// `max_j cond_b[j][n]` per level.
    pub fn cond_b_max(&self) -> Vec<f64> {
        (0..self.levels.len())
            .map(|n| self.cond_b.iter().fold(0.0f64, |m, row| m.max(row.get(n).copied().unwrap_or(0.0))))
            .collect()
    }
}

/// Everything produced by one hierarchy run.
#[derive(Debug, Clone)]
pub struct HierarchyRun {
    pub report: GeneralizedSolutionReport,
    pub spaces: Vec<Arc<FeSpace>>,
    pub solutions: Vec<FeFunction>,
    pub operators: Vec<FeOperator>,
    pub error: Option<SolveError>,
}

pub fn build_spaces(spec: &ProblemSpec, base_cells: usize, levels: usize) -> Result<Vec<Arc<FeSpace>>, SolveError> {
    let meshes: Vec<Arc<MeshLevel>> = build_hierarchy(spec.domain, base_cells, levels)?;
    Ok(meshes.into_iter().map(FeSpace::new).collect())
}

/// Solves every level against `A_R` (weight truncated at `radius_r`) with
/// prolongated warm starts, guarding each level at `radius_r1`, then fills
/// the condition tables with the finest solution as proxy limit. A level
/// failure ends the run and is recorded in the report.
pub fn run_hierarchy(
    spec: &Arc<ProblemSpec>,
    radius_r1: f64,
    radius_r: f64,
    cfg: &HierarchyConfig,
) -> Result<HierarchyRun, SolveError> {
    spec.validate()?;
    if cfg.levels < 2 {
        return Err(SolveError::TooFewLevels { min: 2, got: cfg.levels });
    }
    let spaces = build_spaces(spec, cfg.base_cells, cfg.levels)?;
    let weight = truncate_weight(Arc::clone(&spec.weight), radius_r)?;
    let base = FeOperator::new(Arc::clone(spec), Arc::clone(&spaces[0]), WeightMode::Truncated(weight))
        .with_epsilon(cfg.solver.epsilon);

    let mut solutions: Vec<FeFunction> = Vec::new();
    let mut operators: Vec<FeOperator> = Vec::new();
    let mut records = Vec::new();
    let mut error = None;
    for (n, space) in spaces.iter().enumerate() {
        let op = base.on_space(Arc::clone(space));
        let guard = guarded_radius(&op, radius_r1, cfg.guard_samples, cfg.seed.wrapping_add(n as u64), cfg.guard_max_doublings)?;
        match solve_level(&op, &cfg.solver, solutions.last(), n) {
            Ok(mut s) => {
                let g = op.norm(&s.solution);
                let within_guard = g <= guard.radius * (1.0 + 1e-9);
                s.within_guard = Some(within_guard);
                let sup = sup_norm(&s.solution);
                records.push(LevelRecord {
                    level: n,
                    dofs: space.dim(),
                    coefficients: s.solution.coefficients().to_vec(),
                    residual_sup: s.residual_sup,
                    iterations: s.iterations,
                    path: s.path,
                    guard: guard.clone(),
                    within_guard,
                    grad_norm_p: g,
                    sup_norm: sup,
                    within_r1: g <= radius_r1 * (1.0 + 1e-9),
                    within_r: sup <= radius_r * (1.0 + 1e-9),
                    self_pairing: op.pairing(&s.solution, &s.solution)?,
                });
                solutions.push(s.solution);
                operators.push(op);
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }

    let mut report = GeneralizedSolutionReport {
        radius_r1,
        radius_r,
        tolerance: cfg.solver.tolerance,
        scale: 1.0,
        levels: records,
        test_count: 0,
        cond_b: Vec::new(),
        cond_c: Vec::new(),
        cond_c_bookkeeping: Vec::new(),
        cond_cprime: Vec::new(),
        convection: Vec::new(),
        gradient_gap: Vec::new(),
        eta: Vec::new(),
        failure: error.as_ref().map(|e| e.to_string()),
    };
    if !solutions.is_empty() {
        fill_tables(&mut report, &spaces[..solutions.len()], &solutions, &operators, cfg)?;
    }
    Ok(HierarchyRun { report, spaces, solutions, operators, error })
}

/// Coarse test set: the level-0 basis followed by `count` seeded random fields.
pub fn coarse_test_set(space: &Arc<FeSpace>, count: usize, seed: u64) -> Vec<FeFunction> {
    let mut out: Vec<FeFunction> = (0..space.dim()).map(|i| FeFunction::basis(space, i)).collect();
    out.extend(random_fields(space, count, seed ^ 0x7e57));
    out
}

/// `max(1, max_i |⟨N_f(u), φ_i⟩| / ‖∇φ_i‖_p)`.
pub fn residual_scale(op: &FeOperator, u: &FeFunction) -> Result<f64, OperatorError> {
    let parts = op.parts(u)?;
    let space = op.space();
    let p = op.spec().p;
    let mut s: f64 = 1.0;
    for (i, c) in parts.convection.values().iter().enumerate() {
        let gn = grad_norm_lp(&FeFunction::basis(space, i), p);
        if gn > 0.0 {
            s = s.max(c.abs() / gn);
        }
    }
    Ok(s)
}

pub fn fill_tables(
    report: &mut GeneralizedSolutionReport,
    spaces: &[Arc<FeSpace>],
    solutions: &[FeFunction],
    operators: &[FeOperator],
    cfg: &HierarchyConfig,
) -> Result<(), SolveError> {
    let last = solutions.len() - 1;
    let fine_op = &operators[last];
    let u = &solutions[last];
    let q_coef = fine_op.spec().variant.q_sign();
    report.scale = residual_scale(fine_op, u)?;
    report.eta = fine_op.residual(u)?.into_values();

    let tests = coarse_test_set(&spaces[0], cfg.random_tests, cfg.seed);
    report.test_count = tests.len();
    report.cond_b = tests
        .iter()
        .map(|v| {
            operators
                .iter()
                .zip(solutions)
                .map(|(op, un)| {
                    let vn = prolongate(v, op.space())?;
                    Ok(op.pairing(un, &vn)?.abs())
                })
                .collect::<Result<Vec<f64>, SolveError>>()
        })
        .collect::<Result<_, _>>()?;

    for un in solutions {
        let un_fine = prolongate(un, fine_op.space())?;
        let diff = un_fine.combine(1.0, u, -1.0)?;
        let (a, b, c) = fine_op.pairing_parts(&un_fine, &diff)?;
        report.cond_c.push(a + q_coef * b - c);
        report.cond_cprime.push(a + q_coef * b);
        report.convection.push(c);
        report.cond_c_bookkeeping.push(-fine_op.pairing(&un_fine, u)?);
        report.gradient_gap.push(grad_norm_lp(&diff, fine_op.spec().p));
    }
    Ok(())
}

/// Resets every table of `report` before [`fill_tables`] recomputes them.
pub fn clear_tables(report: &mut GeneralizedSolutionReport) {
    report.scale = 1.0;
    report.test_count = 0;
    report.cond_b.clear();
    report.cond_c.clear();
    report.cond_c_bookkeeping.clear();
    report.cond_cprime.clear();
    report.convection.clear();
    report.gradient_gap.clear();
    report.eta.clear();
}

/// Residual of `u` against `op`, as a dual pairing with each `v`.
pub fn pairings_against(op: &FeOperator, u: &FeFunction, tests: &[FeFunction]) -> Result<Vec<f64>, SolveError> {
    let r = op.residual(u)?;
    tests.iter().map(|v| Ok(pair(&r, &prolongate(v, op.space())?)?)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SClassification {
    /// Pairings vanish and gradients contract: candidate weak solution.
    SConsistent,
    /// Pairings vanish, gradients do not contract.
    GeneralizedOnly,
    /// Pairings do not vanish at the threshold.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SProbe {
    pub classification: SClassification,
    /// `|⟨A_R(u_n), u_n − u⟩|` on the last level before the finest.
    pub final_pairing: f64,
    /// `‖∇(u_n − u)‖_p / max(‖∇u‖_p, tiny)` on the same level.
    pub final_relative_gap: f64,
    /// Gaps are non-increasing in `n`.
    pub monotone_gaps: bool,
}

/// Relative gradient gap below which sequences count as contracting.
pub const S_GAP_TOLERANCE: f64 = 1e-3;

pub fn condition_s_probe(report: &GeneralizedSolutionReport) -> SProbe {
    let n = report.cond_c.len();
    let idx = n.saturating_sub(2);
    let final_pairing = report.cond_c.get(idx).map_or(0.0, |v| v.abs());
    let u_norm = report.levels.get(n.wrapping_sub(1)).map_or(0.0, |l| l.grad_norm_p);
    let gap = report.gradient_gap.get(idx).copied().unwrap_or(0.0);
    let final_relative_gap = if u_norm > 0.0 { gap / u_norm } else if gap == 0.0 { 0.0 } else { f64::INFINITY };
    let monotone_gaps = report.gradient_gap.windows(2).all(|w| w[1] <= w[0]);
    let classification = if final_pairing > report.threshold() {
        SClassification::Inconclusive
    } else if final_relative_gap <= S_GAP_TOLERANCE && monotone_gaps {
        SClassification::SConsistent
    } else {
        SClassification::GeneralizedOnly
    };
    SProbe { classification, final_pairing, final_relative_gap, monotone_gaps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, DomainDescriptor};
    use crate::operators::{ConstantWeight, ConvectionFamily, Regime, Variant};
    use approx::assert_relative_eq;

    fn spec(cells_domain: DomainDescriptor, f: ConvectionFamily, variant: Variant) -> Arc<ProblemSpec> {
        Arc::new(ProblemSpec {
            p: 3.0,
            q: 2.0,
            domain: cells_domain,
            weight: Arc::new(ConstantWeight(1.0)),
            convection: f,
            variant,
            regime: Regime::H3,
        })
    }

    fn raw_op(spec: &Arc<ProblemSpec>, cells: usize) -> FeOperator {
        let space = FeSpace::new(build_mesh(spec.domain, cells).unwrap());
        FeOperator::new(Arc::clone(spec), space, WeightMode::Raw)
    }

    #[test]
    fn single_dof_root() {
        let s = spec(DomainDescriptor::interval(0.0, 1.0).unwrap(), ConvectionFamily::constant(1.0), Variant::Competing);
        let op = raw_op(&s, 2);
        let out = solve_level(&op, &SolverConfig::default(), None, 0).unwrap();
        let t = out.solution.coefficients()[0];
        assert!((t - (1.0 + 2f64.sqrt()) / 4.0).abs() < 1e-10, "t = {t}");
        assert!(out.residual_sup <= 1e-10);
        // dense scan oracle: the only positive sign change of 8t|t| − 4t − 0.5
        let f = |t: f64| 8.0 * t * t.abs() - 4.0 * t - 0.5;
        let crossing = (0..20_000)
            .map(|k| k as f64 * 1e-4)
            .find(|&x| f(x) <= 0.0 && f(x + 1e-4) > 0.0)
            .unwrap();
        assert!((t - crossing).abs() <= 1e-4);
    }

    #[test]
    fn zero_load_gives_zero() {
        let s = spec(DomainDescriptor::rectangle(0.0, 1.0, 0.0, 1.0).unwrap(), ConvectionFamily::zero(), Variant::Competing);
        let op = raw_op(&s, 4);
        let out = solve_level(&op, &SolverConfig::default(), None, 0).unwrap();
        assert!(out.solution.coefficients().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn forced_failure_reports_no_convergence() {
        let s = spec(DomainDescriptor::interval(0.0, 1.0).unwrap(), ConvectionFamily::constant(1.0), Variant::Competing);
        let op = raw_op(&s, 8);
        let cfg = SolverConfig { max_iterations: 1, continuation_steps: 1, ..SolverConfig::default() };
        let err = solve_level(&op, &cfg, None, 3).unwrap_err();
        assert!(matches!(err, SolveError::NoConvergence { level: 3, .. }));
    }

    /// Compass search on `‖F‖₂` over coordinate and diagonal directions.
    fn pattern_search(op: &FeOperator, start: &[f64]) -> (Vec<f64>, f64) {
        let merit = |x: &[f64]| {
            let u = FeFunction::from_coefficients(op.space(), x.to_vec()).unwrap();
            norm2(op.residual(&u).unwrap().values())
        };
        let n = start.len();
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        for i in 0..n {
            for j in i..n {
                for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut d = vec![0.0; n];
                    d[i] += si;
                    d[j] += sj;
                    if d.iter().any(|&v| v != 0.0) {
                        dirs.push(d);
                    }
                }
            }
        }
        let mut x = start.to_vec();
        let mut fx = merit(&x);
        let mut h = 0.125;
        while h > 1e-11 {
            let best = dirs
                .iter()
                .map(|d| {
                    let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + h * b).collect();
                    let fy = merit(&y);
                    (y, fy)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if best.1 < fx {
                x = best.0;
                fx = best.1;
            } else {
                h *= 0.5;
            }
        }
        (x, fx)
    }

    #[test]
    fn three_dof_matches_multistart_grid() {
        let s = spec(DomainDescriptor::interval(0.0, 1.0).unwrap(), ConvectionFamily::constant(1.0), Variant::Competing);
        let op = raw_op(&s, 4);
        let out = solve_level(&op, &SolverConfig::default(), None, 0).unwrap();
        let sol = out.solution.coefficients();
        let grid: Vec<f64> = (0..9).map(|k| -1.0 + 0.25 * k as f64).collect();
        let mut roots: Vec<Vec<f64>> = Vec::new();
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    let (x, fx) = pattern_search(&op, &[a, b, c]);
                    if fx < 1e-9 {
                        roots.push(x);
                    }
                }
            }
        }
        assert!(!roots.is_empty());
        let best = roots
            .iter()
            .map(|r| r.iter().zip(sol).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
            .fold(f64::INFINITY, f64::min);
        assert!(best <= 1e-6, "closest grid root differs by {best}");
    }

    #[test]
    fn guard_on_pure_p_laplacian() {
        let s = Arc::new(ProblemSpec {
            variant: Variant::Cooperative,
            ..(*spec(DomainDescriptor::interval(0.0, 1.0).unwrap(), ConvectionFamily::zero(), Variant::Competing)).clone()
        });
        let op = raw_op(&s, 16);
        let g = brouwer_guard(&op, 0.5, 20, 1).unwrap();
        assert!(g.passed && g.samples == 20);
        // competing, radius 2 > |Ω|^{1/3}: ⟨A v, v⟩ ≥ r³ − r²
        let s = spec(DomainDescriptor::interval(0.0, 1.0).unwrap(), ConvectionFamily::zero(), Variant::Competing);
        let op = raw_op(&s, 16);
        let g = brouwer_guard(&op, 2.0, 20, 1).unwrap();
        assert!(g.min_pairing >= 8.0 - 4.0 - 1e-9);
        let g = guarded_radius(&op, 0.1, 20, 1, 6).unwrap();
        assert!(g.passed && g.doublings > 0);
    }

    #[test]
    fn zero_convection_hierarchy_is_zero() {
        let s = spec(DomainDescriptor::interval(0.0, 1.0).unwrap(), ConvectionFamily::zero(), Variant::Competing);
        let run = run_hierarchy(&s, 1.0, 1.0, &HierarchyConfig { levels: 3, ..Default::default() }).unwrap();
        assert!(run.report.complete());
        for l in &run.report.levels {
            assert!(l.coefficients.iter().all(|&c| c == 0.0));
        }
        assert!(run.report.cond_b.iter().flatten().all(|&v| v == 0.0));
        assert!(run.report.cond_c.iter().all(|&v| v == 0.0));
        assert_eq!(condition_s_probe(&run.report).classification, SClassification::SConsistent);
    }

    #[test]
    fn tables_are_recomputable() {
        let s = spec(DomainDescriptor::interval(0.0, 1.0).unwrap(), ConvectionFamily::constant(1.0), Variant::Cooperative);
        let run = run_hierarchy(&s, 10.0, 10.0, &HierarchyConfig { levels: 4, ..Default::default() }).unwrap();
        let r = &run.report;
        let fine = run.operators.last().unwrap();
        for (n, un) in run.solutions.iter().enumerate() {
            let pf = prolongate(un, fine.space()).unwrap();
            let diff = pf.combine(1.0, run.solutions.last().unwrap(), -1.0).unwrap();
            assert_relative_eq!(fine.pairing(&pf, &diff).unwrap(), r.cond_c[n], epsilon = 1e-10);
            assert_relative_eq!(r.cond_cprime[n] - r.convection[n], r.cond_c[n], epsilon = 1e-10);
            assert!((r.cond_c[n] - r.cond_c_bookkeeping[n]).abs() <= 1e-8);
            assert!(r.levels[n].self_pairing.abs() <= 1e-8);
        }
        let tests = coarse_test_set(&run.spaces[0], 5, 0);
        for (n, op) in run.operators.iter().enumerate() {
            let direct = pairings_against(op, &run.solutions[n], &tests).unwrap();
            for (j, d) in direct.iter().enumerate() {
                assert_relative_eq!(d.abs(), r.cond_b[j][n], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn too_few_levels() {
        let s = spec(DomainDescriptor::interval(0.0, 1.0).unwrap(), ConvectionFamily::zero(), Variant::Competing);
        let e = run_hierarchy(&s, 1.0, 1.0, &HierarchyConfig { levels: 1, ..Default::default() }).unwrap_err();
        assert_eq!(e, SolveError::TooFewLevels { min: 2, got: 1 });
    }
}

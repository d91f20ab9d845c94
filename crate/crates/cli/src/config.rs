//! JSON run configuration. Unknown keys are rejected at every level.

use std::path::PathBuf;
use std::sync::Arc;

use pqlap_core::estimates::{EstimateConfig, PoincareConvention};
use pqlap_core::galerkin::{HierarchyConfig, SolverConfig};
use pqlap_core::operators::{ConstantWeight, DeclaredConstants, QuadraticWeight, WeightFunction};
use pqlap_core::{ConvectionFamily, DomainDescriptor, ProblemSpec, Regime, SpecError, Variant};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub estimates: EstimatesConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub p: f64,
    pub q: f64,
    pub domain: DomainDescriptor,
    pub variant: Variant,
    pub weight: WeightConfig,
    pub convection: ConvectionConfig,
    #[serde(default = "default_regime")]
    pub regime: Regime,
}

fn default_regime() -> Regime {
    Regime::H3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightConfig {
    /// `g ≡ value`.
    Constant { value: f64 },
    /// `g(t) = a0 + k t²`.
    Quadratic { a0: f64, k: f64 },
}

/// Built-in convection law; `constants` replaces its declared hypothesis
/// constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvectionConfig {
    Zero {
        #[serde(default)]
        constants: Option<DeclaredConstants>,
    },
    Constant {
        value: f64,
        #[serde(default)]
        constants: Option<DeclaredConstants>,
    },
    Model {
        alpha: f64,
        h: f64,
        #[serde(default = "default_c0")]
        c0: f64,
        #[serde(default)]
        source: f64,
        #[serde(default)]
        constants: Option<DeclaredConstants>,
    },
    Adversarial {
        #[serde(default)]
        constants: Option<DeclaredConstants>,
    },
}

fn default_c0() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub base_cells: usize,
    pub levels: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { base_cells: 2, levels: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatesConfig {
    pub poincare_convention: PoincareConvention,
    pub sobolev_samples: usize,
    pub audit_samples: usize,
    pub xi_max: f64,
    pub guard_samples: usize,
    pub random_tests: usize,
    pub monotonicity_samples: usize,
    pub seed: u64,
}

impl Default for EstimatesConfig {
    fn default() -> Self {
        EstimatesConfig {
            poincare_convention: PoincareConvention::Standard,
            sobolev_samples: 1000,
            audit_samples: 10_000,
            xi_max: 100.0,
            guard_samples: 16,
            random_tests: 5,
            monotonicity_samples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Used when `--out` is not given.
    pub dir: PathBuf,
    pub write_solutions: bool,
    pub write_diagnostics: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("pqlap-out"), write_solutions: true, write_diagnostics: true }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> RunConfig {
        if let Some(s) = seed {
            self.estimates.seed = s;
        }
        self
    }

    pub fn spec(&self) -> Result<Arc<ProblemSpec>, SpecError> {
        let pr = &self.problem;
        let weight: Arc<dyn WeightFunction> = match pr.weight {
            WeightConfig::Constant { value } => Arc::new(ConstantWeight(value)),
            WeightConfig::Quadratic { a0, k } => Arc::new(QuadraticWeight { a0, k }),
        };
        let a0 = weight.lower_bound();
        let (mut convection, constants) = match pr.convection {
            ConvectionConfig::Zero { constants } => (ConvectionFamily::zero(), constants),
            ConvectionConfig::Constant { value, constants } => (ConvectionFamily::constant(value), constants),
            ConvectionConfig::Model { alpha, h, c0, source, constants } => {
                (ConvectionFamily::model(alpha, h, pr.p, c0, source)?, constants)
            }
            ConvectionConfig::Adversarial { constants } => (ConvectionFamily::adversarial(a0, pr.p), constants),
        };
        if let Some(c) = constants {
            convection = convection.with_constants(c);
        }
        pr.domain.validate()?;
        let spec = ProblemSpec { p: pr.p, q: pr.q, domain: pr.domain, weight, convection, variant: pr.variant, regime: pr.regime };
        spec.validate()?;
        Ok(Arc::new(spec))
    }

    pub fn estimate_config(&self) -> EstimateConfig {
        let e = &self.estimates;
        EstimateConfig {
            convention: e.poincare_convention,
            sobolev_samples: e.sobolev_samples,
            audit_samples: e.audit_samples,
            xi_max: e.xi_max,
            seed: e.seed,
        }
    }

    pub fn hierarchy_config(&self) -> HierarchyConfig {
        HierarchyConfig {
            base_cells: self.mesh.base_cells,
            levels: self.mesh.levels,
            random_tests: self.estimates.random_tests,
            guard_samples: self.estimates.guard_samples,
            guard_max_doublings: 8,
            seed: self.estimates.seed,
            solver: self.solver,
        }
    }
}

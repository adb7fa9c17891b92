//! JSON experiment configuration: schema, validation with dotted field
//! paths, and the control/task catalogs referenced from configs.
//!
//! Configs are plain data ("catalog id + parameters"); there is no embedded
//! expression language, so a parsed config round-trips identically.

use serde::{Deserialize, Serialize};

use crate::consumption::{CertifyOptions, ConsumptionModel, KernelSpec};
use crate::driver::{LevyMeasureSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::forward::{ControlPath, InfoMode};
use crate::measure::{JumpLoading, ThetaSpec, VolLoading};
use crate::principle::PerturbationSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub x0: f64,
    pub b0: KernelSpec,
    pub sigma0: VolLoading,
    pub gamma0: JumpLoading,
    pub theta: ThetaSpec,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub horizon: f64,
    pub steps: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloBlock {
    pub n_paths: i64,
    pub base_seed: i64,
    #[serde(default = "default_branches")]
    pub nested_branches: i64,
}

fn default_branches() -> i64 {
    1000
}

/// Control specification by catalog id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    Constant {
        value: f64,
        u_min: f64,
        u_max: f64,
    },
    Values {
        values: Vec<f64>,
        u_min: f64,
        u_max: f64,
    },
    /// The closed-form optimal rate, optionally scaled by a multiplier.
    Optimal {
        u_min: f64,
        u_max: f64,
        #[serde(default = "default_info_mode")]
        info_mode: InfoMode,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_info_mode() -> InfoMode {
    InfoMode::Deterministic
}

fn default_tol() -> f64 {
    1e-10
}

fn default_scale() -> f64 {
    1.0
}

impl ControlSpec {
    pub fn build(&self, model: &ConsumptionModel, grid: &TimeGrid) -> Result<ControlPath> {
        match self {
            ControlSpec::Constant {
                value,
                u_min,
                u_max,
            } => ControlPath::constant(*value, grid.steps() + 1, (*u_min, *u_max)),
            ControlSpec::Values {
                values,
                u_min,
                u_max,
            } => ControlPath::from_values(values.clone(), (*u_min, *u_max)),
            ControlSpec::Optimal {
                u_min,
                u_max,
                info_mode,
                tol,
                scale,
            } => {
                let u = crate::consumption::optimal_control(
                    model,
                    *info_mode,
                    grid,
                    *tol,
                    (*u_min, *u_max),
                )?;
                if (*scale - 1.0).abs() < f64::EPSILON {
                    Ok(u)
                } else {
                    u.scaled(*scale)
                }
            }
        }
    }
}

/// One task per run; the variant tags are the CLI subcommand names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Estimate the performance functional of a control.
    Simulate { control: ControlSpec },
    /// Emit the triangular resolvent table.
    Resolvent {
        #[serde(default = "default_tol")]
        tol: f64,
    },
    /// Full pipeline: optimal rate, scan, residuals, certification.
    Demo {
        #[serde(default = "default_bounds_min")]
        u_min: f64,
        #[serde(default = "default_bounds_max")]
        u_max: f64,
        #[serde(default = "default_info_mode")]
        info_mode: InfoMode,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default)]
        certify: Option<CertifyOptions>,
    },
    /// Gateaux derivatives of a control along bump perturbations.
    Perturb {
        control: ControlSpec,
        perturbations: Vec<PerturbationSpec>,
        lambdas: Vec<f64>,
    },
    /// The duality / Clark-Ocone oracle suite.
    Check {
        #[serde(default = "default_refinement")]
        refinement_steps: Vec<i64>,
    },
    /// Certification of a candidate control.
    Certify {
        control: ControlSpec,
        #[serde(default)]
        options: Option<CertifyOptions>,
    },
}

fn default_bounds_min() -> f64 {
    0.05
}

fn default_bounds_max() -> f64 {
    20.0
}

fn default_refinement() -> Vec<i64> {
    vec![128, 512, 2048]
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Simulate { .. } => "simulate",
            TaskSpec::Resolvent { .. } => "resolvent",
            TaskSpec::Demo { .. } => "demo",
            TaskSpec::Perturb { .. } => "perturb",
            TaskSpec::Check { .. } => "check",
            TaskSpec::Certify { .. } => "certify",
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub grid: GridBlock,
    pub levy: LevyMeasureSpec,
    pub monte_carlo: MonteCarloBlock,
    pub task: TaskSpec,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn parse(json: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(json)?;
        Ok(config)
    }

    /// Field-by-field validation; errors name the offending dotted path.
    pub fn validate(&self) -> Result<()> {
        if !(self.grid.horizon > 0.0) {
            return Err(Error::config("grid.horizon", "must be positive"));
        }
        if self.grid.steps < 1 {
            return Err(Error::config("grid.steps", "must be >= 1"));
        }
        if self.monte_carlo.n_paths < 2 {
            return Err(Error::config("monte_carlo.n_paths", "must be >= 2"));
        }
        if self.monte_carlo.base_seed < 1 {
            return Err(Error::config("monte_carlo.base_seed", "must be >= 1"));
        }
        if self.monte_carlo.nested_branches < 2 {
            return Err(Error::config("monte_carlo.nested_branches", "must be >= 2"));
        }
        self.levy
            .validate()
            .map_err(|e| Error::config("levy", e.to_string()))?;
        self.model_instance().validate()?;
        match &self.task {
            TaskSpec::Resolvent { tol } | TaskSpec::Demo { tol, .. } => {
                if !(*tol > 0.0) {
                    return Err(Error::config("task.tol", "must be positive"));
                }
            }
            TaskSpec::Perturb {
                perturbations,
                lambdas,
                ..
            } => {
                if perturbations.is_empty() {
                    return Err(Error::config("task.perturbations", "must not be empty"));
                }
                if lambdas.iter().any(|l| !(*l > 0.0)) {
                    return Err(Error::config("task.lambdas", "must all be positive"));
                }
            }
            TaskSpec::Check { refinement_steps } => {
                if refinement_steps.iter().any(|s| *s < 2) {
                    return Err(Error::config("task.refinement_steps", "must all be >= 2"));
                }
            }
            _ => {}
        }
        if self.output_dir.is_empty() {
            return Err(Error::config("output_dir", "must not be empty"));
        }
        Ok(())
    }

    /// The consumption model assembled from the model, grid and Lévy blocks.
    pub fn model_instance(&self) -> ConsumptionModel {
        ConsumptionModel {
            x0: self.model.x0,
            b0: self.model.b0,
            sigma0: self.model.sigma0,
            gamma0: self.model.gamma0,
            theta: self.model.theta,
            horizon: self.grid.horizon,
            levy: self.levy.clone(),
            epsilon: self.model.epsilon,
        }
    }

    pub fn grid_instance(&self) -> Result<TimeGrid> {
        TimeGrid::make(self.grid.horizon, self.grid.steps as usize)
    }
}

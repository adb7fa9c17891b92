//! Monte Carlo witnesses for the duality and Clark-Ocone identities on a
//! catalog of terminal functionals with hand-coded variational derivatives.
//!
//! Each catalog entry carries the conditional derivative evaluators
//! `E[D_t F | F_t]` (Brownian direction) and `E[D_{t,z} F | F_t]` (jump
//! direction) as closed-form functions of the driver prefix. They are hand
//! computations, never automatic differentiation: the module is an oracle,
//! and its derivative values are themselves pinned by test fixtures.

use std::sync::Arc;

use serde::Serialize;

use crate::driver::{sample_driver, DriverPath, LevyMeasureSpec, TimeGrid};
use crate::error::Result;
use crate::measure::compensated_mark_integral;
use crate::stats::{mean_se, par_map_paths, Estimate};

type EvalFn = Arc<dyn Fn(&DriverPath, &TimeGrid, &LevyMeasureSpec) -> f64 + Send + Sync>;
type MeanFn = Arc<dyn Fn(&TimeGrid, &LevyMeasureSpec) -> f64 + Send + Sync>;
type BrownianDerivFn = Arc<dyn Fn(&DriverPath, &TimeGrid, usize) -> f64 + Send + Sync>;
type JumpDerivFn = Arc<dyn Fn(&DriverPath, &TimeGrid, usize, f64) -> f64 + Send + Sync>;

/// One catalog functional with its hand-coded derivative evaluators.
#[derive(Clone)]
pub struct FunctionalSpec {
    pub id: &'static str,
    eval: EvalFn,
    mean: MeanFn,
    brownian_derivative: BrownianDerivFn,
    jump_derivative: JumpDerivFn,
}

impl FunctionalSpec {
    pub fn eval(&self, d: &DriverPath, g: &TimeGrid, l: &LevyMeasureSpec) -> f64 {
        (self.eval)(d, g, l)
    }

    pub fn mean(&self, g: &TimeGrid, l: &LevyMeasureSpec) -> f64 {
        (self.mean)(g, l)
    }

    /// `E[D_t F | F_t]` at node `i` (depends on the prefix only).
    pub fn brownian_derivative(&self, d: &DriverPath, g: &TimeGrid, i: usize) -> f64 {
        (self.brownian_derivative)(d, g, i)
    }

    /// `E[D_{t,z} F | F_t]` at node `i` and mark `z`.
    pub fn jump_derivative(&self, d: &DriverPath, g: &TimeGrid, i: usize, z: f64) -> f64 {
        (self.jump_derivative)(d, g, i, z)
    }

    /// `F = B(T)`: derivative 1 in the Brownian direction, 0 in the jump
    /// direction, mean 0.
    pub fn brownian_terminal() -> Self {
        FunctionalSpec {
            id: "brownian_terminal",
            eval: Arc::new(|d, g, _| d.brownian_at(g.steps())),
            mean: Arc::new(|_, _| 0.0),
            brownian_derivative: Arc::new(|_, _, _| 1.0),
            jump_derivative: Arc::new(|_, _, _, _| 0.0),
        }
    }

    /// `F = int_0^T s dB(s)` (left-point sampling): derivative `t`, mean 0.
    pub fn weighted_brownian_integral() -> Self {
        FunctionalSpec {
            id: "weighted_brownian_integral",
            eval: Arc::new(|d, g, _| {
                (0..g.steps())
                    .map(|j| g.node(j) * d.increments()[j])
                    .sum::<f64>()
            }),
            mean: Arc::new(|_, _| 0.0),
            brownian_derivative: Arc::new(|_, g, i| g.node(i)),
            jump_derivative: Arc::new(|_, _, _, _| 0.0),
        }
    }

    /// `F = B(T)^2`: `E[D_t F | F_t] = 2 B(t)`, mean `T`.
    pub fn brownian_terminal_squared() -> Self {
        FunctionalSpec {
            id: "brownian_terminal_squared",
            eval: Arc::new(|d, g, _| {
                let b = d.brownian_at(g.steps());
                b * b
            }),
            mean: Arc::new(|g, _| g.horizon()),
            brownian_derivative: Arc::new(|d, _, i| 2.0 * d.brownian_at(i)),
            jump_derivative: Arc::new(|_, _, _, _| 0.0),
        }
    }

    /// `F = int int z Ntilde(ds, dz)`: jump derivative `z`, mean 0.
    pub fn compensated_jump_integral() -> Self {
        FunctionalSpec {
            id: "compensated_jump_integral",
            eval: Arc::new(|d, g, l| compensated_mark_integral(d, g.horizon(), l)),
            mean: Arc::new(|_, _| 0.0),
            brownian_derivative: Arc::new(|_, _, _| 0.0),
            jump_derivative: Arc::new(|_, _, _, z| z),
        }
    }

    /// `F = exp(a B(T) - a^2 T / 2)`: derivative `a exp(a B(t) - a^2 t/2)`,
    /// mean 1.
    pub fn exponential_martingale(a: f64) -> Self {
        FunctionalSpec {
            id: "exponential_martingale",
            eval: Arc::new(move |d, g, _| {
                (a * d.brownian_at(g.steps()) - 0.5 * a * a * g.horizon()).exp()
            }),
            mean: Arc::new(|_, _| 1.0),
            brownian_derivative: Arc::new(move |d, g, i| {
                a * (a * d.brownian_at(i) - 0.5 * a * a * g.node(i)).exp()
            }),
            jump_derivative: Arc::new(|_, _, _, _| 0.0),
        }
    }
}

/// The full hand-coded catalog.
pub fn catalog() -> Vec<FunctionalSpec> {
    vec![
        FunctionalSpec::brownian_terminal(),
        FunctionalSpec::weighted_brownian_integral(),
        FunctionalSpec::brownian_terminal_squared(),
        FunctionalSpec::compensated_jump_integral(),
        FunctionalSpec::exponential_martingale(0.5),
    ]
}

/// Both sides of a duality identity with their per-path difference.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DualityResult {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Estimate of `lhs - rhs` from the paired per-path samples; its
    /// standard error is the combined error of the identity check.
    pub diff: Estimate,
}

/// Check `E[F int phi dB] = E[int E[D_t F | F_t] phi(t) dt]` for an adapted
/// integrand `phi` (evaluated at left endpoints).
pub fn duality_check_brownian(
    spec: &FunctionalSpec,
    phi: &(dyn Fn(&DriverPath, usize) -> f64 + Sync),
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    n_paths: u64,
    base_seed: u64,
) -> DualityResult {
    let samples: Vec<(f64, f64)> = par_map_paths(n_paths, |p| {
        let d = sample_driver(grid, levy, base_seed, p);
        let f = spec.eval(&d, grid, levy);
        let mut stoch = 0.0;
        let mut time = 0.0;
        for j in 0..grid.steps() {
            let ph = phi(&d, j);
            stoch += ph * d.increments()[j];
            time += spec.brownian_derivative(&d, grid, j) * ph * grid.dt();
        }
        (f * stoch, time)
    });
    collect_duality(samples)
}

/// Check the jump duality
/// `E[F int int psi dNtilde] = E[int int E[D_{t,z} F | F_t] psi(t,z) nu(dz) dt]`
/// for an adapted integrand `psi` (left-endpoint, predictable evaluation).
pub fn duality_check_jump(
    spec: &FunctionalSpec,
    psi: &(dyn Fn(&DriverPath, usize, f64) -> f64 + Sync),
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    n_paths: u64,
    base_seed: u64,
) -> DualityResult {
    let samples: Vec<(f64, f64)> = par_map_paths(n_paths, |p| {
        let d = sample_driver(grid, levy, base_seed, p);
        let f = spec.eval(&d, grid, levy);
        let mut comp = 0.0;
        for jump in d.jumps() {
            let j = grid.interval_left_index(jump.time);
            comp += psi(&d, j, jump.mark);
        }
        let mut time = 0.0;
        for j in 0..grid.steps() {
            comp -= grid.dt() * levy.nu_integral(|z| psi(&d, j, z));
            time += grid.dt()
                * levy.nu_integral(|z| spec.jump_derivative(&d, grid, j, z) * psi(&d, j, z));
        }
        (f * comp, time)
    });
    collect_duality(samples)
}

fn collect_duality(samples: Vec<(f64, f64)>) -> DualityResult {
    let lhs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let rhs: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let diff: Vec<f64> = samples.iter().map(|s| s.0 - s.1).collect();
    DualityResult {
        lhs: mean_se(&lhs),
        rhs: mean_se(&rhs),
        diff: mean_se(&diff),
    }
}

/// Root-mean-square Clark-Ocone reconstruction residual
/// `F - E[F] - int E[D_t F|F_t] dB - int int E[D_{t,z} F|F_t] dNtilde`.
pub fn clark_ocone_check(
    spec: &FunctionalSpec,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    n_paths: u64,
    base_seed: u64,
) -> f64 {
    let squares: Vec<f64> = par_map_paths(n_paths, |p| {
        let d = sample_driver(grid, levy, base_seed, p);
        let mut recon = spec.mean(grid, levy);
        for j in 0..grid.steps() {
            recon += spec.brownian_derivative(&d, grid, j) * d.increments()[j];
            recon -= grid.dt() * levy.nu_integral(|z| spec.jump_derivative(&d, grid, j, z));
        }
        for jump in d.jumps() {
            let j = grid.interval_left_index(jump.time);
            recon += spec.jump_derivative(&d, grid, j, jump.mark);
        }
        let r = spec.eval(&d, grid, levy) - recon;
        r * r
    });
    (squares.iter().sum::<f64>() / squares.len() as f64).sqrt()
}

/// One line of the oracle suite report.
#[derive(Debug, Clone, Serialize)]
pub struct OracleOutcome {
    pub id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub diff: f64,
    pub diff_se: f64,
    pub pass: bool,
}

/// Grid-refinement study of the `B(T)^2` Clark-Ocone residual.
#[derive(Debug, Clone, Serialize)]
pub struct RefinementStudy {
    pub steps: Vec<usize>,
    pub rms: Vec<f64>,
    pub decreasing: bool,
}

/// Full suite report for the `check` task.
#[derive(Debug, Clone, Serialize)]
pub struct OracleSuiteReport {
    pub checks: Vec<OracleOutcome>,
    pub refinement: RefinementStudy,
    pub pass: bool,
}

fn outcome(id: &str, r: DualityResult) -> OracleOutcome {
    OracleOutcome {
        id: id.to_string(),
        lhs: r.lhs.value,
        rhs: r.rhs.value,
        diff: r.diff.value,
        diff_se: r.diff.std_error,
        pass: r.diff.value.abs() <= 3.0 * r.diff.std_error + 1e-12,
    }
}

/// Run the six-identity oracle suite: three Brownian dualities, two jump
/// dualities, and the Clark-Ocone refinement study.
pub fn run_oracle_suite(
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    refinement_steps: &[usize],
    n_paths: u64,
    base_seed: u64,
) -> Result<OracleSuiteReport> {
    let mut checks = Vec::new();

    let bt = FunctionalSpec::brownian_terminal();
    checks.push(outcome(
        "duality_brownian/B(T)/phi=1",
        duality_check_brownian(&bt, &|_, _| 1.0, grid, levy, n_paths, base_seed),
    ));

    let bt2 = FunctionalSpec::brownian_terminal_squared();
    checks.push(outcome(
        "duality_brownian/B(T)^2/phi=1",
        duality_check_brownian(&bt2, &|_, _| 1.0, grid, levy, n_paths, base_seed),
    ));
    checks.push(outcome(
        "duality_brownian/B(T)^2/phi=B",
        duality_check_brownian(
            &bt2,
            &|d: &DriverPath, j: usize| d.brownian_at(j),
            grid,
            levy,
            n_paths,
            base_seed,
        ),
    ));

    let jmp = FunctionalSpec::compensated_jump_integral();
    checks.push(outcome(
        "duality_jump/markintegral/psi=1",
        duality_check_jump(&jmp, &|_, _, _| 1.0, grid, levy, n_paths, base_seed),
    ));
    checks.push(outcome(
        "duality_jump/markintegral/psi=z",
        duality_check_jump(&jmp, &|_, _, z| z, grid, levy, n_paths, base_seed),
    ));

    let mut rms = Vec::new();
    for &steps in refinement_steps {
        let g = TimeGrid::make(grid.horizon(), steps)?;
        rms.push(clark_ocone_check(&bt2, &g, levy, n_paths, base_seed));
    }
    let decreasing = rms.windows(2).all(|w| w[1] < w[0]);
    let refinement = RefinementStudy {
        steps: refinement_steps.to_vec(),
        rms,
        decreasing,
    };

    let pass = checks.iter().all(|c| c.pass) && refinement.decreasing;
    Ok(OracleSuiteReport {
        checks,
        refinement,
        pass,
    })
}

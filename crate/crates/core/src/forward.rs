//! Forward solution of the controlled SVIE and Monte Carlo evaluation of the
//! performance functional.
//!
//! Everything uses left-endpoint (Euler / predictable) evaluation, which
//! keeps the row map lower-triangular: node `i` depends only on driver data
//! and state values at nodes `j < i`.

use std::sync::Arc;

use crate::driver::{sample_driver, DriverPath, LevyMeasureSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::stats::{mean_se, try_par_map_paths, Estimate};

/// Deterministic scalar function of time.
pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Kernel `(t, s, x, u) -> value` on the triangle `0 <= s <= t <= T`.
pub type Kernel = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Jump kernel `(t, s, x, u, z) -> value`.
pub type JumpKernel = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Running reward `(t, x, u) -> value`.
pub type RewardFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Terminal reward `(x, driver) -> value`; the driver argument lets the
/// terminal weight be a random variable such as a measurable payoff weight.
pub type TerminalFn = Arc<dyn Fn(f64, &DriverPath) -> f64 + Send + Sync>;

fn zero1() -> Fn1 {
    Arc::new(|_| 0.0)
}
fn zero_kernel() -> Kernel {
    Arc::new(|_, _, _, _| 0.0)
}
fn zero_jump() -> JumpKernel {
    Arc::new(|_, _, _, _, _| 0.0)
}
fn zero_reward() -> RewardFn {
    Arc::new(|_, _, _| 0.0)
}
fn zero_terminal() -> TerminalFn {
    Arc::new(|_, _| 0.0)
}

/// Model coefficients with all partial derivatives required downstream.
///
/// Kernel arguments follow `(t, s, x, u)` with `t` the outer (memory) time
/// and `s <= t` the integration time; `_dt` fields differentiate the first
/// argument, `_dx`/`_du` the state/control, and `_dtdx`/`_dtdu` are the
/// mixed second derivatives. All coefficients are deterministic functions.
#[derive(Clone)]
pub struct VolterraCoefficients {
    pub initial: Fn1,
    pub drift: Kernel,
    pub drift_dt: Kernel,
    pub drift_dx: Kernel,
    pub drift_du: Kernel,
    pub drift_dtdx: Kernel,
    pub drift_dtdu: Kernel,
    pub diffusion: Kernel,
    pub diffusion_dt: Kernel,
    pub diffusion_dx: Kernel,
    pub diffusion_du: Kernel,
    pub diffusion_dtdx: Kernel,
    pub diffusion_dtdu: Kernel,
    pub jump: JumpKernel,
    pub jump_dt: JumpKernel,
    pub jump_dx: JumpKernel,
    pub jump_du: JumpKernel,
    pub jump_dtdx: JumpKernel,
    pub jump_dtdu: JumpKernel,
    pub running: RewardFn,
    pub running_dx: RewardFn,
    pub running_du: RewardFn,
    pub terminal: TerminalFn,
    pub terminal_dx: TerminalFn,
    /// Witness for the Lipschitz/linear-growth assumptions; used by the
    /// Picard contraction diagnostic.
    pub lipschitz_bound: f64,
}

impl VolterraCoefficients {
    /// All coefficients identically zero (useful as a builder base).
    pub fn zeroed() -> Self {
        VolterraCoefficients {
            initial: zero1(),
            drift: zero_kernel(),
            drift_dt: zero_kernel(),
            drift_dx: zero_kernel(),
            drift_du: zero_kernel(),
            drift_dtdx: zero_kernel(),
            drift_dtdu: zero_kernel(),
            diffusion: zero_kernel(),
            diffusion_dt: zero_kernel(),
            diffusion_dx: zero_kernel(),
            diffusion_du: zero_kernel(),
            diffusion_dtdx: zero_kernel(),
            diffusion_dtdu: zero_kernel(),
            jump: zero_jump(),
            jump_dt: zero_jump(),
            jump_dx: zero_jump(),
            jump_du: zero_jump(),
            jump_dtdx: zero_jump(),
            jump_dtdu: zero_jump(),
            running: zero_reward(),
            running_dx: zero_reward(),
            running_du: zero_reward(),
            terminal: zero_terminal(),
            terminal_dx: zero_terminal(),
            lipschitz_bound: 1.0,
        }
    }
}

/// Information available to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoMode {
    /// Trivial filtration: one deterministic control for all paths.
    Deterministic,
    /// Full filtration: the control may depend on the driver prefix.
    Full,
}

#[derive(Clone)]
enum ControlLaw {
    Deterministic(Vec<f64>),
    /// `(node index, driver) -> value`; the closure must only read the
    /// driver prefix up to that node (adaptedness is by contract).
    Feedback(Arc<dyn Fn(usize, &DriverPath) -> f64 + Send + Sync>),
}

/// Grid-sampled admissible control with its admissible interval.
///
/// Out-of-range values are an error everywhere; nothing is clamped silently.
#[derive(Clone)]
pub struct ControlPath {
    law: ControlLaw,
    bounds: (f64, f64),
    info_mode: InfoMode,
}

impl ControlPath {
    pub fn from_values(values: Vec<f64>, bounds: (f64, f64)) -> Result<Self> {
        check_bounds(bounds)?;
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < bounds.0 || *v > bounds.1 {
                return Err(Error::invalid(format!(
                    "control value {v} at node {i} outside admissible [{}, {}]",
                    bounds.0, bounds.1
                )));
            }
        }
        Ok(ControlPath {
            law: ControlLaw::Deterministic(values),
            bounds,
            info_mode: InfoMode::Deterministic,
        })
    }

    pub fn constant(value: f64, n_nodes: usize, bounds: (f64, f64)) -> Result<Self> {
        ControlPath::from_values(vec![value; n_nodes], bounds)
    }

    /// Adapted feedback control; values are bound-checked on evaluation.
    pub fn feedback(
        f: Arc<dyn Fn(usize, &DriverPath) -> f64 + Send + Sync>,
        bounds: (f64, f64),
    ) -> Result<Self> {
        check_bounds(bounds)?;
        Ok(ControlPath {
            law: ControlLaw::Feedback(f),
            bounds,
            info_mode: InfoMode::Full,
        })
    }

    pub fn info_mode(&self) -> InfoMode {
        self.info_mode
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    /// Concrete node values for one driver path.
    pub fn realize(&self, n_nodes: usize, driver: &DriverPath) -> Result<Vec<f64>> {
        match &self.law {
            ControlLaw::Deterministic(values) => {
                if values.len() != n_nodes {
                    return Err(Error::invalid(format!(
                        "control has {} nodes, grid needs {n_nodes}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
            ControlLaw::Feedback(f) => {
                let mut out = Vec::with_capacity(n_nodes);
                for i in 0..n_nodes {
                    let v = f(i, driver);
                    if !v.is_finite() || v < self.bounds.0 || v > self.bounds.1 {
                        return Err(Error::invalid(format!(
                            "feedback control value {v} at node {i} outside admissible [{}, {}]",
                            self.bounds.0, self.bounds.1
                        )));
                    }
                    out.push(v);
                }
                Ok(out)
            }
        }
    }

    /// Add per-node offsets (bump perturbations). Deterministic controls are
    /// validated immediately; feedback controls at evaluation time.
    pub fn with_bump(&self, offsets: Arc<Vec<f64>>) -> Result<Self> {
        match &self.law {
            ControlLaw::Deterministic(values) => {
                if values.len() != offsets.len() {
                    return Err(Error::invalid("bump length must match control length"));
                }
                ControlPath::from_values(
                    values.iter().zip(offsets.iter()).map(|(v, o)| v + o).collect(),
                    self.bounds,
                )
            }
            ControlLaw::Feedback(f) => {
                let f = f.clone();
                let mut c = ControlPath::feedback(
                    Arc::new(move |i, d| f(i, d) + offsets[i]),
                    self.bounds,
                )?;
                c.info_mode = self.info_mode;
                Ok(c)
            }
        }
    }

    /// Multiply every node value by `kappa` (common-random-number scans).
    pub fn scaled(&self, kappa: f64) -> Result<Self> {
        match &self.law {
            ControlLaw::Deterministic(values) => {
                ControlPath::from_values(values.iter().map(|v| v * kappa).collect(), self.bounds)
            }
            ControlLaw::Feedback(f) => {
                let f = f.clone();
                let mut c = ControlPath::feedback(
                    Arc::new(move |i, d| kappa * f(i, d)),
                    self.bounds,
                )?;
                c.info_mode = self.info_mode;
                Ok(c)
            }
        }
    }
}

fn check_bounds(bounds: (f64, f64)) -> Result<()> {
    if !(bounds.0 < bounds.1) || !bounds.0.is_finite() || !bounds.1.is_finite() {
        return Err(Error::invalid(format!(
            "admissible interval [{}, {}] must be a finite nonempty interval",
            bounds.0, bounds.1
        )));
    }
    Ok(())
}

/// State values at the grid nodes for one driver path.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub values: Vec<f64>,
}

impl StatePath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Evaluate row `i` of the discretized SVIE given state values at `j < i`.
fn row_value(
    i: usize,
    state: &[f64],
    controls: &[f64],
    coeffs: &VolterraCoefficients,
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> Result<f64> {
    let t_i = grid.node(i);
    let dt = grid.dt();
    let mut x = (coeffs.initial)(t_i);
    for j in 0..i {
        let t_j = grid.node(j);
        let (xj, uj) = (state[j], controls[j]);
        x += (coeffs.drift)(t_i, t_j, xj, uj) * dt;
        x += (coeffs.diffusion)(t_i, t_j, xj, uj) * driver.increments()[j];
        // compensator of the jump integral
        x -= dt * levy.nu_integral(|z| (coeffs.jump)(t_i, t_j, xj, uj, z));
    }
    for jump in driver.jumps() {
        if jump.time > t_i {
            break;
        }
        let j = grid.interval_left_index(jump.time);
        x += (coeffs.jump)(t_i, grid.node(j), state[j], controls[j], jump.mark);
    }
    if !x.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite state at node {i} (t = {t_i})"
        )));
    }
    Ok(x)
}

/// Solve the discretized SVIE by direct triangular substitution.
pub fn direct_solve(
    coeffs: &VolterraCoefficients,
    control: &ControlPath,
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> Result<StatePath> {
    let n = grid.steps();
    let controls = control.realize(n + 1, driver)?;
    let mut values = vec![0.0; n + 1];
    values[0] = (coeffs.initial)(0.0);
    for i in 0..=n {
        values[i] = row_value(i, &values, &controls, coeffs, driver, grid, levy)?;
    }
    Ok(StatePath { values })
}

/// Result of [`picard_solve`].
#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub path: StatePath,
    pub iterations: usize,
    pub sup_gap: f64,
    /// `sup_i |X^{n+1}_i - X^n_i|` for each completed iteration.
    pub gap_history: Vec<f64>,
}

/// Solve the SVIE by Picard iteration from `X^0 = xi`.
///
/// Because row `i` of the map depends only on rows `j < i`, the iteration
/// reaches the exact fixed point of the discrete system in at most `N + 1`
/// sweeps, so `tol = 0` is a valid request.
pub fn picard_solve(
    coeffs: &VolterraCoefficients,
    control: &ControlPath,
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    if tol < 0.0 {
        return Err(Error::invalid("picard tolerance must be >= 0"));
    }
    let n = grid.steps();
    let controls = control.realize(n + 1, driver)?;
    let mut current: Vec<f64> = grid.nodes().iter().map(|&t| (coeffs.initial)(t)).collect();
    let mut gap_history = Vec::new();
    for iteration in 1..=max_iter {
        let mut next = vec![0.0; n + 1];
        for i in 0..=n {
            next[i] = row_value(i, &current, &controls, coeffs, driver, grid, levy)?;
        }
        let gap = current
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        gap_history.push(gap);
        current = next;
        if gap <= tol {
            return Ok(PicardSolution {
                path: StatePath { values: current },
                iterations: iteration,
                sup_gap: gap,
                gap_history,
            });
        }
    }
    Err(Error::PicardDiverged {
        iterations: max_iter,
        gap: *gap_history.last().unwrap_or(&f64::NAN),
    })
}

/// Per-path value of the performance functional
/// `sum_{i<N} f(t_i, X_i, u_i) dt + g(X_N; driver)`.
pub fn performance_on_path(
    coeffs: &VolterraCoefficients,
    control: &ControlPath,
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> Result<f64> {
    let state = direct_solve(coeffs, control, driver, grid, levy)?;
    let controls = control.realize(grid.steps() + 1, driver)?;
    let dt = grid.dt();
    let mut j = 0.0;
    for i in 0..grid.steps() {
        j += (coeffs.running)(grid.node(i), state.values[i], controls[i]) * dt;
    }
    j += (coeffs.terminal)(state.terminal(), driver);
    if !j.is_finite() {
        return Err(Error::numeric("non-finite performance value"));
    }
    Ok(j)
}

/// Monte Carlo estimate of the performance functional over
/// `n_paths` pre-assigned driver streams, reduced in path-index order.
pub fn performance(
    coeffs: &VolterraCoefficients,
    control: &ControlPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    n_paths: u64,
    base_seed: u64,
) -> Result<Estimate> {
    if n_paths < 2 {
        return Err(Error::invalid("performance needs n_paths >= 2"));
    }
    let values = try_par_map_paths(n_paths, |p| {
        let driver = sample_driver(grid, levy, base_seed, p);
        performance_on_path(coeffs, control, &driver, grid, levy)
    })?;
    Ok(mean_se(&values))
}

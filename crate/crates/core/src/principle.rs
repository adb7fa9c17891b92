//! Numerical verification of the maximum principles: bump perturbations,
//! the pathwise derivative process, Gateaux derivatives of the performance
//! functional by two independent routes, conditional gradient residuals and
//! the suboptimality scan.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::driver::{sample_driver, DriverPath, LevyMeasureSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::forward::{direct_solve, performance_on_path, ControlPath, InfoMode, StatePath,
    VolterraCoefficients};
use crate::stats::{mean_se, try_par_map_paths, Estimate};

/// Bump perturbation `beta(s) = eta * 1_{[start, start+width)}(s)`.
///
/// The support is half-open on node level so that the left-endpoint rule
/// integrates `beta` to exactly `eta * width` when the width is a multiple
/// of the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub start: f64,
    pub width: f64,
    pub eta: f64,
}

impl PerturbationSpec {
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if !(self.start >= 0.0) || !(self.width > 0.0) {
            return Err(Error::invalid(
                "perturbation needs start >= 0 and width > 0",
            ));
        }
        if self.start + self.width > grid.horizon() + 1e-12 {
            return Err(Error::invalid(format!(
                "perturbation [{}, {}] leaves the horizon",
                self.start,
                self.start + self.width
            )));
        }
        if !self.eta.is_finite() {
            return Err(Error::invalid("perturbation amplitude must be finite"));
        }
        Ok(())
    }

    /// `beta` sampled at the grid nodes.
    pub fn node_values(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.nodes()
            .iter()
            .map(|&t| {
                if t >= self.start - 1e-12 && t < self.start + self.width - 1e-12 {
                    self.eta
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Pathwise derivative of the state with respect to the perturbation
/// amplitude, at the grid nodes of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativePath {
    pub values: Vec<f64>,
}

impl DerivativePath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Derivative process along one driver path.
///
/// This is the exact derivative of the discrete forward map with respect to
/// the perturbation scale: the same lower-triangular row structure as the
/// state recursion, with the kernels replaced by their `x`/`u` derivatives
/// along the base path.
pub fn derivative_process(
    coeffs: &VolterraCoefficients,
    control: &ControlPath,
    pert: &PerturbationSpec,
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> Result<DerivativePath> {
    pert.validate(grid)?;
    let state = direct_solve(coeffs, control, driver, grid, levy)?;
    derivative_process_with_state(coeffs, control, pert, driver, grid, levy, &state)
}

pub(crate) fn derivative_process_with_state(
    coeffs: &VolterraCoefficients,
    control: &ControlPath,
    pert: &PerturbationSpec,
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    state: &StatePath,
) -> Result<DerivativePath> {
    let n = grid.steps();
    let controls = control.realize(n + 1, driver)?;
    let beta = pert.node_values(grid);
    let dt = grid.dt();
    let mut y = vec![0.0; n + 1];
    for i in 1..=n {
        let t_i = grid.node(i);
        let mut acc = 0.0;
        for j in 0..i {
            let t_j = grid.node(j);
            let (xj, uj) = (state.values[j], controls[j]);
            acc += ((coeffs.drift_dx)(t_i, t_j, xj, uj) * y[j]
                + (coeffs.drift_du)(t_i, t_j, xj, uj) * beta[j])
                * dt;
            acc += ((coeffs.diffusion_dx)(t_i, t_j, xj, uj) * y[j]
                + (coeffs.diffusion_du)(t_i, t_j, xj, uj) * beta[j])
                * driver.increments()[j];
            acc -= dt
                * levy.nu_integral(|z| {
                    (coeffs.jump_dx)(t_i, t_j, xj, uj, z) * y[j]
                        + (coeffs.jump_du)(t_i, t_j, xj, uj, z) * beta[j]
                });
        }
        for jump in driver.jumps() {
            if jump.time > t_i {
                break;
            }
            let l = grid.interval_left_index(jump.time);
            let (xl, ul) = (state.values[l], controls[l]);
            acc += (coeffs.jump_dx)(t_i, grid.node(l), xl, ul, jump.mark) * y[l]
                + (coeffs.jump_du)(t_i, grid.node(l), xl, ul, jump.mark) * beta[l];
        }
        if !acc.is_finite() {
            return Err(Error::numeric("non-finite derivative process value"));
        }
        y[i] = acc;
    }
    Ok(DerivativePath { values: y })
}

/// A Gateaux estimate with the deterministic central-difference remainder
/// bound that applies to the log-utility family (running reward `log u`,
/// terminal reward linear in the state).
#[derive(Debug, Clone, Copy)]
pub struct GateauxEstimate {
    pub estimate: Estimate,
    /// `lambda^2 |eta|^3 width / (3 u_*^3)` with `u_*` the smallest control
    /// value reached on the perturbation window; the exact Taylor remainder
    /// bound of the central difference for `int log(u + lambda beta)`.
    pub taylor_bound: f64,
    /// Smallest control value realized on the perturbation window across
    /// the evaluated paths.
    pub window_u_min: f64,
}

/// Central finite difference `(J(u + lambda beta) - J(u - lambda beta)) / (2 lambda)`
/// with common random numbers: both evaluations reuse the identical driver
/// path before the per-path differences are averaged.
#[allow(clippy::too_many_arguments)]
pub fn gateaux_fd(
    coeffs: &VolterraCoefficients,
    control: &ControlPath,
    pert: &PerturbationSpec,
    lambda: f64,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    n_paths: u64,
    base_seed: u64,
) -> Result<GateauxEstimate> {
    pert.validate(grid)?;
    if !(lambda > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let beta = pert.node_values(grid);
    let up = control.with_bump(Arc::new(beta.iter().map(|b| lambda * b).collect()))?;
    let down = control.with_bump(Arc::new(beta.iter().map(|b| -lambda * b).collect()))?;
    let window: Vec<usize> = beta
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(i, _)| i)
        .collect();
    let per_path: Vec<(f64, f64)> = try_par_map_paths(n_paths, |p| {
        let driver = sample_driver(grid, levy, base_seed, p);
        let j_up = performance_on_path(coeffs, &up, &driver, grid, levy)?;
        let j_down = performance_on_path(coeffs, &down, &driver, grid, levy)?;
        let realized = control.realize(grid.steps() + 1, &driver)?;
        let u_min = window
            .iter()
            .map(|&i| realized[i])
            .fold(f64::INFINITY, f64::min);
        Ok(((j_up - j_down) / (2.0 * lambda), u_min))
    })?;
    let diffs: Vec<f64> = per_path.iter().map(|v| v.0).collect();
    let u_min = per_path.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let u_star = u_min - lambda * pert.eta.abs();
    let taylor_bound = if u_star > 0.0 {
        lambda * lambda * pert.eta.abs().powi(3) * pert.width / (3.0 * u_star.powi(3))
    } else {
        f64::INFINITY
    };
    Ok(GateauxEstimate {
        estimate: mean_se(&diffs),
        taylor_bound,
        window_u_min: u_min,
    })
}

/// Gateaux derivative through the derivative process:
/// `E[ sum_i (f_x Y_i + f_u beta_i) dt + g'(X_N) Y_N ]`.
pub fn gateaux_via_y(
    coeffs: &VolterraCoefficients,
    control: &ControlPath,
    pert: &PerturbationSpec,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    n_paths: u64,
    base_seed: u64,
) -> Result<Estimate> {
    pert.validate(grid)?;
    let beta = pert.node_values(grid);
    let dt = grid.dt();
    let values = try_par_map_paths(n_paths, |p| {
        let driver = sample_driver(grid, levy, base_seed, p);
        let state = direct_solve(coeffs, control, &driver, grid, levy)?;
        let y = derivative_process_with_state(coeffs, control, pert, &driver, grid, levy, &state)?;
        let controls = control.realize(grid.steps() + 1, &driver)?;
        let mut acc = 0.0;
        for i in 0..grid.steps() {
            let t = grid.node(i);
            acc += ((coeffs.running_dx)(t, state.values[i], controls[i]) * y.values[i]
                + (coeffs.running_du)(t, state.values[i], controls[i]) * beta[i])
                * dt;
        }
        acc += (coeffs.terminal_dx)(state.terminal(), &driver) * y.terminal();
        Ok(acc)
    })?;
    Ok(mean_se(&values))
}

/// Monte Carlo estimate of the conditional Hamiltonian gradient residual
/// `E[dH/du(t) | G_t]` at the candidate control.
///
/// * trivial information: the plain mean over paths;
/// * full information: the residual is measurable per path, so the mean of
///   absolute values is reported as a residual norm.
pub fn hamiltonian_gradient_residual(
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    n_paths: u64,
    base_seed: u64,
    info_mode: InfoMode,
    dh_du: &(dyn Fn(&DriverPath) -> Result<f64> + Sync),
) -> Result<Estimate> {
    let values = try_par_map_paths(n_paths, |p| {
        let driver = sample_driver(grid, levy, base_seed, p);
        let v = dh_du(&driver)?;
        Ok(match info_mode {
            InfoMode::Deterministic => v,
            InfoMode::Full => v.abs(),
        })
    })?;
    Ok(mean_se(&values))
}

/// One row of the suboptimality scan.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanRow {
    pub kappa: f64,
    pub j: f64,
    pub se: f64,
}

/// Evaluate `J(kappa * u)` for each multiplier with common random numbers
/// (the same driver streams for every row).
#[allow(clippy::too_many_arguments)]
pub fn sufficiency_scan(
    coeffs: &VolterraCoefficients,
    control: &ControlPath,
    multipliers: &[f64],
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    n_paths: u64,
    base_seed: u64,
) -> Result<Vec<ScanRow>> {
    let mut rows = Vec::with_capacity(multipliers.len());
    for &kappa in multipliers {
        let scaled = control.scaled(kappa)?;
        let values = try_par_map_paths(n_paths, |p| {
            let driver = sample_driver(grid, levy, base_seed, p);
            performance_on_path(coeffs, &scaled, &driver, grid, levy)
        })?;
        let est = mean_se(&values);
        rows.push(ScanRow {
            kappa,
            j: est.value,
            se: est.std_error,
        });
    }
    Ok(rows)
}

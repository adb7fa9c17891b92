//! Hamiltonian evaluation, the expanded adjoint driver, the closed-form
//! adjoint of the linear cash-flow model, and representation components
//! (with a Monte Carlo covariance witness) for catalog cases.

use crate::driver::{sample_driver, DriverPath, LevyMeasureSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::forward::VolterraCoefficients;
use crate::measure::{
    conditional_expectation_q, CondMethod, GirsanovSpec, StreamKey, ThetaSpec, VolLoading,
};
use crate::stats::{mean_se, par_map_paths, Estimate};

/// Generic Hamiltonian arguments at base time `t = t_{t_index}`.
///
/// Tail slices run over `s = t..T` (index 0 is the diagonal at `t`). The
/// per-mark jump rows follow the mark order of the Lévy spec.
#[derive(Debug, Clone)]
pub struct HamiltonianInputs {
    pub t_index: usize,
    pub x: f64,
    pub v: f64,
    /// `p(s)`, `s >= t`.
    pub p_tail: Vec<f64>,
    /// `q(s, t)`, `s >= t`; entry 0 is `q(t, t)`.
    pub q_row_tail: Vec<f64>,
    /// `r(s, t, mark_k)`, `s >= t`, per mark.
    pub r_row_tail: Vec<Vec<f64>>,
    /// `q(s, s)`, `s >= t` (used by the expanded driver form).
    pub q_diag_tail: Vec<f64>,
    /// `r(s, s, mark_k)`, `s >= t`.
    pub r_diag_tail: Vec<Vec<f64>>,
}

impl HamiltonianInputs {
    /// Inputs with vanishing martingale components (deterministic adjoint).
    pub fn deterministic(
        t_index: usize,
        x: f64,
        v: f64,
        p_tail: Vec<f64>,
        n_marks: usize,
    ) -> Self {
        let len = p_tail.len();
        HamiltonianInputs {
            t_index,
            x,
            v,
            p_tail,
            q_row_tail: vec![0.0; len],
            r_row_tail: vec![vec![0.0; n_marks]; len],
            q_diag_tail: vec![0.0; len],
            r_diag_tail: vec![vec![0.0; n_marks]; len],
        }
    }
}

fn mark_sum(levy: &LevyMeasureSpec, r_at: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    levy.intensity()
        * levy
            .marks()
            .iter()
            .enumerate()
            .map(|(k, atom)| atom.probability * r_at[k] * f(atom.mark))
            .sum::<f64>()
}

fn trapezoid_tail(values: impl Fn(usize) -> f64, len: usize, dt: f64) -> f64 {
    if len < 2 {
        return 0.0;
    }
    let mut acc = 0.5 * (values(0) + values(len - 1));
    for k in 1..len - 1 {
        acc += values(k);
    }
    acc * dt
}

/// Pointwise Hamiltonian term
/// `H0 = f(t,x,v) + p(t) b(t,t,x,v) + q(t,t) sigma(t,t,x,v)
///  + int r(t,t,z) gamma(t,t,x,v,z) nu(dz)`.
pub fn hamiltonian_h0(
    inputs: &HamiltonianInputs,
    coeffs: &VolterraCoefficients,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> f64 {
    let t = grid.node(inputs.t_index);
    let (x, v) = (inputs.x, inputs.v);
    (coeffs.running)(t, x, v)
        + inputs.p_tail[0] * (coeffs.drift)(t, t, x, v)
        + inputs.q_row_tail[0] * (coeffs.diffusion)(t, t, x, v)
        + mark_sum(levy, &inputs.r_row_tail[0], |z| (coeffs.jump)(t, t, x, v, z))
}

/// Memory Hamiltonian term: trapezoid over `s in [t, T]` of
/// `p(s) db/ds(s,t,x,v) + q(s,t) dsigma/ds(s,t,x,v)
///  + int r(s,t,z) dgamma/ds(s,t,x,v,z) nu(dz)`.
pub fn hamiltonian_h1(
    inputs: &HamiltonianInputs,
    coeffs: &VolterraCoefficients,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> f64 {
    let t = grid.node(inputs.t_index);
    let (x, v) = (inputs.x, inputs.v);
    let len = inputs.p_tail.len();
    trapezoid_tail(
        |k| {
            let s = grid.node(inputs.t_index + k);
            inputs.p_tail[k] * (coeffs.drift_dt)(s, t, x, v)
                + inputs.q_row_tail[k] * (coeffs.diffusion_dt)(s, t, x, v)
                + mark_sum(levy, &inputs.r_row_tail[k], |z| {
                    (coeffs.jump_dt)(s, t, x, v, z)
                })
        },
        len,
        grid.dt(),
    )
}

/// Full Hamiltonian `H = H0 + H1`.
pub fn hamiltonian(
    inputs: &HamiltonianInputs,
    coeffs: &VolterraCoefficients,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> f64 {
    hamiltonian_h0(inputs, coeffs, grid, levy) + hamiltonian_h1(inputs, coeffs, grid, levy)
}

/// Pointwise adjoint driver `dH/dx` at base time `t`:
///
/// ```text
/// dH/dx(t) = f_x(t,x,v) + p(t) b_x(t,t,x,v) + q(t,t) sigma_x(t,t,x,v)
///          + int r(t,t,z) gamma_x(t,t,x,v,z) nu(dz)
///          + int_t^T [ p(s) d2b/dsdx(s,t,x,v) + q(s,t) d2sigma/dsdx(s,t,x,v)
///                      + int r(s,t,z) d2gamma/dsdx(s,t,x,v,z) nu(dz) ] ds
/// ```
///
/// The history integral carries the mixed second derivatives of the kernels;
/// it vanishes for kernels without memory in the first argument, reducing
/// the driver to the diagonal-only derivative of `H0`.
pub fn adjoint_driver_dhdx(
    inputs: &HamiltonianInputs,
    coeffs: &VolterraCoefficients,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> f64 {
    let t = grid.node(inputs.t_index);
    let (x, v) = (inputs.x, inputs.v);
    let diagonal = (coeffs.running_dx)(t, x, v)
        + inputs.p_tail[0] * (coeffs.drift_dx)(t, t, x, v)
        + inputs.q_row_tail[0] * (coeffs.diffusion_dx)(t, t, x, v)
        + mark_sum(levy, &inputs.r_row_tail[0], |z| {
            (coeffs.jump_dx)(t, t, x, v, z)
        });
    let len = inputs.p_tail.len();
    let history = trapezoid_tail(
        |k| {
            let s = grid.node(inputs.t_index + k);
            inputs.p_tail[k] * (coeffs.drift_dtdx)(s, t, x, v)
                + inputs.q_row_tail[k] * (coeffs.diffusion_dtdx)(s, t, x, v)
                + mark_sum(levy, &inputs.r_row_tail[k], |z| {
                    (coeffs.jump_dtdx)(s, t, x, v, z)
                })
        },
        len,
        grid.dt(),
    );
    diagonal + history
}

/// The time-integrated driver `int_t^T dH/dx(s) ds` in its expanded form,
/// where the inner memory integrals have been collapsed by Fubini into
/// `(s - t)`-weighted mixed derivatives:
///
/// ```text
/// int_t^T { f_x(s,x,v) + p(s) [ b_x(s,s,x,v) + (s-t) d2b/dsdx(s,t,x,v) ]
///         + q(s,s) sigma_x(s,s,x,v) + (s-t) q(s,t) d2sigma/dsdx(s,t,x,v)
///         + int [ r(s,s,z) gamma_x(s,s,x,v,z)
///                 + (s-t) r(s,t,z) d2gamma/dsdx(s,t,x,v,z) ] nu(dz) } ds
/// ```
///
/// The collapse step is exact only when the mixed derivatives do not depend
/// on their second argument; see the tests for the matching case.
pub fn integrated_driver_expanded(
    inputs: &HamiltonianInputs,
    coeffs: &VolterraCoefficients,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> f64 {
    let t = grid.node(inputs.t_index);
    let (x, v) = (inputs.x, inputs.v);
    let len = inputs.p_tail.len();
    trapezoid_tail(
        |k| {
            let s = grid.node(inputs.t_index + k);
            let w = s - t;
            (coeffs.running_dx)(s, x, v)
                + inputs.p_tail[k]
                    * ((coeffs.drift_dx)(s, s, x, v) + w * (coeffs.drift_dtdx)(s, t, x, v))
                + inputs.q_diag_tail[k] * (coeffs.diffusion_dx)(s, s, x, v)
                + w * inputs.q_row_tail[k] * (coeffs.diffusion_dtdx)(s, t, x, v)
                + mark_sum(levy, &inputs.r_diag_tail[k], |z| {
                    (coeffs.jump_dx)(s, s, x, v, z)
                })
                + w * mark_sum(levy, &inputs.r_row_tail[k], |z| {
                    (coeffs.jump_dtdx)(s, t, x, v, z)
                })
        },
        len,
        grid.dt(),
    )
}

/// Strictly lower-triangular table over grid nodes: `rows[i]` holds entries
/// for second index `j = 0..i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    rows: Vec<Vec<f64>>,
}

impl LowerTriangular {
    pub fn zeros(n_nodes: usize) -> Self {
        LowerTriangular {
            rows: (0..n_nodes).map(|i| vec![0.0; i]).collect(),
        }
    }

    pub fn from_fn(n_nodes: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        LowerTriangular {
            rows: (0..n_nodes)
                .map(|i| (0..i).map(|j| f(i, j)).collect())
                .collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.rows.len()
    }

    /// Entry `(t_i, t_j)`, `j < i`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|v| *v == 0.0))
    }
}

/// Solution of the adjoint equation along one driver path.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// `p_hat(t_i)` at every node.
    pub p_hat: Vec<f64>,
    /// Standard errors of the nested estimates (zero for analytic).
    pub p_hat_se: Vec<f64>,
    /// Analytic `q_hat(t_i, t_j)` where available (catalog cases only).
    pub q_hat: Option<LowerTriangular>,
    /// Analytic `r_hat(t_i, t_j, mark_k)` per mark where available.
    pub r_hat: Option<Vec<LowerTriangular>>,
}

/// Closed-form adjoint of the linear memory model:
/// `p_hat(t_i) = E_Q[theta | F_{t_i}] * kappa(t_i)` with `kappa` from the
/// resolvent factor. The terminal value is `theta` itself on every path.
#[allow(clippy::too_many_arguments)]
pub fn linear_adjoint_solve(
    theta: &ThetaSpec,
    girsanov: &GirsanovSpec,
    kappa: &[f64],
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    method: CondMethod,
    key: StreamKey,
) -> Result<AdjointSolution> {
    let n = grid.steps();
    if kappa.len() != n + 1 {
        return Err(Error::invalid("kappa length must match the grid"));
    }
    let mut p_hat = Vec::with_capacity(n + 1);
    let mut p_hat_se = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let est = conditional_expectation_q(theta, girsanov, i, driver, grid, levy, method, key)?;
        p_hat.push(est.value * kappa[i]);
        p_hat_se.push(est.std_error * kappa[i]);
    }
    Ok(AdjointSolution {
        p_hat,
        p_hat_se,
        q_hat: None,
        r_hat: None,
    })
}

/// [`linear_adjoint_solve`] plus the analytic representation components
/// where the catalog provides them (`None` otherwise). The tables cost a
/// full triangle per path, so the lean solver stays the default.
#[allow(clippy::too_many_arguments)]
pub fn linear_adjoint_solve_with_representation(
    theta: &ThetaSpec,
    girsanov: &GirsanovSpec,
    kappa: &[f64],
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    method: CondMethod,
    key: StreamKey,
) -> Result<AdjointSolution> {
    let mut solution = linear_adjoint_solve(theta, girsanov, kappa, driver, grid, levy, method, key)?;
    if let Ok((q_hat, r_hat)) = representation_components(theta, girsanov, kappa, driver, grid, levy)
    {
        solution.q_hat = Some(q_hat);
        solution.r_hat = Some(r_hat);
    }
    Ok(solution)
}

/// Analytic representation components for catalog cases.
///
/// * constant theta: deterministic adjoint, `q_hat = r_hat = 0`;
/// * `theta = exp(a B(T) - a^2 T/2)` with constant `sigma0`:
///   `q_hat(t, s) = a kappa(t) e^{a sigma0 (T - t)} exp(a B(s) - a^2 s / 2)`
///   and `r_hat = 0` (theta carries no jump dependence).
pub fn representation_components(
    theta: &ThetaSpec,
    girsanov: &GirsanovSpec,
    kappa: &[f64],
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> Result<(LowerTriangular, Vec<LowerTriangular>)> {
    let n_nodes = grid.steps() + 1;
    let zeros_r = || vec![LowerTriangular::zeros(n_nodes); levy.marks().len()];
    match theta {
        ThetaSpec::Constant { .. } => Ok((LowerTriangular::zeros(n_nodes), zeros_r())),
        ThetaSpec::ExpMartingale { a } => {
            let a = *a;
            let big_t = grid.horizon();
            let q = LowerTriangular::from_fn(n_nodes, |i, j| {
                let t = grid.node(i);
                let s = grid.node(j);
                let amp = kappa[i] * (a * girsanov.sigma0.integral(t, big_t)).exp();
                a * amp * (a * driver.brownian_at(j) - 0.5 * a * a * s).exp()
            });
            Ok((q, zeros_r()))
        }
        other => Err(Error::invalid(format!(
            "no analytic representation components for theta {other:?}"
        ))),
    }
}

/// Result of the covariance witness for the representation component.
#[derive(Debug, Clone, Copy)]
pub struct QhatProbe {
    /// `Cov(p_hat(t), dB_j) / dt` estimated over paths.
    pub covariance_over_dt: Estimate,
    /// Sample mean of the analytic `q_hat(t, t_j)` over the same paths.
    pub analytic: Estimate,
}

/// Monte Carlo witness of `q_hat(t, s) ~ Cov(p_hat(t), dB_j)/dt`.
#[allow(clippy::too_many_arguments)]
pub fn qhat_covariance_probe(
    theta: &ThetaSpec,
    girsanov: &GirsanovSpec,
    kappa: &[f64],
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    t_index: usize,
    s_index: usize,
    n_paths: u64,
    base_seed: u64,
) -> Result<QhatProbe> {
    if s_index >= t_index {
        return Err(Error::invalid("probe needs s < t"));
    }
    let pairs: Vec<(f64, f64, f64)> = par_map_paths(n_paths, |p| {
        let driver = sample_driver(grid, levy, base_seed, p);
        let p_hat =
            theta.conditional_q_analytic(girsanov, t_index, &driver, grid, levy) * kappa[t_index];
        let db = driver.increments()[s_index];
        let (q_hat, _) =
            representation_components(theta, girsanov, kappa, &driver, grid, levy).unwrap();
        (p_hat, db, q_hat.get(t_index, s_index))
    });
    let n = pairs.len() as f64;
    let mean_p = pairs.iter().map(|v| v.0).sum::<f64>() / n;
    let mean_db = pairs.iter().map(|v| v.1).sum::<f64>() / n;
    let dt = grid.dt();
    // per-path covariance contributions; their mean/sd give the estimate
    let contrib: Vec<f64> = pairs
        .iter()
        .map(|(p, db, _)| (p - mean_p) * (db - mean_db) / dt)
        .collect();
    let cov = mean_se(&contrib);
    let analytic = mean_se(&pairs.iter().map(|v| v.2).collect::<Vec<_>>());
    Ok(QhatProbe {
        covariance_over_dt: cov,
        analytic,
    })
}

/// Finite-difference t-smoothness diagnostic: max over the triangle of
/// `|(v(t_{i+1}, s_j) - v(t_i, s_j)) / dt|`. Diagnostic only.
pub fn a2_smoothness_probe(table: &LowerTriangular, grid: &TimeGrid) -> f64 {
    let dt = grid.dt();
    let n_nodes = table.n_nodes();
    let mut max_fd: f64 = 0.0;
    for i in 0..n_nodes.saturating_sub(1) {
        for j in 0..i {
            let fd = (table.get(i + 1, j) - table.get(i, j)).abs() / dt;
            max_fd = max_fd.max(fd);
        }
    }
    max_fd
}

/// Convenience: `E_Q[theta|F_t]`-free deterministic kappa for zero kernels
/// (used in tests and the FFI layer).
pub fn unit_kappa(grid: &TimeGrid) -> Vec<f64> {
    vec![1.0; grid.steps() + 1]
}

/// Constant-sigma helper mirroring the catalog (`VolLoading::Constant`).
pub fn constant_vol(value: f64) -> VolLoading {
    if value == 0.0 {
        VolLoading::Zero
    } else {
        VolLoading::Constant { value }
    }
}

//! Jump-diffusion change-of-measure machinery: the Doléans-Dade exponential,
//! the shifted driver under the equivalent measure Q, and Bayes-rule
//! conditional expectations `E_Q[theta | F_t]`.

use serde::{Deserialize, Serialize};

use crate::driver::{derive_stream, sample_increments, sample_jumps, DriverPath, Jump,
    LevyMeasureSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::stats::Estimate;

/// Weight path `M(t_i)` for one driver realization; `M_0 = 1` and every
/// value is positive whenever `gamma0 > -1` on all marks.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureWeightPath {
    log_values: Vec<f64>,
}

impl MeasureWeightPath {
    pub fn value(&self, i: usize) -> f64 {
        self.log_values[i].exp()
    }

    pub fn log_value(&self, i: usize) -> f64 {
        self.log_values[i]
    }

    pub fn terminal(&self) -> f64 {
        self.log_values.last().unwrap().exp()
    }

    pub fn len(&self) -> usize {
        self.log_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_values.is_empty()
    }
}

/// Doléans-Dade exponential of the Girsanov kernel `(sigma0, gamma0)`,
/// accumulated in log space for positivity and overflow safety:
///
/// ```text
/// log M_i = sum_{j<i} sigma0(t_j) dB_j - 1/2 sum_{j<i} sigma0^2(t_j) dt
///         + sum_{jumps <= t_i} ln(1 + gamma0(t_left, mark))
///         - dt sum_{j<i} nu(gamma0(t_j, .))
/// ```
///
/// The last two terms are the compensated jump integral of `ln(1+gamma0)`
/// combined with the `ln(1+gamma0) - gamma0` compensator correction, which
/// makes `M` a unit-mean martingale.
pub fn doleans_exponential(
    sigma0: &(dyn Fn(f64) -> f64 + Sync),
    gamma0: &(dyn Fn(f64, f64) -> f64 + Sync),
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
) -> Result<MeasureWeightPath> {
    let n = grid.steps();
    let dt = grid.dt();
    // Domain check on the whole node/mark lattice, not just visited jumps.
    for i in 0..=n {
        for atom in levy.marks() {
            if gamma0(grid.node(i), atom.mark) <= -1.0 {
                return Err(Error::invalid(format!(
                    "gamma0({}, {}) <= -1 leaves the Doléans-Dade domain",
                    grid.node(i),
                    atom.mark
                )));
            }
        }
    }
    let mut log_values = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    log_values.push(0.0);
    let mut jump_iter = driver.jumps().iter().peekable();
    for j in 0..n {
        let t_j = grid.node(j);
        let s = sigma0(t_j);
        acc += s * driver.increments()[j] - 0.5 * s * s * dt;
        acc -= dt * levy.nu_integral(|z| gamma0(t_j, z));
        // jumps in (t_j, t_{j+1}] evaluated at the interval's left endpoint
        while let Some(jump) = jump_iter.peek() {
            if jump.time <= grid.node(j + 1) {
                let left = grid.node(grid.interval_left_index(jump.time));
                acc += (1.0 + gamma0(left, jump.mark)).ln();
                jump_iter.next();
            } else {
                break;
            }
        }
        if !acc.is_finite() {
            return Err(Error::numeric("non-finite Doléans-Dade exponent"));
        }
        log_values.push(acc);
    }
    Ok(MeasureWeightPath { log_values })
}

/// Driver path as seen under Q: increments shifted by `-sigma0(t_j) dt`
/// (jump events unchanged; the Q-compensator is [`q_nu_integral`]).
pub fn q_shifted_driver(
    driver: &DriverPath,
    sigma0: &(dyn Fn(f64) -> f64 + Sync),
    grid: &TimeGrid,
) -> DriverPath {
    let dt = grid.dt();
    let increments = driver
        .increments()
        .iter()
        .enumerate()
        .map(|(j, db)| db - sigma0(grid.node(j)) * dt)
        .collect();
    DriverPath::from_parts(increments, driver.jumps().to_vec())
}

/// Q-compensator integral at time `s`:
/// `int kernel(z) nu_Q(dz) = int kernel(z) (1 + gamma0(s,z)) nu(dz)`.
pub fn q_nu_integral(
    levy: &LevyMeasureSpec,
    gamma0: &(dyn Fn(f64, f64) -> f64 + Sync),
    s: f64,
    kernel: impl Fn(f64) -> f64,
) -> f64 {
    levy.nu_integral(|z| (1.0 + gamma0(s, z)) * kernel(z))
}

/// Deterministic Girsanov kernel catalog (serializable for configs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolLoading {
    Zero,
    Constant { value: f64 },
}

impl VolLoading {
    pub fn eval(&self, _s: f64) -> f64 {
        match self {
            VolLoading::Zero => 0.0,
            VolLoading::Constant { value } => *value,
        }
    }

    /// `int_a^b sigma0(s) ds`, exact for this catalog.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            VolLoading::Zero => 0.0,
            VolLoading::Constant { value } => value * (b - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpLoading {
    Zero,
    /// `gamma0(s, z) = scale * z`, constant in time.
    MarkProportional { scale: f64 },
}

impl JumpLoading {
    pub fn eval(&self, _s: f64, z: f64) -> f64 {
        match self {
            JumpLoading::Zero => 0.0,
            JumpLoading::MarkProportional { scale } => scale * z,
        }
    }
}

/// The Girsanov kernel pair defining `dQ = M(T) dP`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GirsanovSpec {
    pub sigma0: VolLoading,
    pub gamma0: JumpLoading,
}

impl GirsanovSpec {
    pub fn identity() -> Self {
        GirsanovSpec {
            sigma0: VolLoading::Zero,
            gamma0: JumpLoading::Zero,
        }
    }

    pub fn weight_path(
        &self,
        driver: &DriverPath,
        grid: &TimeGrid,
        levy: &LevyMeasureSpec,
    ) -> Result<MeasureWeightPath> {
        let s = self.sigma0;
        let g = self.gamma0;
        doleans_exponential(
            &move |t| s.eval(t),
            &move |t, z| g.eval(t, z),
            driver,
            grid,
            levy,
        )
    }
}

/// Terminal functionals with closed-form conditional expectations under Q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaSpec {
    Constant { value: f64 },
    /// `exp(a B(T) - a^2 T / 2)`
    ExpMartingale { a: f64 },
    /// `intercept + slope * B(T)`
    AffineBrownian { intercept: f64, slope: f64 },
    /// `intercept + slope * int_0^T int z Ntilde(ds, dz)`
    AffineJump { intercept: f64, slope: f64 },
}

impl ThetaSpec {
    /// Evaluate the functional on a full driver path.
    pub fn eval(&self, driver: &DriverPath, grid: &TimeGrid, levy: &LevyMeasureSpec) -> f64 {
        self.eval_terminal(driver, grid.horizon(), levy)
    }

    /// Grid-free evaluation: only the horizon and the full driver matter.
    pub fn eval_terminal(&self, driver: &DriverPath, horizon: f64, levy: &LevyMeasureSpec) -> f64 {
        let n = driver.increments().len();
        match self {
            ThetaSpec::Constant { value } => *value,
            ThetaSpec::ExpMartingale { a } => {
                (a * driver.brownian_at(n) - 0.5 * a * a * horizon).exp()
            }
            ThetaSpec::AffineBrownian { intercept, slope } => {
                intercept + slope * driver.brownian_at(n)
            }
            ThetaSpec::AffineJump { intercept, slope } => {
                intercept + slope * compensated_mark_integral(driver, horizon, levy)
            }
        }
    }

    /// Whether the functional is almost surely positive (required for the
    /// full-information optimal consumption rate).
    pub fn is_positive_as(&self) -> bool {
        match self {
            ThetaSpec::Constant { value } => *value > 0.0,
            ThetaSpec::ExpMartingale { .. } => true,
            ThetaSpec::AffineBrownian { .. } | ThetaSpec::AffineJump { .. } => false,
        }
    }

    /// Closed-form `E_Q[theta | F_{t_i}]` evaluated on the driver prefix.
    ///
    /// Under Q, `B_Q(t) = B(t) - int_0^t sigma0` is a Brownian motion and the
    /// jump compensator becomes `(1 + gamma0) nu`, which gives for each
    /// catalog entry a Gaussian/compound-Poisson conditional expectation.
    pub fn conditional_q_analytic(
        &self,
        girsanov: &GirsanovSpec,
        i: usize,
        driver: &DriverPath,
        grid: &TimeGrid,
        levy: &LevyMeasureSpec,
    ) -> f64 {
        let t = grid.node(i);
        let big_t = grid.horizon();
        match self {
            ThetaSpec::Constant { value } => *value,
            ThetaSpec::ExpMartingale { a } => {
                // theta = exp(a B(T) - a^2 T/2) with
                // B(T) = B(t) + (B_Q(T) - B_Q(t)) + int_t^T sigma0
                let drift_tail = girsanov.sigma0.integral(t, big_t);
                (a * driver.brownian_at(i) - 0.5 * a * a * big_t
                    + a * drift_tail
                    + 0.5 * a * a * (big_t - t))
                    .exp()
            }
            ThetaSpec::AffineBrownian { intercept, slope } => {
                intercept + slope * (driver.brownian_at(i) + girsanov.sigma0.integral(t, big_t))
            }
            ThetaSpec::AffineJump { intercept, slope } => {
                // prefix of the compensated integral is F_t-measurable; the
                // Q-mean of the tail is int_t^T int z gamma0(s,z) nu(dz) ds
                let prefix = compensated_mark_integral_prefix(driver, t, levy);
                let g = girsanov.gamma0;
                let tail = (big_t - t) * levy.nu_integral(|z| z * g.eval(t, z));
                intercept + slope * (prefix + tail)
            }
        }
    }

    /// Unconditional mean `E_P[ E_Q[theta | F_{t_i}] ]` (closed form).
    pub fn mean_conditional_q(
        &self,
        girsanov: &GirsanovSpec,
        i: usize,
        grid: &TimeGrid,
        levy: &LevyMeasureSpec,
    ) -> f64 {
        let t = grid.node(i);
        let big_t = grid.horizon();
        match self {
            ThetaSpec::Constant { value } => *value,
            ThetaSpec::ExpMartingale { a } => {
                // E_P[exp(a B(t))] = exp(a^2 t / 2)
                let drift_tail = girsanov.sigma0.integral(t, big_t);
                (a * drift_tail + 0.5 * a * a * (big_t - t) + 0.5 * a * a * t
                    - 0.5 * a * a * big_t)
                    .exp()
            }
            ThetaSpec::AffineBrownian { intercept, slope } => {
                intercept + slope * girsanov.sigma0.integral(t, big_t)
            }
            ThetaSpec::AffineJump { intercept, slope } => {
                let g = girsanov.gamma0;
                intercept + slope * (big_t - t) * levy.nu_integral(|z| z * g.eval(t, z))
            }
        }
    }
}

/// `int_0^T int z Ntilde(ds, dz)` on one path.
pub fn compensated_mark_integral(driver: &DriverPath, horizon: f64, levy: &LevyMeasureSpec) -> f64 {
    driver.jumps().iter().map(|j| j.mark).sum::<f64>() - horizon * levy.nu_integral(|z| z)
}

fn compensated_mark_integral_prefix(driver: &DriverPath, t: f64, levy: &LevyMeasureSpec) -> f64 {
    driver
        .jumps()
        .iter()
        .take_while(|j| j.time <= t)
        .map(|j| j.mark)
        .sum::<f64>()
        - t * levy.nu_integral(|z| z)
}

/// Estimation method for `E_Q[theta | F_t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum CondMethod {
    /// Closed form; only valid for catalog theta.
    Analytic,
    /// Nested Monte Carlo: resimulate `branches` driver suffixes from `t`
    /// with the frozen prefix and return the Bayes ratio of weighted means.
    Nested { branches: u64 },
}

/// Identifies the nested-branch stream family for one outer path.
#[derive(Debug, Clone, Copy)]
pub struct StreamKey {
    pub base_seed: u64,
    pub path_index: u64,
}

/// `E_Q[theta | F_{t_i}]` for one driver prefix.
///
/// The Bayes ratio `E[M(T) theta | F_t] / E[M(T) | F_t]` only involves the
/// suffix weight `M(T)/M(t)`, so branches resimulate `(t, T]` and weight by
/// the suffix exponent alone. Returns the estimate with a delta-method
/// standard error (zero for the analytic branch).
pub fn conditional_expectation_q(
    theta: &ThetaSpec,
    girsanov: &GirsanovSpec,
    i: usize,
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    method: CondMethod,
    key: StreamKey,
) -> Result<Estimate> {
    match method {
        CondMethod::Analytic => Ok(Estimate::exact(
            theta.conditional_q_analytic(girsanov, i, driver, grid, levy),
        )),
        CondMethod::Nested { branches } => {
            if branches < 2 {
                return Err(Error::invalid("nested estimator needs >= 2 branches"));
            }
            nested_conditional(theta, girsanov, i, driver, grid, levy, branches, key)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn nested_conditional(
    theta: &ThetaSpec,
    girsanov: &GirsanovSpec,
    i: usize,
    driver: &DriverPath,
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    branches: u64,
    key: StreamKey,
) -> Result<Estimate> {
    let n = grid.steps();
    let t = grid.node(i);
    let dt = grid.dt();
    let mut weighted = Vec::with_capacity(branches as usize);
    let mut weights = Vec::with_capacity(branches as usize);
    let prefix: Vec<f64> = driver.increments()[..i].to_vec();
    let prefix_jumps: Vec<Jump> = driver
        .jumps()
        .iter()
        .copied()
        .take_while(|j| j.time <= t)
        .collect();
    for b in 0..branches {
        let mut rng = derive_stream(key.base_seed, &[key.path_index, i as u64, b]);
        // fresh suffix increments and jumps on (t, T]
        let mut increments = prefix.clone();
        let sqrt_dt = dt.sqrt();
        for _ in i..n {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            increments.push(z * sqrt_dt);
        }
        let mut jumps = prefix_jumps.clone();
        jumps.extend(sample_jumps(levy, t, grid.horizon(), &mut rng));
        let branch_driver = DriverPath::from_parts(increments, jumps);
        // suffix weight M(T)/M(t): difference of log weights
        let m = girsanov.weight_path(&branch_driver, grid, levy)?;
        let w = (m.log_value(n) - m.log_value(i)).exp();
        let th = theta.eval(&branch_driver, grid, levy);
        weighted.push(w * th);
        weights.push(w);
    }
    let mean_num = weighted.iter().sum::<f64>() / branches as f64;
    let mean_den = weights.iter().sum::<f64>() / branches as f64;
    if mean_den <= 0.0 || !mean_den.is_finite() {
        return Err(Error::numeric("degenerate weight mean in nested estimator"));
    }
    let ratio = mean_num / mean_den;
    // delta method: Var(ratio) ~ Var(num - ratio * den) / (n * den_mean^2)
    let resid_var = weighted
        .iter()
        .zip(&weights)
        .map(|(a, w)| {
            let r = a - ratio * w;
            r * r
        })
        .sum::<f64>()
        / (branches as f64 - 1.0);
    let se = (resid_var / branches as f64).sqrt() / mean_den;
    Ok(Estimate {
        value: ratio,
        std_error: se,
    })
}

/// Fresh increment streams for the moment tests; exposed for reuse in tests.
pub fn sample_brownian_only(grid: &TimeGrid, base_seed: u64, path_index: u64) -> DriverPath {
    let mut rng = derive_stream(base_seed, &[path_index]);
    DriverPath::from_parts(sample_increments(grid, &mut rng), Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{sample_driver, MarkAtom};
    use crate::stats::{mean_se, par_map_paths};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::make(1.0, n).unwrap()
    }

    fn symmetric_levy(intensity: f64) -> LevyMeasureSpec {
        LevyMeasureSpec::new(
            intensity,
            vec![
                MarkAtom {
                    mark: -0.5,
                    probability: 0.5,
                },
                MarkAtom {
                    mark: 0.5,
                    probability: 0.5,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_gives_unit_weight() {
        let g = grid(16);
        let levy = symmetric_levy(1.0);
        let d = sample_driver(&g, &levy, 3, 0);
        let m = GirsanovSpec::identity().weight_path(&d, &g, &levy).unwrap();
        for i in 0..m.len() {
            assert_eq!(m.value(i), 1.0);
        }
    }

    #[test]
    fn gamma_below_minus_one_is_rejected() {
        let g = grid(8);
        let levy = symmetric_levy(1.0);
        let d = sample_driver(&g, &levy, 3, 0);
        let bad = GirsanovSpec {
            sigma0: VolLoading::Zero,
            gamma0: JumpLoading::MarkProportional { scale: 2.5 },
        };
        assert!(bad.weight_path(&d, &g, &levy).is_err());
    }

    #[test]
    fn brownian_weight_is_unit_mean() {
        let g = grid(16);
        let levy = LevyMeasureSpec::none();
        let spec = GirsanovSpec {
            sigma0: VolLoading::Constant { value: 0.3 },
            gamma0: JumpLoading::Zero,
        };
        let ms = par_map_paths(100_000, |p| {
            let d = sample_driver(&g, &levy, 100, p);
            spec.weight_path(&d, &g, &levy).unwrap().terminal()
        });
        let est = mean_se(&ms);
        assert!(
            (est.value - 1.0).abs() <= 3.0 * est.std_error,
            "mean {} se {}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn jump_weight_is_unit_mean() {
        let g = grid(16);
        let levy = symmetric_levy(1.0);
        let spec = GirsanovSpec {
            sigma0: VolLoading::Zero,
            gamma0: JumpLoading::MarkProportional { scale: 1.0 },
        };
        let ms = par_map_paths(100_000, |p| {
            let d = sample_driver(&g, &levy, 101, p);
            spec.weight_path(&d, &g, &levy).unwrap().terminal()
        });
        let est = mean_se(&ms);
        assert!(
            (est.value - 1.0).abs() <= 3.0 * est.std_error,
            "mean {} se {}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn weights_stay_positive() {
        let g = grid(16);
        let levy = symmetric_levy(2.0);
        let spec = GirsanovSpec {
            sigma0: VolLoading::Constant { value: 0.4 },
            gamma0: JumpLoading::MarkProportional { scale: 1.0 },
        };
        for p in 0..200 {
            let d = sample_driver(&g, &levy, 7, p);
            let m = spec.weight_path(&d, &g, &levy).unwrap();
            for i in 0..m.len() {
                assert!(m.value(i) > 0.0);
            }
        }
    }

    #[test]
    fn shifted_driver_arithmetic() {
        let g = grid(4);
        let levy = LevyMeasureSpec::none();
        let d = sample_driver(&g, &levy, 1, 0);
        let id = q_shifted_driver(&d, &|_| 0.0, &g);
        assert_eq!(id, d);
        let shifted = q_shifted_driver(&d, &|_| 1.0, &g);
        for (a, b) in shifted.increments().iter().zip(d.increments()) {
            assert!((a - (b - 0.25)).abs() < 1e-15);
        }
    }

    #[test]
    fn q_brownian_motion_is_weighted_martingale() {
        let g = grid(16);
        let levy = LevyMeasureSpec::none();
        let spec = GirsanovSpec {
            sigma0: VolLoading::Constant { value: 0.5 },
            gamma0: JumpLoading::Zero,
        };
        let vals = par_map_paths(100_000, |p| {
            let d = sample_driver(&g, &levy, 55, p);
            let m = spec.weight_path(&d, &g, &levy).unwrap().terminal();
            let bq = q_shifted_driver(&d, &|_| 0.5, &g);
            m * bq.brownian_at(g.steps())
        });
        let est = mean_se(&vals);
        assert!(est.value.abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn constant_theta_conditional_is_constant() {
        let g = grid(8);
        let levy = symmetric_levy(1.0);
        let d = sample_driver(&g, &levy, 5, 0);
        let spec = GirsanovSpec {
            sigma0: VolLoading::Constant { value: 0.3 },
            gamma0: JumpLoading::MarkProportional { scale: 0.5 },
        };
        let theta = ThetaSpec::Constant { value: 4.2 };
        for i in [0, 3, 8] {
            for method in [CondMethod::Analytic, CondMethod::Nested { branches: 64 }] {
                let est = conditional_expectation_q(
                    &theta,
                    &spec,
                    i,
                    &d,
                    &g,
                    &levy,
                    method,
                    StreamKey {
                        base_seed: 9,
                        path_index: 0,
                    },
                )
                .unwrap();
                assert!(
                    (est.value - 4.2).abs() < 1e-12,
                    "i {i} method {method:?}: {}",
                    est.value
                );
            }
        }
    }

    #[test]
    fn nested_matches_analytic_for_lognormal_theta() {
        let g = grid(16);
        let levy = LevyMeasureSpec::none();
        let spec = GirsanovSpec {
            sigma0: VolLoading::Constant { value: 0.3 },
            gamma0: JumpLoading::Zero,
        };
        let theta = ThetaSpec::ExpMartingale { a: 0.5 };
        let key = StreamKey {
            base_seed: 77,
            path_index: 0,
        };
        let d = sample_driver(&g, &levy, 42, 13);
        for i in [0usize, 8, 12] {
            let analytic = theta.conditional_q_analytic(&spec, i, &d, &g, &levy);
            let nested = conditional_expectation_q(
                &theta,
                &spec,
                i,
                &d,
                &g,
                &levy,
                CondMethod::Nested { branches: 10_000 },
                key,
            )
            .unwrap();
            assert!(
                (nested.value - analytic).abs() <= 3.0 * nested.std_error,
                "i {i}: nested {} analytic {analytic} se {}",
                nested.value,
                nested.std_error
            );
        }
    }

    #[test]
    fn bayes_at_time_zero_matches_plain_weighted_ratio() {
        let g = grid(8);
        let levy = symmetric_levy(1.0);
        let spec = GirsanovSpec {
            sigma0: VolLoading::Constant { value: 0.2 },
            gamma0: JumpLoading::MarkProportional { scale: 0.4 },
        };
        let theta = ThetaSpec::AffineJump {
            intercept: 1.0,
            slope: 0.5,
        };
        let d = sample_driver(&g, &levy, 4, 0);
        let nested = conditional_expectation_q(
            &theta,
            &spec,
            0,
            &d,
            &g,
            &levy,
            CondMethod::Nested { branches: 40_000 },
            StreamKey {
                base_seed: 11,
                path_index: 0,
            },
        )
        .unwrap();
        // one-shot weighted estimate over fresh paths
        let n = 40_000;
        let nums = par_map_paths(n, |p| {
            let d = sample_driver(&g, &levy, 500, p);
            let m = spec.weight_path(&d, &g, &levy).unwrap().terminal();
            m * theta.eval(&d, &g, &levy)
        });
        let dens = par_map_paths(n, |p| {
            let d = sample_driver(&g, &levy, 500, p);
            spec.weight_path(&d, &g, &levy).unwrap().terminal()
        });
        let one_shot = mean_se(&nums).value / mean_se(&dens).value;
        let analytic = theta.conditional_q_analytic(&spec, 0, &d, &g, &levy);
        assert!(
            (nested.value - analytic).abs() <= 3.0 * nested.std_error,
            "nested {} vs analytic {analytic}",
            nested.value
        );
        // both estimators target the same number
        assert!((one_shot - analytic).abs() <= 0.05);
    }

    #[test]
    fn trivial_measure_change_reduces_to_plain_conditional() {
        let g = grid(8);
        let levy = LevyMeasureSpec::none();
        let id = GirsanovSpec::identity();
        let theta = ThetaSpec::ExpMartingale { a: 0.7 };
        let d = sample_driver(&g, &levy, 21, 0);
        for i in [0, 4, 8] {
            let v = theta.conditional_q_analytic(&id, i, &d, &g, &levy);
            // plain conditional expectation of the exponential martingale
            let plain = (0.7 * d.brownian_at(i) - 0.5 * 0.49 * g.node(i)).exp();
            assert!((v - plain).abs() < 1e-12);
        }
    }
}

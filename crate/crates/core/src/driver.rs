//! Time grids, finite-activity Lévy mark specifications, and seeded joint
//! Brownian/compound-Poisson driver paths.
//!
//! # Stream derivation rule
//!
//! Every random stream in the crate is a `ChaCha8` generator whose 64-bit
//! seed is derived deterministically from a base seed and a list of stream
//! identifiers (path index, node index, nested-branch index, ...) by folding
//! each identifier through the SplitMix64 finalizer:
//!
//! ```text
//! state <- base_seed
//! for id in ids: state <- splitmix64(state XOR (id + 0x9E3779B97F4A7C15))
//! seed  <- splitmix64(state)
//! ```
//!
//! Streams are therefore pre-assigned per path (and per branch), which makes
//! every Monte Carlo statistic a pure function of `(base_seed, n_paths)`
//! independent of the degree of parallelism.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the deterministic stream for `(base_seed, ids...)`.
pub fn derive_stream(base_seed: u64, ids: &[u64]) -> ChaCha8Rng {
    let mut state = base_seed;
    for &id in ids {
        state = splitmix64(state ^ id.wrapping_add(GOLDEN_GAMMA));
    }
    ChaCha8Rng::seed_from_u64(splitmix64(state))
}

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Build the uniform grid `t_i = i*T/N`, `i = 0..=N`.
    pub fn make(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!(
                "grid horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        let dt = horizon / steps as f64;
        let mut nodes: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        // Pin the endpoint so t_N == T exactly.
        nodes[steps] = horizon;
        Ok(TimeGrid {
            horizon,
            steps,
            nodes,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Index of the grid node equal to `t` (within a relative tolerance).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let dt = self.dt();
        let i = (t / dt).round() as i64;
        if i < 0 || i > self.steps as i64 {
            return Err(Error::invalid(format!("time {t} outside [0, {}]", self.horizon)));
        }
        let i = i as usize;
        if (self.nodes[i] - t).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(Error::invalid(format!("time {t} is not a grid node")));
        }
        Ok(i)
    }

    /// Index of the grid node closest to `t` (clamped to the grid).
    pub fn nearest_index(&self, t: f64) -> usize {
        let i = (t / self.dt()).round();
        (i.max(0.0) as usize).min(self.steps)
    }

    /// Left node index of the interval `(t_j, t_{j+1}]` containing `tau`.
    ///
    /// A jump at `tau` is attributed to interval `j+1` and its integrand is
    /// evaluated at the left endpoint `t_j` (predictable convention).
    pub fn interval_left_index(&self, tau: f64) -> usize {
        debug_assert!(tau > 0.0 && tau <= self.horizon + 1e-12);
        let k = (tau / self.dt()).ceil() as usize;
        k.clamp(1, self.steps) - 1
    }
}

/// One atom of the mark distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkAtom {
    pub mark: f64,
    pub probability: f64,
}

/// Finite-activity Lévy measure `nu(A) = intensity * sum_{mark_k in A} p_k`
/// with finitely many nonzero marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyMeasureSpec {
    intensity: f64,
    marks: Vec<MarkAtom>,
}

impl LevyMeasureSpec {
    pub fn new(intensity: f64, marks: Vec<MarkAtom>) -> Result<Self> {
        let spec = LevyMeasureSpec { intensity, marks };
        spec.validate()?;
        Ok(spec)
    }

    /// No jumps at all: intensity zero, empty mark list.
    pub fn none() -> Self {
        LevyMeasureSpec {
            intensity: 0.0,
            marks: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intensity >= 0.0) || !self.intensity.is_finite() {
            return Err(Error::invalid(format!(
                "jump intensity must be finite and >= 0, got {}",
                self.intensity
            )));
        }
        if self.intensity > 0.0 {
            if self.marks.is_empty() {
                return Err(Error::invalid("positive intensity needs at least one mark"));
            }
            let total: f64 = self.marks.iter().map(|m| m.probability).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "mark probabilities must sum to 1, got {total}"
                )));
            }
        }
        for m in &self.marks {
            if m.mark == 0.0 || !m.mark.is_finite() {
                return Err(Error::invalid("marks must be finite and nonzero"));
            }
            if !(m.probability >= 0.0) {
                return Err(Error::invalid("mark probabilities must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn marks(&self) -> &[MarkAtom] {
        &self.marks
    }

    /// Exact integral `int kernel(z) nu(dz) = intensity * sum_k p_k kernel(mark_k)`.
    ///
    /// The mark support is finite so there is no quadrature error.
    pub fn nu_integral(&self, kernel: impl Fn(f64) -> f64) -> f64 {
        self.intensity
            * self
                .marks
                .iter()
                .map(|m| m.probability * kernel(m.mark))
                .sum::<f64>()
    }
}

/// One jump event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub mark: f64,
}

/// One realization of the joint driver: Brownian increments on the grid plus
/// the compound-Poisson jump events on `(0, T]`.
///
/// Immutable after construction; safe to share across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    increments: Vec<f64>,
    jumps: Vec<Jump>,
    brownian_cum: Vec<f64>,
}

impl DriverPath {
    pub fn from_parts(increments: Vec<f64>, jumps: Vec<Jump>) -> Self {
        let mut brownian_cum = Vec::with_capacity(increments.len() + 1);
        let mut acc = 0.0;
        brownian_cum.push(0.0);
        for &db in &increments {
            acc += db;
            brownian_cum.push(acc);
        }
        DriverPath {
            increments,
            jumps,
            brownian_cum,
        }
    }

    /// Brownian increments `dB_j`, `j = 0..N`.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Jump events, strictly increasing in time.
    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// `B(t_i)` as the prefix sum of increments.
    pub fn brownian_at(&self, i: usize) -> f64 {
        self.brownian_cum[i]
    }

    /// Driver restricted to information up to `t_i`: increments `j >= i`
    /// zeroed, jumps after `t_i` dropped. Used for adaptedness checks.
    pub fn truncated_after(&self, grid: &TimeGrid, i: usize) -> DriverPath {
        let mut increments = self.increments.clone();
        for db in increments.iter_mut().skip(i) {
            *db = 0.0;
        }
        let t_i = grid.node(i);
        let jumps = self
            .jumps
            .iter()
            .copied()
            .filter(|j| j.time <= t_i)
            .collect();
        DriverPath::from_parts(increments, jumps)
    }
}

/// Sample the driver path for `(base_seed, path_index)`.
///
/// Increments are `Normal(0, dt)`; the jump count is `Poisson(intensity*T)`
/// with times uniform on `(0, T]` and marks i.i.d. from the mark atoms. The
/// output is a pure function of `(base_seed, path_index)`.
pub fn sample_driver(
    grid: &TimeGrid,
    levy: &LevyMeasureSpec,
    base_seed: u64,
    path_index: u64,
) -> DriverPath {
    let mut rng = derive_stream(base_seed, &[path_index]);
    let increments = sample_increments(grid, &mut rng);
    let jumps = sample_jumps(levy, 0.0, grid.horizon(), &mut rng);
    DriverPath::from_parts(increments, jumps)
}

pub(crate) fn sample_increments(grid: &TimeGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sqrt_dt = grid.dt().sqrt();
    (0..grid.steps())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * sqrt_dt
        })
        .collect()
}

/// Jump events on `(lo, hi]`, sorted by time.
pub(crate) fn sample_jumps(
    levy: &LevyMeasureSpec,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Jump> {
    let span = hi - lo;
    if levy.intensity() == 0.0 || span <= 0.0 {
        return Vec::new();
    }
    let poisson = Poisson::new(levy.intensity() * span).expect("positive rate");
    loop {
        let count = poisson.sample(rng) as usize;
        let mut jumps: Vec<Jump> = (0..count)
            .map(|_| {
                let u: f64 = rng.gen();
                let time = lo + (1.0 - u) * span; // in (lo, hi]
                let mark = sample_mark(levy, rng);
                Jump { time, mark }
            })
            .collect();
        jumps.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        // Ties have probability zero; redraw in the pathological case so the
        // strict ordering invariant holds.
        if jumps.windows(2).all(|w| w[0].time < w[1].time) {
            return jumps;
        }
    }
}

fn sample_mark(levy: &LevyMeasureSpec, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for atom in levy.marks() {
        acc += atom.probability;
        if u < acc {
            return atom.mark;
        }
    }
    levy.marks().last().expect("nonempty marks").mark
}

//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Tolerances are pinned in code next to each criterion. Monte Carlo checks
//! run at 1e5 paths with fixed seeds; deterministic checks carry explicit
//! absolute or relative tolerances, plus the documented central-difference
//! Taylor floor wherever a zero-variance model makes the 3-SE band empty.

use std::process::Command;
use std::sync::Arc;

use volterra_control::adjoint::qhat_covariance_probe;
use volterra_control::consumption::{
    certify, gradient_residual, optimal_control, CertifyOptions, ConsumptionModel, KernelSpec,
};
use volterra_control::driver::{sample_driver, LevyMeasureSpec, MarkAtom, TimeGrid};
use volterra_control::forward::{direct_solve, picard_solve, ControlPath, InfoMode,
    VolterraCoefficients};
use volterra_control::malliavin::run_oracle_suite;
use volterra_control::measure::{
    conditional_expectation_q, CondMethod, GirsanovSpec, JumpLoading, StreamKey, ThetaSpec,
    VolLoading,
};
use volterra_control::principle::{gateaux_fd, gateaux_via_y, sufficiency_scan, PerturbationSpec};
use volterra_control::resolvent::{neumann_psi, psi_factor, resolvent_direct};
use volterra_control::stats::{mean_se, par_map_paths};

const MC_PATHS: u64 = 100_000;

fn pass(criterion: &str) {
    println!("ACCEPTANCE {criterion}: PASS");
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

fn zero_model() -> ConsumptionModel {
    ConsumptionModel {
        x0: 2.0,
        b0: KernelSpec::Zero,
        sigma0: VolLoading::Zero,
        gamma0: JumpLoading::Zero,
        theta: ThetaSpec::Constant { value: 1.0 },
        horizon: 1.0,
        levy: LevyMeasureSpec::none(),
        epsilon: 0.1,
    }
}

#[test]
fn acceptance_1_resolvent_analytics() {
    let grid = TimeGrid::make(1.0, 1024).unwrap();
    let b0 = |_: f64, _: f64| 0.5;

    let exact_psi = 0.5 * 0.5f64.exp();
    let (psi, _, _) = neumann_psi(&b0, 0.5, 0.0, 1.0, &grid, 1e-10).unwrap();
    let rel = (psi - exact_psi).abs() / exact_psi;
    assert!(rel <= 1e-4, "Psi(0,1) relative error {rel}");

    let kappa = psi_factor(&b0, 0.5, &grid, 1e-10).unwrap();
    let exact_kappa = 0.5f64.exp();
    assert!(
        (kappa[0] - exact_kappa).abs() <= 1e-4,
        "kappa(0) = {} vs {exact_kappa}",
        kappa[0]
    );

    let direct = resolvent_direct(&b0, 1.0, &grid).unwrap();
    let worst = kappa
        .iter()
        .zip(&direct)
        .map(|(k, d)| (k - d).abs())
        .fold(0.0_f64, f64::max);
    assert!(worst <= 1e-3, "Neumann-vs-direct sup distance {worst}");
    pass("1 (resolvent analytics)");
}

#[test]
fn acceptance_2_forward_solver() {
    let grid = TimeGrid::make(1.0, 512).unwrap();
    let levy = LevyMeasureSpec::none();
    let mut coeffs = VolterraCoefficients::zeroed();
    coeffs.initial = Arc::new(|_| 1.0);
    coeffs.drift = Arc::new(|_, _, x, _| 0.5 * x);
    let control = ControlPath::constant(1.0, 513, (0.0, 2.0)).unwrap();
    let driver = sample_driver(&grid, &levy, 1, 0);

    let direct = direct_solve(&coeffs, &control, &driver, &grid, &levy).unwrap();
    let err = (direct.terminal() - 0.5f64.exp()).abs();
    assert!(err <= 5e-3, "X_N error {err}");

    let picard = picard_solve(&coeffs, &control, &driver, &grid, &levy, 0.0, 514).unwrap();
    assert!(picard.iterations <= 513, "{} iterations", picard.iterations);
    assert_eq!(picard.sup_gap, 0.0);
    let worst_rel = picard
        .path
        .values
        .iter()
        .zip(&direct.values)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0_f64, f64::max);
    assert!(worst_rel <= 1e-12, "picard-direct relative gap {worst_rel}");
    pass("2 (forward solver)");
}

#[test]
fn acceptance_3_girsanov_unit_mean() {
    let grid = TimeGrid::make(1.0, 16).unwrap();
    let cases: Vec<(&str, GirsanovSpec, LevyMeasureSpec)> = vec![
        (
            "sigma0=0.3, no jumps",
            GirsanovSpec {
                sigma0: VolLoading::Constant { value: 0.3 },
                gamma0: JumpLoading::Zero,
            },
            LevyMeasureSpec::none(),
        ),
        (
            "sigma0=0, lambda=1 marks +-0.5",
            GirsanovSpec {
                sigma0: VolLoading::Zero,
                gamma0: JumpLoading::MarkProportional { scale: 1.0 },
            },
            symmetric_levy(1.0),
        ),
        (
            "combined",
            GirsanovSpec {
                sigma0: VolLoading::Constant { value: 0.3 },
                gamma0: JumpLoading::MarkProportional { scale: 1.0 },
            },
            symmetric_levy(1.0),
        ),
    ];
    for (name, spec, levy) in cases {
        let weights = par_map_paths(MC_PATHS, |p| {
            let d = sample_driver(&grid, &levy, 2024, p);
            spec.weight_path(&d, &grid, &levy).unwrap().terminal()
        });
        let est = mean_se(&weights);
        assert!(
            (est.value - 1.0).abs() <= 3.0 * est.std_error,
            "{name}: E[M(T)] = {} +- {}",
            est.value,
            est.std_error
        );
    }
    pass("3 (Girsanov unit mean)");
}

#[test]
fn acceptance_4_duality_clark_ocone_suite() {
    let grid = TimeGrid::make(1.0, 256).unwrap();
    let levy = symmetric_levy(1.0);
    let report = run_oracle_suite(&grid, &levy, &[128, 512, 2048], MC_PATHS, 7).unwrap();
    for check in &report.checks {
        assert!(
            check.pass,
            "{}: diff {} se {}",
            check.id, check.diff, check.diff_se
        );
    }
    assert!(
        report.refinement.decreasing,
        "Clark-Ocone RMS not decreasing: {:?}",
        report.refinement.rms
    );
    assert!(report.pass);
    pass("4 (duality / Clark-Ocone suite)");
}

#[test]
fn acceptance_5_closed_form_consumption_rate() {
    // deterministic branch: theta = 1, b0 = 0.5 constant kernel
    let model = ConsumptionModel {
        b0: KernelSpec::Constant { value: 0.5 },
        ..zero_model()
    };
    let grid = TimeGrid::make(1.0, 1024).unwrap();
    let u_hat = optimal_control(&model, InfoMode::Deterministic, &grid, 1e-10, (0.05, 20.0))
        .unwrap();
    let driver = sample_driver(&grid, &model.levy, 1, 0);
    let values = u_hat.realize(1025, &driver).unwrap();
    for i in [0usize, 256, 512, 768, 1024] {
        let t = grid.node(i);
        let exact = (-0.5 * (1.0 - t)).exp();
        assert!(
            (values[i] - exact).abs() <= 1e-4,
            "u_hat({t}) = {} vs {exact}",
            values[i]
        );
    }

    // lognormal branch: nested estimator against the Gaussian closed form
    let grid = TimeGrid::make(1.0, 64).unwrap();
    let girsanov = GirsanovSpec {
        sigma0: VolLoading::Constant { value: 0.3 },
        gamma0: JumpLoading::Zero,
    };
    let theta = ThetaSpec::ExpMartingale { a: 0.5 };
    let levy = LevyMeasureSpec::none();
    for (path_index, t_index) in [(0u64, 16usize), (1, 32), (2, 48), (3, 0), (4, 32), (5, 56)] {
        let d = sample_driver(&grid, &levy, 99, path_index);
        let analytic = theta.conditional_q_analytic(&girsanov, t_index, &d, &grid, &levy);
        let nested = conditional_expectation_q(
            &theta,
            &girsanov,
            t_index,
            &d,
            &grid,
            &levy,
            CondMethod::Nested { branches: 10_000 },
            StreamKey {
                base_seed: 4,
                path_index,
            },
        )
        .unwrap();
        assert!(
            (nested.value - analytic).abs() <= 3.0 * nested.std_error,
            "path {path_index} node {t_index}: nested {} analytic {analytic} se {}",
            nested.value,
            nested.std_error
        );
    }

    // the closed-form mean that feeds the trivial-information rate agrees
    // with a 1e5-path Monte Carlo average of the per-path adjoint weight
    let t_index = 32;
    let samples = par_map_paths(MC_PATHS, |p| {
        let d = sample_driver(&grid, &levy, 123, p);
        theta.conditional_q_analytic(&girsanov, t_index, &d, &grid, &levy)
    });
    let est = mean_se(&samples);
    let mean = theta.mean_conditional_q(&girsanov, t_index, &grid, &levy);
    assert!(
        (est.value - mean).abs() <= 3.0 * est.std_error,
        "MC {} vs closed form {mean}",
        est.value
    );
    pass("5 (closed-form consumption rate)");
}

#[test]
fn acceptance_6_maximum_principle_certification() {
    let model = zero_model();
    let grid = TimeGrid::make(1.0, 32).unwrap();
    let coeffs = model.coefficients();
    let u_hat = optimal_control(&model, InfoMode::Deterministic, &grid, 1e-10, (0.05, 20.0))
        .unwrap();

    // stationarity at four perturbation sites (3 SE + documented Taylor floor)
    for start in [0.0, 0.25, 0.5, 0.75] {
        let pert = PerturbationSpec {
            start,
            width: 0.125,
            eta: 1.0,
        };
        let fd = gateaux_fd(&coeffs, &u_hat, &pert, 1e-3, &grid, &model.levy, MC_PATHS, 11)
            .unwrap();
        assert!(
            fd.estimate.value.abs() <= 3.0 * fd.estimate.std_error + fd.taylor_bound,
            "site {start}: fd {} se {} floor {}",
            fd.estimate.value,
            fd.estimate.std_error,
            fd.taylor_bound
        );
    }

    // gradient residuals: zero at the optimum, signed separation at kappa
    let t_index = grid.nearest_index(0.5);
    let at_opt = gradient_residual(
        &model,
        &u_hat,
        &grid,
        t_index,
        MC_PATHS,
        11,
        InfoMode::Deterministic,
        1e-10,
    )
    .unwrap();
    assert!(
        at_opt.value.abs() <= 3.0 * at_opt.std_error + 1e-12,
        "residual at optimum {} +- {}",
        at_opt.value,
        at_opt.std_error
    );
    for (kappa, want) in [(0.5, 1.0), (2.0, -0.5)] {
        let scaled = u_hat.scaled(kappa).unwrap();
        let res = gradient_residual(
            &model,
            &scaled,
            &grid,
            t_index,
            MC_PATHS,
            11,
            InfoMode::Deterministic,
            1e-10,
        )
        .unwrap();
        assert!(
            res.value.abs() >= 3.0 * res.std_error && res.value.abs() > 1e-6,
            "kappa {kappa}: residual {} not separated",
            res.value
        );
        assert_eq!(res.value.signum(), (1.0 - kappa).signum());
        assert!((res.value - want).abs() <= 3.0 * res.std_error + 1e-12);
    }

    // scan: analytic value J(u_hat) = x0 - T = 1 and >= 2 SE margins
    let scan = sufficiency_scan(
        &coeffs,
        &u_hat,
        &[0.5, 1.0, 2.0],
        &grid,
        &model.levy,
        MC_PATHS,
        11,
    )
    .unwrap();
    let base = scan.iter().find(|r| r.kappa == 1.0).unwrap();
    assert!(
        (base.j - 1.0).abs() <= 1e-10,
        "J(u_hat) = {} vs analytic 1",
        base.j
    );
    for row in &scan {
        if row.kappa != 1.0 {
            let margin = base.j - row.j;
            assert!(
                margin > 0.0 && margin >= 2.0 * (base.se + row.se),
                "kappa {}: margin {margin}",
                row.kappa
            );
        }
    }

    // the bundled certificate agrees end to end
    let options = CertifyOptions::default();
    let report = certify(&model, &u_hat, &grid, 20_000, 11, &options).unwrap();
    assert!(report.pass, "certificate rejected the optimal rate");
    let report = certify(&model, &u_hat.scaled(2.0).unwrap(), &grid, 20_000, 11, &options)
        .unwrap();
    assert!(!report.pass, "certificate accepted a scaled rate");
    pass("6 (maximum-principle certification)");
}

#[test]
fn acceptance_7_two_route_gateaux_agreement() {
    let grid = TimeGrid::make(1.0, 32).unwrap();
    let pert = PerturbationSpec {
        start: 0.25,
        width: 0.25,
        eta: 1.0,
    };
    for b0 in [KernelSpec::Zero, KernelSpec::Constant { value: 0.5 }] {
        let model = ConsumptionModel {
            b0,
            ..zero_model()
        };
        let coeffs = model.coefficients();
        let control = ControlPath::constant(1.0, 33, (0.05, 20.0)).unwrap();
        let fd = gateaux_fd(&coeffs, &control, &pert, 1e-3, &grid, &model.levy, 10_000, 13)
            .unwrap();
        let via_y =
            gateaux_via_y(&coeffs, &control, &pert, &grid, &model.levy, 10_000, 13).unwrap();
        let tol = 3.0 * (fd.estimate.std_error + via_y.std_error) + fd.taylor_bound;
        assert!(
            (fd.estimate.value - via_y.value).abs() <= tol,
            "{b0:?}: fd {} vs y {} tol {tol}",
            fd.estimate.value,
            via_y.value
        );
    }
    pass("7 (two-route Gateaux agreement)");
}

#[test]
fn acceptance_8_representation_witness() {
    let grid = TimeGrid::make(1.0, 64).unwrap();
    let levy = LevyMeasureSpec::none();
    let theta = ThetaSpec::ExpMartingale { a: 0.5 };
    let girsanov = GirsanovSpec::identity();
    let kappa = psi_factor(&|_, _| 0.5, 0.5, &grid, 1e-10).unwrap();
    for (t, s) in [(0.75, 0.5), (1.0, 0.5)] {
        let t_index = grid.index_of(t).unwrap();
        let s_index = grid.index_of(s).unwrap();
        let probe = qhat_covariance_probe(
            &theta,
            &girsanov,
            &kappa,
            &grid,
            &levy,
            t_index,
            s_index,
            MC_PATHS,
            17,
        )
        .unwrap();
        let diff = (probe.covariance_over_dt.value - probe.analytic.value).abs();
        let tol = 3.0 * (probe.covariance_over_dt.std_error + probe.analytic.std_error);
        assert!(
            diff <= tol,
            "(t,s)=({t},{s}): covariance {} analytic {} tol {tol}",
            probe.covariance_over_dt.value,
            probe.analytic.value
        );
    }
    pass("8 (representation witness)");
}

fn run_cli(config: &std::path::Path, out: &std::path::Path, workers: usize) {
    let status = Command::new(env!("CARGO_BIN_EXE_volterra"))
        .args([
            "run",
            "--config",
            config.to_str().unwrap(),
            "--workers",
            &workers.to_string(),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .expect("binary runs");
    assert!(status.success(), "task failed in {}", out.display());
}

fn read_dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn acceptance_9_byte_identical_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        (
            "demo.json",
            r#"{
                "model": {
                    "x0": 2.0,
                    "b0": {"id": "constant", "value": 0.3},
                    "sigma0": {"id": "zero"},
                    "gamma0": {"id": "zero"},
                    "theta": {"id": "constant", "value": 1.0},
                    "epsilon": 0.1
                },
                "grid": {"horizon": 1.0, "steps": 32},
                "levy": {"intensity": 0.0, "marks": []},
                "monte_carlo": {"n_paths": 5000, "base_seed": 42},
                "task": {"id": "demo"},
                "output_dir": "unused"
            }"#,
        ),
        (
            "resolvent.json",
            r#"{
                "model": {
                    "x0": 1.0,
                    "b0": {"id": "lag"},
                    "sigma0": {"id": "zero"},
                    "gamma0": {"id": "zero"},
                    "theta": {"id": "constant", "value": 1.0},
                    "epsilon": 0.1
                },
                "grid": {"horizon": 1.0, "steps": 96},
                "levy": {"intensity": 0.0, "marks": []},
                "monte_carlo": {"n_paths": 100, "base_seed": 7},
                "task": {"id": "resolvent", "tol": 1e-8},
                "output_dir": "unused"
            }"#,
        ),
        (
            "check.json",
            r#"{
                "model": {
                    "x0": 1.0,
                    "b0": {"id": "zero"},
                    "sigma0": {"id": "zero"},
                    "gamma0": {"id": "zero"},
                    "theta": {"id": "constant", "value": 1.0},
                    "epsilon": 0.1
                },
                "grid": {"horizon": 1.0, "steps": 64},
                "levy": {"intensity": 1.0, "marks": [
                    {"mark": -0.5, "probability": 0.5},
                    {"mark": 0.5, "probability": 0.5}
                ]},
                "monte_carlo": {"n_paths": 4000, "base_seed": 5},
                "task": {"id": "check", "refinement_steps": [32, 64]},
                "output_dir": "unused"
            }"#,
        ),
    ];
    for (name, json) in configs {
        let config_path = dir.path().join(name);
        std::fs::write(&config_path, json).unwrap();
        let out1 = dir.path().join(format!("{name}.w1"));
        let out8 = dir.path().join(format!("{name}.w8"));
        let out1b = dir.path().join(format!("{name}.w1b"));
        run_cli(&config_path, &out1, 1);
        run_cli(&config_path, &out8, 8);
        run_cli(&config_path, &out1b, 1);
        let a = read_dir_bytes(&out1);
        let b = read_dir_bytes(&out8);
        let c = read_dir_bytes(&out1b);
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}: workers 1 vs 8 outputs differ");
        assert_eq!(a, c, "{name}: reruns differ");
    }
    pass("9 (byte-identical reproducibility)");
}

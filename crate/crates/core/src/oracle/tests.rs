use super::*;
use crate::paths::rng::derive_seed;
use crate::problem::{linear_problem, AffineDynamics, LinearGenerator, LinearTerminal};

fn brownian() -> AffineDynamics {
    AffineDynamics { drift_const: 0.0, drift_linear: 0.0, vol_const: 1.0, vol_linear: 0.0 }
}

fn terminal_only(terminal: LinearTerminal) -> BsvieProblem {
    linear_problem("toy", 1.0, 0.0, brownian(), LinearGenerator::default(), terminal)
}

#[test]
fn basis_sizes() {
    let b = RegressionBasis { degree: 3, interactions: true };
    assert_eq!(b.size(1), 4);
    assert_eq!(b.size(2), 10);
    assert_eq!(b.size(3), 20);
    let pure = RegressionBasis { degree: 3, interactions: false };
    assert_eq!(pure.size(2), 7);
    assert_eq!(RegressionBasis { degree: 0, interactions: true }.size(2), 1);
    let e = b.exponents(2);
    assert_eq!(e[0], vec![0, 0]);
    assert!(e.iter().all(|v| v.iter().sum::<u32>() <= 3));
    let mut sorted = e.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), e.len());
}

#[test]
fn triangle_pair_inverts_index() {
    for n in 1..9 {
        for k in 0..n {
            for l in k..n {
                assert_eq!(triangle_pair(n, triangle_index(n, k, l)), (k, l));
            }
        }
    }
}

fn brownian_states(m: usize, n_steps: usize, seed: u64) -> PathBatch {
    terminal_only(LinearTerminal::default()).simulate(&TimeGrid::new(1.0, n_steps).unwrap(), m, seed).unwrap()
}

#[test]
fn constant_target_is_reproduced() {
    let paths = brownian_states(500, 2, 1);
    let regs: Vec<f64> = (0..500).map(|j| paths.state(j, 1)[0]).collect();
    let fitted = conditional_expectation(&[2.5; 500], &regs, 1, &RegressionBasis::default()).unwrap();
    assert!(fitted.iter().all(|v| (v - 2.5).abs() < 1e-13), "{:?}", &fitted[..3]);
}

#[test]
fn target_in_span_is_reproduced() {
    let paths = brownian_states(300, 2, 2);
    let regs: Vec<f64> = (0..300).flat_map(|j| [paths.state(j, 1)[0], paths.state(j, 2)[0]]).collect();
    let target: Vec<f64> = (0..300).map(|j| 0.3 - 1.7 * regs[2 * j + 1] + 0.5 * regs[2 * j] * regs[2 * j + 1]).collect();
    let fitted = conditional_expectation(&target, &regs, 2, &RegressionBasis { degree: 2, interactions: true }).unwrap();
    for (f, t) in fitted.iter().zip(&target) {
        assert!((f - t).abs() < 1e-12 * (1.0 + t.abs()));
    }
    let linear: Vec<f64> = (0..300).map(|j| regs[2 * j + 1]).collect();
    let fitted = conditional_expectation(&linear, &regs, 2, &RegressionBasis { degree: 1, interactions: false }).unwrap();
    for (f, t) in fitted.iter().zip(&linear) {
        assert!((f - t).abs() < 1e-12 * (1.0 + t.abs()));
    }
}

/// `E[B_T | B_s] = B_s`: the regression error shrinks as paths are added.
#[test]
fn brownian_terminal_regresses_to_current_value() {
    let mut prev = f64::INFINITY;
    for m in [1 << 9, 1 << 12, 1 << 15] {
        let paths = brownian_states(m, 2, derive_seed(3, &[m as u64]));
        let regs: Vec<f64> = (0..m).map(|j| paths.state(j, 1)[0]).collect();
        let target: Vec<f64> = (0..m).map(|j| paths.state(j, 2)[0]).collect();
        let fitted = conditional_expectation(&target, &regs, 1, &RegressionBasis::default()).unwrap();
        let mse = fitted.iter().zip(&regs).map(|(f, b)| (f - b).powi(2)).sum::<f64>() / m as f64;
        assert!(mse < prev, "M={m}: {mse} vs {prev}");
        prev = mse;
    }
    assert!(prev < 1e-3, "{prev}");
}

#[test]
fn duplicate_regressors_fall_back_to_ridge() {
    let paths = brownian_states(200, 2, 4);
    let regs: Vec<f64> = (0..200).flat_map(|j| [paths.state(j, 1)[0]; 2]).collect();
    let design = Design::new(&regs, 2, &RegressionBasis::default()).unwrap();
    assert!(design.ridge);
    let target: Vec<f64> = (0..200).map(|j| 2.0 * regs[2 * j]).collect();
    let fitted = design.fitted(&design.solve(&target).unwrap());
    for (f, t) in fitted.iter().zip(&target) {
        assert!((f - t).abs() < 1e-5, "{f} vs {t}");
    }
}

#[test]
fn regression_rejects_bad_input() {
    assert!(matches!(
        conditional_expectation(&[1.0; 3], &[0.1, 0.2, 0.3], 1, &RegressionBasis::default()),
        Err(OracleError::InsufficientPaths { paths: 3, basis: 4 })
    ));
    assert!(matches!(conditional_expectation(&[1.0; 3], &[0.1, 0.2], 1, &RegressionBasis::default()), Err(OracleError::Shape(_))));
    let regs: Vec<f64> = (0..10).map(f64::from).collect();
    let mut target = vec![0.0; 10];
    target[3] = f64::NAN;
    assert!(matches!(conditional_expectation(&target, &regs, 1, &RegressionBasis::default()), Err(OracleError::NonFinite(_))));
}

#[test]
fn fit_predict_matches_in_sample_values() {
    let paths = brownian_states(400, 3, 5);
    let regs: Vec<f64> = (0..400).flat_map(|j| [paths.state(j, 1)[0], paths.state(j, 2)[0]]).collect();
    let target: Vec<f64> = (0..400).map(|j| (paths.state(j, 3)[0]).sin()).collect();
    let design = Design::new(&regs, 2, &RegressionBasis::default()).unwrap();
    let coef = design.solve(&target).unwrap();
    let fitted = design.fitted(&coef);
    let fit = design.fit(coef);
    for j in 0..400 {
        assert!((fit.predict(&regs[2 * j..2 * j + 2]) - fitted[j]).abs() < 1e-12);
    }
}

#[test]
fn constant_terminal_gives_constant_solution() {
    let p = terminal_only(LinearTerminal { constant: 0.8, x_t: 0.0, x_terminal: 0.0 });
    let paths = p.simulate(&TimeGrid::new(1.0, 6).unwrap(), 1000, 6).unwrap();
    let sol = solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap();
    let (y, z) = sol.cell_means(&p, &paths).unwrap();
    assert!(y.iter().all(|v| (v - 0.8).abs() < 1e-12), "{y:?}");
    assert!(z.iter().all(|v| v.abs() < 1e-12), "{z:?}");
    let values = sol.evaluate(&p, &paths).unwrap();
    assert!(values.y.iter().all(|v| (v - 0.8).abs() < 1e-12));
    assert!(values.z.iter().all(|v| v.abs() < 1e-12));
}

/// `g = X_T` on Brownian paths: `Y_l^k = X_l`, `Z_l^k = 1`.
#[test]
fn brownian_terminal_is_a_martingale() {
    let p = terminal_only(LinearTerminal { constant: 0.0, x_t: 0.0, x_terminal: 1.0 });
    let m = 1 << 14;
    let paths = p.simulate(&TimeGrid::new(1.0, 5).unwrap(), m, 7).unwrap();
    let sol = solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap();
    let values = sol.evaluate(&p, &paths).unwrap();
    for k in 0..5 {
        let ms = (0..m).map(|j| (values.y_at(j, k)[0] - paths.state(j, k)[0]).powi(2)).sum::<f64>() / m as f64;
        assert!(ms.sqrt() < 2e-2, "k={k}: rms {}", ms.sqrt());
    }
    // In-sample counterpart of E[dB_l^2] / dt.
    let dt = 0.2;
    let (_, z_mean) = sol.cell_means(&p, &paths).unwrap();
    for k in 0..5 {
        for l in k..5 {
            let quad = (0..m).map(|j| paths.increment(j, l)[0].powi(2)).sum::<f64>() / (m as f64 * dt);
            let z = z_mean[triangle_index(5, k, l)];
            assert!((z - quad).abs() < 1e-2, "({k},{l}): {z} vs {quad}");
            assert!((quad - 1.0).abs() < 5.0 * (2.0 / m as f64).sqrt());
        }
    }
}

/// The projected `Z` of `xi = B_{t_{l+1}}` approaches one as paths are added.
#[test]
fn martingale_representation_converges_in_paths() {
    let p = terminal_only(LinearTerminal { constant: 0.0, x_t: 0.0, x_terminal: 1.0 });
    let err = |m: usize| {
        let paths = p.simulate(&TimeGrid::new(1.0, 1).unwrap(), m, derive_seed(8, &[m as u64])).unwrap();
        let sol = solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap();
        let values = sol.evaluate(&p, &paths).unwrap();
        (values.z_at(0, 0, 0)[0] - 1.0).abs()
    };
    let errs: Vec<f64> = [1 << 8, 1 << 12, 1 << 16].iter().map(|&m| err(m)).collect();
    assert!(errs[2] < errs[0], "{errs:?}");
    assert!(errs[2] < 1e-2, "{errs:?}");
}

/// With `f = 0` the last diagonal value is a single regression of `g`.
#[test]
fn last_diagonal_is_a_single_regression() {
    let p = linear_problem("sq", 1.0, 0.5, brownian(), LinearGenerator::default(), LinearTerminal { constant: 0.1, x_t: 0.4, x_terminal: -1.3 });
    let paths = p.simulate(&TimeGrid::new(1.0, 4).unwrap(), 700, 9).unwrap();
    let sol = solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap();
    let diag = diagonal_y(&sol, &p, &paths).unwrap();
    let regs: Vec<f64> = (0..700).map(|j| paths.state(j, 3)[0]).collect();
    let target: Vec<f64> = (0..700).map(|j| 0.1 + 0.4 * paths.state(j, 3)[0] - 1.3 * paths.state(j, 4)[0]).collect();
    let direct = conditional_expectation(&target, &regs, 1, &RegressionBasis::default()).unwrap();
    for j in 0..700 {
        assert!((diag[j * 4 + 3] - direct[j]).abs() < 1e-12);
    }
}

/// Diagonal fixed point for `f = a y`: `y = c / (1 - a dt)`.
#[test]
fn implicit_diagonal_is_solved() {
    let gen = LinearGenerator { y: 0.9, ..LinearGenerator::default() };
    let p = linear_problem("lin", 1.0, 0.0, brownian(), gen, LinearTerminal { constant: 1.0, x_t: 0.0, x_terminal: 0.0 });
    let paths = p.simulate(&TimeGrid::new(1.0, 4).unwrap(), 64, 10).unwrap();
    let sol = solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap();
    let diag = diagonal_y(&sol, &p, &paths).unwrap();
    assert!((diag[3] - 1.0 / (1.0 - 0.9 * 0.25)).abs() < 1e-14, "{}", diag[3]);
}

#[test]
fn evaluation_rejects_foreign_paths() {
    let p = terminal_only(LinearTerminal { constant: 1.0, ..LinearTerminal::default() });
    let paths = p.simulate(&TimeGrid::new(1.0, 3).unwrap(), 50, 11).unwrap();
    let sol = solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap();
    let other = p.simulate(&TimeGrid::new(1.0, 4).unwrap(), 50, 11).unwrap();
    assert!(matches!(sol.evaluate(&p, &other), Err(OracleError::Shape(_))));
}

#[test]
fn csv_dump_lists_the_triangle() {
    let p = terminal_only(LinearTerminal { constant: 0.5, ..LinearTerminal::default() });
    let paths = p.simulate(&TimeGrid::new(1.0, 3).unwrap(), 40, 12).unwrap();
    let sol = solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap();
    let mut buf = Vec::new();
    sol.write_cell_means_csv(&p, &paths, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,l,t_k,t_l,mean_Y,mean_Z");
    assert_eq!(lines.len(), 1 + 6);
    let row: Vec<f64> = lines[2].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row[..2], [0.0, 1.0]);
    assert!((row[4] - 0.5).abs() < 1e-12);
}

#[test]
fn solution_round_trips_through_json() {
    let p = terminal_only(LinearTerminal { x_terminal: 1.0, ..LinearTerminal::default() });
    let paths = p.simulate(&TimeGrid::new(1.0, 3).unwrap(), 60, 13).unwrap();
    let sol = solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap();
    let back: DiscreteSolution = serde_json::from_str(&serde_json::to_string(&sol).unwrap()).unwrap();
    assert_eq!(back, sol);
}

/// `Z = 1` against `Zhat = 0` integrates to the total area of the cells.
#[test]
fn integrated_z_error_is_the_triangle_area() {
    let paths = brownian_states(5, 8, 14);
    let values = SolutionValues::zeros(5, 8, 1, 1);
    let e = integrated_errors(&values, &paths, |_, _| 0.0, |_, _| 1.0).unwrap();
    assert_eq!(e.err_y, 0.0);
    let dt = 1.0 / 8.0;
    assert!((e.err_z - dt * dt * 36.0).abs() < 1e-14, "{}", e.err_z);
}

/// `Y(t) = B_t` against zero: `E int_0^T B_t^2 dt = T^2 / 2`.
#[test]
fn integrated_y_error_follows_the_bridge() {
    let m = 1 << 15;
    let paths = brownian_states(m, 4, 15);
    let values = SolutionValues::zeros(m, 4, 1, 1);
    let e = integrated_errors(&values, &paths, |_, b| b, |_, _| 0.0).unwrap();
    assert!((e.err_y - 0.5).abs() < 1e-2, "{}", e.err_y);
    assert_eq!(e.err_z, 0.0);
    // Exact bridge algebra per path: on one cell, int (a + theta (b - a))^2 + theta (1 - theta) dt.
    let one = brownian_states(1, 1, 16);
    let v = SolutionValues::zeros(1, 1, 1, 1);
    let b = one.state(0, 1)[0];
    let e = integrated_errors(&v, &one, |_, x| x, |_, _| 0.0).unwrap();
    assert!((e.err_y - (b * b / 3.0 + 1.0 / 6.0)).abs() < 1e-14);
}

use bsvie::benchmarks::{analytic_y_ex1, analytic_z_ex1, build_example1};
use bsvie::oracle::{diagonal_y, integrated_errors, solve_discrete, IntegratedErrors, RegressionBasis};
use bsvie::paths::rng::derive_seed;
use bsvie::paths::TimeGrid;

/// `(2 / pi)(e - 1)`.
const Y0_EX1: f64 = 1.093_892_186_496_948_8;

fn oracle_ex1(n_steps: usize, m: usize, basis: RegressionBasis, seed: u64) -> (f64, IntegratedErrors) {
    let p = build_example1(1.0);
    let paths = p.simulate(&TimeGrid::new(1.0, n_steps).unwrap(), m, seed).unwrap();
    let sol = solve_discrete(&p, &paths, &basis).unwrap();
    let values = sol.evaluate(&p, &paths).unwrap();
    let y0 = (0..m).map(|j| values.y_at(j, 0)[0]).sum::<f64>() / m as f64;
    let errors = integrated_errors(&values, &paths, |t, b| analytic_y_ex1(t, b, 1.0), |t, s| analytic_z_ex1(t, s, 1.0).unwrap_or(f64::NAN)).unwrap();
    (y0, errors)
}

#[test]
fn initial_value_matches_closed_form() {
    let (y0, _) = oracle_ex1(40, 1 << 15, RegressionBasis::default(), 1);
    let rel = (y0 - Y0_EX1).abs() / Y0_EX1;
    assert!(rel < 5e-2, "Y0 = {y0}, relative gap {rel}");
}

#[test]
fn diagonal_extraction_is_deterministic() {
    let p = build_example1(1.0);
    let paths = p.simulate(&TimeGrid::new(1.0, 6).unwrap(), 2000, 2).unwrap();
    let sol = solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap();
    assert_eq!(diagonal_y(&sol, &p, &paths).unwrap(), diagonal_y(&sol, &p, &paths).unwrap());
    assert_eq!(sol, solve_discrete(&p, &paths, &RegressionBasis::default()).unwrap());
}

#[test]
fn quadratic_and_cubic_bases_agree() {
    let (cubic, _) = oracle_ex1(20, 1 << 15, RegressionBasis::default(), 3);
    let (quadratic, _) = oracle_ex1(20, 1 << 15, RegressionBasis { degree: 2, interactions: true }, 3);
    let rel = (cubic - quadratic).abs() / cubic.abs();
    assert!(rel < 2e-2, "{cubic} vs {quadratic}");
}

/// Summed cell errors fall monotonically and approach first order from
/// above: on coarse grids the `O(dt^2)` piecewise-constant error of the smooth
/// part of `Y` still dominates the `O(dt)` Brownian part.
#[test]
fn error_decays_towards_first_order() {
    let ns = [5usize, 10, 20, 40];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &n in &ns {
        let (_, e) = oracle_ex1(n, 1 << 15, RegressionBasis::default(), derive_seed(4, &[n as u64]));
        xs.push((1.0 / n as f64).ln());
        ys.push(e.total().ln());
    }
    let local: Vec<f64> = (1..ns.len()).map(|i| (ys[i - 1] - ys[i]) / (xs[i - 1] - xs[i])).collect();
    assert!(local.iter().all(|&s| s > 0.0), "{local:?}");
    assert!(local.windows(2).all(|w| w[1] < w[0]), "{local:?}");
    assert!((0.7..=1.3).contains(local.last().unwrap()), "{local:?}");
    let fitted = least_squares_slope(&xs, &ys);
    assert!(fitted > 0.7, "{fitted}");
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use bsvie::benchmarks::write_reference_tables;
use bsvie::metrics::{l2_errors, write_loss_csv, ErrorReport, SolutionValues};
use bsvie::oracle::{solve_discrete, RegressionBasis};
use bsvie::paths::rng::{derive_seed, tags};
use bsvie::paths::{PathBatch, TimeGrid};
use bsvie::reflected::{train_reflected, ReflectedSolution};
use bsvie::solver::{evaluate, train, SolverError, TrainedSolution};
use serde::{Deserialize, Serialize};

use crate::config::{ProblemId, RunConfig};
use crate::error::CliError;
use crate::output::{Manifest, OutputDir};
use crate::problems::{build, Built};

/// What `solve` leaves behind besides the files.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// Errors against the closed form, when the problem has one.
    pub report: Option<ErrorReport>,
    pub manifest: Manifest,
}

enum Trained {
    Plain(TrainedSolution),
    Reflected(ReflectedSolution),
}

impl Trained {
    fn solution(&self) -> &TrainedSolution {
        match self {
            Self::Plain(s) => s,
            Self::Reflected(r) => &r.solution,
        }
    }
}

fn fmt_row(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",")
}

fn component_headers(base: &str, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![base.to_string()]
    } else {
        (0..dim).map(|c| format!("{base}_{c}")).collect()
    }
}

/// `n,t,y_path0,y_mean[,ref_path0,ref_mean]`; `y` holds `[(j * N + n) * dy + c]`.
fn write_y_series(w: &mut Vec<u8>, grid: &TimeGrid, y: &[f64], dy: usize, reference: Option<&SolutionValues>) -> std::io::Result<()> {
    let big_n = grid.n_steps();
    let m = y.len() / (big_n * dy);
    let mut header = vec!["n".to_string(), "t".to_string()];
    header.extend(component_headers("y_path0", dy));
    header.extend(component_headers("y_mean", dy));
    if reference.is_some() {
        header.extend(component_headers("ref_path0", dy));
        header.extend(component_headers("ref_mean", dy));
    }
    writeln!(w, "{}", header.join(","))?;
    let mean_of = |vals: &[f64], n: usize| -> Vec<f64> {
        (0..dy).map(|c| (0..m).map(|j| vals[(j * big_n + n) * dy + c]).sum::<f64>() / m as f64).collect()
    };
    for n in 0..big_n {
        let mut row = y[n * dy..(n + 1) * dy].to_vec();
        row.extend(mean_of(y, n));
        if let Some(r) = reference {
            row.extend_from_slice(r.y_at(0, n));
            row.extend(mean_of(&r.y, n));
        }
        writeln!(w, "{n},{:.16e},{}", grid.time(n), fmt_row(&row))?;
    }
    Ok(())
}

/// `n,k,t_n,t_k,z_mean[,ref_mean]` over `k >= n`.
fn write_z_surface(w: &mut Vec<u8>, grid: &TimeGrid, values: &SolutionValues, reference: Option<&SolutionValues>) -> std::io::Result<()> {
    let (big_n, dz, m) = (values.n_steps, values.z_dim, values.n_paths);
    let mut header = vec!["n", "k", "t_n", "t_k"].into_iter().map(String::from).collect::<Vec<_>>();
    header.extend(component_headers("z_mean", dz));
    if reference.is_some() {
        header.extend(component_headers("ref_mean", dz));
    }
    writeln!(w, "{}", header.join(","))?;
    let mean_of = |v: &SolutionValues, n: usize, k: usize| -> Vec<f64> {
        let mut acc = vec![0.0; dz];
        for j in 0..m {
            acc.iter_mut().zip(v.z_at(j, n, k)).for_each(|(a, x)| *a += x);
        }
        acc.iter().map(|a| a / m as f64).collect()
    };
    for n in 0..big_n {
        for k in n..big_n {
            let mut row = mean_of(values, n, k);
            if let Some(r) = reference {
                row.extend(mean_of(r, n, k));
            }
            writeln!(w, "{n},{k},{:.16e},{:.16e},{}", grid.time(n), grid.time(k), fmt_row(&row))?;
        }
    }
    Ok(())
}

/// `n,t,binding_fraction,min_projected,max_kappa` per grid index.
fn write_projection(w: &mut Vec<u8>, grid: &TimeGrid, r: &ReflectedSolution) -> std::io::Result<()> {
    let rec = &r.record;
    writeln!(w, "n,t,binding_fraction,min_projected,max_kappa")?;
    for n in 0..rec.n_steps {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for j in 0..rec.n_paths {
            let o = (j * rec.n_steps + n) * rec.value_dim;
            for c in 0..rec.value_dim {
                lo = lo.min(rec.projected[o + c]);
                hi = hi.max(rec.kappa[o + c]);
            }
        }
        writeln!(w, "{n},{:.16e},{:.16e},{lo:.16e},{hi:.16e}", grid.time(n), rec.binding_fraction(n))?;
    }
    Ok(())
}

fn write_losses(out: &mut OutputDir, losses: &[Vec<f64>]) -> Result<(), CliError> {
    for (n, curve) in losses.iter().enumerate() {
        out.write(&format!("loss_step_{n}.csv"), |w| write_loss_csv(curve, w))?;
    }
    Ok(())
}

/// Trains the configured problem, evaluates it on `m_eval` fresh paths and
/// writes the artifacts plus `run_manifest.json` into `cfg.out`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<SolveOutcome, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let (built, reference) = build(cfg)?;
    let solver = cfg.solver();
    let mut out = OutputDir::create(&cfg.out)?;
    out.write_json("run_config.json", cfg)?;

    let trained = match &built {
        Built::Plain(p) => train(p, &solver).map(Trained::Plain),
        Built::Reflected(r) => train_reflected(r, &solver, cfg.projection_mode).map(Trained::Reflected),
    };
    let trained = match trained {
        Ok(t) => t,
        Err(SolverError::Divergence { step, epoch, partial }) => {
            log::error!("training diverged at step {step}, epoch {epoch}");
            out.write_json("solution_partial.json", &partial)?;
            write_losses(&mut out, &partial.losses)?;
            out.finish("solve", "diverged", cfg, start.elapsed().as_secs_f64())?;
            return Err(CliError::Divergence { step, epoch, out: cfg.out.clone() });
        }
        Err(e) => return Err(e.into()),
    };

    let solution = trained.solution();
    let grid = solution.grid;
    match &trained {
        Trained::Plain(s) => out.write_json("solution.json", s)?,
        Trained::Reflected(r) => out.write_json("reflected_solution.json", r)?,
    }

    let problem = built.base();
    let eval = problem.simulate(&grid, cfg.m_eval, derive_seed(cfg.seed, &[tags::EVAL_PATHS]))?;
    let mut values = evaluate(solution, &eval)?;
    if let Trained::Reflected(r) = &trained {
        values.y.clone_from(&r.record.projected);
    }
    if values.y.iter().chain(&values.z).any(|v| !v.is_finite()) {
        return Err(CliError::Numerical("non-finite network output on evaluation paths".into()));
    }
    let reference_values = reference.map(|r| r.values(&eval));

    let mut report = None;
    if cfg.emit_metrics {
        if let Some(rv) = &reference_values {
            let mut r = l2_errors(rv, &values).map_err(|e| CliError::Numerical(e.to_string()))?;
            r.loss_curves.clone_from(&solution.losses);
            let times = grid.nodes();
            out.write("metrics.csv", |w| r.write_metrics_csv(w))?;
            out.write("mse_y.csv", |w| r.write_mse_y_csv(&times, w))?;
            out.write("mse_z.csv", |w| r.write_mse_z_csv(&times, w))?;
            report = Some(r);
        }
        write_losses(&mut out, &solution.losses)?;
    }
    if cfg.emit_surfaces {
        out.write("y_series.csv", |w| write_y_series(w, &grid, &values.y, values.y_dim, reference_values.as_ref()))?;
        out.write("z_surface.csv", |w| write_z_surface(w, &grid, &values, reference_values.as_ref()))?;
        if let Some(rv) = &reference_values {
            let mut z_table = Vec::new();
            out.write("analytic_y.csv", |w| write_reference_tables(rv, &grid, w, &mut z_table))?;
            out.write("analytic_z.csv", |w| w.write_all(&z_table))?;
        }
        if let Trained::Reflected(r) = &trained {
            out.write("projection.csv", |w| write_projection(w, &grid, r))?;
        }
    }
    if cfg.emit_paths {
        out.write("paths.csv", |w| eval.write_csv(w))?;
    }
    if cfg.emit_oracle {
        let basis = RegressionBasis { degree: cfg.oracle_degree, ..Default::default() };
        let paths = problem.simulate(&grid, cfg.oracle_paths, derive_seed(cfg.seed, &[tags::ORACLE_PATHS, grid.n_steps() as u64]))?;
        let oracle = solve_discrete(problem, &paths, &basis)?;
        let mut buf = Vec::new();
        oracle.write_cell_means_csv(problem, &paths, &mut buf).map_err(|e| CliError::io(out.root().join("oracle_cells.csv"), e))?;
        out.write("oracle_cells.csv", |w| w.write_all(&buf))?;
    }

    let manifest = out.finish("solve", "ok", cfg, start.elapsed().as_secs_f64())?;
    Ok(SolveOutcome { report, manifest })
}

/// One line of `oracle_convergence.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub n_steps: usize,
    pub dt: f64,
    pub err_y: f64,
    pub err_z: f64,
}

/// Regression oracle over `cfg.oracle_n_list`, errors against the closed form.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<Vec<OracleRow>, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let (built, reference) = build(cfg)?;
    let problem = match &built {
        Built::Plain(p) => p,
        Built::Reflected(_) => return Err(CliError::Config("the regression oracle does not handle the reflected problem".into())),
    };
    let reference = reference.ok_or_else(|| CliError::Config(format!("problem {} has no closed-form solution to compare against", cfg.problem.as_str())))?;
    let basis = RegressionBasis { degree: cfg.oracle_degree, ..Default::default() };
    let mut out = OutputDir::create(&cfg.out)?;
    out.write_json("run_config.json", cfg)?;

    let mut rows = Vec::new();
    for &n_steps in &cfg.oracle_n_list {
        let grid = TimeGrid::new(problem.horizon, n_steps)?;
        let paths: PathBatch = problem.simulate(&grid, cfg.oracle_paths, derive_seed(cfg.seed, &[tags::ORACLE_PATHS, n_steps as u64]))?;
        let solution = solve_discrete(problem, &paths, &basis)?;
        let values = solution.evaluate(problem, &paths)?;
        let e = reference.oracle_errors(&values, &paths)?;
        log::info!("oracle N={n_steps}: err_y={:.3e} err_z={:.3e}", e.err_y, e.err_z);
        rows.push(OracleRow { n_steps, dt: grid.dt(), err_y: e.err_y, err_z: e.err_z });
    }
    out.write("oracle_convergence.csv", |w| {
        writeln!(w, "N,dt,err_y,err_z")?;
        for r in &rows {
            writeln!(w, "{},{:.16e},{:.16e},{:.16e}", r.n_steps, r.dt, r.err_y, r.err_z)?;
        }
        Ok(())
    })?;
    out.finish("oracle", "ok", cfg, start.elapsed().as_secs_f64())?;
    Ok(rows)
}

/// One line of `bench_report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub example: String,
    /// `Y` or `Z`.
    pub quantity: String,
    pub l2: f64,
    /// `None` when the reference mass vanishes.
    pub rel_l2: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.16e}"))
}

pub fn render_bench_report(rows: &[BenchRow]) -> String {
    let mut s = String::from("example,quantity,l2,rel_l2\n");
    for r in rows {
        s += &format!("{},{},{:.16e},{}\n", r.example, r.quantity, r.l2, fmt_opt(r.rel_l2));
    }
    s
}

pub fn parse_bench_report(text: &str) -> Result<Vec<BenchRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("example,quantity,l2,rel_l2") {
        return Err("unexpected header".into());
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let [example, quantity, l2, rel] = f[..] else { return Err(format!("bad row {line:?}")) };
            let l2 = l2.parse().map_err(|e| format!("{line:?}: {e}"))?;
            let rel_l2 = if rel == "undefined" { None } else { Some(rel.parse().map_err(|e| format!("{line:?}: {e}"))?) };
            Ok(BenchRow { example: example.into(), quantity: quantity.into(), l2, rel_l2 })
        })
        .collect()
}

/// Table with rows `Y`, `Z` and columns `l2`, `rel_l2` for one example.
pub fn format_bench_table(example: &str, rows: &[BenchRow]) -> String {
    let mut s = format!("{example}\n{:<8} {:>24} {:>24}\n", "", "l2", "rel_l2");
    for r in rows.iter().filter(|r| r.example == example) {
        s += &format!("{:<8} {:>24} {:>24}\n", r.quantity, format!("{:.16e}", r.l2), fmt_opt(r.rel_l2));
    }
    s
}

/// Solves both closed-form examples with `cfg`'s solver settings, each in
/// its own subdirectory, and writes `bench_report.csv`.
pub fn cmd_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = OutputDir::create(&cfg.out)?;
    out.write_json("run_config.json", cfg)?;
    let mut rows = Vec::new();
    for problem in [ProblemId::Example1, ProblemId::Example2] {
        let name = problem.as_str();
        let sub = RunConfig { problem, out: cfg.out.join(name), emit_metrics: true, ..cfg.clone() };
        let outcome = cmd_solve(&sub)?;
        let report = outcome.report.expect("benchmark problems have a closed form");
        rows.push(BenchRow { example: name.into(), quantity: "Y".into(), l2: report.e_y, rel_l2: report.er_y });
        rows.push(BenchRow { example: name.into(), quantity: "Z".into(), l2: report.e_z, rel_l2: report.er_z });
        println!("{}", format_bench_table(name, &rows));
    }
    let text = render_bench_report(&rows);
    out.write("bench_report.csv", |w| w.write_all(text.as_bytes()))?;
    let back = std::fs::read_to_string(out.root().join("bench_report.csv")).map_err(|e| CliError::io(out.root().join("bench_report.csv"), e))?;
    if parse_bench_report(&back).as_deref() != Ok(rows.as_slice()) {
        return Err(CliError::Numerical("bench_report.csv does not parse back to the printed values".into()));
    }
    out.finish("bench", "ok", cfg, start.elapsed().as_secs_f64())?;
    Ok(rows)
}

/// Runs `f` on a pool capped at `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Reads the manifest written into `dir`.
pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(crate::output::MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("malformed manifest: {e}")))
}

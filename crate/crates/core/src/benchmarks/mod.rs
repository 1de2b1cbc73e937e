//! Closed-form reference solutions for the two linear benchmark equations.

mod example1;
mod example2;
pub mod quadrature;
mod resolvent;

pub use example1::{
    analytic_y_ex1, analytic_z_ex1, analytic_z_ex1_with_tol, build_example1, Example1Generator, Example1Terminal,
    Example1ZTable, reference_values_ex1, Z_QUADRATURE_TOL,
};
pub use example2::{analytic_y_ex2, analytic_z_ex2, build_example2, reference_values_ex2, Example2Generator, Example2Spec, Example2Terminal};
pub use resolvent::{resolvent_kernel, ExpKernel};

use std::io::{self, Write};

use crate::metrics::SolutionValues;
use crate::paths::TimeGrid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchmarkError {
    #[error("reference defined only for t <= s <= T, got t={t}, s={s}")]
    Domain { t: f64, s: f64 },
    #[error("invalid benchmark parameters: {0}")]
    Parameter(String),
}

fn headers(base: &str, dim: usize) -> String {
    if dim == 1 {
        base.to_string()
    } else {
        (0..dim).map(|c| format!("{base}_{c}")).collect::<Vec<_>>().join(",")
    }
}

/// Cross-path means of reference values: `t,Y_analytic_mean` rows into
/// `y_out` and `t,s,Z_analytic` rows over `s >= t` into `z_out`.
pub fn write_reference_tables<W: Write, V: Write>(reference: &SolutionValues, grid: &TimeGrid, mut y_out: W, mut z_out: V) -> io::Result<()> {
    let (m, big_n) = (reference.n_paths, reference.n_steps);
    let (dy, dz) = (reference.y_dim, reference.z_dim);
    writeln!(y_out, "t,{}", headers("Y_analytic_mean", dy))?;
    for n in 0..big_n {
        let mut mean = vec![0.0; dy];
        for j in 0..m {
            mean.iter_mut().zip(reference.y_at(j, n)).for_each(|(a, v)| *a += v);
        }
        let cols: Vec<String> = mean.iter().map(|v| format!("{:.16e}", v / m as f64)).collect();
        writeln!(y_out, "{:.16e},{}", grid.time(n), cols.join(","))?;
    }
    writeln!(z_out, "t,s,{}", headers("Z_analytic", dz))?;
    for n in 0..big_n {
        for k in n..big_n {
            let mut mean = vec![0.0; dz];
            for j in 0..m {
                mean.iter_mut().zip(reference.z_at(j, n, k)).for_each(|(a, v)| *a += v);
            }
            let cols: Vec<String> = mean.iter().map(|v| format!("{:.16e}", v / m as f64)).collect();
            writeln!(z_out, "{:.16e},{:.16e},{}", grid.time(n), grid.time(k), cols.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_tables_average_over_paths() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let mut v = SolutionValues::zeros(2, 2, 1, 1);
        v.y = vec![1.0, 2.0, 3.0, 4.0];
        v.z = vec![1.0, 1.0, 1.0, 3.0, 5.0, 7.0];
        let (mut y, mut z) = (Vec::new(), Vec::new());
        write_reference_tables(&v, &grid, &mut y, &mut z).unwrap();
        let y = String::from_utf8(y).unwrap();
        let z = String::from_utf8(z).unwrap();
        let y_rows: Vec<&str> = y.lines().collect();
        assert_eq!(y_rows[0], "t,Y_analytic_mean");
        assert_eq!(y_rows[1], format!("{:.16e},{:.16e}", 0.0, 2.0));
        assert_eq!(y_rows[2], format!("{:.16e},{:.16e}", 0.5, 3.0));
        let z_rows: Vec<&str> = z.lines().collect();
        assert_eq!(z_rows.len(), 4);
        assert_eq!(z_rows[0], "t,s,Z_analytic");
        assert_eq!(z_rows[3], format!("{:.16e},{:.16e},{:.16e}", 0.5, 0.5, 4.0));
    }
}

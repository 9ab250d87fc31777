//! Dense two-phase simplex for the tiny LPs behind the convex conjugate.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;

pub(crate) enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
}

/// `min c.x` subject to `A x = b`, `x >= 0`; `a` is row-major `rows x cols`.
/// Uses Bland's rule throughout, so it cannot cycle.
pub(crate) fn minimize(c: &[f64], a: &[f64], b: &[f64]) -> Result<LpOutcome> {
    let rows = b.len();
    let cols = c.len();
    if a.len() != rows * cols {
        return Err(Error::LinearProgram("constraint matrix has wrong size".into()));
    }
    // Tableau columns: original vars, one artificial per row, rhs.
    let width = cols + rows + 1;
    let mut t = vec![0.0; rows * width];
    for r in 0..rows {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..cols {
            t[r * width + j] = sign * a[r * cols + j];
        }
        t[r * width + cols + r] = 1.0;
        t[r * width + width - 1] = sign * b[r];
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    // Phase 1: minimize the sum of artificials.
    let mut phase1 = vec![0.0; cols + rows];
    for v in phase1.iter_mut().skip(cols) {
        *v = 1.0;
    }
    run(&mut t, &mut basis, &phase1, rows, width, cols + rows)?;
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &bv)| bv >= cols)
        .map(|(r, _)| t[r * width + width - 1])
        .sum();
    if infeas > FEAS_TOL {
        return Ok(LpOutcome::Infeasible);
    }
    // Drive remaining artificials out of the basis where possible.
    for r in 0..rows {
        if basis[r] < cols {
            continue;
        }
        if let Some(j) = (0..cols).find(|&j| t[r * width + j].abs() > PIVOT_TOL) {
            pivot(&mut t, &mut basis, rows, width, r, j);
        }
    }
    // Phase 2 over original variables; rows still held by an artificial are
    // redundant and carry zero.
    let mut phase2 = vec![0.0; cols + rows];
    phase2[..cols].copy_from_slice(c);
    run(&mut t, &mut basis, &phase2, rows, width, cols)?;
    let mut x = vec![0.0; cols];
    for (r, &bv) in basis.iter().enumerate() {
        if bv < cols {
            x[bv] = t[r * width + width - 1].max(0.0);
        }
    }
    let value = x.iter().zip(c).map(|(a, b)| a * b).sum();
    Ok(LpOutcome::Optimal { value, x })
}

fn run(
    t: &mut [f64],
    basis: &mut [usize],
    cost: &[f64],
    rows: usize,
    width: usize,
    allowed: usize,
) -> Result<()> {
    for _ in 0..10_000 {
        // Reduced costs: c_j - c_B B^-1 A_j, read off the tableau.
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let mut rc = cost[j];
            for r in 0..rows {
                rc -= cost[basis[r]] * t[r * width + j];
            }
            rc < -PIVOT_TOL
        });
        let Some(j) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            let coef = t[r * width + j];
            if coef > PIVOT_TOL {
                let ratio = t[r * width + width - 1] / coef;
                let better = match leave {
                    None => true,
                    Some((lr, best)) => {
                        ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[r] < basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, _)) = leave else {
            return Err(Error::LinearProgram("problem is unbounded".into()));
        };
        pivot(t, basis, rows, width, r, j);
    }
    Err(Error::LinearProgram("simplex iteration limit".into()))
}

fn pivot(t: &mut [f64], basis: &mut [usize], rows: usize, width: usize, pr: usize, pc: usize) {
    let p = t[pr * width + pc];
    for k in 0..width {
        t[pr * width + k] /= p;
    }
    for r in 0..rows {
        if r == pr {
            continue;
        }
        let factor = t[r * width + pc];
        if factor != 0.0 {
            for k in 0..width {
                t[r * width + k] -= factor * t[pr * width + k];
            }
        }
    }
    basis[pr] = pc;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_mixture_lp() {
        // Controls {-1, 0, 1} with cost u^2, target velocity 0.5.
        let c = [1.0, 0.0, 1.0];
        let a = [-1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let b = [0.5, 1.0];
        match minimize(&c, &a, &b).unwrap() {
            LpOutcome::Optimal { value, x } => {
                assert!((value - 0.5).abs() < 1e-12);
                assert!((x[1] - 0.5).abs() < 1e-12 && (x[2] - 0.5).abs() < 1e-12);
            }
            LpOutcome::Infeasible => panic!("should be feasible"),
        }
    }

    #[test]
    fn infeasible_lp() {
        let c = [0.0, 0.0];
        let a = [-1.0, 1.0, 1.0, 1.0];
        let b = [2.0, 1.0];
        assert!(matches!(minimize(&c, &a, &b).unwrap(), LpOutcome::Infeasible));
    }
}

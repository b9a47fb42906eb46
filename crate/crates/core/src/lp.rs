//! Dense two-phase simplex for `max cᵀx  s.t.  Ax = b, x ≥ 0`.
//!
//! Bland's rule is used for both the entering and the leaving variable, so the
//! method cannot cycle. Rows found to be redundant after phase 1 are dropped.

use crate::error::{Error, Result};

/// Pivot elements below this magnitude are treated as zero.
const PIVOT_EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
    /// Number of constraint rows removed as linearly dependent.
    pub dropped_rows: usize,
}

struct Tableau {
    /// `rows × (cols + 1)`; the last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    /// Reduced costs `z_j - c_j` and, in the last slot, the objective value.
    obj: Vec<f64>,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.cols + 1;
        let pv = self.t[r][c];
        for j in 0..width {
            self.t[r][j] /= pv;
        }
        let prow = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for j in 0..width {
                    row[j] -= f * prow[j];
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for j in 0..width {
                self.obj[j] -= f * prow[j];
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    fn set_objective(&mut self, cost: &[f64]) {
        let width = self.cols + 1;
        self.obj = vec![0.0; width];
        for j in 0..self.cols {
            self.obj[j] = -cost[j];
        }
        for (i, row) in self.t.iter().enumerate() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..width {
                    self.obj[j] += cb * row[j];
                }
            }
        }
    }

    /// Runs simplex iterations over the columns allowed by `usable`.
    fn optimize(&mut self, usable: &dyn Fn(usize) -> bool, tol: f64, max_pivots: usize) -> Result<()> {
        loop {
            let entering = (0..self.cols).find(|&j| usable(j) && self.obj[j] < -tol);
            let Some(c) = entering else { return Ok(()) };
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, row) in self.t.iter().enumerate() {
                let a = row[c];
                if a > PIVOT_EPS {
                    let ratio = row[self.cols] / a;
                    let better = match best {
                        None => true,
                        Some((r, _, bidx)) => {
                            ratio < r - 1e-14 || (ratio <= r + 1e-14 && self.basis[i] < bidx)
                        }
                    };
                    if better {
                        best = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            let Some((_, r, _)) = best else {
                return Err(Error::Infeasible("objective is unbounded".into()));
            };
            self.pivot(r, c);
            if self.pivots > max_pivots {
                return Err(Error::Infeasible(format!("simplex exceeded {max_pivots} pivots")));
            }
        }
    }
}

fn check_shape(a: &[Vec<f64>], b: &[f64], n: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Size(format!("{} constraint rows but {} right-hand sides", a.len(), b.len())));
    }
    if let Some(row) = a.iter().find(|r| r.len() != n) {
        return Err(Error::Size(format!("constraint row has {} entries, expected {n}", row.len())));
    }
    Ok(())
}

/// Phase 1: finds a basic feasible point and returns the tableau over the
/// original columns with artificials driven out or their rows dropped.
fn phase_one(a: &[Vec<f64>], b: &[f64], n: usize, tol: f64) -> Result<(Tableau, usize)> {
    let m = a.len();
    let cols = n + m;
    let mut t = Vec::with_capacity(m);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; cols + 1];
        for j in 0..n {
            row[j] = sign * a[i][j];
        }
        row[n + i] = 1.0;
        row[cols] = sign * b[i];
        t.push(row);
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
        cols,
        obj: Vec::new(),
        pivots: 0,
    };
    let mut cost = vec![0.0; cols];
    for c in cost.iter_mut().skip(n) {
        *c = -1.0;
    }
    tab.set_objective(&cost);
    let max_pivots = 50 * (cols + m) + 1000;
    tab.optimize(&|_| true, tol, max_pivots)?;
    let infeas = -tab.obj[cols];
    let scale = 1.0 + b.iter().map(|x| x.abs()).sum::<f64>();
    if infeas > tol * scale {
        return Err(Error::Infeasible(format!("constraints cannot be met (residual {infeas:.3e})")));
    }
    // drive remaining artificials out of the basis
    let mut dropped = 0;
    let mut i = 0;
    while i < tab.t.len() {
        if tab.basis[i] >= n {
            let col = (0..n).find(|&j| tab.t[i][j].abs() > 1e-9);
            match col {
                Some(j) => {
                    tab.pivot(i, j);
                    i += 1;
                }
                None => {
                    tab.t.remove(i);
                    tab.basis.remove(i);
                    dropped += 1;
                }
            }
        } else {
            i += 1;
        }
    }
    Ok((tab, dropped))
}

fn extract(tab: &Tableau, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for (i, &bv) in tab.basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab.t[i][tab.cols].max(0.0);
        }
    }
    x
}

/// Returns a basic feasible solution of `Ax = b, x ≥ 0`.
pub fn find_feasible(a: &[Vec<f64>], b: &[f64], n: usize, tol: f64) -> Result<LpSolution> {
    check_shape(a, b, n)?;
    let (tab, dropped) = phase_one(a, b, n, tol)?;
    Ok(LpSolution {
        x: extract(&tab, n),
        objective: 0.0,
        pivots: tab.pivots,
        dropped_rows: dropped,
    })
}

/// Maximizes `cᵀx` subject to `Ax = b, x ≥ 0`.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64], tol: f64) -> Result<LpSolution> {
    let n = c.len();
    check_shape(a, b, n)?;
    let (mut tab, dropped) = phase_one(a, b, n, tol)?;
    let mut cost = vec![0.0; tab.cols];
    cost[..n].copy_from_slice(c);
    tab.set_objective(&cost);
    let max_pivots = tab.pivots + 50 * (tab.cols + tab.t.len()) + 1000;
    tab.optimize(&|j| j < n, tol, max_pivots)?;
    let x = extract(&tab, n);
    let objective = x.iter().zip(c).map(|(x, c)| x * c).sum();
    Ok(LpSolution {
        x,
        objective,
        pivots: tab.pivots,
        dropped_rows: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_max_problem() {
        // max x + 2y  s.t. x + y + s = 4, x + 3y + r = 6
        let c = [1.0, 2.0, 0.0, 0.0];
        let a = vec![vec![1.0, 1.0, 1.0, 0.0], vec![1.0, 3.0, 0.0, 1.0]];
        let b = [4.0, 6.0];
        let s = maximize(&c, &a, &b, 1e-10).unwrap();
        assert!((s.objective - 5.0).abs() < 1e-10, "{:?}", s);
        assert!((s.x[0] - 3.0).abs() < 1e-10 && (s.x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn redundant_rows_dropped() {
        let c = [1.0, 0.0, 0.0];
        let a = vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0], vec![1.0, 1.0, 0.0]];
        let b = [1.0, 2.0, 0.5];
        let s = maximize(&c, &a, &b, 1e-10).unwrap();
        assert_eq!(s.dropped_rows, 1);
        assert!((s.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let a = vec![vec![1.0, 1.0]];
        let b = [-1.0];
        assert!(matches!(find_feasible(&a, &b, 2, 1e-10), Err(Error::Infeasible(_))));
    }

    #[test]
    fn degenerate_problem_terminates() {
        // classic cycling example (Beale) in equality form with slacks
        let c = [0.75, -150.0, 0.02, -6.0, 0.0, 0.0, 0.0];
        let a = vec![
            vec![0.25, -60.0, -0.04, 9.0, 1.0, 0.0, 0.0],
            vec![0.5, -90.0, -0.02, 3.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        ];
        let b = [0.0, 0.0, 1.0];
        let s = maximize(&c, &a, &b, 1e-12).unwrap();
        assert!((s.objective - 0.05).abs() < 1e-10, "{}", s.objective);
    }
}

//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Solves `max cᵀx` subject to equality rows, `≥` rows and `x ≥ 0`. Sizes of
//! interest are a few hundred variables at most.

use crate::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const FEASIBILITY_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 50_000;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearProgram {
    /// Objective coefficients to maximize.
    pub objective: Vec<f64>,
    /// Rows `a·x = b`.
    pub equalities: Vec<(Vec<f64>, f64)>,
    /// Rows `a·x ≥ b`.
    pub lower_bounds: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

struct Tableau {
    /// `rows × (cols + 1)`; the last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    /// Original row number of each tableau row (rows may be dropped).
    origin: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        self.pivots += 1;
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes `cost · x` over the current basis. Columns with
    /// `allowed[j] == false` never enter.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::NotConverged {
                    iterations: self.pivots,
                    residual: f64::NAN,
                });
            }
            // Bland: lowest-index column with positive reduced cost
            let entering = (0..self.cols).find(|&j| {
                allowed[j] && {
                    let z: f64 = self.basis.iter().enumerate().map(|(i, &b)| cost[b] * self.t[i][j]).sum();
                    cost[j] - z > PIVOT_EPS
                }
            });
            let Some(c) = entering else { return Ok(()) };
            // ratio test, ties to the lowest basic index
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..self.t.len() {
                let a = self.t[i][c];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match best {
                        None => true,
                        Some((br, _, bb)) => ratio < br - PIVOT_EPS || (ratio <= br + PIVOT_EPS && self.basis[i] < bb),
                    };
                    if better {
                        best = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            let Some((_, r, _)) = best else { return Err(Error::Unbounded) };
            self.pivot(r, c);
        }
    }
}

/// Two-phase simplex. Infeasible programs report the phase-one residual and
/// the (original) rows whose artificial variables stayed positive; equality
/// rows are numbered first, then the `≥` rows.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.objective.len();
    let n_ge = lp.lower_bounds.len();
    let rows: Vec<(Vec<f64>, f64, Option<usize>)> = lp
        .equalities
        .iter()
        .map(|(a, b)| (a.clone(), *b, None))
        .chain(lp.lower_bounds.iter().enumerate().map(|(k, (a, b))| (a.clone(), *b, Some(k))))
        .collect();
    for (a, b, _) in &rows {
        if a.len() != n {
            return Err(Error::DimensionMismatch {
                context: "constraint row length",
                expected: n,
                got: a.len(),
            });
        }
        if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite linear program coefficient".into()));
        }
    }
    let m = rows.len();
    let structural = n + n_ge;
    let cols = structural + m;

    let mut t = Vec::with_capacity(m);
    for (i, (a, b, surplus)) in rows.iter().enumerate() {
        let mut row = vec![0.0; cols + 1];
        row[..n].copy_from_slice(a);
        if let Some(k) = surplus {
            row[n + k] = -1.0;
        }
        row[cols] = *b;
        if *b < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        row[structural + i] = 1.0;
        t.push(row);
    }
    let mut tab = Tableau {
        t,
        basis: (structural..cols).collect(),
        cols,
        origin: (0..m).collect(),
        pivots: 0,
    };

    // phase one: maximize −Σ artificials
    let mut cost1 = vec![0.0; cols];
    for c in cost1[structural..].iter_mut() {
        *c = -1.0;
    }
    tab.optimize(&cost1, &vec![true; cols])?;
    let residual: f64 = (0..m).filter(|&i| tab.basis[i] >= structural).map(|i| tab.rhs(i)).sum();
    if residual > FEASIBILITY_EPS {
        let violated = (0..m)
            .filter(|&i| tab.basis[i] >= structural && tab.rhs(i) > FEASIBILITY_EPS)
            .map(|i| tab.origin[i])
            .collect();
        return Err(Error::Infeasible {
            residual,
            rows: violated,
        });
    }

    // drive zero-valued artificials out of the basis; rows with no
    // structural entry left are redundant and dropped
    let mut i = 0;
    while i < tab.t.len() {
        if tab.basis[i] >= structural {
            match (0..structural).find(|&j| tab.t[i][j].abs() > PIVOT_EPS) {
                Some(j) => {
                    tab.pivot(i, j);
                    i += 1;
                }
                None => {
                    tab.t.remove(i);
                    tab.basis.remove(i);
                    tab.origin.remove(i);
                }
            }
        } else {
            i += 1;
        }
    }

    let mut cost2 = vec![0.0; cols];
    cost2[..n].copy_from_slice(&lp.objective);
    let allowed: Vec<bool> = (0..cols).map(|j| j < structural).collect();
    tab.optimize(&cost2, &allowed)?;

    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rhs(i).max(0.0);
        }
    }
    let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    Ok(LpSolution {
        x,
        value,
        pivots: tab.pivots,
    })
}

//! Small dense linear programs with box-bounded variables.
//!
//! Solves `maximize cᵀx subject to A x = b, l ≤ x ≤ u` with a two-phase
//! bounded-variable primal simplex. Nonbasic variables rest at either bound;
//! Bland's rule picks entering and leaving variables, so the method cannot
//! cycle. Meant for the handful of variables a shim problem has, not for
//! large sparse models.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("bounds must be finite with lower <= upper")]
    BadBounds,
    #[error("dimension mismatch in linear program")]
    Dimension,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    /// Objective coefficients (maximized).
    pub objective: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

struct Tableau {
    /// Canonical rows `B⁻¹ [A | I]`.
    rows: Vec<Vec<f64>>,
    /// Values of the basic variables.
    beta: Vec<f64>,
    basis: Vec<usize>,
    at_upper: Vec<bool>,
    upper: Vec<f64>,
    /// Columns that may not enter the basis.
    barred: Vec<bool>,
}

impl Tableau {
    fn value(&self, j: usize) -> f64 {
        if let Some(i) = self.basis.iter().position(|&b| b == j) {
            self.beta[i]
        } else if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.rows[r][j];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[j];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[r] = j;
    }

    /// Maximize `cost · y` from the current basic feasible point.
    fn optimize(&mut self, cost: &[f64]) -> Result<(), LpError> {
        let ncols = cost.len();
        let max_iter = 50 * (ncols + self.rows.len()) + 1000;
        for _ in 0..max_iter {
            // Reduced costs d_j = c_j − c_Bᵀ T_j; Bland: first eligible column.
            let mut entering = None;
            for j in 0..ncols {
                if self.barred[j] || self.basis.contains(&j) {
                    continue;
                }
                let d = cost[j]
                    - self
                        .basis
                        .iter()
                        .zip(&self.rows)
                        .map(|(&b, row)| cost[b] * row[j])
                        .sum::<f64>();
                let scale = 1.0 + cost[j].abs();
                if (!self.at_upper[j] && d > 1e-12 * scale) || (self.at_upper[j] && d < -1e-12 * scale) {
                    entering = Some((j, if self.at_upper[j] { -1.0 } else { 1.0 }));
                    break;
                }
            }
            let Some((j, sigma)) = entering else {
                return Ok(());
            };

            // Ratio test including the entering variable's own bound flip.
            let mut theta = self.upper[j];
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.rows.len() {
                let a = sigma * self.rows[i][j];
                let b = self.basis[i];
                let (t, to_upper) = if a > PIVOT_TOL {
                    (self.beta[i].max(0.0) / a, false)
                } else if a < -PIVOT_TOL && self.upper[b].is_finite() {
                    ((self.upper[b] - self.beta[i]).max(0.0) / -a, true)
                } else {
                    continue;
                };
                // Ties go to the lowest basic index; a tie with the bound flip keeps the flip.
                let tie = (t - theta).abs() <= 1e-15 * (1.0 + theta.abs());
                let better = if tie {
                    matches!(leave, Some((li, _)) if self.basis[i] < self.basis[li])
                } else {
                    t < theta
                };
                if better {
                    theta = t;
                    leave = Some((i, to_upper));
                }
            }
            if !theta.is_finite() {
                return Err(LpError::Unbounded);
            }
            for i in 0..self.rows.len() {
                self.beta[i] -= sigma * theta * self.rows[i][j];
            }
            match leave {
                None => {
                    self.at_upper[j] = !self.at_upper[j];
                }
                Some((r, to_upper)) => {
                    let start = if self.at_upper[j] { self.upper[j] } else { 0.0 };
                    let leaving = self.basis[r];
                    self.at_upper[leaving] = to_upper;
                    self.at_upper[j] = false;
                    self.beta[r] = start + sigma * theta;
                    self.pivot(r, j);
                }
            }
        }
        Err(LpError::IterationLimit)
    }
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            objective,
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            lower,
            upper,
        }
    }

    pub fn with_equality(mut self, row: Vec<f64>, rhs: f64) -> Self {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let n = self.num_vars();
        let m = self.eq_rows.len();
        if self.lower.len() != n
            || self.upper.len() != n
            || self.eq_rhs.len() != m
            || self.eq_rows.iter().any(|r| r.len() != n)
        {
            return Err(LpError::Dimension);
        }
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| !l.is_finite() || !u.is_finite() || l > u)
        {
            return Err(LpError::BadBounds);
        }

        // Shift to y = x − l ∈ [0, u − l]; scale and sign rows so rhs ≥ 0.
        let mut rows = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        for (k, (row, &rhs)) in self.eq_rows.iter().zip(&self.eq_rhs).enumerate() {
            let shifted = rhs - row.iter().zip(&self.lower).map(|(a, l)| a * l).sum::<f64>();
            let scale = row.iter().fold(0.0f64, |s, a| s.max(a.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let sign = if shifted < 0.0 { -1.0 } else { 1.0 };
            let mut full = vec![0.0; n + m];
            for (dst, a) in full.iter_mut().zip(row) {
                *dst = sign * a / scale;
            }
            full[n + k] = 1.0;
            rows.push(full);
            beta.push(sign * shifted / scale);
        }
        let mut upper: Vec<f64> = self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect();
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));
        let mut tab = Tableau {
            rows,
            beta,
            basis: (n..n + m).collect(),
            at_upper: vec![false; n + m],
            upper,
            barred: vec![false; n + m],
        };

        // Phase 1: drive artificials to zero.
        let mut phase1 = vec![0.0; n + m];
        for c in phase1.iter_mut().skip(n) {
            *c = -1.0;
        }
        tab.optimize(&phase1)?;
        let infeasibility: f64 = (n..n + m).map(|j| tab.value(j)).sum();
        let rhs_scale = 1.0 + tab.beta.iter().fold(0.0f64, |s, b| s.max(b.abs()));
        if infeasibility > FEAS_TOL * rhs_scale {
            return Err(LpError::Infeasible);
        }
        for j in n..n + m {
            tab.barred[j] = true;
            tab.upper[j] = 0.0;
        }
        // Pivot remaining (zero-valued) artificials out where a structural column allows.
        for r in 0..m {
            if tab.basis[r] >= n {
                if let Some(j) = (0..n)
                    .filter(|j| !tab.basis.contains(j))
                    .find(|&j| tab.rows[r][j].abs() > 1e-9)
                {
                    let value = tab.value(j);
                    tab.beta[r] = value;
                    tab.pivot(r, j);
                }
            }
        }

        // Phase 2.
        let mut cost = self.objective.clone();
        cost.extend(std::iter::repeat_n(0.0, m));
        tab.optimize(&cost)?;

        let x: Vec<f64> = (0..n)
            .map(|j| (self.lower[j] + tab.value(j)).clamp(self.lower[j], self.upper[j]))
            .collect();
        let objective = x.iter().zip(&self.objective).map(|(a, c)| a * c).sum();
        Ok(LpSolution { x, objective })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_only_goes_to_the_bounds() {
        let lp = LinearProgram::new(vec![1.0, -2.0, 0.0], vec![-1.0, -3.0, 0.0], vec![2.0, 4.0, 1.0]);
        let s = lp.solve().unwrap();
        assert_eq!(&s.x[..2], &[2.0, -3.0]);
        assert_eq!(s.objective, 8.0);
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 2y s.t. x + y + s = 4, x + 3y + t = 6, all in [0, 10]
        let lp = LinearProgram::new(vec![3.0, 2.0, 0.0, 0.0], vec![0.0; 4], vec![10.0; 4])
            .with_equality(vec![1.0, 1.0, 1.0, 0.0], 4.0)
            .with_equality(vec![1.0, 3.0, 0.0, 1.0], 6.0);
        let s = lp.solve().unwrap();
        assert!((s.objective - 12.0).abs() < 1e-12);
        assert!((s.x[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_equalities() {
        let lp = LinearProgram::new(vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, 1.0])
            .with_equality(vec![1.0, 1.0], 3.0);
        assert_eq!(lp.solve(), Err(LpError::Infeasible));
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let lp = LinearProgram::new(vec![1.0, 0.0], vec![-5.0, -5.0], vec![5.0, 5.0])
            .with_equality(vec![1.0, -1.0], 0.0)
            .with_equality(vec![2.0, -2.0], 0.0);
        let s = lp.solve().unwrap();
        assert_eq!(s.x, vec![5.0, 5.0]);
    }

    #[test]
    fn degenerate_start_terminates() {
        // Many ties at zero; Bland's rule must not cycle.
        let lp = LinearProgram::new(vec![0.75, -150.0, 0.02, -6.0], vec![0.0; 4], vec![1.0; 4])
            .with_equality(vec![0.25, -60.0, -0.04, 9.0], 0.0)
            .with_equality(vec![0.5, -90.0, -0.02, 3.0], 0.0);
        let s = lp.solve().unwrap();
        for (row, rhs) in lp.eq_rows.iter().zip(&lp.eq_rhs) {
            let lhs: f64 = row.iter().zip(&s.x).map(|(a, x)| a * x).sum();
            assert!((lhs - rhs).abs() < 1e-9);
        }
        assert!(s.objective >= 0.0);
    }

    #[test]
    fn rejects_bad_bounds() {
        let lp = LinearProgram::new(vec![1.0], vec![1.0], vec![0.0]);
        assert_eq!(lp.solve(), Err(LpError::BadBounds));
    }
}

//! Minimum total transmit power subject to per-user SINR targets.
//!
//! User `i` needs `p_i |g_i|^2 >= c_i (sum_{j != i} p_j |g_i|^2 + sigma_i^2)`.
//! Dividing by `|g_i|^2` gives the rows `p_i - c_i sum_{j != i} p_j >= b_i`
//! with `b_i = c_i sigma_i^2 / |g_i|^2`, which is what both solvers use.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::abg::{required_sinr, AbgParams};
use crate::error::{Error, Result};

/// Relative tolerance when checking a solution against its constraints.
pub const CONSTRAINT_TOL: f64 = 1e-8;
const PIVOT_EPS: f64 = 1e-12;
const MAX_PIVOTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProblem {
    /// Linear SINR thresholds `c_i`.
    pub thresholds: Vec<f64>,
    /// `|g_i|^2`.
    pub gains_sq: Vec<f64>,
    pub noise_vars: Vec<f64>,
}

impl PowerProblem {
    pub fn new(thresholds: Vec<f64>, gains_sq: Vec<f64>, noise_vars: Vec<f64>) -> Result<Self> {
        let n = thresholds.len();
        if n == 0 {
            return Err(Error::InvalidInput("problem has no users".into()));
        }
        if gains_sq.len() != n || noise_vars.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} thresholds, {} gains, {} noise variances",
                gains_sq.len(),
                noise_vars.len()
            )));
        }
        for (name, v) in [
            ("threshold", &thresholds),
            ("gain", &gains_sq),
            ("noise variance", &noise_vars),
        ] {
            if let Some(x) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        Ok(Self {
            thresholds,
            gains_sq,
            noise_vars,
        })
    }

    pub fn n_users(&self) -> usize {
        self.thresholds.len()
    }

    /// Right-hand side `b_i = c_i sigma_i^2 / |g_i|^2` of the normalized rows.
    pub fn rhs(&self) -> Vec<f64> {
        (0..self.n_users())
            .map(|i| self.thresholds[i] * self.noise_vars[i] / self.gains_sq[i])
            .collect()
    }

    /// Slack of constraint `i` in the original (un-normalized) form.
    pub fn constraint_slack(&self, powers: &[f64], i: usize) -> f64 {
        let others: f64 = powers
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, p)| p)
            .sum();
        let g = self.gains_sq[i];
        powers[i] * g - self.thresholds[i] * (others * g + self.noise_vars[i])
    }

    /// Every constraint holds within [`CONSTRAINT_TOL`] relative and every
    /// power is non-negative.
    pub fn is_feasible(&self, powers: &[f64]) -> bool {
        powers.len() == self.n_users()
            && powers.iter().all(|&p| p >= 0.0)
            && (0..self.n_users()).all(|i| {
                let scale = powers[i] * self.gains_sq[i];
                self.constraint_slack(powers, i) >= -CONSTRAINT_TOL * scale.max(f64::MIN_POSITIVE)
            })
    }
}

/// `c_i` from each user's curve and target.
pub fn build_problem(
    params: &[AbgParams],
    etas: &[f64],
    gains_sq: &[f64],
    noise_vars: &[f64],
) -> Result<PowerProblem> {
    if params.len() != etas.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} curves for {} targets",
            params.len(),
            etas.len()
        )));
    }
    let thresholds = params
        .iter()
        .zip(etas)
        .map(|(p, &eta)| {
            let r = required_sinr(p, eta)?;
            if r.below_floor {
                return Err(Error::InvalidInput(format!(
                    "target {eta} is met at zero SINR (floor {}); nothing to allocate",
                    p.floor()
                )));
            }
            Ok(r.threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    PowerProblem::new(thresholds, gains_sq.to_vec(), noise_vars.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

/// `powers` is empty and `total` is 0 when infeasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSolution {
    pub status: SolveStatus,
    pub powers: Vec<f64>,
    pub total: f64,
}

impl PowerSolution {
    fn optimal(powers: Vec<f64>) -> Self {
        let total = powers.iter().sum();
        Self {
            status: SolveStatus::Optimal,
            powers,
            total,
        }
    }

    fn infeasible() -> Self {
        Self {
            status: SolveStatus::Infeasible,
            powers: Vec::new(),
            total: 0.0,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Dense tableau: `rows[i] = [a_i0 .. a_i(n-1) | rhs]`.
struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.rows[r][c];
        for v in &mut self.rows[r] {
            *v /= piv;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimize `cost . x` over columns allowed to enter, with Bland's rule.
    fn optimize(&mut self, cost: &[f64], allowed: impl Fn(usize) -> bool) -> Result<()> {
        for _ in 0..MAX_PIVOTS {
            let entering = (0..self.cols)
                .filter(|&j| allowed(j) && !self.basis.contains(&j))
                .find(|&j| {
                    let reduced = cost[j]
                        - self
                            .rows
                            .iter()
                            .zip(&self.basis)
                            .map(|(row, &b)| cost[b] * row[j])
                            .sum::<f64>();
                    reduced < -PIVOT_EPS
                });
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match leave {
                        None => true,
                        Some((l, best)) => {
                            ratio < best || (ratio == best && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Solver("objective is unbounded".into()));
            };
            self.pivot(r, c);
        }
        Err(Error::Solver(format!(
            "no convergence after {MAX_PIVOTS} pivots"
        )))
    }
}

/// Two-phase tableau simplex with Bland's rule on
/// `min sum p` s.t. `p_i - c_i sum_{j != i} p_j - s_i + a_i = b_i`.
pub fn simplex_solve(problem: &PowerProblem) -> Result<PowerSolution> {
    let n = problem.n_users();
    let b = problem.rhs();
    // columns: p (0..n), surplus (n..2n), artificial (2n..3n)
    let cols = 3 * n;
    let rows = (0..n)
        .map(|i| {
            let mut row = vec![0.0; cols + 1];
            for j in 0..n {
                row[j] = if i == j { 1.0 } else { -problem.thresholds[i] };
            }
            row[n + i] = -1.0;
            row[2 * n + i] = 1.0;
            row[cols] = b[i];
            row
        })
        .collect();
    let mut t = Tableau {
        rows,
        basis: (2 * n..3 * n).collect(),
        cols,
    };

    let phase1: Vec<f64> = (0..cols)
        .map(|j| if j >= 2 * n { 1.0 } else { 0.0 })
        .collect();
    t.optimize(&phase1, |_| true)?;
    let artificial: f64 = (0..n)
        .filter(|&i| t.basis[i] >= 2 * n)
        .map(|i| t.rhs(i))
        .sum();
    let scale = b.iter().cloned().fold(0.0, f64::max);
    if artificial > 1e-9 * scale {
        return Ok(PowerSolution::infeasible());
    }
    // drive zero-level artificials out of the basis
    for i in 0..n {
        if t.basis[i] >= 2 * n {
            if let Some(c) =
                (0..2 * n).find(|&j| t.rows[i][j].abs() > PIVOT_EPS && !t.basis.contains(&j))
            {
                t.pivot(i, c);
            }
        }
    }
    let phase2: Vec<f64> = (0..cols).map(|j| if j < n { 1.0 } else { 0.0 }).collect();
    t.optimize(&phase2, |j| j < 2 * n)?;

    let mut powers = vec![0.0; n];
    for (i, &bcol) in t.basis.iter().enumerate() {
        if bcol < n {
            powers[bcol] = t.rhs(i).max(0.0);
        }
    }
    if !problem.is_feasible(&powers) {
        return Err(Error::Solver(format!(
            "simplex returned a point violating the constraints: {powers:?}"
        )));
    }
    Ok(PowerSolution::optimal(powers))
}

/// Solve the all-active equality system. Optimal iff the solution is
/// strictly positive; a singular system is infeasible.
pub fn direct_solve(problem: &PowerProblem) -> Result<PowerSolution> {
    let n = problem.n_users();
    let a = DMatrix::from_fn(
        n,
        n,
        |i, j| if i == j { 1.0 } else { -problem.thresholds[i] },
    );
    let b = DVector::from_vec(problem.rhs());
    match a.lu().solve(&b) {
        Some(p) if p.iter().all(|&v| v > 0.0 && v.is_finite()) => {
            Ok(PowerSolution::optimal(p.iter().copied().collect()))
        }
        _ => Ok(PowerSolution::infeasible()),
    }
}

/// Log-spaced grid `min * (max/min)^(k/(points-1))` on every axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        let ratio = self.ratio();
        (0..self.points)
            .map(|k| self.min * ratio.powi(k as i32))
            .collect()
    }

    /// Multiplicative spacing between neighbouring grid values.
    pub fn ratio(&self) -> f64 {
        (self.max / self.min).powf(1.0 / (self.points - 1) as f64)
    }
}

/// Exhaustive scan of the grid; returns the feasible point with the lowest
/// total, if any. Only meant for tiny problems.
pub fn brute_force_check(problem: &PowerProblem, grid: GridSpec) -> Result<Option<PowerSolution>> {
    let n = problem.n_users();
    if n > 3 {
        return Err(Error::InvalidInput(format!(
            "brute force supports at most 3 users, got {n}"
        )));
    }
    if !(grid.min > 0.0 && grid.max > grid.min && grid.points >= 2) {
        return Err(Error::InvalidInput(format!("bad grid {grid:?}")));
    }
    let axis = grid.values();
    let mut best: Option<PowerSolution> = None;
    let mut idx = vec![0usize; n];
    let mut powers = vec![0.0; n];
    loop {
        for (p, &k) in powers.iter_mut().zip(&idx) {
            *p = axis[k];
        }
        let feasible = (0..n).all(|i| problem.constraint_slack(&powers, i) >= 0.0);
        if feasible {
            let total: f64 = powers.iter().sum();
            if best.as_ref().is_none_or(|b| total < b.total) {
                best = Some(PowerSolution::optimal(powers.clone()));
            }
        }
        let mut d = 0;
        loop {
            if d == n {
                return Ok(best);
            }
            idx[d] += 1;
            if idx[d] < axis.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// One user of an allocation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRequest {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub eta: f64,
    pub gain_sq: f64,
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationRequest {
    pub users: Vec<UserRequest>,
}

impl AllocationRequest {
    pub fn to_problem(&self) -> Result<PowerProblem> {
        let params = self
            .users
            .iter()
            .map(|u| AbgParams::new(u.alpha, u.beta, u.gamma, u.tau))
            .collect::<Result<Vec<_>>>()?;
        let etas: Vec<f64> = self.users.iter().map(|u| u.eta).collect();
        let gains: Vec<f64> = self.users.iter().map(|u| u.gain_sq).collect();
        let noise: Vec<f64> = self.users.iter().map(|u| u.noise_var).collect();
        build_problem(&params, &etas, &gains, &noise)
    }
}

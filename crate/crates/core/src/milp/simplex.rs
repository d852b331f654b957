//! Bounded dual simplex, revised form over a sparse LU basis factor.
//!
//! Rows become `A x − s = 0` with one logical `s_i` per row carrying the
//! row's bounds. Every column is boxed (infinite structural bounds are
//! replaced by a large artificial box, infinite row bounds by the implied
//! activity range), so any basis is made dual feasible by placing each
//! nonbasic column at the bound its reduced cost points to. That lets
//! branch-and-bound change bounds and re-solve from the previous basis.

use super::lu::Factor;
use crate::error::{Error, Result};

/// Stand-in for an infinite structural bound.
pub const ARTIFICIAL_BOUND: f64 = 1e9;

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-7;
const REFACTOR_EVERY: usize = 100;

/// `min c·x` subject to `row_lo ≤ A x ≤ row_hi`, `lo ≤ x ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub row_lo: Vec<f64>,
    pub row_hi: Vec<f64>,
    pub cost: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LpProblem {
    pub fn num_cols(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    /// The stop callback asked to quit.
    Interrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum At {
    Basic,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct DualSimplex {
    n: usize,
    m: usize,
    width: usize,
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    d: Vec<f64>,
    status: Vec<At>,
    basis: Vec<usize>,
    factor: Option<Factor>,
    /// Columns whose bound was replaced by the artificial box.
    artificial: Vec<bool>,
    pub iterations: usize,
}

impl DualSimplex {
    pub fn new(p: &LpProblem) -> Result<Self> {
        let n = p.num_cols();
        let m = p.num_rows();
        let width = n + m;
        let mut lo = Vec::with_capacity(width);
        let mut hi = Vec::with_capacity(width);
        let mut artificial = vec![false; n];
        for j in 0..n {
            if p.lo[j] > p.hi[j] {
                return Err(Error::Solver(format!("column {j} has empty bounds")));
            }
            let l = if p.lo[j].is_finite() { p.lo[j] } else { -ARTIFICIAL_BOUND };
            let h = if p.hi[j].is_finite() { p.hi[j] } else { ARTIFICIAL_BOUND };
            artificial[j] = !p.lo[j].is_finite() || !p.hi[j].is_finite();
            lo.push(l);
            hi.push(h);
        }
        let mut cols = vec![Vec::new(); n];
        for (i, row) in p.rows.iter().enumerate() {
            let (mut amin, mut amax) = (0.0, 0.0);
            for &(j, a) in row {
                let (u, v) = (a * lo[j], a * hi[j]);
                amin += u.min(v);
                amax += u.max(v);
                if a != 0.0 {
                    cols[j].push((i, a));
                }
            }
            let slack = 1.0 + 1e-9 * (amax - amin).abs();
            lo.push(if p.row_lo[i].is_finite() { p.row_lo[i] } else { amin - slack });
            hi.push(if p.row_hi[i].is_finite() { p.row_hi[i] } else { amax + slack });
        }
        let mut cost = p.cost.clone();
        cost.resize(width, 0.0);
        let mut status = vec![At::Lower; width];
        for s in status.iter_mut().skip(n) {
            *s = At::Basic;
        }
        let mut s = DualSimplex {
            n,
            m,
            width,
            rows: p.rows.clone(),
            cols,
            cost,
            lo,
            hi,
            x: vec![0.0; width],
            d: vec![0.0; width],
            status,
            basis: (n..width).collect(),
            factor: None,
            artificial,
            iterations: 0,
        };
        s.refactor();
        Ok(s)
    }

    pub fn num_cols(&self) -> usize {
        self.n
    }

    /// Replaces the structural bounds.
    pub fn set_bounds(&mut self, lo: &[f64], hi: &[f64]) {
        for j in 0..self.n {
            self.lo[j] = if lo[j].is_finite() { lo[j] } else { -ARTIFICIAL_BOUND };
            self.hi[j] = if hi[j].is_finite() { hi[j] } else { ARTIFICIAL_BOUND };
        }
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lo[..self.n].to_vec(), self.hi[..self.n].to_vec())
    }

    fn column(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n {
            self.cols[j].clone()
        } else {
            vec![(j - self.n, -1.0)]
        }
    }

    /// Dense B⁻¹ a_j by basis position.
    fn ftran_col(&self, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.m];
        for (i, a) in self.column(j) {
            v[i] += a;
        }
        self.factor.as_ref().expect("factored").ftran(&mut v);
        v
    }

    /// Factors the current basis, swapping in logicals for dependent
    /// columns, then recomputes duals and basic values.
    fn refactor(&mut self) {
        loop {
            let cols: Vec<_> = self.basis.iter().map(|&j| self.column(j)).collect();
            match Factor::new(self.m, &cols) {
                Ok(f) => {
                    self.factor = Some(f);
                    break;
                }
                Err(def) => {
                    for (pos, row) in def.pairs {
                        let out = self.basis[pos];
                        self.status[out] = At::Lower;
                        self.basis[pos] = self.n + row;
                        self.status[self.n + row] = At::Basic;
                    }
                }
            }
        }
        self.compute_duals();
        self.flip_bounds();
        self.compute_basics();
    }

    fn reset_to_slack_basis(&mut self) {
        for j in 0..self.n {
            self.status[j] = At::Lower;
        }
        for i in 0..self.m {
            self.status[self.n + i] = At::Basic;
        }
        self.basis = (self.n..self.width).collect();
        self.refactor();
    }

    fn compute_duals(&mut self) {
        let mut y: Vec<f64> = self.basis.iter().map(|&b| self.cost[b]).collect();
        self.factor.as_ref().expect("factored").btran(&mut y);
        for j in 0..self.n {
            let ya: f64 = self.cols[j].iter().map(|&(i, a)| a * y[i]).sum();
            self.d[j] = self.cost[j] - ya;
        }
        for i in 0..self.m {
            self.d[self.n + i] = self.cost[self.n + i] + y[i];
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    /// Places nonbasic columns on the bound their reduced cost requires.
    fn flip_bounds(&mut self) {
        for j in 0..self.width {
            if self.status[j] == At::Basic {
                continue;
            }
            if self.d[j] > DUAL_TOL {
                self.status[j] = At::Lower;
            } else if self.d[j] < -DUAL_TOL {
                self.status[j] = At::Upper;
            }
            self.x[j] = if self.status[j] == At::Lower { self.lo[j] } else { self.hi[j] };
        }
    }

    /// x_B = −B⁻¹ N x_N.
    fn compute_basics(&mut self) {
        let mut rhs = vec![0.0; self.m];
        for j in 0..self.n {
            if self.status[j] != At::Basic && self.x[j] != 0.0 {
                for &(i, a) in &self.cols[j] {
                    rhs[i] -= a * self.x[j];
                }
            }
        }
        for i in 0..self.m {
            if self.status[self.n + i] != At::Basic {
                rhs[i] += self.x[self.n + i];
            }
        }
        self.factor.as_ref().expect("factored").ftran(&mut rhs);
        for (pos, &b) in self.basis.iter().enumerate() {
            self.x[b] = rhs[pos];
        }
    }

    /// Largest scaled residual of the original rows at the current point.
    fn residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.rows.iter().enumerate() {
            let act: f64 = row.iter().map(|&(j, a)| a * self.x[j]).sum();
            let s = self.x[self.n + i];
            worst = worst.max((act - s).abs() / (1.0 + s.abs()));
        }
        worst
    }

    pub fn solve(&mut self, iteration_limit: usize) -> LpStatus {
        self.solve_with(iteration_limit, &|| false)
    }

    /// Runs until optimal, infeasible, `iteration_limit` total iterations,
    /// or `stop()` returns true (polled every few iterations).
    pub fn solve_with(&mut self, iteration_limit: usize, stop: &dyn Fn() -> bool) -> LpStatus {
        let mut degenerate = 0usize;
        let mut last_obj = f64::NEG_INFINITY;
        let mut refactors = 0;
        let mut resets = 0;
        let mut alpha_row = vec![0.0; self.width];
        let mut seen = vec![false; self.width];
        let mut touched: Vec<usize> = Vec::new();
        self.flip_bounds();
        self.compute_basics();
        let mut polled = 0usize;
        // x_B was recomputed from the factor since the last pivot.
        let mut fresh = true;
        loop {
            if self.factor.as_ref().is_some_and(|f| f.updates() >= REFACTOR_EVERY) {
                self.refactor();
            }
            let bland = degenerate > 50;
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let b = self.basis[r];
                let v = self.x[b];
                let tol = PRIMAL_TOL * (1.0 + self.lo[b].abs().max(self.hi[b].abs()).min(1e6));
                let inf = if v < self.lo[b] - tol {
                    self.lo[b] - v
                } else if v > self.hi[b] + tol {
                    v - self.hi[b]
                } else {
                    continue;
                };
                let better = match leave {
                    None => true,
                    Some((r0, i0)) => {
                        if bland {
                            b < self.basis[r0]
                        } else {
                            inf > i0 || (inf == i0 && b < self.basis[r0])
                        }
                    }
                };
                if better {
                    leave = Some((r, inf));
                }
            }
            let Some((r, _)) = leave else {
                if !fresh {
                    // Incremental updates drift when large bounds are in
                    // play; confirm against a fresh solve.
                    self.compute_basics();
                    fresh = true;
                    continue;
                }
                if self.residual() > 1e-7 && refactors < 3 {
                    refactors += 1;
                    self.refactor();
                    continue;
                }
                return LpStatus::Optimal;
            };
            if self.iterations >= iteration_limit {
                return LpStatus::IterationLimit;
            }
            polled += 1;
            if polled % 16 == 0 && stop() {
                return LpStatus::Interrupted;
            }
            self.iterations += 1;
            let b = self.basis[r];
            let below = self.x[b] < self.lo[b];

            // Pivot row α_r = e_rᵀ B⁻¹ [A  −I] over nonbasic columns.
            let mut rho = vec![0.0; self.m];
            rho[r] = 1.0;
            self.factor.as_ref().expect("factored").btran(&mut rho);
            for &j in &touched {
                alpha_row[j] = 0.0;
                seen[j] = false;
            }
            touched.clear();
            for (i, &ri) in rho.iter().enumerate() {
                if ri.abs() <= 1e-13 {
                    continue;
                }
                for &(j, a) in &self.rows[i] {
                    if self.status[j] != At::Basic {
                        if !seen[j] {
                            seen[j] = true;
                            touched.push(j);
                        }
                        alpha_row[j] += ri * a;
                    }
                }
                let l = self.n + i;
                if self.status[l] != At::Basic {
                    seen[l] = true;
                    touched.push(l);
                    alpha_row[l] = -ri;
                }
            }

            // Increasing x_b needs α_rj < 0 at lower or α_rj > 0 at upper.
            let mut cands: Vec<(usize, f64, f64)> = Vec::new();
            let mut bound = f64::INFINITY;
            for &j in &touched {
                if self.lo[j] == self.hi[j] {
                    continue;
                }
                let a = alpha_row[j];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let up = self.status[j] == At::Lower;
                let eligible = if below { (a < 0.0) == up } else { (a > 0.0) == up };
                if !eligible {
                    continue;
                }
                let dj = self.d[j].abs();
                bound = bound.min((dj + DUAL_TOL) / a.abs());
                cands.push((j, a, dj));
            }
            if cands.is_empty() {
                return LpStatus::Infeasible;
            }
            let q = if bland {
                let min_ratio = cands.iter().map(|&(_, a, dj)| dj / a.abs()).fold(f64::INFINITY, f64::min);
                cands
                    .iter()
                    .filter(|&&(_, a, dj)| dj / a.abs() <= min_ratio + 1e-12)
                    .map(|&(j, _, _)| j)
                    .min()
                    .unwrap()
            } else {
                cands
                    .iter()
                    .filter(|&&(_, a, dj)| dj / a.abs() <= bound)
                    .max_by(|x, y| x.1.abs().partial_cmp(&y.1.abs()).unwrap().then(y.0.cmp(&x.0)))
                    .map(|&(j, _, _)| j)
                    .unwrap()
            };
            let arq = alpha_row[q];
            let alpha_col = self.ftran_col(q);
            if (alpha_col[r] - arq).abs() > 1e-7 * (1.0 + arq.abs()) || alpha_col[r].abs() <= PIVOT_TOL {
                // The row and column disagree: the factor has drifted.
                refactors += 1;
                if refactors > 6 {
                    if resets >= 2 {
                        return LpStatus::IterationLimit;
                    }
                    resets += 1;
                    self.reset_to_slack_basis();
                    refactors = 0;
                } else {
                    self.refactor();
                }
                continue;
            }

            // Dual step.
            let theta_d = self.d[q] / arq;
            for &j in &touched {
                self.d[j] -= theta_d * alpha_row[j];
            }
            self.d[q] = 0.0;
            self.d[b] = -theta_d;

            // Primal step: x_b lands on the bound it violated.
            let target = if below { self.lo[b] } else { self.hi[b] };
            let dq = -(target - self.x[b]) / alpha_col[r];
            for (pos, &bj) in self.basis.iter().enumerate() {
                if alpha_col[pos] != 0.0 {
                    self.x[bj] -= alpha_col[pos] * dq;
                }
            }
            self.x[q] += dq;
            self.x[b] = target;

            self.factor.as_mut().expect("factored").update(r, &alpha_col);
            fresh = false;
            self.basis[r] = q;
            self.status[q] = At::Basic;
            self.status[b] = if below { At::Lower } else { At::Upper };

            // Columns whose reduced cost changed sign move to the other bound.
            let mut rhs = vec![0.0; self.m];
            let mut flipped = false;
            for &j in &touched {
                if self.status[j] == At::Basic {
                    continue;
                }
                let want = if self.d[j] > DUAL_TOL {
                    At::Lower
                } else if self.d[j] < -DUAL_TOL {
                    At::Upper
                } else {
                    self.status[j]
                };
                if want != self.status[j] {
                    self.status[j] = want;
                    let nx = if want == At::Lower { self.lo[j] } else { self.hi[j] };
                    let delta = nx - self.x[j];
                    self.x[j] = nx;
                    if j < self.n {
                        for &(i, a) in &self.cols[j] {
                            rhs[i] += a * delta;
                        }
                    } else {
                        rhs[j - self.n] -= delta;
                    }
                    flipped = true;
                }
            }
            if flipped {
                self.factor.as_ref().expect("factored").ftran(&mut rhs);
                for (pos, &bj) in self.basis.iter().enumerate() {
                    self.x[bj] -= rhs[pos];
                }
            }

            let obj = self.objective_estimate();
            if obj <= last_obj + 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
                last_obj = obj;
            }
        }
    }

    fn objective_estimate(&self) -> f64 {
        // Dual objective of the current basis.
        let mut z = 0.0;
        for j in 0..self.width {
            if self.status[j] != At::Basic {
                let v = if self.status[j] == At::Lower { self.lo[j] } else { self.hi[j] };
                z += self.d[j] * v;
            }
        }
        z
    }

    /// Structural values.
    pub fn solution(&self) -> Vec<f64> {
        self.x[..self.n].to_vec()
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    /// True when an optimal point rests on an artificial bound.
    pub fn touches_artificial(&self) -> bool {
        (0..self.n).any(|j| self.artificial[j] && self.x[j].abs() >= ARTIFICIAL_BOUND * (1.0 - 1e-9))
    }
}

/// Solves a standalone LP.
pub fn solve_lp(p: &LpProblem, iteration_limit: usize) -> Result<(LpStatus, Vec<f64>, f64)> {
    let mut s = DualSimplex::new(p)?;
    let st = s.solve(iteration_limit);
    if st == LpStatus::Optimal && s.touches_artificial() {
        return Err(Error::Solver("LP is unbounded".into()));
    }
    Ok((st, s.solution(), s.objective()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(rows: Vec<Vec<(usize, f64)>>, row_lo: Vec<f64>, row_hi: Vec<f64>, cost: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> LpProblem {
        LpProblem { rows, row_lo, row_hi, cost, lo, hi }
    }

    #[test]
    fn textbook_lp() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36.
        let p = lp(
            vec![vec![(0, 1.0)], vec![(1, 2.0)], vec![(0, 3.0), (1, 2.0)]],
            vec![f64::NEG_INFINITY; 3],
            vec![4.0, 12.0, 18.0],
            vec![-3.0, -5.0],
            vec![0.0, 0.0],
            vec![f64::INFINITY, f64::INFINITY],
        );
        let (st, x, z) = solve_lp(&p, 1000).unwrap();
        assert_eq!(st, LpStatus::Optimal);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9, "{x:?} {z}");
        assert!((z + 36.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + 2y + 3z, x + y + z = 10, y − z ≥ 2, z ≥ 1.
        let p = lp(
            vec![vec![(0, 1.0), (1, 1.0), (2, 1.0)], vec![(1, 1.0), (2, -1.0)]],
            vec![10.0, 2.0],
            vec![10.0, f64::INFINITY],
            vec![1.0, 2.0, 3.0],
            vec![0.0, 0.0, 1.0],
            vec![f64::INFINITY; 3],
        );
        let (st, x, z) = solve_lp(&p, 1000).unwrap();
        assert_eq!(st, LpStatus::Optimal);
        assert!((z - 15.0).abs() < 1e-9, "{x:?} {z}");
    }

    #[test]
    fn infeasible_and_unbounded() {
        let p = lp(vec![vec![(0, 1.0), (1, 1.0)]], vec![5.0], vec![f64::INFINITY], vec![1.0, 1.0], vec![0.0, 0.0], vec![2.0, 2.0]);
        assert_eq!(solve_lp(&p, 1000).unwrap().0, LpStatus::Infeasible);
        let p = lp(vec![vec![(0, 1.0)]], vec![1.0], vec![f64::INFINITY], vec![-1.0], vec![0.0], vec![f64::INFINITY]);
        assert!(solve_lp(&p, 1000).is_err());
    }

    #[test]
    fn bound_changes_resolve_from_the_last_basis() {
        let p = lp(
            vec![vec![(0, 1.0), (1, 1.0)]],
            vec![f64::NEG_INFINITY],
            vec![1.5],
            vec![-1.0, -1.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        );
        let mut s = DualSimplex::new(&p).unwrap();
        assert_eq!(s.solve(100), LpStatus::Optimal);
        assert!((s.objective() + 1.5).abs() < 1e-9);
        s.set_bounds(&[0.0, 0.0], &[0.0, 1.0]);
        assert_eq!(s.solve(100), LpStatus::Optimal);
        assert!((s.objective() + 1.0).abs() < 1e-9);
        s.set_bounds(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(s.solve(100), LpStatus::Infeasible);
    }
}

//! Self-contained dense linear-programming core used by every optimization in
//! the toolkit.
//!
//! The solver is a bounded-variable two-phase primal simplex on a dense
//! tableau. Entering variables follow Dantzig's rule with deterministic
//! smallest-index tie-breaking; after a run of degenerate pivots the solver
//! switches to Bland's rule, which guarantees escape from any degenerate
//! vertex, and switches back once the objective moves. Results are therefore
//! deterministic and cycle-free. Returned solutions are always basic, so the
//! number of nonzero variables is bounded by the number of rows.

use crate::error::{Error, Result};

/// Pivot tolerance: entries smaller than this are treated as zero.
const PIVOT_TOL: f64 = 1e-9;
/// Feasibility certification threshold for an `Optimal` status.
const FEAS_TOL: f64 = 1e-9;
/// Hard failure threshold after refinement.
const FAIL_TOL: f64 = 1e-6;
/// Consecutive degenerate pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 64;

/// A linear program in the form
/// maximize `objective . x`
/// subject to `eq_matrix x = eq_rhs`, `ub_matrix x <= ub_rhs`,
/// and `bounds[j].0 <= x_j <= bounds[j].1` (infinities allowed).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub eq_matrix: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub ub_matrix: Vec<Vec<f64>>,
    pub ub_rhs: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// A program with no constraints beyond variable bounds.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            eq_matrix: Vec::new(),
            eq_rhs: Vec::new(),
            ub_matrix: Vec::new(),
            ub_rhs: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn push_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_matrix.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn push_ub(&mut self, row: Vec<f64>, rhs: f64) {
        self.ub_matrix.push(row);
        self.ub_rhs.push(rhs);
    }

    /// A `>=` constraint, stored negated.
    pub fn push_lb(&mut self, row: Vec<f64>, rhs: f64) {
        self.ub_matrix.push(row.into_iter().map(|v| -v).collect());
        self.ub_rhs.push(-rhs);
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.bounds.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} bounds for {n} variables",
                self.bounds.len()
            )));
        }
        if self.eq_matrix.len() != self.eq_rhs.len() || self.ub_matrix.len() != self.ub_rhs.len() {
            return Err(Error::DimensionMismatch("matrix/rhs row counts differ".into()));
        }
        for row in self.eq_matrix.iter().chain(&self.ub_matrix) {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "row of width {} in a program with {n} variables",
                    row.len()
                )));
            }
        }
        let finite = |v: &f64| v.is_finite();
        if !self.objective.iter().all(finite)
            || !self.eq_matrix.iter().flatten().all(finite)
            || !self.ub_matrix.iter().flatten().all(finite)
            || !self.eq_rhs.iter().all(finite)
            || !self.ub_rhs.iter().all(finite)
        {
            return Err(Error::DimensionMismatch("non-finite coefficient".into()));
        }
        for (j, (lo, hi)) in self.bounds.iter().enumerate() {
            if lo > hi || lo.is_nan() || hi.is_nan() {
                return Err(Error::DimensionMismatch(format!(
                    "bounds [{lo}, {hi}] for variable {j}"
                )));
            }
        }
        Ok(())
    }
}

/// Solver outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// A basic solution with an optimality certificate.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Structural variable values (meaningful when `Optimal`).
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Structural variables that are basic in the returned vertex. Its length
    /// never exceeds the number of constraint rows, which delivers support
    /// bounds for distributions encoded as LP variables.
    pub basis: Vec<usize>,
    /// Max-norm constraint violation of `values`.
    pub feasibility_residual: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Free variable resting at 0.
    FreeZero,
}

struct Tableau {
    /// Row-major `rows x cols` matrix, `B^-1 [A | I_slack | I_art]`.
    t: Vec<f64>,
    cols: usize,
    rows: usize,
    /// Reduced-cost row (length `cols`).
    dj: Vec<f64>,
    /// Basic variable per row and its current value.
    basis: Vec<usize>,
    beta: Vec<f64>,
    state: Vec<VarState>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n_struct: usize,
    obj: Vec<f64>,
    z: f64,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.cols + c]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtLower => self.lo[j],
            VarState::AtUpper => self.hi[j],
            _ => 0.0,
        }
    }

    fn value_of(&self, j: usize) -> f64 {
        if self.state[j] == VarState::Basic {
            let r = self.basis.iter().position(|&b| b == j).unwrap();
            self.beta[r]
        } else {
            self.nonbasic_value(j)
        }
    }

    /// Runs the simplex on the current objective until optimal or unbounded.
    fn optimize(&mut self) -> LpStatus {
        let mut stall = 0usize;
        let mut bland = false;
        loop {
            let entering = self.choose_entering(bland);
            let Some((j, dir)) = entering else {
                return LpStatus::Optimal;
            };
            match self.ratio_test(j, dir) {
                RatioOutcome::Unbounded => return LpStatus::Unbounded,
                RatioOutcome::BoundFlip(delta) => {
                    self.apply_bound_flip(j, dir, delta);
                    if delta <= PIVOT_TOL {
                        stall += 1;
                    } else {
                        stall = 0;
                        bland = false;
                    }
                }
                RatioOutcome::Pivot(row, delta) => {
                    self.apply_pivot(j, dir, row, delta);
                    if delta <= PIVOT_TOL {
                        stall += 1;
                    } else {
                        stall = 0;
                        bland = false;
                    }
                }
            }
            if stall > STALL_LIMIT {
                bland = true;
            }
        }
    }

    /// Picks an entering variable and its direction (+1 raise, -1 lower).
    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.cols {
            if self.lo[j] == self.hi[j] {
                continue; // fixed (frozen artificials)
            }
            let (eligible, dir) = match self.state[j] {
                VarState::Basic => (false, 0.0),
                VarState::AtLower => (self.dj[j] > PIVOT_TOL, 1.0),
                VarState::AtUpper => (self.dj[j] < -PIVOT_TOL, -1.0),
                VarState::FreeZero => (self.dj[j].abs() > PIVOT_TOL, self.dj[j].signum()),
            };
            if !eligible {
                continue;
            }
            if bland {
                return Some((j, dir));
            }
            let score = self.dj[j].abs();
            match best {
                Some((_, _, s)) if s >= score => {}
                _ => best = Some((j, dir, score)),
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn ratio_test(&self, j: usize, dir: f64) -> RatioOutcome {
        // The entering variable may stop at its own opposite bound.
        let own_range = self.hi[j] - self.lo[j];
        let mut best = if own_range.is_finite() && self.state[j] != VarState::FreeZero {
            own_range
        } else {
            f64::INFINITY
        };
        let mut leave: Option<usize> = None;
        for r in 0..self.rows {
            let alpha = self.at(r, j) * dir;
            let b = self.basis[r];
            let ratio = if alpha > PIVOT_TOL {
                if !self.lo[b].is_finite() {
                    continue;
                }
                ((self.beta[r] - self.lo[b]) / alpha).max(0.0)
            } else if alpha < -PIVOT_TOL {
                if !self.hi[b].is_finite() {
                    continue;
                }
                ((self.beta[r] - self.hi[b]) / alpha).max(0.0)
            } else {
                continue;
            };
            let improves = ratio < best - PIVOT_TOL;
            let ties = !improves && ratio <= best + PIVOT_TOL;
            // Deterministic leaving choice: strict improvement, or a tie won
            // by the smaller basic-variable index (Bland-compatible).
            let take = improves
                || (ties
                    && match leave {
                        None => true,
                        Some(lr) => b < self.basis[lr],
                    });
            if take {
                best = best.min(ratio);
                leave = Some(r);
            }
        }
        if best.is_infinite() {
            return RatioOutcome::Unbounded;
        }
        match leave {
            None => RatioOutcome::BoundFlip(best),
            Some(r) => RatioOutcome::Pivot(r, best),
        }
    }

    fn apply_bound_flip(&mut self, j: usize, dir: f64, delta: f64) {
        for r in 0..self.rows {
            let alpha = self.t[r * self.cols + j];
            self.beta[r] -= alpha * dir * delta;
        }
        self.z += self.dj[j] * dir * delta;
        self.state[j] = match self.state[j] {
            VarState::AtLower => VarState::AtUpper,
            VarState::AtUpper => VarState::AtLower,
            s => s,
        };
    }

    fn apply_pivot(&mut self, j: usize, dir: f64, r: usize, delta: f64) {
        let leaving = self.basis[r];
        let alpha_r = self.at(r, j);
        // New value of the entering variable and updated basics.
        let enter_val = self.nonbasic_value(j) + dir * delta;
        for i in 0..self.rows {
            if i != r {
                let alpha = self.t[i * self.cols + j];
                self.beta[i] -= alpha * dir * delta;
            }
        }
        self.z += self.dj[j] * dir * delta;
        // Leaving variable ends at whichever of its bounds the ratio test hit.
        let leave_val = self.beta[r] - alpha_r * dir * delta;
        let to_lo = if self.lo[leaving].is_finite() {
            (leave_val - self.lo[leaving]).abs()
        } else {
            f64::INFINITY
        };
        let to_hi = if self.hi[leaving].is_finite() {
            (leave_val - self.hi[leaving]).abs()
        } else {
            f64::INFINITY
        };
        self.state[leaving] = if to_lo <= to_hi {
            VarState::AtLower
        } else {
            VarState::AtUpper
        };
        self.basis[r] = j;
        self.beta[r] = enter_val;
        self.state[j] = VarState::Basic;

        // Row elimination.
        let cols = self.cols;
        let piv_row = r;
        {
            let row = &mut self.t[r * cols..(r + 1) * cols];
            let inv = 1.0 / alpha_r;
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[j] = 1.0;
        }
        for i in 0..self.rows {
            if i == piv_row {
                continue;
            }
            let factor = self.t[i * cols + j];
            if factor.abs() <= 1e-13 {
                self.t[i * cols + j] = 0.0;
                continue;
            }
            let (head, tail) = self.t.split_at_mut(piv_row.max(i) * cols);
            let (src, dst) = if i < piv_row {
                (&tail[..cols], &mut head[i * cols..(i + 1) * cols])
            } else {
                (&head[piv_row * cols..(piv_row + 1) * cols], &mut tail[..cols])
            };
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d -= factor * *s;
            }
            self.t[i * cols + j] = 0.0;
        }
        let factor = self.dj[j];
        if factor.abs() > 0.0 {
            let src = &self.t[piv_row * cols..(piv_row + 1) * cols];
            for (d, s) in self.dj.iter_mut().zip(src.iter()) {
                *d -= factor * *s;
            }
            self.dj[j] = 0.0;
        }
    }

    /// Installs a fresh objective (length `cols`), recomputing reduced costs
    /// by eliminating basic columns.
    fn set_objective(&mut self, obj: Vec<f64>) {
        self.obj = obj.clone();
        self.dj = obj;
        for r in 0..self.rows {
            let b = self.basis[r];
            let cb = self.dj[b];
            if cb.abs() <= 1e-13 {
                continue;
            }
            let cols = self.cols;
            let src = &self.t[r * cols..(r + 1) * cols];
            for (d, s) in self.dj.iter_mut().zip(src.iter()) {
                *d -= cb * *s;
            }
        }
        for r in 0..self.rows {
            self.dj[self.basis[r]] = 0.0;
        }
        self.z = (0..self.cols)
            .map(|j| self.obj[j] * self.value_of(j))
            .sum();
    }
}

enum RatioOutcome {
    Unbounded,
    BoundFlip(f64),
    Pivot(usize, f64),
}

/// Solves `lp` with the two-phase bounded simplex, returning a basic optimal
/// solution or an `Infeasible`/`Unbounded` status.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.n_vars();
    let m_eq = lp.eq_matrix.len();
    let m_ub = lp.ub_matrix.len();
    let rows = m_eq + m_ub;

    if rows == 0 {
        return solve_box_only(lp);
    }

    // Column layout: structural | ub slacks | artificials (one per row,
    // activated lazily).
    let n_slack = m_ub;
    let cols = n + n_slack + rows;
    let mut t = vec![0.0; rows * cols];
    let mut lo = vec![0.0; cols];
    let mut hi = vec![0.0; cols];
    let mut state = vec![VarState::AtLower; cols];
    for j in 0..n {
        lo[j] = lp.bounds[j].0;
        hi[j] = lp.bounds[j].1;
        state[j] = if lo[j].is_finite() {
            VarState::AtLower
        } else if hi[j].is_finite() {
            VarState::AtUpper
        } else {
            VarState::FreeZero
        };
    }
    for k in 0..n_slack {
        lo[n + k] = 0.0;
        hi[n + k] = f64::INFINITY;
    }

    let mut rhs = vec![0.0; rows];
    for (i, (row, b)) in lp.eq_matrix.iter().zip(&lp.eq_rhs).enumerate() {
        t[i * cols..i * cols + n].copy_from_slice(row);
        rhs[i] = *b;
    }
    for (k, (row, b)) in lp.ub_matrix.iter().zip(&lp.ub_rhs).enumerate() {
        let i = m_eq + k;
        t[i * cols..i * cols + n].copy_from_slice(row);
        t[i * cols + n + k] = 1.0;
        rhs[i] = *b;
    }

    // Initial basis: slack where feasible at the nonbasic starting point,
    // artificial otherwise.
    let mut basis = vec![usize::MAX; rows];
    let mut beta = vec![0.0; rows];
    let mut need_phase1 = false;
    for i in 0..rows {
        let mut residual = rhs[i];
        for j in 0..n {
            residual -= t[i * cols + j] * match state[j] {
                VarState::AtLower => lo[j],
                VarState::AtUpper => hi[j],
                _ => 0.0,
            };
        }
        let slack_ok = i >= m_eq && residual >= 0.0;
        if slack_ok {
            let s = n + (i - m_eq);
            basis[i] = s;
            beta[i] = residual;
            state[s] = VarState::Basic;
        } else {
            // Negate the row if needed so the artificial's basis column is +1.
            if residual < 0.0 {
                for v in &mut t[i * cols..(i + 1) * cols] {
                    *v = -*v;
                }
                rhs[i] = -rhs[i];
            }
            let a = n + n_slack + i;
            t[i * cols + a] = 1.0;
            lo[a] = 0.0;
            hi[a] = f64::INFINITY;
            basis[i] = a;
            beta[i] = residual.abs();
            state[a] = VarState::Basic;
            if residual.abs() > PIVOT_TOL {
                need_phase1 = true;
            }
        }
    }

    let mut tab = Tableau {
        t,
        cols,
        rows,
        dj: vec![0.0; cols],
        basis,
        beta,
        state,
        lo,
        hi,
        n_struct: n,
        obj: vec![0.0; cols],
        z: 0.0,
    };

    if need_phase1 || tab.basis.iter().any(|&b| b >= n + n_slack) {
        let mut phase1 = vec![0.0; cols];
        for a in (n + n_slack)..cols {
            phase1[a] = -1.0;
        }
        tab.set_objective(phase1);
        let status = tab.optimize();
        debug_assert!(status != LpStatus::Unbounded);
        let infeas: f64 = (0..tab.rows)
            .map(|r| if tab.basis[r] >= n + n_slack { tab.beta[r] } else { 0.0 })
            .sum();
        if infeas > 1e-7 {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                values: vec![0.0; n],
                objective_value: f64::NEG_INFINITY,
                basis: Vec::new(),
                feasibility_residual: infeas,
            });
        }
        // Freeze surviving artificials at zero so phase 2 cannot move them.
        for a in (n + n_slack)..cols {
            if tab.state[a] != VarState::Basic {
                tab.state[a] = VarState::AtLower;
            }
            tab.hi[a] = 0.0;
        }
    }

    let mut obj = vec![0.0; cols];
    obj[..n].copy_from_slice(&lp.objective);
    tab.set_objective(obj);
    let status = tab.optimize();
    if status == LpStatus::Unbounded {
        return Ok(LpSolution {
            status,
            values: vec![0.0; n],
            objective_value: f64::INFINITY,
            basis: Vec::new(),
            feasibility_residual: 0.0,
        });
    }

    let mut values: Vec<f64> = (0..n).map(|j| tab.value_of(j)).collect();
    if feasibility_residual(lp, &values) > FEAS_TOL {
        refine(lp, &tab, &mut values);
    }
    let residual = feasibility_residual(lp, &values);
    if residual > FAIL_TOL {
        return Err(Error::NumericalFailure(format!(
            "feasibility residual {residual:.3e} after refinement"
        )));
    }
    let objective_value = lp
        .objective
        .iter()
        .zip(&values)
        .map(|(c, x)| c * x)
        .sum();
    let basis: Vec<usize> = tab.basis.iter().copied().filter(|&b| b < n).collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        values,
        objective_value,
        basis,
        feasibility_residual: residual,
    })
}

/// As [`solve_lp`], but callers rely on the basic-solution property: the
/// support of the returned vertex is at most the number of linearly
/// independent active constraints.
pub fn solve_lp_basic_support(lp: &LinearProgram) -> Result<LpSolution> {
    solve_lp(lp)
}

/// No constraint rows: each variable sits at whichever finite bound its
/// objective sign prefers.
fn solve_box_only(lp: &LinearProgram) -> Result<LpSolution> {
    let mut values = Vec::with_capacity(lp.n_vars());
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        let c = lp.objective[j];
        let v = if c > 0.0 {
            hi
        } else if c < 0.0 || lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi
        } else {
            0.0
        };
        if !v.is_finite() && c != 0.0 {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                values: vec![0.0; lp.n_vars()],
                objective_value: f64::INFINITY,
                basis: Vec::new(),
                feasibility_residual: 0.0,
            });
        }
        values.push(if v.is_finite() { v } else { 0.0 });
    }
    let objective_value = lp.objective.iter().zip(&values).map(|(c, x)| c * x).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        values,
        objective_value,
        basis: Vec::new(),
        feasibility_residual: 0.0,
    })
}

/// One pass of iterative refinement: re-solves the basic system from the
/// original coefficients with Gaussian elimination, replacing accumulated
/// tableau drift in the basic values.
fn refine(lp: &LinearProgram, tab: &Tableau, values: &mut [f64]) {
    let n = tab.n_struct;
    let struct_basics: Vec<usize> = tab.basis.iter().copied().filter(|&b| b < n).collect();
    let k = struct_basics.len();
    if k == 0 {
        return;
    }
    // Rows where a structural variable is basic; slack-basic rows determine
    // slacks, not structurals.
    let rows: Vec<usize> = (0..tab.rows).filter(|&r| tab.basis[r] < n).collect();
    if rows.len() != k {
        return;
    }
    let m_eq = lp.eq_matrix.len();
    let row_of = |i: usize| -> (&[f64], f64) {
        if i < m_eq {
            (&lp.eq_matrix[i], lp.eq_rhs[i])
        } else {
            (&lp.ub_matrix[i - m_eq], lp.ub_rhs[i - m_eq])
        }
    };
    // Assemble k x k system over the structural basics; for ub rows whose
    // slack is nonbasic (at zero) the row is tight and usable, otherwise skip
    // refinement for safety.
    let mut is_basic = vec![false; n];
    for &j in &struct_basics {
        is_basic[j] = true;
    }
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for (ri, &i) in rows.iter().enumerate() {
        if i >= m_eq {
            let s = n + (i - m_eq);
            if tab.state[s] == VarState::Basic || tab.nonbasic_value(s) != 0.0 {
                return;
            }
        }
        let (row, rhs) = row_of(i);
        let mut acc = rhs;
        for j in 0..n {
            if !is_basic[j] {
                acc -= row[j] * values[j];
            }
        }
        b[ri] = acc;
        for (ci, &j) in struct_basics.iter().enumerate() {
            a[ri * k + ci] = row[j];
        }
    }
    if let Some(x) = solve_dense(&mut a, &mut b, k) {
        let before = feasibility_residual(lp, values);
        let mut candidate = values.to_vec();
        for (ci, &j) in struct_basics.iter().enumerate() {
            candidate[j] = x[ci];
        }
        if feasibility_residual(lp, &candidate) < before {
            values.copy_from_slice(&candidate);
        }
    }
}

/// Gaussian elimination with partial pivoting; `a` is `k x k` row-major.
fn solve_dense(a: &mut [f64], b: &mut [f64], k: usize) -> Option<Vec<f64>> {
    for col in 0..k {
        let mut piv = col;
        for r in col + 1..k {
            if a[r * k + col].abs() > a[piv * k + col].abs() {
                piv = r;
            }
        }
        if a[piv * k + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for c in 0..k {
                a.swap(piv * k + c, col * k + c);
            }
            b.swap(piv, col);
        }
        let d = a[col * k + col];
        for r in col + 1..k {
            let f = a[r * k + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..k {
                a[r * k + c] -= f * a[col * k + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for col in (0..k).rev() {
        let mut acc = b[col];
        for c in col + 1..k {
            acc -= a[col * k + c] * x[c];
        }
        x[col] = acc / a[col * k + col];
    }
    Some(x)
}

/// Max-norm violation of all constraints and bounds at `values`.
pub fn feasibility_residual(lp: &LinearProgram, values: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (row, rhs) in lp.eq_matrix.iter().zip(&lp.eq_rhs) {
        let lhs: f64 = row.iter().zip(values).map(|(a, x)| a * x).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    for (row, rhs) in lp.ub_matrix.iter().zip(&lp.ub_rhs) {
        let lhs: f64 = row.iter().zip(values).map(|(a, x)| a * x).sum();
        worst = worst.max(lhs - rhs);
    }
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if lo.is_finite() {
            worst = worst.max(lo - values[j]);
        }
        if hi.is_finite() {
            worst = worst.max(values[j] - hi);
        }
    }
    worst.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn one_variable_box() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.bounds = vec![(0.0, f64::INFINITY)];
        lp.push_ub(vec![1.0], 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_close(sol.values[0], 1.0, 1e-12);
    }

    #[test]
    fn degenerate_optimum_returns_a_basic_point() {
        // max x + y s.t. x + y = 1: every feasible point is optimal; a basic
        // solution puts all mass on one variable.
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.push_eq(vec![1.0, 1.0], 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_close(sol.objective_value, 1.0, 1e-12);
        let support = sol.values.iter().filter(|v| **v > 1e-10).count();
        assert_eq!(support, 1);
    }

    #[test]
    fn posted_price_toy() {
        // Variables (q, t): max t s.t. t <= q (IR at value 1), q <= 1.
        let mut lp = LinearProgram::new(vec![0.0, 1.0]);
        lp.bounds = vec![(0.0, 1.0), (f64::NEG_INFINITY, f64::INFINITY)];
        lp.push_ub(vec![-1.0, 1.0], 0.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_close(sol.objective_value, 1.0, 1e-12);
        assert_close(sol.values[0], 1.0, 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded_are_detected() {
        let mut lp = LinearProgram::new(vec![1.0, 0.0]);
        lp.push_eq(vec![1.0, 1.0], 2.0);
        lp.push_eq(vec![1.0, 1.0], 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let lp = LinearProgram::new(vec![1.0]);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables_work() {
        // max -|x| style: minimize x via free variable with equality.
        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.bounds = vec![(f64::NEG_INFINITY, f64::INFINITY), (0.0, 2.0)];
        lp.push_eq(vec![1.0, -1.0], -0.5);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        // x = y - 0.5, maximize -x => y = 0, x = -0.5.
        assert_close(sol.objective_value, 0.5, 1e-12);
    }

    #[test]
    fn beale_cycling_instance_terminates() {
        // The classic degenerate instance on which Dantzig's rule cycles
        // without safeguards.
        let mut lp = LinearProgram::new(vec![0.75, -150.0, 0.02, -6.0]);
        lp.push_ub(vec![0.25, -60.0, -1.0 / 25.0, 9.0], 0.0);
        lp.push_ub(vec![0.5, -90.0, -1.0 / 50.0, 3.0], 0.0);
        lp.push_ub(vec![0.0, 0.0, 1.0, 0.0], 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_close(sol.objective_value, 0.05, 1e-9);
        assert_close(sol.values[2], 1.0, 1e-9);
    }

    #[test]
    #[ignore]
    fn bench_screening_scale() {
        // Emulates the per-belief screening LP: 200 types, trade probability
        // and transfer per type, IR + adjacent IC rows.
        let n = 200usize;
        let e_omega = 0.7 * 3.0 + 0.3 * 1.0;
        let theta: Vec<f64> = (0..n).map(|i| (2 * i + 1) as f64 / (2 * n) as f64).collect();
        let v: Vec<f64> = theta.iter().map(|t| t * e_omega).collect();
        let wbar: Vec<f64> = theta.iter().map(|t| 2.0 * (1.0 - 2.0 * t)).collect();
        let k = 30.0;
        // Variables: x_0..x_{n-1}, t_0..t_{n-1}.
        let mut obj = vec![0.0; 2 * n];
        for i in 0..n {
            obj[i] = wbar[i] / n as f64;
            obj[n + i] = 1.0 / n as f64;
        }
        let mut lp = LinearProgram::new(obj);
        lp.bounds = (0..2 * n)
            .map(|j| if j < n { (0.0, 1.0) } else { (-k, k) })
            .collect();
        for i in 0..n {
            let mut row = vec![0.0; 2 * n];
            row[i] = v[i];
            row[n + i] = -1.0;
            lp.push_lb(row, 0.0);
        }
        for i in 0..n {
            for j in [i.wrapping_sub(1), i + 1] {
                if j >= n {
                    continue;
                }
                let mut row = vec![0.0; 2 * n];
                row[i] = v[i];
                row[n + i] = -1.0;
                row[j] = -v[i];
                row[n + j] = 1.0;
                lp.push_lb(row, 0.0);
            }
        }
        let start = std::time::Instant::now();
        let sol = solve_lp(&lp).unwrap();
        let dt = start.elapsed();
        println!(
            "screening-scale LP: {} rows, status {:?}, obj {:.6}, {:?}",
            lp.ub_matrix.len(),
            sol.status,
            sol.objective_value,
            dt
        );
        assert_eq!(sol.status, LpStatus::Optimal);
    }

    #[test]
    fn residuals_are_certified() {
        let mut lp = LinearProgram::new(vec![1.0, 2.0, 3.0]);
        lp.bounds = vec![(0.0, 5.0); 3];
        lp.push_ub(vec![1.0, 1.0, 1.0], 7.0);
        lp.push_eq(vec![1.0, -1.0, 0.0], 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.feasibility_residual <= 1e-9);
    }
}

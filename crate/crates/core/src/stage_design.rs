//! The designer's fixed-belief mechanism-design problem: the inner stage of
//! the two-stage decomposition.
//!
//! [`solve_at_belief`] maximizes the designer's expected payoff over direct
//! mechanisms subject to the agent's IC and IR constraints evaluated at her
//! type-conditioned belief. Mapping it over a belief grid gives the value
//! curve that the disclosure stage concavifies.
//!
//! IC constraints are built by row generation: the LP starts with adjacent
//! type pairs (all pairs for small type counts) and re-solves with whatever
//! the post-hoc verifier flags until no violation remains, so the returned
//! mechanism always satisfies the full constraint set.

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus};
use crate::model::{type_conditioned_belief, Belief, ProblemSpec, Quasilinear};
use rayon::prelude::*;
use serde::Serialize;

/// A direct mechanism at a fixed belief: per type, a lottery over allocations
/// (the physical grid in quasilinear mode) and, in quasilinear mode, an
/// expected transfer.
#[derive(Debug, Clone, Serialize)]
pub struct DirectMechanism {
    /// `lotteries[t][a]`.
    pub lotteries: Vec<Vec<f64>>,
    /// One expected transfer per type; empty in generic mode.
    pub transfers: Vec<f64>,
}

impl DirectMechanism {
    /// Expected agent payoff when the true type is `t`, the reported type is
    /// `report`, and the agent evaluates states by `belief`.
    pub fn agent_payoff(
        &self,
        problem: &ProblemSpec,
        belief: &Belief,
        t: usize,
        report: usize,
    ) -> f64 {
        let gross: f64 = self.lotteries[report]
            .iter()
            .enumerate()
            .map(|(a, p)| p * problem.agent_u_at(a, t, belief))
            .sum();
        match self.transfers.is_empty() {
            true => gross,
            false => gross - self.transfers[report],
        }
    }

    /// Expected payoff of the outside option for type `t` at `belief`.
    pub fn outside_payoff(problem: &ProblemSpec, belief: &Belief, t: usize) -> f64 {
        problem.agent_u_at(problem.outside_option, t, belief)
    }
}

/// The designer's value function sampled on a belief grid.
#[derive(Debug, Clone)]
pub struct ValueCurve {
    pub grid: Vec<Belief>,
    pub values: Vec<f64>,
    pub mechanisms: Vec<DirectMechanism>,
}

/// Largest IC or IR violation of `mech` at `belief`, re-evaluated directly
/// from the problem data. Nonpositive means the mechanism is clean.
pub fn ic_ir_violation(problem: &ProblemSpec, belief: &Belief, mech: &DirectMechanism) -> f64 {
    let nt = problem.n_types();
    let mut worst = f64::NEG_INFINITY;
    for t in 0..nt {
        let Ok(mu_t) = type_conditioned_belief(problem, belief, t) else {
            continue; // type has zero probability at this belief
        };
        let truthful = mech.agent_payoff(problem, &mu_t, t, t);
        worst = worst.max(DirectMechanism::outside_payoff(problem, &mu_t, t) - truthful);
        for r in 0..nt {
            if r != t {
                worst = worst.max(mech.agent_payoff(problem, &mu_t, t, r) - truthful);
            }
        }
    }
    worst
}

/// Objective and constraint coefficients shared by the LP builder.
struct StageCoeffs {
    /// `u_bar[t][a]`: agent payoff of allocation `a` to type `t` at her
    /// type-conditioned belief.
    u_bar: Vec<Vec<f64>>,
    /// Outside-option payoff per type.
    u_outside: Vec<f64>,
    /// `w_bar[t][a]`: designer objective weight of `x(a|t)`.
    w_bar: Vec<Vec<f64>>,
    /// Marginal type probability at the belief (weights transfers).
    f_mu: Vec<f64>,
    /// Types with positive probability at this belief.
    live: Vec<bool>,
}

fn stage_coeffs(problem: &ProblemSpec, belief: &Belief) -> StageCoeffs {
    let nt = problem.n_types();
    let na = problem.n_allocations();
    let f_mu = problem.type_marginal(belief);
    let mut u_bar = vec![vec![0.0; na]; nt];
    let mut u_outside = vec![0.0; nt];
    let mut live = vec![false; nt];
    for t in 0..nt {
        // Zero-probability types get no IC/IR rows of their own.
        if let Ok(mu_t) = type_conditioned_belief(problem, belief, t) {
            live[t] = true;
            for a in 0..na {
                u_bar[t][a] = problem.agent_u_at(a, t, &mu_t);
            }
            u_outside[t] = problem.agent_u_at(problem.outside_option, t, &mu_t);
        }
    }
    let mut w_bar = vec![vec![0.0; na]; nt];
    for (w, pw) in belief.weights().iter().enumerate() {
        for t in 0..nt {
            let weight = pw * problem.type_pmf[w][t];
            for a in 0..na {
                w_bar[t][a] += weight * problem.designer_w(a, t, w);
            }
        }
    }
    StageCoeffs {
        u_bar,
        u_outside,
        w_bar,
        f_mu,
        live,
    }
}

/// Solves the designer's problem at a fixed belief, returning the optimal
/// direct mechanism and its value `W(belief)`.
pub fn solve_at_belief(problem: &ProblemSpec, belief: &Belief) -> Result<(DirectMechanism, f64)> {
    if belief.len() != problem.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "belief over {} states in a {}-state problem",
            belief.len(),
            problem.n_states()
        )));
    }
    let nt = problem.n_types();
    let coeffs = stage_coeffs(problem, belief);

    // Start from adjacent IC pairs (all pairs when the type space is small)
    // and add whatever the verifier flags.
    let mut pairs: Vec<(usize, usize)> = if nt * nt.saturating_sub(1) <= 64 {
        (0..nt)
            .flat_map(|t| (0..nt).filter(move |r| *r != t).map(move |r| (t, r)))
            .collect()
    } else {
        (0..nt.saturating_sub(1))
            .flat_map(|t| [(t, t + 1), (t + 1, t)])
            .collect()
    };

    loop {
        let (sol, obj_const) = solve_stage_lp(problem, &coeffs, &pairs)?;
        let mech = extract_mechanism(problem, &sol.values);
        let violated = violated_pairs(problem, belief, &mech, &pairs, &coeffs);
        if violated.is_empty() {
            return Ok((mech, sol.objective_value + obj_const));
        }
        pairs.extend(violated);
    }
}

fn violated_pairs(
    problem: &ProblemSpec,
    belief: &Belief,
    mech: &DirectMechanism,
    active: &[(usize, usize)],
    coeffs: &StageCoeffs,
) -> Vec<(usize, usize)> {
    let nt = problem.n_types();
    let mut out = Vec::new();
    for t in 0..nt {
        if !coeffs.live[t] {
            continue;
        }
        let Ok(mu_t) = type_conditioned_belief(problem, belief, t) else {
            continue;
        };
        let truthful = mech.agent_payoff(problem, &mu_t, t, t);
        for r in 0..nt {
            if r == t || active.contains(&(t, r)) {
                continue;
            }
            if mech.agent_payoff(problem, &mu_t, t, r) > truthful + 1e-10 {
                out.push((t, r));
            }
        }
    }
    out
}

/// Builds and solves the stage LP. The reference allocation's lottery weight
/// is substituted out (`x(ref|t) = 1 - sum of the rest`), which removes the
/// per-type simplex rows and keeps the initial slack basis feasible, so the
/// solver skips phase 1. The reference is the outside option.
fn solve_stage_lp(
    problem: &ProblemSpec,
    coeffs: &StageCoeffs,
    ic_pairs: &[(usize, usize)],
) -> Result<(crate::lp::LpSolution, f64)> {
    let nt = problem.n_types();
    let na = problem.n_allocations();
    let ql = problem.quasilinear.as_ref();
    let aref = problem.outside_option;
    let rest: Vec<usize> = (0..na).filter(|a| *a != aref).collect();
    let nr = rest.len();
    let n_lottery = nt * nr;
    let n_vars = n_lottery + if ql.is_some() { nt } else { 0 };

    let mut objective = vec![0.0; n_vars];
    let mut obj_const = 0.0;
    for t in 0..nt {
        obj_const += coeffs.w_bar[t][aref];
        for (j, &a) in rest.iter().enumerate() {
            objective[t * nr + j] = coeffs.w_bar[t][a] - coeffs.w_bar[t][aref];
        }
        if ql.is_some() {
            objective[n_lottery + t] = coeffs.f_mu[t];
        }
    }
    let mut lp = LinearProgram::new(objective);
    lp.bounds = vec![(0.0, 1.0); n_vars];
    if let Some(Quasilinear { transfer_bound }) = ql {
        for t in 0..nt {
            lp.bounds[n_lottery + t] = (-transfer_bound, *transfer_bound);
        }
    }
    // Lottery mass: with one substituted weight, a bound suffices for binary
    // grids; larger grids need the explicit cap.
    if nr > 1 {
        for t in 0..nt {
            let mut row = vec![0.0; n_vars];
            for j in 0..nr {
                row[t * nr + j] = 1.0;
            }
            lp.push_ub(row, 1.0);
        }
    }
    // IR rows: the reference payoff becomes a constant on the right side.
    for t in 0..nt {
        if !coeffs.live[t] {
            continue;
        }
        let mut row = vec![0.0; n_vars];
        for (j, &a) in rest.iter().enumerate() {
            row[t * nr + j] = coeffs.u_bar[t][a] - coeffs.u_bar[t][aref];
        }
        if ql.is_some() {
            row[n_lottery + t] = -1.0;
        }
        lp.push_lb(row, coeffs.u_outside[t] - coeffs.u_bar[t][aref]);
    }
    // IC rows: truthful payoff of t at least the payoff of reporting r; the
    // reference constants cancel across the two reports.
    for &(t, r) in ic_pairs {
        if !coeffs.live[t] {
            continue;
        }
        let mut row = vec![0.0; n_vars];
        for (j, &a) in rest.iter().enumerate() {
            let d = coeffs.u_bar[t][a] - coeffs.u_bar[t][aref];
            row[t * nr + j] += d;
            row[r * nr + j] -= d;
        }
        if ql.is_some() {
            row[n_lottery + t] -= 1.0;
            row[n_lottery + r] += 1.0;
        }
        lp.push_lb(row, 0.0);
    }

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok((sol, obj_const)),
        LpStatus::Infeasible => Err(Error::InfeasibleProblem(
            "stage LP infeasible; the outside option should always be assignable".into(),
        )),
        LpStatus::Unbounded => Err(Error::NumericalFailure(
            "stage LP unbounded; check transfer bounds".into(),
        )),
    }
}

fn extract_mechanism(problem: &ProblemSpec, values: &[f64]) -> DirectMechanism {
    let nt = problem.n_types();
    let na = problem.n_allocations();
    let aref = problem.outside_option;
    let rest: Vec<usize> = (0..na).filter(|a| *a != aref).collect();
    let nr = rest.len();
    let mut lotteries = Vec::with_capacity(nt);
    for t in 0..nt {
        let mut lot = vec![0.0; na];
        let mut used = 0.0;
        for (j, &a) in rest.iter().enumerate() {
            let v = values[t * nr + j].max(0.0);
            lot[a] = v;
            used += v;
        }
        lot[aref] = (1.0 - used).max(0.0);
        let sum: f64 = lot.iter().sum();
        for p in &mut lot {
            *p /= sum;
        }
        lotteries.push(lot);
    }
    let transfers = if problem.is_quasilinear() {
        (0..nt).map(|t| values[nt * nr + t]).collect()
    } else {
        Vec::new()
    };
    DirectMechanism {
        lotteries,
        transfers,
    }
}

/// Designer payoff of `mech` when the state distribution is `belief`.
pub fn designer_value(problem: &ProblemSpec, belief: &Belief, mech: &DirectMechanism) -> f64 {
    let mut total = 0.0;
    for (w, pw) in belief.weights().iter().enumerate() {
        for t in 0..problem.n_types() {
            let ft = problem.type_pmf[w][t];
            let mut inner: f64 = mech.lotteries[t]
                .iter()
                .enumerate()
                .map(|(a, p)| p * problem.designer_w(a, t, w))
                .sum();
            if !mech.transfers.is_empty() {
                inner += mech.transfers[t];
            }
            total += pw * ft * inner;
        }
    }
    total
}

/// Evaluates [`solve_at_belief`] over a grid, in parallel. Atom order is
/// preserved and results do not depend on evaluation order.
pub fn value_curve(problem: &ProblemSpec, grid: &[Belief]) -> Result<ValueCurve> {
    if grid.is_empty() {
        return Err(Error::Validation {
            field: "grid".into(),
            message: "belief grid is empty".into(),
        });
    }
    let solved: Vec<Result<(DirectMechanism, f64)>> = grid
        .par_iter()
        .map(|mu| solve_at_belief(problem, mu))
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut mechanisms = Vec::with_capacity(grid.len());
    for (i, r) in solved.into_iter().enumerate() {
        match r {
            Ok((mech, v)) => {
                values.push(v);
                mechanisms.push(mech);
            }
            Err(e) => {
                return Err(Error::NumericalFailure(format!(
                    "value curve failed at grid atom {i}: {e}"
                )))
            }
        }
    }
    Ok(ValueCurve {
        grid: grid.to_vec(),
        values,
        mechanisms,
    })
}

/// The default belief grid for binary-state problems: `n` equally spaced
/// points on the probability of the second state.
pub fn default_grid(problem: &ProblemSpec, n: usize) -> Result<Vec<Belief>> {
    if problem.n_states() != 2 {
        return Err(Error::WrongDimension {
            expected: 2,
            got: problem.n_states(),
        });
    }
    if n < 2 {
        return Err(Error::Validation {
            field: "grid".into(),
            message: "need at least 2 grid points".into(),
        });
    }
    (0..n)
        .map(|k| Belief::binary(k as f64 / (n - 1) as f64))
        .collect()
}

// ---------------------------------------------------------------------------
// Screening discretization
// ---------------------------------------------------------------------------

/// A continuous single-dimensional quasilinear screening environment.
pub struct ContinuousScreening<'a> {
    pub theta_low: f64,
    pub theta_high: f64,
    /// Type density on `[theta_low, theta_high]`; need not be normalized.
    pub density: &'a dyn Fn(f64) -> f64,
    pub states: Vec<String>,
    pub prior: Vec<f64>,
    /// Physical allocation values, ordered; index 0 is the outside option.
    pub q_grid: Vec<f64>,
    /// Agent payoff net of transfers `v(q, theta, state)`.
    pub agent_value: &'a dyn Fn(f64, f64, usize) -> f64,
    /// Designer payoff net of transfers.
    pub designer_value: &'a dyn Fn(f64, f64, usize) -> f64,
}

/// A discretized screening problem, keeping the numeric grids alongside the
/// generic [`ProblemSpec`] form.
pub struct ScreeningProblem {
    pub problem: ProblemSpec,
    pub theta: Vec<f64>,
    pub mass: Vec<f64>,
    pub q_values: Vec<f64>,
}

/// Discretizes a continuous screening spec into `n` midpoint types with
/// masses proportional to the density.
pub fn discretize_screening(spec: &ContinuousScreening, n: usize) -> Result<ScreeningProblem> {
    if n < 2 {
        return Err(Error::Validation {
            field: "n".into(),
            message: "need at least 2 types".into(),
        });
    }
    let width = (spec.theta_high - spec.theta_low) / n as f64;
    let theta: Vec<f64> = (0..n)
        .map(|i| spec.theta_low + width * (i as f64 + 0.5))
        .collect();
    let mut mass: Vec<f64> = theta.iter().map(|t| (spec.density)(*t).max(0.0)).collect();
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateDensity);
    }
    for m in &mut mass {
        *m /= total;
    }
    let ns = spec.states.len();
    let nq = spec.q_grid.len();
    let agent: Vec<Vec<Vec<f64>>> = (0..nq)
        .map(|q| {
            (0..n)
                .map(|t| {
                    (0..ns)
                        .map(|w| (spec.agent_value)(spec.q_grid[q], theta[t], w))
                        .collect()
                })
                .collect()
        })
        .collect();
    let designer: Vec<Vec<Vec<f64>>> = (0..nq)
        .map(|q| {
            (0..n)
                .map(|t| {
                    (0..ns)
                        .map(|w| (spec.designer_value)(spec.q_grid[q], theta[t], w))
                        .collect()
                })
                .collect()
        })
        .collect();
    let max_abs = agent
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let problem = crate::model::problem_from_parts(
        spec.states.clone(),
        spec.prior.clone(),
        theta.iter().map(|t| format!("{t:.10}")).collect(),
        vec![mass.clone(); ns],
        spec.q_grid.iter().map(|q| format!("{q}")).collect(),
        0,
        agent,
        designer,
        Some(Quasilinear {
            transfer_bound: 10.0 * max_abs.max(1.0),
        }),
    )?;
    Ok(ScreeningProblem {
        problem,
        theta,
        mass,
        q_values: spec.q_grid.clone(),
    })
}

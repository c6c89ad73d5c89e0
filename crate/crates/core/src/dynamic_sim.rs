//! Dynamic-mechanism checks and the constructive block mechanism: detect
//! profitable undetectable deviations, check ex ante individual rationality,
//! and simulate the block-based dynamic implementation of a two-stage
//! mechanism (disclosure prefix + communication/adjustment blocks).

use crate::calibrate::lift_two_stage;
use crate::disclosure::TwoStageMechanism;
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus};
use crate::model::{type_conditioned_belief, Belief, ProblemSpec};
use crate::stage_design::DirectMechanism;
use rand::distributions::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

/// A reporting strategy as a row-stochastic matrix `sigma[true][reported]`.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl DeviationMatrix {
    pub fn identity(n: usize) -> DeviationMatrix {
        DeviationMatrix {
            rows: (0..n)
                .map(|t| (0..n).map(|r| if r == t { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    /// Max-norm defect of row-stochasticity.
    pub fn stochastic_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| {
                let sum: f64 = row.iter().sum();
                let neg = row.iter().cloned().fold(0.0f64, |acc, v| acc.max(-v));
                (sum - 1.0).abs().max(neg)
            })
            .fold(0.0, f64::max)
    }

    /// Max-norm defect of undetectability against the type pmf `f`:
    /// the reported-type marginal must reproduce `f`.
    pub fn undetectability_residual(&self, f: &[f64]) -> f64 {
        let n = f.len();
        (0..n)
            .map(|r| {
                let marginal: f64 = (0..n).map(|t| f[t] * self.rows[t][r]).sum();
                (marginal - f[r]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Searches for the most profitable undetectable deviation against `alpha`
/// at `belief`: an LP over row-stochastic matrices whose report marginal
/// matches the type marginal at that belief. Returns the deviation and its
/// payoff gain when the gain exceeds the audit tolerance.
pub fn find_profitable_undetectable_deviation(
    problem: &ProblemSpec,
    alpha: &DirectMechanism,
    belief: &Belief,
) -> Result<Option<(DeviationMatrix, f64)>> {
    let nt = problem.n_types();
    let f = problem.type_marginal(belief);
    // Payoff of true type t reporting r, at the type-conditioned belief.
    let mut payoff = vec![vec![0.0; nt]; nt];
    for t in 0..nt {
        let Ok(mu_t) = type_conditioned_belief(problem, belief, t) else {
            continue;
        };
        for r in 0..nt {
            payoff[t][r] = alpha.agent_payoff(problem, &mu_t, t, r);
        }
    }
    let truthful: f64 = (0..nt).map(|t| f[t] * payoff[t][t]).sum();

    // Variables sigma[t][r] at t*nt + r.
    let mut objective = vec![0.0; nt * nt];
    for t in 0..nt {
        for r in 0..nt {
            objective[t * nt + r] = f[t] * payoff[t][r];
        }
    }
    let mut lp = LinearProgram::new(objective);
    lp.bounds = vec![(0.0, 1.0); nt * nt];
    for t in 0..nt {
        let mut row = vec![0.0; nt * nt];
        for r in 0..nt {
            row[t * nt + r] = 1.0;
        }
        lp.push_eq(row, 1.0);
    }
    for r in 0..nt {
        let mut row = vec![0.0; nt * nt];
        for t in 0..nt {
            row[t * nt + r] = f[t];
        }
        lp.push_eq(row, f[r]);
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::NumericalFailure(
            "undetectable-deviation LP did not solve".into(),
        ));
    }
    let gain = sol.objective_value - truthful;
    if gain <= 1e-8 {
        return Ok(None);
    }
    let rows: Vec<Vec<f64>> = (0..nt)
        .map(|t| (0..nt).map(|r| sol.values[t * nt + r].max(0.0)).collect())
        .collect();
    Ok(Some((DeviationMatrix { rows }, gain)))
}

/// The undetectable deviation that maximizes off-diagonal reporting mass at
/// `belief`: a canonical nontrivial deviation for stress-testing dynamic
/// mechanisms. Falls back to the identity when mixing is impossible.
pub fn most_mixing_undetectable(problem: &ProblemSpec, belief: &Belief) -> Result<DeviationMatrix> {
    let nt = problem.n_types();
    let f = problem.type_marginal(belief);
    let mut objective = vec![0.0; nt * nt];
    for t in 0..nt {
        for r in 0..nt {
            if r != t {
                objective[t * nt + r] = f[t];
            }
        }
    }
    let mut lp = LinearProgram::new(objective);
    lp.bounds = vec![(0.0, 1.0); nt * nt];
    for t in 0..nt {
        let mut row = vec![0.0; nt * nt];
        for r in 0..nt {
            row[t * nt + r] = 1.0;
        }
        lp.push_eq(row, 1.0);
    }
    for r in 0..nt {
        let mut row = vec![0.0; nt * nt];
        for t in 0..nt {
            row[t * nt + r] = f[t];
        }
        lp.push_eq(row, f[r]);
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Ok(DeviationMatrix::identity(nt));
    }
    let rows: Vec<Vec<f64>> = (0..nt)
        .map(|t| (0..nt).map(|r| sol.values[t * nt + r].max(0.0)).collect())
        .collect();
    Ok(DeviationMatrix { rows })
}

/// Ex ante IR check: participation aggregated over the type distribution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExAnteIr {
    pub holds: bool,
    pub slack: f64,
}

/// Computes the ex ante participation slack of `alpha` at `belief`.
pub fn check_ex_ante_ir(
    problem: &ProblemSpec,
    alpha: &DirectMechanism,
    belief: &Belief,
) -> Result<ExAnteIr> {
    let f = problem.type_marginal(belief);
    let mut slack = 0.0;
    for t in 0..problem.n_types() {
        if f[t] <= 0.0 {
            continue;
        }
        let mu_t = type_conditioned_belief(problem, belief, t)?;
        let truthful = alpha.agent_payoff(problem, &mu_t, t, t);
        let outside = problem.agent_u_at(problem.outside_option, t, &mu_t);
        slack += f[t] * (truthful - outside);
    }
    Ok(ExAnteIr {
        holds: slack >= -1e-8,
        slack,
    })
}

/// Summary of one completed block.
#[derive(Debug, Clone, Serialize)]
pub struct BlockSummary {
    pub index: usize,
    pub comm_len: usize,
    pub adj_len: usize,
    /// Report frequency at the end of the communication phase.
    pub freq_comm: Vec<f64>,
    /// Report frequency over the whole block.
    pub freq_block: Vec<f64>,
}

/// The block mechanism: communication phases of growing length whose report
/// frequencies are pushed back to the type distribution by adjustment phases
/// with synthetic reports.
#[derive(Debug, Clone)]
pub struct BlockMechanism {
    pub alpha: DirectMechanism,
    /// Target report distribution.
    pub target: Vec<f64>,
    /// Smallest target atom; the adjustment pmf stays within this radius.
    pub eta: f64,
    pub warnings: Vec<String>,
}

/// Builds the block mechanism around `alpha`, targeting report distribution
/// `target`. Checks the dynamic-implementability conditions at `belief` and
/// records warnings when they fail.
pub fn build_block_mechanism(
    problem: &ProblemSpec,
    alpha: &DirectMechanism,
    belief: &Belief,
    target: &[f64],
) -> Result<BlockMechanism> {
    let eta = target.iter().cloned().fold(f64::INFINITY, f64::min);
    if eta <= 0.0 {
        return Err(Error::ConfigError(
            "block mechanism needs a full-support type distribution".into(),
        ));
    }
    let mut warnings = Vec::new();
    if let Some((_, gain)) = find_profitable_undetectable_deviation(problem, alpha, belief)? {
        warnings.push(format!(
            "allocation rule admits a profitable undetectable deviation (gain {gain:.3e})"
        ));
    }
    let ir = check_ex_ante_ir(problem, alpha, belief)?;
    if !ir.holds {
        warnings.push(format!(
            "allocation rule is not ex ante individually rational (slack {:.3e})",
            ir.slack
        ));
    }
    Ok(BlockMechanism {
        alpha: alpha.clone(),
        target: target.to_vec(),
        eta,
        warnings,
    })
}

/// The adjustment phase implied by a communication-phase report frequency:
/// its length and synthetic-report pmf. Empty when the frequency already
/// matches the target.
pub fn adjustment_phase(block: &BlockMechanism, comm_len: usize, freq: &[f64]) -> (usize, Vec<f64>) {
    let dev: f64 = freq
        .iter()
        .zip(&block.target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if dev <= 1e-12 {
        return (0, block.target.clone());
    }
    let n_adj = (comm_len as f64 * dev / block.eta).ceil() as usize;
    let scale = comm_len as f64 / n_adj as f64;
    let pmf: Vec<f64> = freq
        .iter()
        .zip(&block.target)
        .map(|(fr, tg)| tg - (fr - tg) * scale)
        .collect();
    (n_adj, pmf)
}

/// Expected whole-block report frequency given the communication frequency;
/// equals the target exactly by construction.
pub fn expected_block_frequency(
    block: &BlockMechanism,
    comm_len: usize,
    freq: &[f64],
) -> Vec<f64> {
    let (n_adj, pmf) = adjustment_phase(block, comm_len, freq);
    let total = (comm_len + n_adj) as f64;
    freq.iter()
        .zip(&pmf)
        .map(|(fr, adj)| (comm_len as f64 * fr + n_adj as f64 * adj) / total)
        .collect()
}

/// Agent policies for the dynamic simulation.
#[derive(Debug, Clone)]
pub enum DynamicPolicy {
    Truthful,
    /// One stationary reporting matrix per split atom, applied i.i.d. after
    /// the disclosure prefix identifies the atom.
    Deviator(Vec<DeviationMatrix>),
}

/// Configuration for the dynamic simulation.
#[derive(Debug, Clone)]
pub struct DynamicConfig {
    pub horizon: usize,
    pub seed: u64,
    pub policy: DynamicPolicy,
}

/// Phase tag of a dynamic-simulation period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DynPhase {
    Prefix,
    Communication,
    Adjustment,
}

/// One period of the dynamic trace. `used_report` is the report that drove
/// the allocation: the agent's in communication phases, the mechanism's
/// synthetic draw in adjustment phases, none in the prefix.
#[derive(Debug, Clone, Serialize)]
pub struct DynPeriod {
    pub type_index: usize,
    pub agent_report: usize,
    pub used_report: Option<usize>,
    pub alloc: usize,
    pub phase: DynPhase,
}

/// Result of a dynamic simulation.
#[derive(Debug, Clone, Serialize)]
pub struct DynamicSimResult {
    pub hidden_state: usize,
    pub atom: usize,
    pub prefix_len: usize,
    /// Horizon ended inside the disclosure prefix.
    pub truncated: bool,
    pub periods: Vec<DynPeriod>,
    pub blocks: Vec<BlockSummary>,
    /// Empirical pmf over (allocation, type, state) on the lifted labels.
    pub occupation: crate::repeated_sim::OccupationMeasure,
    /// Empirical pmf over (allocation, used report, state); absent when the
    /// horizon ended inside the disclosure prefix.
    pub report_occupation: Option<crate::repeated_sim::OccupationMeasure>,
    /// Empirical frequency of used reports.
    pub report_frequency: Vec<f64>,
    pub warnings: Vec<String>,
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rand::distributions::Uniform::new(0.0, 1.0).sample(rng);
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Simulates the dynamic implementation of a two-stage mechanism: the first
/// periods encode the drawn atom as a base-|A| allocation sequence, then the
/// block mechanism runs the atom's allocation rule.
pub fn simulate_dynamic(
    problem: &ProblemSpec,
    ts: &TwoStageMechanism,
    cfg: &DynamicConfig,
) -> Result<DynamicSimResult> {
    if cfg.horizon < 1 {
        return Err(Error::ConfigError("horizon must be at least 1".into()));
    }
    let lift = lift_two_stage(problem, ts)?;
    let na = lift.problem.n_allocations();
    let nt = problem.n_types();
    let ns = problem.n_states();
    let n_atoms = ts.split.atoms.len();
    if let DynamicPolicy::Deviator(sigmas) = &cfg.policy {
        if sigmas.len() != n_atoms {
            return Err(Error::ConfigError(format!(
                "deviator policy supplies {} matrices for {n_atoms} atoms",
                sigmas.len()
            )));
        }
    }
    let prefix_len = if n_atoms <= 1 {
        0
    } else {
        if na < 2 {
            return Err(Error::ConfigError(
                "cannot encode the disclosure prefix with fewer than 2 allocations".into(),
            ));
        }
        (n_atoms as f64).log(na as f64).ceil() as usize
    };

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let hidden_state = sample_index(&mut rng, problem.prior.weights());
    let atom = sample_index(&mut rng, &ts.experiment.rows[hidden_state]);
    let alpha_lifted = DirectMechanism {
        lotteries: lift.atom_lotteries[atom].clone(),
        transfers: Vec::new(),
    };
    // The designer knows the state; the block targets the realized
    // state-conditional type distribution.
    let target = problem.type_pmf[hidden_state].clone();
    let block = build_block_mechanism(
        &lift.problem,
        &alpha_lifted,
        &ts.split.atoms[atom].0,
        &target,
    )?;
    let mut warnings = block.warnings.clone();
    if let DynamicPolicy::Deviator(sigmas) = &cfg.policy {
        let res = sigmas[atom].undetectability_residual(&target);
        if res > 1e-8 {
            warnings.push(format!(
                "deviation matrix for atom {atom} is detectable (residual {res:.3e})"
            ));
        }
    }

    // Prefix digits, most significant first.
    let mut digits = vec![0usize; prefix_len];
    let mut rem = atom;
    for d in digits.iter_mut().rev() {
        *d = rem % na;
        rem /= na;
    }

    let mut periods = Vec::with_capacity(cfg.horizon);
    let mut blocks = Vec::new();
    let mut occ = vec![0.0; na * nt * ns];
    let mut rocc = vec![0.0; na * nt * ns];
    let mut report_counts = vec![0usize; nt];

    // Block runner state.
    let mut block_index = 0usize;
    let mut comm_left = 0usize;
    let mut adj_left = 0usize;
    let mut adj_pmf = block.target.clone();
    let mut comm_counts = vec![0usize; nt];
    let mut block_counts = vec![0usize; nt];

    for period in 1..=cfg.horizon {
        let t = sample_index(&mut rng, &problem.type_pmf[hidden_state]);
        let agent_report = match &cfg.policy {
            DynamicPolicy::Truthful => t,
            DynamicPolicy::Deviator(sigmas) => {
                if period <= prefix_len {
                    t // the atom is unknown during the prefix
                } else {
                    sample_index(&mut rng, &sigmas[atom].rows[t])
                }
            }
        };
        let (used_report, alloc, phase) = if period <= prefix_len {
            (None, digits[period - 1], DynPhase::Prefix)
        } else {
            if comm_left == 0 && adj_left == 0 {
                // Start the next block: communication length L_n = n.
                block_index += 1;
                comm_left = block_index;
                comm_counts = vec![0; nt];
                block_counts = vec![0; nt];
            }
            if comm_left > 0 {
                comm_left -= 1;
                comm_counts[agent_report] += 1;
                block_counts[agent_report] += 1;
                if comm_left == 0 {
                    let freq: Vec<f64> = comm_counts
                        .iter()
                        .map(|c| *c as f64 / block_index as f64)
                        .collect();
                    let (n_adj, pmf) = adjustment_phase(&block, block_index, &freq);
                    adj_left = n_adj;
                    adj_pmf = pmf;
                }
                let a = sample_index(&mut rng, &alpha_lifted.lotteries[agent_report]);
                (Some(agent_report), a, DynPhase::Communication)
            } else {
                adj_left -= 1;
                let synthetic = sample_index(&mut rng, &adj_pmf);
                block_counts[synthetic] += 1;
                let a = sample_index(&mut rng, &alpha_lifted.lotteries[synthetic]);
                (Some(synthetic), a, DynPhase::Adjustment)
            }
        };
        if comm_left == 0 && adj_left == 0 && block_index > 0 && phase != DynPhase::Prefix {
            let comm_total: usize = comm_counts.iter().sum();
            if comm_total == block_index {
                let block_total: usize = block_counts.iter().sum();
                blocks.push(BlockSummary {
                    index: block_index,
                    comm_len: block_index,
                    adj_len: block_total - block_index,
                    freq_comm: comm_counts
                        .iter()
                        .map(|c| *c as f64 / block_index as f64)
                        .collect(),
                    freq_block: block_counts
                        .iter()
                        .map(|c| *c as f64 / block_total as f64)
                        .collect(),
                });
                // Prevent duplicate summaries until the next block starts.
                comm_counts = vec![0; nt];
            }
        }
        occ[(alloc * nt + t) * ns + hidden_state] += 1.0;
        if let Some(r) = used_report {
            rocc[(alloc * nt + r) * ns + hidden_state] += 1.0;
            report_counts[r] += 1;
        }
        periods.push(DynPeriod {
            type_index: t,
            agent_report,
            used_report,
            alloc,
            phase,
        });
    }

    let total = cfg.horizon as f64;
    for x in &mut occ {
        *x /= total;
    }
    let used_total: f64 = report_counts.iter().map(|c| *c as f64).sum();
    let report_frequency: Vec<f64> = report_counts
        .iter()
        .map(|c| if used_total > 0.0 { *c as f64 / used_total } else { 0.0 })
        .collect();
    if used_total > 0.0 {
        for x in &mut rocc {
            *x /= used_total;
        }
    }
    let occupation = crate::repeated_sim::OccupationMeasure::new(
        lift.problem.allocations.clone(),
        problem.types.clone(),
        problem.states.clone(),
        occ,
    )?;
    let report_occupation = if used_total > 0.0 {
        Some(crate::repeated_sim::OccupationMeasure::new(
            lift.problem.allocations.clone(),
            problem.types.clone(),
            problem.states.clone(),
            rocc,
        )?)
    } else {
        None
    };
    Ok(DynamicSimResult {
        hidden_state,
        atom,
        prefix_len,
        truncated: cfg.horizon < prefix_len + 1,
        periods,
        blocks,
        occupation,
        report_occupation,
        report_frequency,
        warnings,
    })
}

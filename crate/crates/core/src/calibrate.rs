//! Calibrated information structures: what a state-dependent mechanism leaks,
//! signal-by-signal IC/IR auditing, and the conversion of two-stage
//! mechanisms into state mechanisms (and back through the audit).

use crate::disclosure::TwoStageMechanism;
use crate::error::{Error, Result};
use crate::model::{
    posterior_from_likelihood, type_conditioned_belief, Belief, ProblemSpec,
};
use crate::repeated_sim::OccupationMeasure;
use crate::{AUDIT_TOL, GROUP_TOL, INPUT_SIMPLEX_TOL};
use serde::{Deserialize, Serialize};

/// A state-dependent mechanism with a finite randomization device:
/// `table[t][w][e]` is a lottery over the problem's allocations.
#[derive(Debug, Clone, Serialize)]
pub struct StateMechanism {
    /// Device labels with their probability weights.
    pub device: Vec<(String, f64)>,
    pub table: Vec<Vec<Vec<Vec<f64>>>>,
}

impl StateMechanism {
    pub fn n_device(&self) -> usize {
        self.device.len()
    }

    /// Lottery over allocations for report `t` in cell `(w, e)`.
    pub fn lottery(&self, t: usize, w: usize, e: usize) -> &[f64] {
        &self.table[t][w][e]
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<()> {
        let wsum: f64 = self.device.iter().map(|(_, w)| w).sum();
        if (wsum - 1.0).abs() > INPUT_SIMPLEX_TOL * self.device.len().max(1) as f64 {
            return Err(Error::Validation {
                field: "device".into(),
                message: format!("device weights sum to {wsum}, not 1"),
            });
        }
        if self.device.iter().any(|(_, w)| *w < 0.0) {
            return Err(Error::Validation {
                field: "device".into(),
                message: "negative device weight".into(),
            });
        }
        let (nt, ns, ne, na) = (
            problem.n_types(),
            problem.n_states(),
            self.n_device(),
            problem.n_allocations(),
        );
        if self.table.len() != nt {
            return Err(Error::Validation {
                field: "table".into(),
                message: format!("expected {nt} type rows, got {}", self.table.len()),
            });
        }
        for (t, by_state) in self.table.iter().enumerate() {
            if by_state.len() != ns {
                return Err(Error::Validation {
                    field: format!("table[{t}]"),
                    message: format!("expected {ns} state rows, got {}", by_state.len()),
                });
            }
            for (w, by_eps) in by_state.iter().enumerate() {
                if by_eps.len() != ne {
                    return Err(Error::Validation {
                        field: format!("table[{t}][{w}]"),
                        message: format!("expected {ne} device rows, got {}", by_eps.len()),
                    });
                }
                for (e, lot) in by_eps.iter().enumerate() {
                    if lot.len() != na {
                        return Err(Error::Validation {
                            field: format!("table[{t}][{w}][{e}]"),
                            message: format!("expected {na} entries, got {}", lot.len()),
                        });
                    }
                    let sum: f64 = lot.iter().sum();
                    if lot.iter().any(|p| *p < -1e-12) || (sum - 1.0).abs() > 1e-10 * na as f64 {
                        return Err(Error::Validation {
                            field: format!("table[{t}][{w}][{e}]"),
                            message: "lottery is not a probability vector".into(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// One agent's interim allocation rule: per type, a lottery over allocations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterimRule {
    pub lotteries: Vec<Vec<f64>>,
}

impl InterimRule {
    fn linf(&self, other: &InterimRule) -> f64 {
        self.lotteries
            .iter()
            .flatten()
            .zip(other.lotteries.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Expected payoff for true type `t` reporting `r` at `belief`.
    pub fn agent_payoff(&self, problem: &ProblemSpec, belief: &Belief, t: usize, r: usize) -> f64 {
        self.lotteries[r]
            .iter()
            .enumerate()
            .map(|(a, p)| p * problem.agent_u_at(a, t, belief))
            .sum()
    }
}

/// A signal of the calibrated information structure: the interim rule the
/// agent would learn, how often each state emits it, and the Bayes posterior
/// it induces.
#[derive(Debug, Clone, Serialize)]
pub struct Signal {
    pub rule: InterimRule,
    /// `emission[w]` = probability this signal realizes in state `w`.
    pub emission: Vec<f64>,
    pub posterior: Belief,
}

/// The information structure calibrated to a mechanism.
#[derive(Debug, Clone, Serialize)]
pub struct CalibratedStructure {
    pub signals: Vec<Signal>,
}

/// Extracts the calibrated information structure of `mech`: groups device
/// cells `(w, e)` whose interim rules coincide (sup-norm within the grouping
/// tolerance) and computes per-state emission probabilities and posteriors.
pub fn calibrated_structure(problem: &ProblemSpec, mech: &StateMechanism) -> Result<CalibratedStructure> {
    mech.validate(problem)?;
    let ns = problem.n_states();
    let ne = mech.n_device();
    let nt = problem.n_types();
    let mut signals: Vec<(InterimRule, Vec<f64>)> = Vec::new();
    for w in 0..ns {
        for e in 0..ne {
            let rule = InterimRule {
                lotteries: (0..nt).map(|t| mech.lottery(t, w, e).to_vec()).collect(),
            };
            let weight = mech.device[e].1;
            match signals.iter_mut().find(|(r, _)| r.linf(&rule) <= GROUP_TOL) {
                Some((_, emission)) => emission[w] += weight,
                None => {
                    let mut emission = vec![0.0; ns];
                    emission[w] = weight;
                    signals.push((rule, emission));
                }
            }
        }
    }
    let signals = signals
        .into_iter()
        .filter(|(_, emission)| emission.iter().any(|p| *p > 0.0))
        .map(|(rule, emission)| {
            let posterior = posterior_from_likelihood(&problem.prior, &emission)?;
            Ok(Signal {
                rule,
                emission,
                posterior,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibratedStructure { signals })
}

/// The kind of constraint an audit violation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    Ic,
    Ir,
}

/// One IC or IR failure at a signal.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub type_index: usize,
    pub signal_index: usize,
    /// Profitable deviation report (IC only).
    pub target: Option<usize>,
    /// Payoff improvement from quitting (IR) or deviating (IC).
    pub gap: f64,
}

/// All violations found by the audit, in (signal, type, target) order.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks IC and IR for every type at every signal of the calibrated
/// structure, evaluating payoffs at the type-conditioned posterior. Gaps must
/// exceed the audit tolerance to be reported.
pub fn audit_ic_ir(
    problem: &ProblemSpec,
    _mech: &StateMechanism,
    structure: &CalibratedStructure,
) -> AuditReport {
    let nt = problem.n_types();
    let mut violations = Vec::new();
    for (s, signal) in structure.signals.iter().enumerate() {
        for t in 0..nt {
            let Ok(mu) = type_conditioned_belief(problem, &signal.posterior, t) else {
                continue; // type impossible given this signal's posterior
            };
            let truthful = signal.rule.agent_payoff(problem, &mu, t, t);
            let outside = problem.agent_u_at(problem.outside_option, t, &mu);
            if outside - truthful > AUDIT_TOL {
                violations.push(Violation {
                    kind: ViolationKind::Ir,
                    type_index: t,
                    signal_index: s,
                    target: None,
                    gap: outside - truthful,
                });
            }
            for r in 0..nt {
                if r == t {
                    continue;
                }
                let gain = signal.rule.agent_payoff(problem, &mu, t, r) - truthful;
                if gain > AUDIT_TOL {
                    violations.push(Violation {
                        kind: ViolationKind::Ic,
                        type_index: t,
                        signal_index: s,
                        target: Some(r),
                        gap: gain,
                    });
                }
            }
        }
    }
    AuditReport { violations }
}

// ---------------------------------------------------------------------------
// Two-stage -> state mechanism
// ---------------------------------------------------------------------------

/// How a lifted allocation label decomposes in the source problem:
/// a physical allocation index paired with a transfer.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AllocInfo {
    pub physical: usize,
    pub transfer: f64,
}

/// A state mechanism together with the (possibly lifted) problem it runs on.
///
/// For generic problems the embedded problem is a clone of the input. For
/// quasilinear problems, allocations are lifted to (physical, transfer)
/// pairs so the mechanism, audits, and simulators all operate on a single
/// discrete outcome space; `alloc_info` records the decomposition.
#[derive(Debug, Clone)]
pub struct CalibratedMechanism {
    pub problem: ProblemSpec,
    pub mechanism: StateMechanism,
    pub alloc_info: Vec<AllocInfo>,
}

/// The lifted view of a two-stage mechanism: an outcome label set shared by
/// conversion, analytic outcome distributions, and simulation.
pub struct LiftedTwoStage {
    pub problem: ProblemSpec,
    pub alloc_info: Vec<AllocInfo>,
    /// `atom_lotteries[m][t][a]` over the lifted labels.
    pub atom_lotteries: Vec<Vec<Vec<f64>>>,
}

/// Re-expresses a two-stage mechanism on a discrete outcome label set:
/// the identity for generic problems, (physical, transfer) pairs for
/// quasilinear ones.
pub fn lift_two_stage(problem: &ProblemSpec, ts: &TwoStageMechanism) -> Result<LiftedTwoStage> {
    if !problem.is_quasilinear() {
        let atom_lotteries = ts.mechanisms.iter().map(|m| m.lotteries.clone()).collect();
        return Ok(LiftedTwoStage {
            problem: problem.clone(),
            alloc_info: (0..problem.n_allocations())
                .map(|a| AllocInfo {
                    physical: a,
                    transfer: 0.0,
                })
                .collect(),
            atom_lotteries,
        });
    }
    // Collect the (physical, transfer) pairs in the support; the outside
    // pair comes first so it can serve as the lifted outside option.
    let mut pairs: Vec<AllocInfo> = vec![AllocInfo {
        physical: problem.outside_option,
        transfer: 0.0,
    }];
    let find_or_insert = |pairs: &mut Vec<AllocInfo>, q: usize, tr: f64| -> usize {
        match pairs
            .iter()
            .position(|p| p.physical == q && (p.transfer - tr).abs() <= 1e-9)
        {
            Some(i) => i,
            None => {
                pairs.push(AllocInfo {
                    physical: q,
                    transfer: tr,
                });
                pairs.len() - 1
            }
        }
    };
    let nt = problem.n_types();
    let mut atom_lotteries: Vec<Vec<Vec<usize>>> = Vec::new(); // pair index per support entry
    let mut atom_weights: Vec<Vec<Vec<f64>>> = Vec::new();
    for mech in &ts.mechanisms {
        let mut by_type_idx = Vec::with_capacity(nt);
        let mut by_type_w = Vec::with_capacity(nt);
        for t in 0..nt {
            let tr = mech.transfers.get(t).copied().unwrap_or(0.0);
            let mut idx = Vec::new();
            let mut wts = Vec::new();
            for (q, p) in mech.lotteries[t].iter().enumerate() {
                if *p > 0.0 {
                    idx.push(find_or_insert(&mut pairs, q, tr));
                    wts.push(*p);
                }
            }
            by_type_idx.push(idx);
            by_type_w.push(wts);
        }
        atom_lotteries.push(by_type_idx);
        atom_weights.push(by_type_w);
    }
    let na = pairs.len();
    let ns = problem.n_states();
    let labels: Vec<String> = pairs
        .iter()
        .map(|p| format!("{};t={:.12}", problem.allocations[p.physical], p.transfer))
        .collect();
    let agent: Vec<Vec<Vec<f64>>> = pairs
        .iter()
        .map(|p| {
            (0..nt)
                .map(|t| {
                    (0..ns)
                        .map(|w| problem.agent_u(p.physical, t, w) - p.transfer)
                        .collect()
                })
                .collect()
        })
        .collect();
    let designer: Vec<Vec<Vec<f64>>> = pairs
        .iter()
        .map(|p| {
            (0..nt)
                .map(|t| {
                    (0..ns)
                        .map(|w| problem.designer_w(p.physical, t, w) + p.transfer)
                        .collect()
                })
                .collect()
        })
        .collect();
    let lifted = crate::model::problem_from_parts(
        problem.states.clone(),
        problem.prior.weights().to_vec(),
        problem.types.clone(),
        problem.type_pmf.clone(),
        labels,
        0,
        agent,
        designer,
        None,
    )?;
    let dense: Vec<Vec<Vec<f64>>> = atom_lotteries
        .iter()
        .zip(&atom_weights)
        .map(|(idx_by_t, w_by_t)| {
            idx_by_t
                .iter()
                .zip(w_by_t)
                .map(|(idx, wts)| {
                    let mut lot = vec![0.0; na];
                    for (i, w) in idx.iter().zip(wts) {
                        lot[*i] += w;
                    }
                    lot
                })
                .collect()
        })
        .collect();
    Ok(LiftedTwoStage {
        problem: lifted,
        alloc_info: pairs,
        atom_lotteries: dense,
    })
}

/// Builds a device whose cells realize, in each state `w`, outcome `m` with
/// probability `weights[w][m]`, using the common refinement of the per-state
/// interval partitions of `[0, 1]`. Returns the device weights and the
/// assignment `cell[w][e] -> m`.
fn device_from_state_weights(weights: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<usize>>) {
    let mut cuts = vec![0.0, 1.0];
    for row in weights {
        let mut acc = 0.0;
        for w in row {
            acc += w;
            cuts.push(acc.min(1.0));
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let mut eta = Vec::new();
    let mut mids = Vec::new();
    for pair in cuts.windows(2) {
        let len = pair[1] - pair[0];
        if len > 1e-12 {
            eta.push(len);
            mids.push(0.5 * (pair[0] + pair[1]));
        }
    }
    let assignment: Vec<Vec<usize>> = weights
        .iter()
        .map(|row| {
            mids.iter()
                .map(|mid| {
                    let mut acc = 0.0;
                    for (m, w) in row.iter().enumerate() {
                        acc += w;
                        if *mid < acc {
                            return m;
                        }
                    }
                    row.len() - 1
                })
                .collect()
        })
        .collect();
    (eta, assignment)
}

/// Converts a two-stage mechanism into an equivalent state mechanism whose
/// calibrated information structure reproduces the split's posteriors.
/// Quasilinear problems are lifted to a generic outcome space first.
pub fn two_stage_to_calibrated(
    problem: &ProblemSpec,
    ts: &TwoStageMechanism,
) -> Result<CalibratedMechanism> {
    let lift = lift_two_stage(problem, ts)?;
    let (eta, assignment) = device_from_state_weights(&ts.experiment.rows);
    let ne = eta.len();
    let nt = lift.problem.n_types();
    let ns = lift.problem.n_states();
    let table: Vec<Vec<Vec<Vec<f64>>>> = (0..nt)
        .map(|t| {
            (0..ns)
                .map(|w| {
                    (0..ne)
                        .map(|e| lift.atom_lotteries[assignment[w][e]][t].clone())
                        .collect()
                })
                .collect()
        })
        .collect();
    let device = eta
        .into_iter()
        .enumerate()
        .map(|(e, w)| (format!("e{e}"), w))
        .collect();
    Ok(CalibratedMechanism {
        problem: lift.problem,
        mechanism: StateMechanism { device, table },
        alloc_info: lift.alloc_info,
    })
}

/// The analytic outcome distribution of a two-stage mechanism over
/// allocation x type x state (on the lifted outcome space for quasilinear
/// problems).
pub fn outcome_distribution(problem: &ProblemSpec, ts: &TwoStageMechanism) -> Result<OccupationMeasure> {
    let lift = lift_two_stage(problem, ts)?;
    let na = lift.problem.n_allocations();
    let nt = lift.problem.n_types();
    let ns = lift.problem.n_states();
    let mut pmf = vec![0.0; na * nt * ns];
    for (w, pw) in problem.prior.weights().iter().enumerate() {
        for t in 0..nt {
            let base = pw * problem.type_pmf[w][t];
            for (m, row) in ts.experiment.rows[w].iter().enumerate() {
                if *row == 0.0 {
                    continue;
                }
                for (a, pa) in lift.atom_lotteries[m][t].iter().enumerate() {
                    pmf[(a * nt + t) * ns + w] += base * row * pa;
                }
            }
        }
    }
    OccupationMeasure::new(
        lift.problem.allocations.clone(),
        lift.problem.types.clone(),
        lift.problem.states.clone(),
        pmf,
    )
}

/// Expected designer payoff of a state mechanism under the prior.
pub fn mechanism_designer_value(problem: &ProblemSpec, mech: &StateMechanism) -> f64 {
    let mut total = 0.0;
    for (w, pw) in problem.prior.weights().iter().enumerate() {
        for t in 0..problem.n_types() {
            let base = pw * problem.type_pmf[w][t];
            for (e, (_, we)) in mech.device.iter().enumerate() {
                for (a, pa) in mech.lottery(t, w, e).iter().enumerate() {
                    total += base * we * pa * problem.designer_w(a, t, w);
                }
            }
        }
    }
    total
}

/// Outcome distribution of a state mechanism under truthful reporting,
/// summing over the device.
pub fn mechanism_outcome_distribution(
    problem: &ProblemSpec,
    mech: &StateMechanism,
) -> Result<OccupationMeasure> {
    let na = problem.n_allocations();
    let nt = problem.n_types();
    let ns = problem.n_states();
    let mut pmf = vec![0.0; na * nt * ns];
    for (w, pw) in problem.prior.weights().iter().enumerate() {
        for t in 0..nt {
            let base = pw * problem.type_pmf[w][t];
            for (e, (_, we)) in mech.device.iter().enumerate() {
                for (a, pa) in mech.lottery(t, w, e).iter().enumerate() {
                    pmf[(a * nt + t) * ns + w] += base * we * pa;
                }
            }
        }
    }
    OccupationMeasure::new(
        problem.allocations.clone(),
        problem.types.clone(),
        problem.states.clone(),
        pmf,
    )
}

// ---------------------------------------------------------------------------
// Mechanism document I/O
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct DeviceEntry {
    label: String,
    weight: crate::model::Num,
}

#[derive(Deserialize)]
struct MechanismDoc {
    device: Vec<DeviceEntry>,
    table: Vec<Vec<Vec<Vec<crate::model::Num>>>>,
}

/// Parses a state-mechanism document (JSON), validating against `problem`.
/// The table is indexed `[type][state][device]` and each entry is a lottery
/// over the problem's allocations.
pub fn load_state_mechanism(problem: &ProblemSpec, source: &str) -> Result<StateMechanism> {
    let doc: MechanismDoc = serde_json::from_str(source).map_err(|e| Error::Schema {
        field: "document".into(),
        message: e.to_string(),
    })?;
    let mech = StateMechanism {
        device: doc.device.into_iter().map(|d| (d.label, d.weight.0)).collect(),
        table: doc
            .table
            .into_iter()
            .map(|by_state| {
                by_state
                    .into_iter()
                    .map(|by_eps| {
                        by_eps
                            .into_iter()
                            .map(|lot| lot.into_iter().map(|n| n.0).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    };
    mech.validate(problem)?;
    Ok(mech)
}

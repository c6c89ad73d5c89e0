//! Concavification of the value curve at the prior and assembly of the full
//! two-stage mechanism: an optimal belief split, the Blackwell experiment
//! generating it, and the per-atom direct mechanisms.

use crate::error::{Error, Result};
use crate::lp::{solve_lp_basic_support, LinearProgram, LpStatus};
use crate::model::{blackwell_from_split, Belief, BeliefSplit, BlackwellExperiment, ProblemSpec};
use crate::stage_design::{value_curve, DirectMechanism, ValueCurve};
use serde::Serialize;

/// Atoms with LP weight below this are pruned as simplex degeneracy noise.
const ATOM_PRUNE_TOL: f64 = 1e-10;

/// A complete two-stage mechanism: disclose a belief drawn from `split` via
/// `experiment`, then run the per-atom direct mechanism.
#[derive(Debug, Clone, Serialize)]
pub struct TwoStageMechanism {
    pub split: BeliefSplit,
    pub experiment: BlackwellExperiment,
    pub mechanisms: Vec<DirectMechanism>,
    /// Designer payoff: the concavified value at the prior.
    pub value: f64,
}

/// Concavifies a value curve at `prior` by solving
/// `max sum_m w_m W(mu_m)` over grid weights `w` with barycenter `prior`.
/// The basic-solution property bounds the split support by the number of
/// states.
pub fn concavify_at_prior(curve: &ValueCurve, prior: &Belief) -> Result<(BeliefSplit, f64)> {
    let k = curve.grid.len();
    let ns = prior.len();
    let mut lp = LinearProgram::new(curve.values.clone());
    lp.bounds = vec![(0.0, f64::INFINITY); k];
    // Barycenter rows; summing them over states forces the weights to sum
    // to 1, so no separate normalization row is needed and the basis size
    // is at most the number of states.
    for w in 0..ns {
        let row: Vec<f64> = curve.grid.iter().map(|mu| mu.weights()[w]).collect();
        lp.push_eq(row, prior.weights()[w]);
    }
    let sol = solve_lp_basic_support(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::PriorOutsideHull),
        LpStatus::Unbounded => {
            return Err(Error::NumericalFailure("concavification LP unbounded".into()))
        }
    }
    let mut atoms: Vec<(Belief, f64)> = sol
        .values
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > ATOM_PRUNE_TOL)
        .map(|(m, w)| (curve.grid[m].clone(), *w))
        .collect();
    let total: f64 = atoms.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut atoms {
        *w /= total;
    }
    let split = BeliefSplit::new(atoms, prior)?;
    Ok((split, sol.objective_value))
}

/// A piecewise-linear function as a breakpoint list `(x, y)`.
#[derive(Debug, Clone, Serialize)]
pub struct Envelope {
    pub breakpoints: Vec<(f64, f64)>,
}

impl Envelope {
    /// Evaluates the envelope at `x` by linear interpolation.
    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.breakpoints;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                if (x1 - x0).abs() < 1e-15 {
                    return y0.max(y1);
                }
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        pts.last().unwrap().1
    }
}

/// Upper concave envelope of a binary-state value curve via a monotone-chain
/// upper hull over the `(mu, W)` points. An independent geometric route to
/// the same object as [`concavify_at_prior`].
pub fn upper_envelope_1d(curve: &ValueCurve) -> Result<Envelope> {
    if curve.grid.iter().any(|mu| mu.len() != 2) {
        let got = curve.grid.first().map_or(0, |mu| mu.len());
        return Err(Error::WrongDimension { expected: 2, got });
    }
    let mut pts: Vec<(f64, f64)> = curve
        .grid
        .iter()
        .zip(&curve.values)
        .map(|(mu, v)| (mu.weights()[1], *v))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Drop b when it lies on or below the chord a-p.
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= -1e-14 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    Ok(Envelope { breakpoints: hull })
}

/// Solves the full two-stage problem: value curve on `grid`, concavification
/// at the prior, Blackwell experiment, and per-atom mechanisms.
pub fn optimal_two_stage(problem: &ProblemSpec, grid: &[Belief]) -> Result<TwoStageMechanism> {
    let curve = value_curve(problem, grid)?;
    optimal_two_stage_from_curve(problem, &curve)
}

/// As [`optimal_two_stage`] but reusing an already computed curve.
pub fn optimal_two_stage_from_curve(
    problem: &ProblemSpec,
    curve: &ValueCurve,
) -> Result<TwoStageMechanism> {
    let (split, value) = concavify_at_prior(curve, &problem.prior)?;
    let experiment = blackwell_from_split(problem, &split)?;
    let mechanisms: Vec<DirectMechanism> = split
        .atoms
        .iter()
        .map(|(mu, _)| {
            let idx = curve
                .grid
                .iter()
                .position(|g| g.linf(mu) < 1e-12)
                .expect("split atoms are grid points");
            curve.mechanisms[idx].clone()
        })
        .collect();
    Ok(TwoStageMechanism {
        split,
        experiment,
        mechanisms,
        value,
    })
}

// ---------------------------------------------------------------------------
// Two-stage document I/O
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct TwoStageAtomDoc {
    belief: Vec<crate::model::Num>,
    weight: crate::model::Num,
    lotteries: Vec<Vec<crate::model::Num>>,
    #[serde(default)]
    transfers: Vec<crate::model::Num>,
}

#[derive(serde::Deserialize)]
struct TwoStageDoc {
    value: crate::model::Num,
    atoms: Vec<TwoStageAtomDoc>,
}

/// Serializes a two-stage mechanism as a JSON document with one record per
/// split atom. The experiment is derivable and not stored.
pub fn two_stage_doc(ts: &TwoStageMechanism) -> serde_json::Value {
    let atoms: Vec<serde_json::Value> = ts
        .split
        .atoms
        .iter()
        .zip(&ts.mechanisms)
        .map(|((mu, w), mech)| {
            serde_json::json!({
                "belief": mu.weights(),
                "weight": w,
                "lotteries": mech.lotteries,
                "transfers": mech.transfers,
            })
        })
        .collect();
    serde_json::json!({ "value": ts.value, "atoms": atoms })
}

/// Parses a two-stage document against `problem`, revalidating Bayes
/// plausibility and rebuilding the Blackwell experiment.
pub fn load_two_stage(problem: &ProblemSpec, source: &str) -> Result<TwoStageMechanism> {
    let doc: TwoStageDoc = serde_json::from_str(source).map_err(|e| Error::Schema {
        field: "document".into(),
        message: e.to_string(),
    })?;
    let mut atoms = Vec::new();
    let mut mechanisms = Vec::new();
    for (i, atom) in doc.atoms.into_iter().enumerate() {
        let mu = Belief::new(atom.belief.into_iter().map(|n| n.0).collect())?;
        atoms.push((mu.clone(), atom.weight.0));
        let lotteries: Vec<Vec<f64>> = atom
            .lotteries
            .into_iter()
            .map(|l| l.into_iter().map(|n| n.0).collect())
            .collect();
        if lotteries.len() != problem.n_types()
            || lotteries.iter().any(|l| l.len() != problem.n_allocations())
        {
            return Err(Error::Validation {
                field: format!("atoms[{i}].lotteries"),
                message: "lottery table does not match the problem".into(),
            });
        }
        let transfers: Vec<f64> = atom.transfers.into_iter().map(|n| n.0).collect();
        if problem.is_quasilinear() && transfers.len() != problem.n_types() {
            return Err(Error::Validation {
                field: format!("atoms[{i}].transfers"),
                message: "quasilinear mechanisms need one transfer per type".into(),
            });
        }
        let mech = DirectMechanism {
            lotteries,
            transfers,
        };
        if crate::stage_design::ic_ir_violation(problem, &mu, &mech) > crate::AUDIT_TOL {
            return Err(Error::Validation {
                field: format!("atoms[{i}]"),
                message: "per-atom mechanism violates IC/IR at its belief".into(),
            });
        }
        mechanisms.push(mech);
    }
    let split = BeliefSplit::new(atoms, &problem.prior)?;
    let experiment = blackwell_from_split(problem, &split)?;
    let value: f64 = split
        .atoms
        .iter()
        .zip(&mechanisms)
        .map(|((mu, w), mech)| w * crate::stage_design::designer_value(problem, mu, mech))
        .sum();
    let _ = doc.value;
    Ok(TwoStageMechanism {
        split,
        experiment,
        mechanisms,
        value,
    })
}

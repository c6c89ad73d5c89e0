//! Python bindings for the core types and operations: load problems, solve
//! the two-stage design problem, audit state mechanisms, benchmark against
//! Myersonian design, and run the repeated/dynamic simulators.
//!
//! Structured results cross the boundary as JSON strings; the smoke test
//! shows the intended `json.loads` usage.

use calmech::benchmark::{gap_report, solve_myerson};
use calmech::calibrate::{
    audit_ic_ir, calibrated_structure, load_state_mechanism, outcome_distribution,
    two_stage_to_calibrated,
};
use calmech::disclosure::{load_two_stage, optimal_two_stage, two_stage_doc, TwoStageMechanism};
use calmech::dynamic_sim::{simulate_dynamic, DynamicConfig, DynamicPolicy};
use calmech::model::{load_problem, Belief, ProblemSpec};
use calmech::repeated_sim::{occupation, simulate, Policy, SimConfig};
use calmech::stage_design::{default_grid, solve_at_belief, value_curve};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A mechanism-design environment loaded from a problem document.
#[pyclass]
struct Problem {
    inner: ProblemSpec,
}

fn belief_grid(p: &ProblemSpec, n: usize) -> PyResult<Vec<Belief>> {
    default_grid(p, n).map_err(err)
}

#[pymethods]
impl Problem {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Problem {
            inner: load_problem(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(err)?;
        Self::from_json(&text)
    }

    #[getter]
    fn states(&self) -> Vec<String> {
        self.inner.states.clone()
    }

    #[getter]
    fn types(&self) -> Vec<String> {
        self.inner.types.clone()
    }

    #[getter]
    fn allocations(&self) -> Vec<String> {
        self.inner.allocations.clone()
    }

    #[getter]
    fn prior(&self) -> Vec<f64> {
        self.inner.prior.weights().to_vec()
    }

    fn is_quasilinear(&self) -> bool {
        self.inner.is_quasilinear()
    }

    /// Optimal direct mechanism at a fixed belief: returns
    /// (lotteries, transfers, value).
    fn solve_at_belief(&self, belief: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, f64)> {
        let mu = Belief::new(belief).map_err(err)?;
        let (mech, value) = solve_at_belief(&self.inner, &mu).map_err(err)?;
        Ok((mech.lotteries, mech.transfers, value))
    }

    /// The designer's value function on an equally spaced binary-state
    /// belief grid: a list of (belief, value) pairs.
    fn value_curve(&self, grid: usize) -> PyResult<Vec<(Vec<f64>, f64)>> {
        let grid = belief_grid(&self.inner, grid)?;
        let curve = value_curve(&self.inner, &grid).map_err(err)?;
        Ok(curve
            .grid
            .iter()
            .zip(&curve.values)
            .map(|(mu, v)| (mu.weights().to_vec(), *v))
            .collect())
    }

    /// Solves the full two-stage problem on an equally spaced grid.
    fn solve(&self, grid: usize) -> PyResult<TwoStage> {
        let grid = belief_grid(&self.inner, grid)?;
        let ts = optimal_two_stage(&self.inner, &grid).map_err(err)?;
        Ok(TwoStage {
            problem: self.inner.clone(),
            inner: ts,
        })
    }

    /// The Myersonian benchmark value (IC/IR on average across states).
    fn myerson_value(&self) -> PyResult<f64> {
        Ok(solve_myerson(&self.inner).map_err(err)?.value)
    }

    /// Gap report as JSON: W_My, W_cal, gap, state-by-state monotone flag.
    fn gap_report(&self, grid: usize) -> PyResult<String> {
        let grid = belief_grid(&self.inner, grid)?;
        let report = gap_report(&self.inner, &grid).map_err(err)?;
        serde_json::to_string(&report).map_err(err)
    }

    /// Audits a state-mechanism document: returns the calibrated structure
    /// and the violation list as JSON.
    fn audit(&self, mechanism_json: &str) -> PyResult<String> {
        let mech = load_state_mechanism(&self.inner, mechanism_json).map_err(err)?;
        let structure = calibrated_structure(&self.inner, &mech).map_err(err)?;
        let report = audit_ic_ir(&self.inner, &mech, &structure);
        serde_json::to_string(&serde_json::json!({
            "signals": structure.signals.len(),
            "structure": structure,
            "violations": report.violations,
            "clean": report.is_clean(),
        }))
        .map_err(err)
    }

    /// Loads a two-stage document produced by `TwoStage.to_json` or the CLI.
    fn load_two_stage(&self, text: &str) -> PyResult<TwoStage> {
        Ok(TwoStage {
            problem: self.inner.clone(),
            inner: load_two_stage(&self.inner, text).map_err(err)?,
        })
    }
}

/// A solved two-stage mechanism bound to its problem.
#[pyclass]
struct TwoStage {
    problem: ProblemSpec,
    inner: TwoStageMechanism,
}

#[pymethods]
impl TwoStage {
    #[getter]
    fn value(&self) -> f64 {
        self.inner.value
    }

    /// Split atoms as (belief, weight) pairs.
    fn atoms(&self) -> Vec<(Vec<f64>, f64)> {
        self.inner
            .split
            .atoms
            .iter()
            .map(|(mu, w)| (mu.weights().to_vec(), *w))
            .collect()
    }

    /// Per-atom direct mechanisms as (lotteries, transfers) pairs.
    fn mechanisms(&self) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
        self.inner
            .mechanisms
            .iter()
            .map(|m| (m.lotteries.clone(), m.transfers.clone()))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&two_stage_doc(&self.inner)).map_err(err)
    }

    /// The analytic outcome distribution as JSON with self-describing axes.
    fn outcome_distribution(&self) -> PyResult<String> {
        let occ = outcome_distribution(&self.problem, &self.inner).map_err(err)?;
        serde_json::to_string(&occ).map_err(err)
    }

    /// Converts to a state mechanism and audits it; returns the audit JSON.
    fn audit_round_trip(&self) -> PyResult<String> {
        let cal = two_stage_to_calibrated(&self.problem, &self.inner).map_err(err)?;
        let structure = calibrated_structure(&cal.problem, &cal.mechanism).map_err(err)?;
        let report = audit_ic_ir(&cal.problem, &cal.mechanism, &structure);
        serde_json::to_string(&serde_json::json!({
            "signals": structure.signals.len(),
            "violations": report.violations,
            "clean": report.is_clean(),
        }))
        .map_err(err)
    }

    /// Repeated simulation of the calibrated form of this mechanism.
    /// Policy: "truthful" | "myopic" | "learning:N".
    fn simulate_repeated(&self, horizon: usize, seed: u64, policy: &str) -> PyResult<String> {
        let cal = two_stage_to_calibrated(&self.problem, &self.inner).map_err(err)?;
        let policy = parse_policy(policy)?;
        let cfg = SimConfig {
            horizon,
            seed,
            policy,
            record_beliefs: false,
        };
        let trace = simulate(&cal.problem, &cal.mechanism, &cfg).map_err(err)?;
        let occ = occupation(&cal.problem, &trace).map_err(err)?;
        serde_json::to_string(&serde_json::json!({
            "hidden_state": cal.problem.states[trace.hidden_state],
            "occupation": occ,
            "average_payoff": calmech::repeated_sim::average_payoff(&cal.problem, &trace),
        }))
        .map_err(err)
    }

    /// Dynamic (block-mechanism) simulation. Policy: "truthful".
    fn simulate_dynamic(&self, horizon: usize, seed: u64) -> PyResult<String> {
        let cfg = DynamicConfig {
            horizon,
            seed,
            policy: DynamicPolicy::Truthful,
        };
        let res = simulate_dynamic(&self.problem, &self.inner, &cfg).map_err(err)?;
        serde_json::to_string(&serde_json::json!({
            "hidden_state": self.problem.states[res.hidden_state],
            "atom": res.atom,
            "prefix_len": res.prefix_len,
            "report_frequency": res.report_frequency,
            "blocks": res.blocks.len(),
            "occupation": res.occupation,
            "warnings": res.warnings,
        }))
        .map_err(err)
    }
}

fn parse_policy(policy: &str) -> PyResult<Policy> {
    match policy {
        "truthful" => Ok(Policy::Truthful),
        "myopic" => Ok(Policy::Myopic),
        other => match other.strip_prefix("learning:") {
            Some(n) => n
                .parse::<usize>()
                .map(|explore_rounds| Policy::Learning { explore_rounds })
                .map_err(|_| err(format!("bad learning rounds in `{other}`"))),
            None => Err(err(format!("unknown policy `{other}`"))),
        },
    }
}

#[pymodule]
fn calmech_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<TwoStage>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

//! Shared unit-test problem instances.

use crate::calibrate::StateMechanism;
use crate::model::{load_problem, problem_from_parts, ProblemSpec};
use crate::stage_design::{discretize_screening, ContinuousScreening, ScreeningProblem};

/// The demand-uncertainty sale: binary state, binary buyer value, correlated.
pub(crate) fn demand_sale() -> ProblemSpec {
    load_problem(
        r#"{
        "states": ["L", "H"],
        "prior": ["1/2", "1/2"],
        "types": ["1/2", "1"],
        "type_pmf": [["2/3", "1/3"], ["1/3", "2/3"]],
        "outside_option": 0,
        "quasilinear": {
            "physical_grid": ["0", "1"],
            "agent_value": [[[0, 0], [0, 0]], [["1/2", "1/2"], [1, 1]]],
            "designer_value": [[[0, 0], [0, 0]], [[0, 0], [0, 0]]],
            "transfer_bound": 10
        }
    }"#,
    )
    .unwrap()
}

/// Horizontal differentiation: three types whose ranking flips with the
/// state, independent of types.
pub(crate) fn horizontal_good() -> ProblemSpec {
    load_problem(
        r#"{
        "states": ["L", "R"],
        "prior": ["1/2", "1/2"],
        "types": ["t1", "t2", "t3"],
        "type_pmf": [["1/3", "1/3", "1/3"], ["1/3", "1/3", "1/3"]],
        "outside_option": 0,
        "quasilinear": {
            "physical_grid": ["0", "1"],
            "agent_value": [
                [[0, 0], [0, 0], [0, 0]],
                [[1, 2], [2, 2], [3, 1]]
            ],
            "designer_value": [
                [[0, 0], [0, 0], [0, 0]],
                [[0, 0], [0, 0], [0, 0]]
            ],
            "transfer_bound": 30
        }
    }"#,
    )
    .unwrap()
}

/// The nonsupermodular-designer screening family with a Myerson/calibrated
/// payoff gap: u = q*theta*omega with omega in {1, 3}, w = 2(1-2 theta)q,
/// uniform types.
pub(crate) fn screening_gap_example(n: usize) -> ScreeningProblem {
    let spec = ContinuousScreening {
        theta_low: 0.0,
        theta_high: 1.0,
        density: &|_| 1.0,
        states: vec!["wL".into(), "wH".into()],
        prior: vec![0.5, 0.5],
        q_grid: vec![0.0, 1.0],
        agent_value: &|q, t, w| q * t * if w == 0 { 1.0 } else { 3.0 },
        designer_value: &|q, t, _| 2.0 * (1.0 - 2.0 * t) * q,
    };
    discretize_screening(&spec, n).unwrap()
}

/// The demand-uncertainty sale in generic form with explicit
/// (trade, price) outcomes.
pub(crate) fn demand_sale_generic() -> ProblemSpec {
    // Allocations: keep (outside), trade at 0, trade at 1/2, trade at 1,
    // trade at 3/2.
    let prices = [f64::NAN, 0.0, 0.5, 1.0, 1.5];
    let values = [0.5, 1.0];
    let agent: Vec<Vec<Vec<f64>>> = (0..5)
        .map(|a| {
            (0..2)
                .map(|t| {
                    (0..2)
                        .map(|_| if a == 0 { 0.0 } else { values[t] - prices[a] })
                        .collect()
                })
                .collect()
        })
        .collect();
    let designer: Vec<Vec<Vec<f64>>> = (0..5)
        .map(|a| {
            (0..2)
                .map(|_| (0..2).map(|_| if a == 0 { 0.0 } else { prices[a] }).collect())
                .collect()
        })
        .collect();
    problem_from_parts(
        vec!["L".into(), "H".into()],
        vec![0.5, 0.5],
        vec!["1/2".into(), "1".into()],
        vec![vec![2.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 2.0 / 3.0]],
        vec![
            "keep".into(),
            "trade@0".into(),
            "trade@1/2".into(),
            "trade@1".into(),
            "trade@3/2".into(),
        ],
        0,
        agent,
        designer,
        None,
    )
    .unwrap()
}

pub(crate) fn deterministic(problem: &ProblemSpec, by_state: &[[usize; 2]]) -> StateMechanism {
    // by_state[w][t] = allocation index; single device cell.
    let na = problem.n_allocations();
    let table = (0..2)
        .map(|t| {
            (0..2)
                .map(|w| {
                    let mut lot = vec![0.0; na];
                    lot[by_state[w][t]] = 1.0;
                    vec![lot]
                })
                .collect()
        })
        .collect();
    StateMechanism {
        device: vec![("e0".into(), 1.0)],
        table,
    }
}

/// The surplus-extraction mechanism: free at L, price 3/2 at H.
pub(crate) fn surplus_extraction_mechanism(problem: &ProblemSpec) -> StateMechanism {
    deterministic(problem, &[[1, 1], [4, 4]])
}

/// The optimal calibrated mechanism: price 1/2 at L; menu at H.
pub(crate) fn optimal_calibrated_mechanism(problem: &ProblemSpec) -> StateMechanism {
    deterministic(problem, &[[2, 2], [0, 3]])
}


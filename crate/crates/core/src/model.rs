//! Problem specification, validation, belief algebra, and utility evaluation
//! shared by every other module.
//!
//! A [`ProblemSpec`] holds the finite primitives: states with a prior, types
//! with state-conditional pmfs, allocations with agent and designer payoff
//! tables, and an outside option. Quasilinear problems carry value tables
//! over a physical grid instead, with transfers handled as explicit scalars
//! bounded by `transfer_bound`.

use crate::error::{Error, Result};
use crate::{DERIVED_TOL, INPUT_SIMPLEX_TOL};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

/// A belief over the problem's states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Builds a belief, checking nonnegativity and normalization.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check_simplex(&weights, INPUT_SIMPLEX_TOL, "belief")?;
        Ok(Belief(weights))
    }

    /// Point mass on state `index`.
    pub fn degenerate(n: usize, index: usize) -> Self {
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        Belief(w)
    }

    /// Uniform interpolation on a binary state space: probability `p` on the
    /// second state.
    pub fn binary(p: f64) -> Result<Self> {
        Belief::new(vec![1.0 - p, p])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Max-norm distance to another belief.
    pub fn linf(&self, other: &Belief) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A distribution over posterior beliefs with positive weights.
#[derive(Debug, Clone, Serialize)]
pub struct BeliefSplit {
    pub atoms: Vec<(Belief, f64)>,
}

impl BeliefSplit {
    /// Builds a split, checking weight normalization and Bayes plausibility
    /// against `prior`.
    pub fn new(atoms: Vec<(Belief, f64)>, prior: &Belief) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Validation {
                field: "atoms".into(),
                message: "split has no atoms".into(),
            });
        }
        let wsum: f64 = atoms.iter().map(|(_, w)| w).sum();
        if (wsum - 1.0).abs() > INPUT_SIMPLEX_TOL * atoms.len() as f64 {
            return Err(Error::Validation {
                field: "atoms".into(),
                message: format!("split weights sum to {wsum}, not 1"),
            });
        }
        if atoms.iter().any(|(_, w)| *w <= 0.0) {
            return Err(Error::Validation {
                field: "atoms".into(),
                message: "split weights must be positive".into(),
            });
        }
        let split = BeliefSplit { atoms };
        let residual = split.barycenter_residual(prior);
        if residual > DERIVED_TOL {
            return Err(Error::NotBayesPlausible { residual });
        }
        Ok(split)
    }

    /// Max-norm distance between the split's barycenter and `prior`.
    pub fn barycenter_residual(&self, prior: &Belief) -> f64 {
        let n = prior.len();
        let mut bary = vec![0.0; n];
        for (mu, w) in &self.atoms {
            for (b, m) in bary.iter_mut().zip(mu.weights()) {
                *b += w * m;
            }
        }
        bary.iter()
            .zip(prior.weights())
            .map(|(b, p)| (b - p).abs())
            .fold(0.0, f64::max)
    }
}

/// A Blackwell experiment: per state, a distribution over the atoms of an
/// associated [`BeliefSplit`]. Row `rows[w][m]` is the probability the
/// experiment discloses atom `m` in state `w`.
#[derive(Debug, Clone, Serialize)]
pub struct BlackwellExperiment {
    pub rows: Vec<Vec<f64>>,
}

impl BlackwellExperiment {
    /// Consistency residual against a split and prior: max over (m, w) of
    /// |rows[w][m]·prior(w) − weight_m·mu_m(w)| plus row-sum defects.
    pub fn consistency_residual(&self, split: &BeliefSplit, prior: &Belief) -> f64 {
        let mut worst: f64 = 0.0;
        for (w, row) in self.rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            worst = worst.max((sum - 1.0).abs());
            for (m, (mu, tau)) in split.atoms.iter().enumerate() {
                worst = worst.max((row[m] * prior.weights()[w] - tau * mu.weights()[w]).abs());
            }
        }
        worst
    }
}

/// Marker carried by quasilinear problems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Quasilinear {
    /// Transfers are constrained to `[-transfer_bound, transfer_bound]`.
    pub transfer_bound: f64,
}

/// A finite mechanism-design environment.
///
/// In generic mode, `allocations` are self-contained outcome labels and the
/// utility tables give complete payoffs. In quasilinear mode (`quasilinear`
/// is set), `allocations` are the physical grid labels, the utility tables
/// hold payoffs net of transfers, and mechanisms carry one expected-transfer
/// scalar per type.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemSpec {
    pub states: Vec<String>,
    pub prior: Belief,
    pub types: Vec<String>,
    /// `type_pmf[w][t]` is the probability of type `t` in state `w`.
    pub type_pmf: Vec<Vec<f64>>,
    pub allocations: Vec<String>,
    pub outside_option: usize,
    /// `agent_utility[a][t][w]`.
    pub agent_utility: Vec<Vec<Vec<f64>>>,
    /// `designer_utility[a][t][w]`.
    pub designer_utility: Vec<Vec<Vec<f64>>>,
    pub quasilinear: Option<Quasilinear>,
}

impl ProblemSpec {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn n_allocations(&self) -> usize {
        self.allocations.len()
    }

    pub fn is_quasilinear(&self) -> bool {
        self.quasilinear.is_some()
    }

    /// Agent payoff `u(a, t, w)` (net of transfers in quasilinear mode).
    pub fn agent_u(&self, a: usize, t: usize, w: usize) -> f64 {
        self.agent_utility[a][t][w]
    }

    /// Designer payoff `w(a, t, w)` (net of transfers in quasilinear mode).
    pub fn designer_w(&self, a: usize, t: usize, w: usize) -> f64 {
        self.designer_utility[a][t][w]
    }

    /// Agent payoff of allocation `a` for type `t` expected under `belief`.
    pub fn agent_u_at(&self, a: usize, t: usize, belief: &Belief) -> f64 {
        belief
            .weights()
            .iter()
            .enumerate()
            .map(|(w, p)| p * self.agent_utility[a][t][w])
            .sum()
    }

    /// Marginal type pmf under `belief`: sum_w belief(w) f(t|w).
    pub fn type_marginal(&self, belief: &Belief) -> Vec<f64> {
        let mut f = vec![0.0; self.n_types()];
        for (w, p) in belief.weights().iter().enumerate() {
            for (t, ft) in self.type_pmf[w].iter().enumerate() {
                f[t] += p * ft;
            }
        }
        f
    }

    /// Whether the type distribution is the same in every state.
    pub fn types_independent(&self) -> bool {
        self.type_pmf
            .iter()
            .all(|row| row.iter().zip(&self.type_pmf[0]).all(|(a, b)| (a - b).abs() <= 1e-12))
    }

    /// Whether agent utilities depend on the state at all.
    pub fn private_values(&self) -> bool {
        self.agent_utility.iter().flatten().all(|row| {
            row.iter().all(|v| (v - row[0]).abs() <= 1e-12)
        })
    }

    /// The prior updated on the agent observing her own type: mu0(w|t).
    pub fn prior_given_type(&self, t: usize) -> Result<Belief> {
        let lik: Vec<f64> = (0..self.n_states()).map(|w| self.type_pmf[w][t]).collect();
        posterior_from_likelihood(&self.prior, &lik)
    }

    fn validate(&self) -> Result<()> {
        let ns = self.n_states();
        let nt = self.n_types();
        let na = self.n_allocations();
        check_labels(&self.states, "states")?;
        check_labels(&self.types, "types")?;
        check_labels(&self.allocations, "allocations")?;
        if self.prior.len() != ns {
            return Err(Error::Validation {
                field: "prior".into(),
                message: format!("expected {ns} entries, got {}", self.prior.len()),
            });
        }
        check_simplex(self.prior.weights(), INPUT_SIMPLEX_TOL, "prior")?;
        // Full-support prior: zero-probability states would make the Blackwell
        // construction divide by zero.
        if self.prior.weights().iter().any(|p| *p <= 0.0) {
            return Err(Error::Validation {
                field: "prior".into(),
                message: "prior must have full support".into(),
            });
        }
        if self.type_pmf.len() != ns {
            return Err(Error::Validation {
                field: "type_pmf".into(),
                message: format!("expected one row per state ({ns})", ),
            });
        }
        for (w, row) in self.type_pmf.iter().enumerate() {
            if row.len() != nt {
                return Err(Error::Validation {
                    field: format!("type_pmf[{w}]"),
                    message: format!("expected {nt} entries, got {}", row.len()),
                });
            }
            check_simplex(row, INPUT_SIMPLEX_TOL, &format!("type_pmf[{w}]"))?;
        }
        if self.outside_option >= na {
            return Err(Error::Validation {
                field: "outside_option".into(),
                message: format!("index {} out of range ({na} allocations)", self.outside_option),
            });
        }
        for (name, table) in [
            ("agent_utility", &self.agent_utility),
            ("designer_utility", &self.designer_utility),
        ] {
            if table.len() != na {
                return Err(Error::Validation {
                    field: name.into(),
                    message: format!("expected {na} allocation rows, got {}", table.len()),
                });
            }
            for (a, by_type) in table.iter().enumerate() {
                if by_type.len() != nt {
                    return Err(Error::Validation {
                        field: format!("{name}[{a}]"),
                        message: format!("expected {nt} type rows, got {}", by_type.len()),
                    });
                }
                for (t, by_state) in by_type.iter().enumerate() {
                    if by_state.len() != ns {
                        return Err(Error::Validation {
                            field: format!("{name}[{a}][{t}]"),
                            message: format!("expected {ns} entries, got {}", by_state.len()),
                        });
                    }
                    if let Some(w) = by_state.iter().position(|v| !v.is_finite()) {
                        return Err(Error::Validation {
                            field: format!("{name}[{a}][{t}][{w}]"),
                            message: "utilities must be finite".into(),
                        });
                    }
                }
            }
        }
        if let Some(q) = &self.quasilinear {
            if q.transfer_bound <= 0.0 || !q.transfer_bound.is_finite() {
                return Err(Error::Validation {
                    field: "quasilinear.transfer_bound".into(),
                    message: "transfer bound must be a positive real".into(),
                });
            }
        }
        Ok(())
    }
}

fn check_simplex(v: &[f64], tol: f64, field: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Validation {
            field: field.into(),
            message: "empty probability vector".into(),
        });
    }
    if let Some(i) = v.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Validation {
            field: format!("{field}[{i}]"),
            message: format!("entry {} is not a probability", v[i]),
        });
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > tol * v.len() as f64 {
        return Err(Error::Validation {
            field: field.into(),
            message: format!("entries sum to {sum}, not 1"),
        });
    }
    Ok(())
}

fn check_labels(labels: &[String], field: &str) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Validation {
            field: field.into(),
            message: "label list is empty".into(),
        });
    }
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::Validation {
                field: format!("{field}[{i}]"),
                message: format!("duplicate label `{l}`"),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Document schema
// ---------------------------------------------------------------------------

/// A number in an input document: a JSON number or an exact fraction written
/// as a string, e.g. `"2/3"`.
#[derive(Debug, Clone, Copy)]
pub struct Num(pub f64);

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(x) => Ok(Num(x)),
            Raw::Text(s) => {
                let parse = |part: &str| -> std::result::Result<f64, D::Error> {
                    part.trim()
                        .parse::<f64>()
                        .map_err(|_| D::Error::custom(format!("cannot parse number `{s}`")))
                };
                match s.split_once('/') {
                    Some((num, den)) => {
                        let den = parse(den)?;
                        if den == 0.0 {
                            return Err(D::Error::custom(format!("zero denominator in `{s}`")));
                        }
                        Ok(Num(parse(num)? / den))
                    }
                    None => Ok(Num(parse(&s)?)),
                }
            }
        }
    }
}

fn nums(v: Vec<Num>) -> Vec<f64> {
    v.into_iter().map(|n| n.0).collect()
}

fn nums3(v: Vec<Vec<Vec<Num>>>) -> Vec<Vec<Vec<f64>>> {
    v.into_iter()
        .map(|b| b.into_iter().map(nums).collect())
        .collect()
}

#[derive(Deserialize)]
struct QuasilinearDoc {
    physical_grid: Vec<String>,
    agent_value: Vec<Vec<Vec<Num>>>,
    designer_value: Vec<Vec<Vec<Num>>>,
    transfer_bound: Option<Num>,
}

#[derive(Deserialize)]
struct ProblemDoc {
    states: Vec<String>,
    prior: Vec<Num>,
    types: Vec<String>,
    type_pmf: Vec<Vec<Num>>,
    outside_option: usize,
    allocations: Option<Vec<String>>,
    agent_utility: Option<Vec<Vec<Vec<Num>>>>,
    designer_utility: Option<Vec<Vec<Vec<Num>>>>,
    quasilinear: Option<QuasilinearDoc>,
}

/// Parses and validates a problem-spec document (JSON object model).
///
/// Utilities are 3-D nested arrays indexed `[allocation][type][state]`.
/// Numeric entries may be JSON numbers or `"p/q"` fraction strings.
pub fn load_problem(source: &str) -> Result<ProblemSpec> {
    let doc: ProblemDoc = serde_json::from_str(source).map_err(|e| Error::Schema {
        field: "document".into(),
        message: e.to_string(),
    })?;
    let missing = |field: &str| Error::Schema {
        field: field.into(),
        message: "field required in this mode".into(),
    };
    let spec = match doc.quasilinear {
        Some(q) => {
            let max_abs = q
                .agent_value
                .iter()
                .flatten()
                .flatten()
                .map(|n| n.0.abs())
                .fold(0.0, f64::max);
            let transfer_bound = q.transfer_bound.map(|n| n.0).unwrap_or(10.0 * max_abs.max(1.0));
            ProblemSpec {
                states: doc.states,
                prior: Belief(nums(doc.prior)),
                types: doc.types,
                type_pmf: doc.type_pmf.into_iter().map(nums).collect(),
                allocations: q.physical_grid,
                outside_option: doc.outside_option,
                agent_utility: nums3(q.agent_value),
                designer_utility: nums3(q.designer_value),
                quasilinear: Some(Quasilinear { transfer_bound }),
            }
        }
        None => ProblemSpec {
            states: doc.states,
            prior: Belief(nums(doc.prior)),
            types: doc.types,
            type_pmf: doc.type_pmf.into_iter().map(nums).collect(),
            allocations: doc.allocations.ok_or_else(|| missing("allocations"))?,
            outside_option: doc.outside_option,
            agent_utility: nums3(doc.agent_utility.ok_or_else(|| missing("agent_utility"))?),
            designer_utility: nums3(
                doc.designer_utility.ok_or_else(|| missing("designer_utility"))?,
            ),
            quasilinear: None,
        },
    };
    spec.validate()?;
    Ok(spec)
}

/// Builds a [`ProblemSpec`] from parts, running the same validation as
/// [`load_problem`].
#[allow(clippy::too_many_arguments)]
pub fn problem_from_parts(
    states: Vec<String>,
    prior: Vec<f64>,
    types: Vec<String>,
    type_pmf: Vec<Vec<f64>>,
    allocations: Vec<String>,
    outside_option: usize,
    agent_utility: Vec<Vec<Vec<f64>>>,
    designer_utility: Vec<Vec<Vec<f64>>>,
    quasilinear: Option<Quasilinear>,
) -> Result<ProblemSpec> {
    let spec = ProblemSpec {
        states,
        prior: Belief(prior),
        types,
        type_pmf,
        allocations,
        outside_option,
        agent_utility,
        designer_utility,
        quasilinear,
    };
    spec.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Belief algebra
// ---------------------------------------------------------------------------

/// Bayes' rule: posterior(w) proportional to prior(w) * likelihood(w).
pub fn posterior_from_likelihood(prior: &Belief, likelihood: &[f64]) -> Result<Belief> {
    if likelihood.len() != prior.len() {
        return Err(Error::DimensionMismatch(format!(
            "likelihood has {} entries for {} states",
            likelihood.len(),
            prior.len()
        )));
    }
    let mut post: Vec<f64> = prior
        .weights()
        .iter()
        .zip(likelihood)
        .map(|(p, l)| p * l)
        .collect();
    let z: f64 = post.iter().sum();
    if z <= 0.0 {
        return Err(Error::ZeroEvidence);
    }
    for x in &mut post {
        *x /= z;
    }
    Ok(Belief(post))
}

/// The belief of an agent of type `t` when the designer discloses `disclosed`.
///
/// The agent first conditions the prior on her own type, then reweights by
/// the disclosed belief's likelihood ratio against the prior. When types are
/// independent of the state this returns `disclosed` unchanged.
pub fn type_conditioned_belief(
    problem: &ProblemSpec,
    disclosed: &Belief,
    t: usize,
) -> Result<Belief> {
    let own = problem.prior_given_type(t)?;
    let mut post: Vec<f64> = (0..problem.n_states())
        .map(|w| own.weights()[w] * disclosed.weights()[w] / problem.prior.weights()[w])
        .collect();
    let z: f64 = post.iter().sum();
    if z <= 0.0 {
        return Err(Error::ZeroEvidence);
    }
    for x in &mut post {
        *x /= z;
    }
    Ok(Belief(post))
}

/// Recovers the Blackwell experiment generating a Bayes-plausible split:
/// `rows[w][m] = weight_m * mu_m(w) / prior(w)`.
pub fn blackwell_from_split(problem: &ProblemSpec, split: &BeliefSplit) -> Result<BlackwellExperiment> {
    let prior = &problem.prior;
    let residual = split.barycenter_residual(prior);
    if residual > DERIVED_TOL {
        return Err(Error::NotBayesPlausible { residual });
    }
    let rows: Vec<Vec<f64>> = (0..prior.len())
        .map(|w| {
            let mut row: Vec<f64> = split
                .atoms
                .iter()
                .map(|(mu, tau)| tau * mu.weights()[w] / prior.weights()[w])
                .collect();
            // Absorb rounding in the row sum; the residual is at most the
            // barycenter defect divided by the prior weight.
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() <= 1e-12 * row.len() as f64 {
                for x in &mut row {
                    *x /= sum;
                }
            }
            row
        })
        .collect();
    Ok(BlackwellExperiment { rows })
}

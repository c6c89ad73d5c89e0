//! Command implementations.

use crate::output::{fmt12, OutputDir};
use calmech::calibrate::{
    audit_ic_ir, calibrated_structure, load_state_mechanism, outcome_distribution,
    two_stage_to_calibrated, AuditReport, CalibratedStructure,
    StateMechanism, ViolationKind,
};
use calmech::disclosure::{
    load_two_stage, optimal_two_stage_from_curve, two_stage_doc, upper_envelope_1d,
    TwoStageMechanism,
};
use calmech::dynamic_sim::{
    most_mixing_undetectable, simulate_dynamic, DynamicConfig, DynamicPolicy,
};
use calmech::model::{load_problem, Belief, ProblemSpec};
use calmech::repeated_sim::{
    average_payoff, martingale_diagnostic, occupation, simulate as simulate_repeated, Message,
    Policy, SimConfig,
};
use calmech::stage_design::{default_grid, value_curve};
use calmech::Error as CoreError;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

pub enum CliError {
    /// Unreadable or invalid input: exit 2.
    Input(String),
    /// Solver or I/O failure while producing outputs: exit 3.
    Failure(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Failure(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(2),
            CliError::Failure(_) => ExitCode::from(3),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        match e {
            CoreError::NumericalFailure(_) | CoreError::InfeasibleProblem(_) => {
                CliError::Failure(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Failure(format!("i/o error: {e}"))
    }
}

type CliResult = Result<ExitCode, CliError>;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_problem_file(path: &Path) -> Result<ProblemSpec, CliError> {
    load_problem(&read(path)?).map_err(CliError::from)
}

pub fn validate(problem: &Path) -> CliResult {
    let p = load_problem_file(problem)?;
    let mode = if p.is_quasilinear() { "quasilinear" } else { "generic" };
    println!("problem: {}", problem.display());
    println!("mode: {mode}");
    println!("states ({}): {}", p.n_states(), p.states.join(", "));
    println!(
        "prior: [{}]",
        p.prior
            .weights()
            .iter()
            .map(|x| format!("{x:.6}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("types ({}): {}", p.n_types(), p.types.join(", "));
    println!(
        "allocations ({}): {} (outside: {})",
        p.n_allocations(),
        p.allocations.join(", "),
        p.allocations[p.outside_option]
    );
    for (w, label) in p.states.iter().enumerate() {
        println!(
            "type pmf | {label}: [{}]",
            p.type_pmf[w]
                .iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    println!("validation: ok");
    Ok(ExitCode::SUCCESS)
}

/// Belief grid for the solve command: equally spaced for binary states, a
/// coarse vertex/midpoint/prior grid otherwise (certified lower bound).
fn solve_grid(p: &ProblemSpec, n: usize) -> Result<Vec<Belief>, CliError> {
    if p.n_states() == 2 {
        return default_grid(p, n).map_err(CliError::from);
    }
    let ns = p.n_states();
    let mut grid = Vec::new();
    for w in 0..ns {
        grid.push(Belief::degenerate(ns, w));
    }
    grid.push(p.prior.clone());
    for i in 0..ns {
        for j in (i + 1)..ns {
            let mut v = vec![0.0; ns];
            v[i] = 0.5;
            v[j] = 0.5;
            grid.push(Belief::new(v).map_err(CliError::from)?);
        }
        let mut v = p.prior.weights().to_vec();
        for (k, x) in v.iter_mut().enumerate() {
            *x = 0.5 * *x + if k == i { 0.5 } else { 0.0 };
        }
        grid.push(Belief::new(v).map_err(CliError::from)?);
    }
    Ok(grid)
}

fn describe_mechanism(p: &ProblemSpec, mech: &calmech::stage_design::DirectMechanism) -> String {
    let mut s = String::new();
    for (t, label) in p.types.iter().enumerate() {
        let lot: Vec<String> = mech.lotteries[t]
            .iter()
            .enumerate()
            .filter(|(_, pr)| **pr > 1e-9)
            .map(|(a, pr)| format!("{}:{:.6}", p.allocations[a], pr))
            .collect();
        write!(s, "    type {label}: {}", lot.join(" ")).unwrap();
        if !mech.transfers.is_empty() {
            write!(s, " transfer {}", fmt12(mech.transfers[t])).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn solve(problem: &Path, grid_n: usize, out: &Path) -> CliResult {
    let p = load_problem_file(problem)?;
    let mut dir = OutputDir::create(out)?;
    let result = (|| -> Result<(), CliError> {
        let grid = solve_grid(&p, grid_n)?;
        let curve = value_curve(&p, &grid)?;
        let ts = optimal_two_stage_from_curve(&p, &curve)?;

        let mut csv = String::new();
        let mu_cols: Vec<String> = p.states.iter().map(|s| format!("mu_{s}")).collect();
        writeln!(csv, "{},W,mechanism_id", mu_cols.join(",")).unwrap();
        for (i, (mu, w)) in curve.grid.iter().zip(&curve.values).enumerate() {
            let coords: Vec<String> = mu.weights().iter().map(|x| fmt12(*x)).collect();
            writeln!(csv, "{},{},{}", coords.join(","), fmt12(*w), i).unwrap();
        }
        dir.write("value_curve.csv", &csv)?;

        if p.n_states() == 2 {
            let env = upper_envelope_1d(&curve)?;
            let mut csv = String::from("mu,cav_w\n");
            for (x, y) in &env.breakpoints {
                writeln!(csv, "{},{}", fmt12(*x), fmt12(*y)).unwrap();
            }
            dir.write("envelope.csv", &csv)?;
        }

        let split = serde_json::json!({
            "value": ts.value,
            "atoms": ts.split.atoms.iter().map(|(mu, w)| serde_json::json!({
                "belief": mu.weights(),
                "weight": w,
            })).collect::<Vec<_>>(),
        });
        dir.write("split.json", &serde_json::to_string_pretty(&split).unwrap())?;
        let mut csv = String::new();
        writeln!(csv, "{},weight,W", mu_cols.join(",")).unwrap();
        for (mu, w) in &ts.split.atoms {
            let coords: Vec<String> = mu.weights().iter().map(|x| fmt12(*x)).collect();
            let idx = curve.grid.iter().position(|g| g.linf(mu) < 1e-12).unwrap();
            writeln!(csv, "{},{},{}", coords.join(","), fmt12(*w), fmt12(curve.values[idx]))
                .unwrap();
        }
        dir.write("split.csv", &csv)?;
        dir.write(
            "mechanisms.json",
            &serde_json::to_string_pretty(&two_stage_doc(&ts)).unwrap(),
        )?;

        let mut summary = String::new();
        writeln!(summary, "two-stage solution for {}", problem.display()).unwrap();
        writeln!(summary, "grid atoms: {}", curve.grid.len()).unwrap();
        writeln!(summary, "value at prior: {}", fmt12(ts.value)).unwrap();
        writeln!(summary, "split atoms: {}", ts.split.atoms.len()).unwrap();
        for (m, (mu, w)) in ts.split.atoms.iter().enumerate() {
            let coords: Vec<String> = mu.weights().iter().map(|x| fmt12(*x)).collect();
            writeln!(
                summary,
                "  atom {m}: belief [{}] weight {}",
                coords.join(", "),
                fmt12(*w)
            )
            .unwrap();
            summary.push_str(&describe_mechanism(&p, &ts.mechanisms[m]));
        }
        dir.write("summary.txt", &summary)?;
        print!("{summary}");
        dir.finish_manifest(
            "solve",
            &[problem],
            serde_json::json!({ "grid": grid_n, "out": out.display().to_string() }),
            None,
        )?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            dir.discard();
            Err(e)
        }
    }
}

fn render_audit(p: &ProblemSpec, structure: &CalibratedStructure, report: &AuditReport) -> String {
    let mut s = String::new();
    writeln!(s, "calibrated information structure: {} signal(s)", structure.signals.len()).unwrap();
    for (i, sig) in structure.signals.iter().enumerate() {
        let post: Vec<String> = sig.posterior.weights().iter().map(|x| format!("{x:.6}")).collect();
        let emit: Vec<String> = sig.emission.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(s, "signal {i}: posterior [{}] emission [{}]", post.join(", "), emit.join(", "))
            .unwrap();
        for (t, label) in p.types.iter().enumerate() {
            let lot: Vec<String> = sig.rule.lotteries[t]
                .iter()
                .enumerate()
                .filter(|(_, pr)| **pr > 1e-9)
                .map(|(a, pr)| format!("{}:{:.6}", p.allocations[a], pr))
                .collect();
            writeln!(s, "  report {label} -> {}", lot.join(" ")).unwrap();
        }
    }
    if report.is_clean() {
        writeln!(s, "audit: clean (no IC or IR violations)").unwrap();
    } else {
        writeln!(s, "audit: {} violation(s)", report.violations.len()).unwrap();
        for v in &report.violations {
            match v.kind {
                ViolationKind::Ir => writeln!(
                    s,
                    "  IR: type {} at signal {} quits, gap {}",
                    p.types[v.type_index], v.signal_index, fmt12(v.gap)
                )
                .unwrap(),
                ViolationKind::Ic => writeln!(
                    s,
                    "  IC: type {} at signal {} deviates to report {}, gap {}",
                    p.types[v.type_index],
                    v.signal_index,
                    p.types[v.target.unwrap()],
                    fmt12(v.gap)
                )
                .unwrap(),
            }
        }
    }
    s
}

pub fn audit(problem: &Path, mechanism: &Path, out: &Path) -> CliResult {
    let p = load_problem_file(problem)?;
    if p.is_quasilinear() {
        return Err(CliError::Input(
            "audit requires a generic-mode problem (bake transfers into allocation labels)".into(),
        ));
    }
    let mech = load_state_mechanism(&p, &read(mechanism)?)?;
    let mut dir = OutputDir::create(out)?;
    let result = (|| -> Result<bool, CliError> {
        let structure = calibrated_structure(&p, &mech)?;
        let report = audit_ic_ir(&p, &mech, &structure);
        dir.write(
            "structure.json",
            &serde_json::to_string_pretty(&structure).unwrap(),
        )?;
        let text = render_audit(&p, &structure, &report);
        dir.write("audit.txt", &text)?;
        print!("{text}");
        dir.finish_manifest(
            "audit",
            &[problem, mechanism],
            serde_json::json!({ "out": out.display().to_string() }),
            None,
        )?;
        Ok(report.is_clean())
    })();
    match result {
        Ok(true) => Ok(ExitCode::SUCCESS),
        Ok(false) => Ok(ExitCode::from(1)),
        Err(e) => {
            dir.discard();
            Err(e)
        }
    }
}

fn parse_policy(policy: &str) -> Result<Policy, CliError> {
    match policy {
        "truthful" => Ok(Policy::Truthful),
        "myopic" => Ok(Policy::Myopic),
        other => match other.strip_prefix("learning:") {
            Some(n) => n
                .parse::<usize>()
                .map(|explore_rounds| Policy::Learning { explore_rounds })
                .map_err(|_| CliError::Input(format!("bad learning rounds in `{other}`"))),
            None => Err(CliError::Input(format!(
                "unknown policy `{other}` (expected truthful, myopic, or learning:N)"
            ))),
        },
    }
}

enum MechanismFile {
    State(StateMechanism),
    TwoStage(TwoStageMechanism),
}

fn load_mechanism_file(p: &ProblemSpec, path: &Path) -> Result<MechanismFile, CliError> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))?;
    if value.get("atoms").is_some() {
        Ok(MechanismFile::TwoStage(load_two_stage(p, &text)?))
    } else {
        Ok(MechanismFile::State(load_state_mechanism(p, &text)?))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    problem: &Path,
    mechanism: &Path,
    mode: &str,
    horizon: usize,
    seed: u64,
    policy: &str,
    reference: Option<&Path>,
    out: &Path,
) -> CliResult {
    if horizon == 0 {
        return Err(CliError::Input("horizon must be at least 1".into()));
    }
    let p = load_problem_file(problem)?;
    let mech_file = load_mechanism_file(&p, mechanism)?;
    let mut dir = OutputDir::create(out)?;
    let result = (|| -> Result<(), CliError> {
        match mode {
            "repeated" => {
                let (sim_problem, sim_mech, self_reference) = match &mech_file {
                    MechanismFile::State(m) => (p.clone(), m.clone(), None),
                    MechanismFile::TwoStage(ts) => {
                        let cal = two_stage_to_calibrated(&p, ts)?;
                        (cal.problem, cal.mechanism, Some(ts.clone()))
                    }
                };
                let cfg = SimConfig {
                    horizon,
                    seed,
                    policy: parse_policy(policy)?,
                    record_beliefs: true,
                };
                let trace = simulate_repeated(&sim_problem, &sim_mech, &cfg)?;
                let occ = occupation(&sim_problem, &trace)?;

                let mut log = String::new();
                for (i, rec) in trace.periods.iter().enumerate() {
                    let m = match rec.message {
                        Message::Quit => "quit".to_string(),
                        Message::Report(r) => sim_problem.types[r].clone(),
                    };
                    write!(
                        log,
                        "{} {} {} {}",
                        i + 1,
                        sim_problem.types[rec.type_index],
                        m,
                        sim_problem.allocations[rec.alloc]
                    )
                    .unwrap();
                    if let Some(b) = &rec.belief {
                        for x in b {
                            write!(log, " {}", fmt12(*x)).unwrap();
                        }
                    }
                    log.push('\n');
                }
                dir.write("trace.log", &log)?;

                let mut csv = String::from("allocation,type,state,probability\n");
                for (a, al) in occ.alloc_labels.iter().enumerate() {
                    for (t, tl) in occ.type_labels.iter().enumerate() {
                        for (w, wl) in occ.state_labels.iter().enumerate() {
                            writeln!(csv, "{al},{tl},{wl},{}", fmt12(occ.get(a, t, w))).unwrap();
                        }
                    }
                }
                dir.write("occupation.csv", &csv)?;

                let mut diag = String::new();
                writeln!(diag, "mode: repeated").unwrap();
                writeln!(diag, "horizon: {horizon} seed: {seed} policy: {policy}").unwrap();
                writeln!(
                    diag,
                    "hidden state: {} device cell: {}",
                    sim_problem.states[trace.hidden_state], trace.hidden_device
                )
                .unwrap();
                writeln!(
                    diag,
                    "average agent payoff: {}",
                    fmt12(average_payoff(&sim_problem, &trace))
                )
                .unwrap();
                let reference_ts = match reference {
                    Some(path) => Some(load_two_stage(&p, &read(path)?)?),
                    None => self_reference,
                };
                if let Some(ts) = reference_ts {
                    let analytic = outcome_distribution(&p, &ts)?;
                    // Conditional on the realized state: compare against the
                    // reference conditioned the same way.
                    match occ.tv_distance(&analytic) {
                        Ok(_) => {
                            let cond =
                                conditional_reference(&analytic, trace.hidden_state)?;
                            let tv = occ.tv_distance(&cond)?;
                            writeln!(
                                diag,
                                "tv distance to analytic outcome (given realized state): {}",
                                fmt12(tv)
                            )
                            .unwrap();
                        }
                        Err(_) => {
                            writeln!(diag, "reference outcome axes do not match; tv skipped")
                                .unwrap();
                        }
                    }
                }
                let refs = [&trace];
                match martingale_diagnostic(&refs) {
                    Ok(report) => {
                        writeln!(
                            diag,
                            "martingale: max deviation {} se over {} bucket(s), {} skipped",
                            fmt12(report.max_deviation),
                            report.buckets.len(),
                            report.skipped_buckets
                        )
                        .unwrap();
                    }
                    Err(e) => writeln!(diag, "martingale: unavailable ({e})").unwrap(),
                }
                dir.write("diagnostics.txt", &diag)?;
                print!("{diag}");
            }
            "dynamic" => {
                let MechanismFile::TwoStage(ts) = &mech_file else {
                    return Err(CliError::Input(
                        "dynamic mode needs a two-stage mechanism file".into(),
                    ));
                };
                let dyn_policy = match policy {
                    "truthful" => DynamicPolicy::Truthful,
                    "deviator" => {
                        let sigmas = ts
                            .split
                            .atoms
                            .iter()
                            .map(|(mu, _)| most_mixing_undetectable(&p, mu))
                            .collect::<Result<Vec<_>, _>>()?;
                        DynamicPolicy::Deviator(sigmas)
                    }
                    other => {
                        return Err(CliError::Input(format!(
                            "unknown dynamic policy `{other}` (expected truthful or deviator)"
                        )))
                    }
                };
                let cfg = DynamicConfig {
                    horizon,
                    seed,
                    policy: dyn_policy,
                };
                let res = simulate_dynamic(&p, ts, &cfg)?;

                let mut log = String::new();
                for (i, rec) in res.periods.iter().enumerate() {
                    writeln!(
                        log,
                        "{} {} {} {} {} {:?}",
                        i + 1,
                        p.types[rec.type_index],
                        p.types[rec.agent_report],
                        rec.used_report
                            .map(|r| p.types[r].clone())
                            .unwrap_or_else(|| "-".into()),
                        res.occupation.alloc_labels[rec.alloc],
                        rec.phase
                    )
                    .unwrap();
                }
                dir.write("trace.log", &log)?;

                let occ = &res.occupation;
                let mut csv = String::from("allocation,type,state,probability\n");
                for (a, al) in occ.alloc_labels.iter().enumerate() {
                    for (t, tl) in occ.type_labels.iter().enumerate() {
                        for (w, wl) in occ.state_labels.iter().enumerate() {
                            writeln!(csv, "{al},{tl},{wl},{}", fmt12(occ.get(a, t, w))).unwrap();
                        }
                    }
                }
                dir.write("occupation.csv", &csv)?;

                let mut csv = String::from("block,comm_len,adj_len");
                for l in &p.types {
                    write!(csv, ",freq_comm_{l}").unwrap();
                }
                for l in &p.types {
                    write!(csv, ",freq_block_{l}").unwrap();
                }
                csv.push('\n');
                for b in &res.blocks {
                    write!(csv, "{},{},{}", b.index, b.comm_len, b.adj_len).unwrap();
                    for x in &b.freq_comm {
                        write!(csv, ",{}", fmt12(*x)).unwrap();
                    }
                    for x in &b.freq_block {
                        write!(csv, ",{}", fmt12(*x)).unwrap();
                    }
                    csv.push('\n');
                }
                dir.write("blocks.csv", &csv)?;

                let mut diag = String::new();
                writeln!(diag, "mode: dynamic").unwrap();
                writeln!(diag, "horizon: {horizon} seed: {seed} policy: {policy}").unwrap();
                writeln!(
                    diag,
                    "hidden state: {} atom: {} prefix: {} period(s)",
                    p.states[res.hidden_state], res.atom, res.prefix_len
                )
                .unwrap();
                if res.truncated {
                    writeln!(diag, "warning: horizon ended inside the disclosure prefix").unwrap();
                }
                for w in &res.warnings {
                    writeln!(diag, "warning: {w}").unwrap();
                }
                let target = &p.type_pmf[res.hidden_state];
                let dev = res
                    .report_frequency
                    .iter()
                    .zip(target)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                writeln!(
                    diag,
                    "report-frequency deviation from type pmf (realized state): {}",
                    fmt12(dev)
                )
                .unwrap();
                let analytic = outcome_distribution(&p, ts)?;
                let cond = conditional_reference(&analytic, res.hidden_state)?;
                let tv = res.occupation.tv_distance(&cond)?;
                writeln!(
                    diag,
                    "tv distance to analytic outcome (given realized state): {}",
                    fmt12(tv)
                )
                .unwrap();
                dir.write("diagnostics.txt", &diag)?;
                print!("{diag}");
            }
            other => {
                return Err(CliError::Input(format!(
                    "unknown mode `{other}` (expected repeated or dynamic)"
                )))
            }
        }
        dir.finish_manifest(
            "simulate",
            &[problem, mechanism],
            serde_json::json!({
                "mode": mode,
                "horizon": horizon,
                "policy": policy,
                "out": out.display().to_string(),
            }),
            Some(seed),
        )?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            dir.discard();
            Err(e)
        }
    }
}

/// Conditions an analytic outcome distribution on one realized state, for
/// comparison against a single-trace empirical occupation.
fn conditional_reference(
    analytic: &calmech::repeated_sim::OccupationMeasure,
    state: usize,
) -> Result<calmech::repeated_sim::OccupationMeasure, CliError> {
    let na = analytic.alloc_labels.len();
    let nt = analytic.type_labels.len();
    let ns = analytic.state_labels.len();
    let mut pmf = vec![0.0; na * nt * ns];
    let mut mass = 0.0;
    for a in 0..na {
        for t in 0..nt {
            mass += analytic.get(a, t, state);
        }
    }
    if mass <= 0.0 {
        return Err(CliError::Failure("reference has no mass on the realized state".into()));
    }
    for a in 0..na {
        for t in 0..nt {
            pmf[(a * nt + t) * ns + state] = analytic.get(a, t, state) / mass;
        }
    }
    calmech::repeated_sim::OccupationMeasure::new(
        analytic.alloc_labels.clone(),
        analytic.type_labels.clone(),
        analytic.state_labels.clone(),
        pmf,
    )
    .map_err(CliError::from)
}

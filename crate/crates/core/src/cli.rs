//! Command-line front end.
//!
//! Every run prints a JSON report (text for `demo`) on stdout and appends one
//! JSON line to the run log: input hashes, seed, key outputs and resolved
//! fairness coefficients.

use crate::audit::{audit, audit_exact, AuditKind, AuditSpec};
use crate::error::{Error, Result};
use crate::model::{Dataset, HypothesisClass, Predictor, Transformation, DEFAULT_GRID_STEP};
use crate::optimizer::{default_action_grid, SolveReport};
use crate::rank::{correct_deterministic, correct_randomized, count_inversions};
use crate::scalar::{Exact, Scalar};
use crate::simulate::{build_exact, estimate, ProbTable};
use crate::tasks::{eval_on_table, eval_task_exact, Actions, ConstraintSpec, Form, RateMode, Rates, Task, TaskSpec};
use crate::trainer::{monotonize, train, TrainConfig};
use crate::verify::{fixture, optimize_on_table, verify_omni, FamilyKind, Fixture, OmniReport, VerifyConfig};
use clap::{Args, CommandFactory, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Directory of the default run log.
pub const LOG_DIR_ENV: &str = "OMNIPRED_LOG_DIR";
pub const LOG_FILE: &str = "omnipred-runs.jsonl";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "omnipred", version, about = "Group multicalibration and constrained omniprediction")]
pub struct Cli {
    /// Run log (JSON lines); defaults to `$OMNIPRED_LOG_DIR/omnipred-runs.jsonl`, else the working directory.
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Boost a predictor until it passes every requested audit.
    Train(TrainArgs),
    /// Audit a predictor on a dataset.
    Audit(AuditArgs),
    /// Merge level sets into a monotone predictor.
    Monotonize(MonotonizeArgs),
    /// Probability table of the simulated distribution.
    Probtable(ProbtableArgs),
    /// Solve a task on a probability table.
    Solve(SolveArgs),
    /// Make a transformation rank-preserving.
    Postprocess(PostprocessArgs),
    /// Check the omniprediction guarantee for each task.
    Verify(VerifyArgs),
    /// Recompute the counterexample fixtures.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Target audits; repeat or separate with commas.
    #[arg(long, required = true, value_delimiter = ',')]
    pub kind: Vec<AuditKind>,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub hypotheses: Option<PathBuf>,
    /// Add this many quantile stumps per feature to the hypotheses.
    #[arg(long)]
    pub stumps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    pub grid_step: f64,
    /// Hypothesis values for level-set kinds.
    #[arg(long, value_delimiter = ',')]
    pub action_grid: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long, required = true, value_delimiter = ',')]
    pub kind: Vec<AuditKind>,
    #[arg(long)]
    pub hypotheses: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub action_grid: Vec<f64>,
    /// Also report the violation in rational arithmetic.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct MonotonizeArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ProbtableArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Estimate from this many draws instead of computing exactly.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub probtable: PathBuf,
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, value_enum)]
    pub mode: FamilyKind,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the grid of a table form in the task, else 0, 1/64, ..., 1.
    #[arg(long, value_delimiter = ',')]
    pub action_grid: Vec<f64>,
    /// Resolve label-rate fairness constraints against this dataset instead of the table.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub tau: PathBuf,
    #[arg(long)]
    pub probtable: PathBuf,
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, value_enum)]
    pub mode: FamilyKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Run the correction in rational arithmetic.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub predictor: PathBuf,
    /// A task object or an array of them.
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub hypotheses: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, value_enum)]
    pub family: FamilyKind,
    #[arg(long, value_delimiter = ',')]
    pub action_grid: Vec<f64>,
    /// Largest grid enumerated by the spot check; 0 disables it.
    #[arg(long)]
    pub spot_check_budget: Option<u128>,
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, value_parser = ["g1", "g2"])]
    pub fixture: String,
    /// Write the fixture's dataset, predictor, hypotheses and task here.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

/// Inputs, outputs and provenance of one run.
#[derive(Debug, Default)]
struct Run {
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    outputs: Map<String, Value>,
    resolved: Vec<Value>,
}

impl Run {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), format!("{:x}", Sha256::digest(&bytes)));
        Ok(bytes)
    }

    fn json<T: DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: e.line() as u64,
            column: e.column() as u64,
            message: e.to_string(),
        })
    }

    fn dataset(&mut self, path: &Path) -> Result<Dataset> {
        let bytes = self.read(path)?;
        Dataset::read_csv_from(bytes.as_slice(), &path.display().to_string())
    }

    fn predictor(&mut self, path: &Path) -> Result<Predictor> {
        let p: Predictor = self.json(path)?;
        Predictor::new(p.grid_step, p.repr)
    }

    fn hypotheses(&mut self, path: &Path) -> Result<HypothesisClass> {
        let h: HypothesisClass = self.json(path)?;
        HypothesisClass::new(h.hypotheses)
    }

    fn probtable(&mut self, path: &Path) -> Result<ProbTable> {
        let pt: ProbTable = self.json(path)?;
        pt.validate()?;
        Ok(pt)
    }

    fn task_specs(&mut self, path: &Path) -> Result<Vec<TaskSpec>> {
        let v: Value = self.json(path)?;
        let specs = match v {
            Value::Array(items) => items.into_iter().map(serde_json::from_value).collect::<Result<_, _>>()?,
            other => vec![serde_json::from_value(other)?],
        };
        Ok(specs)
    }

    /// Resolves fairness encoders and records the coefficients they produced.
    fn resolve(&mut self, spec: &TaskSpec, t: usize, rates: Option<&Rates>) -> Result<Task> {
        let task = spec.resolve(t, rates)?;
        if spec.needs_rates() {
            self.resolved.push(json!({
                "task": task.name,
                "rates": rates,
                "constraints": task.constraints.iter().map(|f| &f.form).collect::<Vec<_>>(),
            }));
        }
        Ok(task)
    }

    fn output(&mut self, key: &str, value: impl Serialize) {
        self.outputs.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }
}

/// What a subcommand prints and its exit code.
struct Outcome {
    stdout: String,
    code: i32,
}

impl Outcome {
    fn json(value: &impl Serialize) -> Result<Self> {
        Ok(Outcome {
            stdout: serde_json::to_string_pretty(value)? + "\n",
            code: 0,
        })
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                ErrorKind::InvalidSubcommand => {
                    let _ = write!(err, "{text}\n{}", Cli::command().render_help());
                    1
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let mut run = Run::default();
    let name = command_name(&cli.command);
    let result = dispatch(&cli.command, &mut run);
    let (code, error) = match result {
        Ok(outcome) => {
            let _ = out.write_all(outcome.stdout.as_bytes());
            (outcome.code, None)
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            (e.exit_code(), Some(e.to_string()))
        }
    };
    let line = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": run.inputs,
        "seed": run.seed,
        "outputs": run.outputs,
        "resolved_constraints": run.resolved,
        "exit_code": code,
        "error": error,
    });
    if let Err(e) = append_log(cli.log.as_deref(), &line) {
        let _ = writeln!(err, "warning: run log not written: {e}");
    }
    code
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::Audit(_) => "audit",
        Command::Monotonize(_) => "monotonize",
        Command::Probtable(_) => "probtable",
        Command::Solve(_) => "solve",
        Command::Postprocess(_) => "postprocess",
        Command::Verify(_) => "verify",
        Command::Demo(_) => "demo",
    }
}

/// `--log`, else `$OMNIPRED_LOG_DIR/omnipred-runs.jsonl`, else `./omnipred-runs.jsonl`.
pub fn log_path(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(LOG_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(LOG_FILE),
        _ => PathBuf::from(LOG_FILE),
    }
}

fn append_log(explicit: Option<&Path>, line: &Value) -> Result<()> {
    let path = log_path(explicit);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(line)?)?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn dispatch(c: &Command, run: &mut Run) -> Result<Outcome> {
    match c {
        Command::Train(a) => cmd_train(a, run),
        Command::Audit(a) => cmd_audit(a, run),
        Command::Monotonize(a) => cmd_monotonize(a, run),
        Command::Probtable(a) => cmd_probtable(a, run),
        Command::Solve(a) => cmd_solve(a, run),
        Command::Postprocess(a) => cmd_postprocess(a, run),
        Command::Verify(a) => cmd_verify(a, run),
        Command::Demo(a) => cmd_demo(a, run),
    }
}

fn load_hypotheses(run: &mut Run, path: Option<&Path>, stumps: Option<usize>, d: &Dataset) -> Result<HypothesisClass> {
    let mut h = match path {
        Some(p) => run.hypotheses(p)?,
        None => HypothesisClass::default(),
    };
    if let Some(n) = stumps {
        h.hypotheses.extend(HypothesisClass::quantile_stumps(d, n).hypotheses);
    }
    Ok(h)
}

fn spec_for(kind: AuditKind, h: &HypothesisClass, action_grid: &[f64]) -> AuditSpec {
    match kind {
        AuditKind::GrpLma => AuditSpec::level_set(kind, h.clone(), action_grid.to_vec()),
        k if k.uses_hypotheses() => AuditSpec::new(k, h.clone()),
        k => AuditSpec::calibration(k),
    }
}

fn cmd_train(a: &TrainArgs, run: &mut Run) -> Result<Outcome> {
    let d = run.dataset(&a.dataset)?;
    let h = load_hypotheses(run, a.hypotheses.as_deref(), a.stumps, &d)?;
    let mut cfg = TrainConfig::new(a.kind.clone(), a.eps);
    cfg.seed = a.seed;
    cfg.eta = a.eta;
    cfg.max_iters = a.max_iters;
    cfg.grid_step = a.grid_step;
    cfg.action_grid = a.action_grid.clone();
    run.seed = Some(a.seed);
    let (p, code, violation) = match train(&d, &h, &cfg) {
        Ok(p) => (p, 0, None),
        Err(Error::NonConvergence { best, violation, .. }) => (*best, 2, Some(violation)),
        Err(e) => return Err(e),
    };
    write_file(&a.out, &p.to_json()?)?;
    let audits = cfg
        .specs(&h)
        .iter()
        .map(|s| audit(&p, &d, s).map(|r| json!({"kind": r.kind, "total_violation": r.total_violation})))
        .collect::<Result<Vec<_>>>()?;
    let report = json!({
        "converged": code == 0,
        "best_violation": violation,
        "updates": p.update_count(),
        "hypotheses": h.len(),
        "audits": audits,
        "out": a.out.display().to_string(),
    });
    run.output("train", &report);
    let mut o = Outcome::json(&report)?;
    o.code = code;
    Ok(o)
}

fn cmd_audit(a: &AuditArgs, run: &mut Run) -> Result<Outcome> {
    let d = run.dataset(&a.dataset)?;
    let p = run.predictor(&a.predictor)?;
    let h = load_hypotheses(run, a.hypotheses.as_deref(), None, &d)?;
    let mut reports = Vec::new();
    for &kind in &a.kind {
        let spec = spec_for(kind, &h, &a.action_grid);
        let r = audit(&p, &d, &spec)?;
        let mut v = serde_json::to_value(&r)?;
        if a.exact {
            v["exact_violation"] = Value::String(audit_exact(&p, &d, &spec)?.to_string());
        }
        run.output(kind.name(), r.total_violation);
        reports.push(v);
    }
    Outcome::json(&reports)
}

fn cmd_monotonize(a: &MonotonizeArgs, run: &mut Run) -> Result<Outcome> {
    let p = run.predictor(&a.predictor)?;
    let d = run.dataset(&a.dataset)?;
    run.seed = Some(a.seed);
    let m = monotonize(&p, &d, a.eps, a.delta, a.seed)?;
    write_file(&a.out, &m.to_json()?)?;
    let report = json!({
        "levels_before": p.range_on(&d)?.len(),
        "levels_after": m.range_on(&d)?.len(),
        "monotone": crate::rank::is_monotone_predictor(&m, &d)?,
        "out": a.out.display().to_string(),
    });
    run.output("monotonize", &report);
    Outcome::json(&report)
}

fn cmd_probtable(a: &ProbtableArgs, run: &mut Run) -> Result<Outcome> {
    let p = run.predictor(&a.predictor)?;
    let d = run.dataset(&a.dataset)?;
    let pt = match a.samples {
        Some(n) => {
            run.seed = Some(a.seed);
            estimate(&p, &d, n, a.seed)?
        }
        None => build_exact(&p, &d)?,
    };
    write_file(&a.out, &pt.to_json()?)?;
    let report = json!({
        "t": pt.t,
        "grid_points": pt.grid.len(),
        "estimated_from": a.samples,
        "out": a.out.display().to_string(),
    });
    run.output("probtable", &report);
    Outcome::json(&report)
}

/// Label rates from `--dataset` when given and asked for, else the table's simulated rates.
fn table_rates(run: &mut Run, spec: &TaskSpec, dataset: Option<&Path>, pt: &ProbTable) -> Result<Option<Rates>> {
    if !spec.needs_rates() {
        return Ok(None);
    }
    match (dataset, spec.rates.unwrap_or(RateMode::Labels)) {
        (Some(path), RateMode::Labels) => Ok(Some(Rates::from_labels(&run.dataset(path)?))),
        _ => Ok(Some(Rates::from_probtable(pt))),
    }
}

fn single_spec(run: &mut Run, path: &Path) -> Result<TaskSpec> {
    let mut specs = run.task_specs(path)?;
    if specs.len() != 1 {
        return Err(Error::Input(format!("{}: expected one task, found {}", path.display(), specs.len())));
    }
    Ok(specs.remove(0))
}

fn table_grid(form: &Form) -> Option<Vec<f64>> {
    match form {
        Form::Table { action_grid, .. } => Some(action_grid.clone()),
        Form::PerGroup { forms } => forms.iter().find_map(table_grid),
        _ => None,
    }
}

/// First table form's action grid, else the default grid.
fn task_action_grid(spec: &TaskSpec) -> Vec<f64> {
    std::iter::once(&spec.objective)
        .chain(spec.constraints.iter().filter_map(|c| match c {
            ConstraintSpec::Form(f) => Some(f),
            _ => None,
        }))
        .find_map(table_grid)
        .unwrap_or_else(default_action_grid)
}

fn solve_summary(r: &SolveReport) -> Value {
    json!({
        "status": r.status,
        "beta": r.objective,
        "slacks": r.slacks,
        "combined": r.combined,
        "iterations": r.iterations,
    })
}

fn cmd_solve(a: &SolveArgs, run: &mut Run) -> Result<Outcome> {
    let pt = run.probtable(&a.probtable)?;
    let spec = single_spec(run, &a.task)?;
    let rates = table_rates(run, &spec, a.dataset.as_deref(), &pt)?;
    let task = run.resolve(&spec, pt.t, rates.as_ref())?;
    let grid = if a.action_grid.is_empty() { task_action_grid(&spec) } else { a.action_grid.clone() };
    let r = optimize_on_table(&task, &pt, a.mode, &grid, a.eps)?;
    let summary = solve_summary(&r);
    run.output("solve", &summary);
    let mut o = Outcome::json(&summary)?;
    match &r.transformation {
        Some(tau) => write_file(&a.out, &tau.to_json()?)?,
        None => o.code = 2,
    }
    Ok(o)
}

fn table_summary(tau: &Transformation, task: &Task, pt: &ProbTable) -> Result<Value> {
    let ev = eval_on_table::<f64>(tau, task, pt)?;
    Ok(json!({
        "objective": ev.objective,
        "slacks": ev.slacks,
        "inversions": count_inversions(tau),
    }))
}

fn correct<S: Scalar>(mode: FamilyKind, tau: &Transformation, pt: &ProbTable, task: &Task) -> Result<(Transformation, usize)> {
    match mode {
        FamilyKind::Deterministic => correct_deterministic::<S>(tau, pt, task).map(|c| (c.transformation, c.passes)),
        FamilyKind::Randomized => correct_randomized::<S>(tau, pt, task).map(|c| (c.transformation, c.passes)),
    }
}

fn cmd_postprocess(a: &PostprocessArgs, run: &mut Run) -> Result<Outcome> {
    let tau: Transformation = run.json(&a.tau)?;
    tau.validate()?;
    if tau.is_randomized() != (a.mode == FamilyKind::Randomized) {
        return Err(Error::Input(format!(
            "--mode {:?} does not match the transformation in {}",
            a.mode,
            a.tau.display()
        )));
    }
    let pt = run.probtable(&a.probtable)?;
    let spec = single_spec(run, &a.task)?;
    let rates = table_rates(run, &spec, a.dataset.as_deref(), &pt)?;
    let task = run.resolve(&spec, pt.t, rates.as_ref())?;
    let (corrected, passes) = if a.exact {
        correct::<Exact>(a.mode, &tau, &pt, &task)?
    } else {
        correct::<f64>(a.mode, &tau, &pt, &task)?
    };
    write_file(&a.out, &corrected.to_json()?)?;
    let report = json!({
        "before": table_summary(&tau, &task, &pt)?,
        "after": table_summary(&corrected, &task, &pt)?,
        "passes": passes,
    });
    run.output("postprocess", &report);
    Outcome::json(&report)
}

fn cmd_verify(a: &VerifyArgs, run: &mut Run) -> Result<Outcome> {
    let d = run.dataset(&a.dataset)?;
    let p = run.predictor(&a.predictor)?;
    let specs = run.task_specs(&a.tasks)?;
    let c_class = run.hypotheses(&a.hypotheses)?;
    let mut tasks = Vec::new();
    for spec in &specs {
        let rates = match (spec.needs_rates(), spec.rates.unwrap_or(RateMode::Labels)) {
            (false, _) => None,
            (true, RateMode::Labels) => Some(Rates::from_labels(&d)),
            (true, RateMode::Predictor) => Some(Rates::from_predictor(&p, &d)?),
        };
        tasks.push(run.resolve(spec, d.t(), rates.as_ref())?);
    }
    let mut cfg = VerifyConfig::new(a.eps, a.family);
    if !a.action_grid.is_empty() {
        cfg.action_grid = a.action_grid.clone();
    }
    if let Some(b) = a.spot_check_budget {
        cfg.spot_check_budget = b;
    }
    cfg.exact = a.exact;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.max(1))
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    let reports: Vec<OmniReport> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| verify_omni(&p, std::slice::from_ref(t), &c_class, &d, &cfg).map(|mut r| r.remove(0)))
            .collect::<Result<_>>()
    })?;
    let verdicts: Vec<Value> = reports
        .iter()
        .map(|r| json!({"task": r.task, "holds": r.holds(), "fails": r.fails(), "beta_star": r.beta_star, "beta": r.beta}))
        .collect();
    run.output("verify", verdicts);
    Outcome::json(&reports)
}

fn export_fixture(f: &Fixture, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    f.d.write_csv(&mut csv)?;
    write_file(&dir.join("dataset.csv"), &String::from_utf8_lossy(&csv))?;
    write_file(&dir.join("predictor.json"), &f.p.to_json()?)?;
    write_file(&dir.join("hypotheses.json"), &serde_json::to_string_pretty(&f.c_class)?)?;
    let spec = TaskSpec {
        name: f.task.name.clone(),
        objective: f.task.objective.form.clone(),
        constraints: f.task.constraints.iter().map(|c| ConstraintSpec::Form(c.form.clone())).collect(),
        combiner: f.task.combiner.clone(),
        rates: None,
    };
    write_file(&dir.join("task.json"), &serde_json::to_string_pretty(&spec)?)?;
    write_file(&dir.join("alternative.json"), &f.expected.alternative_rule.to_json()?)?;
    Ok(())
}

fn cmd_demo(a: &DemoArgs, run: &mut Run) -> Result<Outcome> {
    let f = fixture(&a.fixture)?;
    let beta_star = crate::optimizer::brute_force_opt::<Exact>(&f.task, &f.d, crate::optimizer::Family::Class(&f.c_class), 0.0)?
        .beta
        .ok_or_else(|| Error::contract("fixture comparison class is infeasible"))?;
    let rule = Actions::Transformation {
        tau: &f.expected.alternative_rule,
        p: &f.p,
    };
    let alt = eval_task_exact(rule, &f.task, &f.d)?;
    let eps = if f.name == "g1" { 0.05 } else { 0.002 };
    let mut cfg = VerifyConfig::new(eps, f.family);
    cfg.action_grid = f.action_grid.clone();
    cfg.exact = true;
    let report = verify_omni(&f.p, std::slice::from_ref(&f.task), &f.c_class, &f.d, &cfg)?.remove(0);
    let mut lines = vec![format!("fixture {}", f.name)];
    let mut row = |label: &str, expected: f64, computed: &Exact| {
        lines.push(format!("{label:<22} expected {expected:<8} computed {} = {}", computed, computed.to_real()));
    };
    row("beta* over C", f.expected.beta_star, &beta_star);
    row("constrained objective", f.expected.alternative, &alt.objective);
    if f.name == "g1" {
        let grp_cal = audit_exact(&f.p, &f.d, &AuditSpec::calibration(AuditKind::GrpCal))?;
        row("GrpCal audit", 0.25, &grp_cal);
        let single = f.d.single_group();
        row("MC audit, one group", 0.0, &audit_exact(&f.p, &single, &AuditSpec::new(AuditKind::Mc, f.c_class.clone()))?);
        row("Cal audit, one group", 0.0, &audit_exact(&f.p, &single, &AuditSpec::calibration(AuditKind::Cal))?);
    } else {
        row("GrpMC audit", 0.0, &audit_exact(&f.p, &f.d, &AuditSpec::new(AuditKind::GrpMc, f.c_class.clone()))?);
        row("GrpCal audit", 0.0, &audit_exact(&f.p, &f.d, &AuditSpec::calibration(AuditKind::GrpCal))?);
    }
    lines.push(format!(
        "verify at eps={eps}: {}",
        if report.fails() { "fails" } else if report.holds() { "holds" } else { "vacuous" }
    ));
    if let Some(dir) = &a.export {
        export_fixture(&f, dir)?;
        lines.push(format!("exported to {}", dir.display()));
    }
    run.output("beta_star", beta_star.to_string());
    run.output("constrained", alt.objective.to_string());
    run.output("fails", report.fails());
    Ok(Outcome {
        stdout: lines.join("\n") + "\n",
        code: 0,
    })
}

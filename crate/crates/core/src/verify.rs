//! End-to-end omnipredictor checks, transfer conditions, the two counterexample
//! fixtures and a seeded synthetic instance generator.

use crate::error::{Error, Result};
use crate::model::{Dataset, Hypothesis, HypothesisClass, Predictor, Sample, Transformation, DEFAULT_GRID_STEP};
use crate::optimizer::{
    brute_force_opt, default_action_grid, solve_combined, solve_deterministic_convex, CellValues, Family,
    SolveReport, ENUMERATION_BUDGET,
};
use crate::scalar::{Exact, Scalar};
use crate::simulate::{build_exact, ProbTable};
use crate::tasks::{
    encode_fairness, eval_task, eval_task_simulated, Actions, FairnessKind, Form, GroupFunction, LinearConstraint,
    Task, TaskEval, FEAS_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Deterministic,
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub eps: f64,
    pub family: FamilyKind,
    /// Actions available to the optimizer and to the spot check.
    pub action_grid: Vec<f64>,
    /// Largest deterministic grid enumerated by the spot check; 0 disables it.
    pub spot_check_budget: u128,
    /// Compute `β*` and the candidate's objective in rational arithmetic.
    pub exact: bool,
}

impl VerifyConfig {
    pub fn new(eps: f64, family: FamilyKind) -> Self {
        VerifyConfig {
            eps,
            family,
            action_grid: default_action_grid(),
            spot_check_budget: ENUMERATION_BUDGET,
            exact: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessSource {
    Candidate,
    SpotCheck,
}

/// A member of `C_p ∩ sol_{D_p}(T, β + ε/3, 2ε/3)` outside `sol_D(T, β* + ε, ε)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub source: WitnessSource,
    pub transformation: Transformation,
    pub objective: f64,
    pub slacks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails { witness: Box<Witness> },
    Vacuous { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmniReport {
    pub task: String,
    /// `None` when no hypothesis is feasible.
    pub beta_star: Option<f64>,
    /// Optimizer objective on `D_p` at `ε/3`; `None` when infeasible.
    pub beta: Option<f64>,
    pub candidate: Option<Transformation>,
    pub candidate_objective: Option<f64>,
    pub candidate_slacks: Vec<f64>,
    /// Grid members of the `D_p` solution set that were checked; `None` if the grid was too large.
    pub spot_checked: Option<u128>,
    #[serde(flatten)]
    pub verdict: Verdict,
}

impl OmniReport {
    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }

    pub fn fails(&self) -> bool {
        matches!(self.verdict, Verdict::Fails { .. })
    }
}

fn vacuous(task: &Task, beta_star: Option<f64>, beta: Option<f64>, reason: &str) -> OmniReport {
    OmniReport {
        task: task.name.clone(),
        beta_star,
        beta,
        candidate: None,
        candidate_objective: None,
        candidate_slacks: vec![],
        spot_checked: None,
        verdict: Verdict::Vacuous { reason: reason.into() },
    }
}

/// The optimizer's answer over `C_p` (deterministic) or `C_p^rand` on `D_p` at `ε/3`.
pub fn optimize_on_dp(task: &Task, p: &Predictor, d: &Dataset, cfg: &VerifyConfig) -> Result<SolveReport> {
    optimize_on_table(task, &build_exact(p, d)?, cfg.family, &cfg.action_grid, cfg.eps)
}

/// Solver dispatch on a probability table: the randomized LP, the deterministic
/// convex program when its tags allow, and otherwise enumeration of grid rules.
pub fn optimize_on_table(
    task: &Task,
    pt: &ProbTable,
    family: FamilyKind,
    action_grid: &[f64],
    eps: f64,
) -> Result<SolveReport> {
    match family {
        FamilyKind::Randomized => solve_combined(task, pt, action_grid, eps),
        FamilyKind::Deterministic if task.objective.tags.convex && task.constraints.iter().all(GroupFunction::is_affine) => {
            solve_deterministic_convex(task, pt, action_grid, eps)
        }
        FamilyKind::Deterministic => {
            let cells = CellValues::<f64>::from_table(task, pt, action_grid);
            let best = cells.brute_force(task, eps / 3.0, ENUMERATION_BUDGET)?;
            let Some(choice) = best.argmin else {
                return Ok(SolveReport {
                    transformation: None,
                    objective: f64::INFINITY,
                    slacks: vec![],
                    combined: None,
                    status: crate::optimizer::SolveStatus::Infeasible { row: 0 },
                    iterations: best.candidates as usize,
                });
            };
            let ev = cells.score(task, &choice);
            Ok(SolveReport {
                transformation: Some(cells.transformation(task.t(), &choice)?),
                objective: ev.objective,
                slacks: ev.slacks,
                combined: ev.combined,
                status: crate::optimizer::SolveStatus::Optimal,
                iterations: best.candidates as usize,
            })
        }
    }
}

fn eval_on_d(tau: &Transformation, p: &Predictor, task: &Task, d: &Dataset, exact: bool) -> Result<TaskEval<f64>> {
    let actions = Actions::Transformation { tau, p };
    if exact {
        Ok(eval_task::<Exact>(actions, task, d)?.to_real())
    } else {
        eval_task(actions, task, d)
    }
}

/// Checks, per task, whether the optimizer's post-processing of `p` lands in
/// `sol_D(T, β* + ε, ε)`, and spot-checks other grid members of the `D_p` solution set.
pub fn verify_omni(
    p: &Predictor,
    tasks: &[Task],
    c_class: &HypothesisClass,
    d: &Dataset,
    cfg: &VerifyConfig,
) -> Result<Vec<OmniReport>> {
    if !(cfg.eps >= 0.0 && cfg.eps.is_finite()) {
        return Err(Error::input(format!("eps must be nonnegative, got {}", cfg.eps)));
    }
    if c_class.is_empty() {
        return Err(Error::input("comparison class is empty"));
    }
    tasks.iter().map(|task| verify_task(p, task, c_class, d, cfg)).collect()
}

fn verify_task(p: &Predictor, task: &Task, c_class: &HypothesisClass, d: &Dataset, cfg: &VerifyConfig) -> Result<OmniReport> {
    let eps = cfg.eps;
    let beta_star = if cfg.exact {
        brute_force_opt::<Exact>(task, d, Family::Class(c_class), 0.0)?.beta.map(|b| b.to_real())
    } else {
        brute_force_opt::<f64>(task, d, Family::Class(c_class), 0.0)?.beta
    };
    let Some(beta_star) = beta_star else {
        return Ok(vacuous(task, None, None, "no hypothesis in C meets the constraints"));
    };
    let solved = optimize_on_dp(task, p, d, cfg)?;
    let Some(tau) = solved.transformation else {
        return Ok(vacuous(task, Some(beta_star), None, "no transformation meets the constraints on D_p at eps/3"));
    };
    let beta = solved.objective;
    let target = beta_star + eps;
    let ev = eval_on_d(&tau, p, task, d, cfg.exact)?;
    let mut verdict = Verdict::Holds;
    if !ev.in_sol(target, eps) {
        verdict = Verdict::Fails {
            witness: Box::new(Witness {
                source: WitnessSource::Candidate,
                transformation: tau.clone(),
                objective: ev.objective,
                slacks: ev.slacks.clone(),
            }),
        };
    }
    let mut spot_checked = None;
    if cfg.spot_check_budget > 0 {
        let on_dp = CellValues::<f64>::from_simulated(task, p, d, &cfg.action_grid)?;
        if on_dp.candidate_count() <= cfg.spot_check_budget {
            let on_d = CellValues::<f64>::from_labels(task, p, d, &cfg.action_grid)?;
            let mut checked = 0u128;
            let mut first: Option<Vec<usize>> = None;
            on_dp.for_each(cfg.spot_check_budget, |choice| {
                if !on_dp.score(task, choice).in_sol(beta + eps / 3.0, 2.0 * eps / 3.0) {
                    return;
                }
                checked += 1;
                if first.is_none() && !on_d.score(task, choice).in_sol(target, eps) {
                    first = Some(choice.to_vec());
                }
            })?;
            spot_checked = Some(checked);
            if let (Some(choice), Verdict::Holds) = (first, &verdict) {
                let member = on_d.transformation(task.t(), &choice)?;
                let w = eval_on_d(&member, p, task, d, cfg.exact)?;
                verdict = Verdict::Fails {
                    witness: Box::new(Witness {
                        source: WitnessSource::SpotCheck,
                        transformation: member,
                        objective: w.objective,
                        slacks: w.slacks,
                    }),
                };
            }
        }
    }
    Ok(OmniReport {
        task: task.name.clone(),
        beta_star: Some(beta_star),
        beta: Some(beta),
        candidate: Some(tau),
        candidate_objective: Some(ev.objective),
        candidate_slacks: ev.slacks,
        spot_checked,
        verdict,
    })
}

/// Largest excess of each transfer condition over all hypotheses, functions
/// `j ∈ {0} ∪ J`, and grid members of `C_p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub bound: f64,
    /// `max_{c, j} E_{D_p} c'(f_j) - E_D c(f_j)` with `c'` built from `c`.
    pub condition1: f64,
    pub condition1_at: Option<(String, usize)>,
    /// `max_{c ∈ C_p, j} E_D c(f_j) - E_{D_p} c(f_j)`.
    pub condition2: f64,
    pub condition2_at: Option<usize>,
    /// `max_{c, j} |E_D c(f_j) - E_{D_p} c(f_j)|`.
    pub transfer_residual: f64,
}

impl LemmaReport {
    pub fn condition1_holds(&self) -> bool {
        self.condition1 <= self.bound + FEAS_TOL
    }

    pub fn condition2_holds(&self) -> bool {
        self.condition2 <= self.bound + FEAS_TOL
    }
}

fn functions(task: &Task) -> Vec<&GroupFunction> {
    std::iter::once(&task.objective).chain(&task.constraints).collect()
}

fn all_values<S: Scalar>(ev: TaskEval<S>) -> Vec<S> {
    std::iter::once(ev.objective).chain(ev.slacks).collect()
}

/// `E_{D_p}` of each function under per-cell averaged actions of `c`.
fn averaged_on_dp<S: Scalar>(c: &Hypothesis, task: &Task, p: &Predictor, d: &Dataset) -> Result<Vec<S>> {
    let grid = p.grid();
    let preds = p.evaluate_dataset(d)?;
    let mut cells: BTreeMap<(usize, i64), (S, S, S)> = BTreeMap::new();
    for (s, &v) in d.samples().iter().zip(&preds) {
        let w = S::from_real(s.weight);
        let a = S::from_real(c.eval(s)?);
        let e = cells.entry((s.group, grid.index(v))).or_insert((S::zero(), S::zero(), S::from_real(v)));
        e.0 = e.0.clone() + w.clone();
        e.1 = e.1.clone() + w * a;
    }
    let total = cells.values().fold(S::zero(), |acc, c| acc + c.0.clone());
    Ok(functions(task)
        .into_iter()
        .map(|f| {
            cells.iter().fold(S::zero(), |acc, (&(i, _), (m, ma, v))| {
                if m.is_zero() {
                    return acc;
                }
                let a = ma.clone() / m.clone();
                let val = v.clone() * f.value(i, &a, 1) + (S::one() - v.clone()) * f.value(i, &a, 0);
                acc + m.clone() * val
            }) / total.clone()
        })
        .collect())
}

/// Evaluates both transfer conditions of the reduction from omniprediction to
/// simulated-distribution optimization.
pub fn check_lemma_conditions<S: Scalar>(
    p: &Predictor,
    task: &Task,
    c_class: &HypothesisClass,
    d: &Dataset,
    eps: f64,
    family: FamilyKind,
    action_grid: &[f64],
) -> Result<LemmaReport> {
    let mut report = LemmaReport {
        bound: eps / 3.0,
        condition1: f64::NEG_INFINITY,
        condition1_at: None,
        condition2: f64::NEG_INFINITY,
        condition2_at: None,
        transfer_residual: 0.0,
    };
    for h in c_class.iter() {
        let on_d = all_values(eval_task::<S>(Actions::Hypothesis(&h.hypothesis), task, d)?);
        let on_dp = all_values(eval_task_simulated::<S>(Actions::Hypothesis(&h.hypothesis), task, p, d)?);
        let lifted = match family {
            FamilyKind::Deterministic => averaged_on_dp::<S>(&h.hypothesis, task, p, d)?,
            // Lifting the conditional law of c(x) within each cell leaves E_{D_p} unchanged.
            FamilyKind::Randomized => on_dp.clone(),
        };
        for (j, ((d_val, dp_val), l_val)) in on_d.iter().zip(&on_dp).zip(&lifted).enumerate() {
            let excess = (l_val.clone() - d_val.clone()).to_real();
            if excess > report.condition1 {
                report.condition1 = excess;
                report.condition1_at = Some((h.name.clone(), j));
            }
            report.transfer_residual = report.transfer_residual.max((d_val.clone() - dp_val.clone()).abs().to_real());
        }
    }
    // Linear in the transformation, so the maximum over C_p and C_p^rand is attained cell by cell.
    let on_d = CellValues::<S>::from_labels(task, p, d, action_grid)?;
    let on_dp = CellValues::<S>::from_simulated(task, p, d, action_grid)?;
    for j in 0..=task.constraints.len() {
        let mut total = S::zero();
        for (vd, vdp) in on_d.values.iter().zip(&on_dp.values) {
            let best = vd
                .iter()
                .zip(vdp)
                .map(|(a, b)| a[j].clone() - b[j].clone())
                .reduce(S::max_of)
                .unwrap_or_else(S::zero);
            total = total + best;
        }
        let total = total.to_real();
        if total > report.condition2 {
            report.condition2 = total;
            report.condition2_at = Some(j);
        }
    }
    Ok(report)
}

/// Reference values a fixture must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expected {
    pub beta_star: f64,
    /// Objective on `D` of the post-processed rule forced by the constraints.
    pub alternative: f64,
    pub alternative_rule: Transformation,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub d: Dataset,
    pub task: Task,
    pub c_class: HypothesisClass,
    pub p: Predictor,
    pub family: FamilyKind,
    pub action_grid: Vec<f64>,
    pub expected: Expected,
}

fn row(xid: &str, group: usize, label: u8, weight: f64) -> Sample {
    Sample::new(xid, vec![], group, label).with_weight(weight)
}

fn pinned_pair(t: usize, group: usize, target: f64) -> Result<Vec<GroupFunction>> {
    let unit = |x: f64| (1..=t).map(|i| if i == group { x } else { 0.0 }).collect::<Vec<_>>();
    let plus = LinearConstraint::new(unit(target), unit(-1.0), vec![0.0; t])?;
    let minus = LinearConstraint::new(unit(-target), unit(1.0), vec![0.0; t])?;
    Ok(vec![GroupFunction::linear(plus)?, GroupFunction::linear(minus)?])
}

/// Four individuals in two groups, constant predictor 0.5, `ℓ1` loss and
/// constraints pinning each group's mean action.
pub fn fixture_g1() -> Result<Fixture> {
    let d = Dataset::from_samples(vec![
        row("x1", 1, 1, 1.0),
        row("x1", 1, 0, 1.0),
        row("x2", 2, 1, 1.0),
        row("x2", 2, 0, 1.0),
        row("x3", 1, 0, 2.0),
        row("x4", 2, 1, 2.0),
    ])?;
    let mut constraints = pinned_pair(2, 1, 0.375)?;
    constraints.extend(pinned_pair(2, 2, 0.125)?);
    let task = Task::new("g1", GroupFunction::new(2, Form::L1 { scale: 1.0 })?, constraints, None)?;
    let c = Hypothesis::lookup([("x1", 0.75), ("x2", 0.25), ("x3", 0.0), ("x4", 0.0)]);
    let mut c_class = HypothesisClass::default();
    c_class.push("c", c)?;
    let p = Predictor::constant(0.5, DEFAULT_GRID_STEP)?;
    let alternative_rule = Transformation::deterministic(2, vec![0.5], [0.0, 1.0], vec![vec![Some(0.375)], vec![Some(0.125)]])?;
    Ok(Fixture {
        name: "g1",
        d,
        task,
        c_class,
        p,
        family: FamilyKind::Deterministic,
        action_grid: default_action_grid(),
        expected: Expected {
            beta_star: 0.5,
            alternative: 0.5625,
            alternative_rule,
        },
    })
}

/// Three individuals in one group, constant predictor 0.5, cubic loss and
/// constraints asking each of three actions to be used a third of the time.
pub fn fixture_g2() -> Result<Fixture> {
    let d = Dataset::from_samples(vec![
        row("x1", 1, 1, 1.0),
        row("x1", 1, 0, 3.0),
        row("x2", 1, 1, 4.0),
        row("x3", 1, 1, 1.0),
        row("x3", 1, 0, 3.0),
    ])?;
    let actions = vec![0.1, 0.2, 0.3];
    let third = 1.0 / 3.0;
    let mut constraints = Vec::new();
    for k in 0..3 {
        for sign in [1.0, -1.0] {
            let values = (0..3)
                .map(|m| {
                    let v = sign * (if m == k { 1.0 } else { 0.0 } - third);
                    [v, v]
                })
                .collect();
            constraints.push(GroupFunction::new(
                1,
                Form::Table {
                    action_grid: actions.clone(),
                    values: vec![values],
                },
            )?);
        }
    }
    let task = Task::new("g2", GroupFunction::new(1, Form::Power { q: 3.0, scale: 1.0 })?, constraints, None)?;
    let c = Hypothesis::lookup([("x1", 0.1), ("x2", 0.2), ("x3", 0.3)]);
    let mut c_class = HypothesisClass::default();
    c_class.push("c", c)?;
    let p = Predictor::constant(0.5, DEFAULT_GRID_STEP)?;
    let alternative_rule =
        Transformation::randomized(1, vec![0.5], actions.clone(), vec![vec![Some(vec![third, third, third])]])?;
    Ok(Fixture {
        name: "g2",
        d,
        task,
        c_class,
        p,
        family: FamilyKind::Randomized,
        action_grid: actions,
        expected: Expected {
            beta_star: 0.267,
            alternative: 0.27,
            alternative_rule,
        },
    })
}

pub fn fixture(name: &str) -> Result<Fixture> {
    match name {
        "g1" => fixture_g1(),
        "g2" => fixture_g2(),
        _ => Err(Error::input(format!("unknown fixture `{name}` (expected g1 or g2)"))),
    }
}

/// A seeded synthetic dataset with planted label probabilities.
#[derive(Debug, Clone)]
pub struct Instance {
    pub d: Dataset,
    /// Threshold stumps and constant hypotheses.
    pub c_class: HypothesisClass,
    /// Planted `P[y = 1 | x]` per sample.
    pub bayes: Vec<f64>,
}

/// Constant hypotheses at `0, 1/4, ..., 1`.
pub fn constant_hypotheses() -> Vec<(String, Hypothesis)> {
    (0..=4)
        .map(|k| (format!("const_{k}"), Hypothesis::Constant { value: k as f64 / 4.0 }))
        .collect()
}

/// 2 to 4 groups, 100 to 500 samples, two features on a 0.05 lattice, and a
/// class of at most 64 hypotheses.
pub fn synthetic_instance(seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.gen_range(2..=4);
    let n = rng.gen_range(100..=500);
    let shift: Vec<f64> = (0..t).map(|_| rng.gen_range(-0.25..0.25)).collect();
    let slope: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.6..0.6)).collect();
    let mut samples = Vec::with_capacity(n);
    let mut bayes = Vec::with_capacity(n);
    for k in 0..n {
        let group = rng.gen_range(1..=t);
        let x: Vec<f64> = (0..2).map(|_| (rng.gen_range(0.0..1.0f64) * 20.0).round() / 20.0).collect();
        let q = (0.5 + shift[group - 1] + slope[0] * (x[0] - 0.5) + slope[1] * (x[1] - 0.5)).clamp(0.05, 0.95);
        let y = u8::from(rng.gen_bool(q));
        samples.push(Sample::new(format!("s{k}"), x, group, y));
        bayes.push(q);
    }
    let d = Dataset::new(samples, t, vec!["f0".into(), "f1".into()])?;
    let mut c_class = HypothesisClass::quantile_stumps(&d, 8);
    for (name, h) in constant_hypotheses() {
        c_class.push(name, h)?;
    }
    Ok(Instance { d, c_class, bayes })
}

/// Convex tasks with special objectives and linear group constraints.
pub fn convex_special_suite(d: &Dataset) -> Result<Vec<Task>> {
    let t = d.t();
    let l1 = || GroupFunction::new(t, Form::L1 { scale: 0.5 });
    let sq = GroupFunction::new(t, Form::Squared { scale: 0.5 })?;
    let mixed = GroupFunction::new(
        t,
        Form::PerGroup {
            forms: (0..t)
                .map(|i| if i % 2 == 0 { Form::L1 { scale: 0.5 } } else { Form::Squared { scale: 0.5 } })
                .collect(),
        },
    )?;
    let budget = encode_fairness(FairnessKind::Budget, d, 1, 0.4)?;
    let parity = encode_fairness(FairnessKind::StatisticalParity, d, 1, 0.05)?;
    Ok(vec![
        Task::new("l1", l1()?, vec![], None)?,
        Task::new("squared", sq.clone(), vec![], None)?,
        Task::new("mixed_per_group", mixed, vec![], None)?,
        Task::new("l1_budget", l1()?, budget, None)?,
        Task::new("squared_parity", sq, parity, None)?,
    ])
}

/// Tasks whose objectives have differences bounded by 1, one of them non-convex.
pub fn bounded_difference_suite(d: &Dataset) -> Result<Vec<Task>> {
    let t = d.t();
    let root = || GroupFunction::new(t, Form::Power { q: 0.5, scale: 1.0 });
    let l1 = || GroupFunction::new(t, Form::L1 { scale: 1.0 });
    Ok(vec![
        Task::new("sqrt_loss", root()?, vec![], None)?,
        Task::new("l1", l1()?, vec![], None)?,
        Task::new("squared", GroupFunction::new(t, Form::Squared { scale: 1.0 })?, vec![], None)?,
        Task::new("sqrt_loss_budget", root()?, encode_fairness(FairnessKind::Budget, d, 1, 0.4)?, None)?,
        Task::new("l1_parity", l1()?, encode_fairness(FairnessKind::StatisticalParity, d, 1, 0.05)?, None)?,
    ])
}

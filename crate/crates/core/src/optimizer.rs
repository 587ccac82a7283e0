//! Post-processing on the simulated distribution: the randomized LP over an
//! action grid, its deterministic rounding, combined constraints, and
//! brute-force `opt` oracles.

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::model::{Dataset, HypothesisClass, Predictor, Transformation};
use crate::scalar::Scalar;
use crate::simulate::ProbTable;
use crate::tasks::{eval_on_table, eval_task, Actions, Combiner, GroupFunction, Task, TaskEval, FEAS_TOL};
use serde::Serialize;

pub const ENUMERATION_BUDGET: u128 = 1_000_000;
const TOLERANCE_BAND: f64 = 1e-7;
const MAX_CUTS: usize = 200;

/// `0, 1/64, ..., 1`.
pub fn default_action_grid() -> Vec<f64> {
    (0..=64).map(|k| k as f64 / 64.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    ToleranceFeasible,
    Infeasible { row: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub transformation: Option<Transformation>,
    /// Objective on the table; `+inf` when infeasible.
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub combined: Option<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl SolveReport {
    pub fn is_feasible(&self) -> bool {
        !matches!(self.status, SolveStatus::Infeasible { .. })
    }

    fn infeasible(row: usize, iterations: usize, m: usize) -> Self {
        SolveReport {
            transformation: None,
            objective: f64::INFINITY,
            slacks: vec![f64::NAN; m],
            combined: None,
            status: SolveStatus::Infeasible { row },
            iterations,
        }
    }
}

/// Per-cell expected values of the objective and constraints for each grid action.
struct CellProgram {
    n_actions: usize,
    /// Cells `(group, value index)` with positive mass.
    cells: Vec<(usize, usize)>,
    /// `objective[cell][a]`
    objective: Vec<Vec<f64>>,
    /// `constraint[j][cell][a]`
    constraint: Vec<Vec<Vec<f64>>>,
}

impl CellProgram {
    fn new(task: &Task, pt: &ProbTable, action_grid: &[f64]) -> Result<Self> {
        if action_grid.is_empty() {
            return Err(Error::input("action grid is empty"));
        }
        if pt.t != task.t() {
            return Err(Error::input(format!("table has t = {}, task has t = {}", pt.t, task.t())));
        }
        let cells: Vec<(usize, usize)> = pt.cells().filter(|&(i, k)| pt.mass(i, k) > 0.0).collect();
        let expect = |f: &GroupFunction, i: usize, k: usize| -> Vec<f64> {
            action_grid
                .iter()
                .map(|&a| pt.prob(i, k, 1) * f.eval(i, a, 1) + pt.prob(i, k, 0) * f.eval(i, a, 0))
                .collect()
        };
        Ok(CellProgram {
            n_actions: action_grid.len(),
            objective: cells.iter().map(|&(i, k)| expect(&task.objective, i, k)).collect(),
            constraint: task
                .constraints
                .iter()
                .map(|f| cells.iter().map(|&(i, k)| expect(f, i, k)).collect())
                .collect(),
            cells,
        })
    }

    fn n_vars(&self) -> usize {
        self.cells.len() * self.n_actions
    }

    fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().flatten().copied().collect()
    }

    fn base_lp(&self) -> LpProblem {
        let mut lp = LpProblem::new(CellProgram::flatten(&self.objective));
        let n = self.n_vars();
        for c in 0..self.cells.len() {
            let mut row = vec![0.0; n];
            row[c * self.n_actions..(c + 1) * self.n_actions].fill(1.0);
            lp.add_eq(row, 1.0);
        }
        lp
    }

    fn slack_rows(&self) -> Vec<Vec<f64>> {
        self.constraint.iter().map(|c| CellProgram::flatten(c)).collect()
    }
}

/// Action minimizing the expected objective under `Bernoulli(v)`, for cells without mass.
fn fallback_action(f0: &GroupFunction, i: usize, v: f64, action_grid: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (k, &a) in action_grid.iter().enumerate() {
        let val = v * f0.eval(i, a, 1) + (1.0 - v) * f0.eval(i, a, 0);
        if val < best_val - 1e-15 {
            best = k;
            best_val = val;
        }
    }
    best
}

fn clean_distribution(x: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = x.iter().map(|&v| if v < 1e-13 { 0.0 } else { v }).collect();
    let s: f64 = q.iter().sum();
    for v in &mut q {
        *v /= s;
    }
    q
}

fn randomized_from(prog: &CellProgram, task: &Task, pt: &ProbTable, action_grid: &[f64], x: &[f64]) -> Result<Transformation> {
    let na = prog.n_actions;
    let mut table: Vec<Vec<Option<Vec<f64>>>> = (1..=pt.t)
        .map(|i| {
            pt.grid
                .iter()
                .map(|&v| {
                    let mut q = vec![0.0; na];
                    q[fallback_action(&task.objective, i, v, action_grid)] = 1.0;
                    Some(q)
                })
                .collect()
        })
        .collect();
    for (c, &(i, k)) in prog.cells.iter().enumerate() {
        table[i - 1][k] = Some(clean_distribution(&x[c * na..(c + 1) * na]));
    }
    Transformation::randomized(pt.t, pt.grid.clone(), action_grid.to_vec(), table)
}

fn finish(task: &Task, pt: &ProbTable, tau: Transformation, eps: f64, iterations: usize) -> Result<SolveReport> {
    let ev: TaskEval<f64> = eval_on_table(&tau, task, pt)?;
    let bound = eps / 3.0;
    let worst = match ev.combined {
        Some(c) => c,
        None => ev.max_slack(),
    };
    let status = if task.constraints.is_empty() || worst <= bound + FEAS_TOL {
        SolveStatus::Optimal
    } else if worst <= bound + TOLERANCE_BAND {
        SolveStatus::ToleranceFeasible
    } else {
        return Err(Error::contract(format!(
            "solver returned a point with slack {worst} above {bound}"
        )));
    };
    Ok(SolveReport {
        transformation: Some(tau),
        objective: ev.objective,
        slacks: ev.slacks,
        combined: ev.combined,
        status,
        iterations,
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("epsilon must be nonnegative, got {eps}")))
    }
}

/// Minimizes the expected objective over randomized transformations on
/// `action_grid`, with every constraint at most `eps / 3` on the table.
pub fn solve_randomized(task: &Task, pt: &ProbTable, action_grid: &[f64], eps: f64) -> Result<SolveReport> {
    check_eps(eps)?;
    let prog = CellProgram::new(task, pt, action_grid)?;
    let mut lp = prog.base_lp();
    for row in prog.slack_rows() {
        lp.add_le(row, eps / 3.0);
    }
    run(task, pt, action_grid, eps, &prog, lp)
}

fn run(task: &Task, pt: &ProbTable, action_grid: &[f64], eps: f64, prog: &CellProgram, lp: LpProblem) -> Result<SolveReport> {
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {
            let tau = randomized_from(prog, task, pt, action_grid, &sol.x)?;
            finish(task, pt, tau, eps, sol.iterations)
        }
        LpStatus::Infeasible { row } => Ok(SolveReport::infeasible(row, sol.iterations, task.constraints.len())),
        LpStatus::Unbounded => Err(Error::contract("distribution LP cannot be unbounded")),
    }
}

/// Solves the randomized LP, then replaces each cell by its mean action.
/// Requires a convex objective and affine constraints.
pub fn solve_deterministic_convex(task: &Task, pt: &ProbTable, action_grid: &[f64], eps: f64) -> Result<SolveReport> {
    if !task.objective.tags.convex {
        return Err(Error::contract(
            "objective is not tagged convex; use the randomized solver",
        ));
    }
    if let Some(j) = task.constraints.iter().position(|f| !f.is_affine()) {
        return Err(Error::contract(format!(
            "constraint {j} is not affine in the action; use the randomized solver"
        )));
    }
    let randomized = solve_combined(task, pt, action_grid, eps)?;
    let Some(tau) = &randomized.transformation else {
        return Ok(randomized);
    };
    let tau = round_to_means(tau)?;
    finish(task, pt, tau, eps, randomized.iterations)
}

/// Deterministic transformation taking each cell to its expected action.
pub fn round_to_means(tau: &Transformation) -> Result<Transformation> {
    let Some((lo, hi)) = action_range(tau) else {
        return Ok(tau.clone());
    };
    let table = (1..=tau.t)
        .map(|i| {
            (0..tau.grid.len())
                .map(|k| {
                    tau.cell(i, k).map(|dist| {
                        let m: f64 = dist.iter().map(|(a, q)| a * q).sum();
                        m.clamp(lo, hi)
                    })
                })
                .collect()
        })
        .collect();
    Transformation::deterministic(tau.t, tau.grid.clone(), [lo, hi], table)
}

fn action_range(tau: &Transformation) -> Option<(f64, f64)> {
    match &tau.entries {
        crate::model::Entries::Randomized { action_grid, .. } => {
            Some((action_grid[0], action_grid[action_grid.len() - 1]))
        }
        crate::model::Entries::Deterministic { .. } => None,
    }
}

/// Like [`solve_randomized`], with the constraint list combined by the task's
/// combiner: max keeps the plain list, a weighted sum becomes one row, and
/// other convex combiners are handled by cutting planes.
pub fn solve_combined(task: &Task, pt: &ProbTable, action_grid: &[f64], eps: f64) -> Result<SolveReport> {
    check_eps(eps)?;
    let weights = match &task.combiner {
        None | Some(Combiner::Max) => return solve_randomized(task, pt, action_grid, eps),
        Some(Combiner::WeightedSum { weights }) => Some(weights.clone()),
        Some(Combiner::SmoothedMax { .. }) => None,
    };
    let prog = CellProgram::new(task, pt, action_grid)?;
    let rows = prog.slack_rows();
    let bound = eps / 3.0;
    let mut lp = prog.base_lp();
    if let Some(w) = weights {
        let mut row = vec![0.0; prog.n_vars()];
        for (wj, r) in w.iter().zip(&rows) {
            for (x, c) in row.iter_mut().zip(r) {
                *x += wj * c;
            }
        }
        lp.add_le(row, bound);
        return run(task, pt, action_grid, eps, &prog, lp);
    }
    let combiner = task.combiner.as_ref().expect("combiner present");
    let mut iterations = 0;
    for _ in 0..MAX_CUTS {
        let sol = solve_lp(&lp)?;
        iterations += sol.iterations;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible { row } => {
                return Ok(SolveReport::infeasible(row, iterations, task.constraints.len()))
            }
            LpStatus::Unbounded => return Err(Error::contract("distribution LP cannot be unbounded")),
        }
        let s: Vec<f64> = rows.iter().map(|r| r.iter().zip(&sol.x).map(|(a, b)| a * b).sum()).collect();
        let value = combiner.value(&s);
        if value <= bound + FEAS_TOL {
            let tau = randomized_from(&prog, task, pt, action_grid, &sol.x)?;
            return finish(task, pt, tau, eps, iterations);
        }
        // Γ(s) + ∇Γ(s)·(S(x) - s) <= bound
        let g = combiner.gradient(&s);
        let mut row = vec![0.0; prog.n_vars()];
        for (gj, r) in g.iter().zip(&rows) {
            for (x, c) in row.iter_mut().zip(r) {
                *x += gj * c;
            }
        }
        let rhs = bound - value + g.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>();
        lp.add_le(row, rhs);
    }
    Err(Error::contract(format!(
        "cutting planes did not reach the combined bound within {MAX_CUTS} rounds"
    )))
}

/// Candidate action functions for [`brute_force_opt`].
#[derive(Debug, Clone, Copy)]
pub enum Family<'a> {
    Class(&'a HypothesisClass),
    Transformations {
        p: &'a Predictor,
        taus: &'a [Transformation],
    },
    /// Every deterministic transformation over the cells of `p` on the data,
    /// with actions from `action_grid`.
    DeterministicGrid {
        p: &'a Predictor,
        action_grid: &'a [f64],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForce<S> {
    /// `None` stands for `+inf` (no feasible candidate).
    pub beta: Option<S>,
    /// Index of the minimizer; for grids, the action index per cell in
    /// `(group, value)` order.
    pub argmin: Option<Vec<usize>>,
    pub candidates: u128,
    pub feasible: u128,
}

impl<S: Scalar> BruteForce<S> {
    pub fn beta_real(&self) -> f64 {
        self.beta.as_ref().map_or(f64::INFINITY, Scalar::to_real)
    }
}

/// Minimum objective on `d` among candidates whose slacks are all at most `eps`.
pub fn brute_force_opt<S: Scalar>(task: &Task, d: &Dataset, family: Family<'_>, eps: f64) -> Result<BruteForce<S>> {
    let mut best = BruteForce {
        beta: None,
        argmin: None,
        candidates: 0,
        feasible: 0,
    };
    let consider = |ev: TaskEval<S>, idx: Vec<usize>, best: &mut BruteForce<S>| {
        best.candidates += 1;
        if !ev.feasible(eps) {
            return;
        }
        best.feasible += 1;
        if best.beta.as_ref().map_or(true, |b| ev.objective < *b) {
            best.beta = Some(ev.objective);
            best.argmin = Some(idx);
        }
    };
    match family {
        Family::Class(class) => {
            check_budget(class.len() as u128)?;
            for (k, h) in class.iter().enumerate() {
                let ev = eval_task(Actions::Hypothesis(&h.hypothesis), task, d)?;
                consider(ev, vec![k], &mut best);
            }
        }
        Family::Transformations { p, taus } => {
            check_budget(taus.len() as u128)?;
            for (k, tau) in taus.iter().enumerate() {
                let ev = eval_task(Actions::Transformation { tau, p }, task, d)?;
                consider(ev, vec![k], &mut best);
            }
        }
        Family::DeterministicGrid { p, action_grid } => {
            let cells = CellValues::<S>::from_labels(task, p, d, action_grid)?;
            return cells.brute_force(task, eps, ENUMERATION_BUDGET);
        }
    }
    Ok(best)
}

fn check_budget(needed: u128) -> Result<()> {
    if needed > ENUMERATION_BUDGET {
        Err(Error::Budget {
            needed,
            limit: ENUMERATION_BUDGET,
        })
    } else {
        Ok(())
    }
}

/// Objective and constraint contributions of each cell under each grid action.
/// Task values are additive over cells, so any deterministic transformation is
/// scored by summing one entry per cell.
#[derive(Debug, Clone)]
pub struct CellValues<S> {
    pub cells: Vec<(usize, usize)>,
    pub grid: Vec<f64>,
    pub action_grid: Vec<f64>,
    /// `values[cell][a][0]` is the objective, `[1 + j]` constraint `j`.
    pub values: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> CellValues<S> {
    /// From per-cell label masses `masses[(i, k)] = [m0, m1]` (any normalization).
    pub fn from_masses(task: &Task, grid: Vec<f64>, masses: Vec<((usize, usize), [S; 2])>, action_grid: &[f64]) -> Self {
        let total = masses.iter().fold(S::zero(), |acc, (_, m)| acc + m[0].clone() + m[1].clone());
        let fs: Vec<&GroupFunction> = std::iter::once(&task.objective).chain(&task.constraints).collect();
        let mut cells = Vec::new();
        let mut values = Vec::new();
        for ((i, k), [m0, m1]) in masses {
            if (m0.clone() + m1.clone()).is_zero() {
                continue;
            }
            let row = action_grid
                .iter()
                .map(|&a| {
                    let a = S::from_real(a);
                    fs.iter()
                        .map(|f| (m1.clone() * f.value(i, &a, 1) + m0.clone() * f.value(i, &a, 0)) / total.clone())
                        .collect()
                })
                .collect();
            cells.push((i, k));
            values.push(row);
        }
        CellValues {
            cells,
            grid,
            action_grid: action_grid.to_vec(),
            values,
        }
    }

    /// Cells of `p` on `d` weighted by the true labels.
    pub fn from_labels(task: &Task, p: &Predictor, d: &Dataset, action_grid: &[f64]) -> Result<Self> {
        CellValues::from_rows(task, p, d, action_grid, |s, _| S::from_real(s.y()))
    }

    /// Cells of `p` on `d` under the simulated distribution `D_p`.
    pub fn from_simulated(task: &Task, p: &Predictor, d: &Dataset, action_grid: &[f64]) -> Result<Self> {
        CellValues::from_rows(task, p, d, action_grid, |_, v| S::from_real(v))
    }

    fn from_rows(
        task: &Task,
        p: &Predictor,
        d: &Dataset,
        action_grid: &[f64],
        py1: impl Fn(&crate::model::Sample, f64) -> S,
    ) -> Result<Self> {
        let grid = p.range_on(d)?;
        let preds = p.evaluate_dataset(d)?;
        let mut masses: Vec<((usize, usize), [S; 2])> = Vec::new();
        for i in 1..=d.t() {
            for k in 0..grid.len() {
                masses.push(((i, k), [S::zero(), S::zero()]));
            }
        }
        for (s, v) in d.samples().iter().zip(preds) {
            let k = grid.iter().position(|&g| (g - v).abs() <= 1e-12).expect("value in range");
            let w = S::from_real(s.weight);
            let q = py1(s, v);
            let slot = &mut masses[(s.group - 1) * grid.len() + k].1;
            slot[1] = slot[1].clone() + w.clone() * q.clone();
            slot[0] = slot[0].clone() + w * (S::one() - q);
        }
        Ok(CellValues::from_masses(task, grid, masses, action_grid))
    }

    pub fn from_table(task: &Task, pt: &ProbTable, action_grid: &[f64]) -> Self {
        let masses = pt
            .cells()
            .map(|(i, k)| ((i, k), [S::from_real(pt.prob(i, k, 0)), S::from_real(pt.prob(i, k, 1))]))
            .collect();
        CellValues::from_masses(task, pt.grid.clone(), masses, action_grid)
    }

    pub fn candidate_count(&self) -> u128 {
        (self.action_grid.len() as u128)
            .checked_pow(self.cells.len() as u32)
            .unwrap_or(u128::MAX)
    }

    /// Task values of the assignment `choice[cell] = action index`.
    pub fn score(&self, task: &Task, choice: &[usize]) -> TaskEval<S> {
        let width = self.values.first().map_or(1 + task.constraints.len(), |v| v[0].len());
        let mut acc = vec![S::zero(); width];
        for (cell, &a) in choice.iter().enumerate() {
            for (x, v) in acc.iter_mut().zip(&self.values[cell][a]) {
                *x = x.clone() + v.clone();
            }
        }
        let objective = acc[0].clone();
        let slacks: Vec<S> = acc[1..].to_vec();
        let combined = task.combiner.as_ref().map(|c| {
            let x: Vec<f64> = slacks.iter().map(|s| s.to_real()).collect();
            c.value(&x)
        });
        TaskEval {
            objective,
            slacks,
            combined,
        }
    }

    /// Visits every assignment in odometer order (last cell fastest).
    pub fn for_each(&self, budget: u128, mut visit: impl FnMut(&[usize])) -> Result<()> {
        let needed = self.candidate_count();
        if needed > budget {
            return Err(Error::Budget { needed, limit: budget });
        }
        let na = self.action_grid.len();
        let mut choice = vec![0usize; self.cells.len()];
        loop {
            visit(&choice);
            let mut pos = choice.len();
            loop {
                if pos == 0 {
                    return Ok(());
                }
                pos -= 1;
                choice[pos] += 1;
                if choice[pos] < na {
                    break;
                }
                choice[pos] = 0;
            }
        }
    }

    pub fn brute_force(&self, task: &Task, eps: f64, budget: u128) -> Result<BruteForce<S>> {
        let mut best = BruteForce {
            beta: None,
            argmin: None,
            candidates: 0,
            feasible: 0,
        };
        self.for_each(budget, |choice| {
            best.candidates += 1;
            let ev = self.score(task, choice);
            if !ev.feasible(eps) {
                return;
            }
            best.feasible += 1;
            if best.beta.as_ref().map_or(true, |b| ev.objective < *b) {
                best.beta = Some(ev.objective);
                best.argmin = Some(choice.to_vec());
            }
        })?;
        Ok(best)
    }

    /// The deterministic transformation for `choice`; cells without mass take the first action.
    pub fn transformation(&self, t: usize, choice: &[usize]) -> Result<Transformation> {
        let mut table = vec![vec![Some(self.action_grid[0]); self.grid.len()]; t];
        for (&(i, k), &a) in self.cells.iter().zip(choice) {
            table[i - 1][k] = Some(self.action_grid[a]);
        }
        let lo = self.action_grid[0];
        let hi = self.action_grid[self.action_grid.len() - 1];
        Transformation::deterministic(t, self.grid.clone(), [lo, hi], table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Sample, DEFAULT_GRID_STEP};
    use crate::simulate::build_exact;
    use crate::tasks::{encode_fairness, Form};

    fn data() -> Dataset {
        Dataset::from_samples(vec![
            Sample::new("a", vec![], 1, 1),
            Sample::new("b", vec![], 1, 0),
            Sample::new("c", vec![], 2, 1),
            Sample::new("d", vec![], 2, 0),
        ])
        .unwrap()
    }

    fn tabular(values: &[(&str, f64)]) -> Predictor {
        Predictor::tabular(values.iter().map(|&(k, v)| (k, v)), DEFAULT_GRID_STEP).unwrap()
    }

    #[test]
    fn unconstrained_l1_is_bayes_rule() {
        let d = data();
        let p = tabular(&[("a", 0.25), ("b", 0.25), ("c", 0.75), ("d", 0.75)]);
        let pt = build_exact(&p, &d).unwrap();
        let task = Task::new("l1", GroupFunction::new(2, Form::L1 { scale: 1.0 }).unwrap(), vec![], None).unwrap();
        let grid = [0.0, 0.5, 1.0];
        let r = solve_randomized(&task, &pt, &grid, 0.0).unwrap();
        let tau = r.transformation.unwrap();
        assert_eq!(tau.distribution_at(1, 0.25).unwrap()[0].1, 1.0);
        assert_eq!(tau.distribution_at(2, 0.75).unwrap()[2].1, 1.0);
        assert!((r.objective - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_forces_zero_action() {
        let d = data();
        let p = Predictor::constant(0.5, DEFAULT_GRID_STEP).unwrap();
        let pt = build_exact(&p, &d).unwrap();
        let budget = encode_fairness(crate::tasks::FairnessKind::Budget, &d, 1, 0.0).unwrap();
        let task = Task::new("b", GroupFunction::new(2, Form::L1 { scale: 1.0 }).unwrap(), budget, None).unwrap();
        let r = solve_randomized(&task, &pt, &[0.0, 0.5, 1.0], 0.0).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 0.5).abs() < 1e-12);
        let tau = r.transformation.unwrap();
        assert_eq!(tau.distribution_at(1, 0.5).unwrap()[0].1, 1.0);
    }

    #[test]
    fn unconstrained_squared_rounds_to_value() {
        let d = data();
        let p = tabular(&[("a", 0.25), ("b", 0.25), ("c", 0.75), ("d", 0.75)]);
        let pt = build_exact(&p, &d).unwrap();
        let task = Task::new("sq", GroupFunction::new(2, Form::Squared { scale: 1.0 }).unwrap(), vec![], None).unwrap();
        let r = solve_deterministic_convex(&task, &pt, &default_action_grid(), 0.0).unwrap();
        let tau = r.transformation.unwrap();
        assert_eq!(tau.distribution_at(1, 0.25).unwrap(), vec![(0.25, 1.0)]);
        assert_eq!(tau.distribution_at(2, 0.75).unwrap(), vec![(0.75, 1.0)]);
    }

    #[test]
    fn nonconvex_objective_rejected_for_deterministic() {
        let d = data();
        let p = Predictor::constant(0.5, DEFAULT_GRID_STEP).unwrap();
        let pt = build_exact(&p, &d).unwrap();
        let task = Task::new("r", GroupFunction::new(2, Form::Power { q: 0.5, scale: 1.0 }).unwrap(), vec![], None).unwrap();
        assert!(matches!(
            solve_deterministic_convex(&task, &pt, &[0.0, 1.0], 0.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn empty_class_is_infinite() {
        let d = data();
        let task = Task::new("l1", GroupFunction::new(2, Form::L1 { scale: 1.0 }).unwrap(), vec![], None).unwrap();
        let class = HypothesisClass::new(vec![]).unwrap();
        let r: BruteForce<f64> = brute_force_opt(&task, &d, Family::Class(&class), 0.0).unwrap();
        assert!(r.beta.is_none());
        assert_eq!(r.beta_real(), f64::INFINITY);
    }

    #[test]
    fn grid_budget_enforced() {
        let d = data();
        let p = tabular(&[("a", 0.25), ("b", 0.5), ("c", 0.75), ("d", 1.0)]);
        let task = Task::new("l1", GroupFunction::new(2, Form::L1 { scale: 1.0 }).unwrap(), vec![], None).unwrap();
        let grid = default_action_grid();
        let r = brute_force_opt::<f64>(&task, &d, Family::DeterministicGrid { p: &p, action_grid: &grid }, 0.0);
        assert!(matches!(r, Err(Error::Budget { .. })));
    }
}

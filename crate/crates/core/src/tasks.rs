//! Objectives and constraints over (group, action, outcome).

use crate::error::{Error, Result};
use crate::model::{Dataset, Hypothesis, Predictor, Transformation};
use crate::scalar::{Exact, Scalar};
use crate::simulate::ProbTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Slack allowed when testing `sol` membership in floating point.
pub const FEAS_TOL: f64 = 1e-12;
const TAG_TOL: f64 = 1e-9;
const CHECK_POINTS: usize = 65;

fn unit() -> f64 {
    1.0
}

/// Closed form or table for `f'(i, a, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Form {
    /// `scale * |a - y|`
    L1 {
        #[serde(default = "unit")]
        scale: f64,
    },
    /// `scale * (a - y)^2`
    Squared {
        #[serde(default = "unit")]
        scale: f64,
    },
    /// `scale * |a - y|^q`
    Power {
        q: f64,
        #[serde(default = "unit")]
        scale: f64,
    },
    Linear(LinearConstraint),
    /// `values[i][k] = [f'(i, a_k, 0), f'(i, a_k, 1)]`; linear interpolation between
    /// grid actions, clamped outside.
    Table {
        action_grid: Vec<f64>,
        values: Vec<Vec<[f64; 2]>>,
    },
    PerGroup {
        forms: Vec<Form>,
    },
}

/// `tau1(i) + tau2(i) a + tau3(i) a y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub tau3: Vec<f64>,
}

impl LinearConstraint {
    pub fn new(tau1: Vec<f64>, tau2: Vec<f64>, tau3: Vec<f64>) -> Result<Self> {
        let c = LinearConstraint { tau1, tau2, tau3 };
        c.validate(c.tau1.len())?;
        Ok(c)
    }

    fn validate(&self, t: usize) -> Result<()> {
        if self.tau1.len() != t || self.tau2.len() != t || self.tau3.len() != t {
            return Err(Error::Spec(format!("linear coefficients must have length {t}")));
        }
        if self.tau1.iter().chain(&self.tau2).chain(&self.tau3).any(|c| !c.is_finite()) {
            return Err(Error::Spec("linear coefficients must be finite".into()));
        }
        if let Some(c) = self.tau3.iter().find(|c| c.abs() > 1.0) {
            return Err(Error::Spec(format!("|tau3| must be at most 1, got {c}")));
        }
        Ok(())
    }
}

impl Form {
    fn validate(&self, t: usize) -> Result<()> {
        let finite_scale = |s: f64| {
            if s.is_finite() {
                Ok(())
            } else {
                Err(Error::Spec(format!("invalid scale {s}")))
            }
        };
        match self {
            Form::L1 { scale } | Form::Squared { scale } => finite_scale(*scale),
            Form::Power { q, scale } => {
                if !(q.is_finite() && *q > 0.0) {
                    return Err(Error::Spec(format!("power exponent must be positive, got {q}")));
                }
                finite_scale(*scale)
            }
            Form::Linear(c) => c.validate(t),
            Form::Table {
                action_grid,
                values,
            } => {
                if action_grid.is_empty() || action_grid.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::Spec("table action grid must be non-empty and increasing".into()));
                }
                if values.len() != t || values.iter().any(|r| r.len() != action_grid.len()) {
                    return Err(Error::Spec(format!(
                        "table must have {t} rows of {} entries",
                        action_grid.len()
                    )));
                }
                if values.iter().flatten().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Spec("table values must be finite".into()));
                }
                Ok(())
            }
            Form::PerGroup { forms } => {
                if forms.len() != t {
                    return Err(Error::Spec(format!("per-group form needs {t} entries")));
                }
                forms.iter().try_for_each(|f| f.validate(t))
            }
        }
    }

    fn value<S: Scalar>(&self, i: usize, a: &S, y: u8) -> S {
        let y_s = if y == 1 { S::one() } else { S::zero() };
        match self {
            Form::L1 { scale } => S::from_real(*scale) * (a.clone() - y_s).abs(),
            Form::Squared { scale } => {
                let d = a.clone() - y_s;
                S::from_real(*scale) * d.clone() * d
            }
            Form::Power { q, scale } => {
                let d = (a.clone() - y_s).abs();
                let pow = if q.fract() == 0.0 && *q <= 16.0 {
                    d.powu(*q as u32)
                } else {
                    S::from_real(d.to_real().powf(*q))
                };
                S::from_real(*scale) * pow
            }
            Form::Linear(c) => {
                let k = i - 1;
                S::from_real(c.tau1[k])
                    + S::from_real(c.tau2[k]) * a.clone()
                    + S::from_real(c.tau3[k]) * a.clone() * y_s
            }
            Form::Table {
                action_grid,
                values,
            } => {
                let row = &values[i - 1];
                let x = a.to_real();
                let y = y as usize;
                if let Some(k) = action_grid.iter().position(|&g| (g - x).abs() <= TAG_TOL) {
                    return S::from_real(row[k][y]);
                }
                let hi = action_grid.partition_point(|&g| g < x);
                if hi == 0 {
                    return S::from_real(row[0][y]);
                }
                if hi == action_grid.len() {
                    return S::from_real(row[hi - 1][y]);
                }
                let (a0, a1) = (action_grid[hi - 1], action_grid[hi]);
                let w = (x - a0) / (a1 - a0);
                S::from_real(row[hi - 1][y] * (1.0 - w) + row[hi][y] * w)
            }
            Form::PerGroup { forms } => forms[i - 1].value(i, a, y),
        }
    }

    /// Actions on which tags are checked.
    fn check_grid(&self) -> Vec<f64> {
        match self {
            Form::Table { action_grid, .. } => action_grid.clone(),
            Form::PerGroup { forms } if forms.iter().all(|f| matches!(f, Form::Table { .. })) => {
                let mut g: Vec<f64> = forms.iter().flat_map(|f| f.check_grid()).collect();
                g.sort_by(f64::total_cmp);
                g.dedup();
                g
            }
            _ => (0..CHECK_POINTS).map(|k| k as f64 / (CHECK_POINTS - 1) as f64).collect(),
        }
    }

    fn unbounded_slope(&self) -> bool {
        match self {
            Form::Power { q, scale } => *q < 1.0 && *scale != 0.0,
            Form::PerGroup { forms } => forms.iter().any(Form::unbounded_slope),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Special {
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tags {
    pub convex: bool,
    pub special: Option<Special>,
    pub lipschitz: Option<f64>,
    pub bounded_difference: Option<f64>,
}

/// `f(x, a, y) = f'(g(x), a, y)` together with its verified tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFunction {
    pub t: usize,
    pub form: Form,
    pub tags: Tags,
}

impl GroupFunction {
    /// Builds the function and derives its tags on the check grid.
    pub fn new(t: usize, form: Form) -> Result<Self> {
        if t == 0 {
            return Err(Error::Spec("t must be positive".into()));
        }
        form.validate(t)?;
        let mut f = GroupFunction {
            t,
            form,
            tags: Tags::default(),
        };
        f.tags = f.derive_tags();
        Ok(f)
    }

    /// Builds the function with caller-declared tags, rejecting any claim the
    /// check grid refutes.
    pub fn with_tags(t: usize, form: Form, declared: Tags) -> Result<Self> {
        let mut f = GroupFunction::new(t, form)?;
        let derived = &f.tags;
        if declared.convex && !derived.convex {
            return Err(Error::Spec("declared convex, but midpoint convexity fails".into()));
        }
        if let Some(sp) = &declared.special {
            if sp.tau1.len() != t || sp.tau2.len() != t {
                return Err(Error::Spec(format!("special coefficients must have length {t}")));
            }
            if sp.tau1.iter().chain(&sp.tau2).any(|c| c.abs() > 1.0) {
                return Err(Error::Spec("special coefficients must lie in [-1, 1]".into()));
            }
            let grid = f.form.check_grid();
            for i in 1..=t {
                for &a in &grid {
                    let want = sp.tau1[i - 1] + sp.tau2[i - 1] * a;
                    let got = f.partial(i, a);
                    if (got - want).abs() > TAG_TOL {
                        return Err(Error::Spec(format!(
                            "declared special coefficients disagree at group {i}, a = {a}: {got} vs {want}"
                        )));
                    }
                }
            }
        }
        if let Some(b) = declared.bounded_difference {
            let max = derived.bounded_difference.unwrap_or(f64::INFINITY);
            if max > b + TAG_TOL {
                return Err(Error::Spec(format!("|df| reaches {max}, above declared bound {b}")));
            }
        }
        if let Some(k) = declared.lipschitz {
            let max = derived.lipschitz.unwrap_or(f64::INFINITY);
            if max > k + TAG_TOL {
                return Err(Error::Spec(format!("slope reaches {max}, above declared constant {k}")));
            }
        }
        f.tags = Tags {
            convex: declared.convex,
            special: declared.special.or(f.tags.special.take()),
            lipschitz: declared.lipschitz.or(f.tags.lipschitz),
            bounded_difference: declared.bounded_difference.or(f.tags.bounded_difference),
        };
        Ok(f)
    }

    pub fn linear(c: LinearConstraint) -> Result<Self> {
        GroupFunction::new(c.tau1.len(), Form::Linear(c))
    }

    pub fn value<S: Scalar>(&self, i: usize, a: &S, y: u8) -> S {
        self.form.value(i, a, y)
    }

    pub fn eval(&self, i: usize, a: f64, y: u8) -> f64 {
        self.form.value(i, &a, y)
    }

    pub fn partial(&self, i: usize, a: f64) -> f64 {
        self.eval(i, a, 1) - self.eval(i, a, 0)
    }

    pub fn partial_exact<S: Scalar>(&self, i: usize, a: &S) -> S {
        self.value(i, a, 1) - self.value(i, a, 0)
    }

    pub fn check_grid(&self) -> Vec<f64> {
        self.form.check_grid()
    }

    /// Linear coefficients, when the form is linear.
    pub fn as_linear(&self) -> Option<&LinearConstraint> {
        match &self.form {
            Form::Linear(c) => Some(c),
            _ => None,
        }
    }

    /// True when `f'(i, ., 1)` is nonincreasing and `f'(i, ., 0)` nondecreasing on `grid`.
    pub fn is_rank_preserving_on(&self, grid: &[f64]) -> bool {
        (1..=self.t).all(|i| {
            grid.windows(2).all(|w| {
                self.eval(i, w[1], 1) <= self.eval(i, w[0], 1) + TAG_TOL
                    && self.eval(i, w[1], 0) + TAG_TOL >= self.eval(i, w[0], 0)
            })
        })
    }

    /// True when `f'(i, ., y)` is affine on the check grid for every group and outcome.
    pub fn is_affine(&self) -> bool {
        if self.as_linear().is_some() {
            return true;
        }
        let grid = self.check_grid();
        (1..=self.t).all(|i| {
            [0u8, 1].iter().all(|&y| {
                grid.windows(3).all(|w| {
                    let chord = ((w[2] - w[1]) * self.eval(i, w[0], y) + (w[1] - w[0]) * self.eval(i, w[2], y))
                        / (w[2] - w[0]);
                    (self.eval(i, w[1], y) - chord).abs() <= TAG_TOL
                })
            })
        })
    }

    /// True when `f` does not depend on the outcome.
    pub fn is_outcome_oblivious(&self) -> bool {
        let grid = self.check_grid();
        (1..=self.t).all(|i| grid.iter().all(|&a| self.partial(i, a).abs() <= TAG_TOL))
    }

    fn derive_tags(&self) -> Tags {
        let grid = self.check_grid();
        let mut convex = true;
        let mut slope: f64 = 0.0;
        let mut diff: f64 = 0.0;
        let mut special = Some(Special {
            tau1: Vec::with_capacity(self.t),
            tau2: Vec::with_capacity(self.t),
        });
        for i in 1..=self.t {
            for y in [0u8, 1] {
                let vals: Vec<f64> = grid.iter().map(|&a| self.eval(i, a, y)).collect();
                for k in 1..grid.len() {
                    slope = slope.max(((vals[k] - vals[k - 1]) / (grid[k] - grid[k - 1])).abs());
                }
                for k in 1..grid.len().saturating_sub(1) {
                    let (a0, a1, a2) = (grid[k - 1], grid[k], grid[k + 1]);
                    let chord = ((a2 - a1) * vals[k - 1] + (a1 - a0) * vals[k + 1]) / (a2 - a0);
                    if vals[k] > chord + TAG_TOL {
                        convex = false;
                    }
                }
            }
            let d: Vec<f64> = grid.iter().map(|&a| self.partial(i, a)).collect();
            diff = d.iter().fold(diff, |m, x| m.max(x.abs()));
            if let Some(sp) = special.as_mut() {
                let (a0, an) = (grid[0], grid[grid.len() - 1]);
                let t2 = if grid.len() > 1 { (d[d.len() - 1] - d[0]) / (an - a0) } else { 0.0 };
                let t1 = d[0] - t2 * a0;
                let fits = grid.iter().zip(&d).all(|(&a, &x)| (t1 + t2 * a - x).abs() <= TAG_TOL);
                if fits && t1.abs() <= 1.0 + TAG_TOL && t2.abs() <= 1.0 + TAG_TOL {
                    sp.tau1.push(t1.clamp(-1.0, 1.0));
                    sp.tau2.push(t2.clamp(-1.0, 1.0));
                } else {
                    special = None;
                }
            }
        }
        Tags {
            convex,
            special,
            lipschitz: (!self.form.unbounded_slope()).then_some(slope),
            bounded_difference: Some(diff),
        }
    }
}

/// `∂f(i, a) = f'(i, a, 1) - f'(i, a, 0)`.
pub fn partial_f(f: &GroupFunction, i: usize, a: f64) -> f64 {
    f.partial(i, a)
}

/// 1-Lipschitz combination of constraint slacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Combiner {
    Max,
    /// `T log Σ exp(x_j / T)`, an upper bound on the max within `T log m`.
    SmoothedMax { temperature: f64 },
    WeightedSum { weights: Vec<f64> },
}

impl Combiner {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Combiner::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Combiner::SmoothedMax { temperature } => {
                let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = x.iter().map(|v| ((v - m) / temperature).exp()).sum();
                m + temperature * s.ln()
            }
            Combiner::WeightedSum { weights } => weights.iter().zip(x).map(|(w, v)| w * v).sum(),
        }
    }

    /// A (sub)gradient of [`Combiner::value`] at `x`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Combiner::Max => {
                let mut g = vec![0.0; x.len()];
                if let Some((k, _)) = x
                    .iter()
                    .enumerate()
                    .fold(None, |best: Option<(usize, f64)>, (k, &v)| match best {
                        Some((_, b)) if b >= v => best,
                        _ => Some((k, v)),
                    })
                {
                    g[k] = 1.0;
                }
                g
            }
            Combiner::SmoothedMax { temperature } => {
                let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = x.iter().map(|v| ((v - m) / temperature).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            }
            Combiner::WeightedSum { weights } => weights.clone(),
        }
    }

    /// Checks the sup-norm Lipschitz bound on seeded random pairs in `[-1, 1]^m`.
    pub fn verify(&self, m: usize) -> Result<()> {
        match self {
            Combiner::SmoothedMax { temperature } if !(*temperature > 0.0) => {
                return Err(Error::Spec("smoothed max needs a positive temperature".into()))
            }
            Combiner::WeightedSum { weights } if weights.len() != m => {
                return Err(Error::Spec(format!("weighted sum needs {m} weights")))
            }
            _ => {}
        }
        if m == 0 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..256 {
            let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let gap = (self.value(&x) - self.value(&y)).abs();
            if gap > dist * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Spec(format!(
                    "combiner is not 1-Lipschitz: |Γ(x) - Γ(y)| = {gap} > {dist}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub objective: GroupFunction,
    pub constraints: Vec<GroupFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combiner: Option<Combiner>,
}

impl Task {
    pub fn new(
        name: impl Into<String>,
        objective: GroupFunction,
        constraints: Vec<GroupFunction>,
        combiner: Option<Combiner>,
    ) -> Result<Self> {
        let t = objective.t;
        if let Some(f) = constraints.iter().find(|f| f.t != t) {
            return Err(Error::Spec(format!("constraint has t = {}, objective has t = {t}", f.t)));
        }
        if let Some(c) = &combiner {
            c.verify(constraints.len())?;
        }
        Ok(Task {
            name: name.into(),
            objective,
            constraints,
            combiner,
        })
    }

    pub fn t(&self) -> usize {
        self.objective.t
    }

    /// All constraints linear in the action.
    pub fn constraints_linear(&self) -> bool {
        self.constraints.iter().all(|f| f.as_linear().is_some())
    }
}

/// Objective value, constraint slacks and the combined slack of an action rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEval<S> {
    pub objective: S,
    pub slacks: Vec<S>,
    pub combined: Option<f64>,
}

impl<S: Scalar> TaskEval<S> {
    /// Membership in `sol(T, beta, eps)`.
    pub fn in_sol(&self, beta: f64, eps: f64) -> bool {
        self.objective.to_real() <= beta + FEAS_TOL && self.feasible(eps)
    }

    pub fn feasible(&self, eps: f64) -> bool {
        match self.combined {
            Some(c) => c <= eps + FEAS_TOL,
            None => self.slacks.iter().all(|s| s.to_real() <= eps + FEAS_TOL),
        }
    }

    pub fn max_slack(&self) -> f64 {
        self.slacks.iter().map(|s| s.to_real()).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_real(&self) -> TaskEval<f64> {
        TaskEval {
            objective: self.objective.to_real(),
            slacks: self.slacks.iter().map(|s| s.to_real()).collect(),
            combined: self.combined,
        }
    }
}

/// How an action is chosen for each sample.
#[derive(Debug, Clone, Copy)]
pub enum Actions<'a> {
    Transformation {
        tau: &'a Transformation,
        p: &'a Predictor,
    },
    Hypothesis(&'a Hypothesis),
    PerSample(&'a [f64]),
}

impl Actions<'_> {
    /// Per-sample action distributions as `(action, probability)`.
    pub fn distributions(&self, d: &Dataset) -> Result<Vec<Vec<(f64, f64)>>> {
        match self {
            Actions::Transformation { tau, p } => d
                .samples()
                .iter()
                .map(|s| tau.distribution_at(s.group, p.evaluate(s)?))
                .collect(),
            Actions::Hypothesis(h) => d.samples().iter().map(|s| Ok(vec![(h.eval(s)?, 1.0)])).collect(),
            Actions::PerSample(a) => {
                if a.len() != d.len() {
                    return Err(Error::input(format!("{} actions for {} samples", a.len(), d.len())));
                }
                Ok(a.iter().map(|&x| vec![(x, 1.0)]).collect())
            }
        }
    }
}

struct Unit<S> {
    weight: S,
    group: usize,
    dist: Vec<(S, S)>,
    /// Probability that the outcome is 1.
    py1: S,
}

fn expected<S: Scalar>(f: &GroupFunction, u: &Unit<S>) -> S {
    let mut acc = S::zero();
    for (a, q) in &u.dist {
        if q.is_zero() {
            continue;
        }
        let mut v = S::zero();
        if !u.py1.is_zero() {
            v = v + u.py1.clone() * f.value(u.group, a, 1);
        }
        let p0 = S::one() - u.py1.clone();
        if !p0.is_zero() {
            v = v + p0 * f.value(u.group, a, 0);
        }
        acc = acc + q.clone() * v;
    }
    acc
}

fn eval_units<S: Scalar>(task: &Task, units: &[Unit<S>]) -> TaskEval<S> {
    let total = units.iter().fold(S::zero(), |acc, u| acc + u.weight.clone());
    let mean = |f: &GroupFunction| {
        units
            .iter()
            .fold(S::zero(), |acc, u| acc + u.weight.clone() * expected(f, u))
            / total.clone()
    };
    let objective = mean(&task.objective);
    let slacks: Vec<S> = task.constraints.iter().map(mean).collect();
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

fn to_dist<S: Scalar>(dist: &[(f64, f64)]) -> Vec<(S, S)> {
    dist.iter().map(|&(a, q)| (S::from_real(a), S::from_real(q))).collect()
}

/// Evaluates `task` on the labeled dataset `d`, randomized actions in expectation.
pub fn eval_task<S: Scalar>(actions: Actions<'_>, task: &Task, d: &Dataset) -> Result<TaskEval<S>> {
    let dists = actions.distributions(d)?;
    let units: Vec<Unit<S>> = d
        .samples()
        .iter()
        .zip(&dists)
        .map(|(s, dist)| Unit {
            weight: S::from_real(s.weight),
            group: s.group,
            dist: to_dist(dist),
            py1: S::from_real(s.y()),
        })
        .collect();
    Ok(eval_units(task, &units))
}

/// Evaluates `task` on the simulated distribution `D_p` built from `d`'s marginal.
pub fn eval_task_simulated<S: Scalar>(
    actions: Actions<'_>,
    task: &Task,
    p: &Predictor,
    d: &Dataset,
) -> Result<TaskEval<S>> {
    let dists = actions.distributions(d)?;
    let preds = p.evaluate_dataset(d)?;
    let units: Vec<Unit<S>> = d
        .samples()
        .iter()
        .zip(&dists)
        .zip(preds)
        .map(|((s, dist), v)| Unit {
            weight: S::from_real(s.weight),
            group: s.group,
            dist: to_dist(dist),
            py1: S::from_real(v),
        })
        .collect();
    Ok(eval_units(task, &units))
}

/// Evaluates a transformation on a probability table; cells with zero mass may be undefined.
pub fn eval_on_table<S: Scalar>(tau: &Transformation, task: &Task, pt: &ProbTable) -> Result<TaskEval<S>> {
    let mut units = Vec::new();
    for (i, k) in pt.cells() {
        let mass = pt.mass(i, k);
        if mass <= 0.0 {
            continue;
        }
        let v = pt.grid[k];
        let dist = tau.distribution_at(i, v)?;
        let w = S::from_real(mass);
        let py1 = S::from_real(pt.prob(i, k, 1)) / w.clone();
        units.push(Unit {
            weight: w,
            group: i,
            dist: to_dist(&dist),
            py1,
        });
    }
    if units.is_empty() {
        return Err(Error::input("probability table has no mass"));
    }
    Ok(eval_units(task, &units))
}

/// `|(E_D f - E_{D_p} f) - E_D[(y - p(x)) ∂f(x, c(x))]|` for a deterministic rule.
pub fn check_transfer_identity(f: &GroupFunction, c: Actions<'_>, p: &Predictor, d: &Dataset) -> Result<f64> {
    let dists = c.distributions(d)?;
    let preds = p.evaluate_dataset(d)?;
    let total = d.total_weight();
    let (mut on_d, mut on_dp, mut rhs) = (0.0, 0.0, 0.0);
    for ((s, dist), v) in d.samples().iter().zip(&dists).zip(preds) {
        let positive: Vec<&(f64, f64)> = dist.iter().filter(|(_, q)| *q > 0.0).collect();
        if positive.len() != 1 {
            return Err(Error::contract("transfer identity needs a deterministic action function"));
        }
        let a = positive[0].0;
        let w = s.weight / total;
        on_d += w * f.eval(s.group, a, s.label);
        on_dp += w * (v * f.eval(s.group, a, 1) + (1.0 - v) * f.eval(s.group, a, 0));
        rhs += w * (s.y() - v) * f.partial(s.group, a);
    }
    Ok(((on_d - on_dp) - rhs).abs())
}

/// Group masses and positive-label masses used by the fairness encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub mass: Vec<f64>,
    pub positive: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// From the dataset's labels.
    Labels,
    /// From the predictor's simulated labels.
    Predictor,
}

impl Rates {
    pub fn from_labels(d: &Dataset) -> Self {
        let mut r = Rates {
            mass: vec![0.0; d.t()],
            positive: vec![0.0; d.t()],
        };
        for s in d.samples() {
            r.mass[s.group - 1] += s.weight;
            r.positive[s.group - 1] += s.weight * s.y();
        }
        r
    }

    pub fn from_predictor(p: &Predictor, d: &Dataset) -> Result<Self> {
        let mut r = Rates {
            mass: vec![0.0; d.t()],
            positive: vec![0.0; d.t()],
        };
        for (s, v) in d.samples().iter().zip(p.evaluate_dataset(d)?) {
            r.mass[s.group - 1] += s.weight;
            r.positive[s.group - 1] += s.weight * v;
        }
        Ok(r)
    }

    pub fn from_probtable(pt: &ProbTable) -> Self {
        Rates {
            mass: (1..=pt.t).map(|i| (0..pt.grid.len()).map(|k| pt.mass(i, k)).sum()).collect(),
            positive: (1..=pt.t)
                .map(|i| (0..pt.grid.len()).map(|k| pt.prob(i, k, 1)).sum())
                .collect(),
        }
    }

    pub fn t(&self) -> usize {
        self.mass.len()
    }

    fn share(num: f64, den: f64, what: &str) -> Result<f64> {
        if den > 0.0 {
            Ok(num / den)
        } else {
            Err(Error::RateUndefined(format!("{what}: conditioning event has zero mass")))
        }
    }

    /// `r_i = Pr[g = i]`.
    pub fn group(&self, i: usize) -> Result<f64> {
        Rates::share(self.mass[i - 1], self.mass.iter().sum(), "group rate")
    }

    /// `r_i^+ = Pr[g = i | y = 1]`.
    pub fn positive_share(&self, i: usize) -> Result<f64> {
        Rates::share(self.positive[i - 1], self.positive.iter().sum(), "positive-label rate")
    }

    /// `r_i^- = Pr[g = i | y = 0]`.
    pub fn negative_share(&self, i: usize) -> Result<f64> {
        let neg: Vec<f64> = self.mass.iter().zip(&self.positive).map(|(m, p)| m - p).collect();
        Rates::share(neg[i - 1], neg.iter().sum(), "negative-label rate")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessKind {
    StatisticalParity,
    EqualTpr,
    EqualFpr,
    Budget,
}

/// One-sided linear constraints expressing `|E f| <= alpha` (or `E c <= alpha` for a budget),
/// with rates from the labels of `d`.
pub fn encode_fairness(kind: FairnessKind, d: &Dataset, target_group: usize, alpha: f64) -> Result<Vec<GroupFunction>> {
    if d.is_empty() {
        return Err(Error::input("fairness encoding needs a non-empty dataset"));
    }
    encode_fairness_with(kind, &Rates::from_labels(d), target_group, alpha)
}

pub fn encode_fairness_with(
    kind: FairnessKind,
    rates: &Rates,
    target_group: usize,
    alpha: f64,
) -> Result<Vec<GroupFunction>> {
    let t = rates.t();
    if kind == FairnessKind::Budget {
        let c = LinearConstraint::new(vec![-alpha; t], vec![1.0; t], vec![0.0; t])?;
        return Ok(vec![GroupFunction::linear(c)?]);
    }
    if target_group == 0 || target_group > t {
        return Err(Error::input(format!("target group {target_group} outside 1..={t}")));
    }
    let indicator = |r: f64| -> Vec<f64> {
        (1..=t).map(|k| f64::from(u8::from(k == target_group)) - r).collect()
    };
    let (tau2, tau3) = match kind {
        FairnessKind::StatisticalParity => (indicator(rates.group(target_group)?), vec![0.0; t]),
        FairnessKind::EqualTpr => (vec![0.0; t], indicator(rates.positive_share(target_group)?)),
        FairnessKind::EqualFpr => {
            let c = indicator(rates.negative_share(target_group)?);
            let neg = c.iter().map(|x| -x).collect();
            (c, neg)
        }
        FairnessKind::Budget => unreachable!(),
    };
    let negate = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    let plus = LinearConstraint::new(vec![-alpha; t], tau2.clone(), tau3.clone())?;
    let minus = LinearConstraint::new(vec![-alpha; t], negate(&tau2), negate(&tau3))?;
    Ok(vec![GroupFunction::linear(plus)?, GroupFunction::linear(minus)?])
}

/// A constraint entry of a task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstraintSpec {
    Fairness { fairness: FairnessSpec },
    Budget { budget: f64 },
    Form(Form),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub kind: FairnessKind,
    pub group: usize,
    #[serde(default)]
    pub alpha: f64,
}

/// Task file contents before fairness rates are resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(default)]
    pub name: String,
    pub objective: Form,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub combiner: Option<Combiner>,
    #[serde(default)]
    pub rates: Option<RateMode>,
}

impl TaskSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        TaskSpec::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn needs_rates(&self) -> bool {
        self.constraints
            .iter()
            .any(|c| matches!(c, ConstraintSpec::Fairness { fairness } if fairness.kind != FairnessKind::Budget))
    }

    /// Builds the task on `d`'s groups, with fairness rates from its labels or from `p`.
    pub fn resolve_on(&self, d: &Dataset, p: &Predictor) -> Result<Task> {
        let rates = match (self.needs_rates(), self.rates.unwrap_or(RateMode::Labels)) {
            (false, _) => None,
            (true, RateMode::Labels) => Some(Rates::from_labels(d)),
            (true, RateMode::Predictor) => Some(Rates::from_predictor(p, d)?),
        };
        self.resolve(d.t(), rates.as_ref())
    }

    /// Builds the task for `t` groups; fairness encoders read `rates`.
    pub fn resolve(&self, t: usize, rates: Option<&Rates>) -> Result<Task> {
        let objective = GroupFunction::new(t, self.objective.clone())?;
        let mut constraints = Vec::new();
        for c in &self.constraints {
            match c {
                ConstraintSpec::Form(f) => constraints.push(GroupFunction::new(t, f.clone())?),
                ConstraintSpec::Budget { budget } => {
                    let r = Rates {
                        mass: vec![1.0; t],
                        positive: vec![0.0; t],
                    };
                    constraints.extend(encode_fairness_with(FairnessKind::Budget, &r, 1, *budget)?);
                }
                ConstraintSpec::Fairness { fairness } => {
                    let r = rates.ok_or_else(|| Error::input("fairness constraints need rates"))?;
                    if r.t() != t {
                        return Err(Error::input(format!("rates cover {} groups, task has {t}", r.t())));
                    }
                    constraints.extend(encode_fairness_with(fairness.kind, r, fairness.group, fairness.alpha)?);
                }
            }
        }
        let name = if self.name.is_empty() { "task".to_string() } else { self.name.clone() };
        Task::new(name, objective, constraints, self.combiner.clone())
    }
}

/// Convenience for exact evaluation.
pub fn eval_task_exact(actions: Actions<'_>, task: &Task, d: &Dataset) -> Result<TaskEval<Exact>> {
    eval_task(actions, task, d)
}

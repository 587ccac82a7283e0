//! Rank-preserving post-processing of transformations.
//!
//! Corrections act on adjacent inverted value pairs within a group and are
//! repeated until no inversion remains. Cell masses and conditional label
//! means come from the probability table of the simulated distribution.

use crate::error::{Error, Result};
use crate::model::{Dataset, Entries, Predictor, Transformation};
use crate::scalar::Scalar;
use crate::simulate::ProbTable;
use crate::tasks::Task;
use serde::Serialize;

const TOL: f64 = 1e-9;

/// Group and the two prediction values of a rank inversion, `higher > lower`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inversion {
    pub group: usize,
    pub higher: f64,
    pub lower: f64,
}

/// The first pair `(i, v, v')` with `v > v'` whose actions are out of order;
/// for randomized cells, the first adjacent pair where first-order stochastic
/// dominance fails at some grid threshold.
pub fn first_inversion(tau: &Transformation) -> Option<Inversion> {
    for i in 1..=tau.t {
        let defined: Vec<usize> = (0..tau.grid.len()).filter(|&k| tau.cell(i, k).is_some()).collect();
        match &tau.entries {
            Entries::Deterministic { table, .. } => {
                let row = &table[i - 1];
                for (pos, &k) in defined.iter().enumerate() {
                    for &kp in &defined[..pos] {
                        if row[k].unwrap() < row[kp].unwrap() - TOL {
                            return Some(Inversion {
                                group: i,
                                higher: tau.grid[k],
                                lower: tau.grid[kp],
                            });
                        }
                    }
                }
            }
            Entries::Randomized { table, .. } => {
                let row = &table[i - 1];
                for w in defined.windows(2) {
                    let (lo, hi) = (row[w[0]].as_ref().unwrap(), row[w[1]].as_ref().unwrap());
                    if !dominates(hi, lo) {
                        return Some(Inversion {
                            group: i,
                            higher: tau.grid[w[1]],
                            lower: tau.grid[w[0]],
                        });
                    }
                }
            }
        }
    }
    None
}

/// Number of inverted value pairs, counted as in [`first_inversion`].
pub fn count_inversions(tau: &Transformation) -> usize {
    let mut n = 0;
    for i in 1..=tau.t {
        let defined: Vec<usize> = (0..tau.grid.len()).filter(|&k| tau.cell(i, k).is_some()).collect();
        match &tau.entries {
            Entries::Deterministic { table, .. } => {
                let row = &table[i - 1];
                for (pos, &k) in defined.iter().enumerate() {
                    n += defined[..pos].iter().filter(|&&kp| row[k].unwrap() < row[kp].unwrap() - TOL).count();
                }
            }
            Entries::Randomized { table, .. } => {
                let row = &table[i - 1];
                n += defined
                    .windows(2)
                    .filter(|w| !dominates(row[w[1]].as_ref().unwrap(), row[w[0]].as_ref().unwrap()))
                    .count();
            }
        }
    }
    n
}

pub fn is_rank_preserving(tau: &Transformation) -> bool {
    first_inversion(tau).is_none()
}

/// `Pr[hi >= g] >= Pr[lo >= g]` at every grid threshold.
fn dominates(hi: &[f64], lo: &[f64]) -> bool {
    let (mut th, mut tl) = (0.0, 0.0);
    for k in (0..hi.len()).rev() {
        th += hi[k];
        tl += lo[k];
        if th < tl - TOL {
            return false;
        }
    }
    true
}

/// Empirical `E[y | p = v]` strictly increases over the populated levels of `p` on `d`.
pub fn is_monotone_predictor(p: &Predictor, d: &Dataset) -> Result<bool> {
    let grid = p.range_on(d)?;
    let mut mass = vec![0.0; grid.len()];
    let mut pos = vec![0.0; grid.len()];
    for (s, v) in d.samples().iter().zip(p.evaluate_dataset(d)?) {
        let k = grid.iter().position(|&g| (g - v).abs() <= 1e-12).expect("value in range");
        mass[k] += s.weight;
        pos[k] += s.weight * s.y();
    }
    let means: Vec<f64> = mass.iter().zip(&pos).filter(|(m, _)| **m > 0.0).map(|(m, p)| p / m).collect();
    Ok(means.windows(2).all(|w| w[1] > w[0]))
}

/// `Pr[g = i, p = v]` summed in the working arithmetic.
pub fn cell_mass<S: Scalar>(pt: &ProbTable, i: usize, k: usize) -> S {
    S::from_real(pt.prob(i, k, 0)) + S::from_real(pt.prob(i, k, 1))
}

/// Quantities of one corrected pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankContext<S> {
    /// `Pr[p = v | g = i, p in {v, v'}]`
    pub beta: S,
    pub q_v: S,
    pub q_vp: S,
    /// Pooled action histogram (randomized corrections only).
    pub beta_a: Vec<S>,
    pub u: Vec<S>,
    pub u_prime: Vec<S>,
}

impl<S: Scalar> RankContext<S> {
    fn pair(pt: &ProbTable, i: usize, k: usize, kp: usize) -> Option<Self> {
        let m = cell_mass::<S>(pt, i, k);
        let mp = cell_mass::<S>(pt, i, kp);
        let total = m.clone() + mp.clone();
        if m.is_zero() || mp.is_zero() {
            return None;
        }
        Some(RankContext {
            beta: m.clone() / total,
            q_v: S::from_real(pt.prob(i, k, 1)) / m,
            q_vp: S::from_real(pt.prob(i, kp, 1)) / mp,
            beta_a: vec![],
            u: vec![],
            u_prime: vec![],
        })
    }
}

/// Result of one deterministic pair correction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCorrection<S> {
    pub new_v: S,
    pub new_vp: S,
    /// Weight of `tau(i, v)` in the value that is not a plain copy.
    pub gamma: S,
    /// True when the roles of `v` and `v'` were swapped (`gamma > 1`).
    pub symmetric: bool,
}

/// Corrects `tau(i, v) < tau(i, v')` while keeping
/// `beta (a2 + a3 q_v) tau(v) + (1 - beta)(a2 + a3 q_v') tau(v')` fixed.
///
/// The default case sets `tau'(v) = tau(v')` and `tau'(v') = gamma tau(v) + (1 - gamma) tau(v')`
/// with `gamma = beta (a2 + a3 q_v) / ((1 - beta)(a2 + a3 q_v'))`. When `gamma > 1` the
/// symmetric case sets `tau'(v') = tau(v)` and `tau'(v) = tau(v') / gamma + (1 - 1/gamma) tau(v)`.
pub fn correct_pair<S: Scalar>(tv: &S, tvp: &S, ctx: &RankContext<S>, alpha2: &S, alpha3: &S) -> PairCorrection<S> {
    let num = ctx.beta.clone() * (alpha2.clone() + alpha3.clone() * ctx.q_v.clone());
    let den = (S::one() - ctx.beta.clone()) * (alpha2.clone() + alpha3.clone() * ctx.q_vp.clone());
    if !den.is_zero() {
        let gamma = num.clone() / den.clone();
        if gamma <= S::one() {
            let z = gamma.clone() * tv.clone() + (S::one() - gamma.clone()) * tvp.clone();
            return PairCorrection {
                new_v: tvp.clone(),
                new_vp: z,
                gamma,
                symmetric: false,
            };
        }
    }
    // gamma > 1 (or infinite): inv = 1 / gamma in [0, 1).
    let inv = if num.is_zero() { S::zero() } else { den / num };
    let z = inv.clone() * tvp.clone() + (S::one() - inv.clone()) * tv.clone();
    let gamma = if inv.is_zero() { S::zero() } else { S::one() / inv };
    PairCorrection {
        new_v: z,
        new_vp: tv.clone(),
        gamma,
        symmetric: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterministicStep<S> {
    pub group: usize,
    pub v: f64,
    pub vp: f64,
    pub context: Option<RankContext<S>>,
    pub before: (S, S),
    pub correction: PairCorrection<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterministicCorrection<S> {
    pub transformation: Transformation,
    /// Corrected actions in the working arithmetic, `[group][value]`.
    pub actions: Vec<Vec<Option<S>>>,
    pub steps: Vec<DeterministicStep<S>>,
    pub passes: usize,
}

/// `(alpha2, alpha3)` of the constraint acting on group `i`, `(1, 0)` when none does.
/// Several active constraints are accepted when their `(tau2(i), tau3(i))` are
/// collinear, since preserving one expectation then preserves all of them.
fn active_coefficients(task: &Task, i: usize) -> Result<(f64, f64)> {
    let mut found: Option<(f64, f64)> = None;
    for (j, f) in task.constraints.iter().enumerate() {
        let Some(c) = f.as_linear() else {
            return Err(Error::contract(format!(
                "constraint {j} is not linear; deterministic rank correction needs linear constraints"
            )));
        };
        let (a2, a3) = (c.tau2[i - 1], c.tau3[i - 1]);
        if a2 == 0.0 && a3 == 0.0 {
            continue;
        }
        if a2 * a3 < 0.0 {
            return Err(Error::contract(format!(
                "constraint {j} has tau2 and tau3 of opposite signs on group {i}; \
                 rank preservation is not achievable under such a constraint in general"
            )));
        }
        match found {
            None => found = Some((a2, a3)),
            Some((b2, b3)) => {
                if (a2 * b3 - a3 * b2).abs() > 1e-12 {
                    return Err(Error::contract(format!(
                        "group {i} has more than one independent active constraint"
                    )));
                }
            }
        }
    }
    Ok(match found {
        None => (1.0, 0.0),
        // Normalize the sign so that a2, a3 >= 0; the preserved quantity is unchanged up to sign.
        Some((a2, a3)) if a2 < 0.0 || a3 < 0.0 => (-a2, -a3),
        Some(c) => c,
    })
}

fn table_values(tau: &Transformation) -> Result<(&Vec<Vec<Option<f64>>>, [f64; 2])> {
    match &tau.entries {
        Entries::Deterministic {
            table,
            action_interval,
        } => Ok((table, *action_interval)),
        Entries::Randomized { .. } => Err(Error::input("expected a deterministic transformation")),
    }
}

fn check_table(tau: &Transformation, pt: &ProbTable) -> Result<()> {
    if tau.t != pt.t || tau.grid.len() != pt.grid.len() || tau.grid.iter().zip(&pt.grid).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(Error::input("transformation and probability table have different layouts"));
    }
    Ok(())
}

fn max_passes(n: usize) -> usize {
    (n * n).max(4) * 4
}

/// Deterministic correction under at most one (up to scaling) linear constraint
/// per group, with a rank-preserving objective and a monotone predictor.
pub fn correct_deterministic<S: Scalar>(
    tau: &Transformation,
    pt: &ProbTable,
    task: &Task,
) -> Result<DeterministicCorrection<S>> {
    check_table(tau, pt)?;
    let (table, interval) = table_values(tau)?;
    let action_grid: Vec<f64> = (0..=64).map(|k| interval[0] + (interval[1] - interval[0]) * k as f64 / 64.0).collect();
    if !task.objective.is_rank_preserving_on(&action_grid) {
        return Err(Error::contract("objective is not rank-preserving"));
    }
    let coeffs: Vec<(f64, f64)> = (1..=tau.t).map(|i| active_coefficients(task, i)).collect::<Result<_>>()?;
    let mut actions: Vec<Vec<Option<S>>> = table
        .iter()
        .map(|row| row.iter().map(|a| a.map(S::from_real)).collect())
        .collect();
    let mut steps = Vec::new();
    let mut passes = 0;
    for i in 1..=tau.t {
        let (a2, a3) = (S::from_real(coeffs[i - 1].0), S::from_real(coeffs[i - 1].1));
        let defined: Vec<usize> = (0..tau.grid.len()).filter(|&k| actions[i - 1][k].is_some()).collect();
        let limit = max_passes(defined.len());
        let mut group_passes = 0;
        loop {
            let mut changed = false;
            for w in defined.windows(2) {
                let (kp, k) = (w[0], w[1]);
                let row = &actions[i - 1];
                let (tv, tvp) = (row[k].clone().unwrap(), row[kp].clone().unwrap());
                if tv >= tvp {
                    continue;
                }
                let ctx = RankContext::<S>::pair(pt, i, k, kp);
                let correction = match &ctx {
                    Some(c) => {
                        if c.q_v <= c.q_vp {
                            return Err(Error::contract(format!(
                                "predictor is not monotone on group {i}: q({}) <= q({})",
                                tau.grid[k], tau.grid[kp]
                            )));
                        }
                        correct_pair(&tv, &tvp, c, &a2, &a3)
                    }
                    // A cell without mass carries no weight: copy the other value.
                    None => {
                        if pt.mass(i, k) > 0.0 {
                            PairCorrection {
                                new_v: tv.clone(),
                                new_vp: tv.clone(),
                                gamma: S::one(),
                                symmetric: true,
                            }
                        } else {
                            PairCorrection {
                                new_v: tvp.clone(),
                                new_vp: tvp.clone(),
                                gamma: S::zero(),
                                symmetric: false,
                            }
                        }
                    }
                };
                actions[i - 1][k] = Some(correction.new_v.clone());
                actions[i - 1][kp] = Some(correction.new_vp.clone());
                steps.push(DeterministicStep {
                    group: i,
                    v: tau.grid[k],
                    vp: tau.grid[kp],
                    context: ctx,
                    before: (tv, tvp),
                    correction,
                });
                changed = true;
            }
            if !changed {
                break;
            }
            group_passes += 1;
            if group_passes > limit {
                return Err(Error::contract(format!(
                    "rank correction on group {i} did not settle within {limit} passes"
                )));
            }
        }
        passes = passes.max(group_passes);
    }
    let table = actions
        .iter()
        .map(|row| row.iter().map(|a| a.as_ref().map(|x| x.to_real().clamp(interval[0], interval[1]))).collect())
        .collect();
    let transformation = Transformation::deterministic(tau.t, tau.grid.clone(), interval, table)?;
    Ok(DeterministicCorrection {
        transformation,
        actions,
        steps,
        passes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomizedStep<S> {
    pub group: usize,
    pub v: f64,
    pub vp: f64,
    pub context: RankContext<S>,
    /// `Σ_a beta_a ∂f0(i, a) (u(a) - u'(a)) (q_v - q_v')`, the objective decrease
    /// relative to the pair's mass.
    pub loss_diff: S,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomizedCorrection<S> {
    pub transformation: Transformation,
    /// Corrected distributions in the working arithmetic, `[group][value]`.
    pub distributions: Vec<Vec<Option<Vec<S>>>>,
    pub steps: Vec<RandomizedStep<S>>,
    pub passes: usize,
}

/// Histogram reassignment: the pooled action law of the pair is split so that
/// `v` receives the upper part and `v'` the lower part.
pub fn reassign<S: Scalar>(pv: &[S], pvp: &[S], beta: &S) -> (Vec<S>, Vec<S>, Vec<S>, Vec<S>, Vec<S>) {
    let one = S::one();
    let beta_a: Vec<S> = pv
        .iter()
        .zip(pvp)
        .map(|(a, b)| beta.clone() * a.clone() + (one.clone() - beta.clone()) * b.clone())
        .collect();
    let n = beta_a.len();
    let u: Vec<S> = (0..n)
        .map(|k| {
            if beta_a[k].is_zero() {
                S::zero()
            } else {
                beta.clone() * pv[k].clone() / beta_a[k].clone()
            }
        })
        .collect();
    // above[k] = Σ_{a' > a_k} beta_a'
    let mut above = vec![S::zero(); n];
    for k in (0..n.saturating_sub(1)).rev() {
        above[k] = above[k + 1].clone() + beta_a[k + 1].clone();
    }
    let mut below_incl = S::zero();
    let mut u_prime = Vec::with_capacity(n);
    for k in 0..n {
        below_incl = below_incl + beta_a[k].clone();
        let at_or_above = above[k].clone() + beta_a[k].clone();
        let val = if at_or_above <= *beta {
            one.clone()
        } else if below_incl <= one.clone() - beta.clone() || beta_a[k].is_zero() {
            S::zero()
        } else {
            (beta.clone() - above[k].clone()) / beta_a[k].clone()
        };
        u_prime.push(val);
    }
    let new_v = beta_a
        .iter()
        .zip(&u_prime)
        .map(|(b, w)| b.clone() * w.clone() / beta.clone())
        .collect();
    let new_vp = beta_a
        .iter()
        .zip(&u_prime)
        .map(|(b, w)| b.clone() * (one.clone() - w.clone()) / (one.clone() - beta.clone()))
        .collect();
    (new_v, new_vp, beta_a, u, u_prime)
}

fn dominates_s<S: Scalar>(hi: &[S], lo: &[S]) -> bool {
    let (mut th, mut tl) = (S::zero(), S::zero());
    let tol = S::from_real(TOL);
    for k in (0..hi.len()).rev() {
        th = th + hi[k].clone();
        tl = tl + lo[k].clone();
        if th < tl.clone() - tol.clone() {
            return false;
        }
    }
    true
}

/// Randomized correction for tasks whose constraints do not depend on the outcome.
pub fn correct_randomized<S: Scalar>(
    tau: &Transformation,
    pt: &ProbTable,
    task: &Task,
) -> Result<RandomizedCorrection<S>> {
    check_table(tau, pt)?;
    let Entries::Randomized { action_grid, table } = &tau.entries else {
        return Err(Error::input("expected a randomized transformation"));
    };
    if let Some(j) = task.constraints.iter().position(|f| !f.is_outcome_oblivious()) {
        return Err(Error::contract(format!(
            "constraint {j} depends on the outcome; randomized rank correction needs outcome-oblivious constraints"
        )));
    }
    if !task.objective.is_rank_preserving_on(action_grid) {
        return Err(Error::contract("objective is not rank-preserving"));
    }
    let mut dists: Vec<Vec<Option<Vec<S>>>> = table
        .iter()
        .map(|row| row.iter().map(|c| c.as_ref().map(|q| q.iter().map(|&x| S::from_real(x)).collect())).collect())
        .collect();
    let mut steps = Vec::new();
    let mut passes = 0;
    for i in 1..=tau.t {
        let partial: Vec<S> = action_grid
            .iter()
            .map(|&a| task.objective.partial_exact(i, &S::from_real(a)))
            .collect();
        let defined: Vec<usize> = (0..tau.grid.len()).filter(|&k| dists[i - 1][k].is_some()).collect();
        let limit = max_passes(defined.len());
        let mut group_passes = 0;
        loop {
            let mut changed = false;
            for w in defined.windows(2) {
                let (kp, k) = (w[0], w[1]);
                let (pv, pvp) = (
                    dists[i - 1][k].clone().unwrap(),
                    dists[i - 1][kp].clone().unwrap(),
                );
                if dominates_s(&pv, &pvp) {
                    continue;
                }
                let Some(mut ctx) = RankContext::<S>::pair(pt, i, k, kp) else {
                    // One side has no mass: give it the other side's law.
                    if pt.mass(i, k) > 0.0 {
                        dists[i - 1][kp] = Some(pv);
                    } else {
                        dists[i - 1][k] = Some(pvp);
                    }
                    changed = true;
                    continue;
                };
                if ctx.q_v <= ctx.q_vp {
                    return Err(Error::contract(format!(
                        "predictor is not monotone on group {i}: q({}) <= q({})",
                        tau.grid[k], tau.grid[kp]
                    )));
                }
                let (new_v, new_vp, beta_a, u, u_prime) = reassign(&pv, &pvp, &ctx.beta);
                let dq = ctx.q_v.clone() - ctx.q_vp.clone();
                let loss_diff = (0..beta_a.len()).fold(S::zero(), |acc, a| {
                    acc + beta_a[a].clone() * partial[a].clone() * (u[a].clone() - u_prime[a].clone()) * dq.clone()
                });
                ctx.beta_a = beta_a;
                ctx.u = u;
                ctx.u_prime = u_prime;
                dists[i - 1][k] = Some(new_v);
                dists[i - 1][kp] = Some(new_vp);
                steps.push(RandomizedStep {
                    group: i,
                    v: tau.grid[k],
                    vp: tau.grid[kp],
                    context: ctx,
                    loss_diff,
                });
                changed = true;
            }
            if !changed {
                break;
            }
            group_passes += 1;
            if group_passes > limit {
                return Err(Error::contract(format!(
                    "rank correction on group {i} did not settle within {limit} passes"
                )));
            }
        }
        passes = passes.max(group_passes);
    }
    let out_table = dists
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| {
                    c.as_ref().map(|q| {
                        let v: Vec<f64> = q.iter().map(|x| x.to_real().max(0.0)).collect();
                        let s: f64 = v.iter().sum();
                        v.into_iter().map(|x| x / s).collect()
                    })
                })
                .collect()
        })
        .collect();
    let transformation = Transformation::randomized(tau.t, tau.grid.clone(), action_grid.clone(), out_table)?;
    Ok(RandomizedCorrection {
        transformation,
        distributions: dists,
        steps,
        passes,
    })
}

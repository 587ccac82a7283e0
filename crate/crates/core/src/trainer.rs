//! Boosting to group multiaccuracy / multicalibration / calibration targets, and
//! the level-merging monotonization post-process.

use crate::audit::{audit, AuditKind, AuditSpec};
use crate::error::{Error, Result};
use crate::model::{Dataset, Grid, HypothesisClass, LevelMap, LevelSet, Predictor, PredictorRepr, Update, DEFAULT_GRID_STEP};
use crate::rank::is_monotone_predictor;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Audits the predictor must pass jointly, e.g. `[grpma, grpcal]`.
    pub kinds: Vec<AuditKind>,
    pub eps: f64,
    /// Fraction of the fitted correction applied per update.
    pub eta: f64,
    pub max_iters: usize,
    pub grid_step: f64,
    /// Hypothesis values for level-set targets.
    #[serde(default)]
    pub action_grid: Vec<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(kinds: Vec<AuditKind>, eps: f64) -> Self {
        TrainConfig {
            kinds,
            eps,
            eta: 1.0,
            max_iters: 2000,
            grid_step: DEFAULT_GRID_STEP,
            action_grid: vec![],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Spec("training needs at least one target kind".into()));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Spec(format!("eps must be nonnegative, got {}", self.eps)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Spec(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if self.max_iters == 0 {
            return Err(Error::Spec("max_iters must be at least 1".into()));
        }
        Grid::new(self.grid_step)?;
        Ok(())
    }

    pub fn specs(&self, h: &HypothesisClass) -> Vec<AuditSpec> {
        self.kinds
            .iter()
            .map(|&k| match k {
                AuditKind::GrpLma => AuditSpec::level_set(k, h.clone(), self.action_grid.clone()),
                _ if k.uses_hypotheses() => AuditSpec::new(k, h.clone()),
                _ => AuditSpec::calibration(k),
            })
            .collect()
    }
}

/// Residual-weighted view handed to the weak learner each round.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakLearnerQuery {
    /// Normalized weight times `y - p(x)`, per sample.
    pub weighted_residuals: Vec<f64>,
    pub groups: Vec<usize>,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    target: usize,
    hypothesis: Option<usize>,
    group: Option<usize>,
    level: Option<f64>,
    action: Option<f64>,
    step: f64,
    decrease: f64,
}

struct Target {
    kind: AuditKind,
    /// Witness rows (`[1; n]` for calibration kinds).
    witness: Vec<Vec<f64>>,
    hyp_index: Vec<Option<usize>>,
    /// For level-set kinds: action index per `[hypothesis][sample]`.
    action_idx: Option<Vec<Vec<usize>>>,
}

struct State<'a> {
    d: &'a Dataset,
    probs: Vec<f64>,
    labels: Vec<f64>,
    groups: Vec<usize>,
    grid: Grid,
    preds: Vec<f64>,
    t: usize,
    n_levels: usize,
}

impl State<'_> {
    fn sub_of(&self, target: &Target, h: usize, n: usize) -> usize {
        if target.kind.splits_by_level() {
            self.grid.index(self.preds[n]) as usize
        } else if let Some(idx) = &target.action_idx {
            idx[h][n]
        } else {
            0
        }
    }

    fn group_of(&self, target: &Target, n: usize) -> usize {
        if target.kind.is_group() {
            self.groups[n]
        } else {
            1
        }
    }

    fn slot(&self, target: &Target, h: usize, n: usize) -> usize {
        (self.group_of(target, n) - 1) * self.n_levels + self.sub_of(target, h, n)
    }

    fn multiplier(target: &Target, h: usize, n: usize) -> f64 {
        if target.action_idx.is_some() {
            1.0
        } else {
            target.witness[h][n]
        }
    }

    /// Violation per hypothesis row, maximized.
    fn violation(&self, target: &Target, buf: &mut Vec<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for h in 0..target.witness.len() {
            buf.clear();
            buf.resize(self.t * self.n_levels, 0.0);
            for n in 0..self.preds.len() {
                let r = self.probs[n] * (self.labels[n] - self.preds[n]) * State::multiplier(target, h, n);
                buf[self.slot(target, h, n)] += r;
            }
            worst = worst.max(buf.iter().map(|x| x.abs()).sum());
        }
        worst
    }

    fn best_candidate(&self, targets: &[Target], violated: &[bool], eta: f64, action_grid: &[f64]) -> Option<Candidate> {
        let lambda = self.grid.step();
        let size = self.t * self.n_levels;
        let mut resid = vec![0.0; size];
        let mut mass = vec![0.0; size];
        let mut best: Option<Candidate> = None;
        for (ti, target) in targets.iter().enumerate() {
            if !violated[ti] {
                continue;
            }
            for h in 0..target.witness.len() {
                resid.iter_mut().for_each(|x| *x = 0.0);
                mass.iter_mut().for_each(|x| *x = 0.0);
                let binary = target.action_idx.is_some() || target.witness[h].iter().all(|&w| w == 0.0 || w == 1.0);
                for n in 0..self.preds.len() {
                    let w = State::multiplier(target, h, n);
                    if w == 0.0 {
                        continue;
                    }
                    let s = self.slot(target, h, n);
                    resid[s] += self.probs[n] * (self.labels[n] - self.preds[n]) * w;
                    mass[s] += self.probs[n] * w * w;
                }
                for s in 0..size {
                    if mass[s] <= 0.0 || resid[s] == 0.0 {
                        continue;
                    }
                    let delta = eta * resid[s] / mass[s];
                    let step = if binary {
                        let k = (delta / lambda).round();
                        if k == 0.0 {
                            continue;
                        }
                        k * lambda
                    } else {
                        delta
                    };
                    let group = s / self.n_levels + 1;
                    let sub = s % self.n_levels;
                    let decrease = self.decrease(target, h, s, step);
                    if decrease <= 0.0 {
                        continue;
                    }
                    if best.as_ref().map_or(true, |b| decrease > b.decrease) {
                        best = Some(Candidate {
                            target: ti,
                            hypothesis: target.hyp_index[h],
                            group: target.kind.is_group().then_some(group),
                            level: target.kind.splits_by_level().then(|| self.grid.value(sub as i64)),
                            action: target.action_idx.as_ref().map(|_| action_grid[sub]),
                            step,
                            decrease,
                        });
                    }
                }
            }
        }
        best
    }

    fn moved(&self, target: &Target, h: usize, n: usize, step: f64) -> f64 {
        let w = if target.action_idx.is_some() { 1.0 } else { target.witness[h][n] };
        self.grid.round((self.preds[n] + step * w).clamp(0.0, 1.0))
    }

    fn decrease(&self, target: &Target, h: usize, slot: usize, step: f64) -> f64 {
        let mut total = 0.0;
        for n in 0..self.preds.len() {
            if State::multiplier(target, h, n) == 0.0 || self.slot(target, h, n) != slot {
                continue;
            }
            let new = self.moved(target, h, n, step);
            let y = self.labels[n];
            total += self.probs[n] * ((y - self.preds[n]).powi(2) - (y - new).powi(2));
        }
        total
    }
}

/// Trains a predictor passing every audit in `cfg.kinds` within `cfg.eps` on `d`.
///
/// Each round fits, for every violated target, the correction of each cell
/// (hypothesis, group, level or action) by least squares, rounds it to a whole
/// number of grid steps, and applies the one that lowers the squared-residual
/// potential the most.
pub fn train(d: &Dataset, h_class: &HypothesisClass, cfg: &TrainConfig) -> Result<Predictor> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::input("cannot train on an empty dataset"));
    }
    if h_class.is_empty() && cfg.kinds.iter().any(|k| k.uses_hypotheses()) {
        return Err(Error::Spec("hypothesis class is empty".into()));
    }
    let grid = Grid::new(cfg.grid_step)?;
    let values = h_class.evaluate_all(d)?;
    let mut targets = Vec::new();
    for &kind in &cfg.kinds {
        let (witness, hyp_index) = if kind.uses_hypotheses() {
            (values.clone(), (0..values.len()).map(Some).collect())
        } else {
            (vec![vec![1.0; d.len()]], vec![None])
        };
        let action_idx = if kind == AuditKind::GrpLma {
            if cfg.action_grid.is_empty() {
                return Err(Error::Spec("level-set target needs an action grid".into()));
            }
            Some(
                values
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|&a| {
                                cfg.action_grid
                                    .iter()
                                    .position(|&g| (g - a).abs() <= 1e-12)
                                    .ok_or_else(|| Error::Spec(format!("hypothesis value {a} is not on the action grid")))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        targets.push(Target {
            kind,
            witness,
            hyp_index,
            action_idx,
        });
    }
    let probs = d.probabilities();
    let labels: Vec<f64> = d.samples().iter().map(|s| s.y()).collect();
    let mean: f64 = probs.iter().zip(&labels).map(|(p, y)| p * y).sum();
    let init = grid.round(mean);
    let n_levels = (grid.max_index() as usize + 1).max(cfg.action_grid.len());
    let mut state = State {
        d,
        probs,
        labels,
        groups: d.samples().iter().map(|s| s.group).collect(),
        grid,
        preds: vec![init; d.len()],
        t: d.t(),
        n_levels,
    };
    let mut updates: Vec<Update> = Vec::new();
    let mut buf = Vec::new();
    let mut best: (f64, usize) = (f64::INFINITY, 0);
    loop {
        let violations: Vec<f64> = targets.iter().map(|t| state.violation(t, &mut buf)).collect();
        let worst = violations.iter().copied().fold(0.0, f64::max);
        if worst < best.0 {
            best = (worst, updates.len());
        }
        let violated: Vec<bool> = violations.iter().map(|&v| v > cfg.eps).collect();
        if !violated.contains(&true) {
            break;
        }
        let candidate = if updates.len() < cfg.max_iters {
            state.best_candidate(&targets, &violated, cfg.eta, &cfg.action_grid)
        } else {
            None
        };
        let Some(c) = candidate else {
            let best_p = Predictor::new(
                cfg.grid_step,
                PredictorRepr::Ensemble {
                    init,
                    updates: updates[..best.1].to_vec(),
                },
            )?;
            return Err(Error::NonConvergence {
                best: Box::new(best_p),
                violation: best.0,
                iterations: updates.len(),
            });
        };
        let target = &targets[c.target];
        let h_row = c.hypothesis.unwrap_or(0);
        let update = Update {
            step: c.step,
            group: c.group,
            level: c.level,
            level_set: c.action.map(|a| LevelSet {
                hypothesis: h_class.hypotheses[h_row].hypothesis.clone(),
                value: a,
            }),
            direction: match (target.action_idx.is_some(), c.hypothesis) {
                (false, Some(h)) => Some(h_class.hypotheses[h].hypothesis.clone()),
                _ => None,
            },
        };
        for (n, s) in state.d.samples().iter().enumerate() {
            state.preds[n] = update.apply(&state.grid, state.preds[n], s)?;
        }
        updates.push(update);
    }
    let p = Predictor::new(cfg.grid_step, PredictorRepr::Ensemble { init, updates })?;
    for spec in cfg.specs(h_class) {
        let r = audit(&p, d, &spec)?;
        if r.total_violation > cfg.eps + 1e-9 {
            return Err(Error::contract(format!(
                "trained predictor fails its {} audit: {} > {}",
                spec.kind, r.total_violation, cfg.eps
            )));
        }
    }
    Ok(p)
}

/// Multiplier of the subsample size `W |V|^3 / (eps^2 delta)`.
pub const MONOTONIZE_W: f64 = 4.0;
/// Cap on the subsample size.
pub const MONOTONIZE_MAX_DRAWS: usize = 1 << 21;

#[derive(Debug, Clone)]
struct Part {
    levels: Vec<f64>,
    mass: f64,
    positive: f64,
}

impl Part {
    fn mean(&self) -> Option<f64> {
        (self.mass > 0.0).then(|| self.positive / self.mass)
    }

    fn absorb(&mut self, other: Part) {
        self.levels.extend(other.levels);
        self.levels.sort_by(f64::total_cmp);
        self.mass += other.mass;
        self.positive += other.positive;
    }

    fn anchor(&self) -> f64 {
        self.levels[0]
    }
}

/// Merges small and nearly indistinguishable level sets of `p`, estimated on a
/// seeded bootstrap subsample of `d`, and relabels each merged part by its
/// subsample label mean.
pub fn monotonize(p: &Predictor, d: &Dataset, eps: f64, delta: f64, seed: u64) -> Result<Predictor> {
    if !(eps > 0.0 && eps < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::input("monotonize needs eps and delta in (0, 1)"));
    }
    if d.is_empty() {
        return Err(Error::input("cannot monotonize on an empty dataset"));
    }
    let grid = p.grid();
    let range = p.range_on(d)?;
    let preds = p.evaluate_dataset(d)?;
    let nv = range.len() as f64;
    let draws = (MONOTONIZE_W * nv.powi(3) / (eps * eps * delta)).ceil().min(MONOTONIZE_MAX_DRAWS as f64) as usize;
    let picker = WeightedIndex::new(d.samples().iter().map(|s| s.weight)).map_err(|e| Error::input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<Part> = range
        .iter()
        .map(|&v| Part {
            levels: vec![v],
            mass: 0.0,
            positive: 0.0,
        })
        .collect();
    let slot: Vec<usize> = preds
        .iter()
        .map(|&v| range.iter().position(|&r| (r - v).abs() <= 1e-12).expect("value in range"))
        .collect();
    let unit = 1.0 / draws.max(1) as f64;
    for _ in 0..draws {
        let n = picker.sample(&mut rng);
        parts[slot[n]].mass += unit;
        parts[slot[n]].positive += unit * d.samples()[n].y();
    }

    let small = 2.0 * eps / nv;
    // Step 1: fold parts below the mass threshold into the neighbor with the closer mean.
    while parts.len() > 1 {
        let Some(i) = parts.iter().position(|q| q.mass < small) else { break };
        let key = |q: &Part| q.mean().unwrap_or(q.anchor());
        let here = key(&parts[i]);
        let j = match (i.checked_sub(1), (i + 1 < parts.len()).then_some(i + 1)) {
            (Some(lo), Some(hi)) => {
                if (key(&parts[hi]) - here).abs() < (key(&parts[lo]) - here).abs() {
                    hi
                } else {
                    lo
                }
            }
            (Some(lo), None) => lo,
            (None, Some(hi)) => hi,
            (None, None) => unreachable!(),
        };
        let (keep, gone) = (i.min(j), i.max(j));
        let removed = parts.remove(gone);
        parts[keep].absorb(removed);
    }
    // Step 2: merge the closest pair of means while any pair is within the threshold.
    while parts.len() > 1 {
        let mut closest: Option<(usize, usize, f64)> = None;
        for a in 0..parts.len() {
            for b in a + 1..parts.len() {
                let gap = (parts[a].mean().unwrap_or(0.0) - parts[b].mean().unwrap_or(0.0)).abs();
                if closest.map_or(true, |(_, _, g)| gap < g) {
                    closest = Some((a, b, gap));
                }
            }
        }
        let (a, b, gap) = closest.expect("at least two parts");
        if gap >= small {
            break;
        }
        let removed = parts.remove(b);
        parts[a].absorb(removed);
    }
    if parts.len() == 1 {
        return constant_mean(p, d);
    }
    // Step 3: each part takes its subsample label mean on the grid.
    let mut levels: Vec<LevelMap> = parts
        .iter()
        .flat_map(|q| {
            let to = grid.round(q.mean().unwrap_or(0.0));
            q.levels.iter().map(move |&from| LevelMap { from, to })
        })
        .collect();
    levels.sort_by(|a, b| a.from.total_cmp(&b.from));
    let mut out = remapped(p, levels.clone())?;
    // Rounding or sampling error can leave two output levels out of order on `d`;
    // pool such adjacent levels until the means increase strictly.
    while !is_monotone_predictor(&out, d)? {
        let outs = out.range_on(d)?;
        if outs.len() <= 1 {
            return constant_mean(p, d);
        }
        let means = level_means(&out, d, &outs)?;
        let k = (1..outs.len()).find(|&k| means[k] <= means[k - 1]).expect("violation exists");
        let (lo, hi) = (outs[k - 1], outs[k]);
        let pooled: Vec<LevelMap> = levels
            .iter()
            .filter(|l| grid.same_level(l.to, lo) || grid.same_level(l.to, hi))
            .cloned()
            .collect();
        let mut mass = 0.0;
        let mut pos = 0.0;
        for (s, v) in d.samples().iter().zip(out.evaluate_dataset(d)?) {
            if grid.same_level(v, lo) || grid.same_level(v, hi) {
                mass += s.weight;
                pos += s.weight * s.y();
            }
        }
        let to = grid.round(pos / mass);
        for l in &mut levels {
            if pooled.iter().any(|q| q.from == l.from) {
                l.to = to;
            }
        }
        out = remapped(p, levels.clone())?;
    }
    Ok(out)
}

fn remapped(p: &Predictor, levels: Vec<LevelMap>) -> Result<Predictor> {
    Predictor::new(
        p.grid_step,
        PredictorRepr::Remapped {
            base: Box::new(p.repr.clone()),
            levels,
        },
    )
}

fn constant_mean(p: &Predictor, d: &Dataset) -> Result<Predictor> {
    let mean: f64 = d.samples().iter().map(|s| s.weight * s.y()).sum::<f64>() / d.total_weight();
    Predictor::constant(mean, p.grid_step)
}

fn level_means(p: &Predictor, d: &Dataset, levels: &[f64]) -> Result<Vec<f64>> {
    let mut mass = vec![0.0; levels.len()];
    let mut pos = vec![0.0; levels.len()];
    for (s, v) in d.samples().iter().zip(p.evaluate_dataset(d)?) {
        let k = levels.iter().position(|&l| (l - v).abs() <= 1e-12).expect("level present");
        mass[k] += s.weight;
        pos[k] += s.weight * s.y();
    }
    Ok(mass.iter().zip(&pos).map(|(m, p)| p / m).collect())
}

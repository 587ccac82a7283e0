use super::dataset::{Dataset, Sample};
use super::hypothesis::Hypothesis;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_GRID_STEP: f64 = 1.0 / 64.0;

/// Prediction grid `{0, step, 2 step, ...} ∩ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    step: f64,
}

impl Grid {
    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::input(format!("grid step {step} must lie in (0, 1]")));
        }
        Ok(Grid { step })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn max_index(&self) -> i64 {
        (1.0 / self.step + 1e-9).floor() as i64
    }

    pub fn index(&self, v: f64) -> i64 {
        ((v / self.step).round() as i64).clamp(0, self.max_index())
    }

    pub fn value(&self, k: i64) -> f64 {
        (k as f64 * self.step).min(1.0)
    }

    pub fn round(&self, v: f64) -> f64 {
        self.value(self.index(v))
    }

    pub fn contains(&self, v: f64) -> bool {
        (0.0..=1.0).contains(&v) && (self.round(v) - v).abs() <= 1e-12
    }

    pub fn same_level(&self, a: f64, b: f64) -> bool {
        self.index(a) == self.index(b)
    }

    /// Every grid point, ascending.
    pub fn points(&self) -> Vec<f64> {
        (0..=self.max_index()).map(|k| self.value(k)).collect()
    }
}

/// Restriction of an update to the level set `{x : h(x) = value}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub hypothesis: Hypothesis,
    pub value: f64,
}

/// One boosting step: on the selected cell, `p <- round(clamp(p + step * w(x)))`
/// where `w` is the direction hypothesis (constant 1 when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Update {
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    /// Only applies where the current prediction equals this level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_set: Option<LevelSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Hypothesis>,
}

impl Update {
    pub(crate) fn applies(&self, grid: &Grid, current: f64, s: &Sample) -> Result<bool> {
        if let Some(g) = self.group {
            if s.group != g {
                return Ok(false);
            }
        }
        if let Some(level) = self.level {
            if !grid.same_level(current, level) {
                return Ok(false);
            }
        }
        if let Some(ls) = &self.level_set {
            if (ls.hypothesis.eval(s)? - ls.value).abs() > 1e-12 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub(crate) fn apply(&self, grid: &Grid, current: f64, s: &Sample) -> Result<f64> {
        if !self.applies(grid, current, s)? {
            return Ok(current);
        }
        let w = match &self.direction {
            Some(h) => h.eval(s)?,
            None => 1.0,
        };
        Ok(grid.round((current + self.step * w).clamp(0.0, 1.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMap {
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorRepr {
    Tabular {
        values: BTreeMap<String, f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<f64>,
    },
    /// Constant start followed by sequential updates, re-rounded after each.
    Ensemble { init: f64, updates: Vec<Update> },
    /// Output of a base predictor passed through a level relabelling.
    /// Unmapped base levels go to the nearest mapped level (ties toward lower).
    Remapped {
        base: Box<PredictorRepr>,
        levels: Vec<LevelMap>,
    },
}

/// A predictor `p: X -> V`, `V` a finite subset of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub grid_step: f64,
    #[serde(flatten)]
    pub repr: PredictorRepr,
}

impl Predictor {
    pub fn new(grid_step: f64, repr: PredictorRepr) -> Result<Self> {
        let grid = Grid::new(grid_step)?;
        check_repr(&grid, &repr)?;
        Ok(Predictor { grid_step, repr })
    }

    pub fn constant(value: f64, grid_step: f64) -> Result<Self> {
        let grid = Grid::new(grid_step)?;
        Predictor::new(
            grid_step,
            PredictorRepr::Ensemble {
                init: grid.round(value),
                updates: vec![],
            },
        )
    }

    pub fn tabular<K: Into<String>>(
        entries: impl IntoIterator<Item = (K, f64)>,
        grid_step: f64,
    ) -> Result<Self> {
        Predictor::new(
            grid_step,
            PredictorRepr::Tabular {
                values: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
                default: None,
            },
        )
    }

    pub fn grid(&self) -> Grid {
        Grid { step: self.grid_step }
    }

    pub fn evaluate(&self, s: &Sample) -> Result<f64> {
        eval_repr(&self.grid(), &self.repr, s)
    }

    pub fn evaluate_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        d.samples().iter().map(|s| self.evaluate(s)).collect()
    }

    /// Sorted distinct prediction values on the dataset.
    pub fn range_on(&self, d: &Dataset) -> Result<Vec<f64>> {
        let grid = self.grid();
        let mut idx: Vec<i64> = self
            .evaluate_dataset(d)?
            .into_iter()
            .map(|v| grid.index(v))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        Ok(idx.into_iter().map(|k| grid.value(k)).collect())
    }

    pub fn update_count(&self) -> usize {
        match &self.repr {
            PredictorRepr::Ensemble { updates, .. } => updates.len(),
            _ => 0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Predictor = serde_json::from_str(text)?;
        Predictor::new(p.grid_step, p.repr)
    }

    pub fn read_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Predictor::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_repr(grid: &Grid, repr: &PredictorRepr) -> Result<()> {
    let on_grid = |v: f64, what: &str| {
        if grid.contains(v) {
            Ok(())
        } else {
            Err(Error::input(format!(
                "{what} {v} is not a multiple of grid step {} in [0, 1]",
                grid.step()
            )))
        }
    };
    match repr {
        PredictorRepr::Tabular { values, default } => {
            for v in values.values() {
                on_grid(*v, "tabular value")?;
            }
            if let Some(v) = default {
                on_grid(*v, "tabular default")?;
            }
        }
        PredictorRepr::Ensemble { init, updates } => {
            on_grid(*init, "ensemble init")?;
            for u in updates {
                if !u.step.is_finite() {
                    return Err(Error::input("non-finite update step"));
                }
            }
        }
        PredictorRepr::Remapped { base, levels } => {
            check_repr(grid, base)?;
            if levels.is_empty() {
                return Err(Error::input("remapped predictor needs at least one level"));
            }
            for l in levels {
                on_grid(l.from, "remap source")?;
                on_grid(l.to, "remap target")?;
            }
        }
    }
    Ok(())
}

fn eval_repr(grid: &Grid, repr: &PredictorRepr, s: &Sample) -> Result<f64> {
    match repr {
        PredictorRepr::Tabular { values, default } => values
            .get(&s.xid)
            .copied()
            .or(*default)
            .map(|v| grid.round(v))
            .ok_or_else(|| Error::input(format!("tabular predictor has no value for `{}`", s.xid))),
        PredictorRepr::Ensemble { init, updates } => {
            let mut p = grid.round(*init);
            for u in updates {
                p = u.apply(grid, p, s)?;
            }
            Ok(p)
        }
        PredictorRepr::Remapped { base, levels } => {
            let v = eval_repr(grid, base, s)?;
            let k = grid.index(v);
            let best = levels
                .iter()
                .min_by_key(|l| {
                    let j = grid.index(l.from);
                    ((j - k).abs(), j)
                })
                .expect("non-empty levels");
            Ok(grid.round(best.to))
        }
    }
}

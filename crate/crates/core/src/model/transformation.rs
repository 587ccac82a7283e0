use super::dataset::Sample;
use super::predictor::Predictor;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const CELL_MATCH_TOL: f64 = 1e-9;
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Cell contents of a transformation, row-major `[group][value]`.
/// `None` marks a cell the transformation does not define.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Entries {
    Deterministic {
        action_interval: [f64; 2],
        table: Vec<Vec<Option<f64>>>,
    },
    Randomized {
        action_grid: Vec<f64>,
        table: Vec<Vec<Option<Vec<f64>>>>,
    },
}

/// A decision rule `tau: [t] x V -> A` (or `-> Δ(A)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transformation {
    pub t: usize,
    /// Prediction values `V`, strictly increasing.
    pub grid: Vec<f64>,
    #[serde(flatten)]
    pub entries: Entries,
}

impl Transformation {
    pub fn deterministic(
        t: usize,
        grid: Vec<f64>,
        action_interval: [f64; 2],
        table: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let tau = Transformation {
            t,
            grid,
            entries: Entries::Deterministic {
                action_interval,
                table,
            },
        };
        tau.validate()?;
        Ok(tau)
    }

    pub fn randomized(
        t: usize,
        grid: Vec<f64>,
        action_grid: Vec<f64>,
        table: Vec<Vec<Option<Vec<f64>>>>,
    ) -> Result<Self> {
        let tau = Transformation {
            t,
            grid,
            entries: Entries::Randomized { action_grid, table },
        };
        tau.validate()?;
        Ok(tau)
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self.entries, Entries::Randomized { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::input("transformation needs at least one group"));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::input("transformation grid must be strictly increasing"));
        }
        let rows = match &self.entries {
            Entries::Deterministic { table, .. } => table.iter().map(Vec::len).collect::<Vec<_>>(),
            Entries::Randomized { table, .. } => table.iter().map(Vec::len).collect(),
        };
        if rows.len() != self.t || rows.iter().any(|&n| n != self.grid.len()) {
            return Err(Error::input(format!(
                "transformation table must be {} x {}",
                self.t,
                self.grid.len()
            )));
        }
        match &self.entries {
            Entries::Deterministic {
                action_interval: [lo, hi],
                table,
            } => {
                if !(lo <= hi) {
                    return Err(Error::input("action interval must satisfy lo <= hi"));
                }
                for a in table.iter().flatten().flatten() {
                    if !(*lo - 1e-12..=*hi + 1e-12).contains(a) {
                        return Err(Error::input(format!(
                            "action {a} outside declared interval [{lo}, {hi}]"
                        )));
                    }
                }
            }
            Entries::Randomized { action_grid, table } => {
                if action_grid.is_empty() || action_grid.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::input("action grid must be non-empty and strictly increasing"));
                }
                for probs in table.iter().flatten().flatten() {
                    if probs.len() != action_grid.len() {
                        return Err(Error::input("probability vector length differs from action grid"));
                    }
                    if probs.iter().any(|&q| !(q >= -SIMPLEX_TOL)) {
                        return Err(Error::input("negative probability in randomized entry"));
                    }
                    let total: f64 = probs.iter().sum();
                    if (total - 1.0).abs() > SIMPLEX_TOL {
                        return Err(Error::input(format!("probabilities sum to {total}, not 1")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Index of `v` in the prediction grid.
    pub fn value_index(&self, v: f64) -> Option<usize> {
        let k = self.grid.partition_point(|&g| g < v - CELL_MATCH_TOL);
        (k < self.grid.len() && (self.grid[k] - v).abs() <= CELL_MATCH_TOL).then_some(k)
    }

    /// Action distribution of cell `(group, value index)` as `(action, probability)`.
    pub fn cell(&self, group: usize, k: usize) -> Option<Vec<(f64, f64)>> {
        let row = group.checked_sub(1)?;
        match &self.entries {
            Entries::Deterministic { table, .. } => {
                table.get(row)?.get(k)?.map(|a| vec![(a, 1.0)])
            }
            Entries::Randomized { action_grid, table } => table
                .get(row)?
                .get(k)?
                .as_ref()
                .map(|probs| action_grid.iter().copied().zip(probs.iter().copied()).collect()),
        }
    }

    pub fn distribution_at(&self, group: usize, v: f64) -> Result<Vec<(f64, f64)>> {
        self.value_index(v)
            .and_then(|k| self.cell(group, k))
            .ok_or(Error::MissingCell { group, value: v })
    }

    /// The action for `s`; randomized cells are sampled with a generator seeded by `seed`.
    pub fn apply(&self, p: &Predictor, s: &Sample, seed: u64) -> Result<f64> {
        let v = p.evaluate(s)?;
        let dist = self.distribution_at(s.group, v)?;
        if dist.len() == 1 {
            return Ok(dist[0].0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(a, q) in &dist {
            acc += q;
            if u < acc {
                return Ok(a);
            }
        }
        Ok(dist
            .iter()
            .rev()
            .find(|(_, q)| *q > 0.0)
            .map_or(dist[dist.len() - 1].0, |(a, _)| *a))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tau: Transformation = serde_json::from_str(text)?;
        tau.validate()?;
        Ok(tau)
    }

    pub fn read_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Transformation::from_json(&std::fs::read_to_string(path)?)
    }
}

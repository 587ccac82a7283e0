//! The simulated distribution `D_p`: draw `x` from the data marginal, then
//! `y' ~ Bernoulli(p(x))`. Downstream optimization only needs the joint mass
//! `prob(i, v, b)` of (group, prediction value, simulated label).

use crate::error::{Error, Result};
use crate::model::{Dataset, Predictor, Sample};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    Estimated { n: usize, seed: u64 },
}

/// Dense table `prob[i][v][b]`, groups 1-based in the API and 0-based in storage.
/// Zero-mass cells are kept so variable layouts stay fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbTable {
    pub t: usize,
    pub grid: Vec<f64>,
    pub entries: Vec<Vec<[f64; 2]>>,
    pub provenance: Provenance,
}

impl ProbTable {
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != self.t || self.entries.iter().any(|r| r.len() != self.grid.len()) {
            return Err(Error::input(format!(
                "probability table must be {} x {} x 2",
                self.t,
                self.grid.len()
            )));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::input("probability table grid must be strictly increasing"));
        }
        let mut total = 0.0;
        for cell in self.entries.iter().flatten() {
            for &m in cell {
                if !(m >= 0.0) {
                    return Err(Error::input(format!("negative or invalid mass {m}")));
                }
                total += m;
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("probability table sums to {total}, not 1")));
        }
        Ok(())
    }

    pub fn prob(&self, group: usize, k: usize, b: u8) -> f64 {
        self.entries[group - 1][k][b as usize]
    }

    /// `Pr[g = i, p = v]`.
    pub fn mass(&self, group: usize, k: usize) -> f64 {
        let [m0, m1] = self.entries[group - 1][k];
        m0 + m1
    }

    /// `E[y' | g = i, p = v]`, `None` for empty cells.
    pub fn conditional_mean(&self, group: usize, k: usize) -> Option<f64> {
        let m = self.mass(group, k);
        (m > 0.0).then(|| self.prob(group, k, 1) / m)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=self.t).flat_map(move |i| (0..self.grid.len()).map(move |k| (i, k)))
    }

    pub fn l1_distance(&self, other: &ProbTable) -> Result<f64> {
        if self.t != other.t || self.grid != other.grid {
            return Err(Error::input("probability tables have different layouts"));
        }
        Ok(self
            .entries
            .iter()
            .flatten()
            .zip(other.entries.iter().flatten())
            .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs())
            .sum())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pt: ProbTable = serde_json::from_str(text)?;
        pt.validate()?;
        Ok(pt)
    }

    pub fn read_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        ProbTable::from_json(&std::fs::read_to_string(path)?)
    }

    fn empty(t: usize, grid: Vec<f64>, provenance: Provenance) -> Self {
        let entries = vec![vec![[0.0; 2]; grid.len()]; t];
        ProbTable {
            t,
            grid,
            entries,
            provenance,
        }
    }
}

fn level_slot(grid: &[f64], v: f64) -> usize {
    grid.iter()
        .position(|&g| (g - v).abs() <= 1e-12)
        .expect("value drawn from the same range")
}

/// Exact table: each sample contributes its normalized weight times `v`
/// (for `b = 1`) or `1 - v` (for `b = 0`). Labels in `d` are ignored.
pub fn build_exact(p: &Predictor, d: &Dataset) -> Result<ProbTable> {
    let grid = p.range_on(d)?;
    let mut pt = ProbTable::empty(d.t(), grid, Provenance::Exact);
    let preds = p.evaluate_dataset(d)?;
    for ((s, w), v) in d.samples().iter().zip(d.probabilities()).zip(preds) {
        let k = level_slot(&pt.grid, v);
        let cell = &mut pt.entries[s.group - 1][k];
        cell[1] += w * v;
        cell[0] += w * (1.0 - v);
    }
    Ok(pt)
}

/// Empirical joint of (group, prediction, true label) on `d`.
pub fn empirical_joint(p: &Predictor, d: &Dataset) -> Result<ProbTable> {
    let grid = p.range_on(d)?;
    let mut pt = ProbTable::empty(d.t(), grid, Provenance::Exact);
    let preds = p.evaluate_dataset(d)?;
    for ((s, w), v) in d.samples().iter().zip(d.probabilities()).zip(preds) {
        let k = level_slot(&pt.grid, v);
        pt.entries[s.group - 1][k][s.label as usize] += w;
    }
    Ok(pt)
}

/// Empirical table from `n` seeded draws of `(x, y')`, with `x` resampled from
/// the (unlabeled) dataset according to its weights.
pub fn estimate(p: &Predictor, unlabeled: &Dataset, n: usize, seed: u64) -> Result<ProbTable> {
    if n == 0 {
        return Err(Error::input("estimate needs at least one draw"));
    }
    let grid = p.range_on(unlabeled)?;
    let preds = p.evaluate_dataset(unlabeled)?;
    let slots: Vec<usize> = preds.iter().map(|&v| level_slot(&grid, v)).collect();
    let mut pt = ProbTable::empty(unlabeled.t(), grid, Provenance::Estimated { n, seed });
    let picker = WeightedIndex::new(unlabeled.samples().iter().map(|s| s.weight))
        .map_err(|e| Error::input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = 1.0 / n as f64;
    for _ in 0..n {
        let row = picker.sample(&mut rng);
        let label = usize::from(rng.gen::<f64>() < preds[row]);
        pt.entries[unlabeled.samples()[row].group - 1][slots[row]][label] += unit;
    }
    Ok(pt)
}

/// `n` labeled draws from `D_p`, unit weights.
pub fn sample_dp(p: &Predictor, d: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::input("sample_dp needs at least one draw"));
    }
    let preds = p.evaluate_dataset(d)?;
    let picker = WeightedIndex::new(d.samples().iter().map(|s| s.weight))
        .map_err(|e| Error::input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let row = picker.sample(&mut rng);
            let label = u8::from(rng.gen::<f64>() < preds[row]);
            let s = &d.samples()[row];
            Sample {
                label,
                weight: 1.0,
                ..s.clone()
            }
        })
        .collect();
    Dataset::new(samples, d.t(), d.feature_names().to_vec())
}

//! Violation scores for group multiaccuracy, multicalibration, calibration and
//! level-set multiaccuracy, with their single-group specializations.
//!
//! Every score is an exact weighted empirical expectation. For each hypothesis
//! the residual `E[(y - p(x)) * witness * 1(cell)]` is summed in absolute value
//! over the cells of its kind; the reported violation is the maximum over
//! hypotheses.

use crate::error::{Error, Result};
use crate::model::{Dataset, HypothesisClass, Predictor};
use crate::scalar::{Exact, Scalar};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditKind {
    GrpMa,
    GrpMc,
    GrpCal,
    GrpLma,
    Ma,
    Mc,
    Cal,
}

impl AuditKind {
    pub const ALL: [AuditKind; 7] = [
        AuditKind::GrpMa,
        AuditKind::GrpMc,
        AuditKind::GrpCal,
        AuditKind::GrpLma,
        AuditKind::Ma,
        AuditKind::Mc,
        AuditKind::Cal,
    ];

    /// Whether cells are split by the group partition.
    pub fn is_group(self) -> bool {
        matches!(self, AuditKind::GrpMa | AuditKind::GrpMc | AuditKind::GrpCal | AuditKind::GrpLma)
    }

    pub fn uses_hypotheses(self) -> bool {
        !matches!(self, AuditKind::GrpCal | AuditKind::Cal)
    }

    pub fn splits_by_level(self) -> bool {
        matches!(self, AuditKind::GrpMc | AuditKind::Mc | AuditKind::GrpCal | AuditKind::Cal)
    }

    pub fn name(self) -> &'static str {
        match self {
            AuditKind::GrpMa => "grpma",
            AuditKind::GrpMc => "grpmc",
            AuditKind::GrpCal => "grpcal",
            AuditKind::GrpLma => "grplma",
            AuditKind::Ma => "ma",
            AuditKind::Mc => "mc",
            AuditKind::Cal => "cal",
        }
    }
}

impl std::str::FromStr for AuditKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AuditKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Spec(format!("unknown audit kind `{s}`")))
    }
}

impl std::fmt::Display for AuditKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSpec {
    pub kind: AuditKind,
    #[serde(default)]
    pub hypotheses: HypothesisClass,
    /// Level values of the hypotheses, level-set kinds only.
    #[serde(default)]
    pub action_grid: Vec<f64>,
}

impl AuditSpec {
    pub fn new(kind: AuditKind, hypotheses: HypothesisClass) -> Self {
        AuditSpec {
            kind,
            hypotheses,
            action_grid: vec![],
        }
    }

    pub fn calibration(kind: AuditKind) -> Self {
        AuditSpec::new(kind, HypothesisClass::default())
    }

    pub fn level_set(kind: AuditKind, hypotheses: HypothesisClass, action_grid: Vec<f64>) -> Self {
        AuditSpec {
            kind,
            hypotheses,
            action_grid,
        }
    }
}

/// Cell of a residual term. Absent fields are not part of the key for the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessKey {
    pub hypothesis: Option<usize>,
    pub group: usize,
    pub value: Option<f64>,
    pub action: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessTerm {
    pub key: WitnessKey,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub kind: AuditKind,
    pub total_violation: f64,
    /// Index of the hypothesis attaining the maximum (absent for calibration kinds).
    pub worst_hypothesis: Option<usize>,
    pub per_hypothesis: Vec<f64>,
    pub per_witness: Vec<WitnessTerm>,
}

impl AuditReport {
    pub fn passes(&self, eps: f64) -> bool {
        self.total_violation <= eps
    }
}

/// Per-sample quantities shared by both audit formulations.
pub(crate) struct AuditInputs {
    pub probs: Vec<f64>,
    pub residuals: Vec<f64>,
    pub groups: Vec<usize>,
    pub levels: Vec<i64>,
    pub level_values: BTreeMap<i64, f64>,
    /// `[pseudo-hypothesis][sample]`; a single all-ones row for calibration kinds.
    pub witness: Vec<Vec<f64>>,
    pub hypothesis_ids: Vec<Option<usize>>,
    /// Action index per `[pseudo-hypothesis][sample]` for level-set kinds.
    pub action_idx: Option<Vec<Vec<usize>>>,
}

pub(crate) fn prepare(p: &Predictor, d: &Dataset, spec: &AuditSpec) -> Result<AuditInputs> {
    if d.is_empty() {
        return Err(Error::input("cannot audit an empty dataset"));
    }
    let grid = p.grid();
    let preds = p.evaluate_dataset(d)?;
    let levels: Vec<i64> = preds.iter().map(|&v| grid.index(v)).collect();
    let level_values = levels.iter().map(|&k| (k, grid.value(k))).collect();
    let residuals = d.samples().iter().zip(&preds).map(|(s, v)| s.y() - v).collect();
    let groups = if spec.kind.is_group() {
        d.samples().iter().map(|s| s.group).collect()
    } else {
        vec![1; d.len()]
    };
    let (witness, hypothesis_ids) = if spec.kind.uses_hypotheses() {
        let values = spec.hypotheses.evaluate_all(d)?;
        let ids = (0..values.len()).map(Some).collect();
        (values, ids)
    } else {
        (vec![vec![1.0; d.len()]], vec![None])
    };
    let mut action_idx = None;
    if matches!(spec.kind, AuditKind::GrpLma) {
        if spec.action_grid.is_empty() {
            return Err(Error::Spec("level-set audit needs an action grid".into()));
        }
        let mut all = Vec::with_capacity(witness.len());
        for (h, row) in witness.iter().enumerate() {
            let idx = row
                .iter()
                .map(|&a| {
                    spec.action_grid
                        .iter()
                        .position(|&g| (g - a).abs() <= 1e-12)
                        .ok_or_else(|| {
                            Error::Spec(format!(
                                "hypothesis `{}` outputs {a}, which is not on the action grid",
                                spec.hypotheses.hypotheses[h].name
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            all.push(idx);
        }
        action_idx = Some(all);
    }
    Ok(AuditInputs {
        probs: d.probabilities(),
        residuals,
        groups,
        levels,
        level_values,
        witness,
        hypothesis_ids,
        action_idx,
    })
}

/// Cell identifier inside one pseudo-hypothesis: `(group, level or action index)`.
pub(crate) type CellKey = (usize, i64);

impl AuditInputs {
    pub fn cell_of(&self, kind: AuditKind, h: usize, n: usize) -> CellKey {
        let sub = if kind.splits_by_level() {
            self.levels[n]
        } else if let Some(idx) = &self.action_idx {
            idx[h][n] as i64
        } else {
            -1
        };
        (self.groups[n], sub)
    }

    /// Weight applied to the residual: the hypothesis value, or 1 for level-set kinds.
    pub fn multiplier(&self, kind: AuditKind, h: usize, n: usize) -> f64 {
        if matches!(kind, AuditKind::GrpLma) {
            1.0
        } else {
            self.witness[h][n]
        }
    }

    pub fn key(&self, spec: &AuditSpec, h: usize, cell: CellKey) -> WitnessKey {
        let (group, sub) = cell;
        WitnessKey {
            hypothesis: self.hypothesis_ids[h],
            group,
            value: spec.kind.splits_by_level().then(|| self.level_values[&sub]),
            action: matches!(spec.kind, AuditKind::GrpLma).then(|| spec.action_grid[sub as usize]),
        }
    }
}

fn residual_table<S: Scalar>(inputs: &AuditInputs, kind: AuditKind, h: usize) -> BTreeMap<CellKey, S> {
    let mut cells: BTreeMap<CellKey, S> = BTreeMap::new();
    for n in 0..inputs.probs.len() {
        let term = S::from_real(inputs.probs[n])
            * S::from_real(inputs.residuals[n])
            * S::from_real(inputs.multiplier(kind, h, n));
        let slot = cells.entry(inputs.cell_of(kind, h, n)).or_insert_with(S::zero);
        *slot = slot.clone() + term;
    }
    cells
}

fn max_over_hypotheses<S: Scalar>(totals: &[S]) -> (S, Option<usize>) {
    let mut best: Option<(S, usize)> = None;
    for (h, v) in totals.iter().enumerate() {
        if best.as_ref().map_or(true, |(b, _)| v > b) {
            best = Some((v.clone(), h));
        }
    }
    match best {
        Some((v, h)) => (v, Some(h)),
        None => (S::zero(), None),
    }
}

fn audit_generic<S: Scalar>(p: &Predictor, d: &Dataset, spec: &AuditSpec) -> Result<(Vec<S>, Vec<WitnessTerm>, AuditInputs)> {
    let inputs = prepare(p, d, spec)?;
    let mut totals = Vec::with_capacity(inputs.witness.len());
    let mut terms = Vec::new();
    for h in 0..inputs.witness.len() {
        let table = residual_table::<S>(&inputs, spec.kind, h);
        let mut total = S::zero();
        for (cell, r) in table {
            total = total + r.abs();
            terms.push(WitnessTerm {
                key: inputs.key(spec, h, cell),
                residual: r.to_real(),
            });
        }
        totals.push(total);
    }
    Ok((totals, terms, inputs))
}

/// Sum-of-absolute-residuals form of the audit.
pub fn audit(p: &Predictor, d: &Dataset, spec: &AuditSpec) -> Result<AuditReport> {
    let (totals, per_witness, inputs) = audit_generic::<f64>(p, d, spec)?;
    let (total, worst) = max_over_hypotheses(&totals);
    Ok(AuditReport {
        kind: spec.kind,
        total_violation: total,
        worst_hypothesis: worst.and_then(|h| inputs.hypothesis_ids[h]),
        per_hypothesis: totals,
        per_witness,
    })
}

/// Exact-rational total violation.
pub fn audit_exact(p: &Predictor, d: &Dataset, spec: &AuditSpec) -> Result<Exact> {
    let (totals, _, _) = audit_generic::<Exact>(p, d, spec)?;
    Ok(max_over_hypotheses(&totals).0)
}

/// Largest number of cells for which every sign pattern is enumerated.
const ENUMERATE_SIGNS_UP_TO: usize = 8;

/// Supremum form: `max` over sign functions `τ` on the cells of
/// `|E[(y - p(x)) w(x) τ(cell(x))]|`, evaluated sample by sample.
///
/// Small cell sets enumerate every `τ ∈ {-1, 1}^cells`; larger ones use the
/// maximizing pattern `τ = sign(residual)` (ties to +1).
pub fn audit_sup_form(p: &Predictor, d: &Dataset, spec: &AuditSpec) -> Result<AuditReport> {
    let inputs = prepare(p, d, spec)?;
    let n_samples = inputs.probs.len();
    let mut totals = Vec::with_capacity(inputs.witness.len());
    let mut per_witness = Vec::new();
    for h in 0..inputs.witness.len() {
        let cells: Vec<CellKey> = (0..n_samples).map(|n| inputs.cell_of(spec.kind, h, n)).collect();
        let mut keys: Vec<CellKey> = cells.clone();
        keys.sort_unstable();
        keys.dedup();
        let slot: Vec<usize> = cells.iter().map(|c| keys.binary_search(c).expect("key present")).collect();
        let contrib: Vec<f64> = (0..n_samples)
            .map(|n| inputs.probs[n] * inputs.residuals[n] * inputs.multiplier(spec.kind, h, n))
            .collect();
        let evaluate = |signs: &[f64]| -> f64 {
            (0..n_samples).map(|n| contrib[n] * signs[slot[n]]).sum()
        };

        let best = if keys.len() <= ENUMERATE_SIGNS_UP_TO {
            let mut best = f64::NEG_INFINITY;
            let mut signs = vec![0.0; keys.len()];
            for pattern in 0u32..(1 << keys.len()) {
                for (k, s) in signs.iter_mut().enumerate() {
                    *s = if pattern >> k & 1 == 0 { 1.0 } else { -1.0 };
                }
                best = best.max(evaluate(&signs).abs());
            }
            best
        } else {
            let mut cell_sums = vec![0.0; keys.len()];
            for n in 0..n_samples {
                cell_sums[slot[n]] += contrib[n];
            }
            let signs: Vec<f64> = cell_sums.iter().map(|&r| if r >= 0.0 { 1.0 } else { -1.0 }).collect();
            evaluate(&signs).abs()
        };
        let mut cell_sums = vec![0.0; keys.len()];
        for n in 0..n_samples {
            cell_sums[slot[n]] += contrib[n];
        }
        for (cell, r) in keys.iter().zip(cell_sums) {
            per_witness.push(WitnessTerm {
                key: inputs.key(spec, h, *cell),
                residual: r,
            });
        }
        totals.push(best);
    }
    let (total, worst) = max_over_hypotheses(&totals);
    Ok(AuditReport {
        kind: spec.kind,
        total_violation: total,
        worst_hypothesis: worst.and_then(|h| inputs.hypothesis_ids[h]),
        per_hypothesis: totals,
        per_witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hypothesis, Sample, DEFAULT_GRID_STEP};

    fn all_ones_dataset() -> Dataset {
        Dataset::from_samples((0..4).map(|k| Sample::new(format!("x{k}"), vec![k as f64], 1, 1)).collect()).unwrap()
    }

    #[test]
    fn calibration_of_constant_half_on_all_ones() {
        let d = all_ones_dataset();
        let p = Predictor::constant(0.5, DEFAULT_GRID_STEP).unwrap();
        let spec = AuditSpec::calibration(AuditKind::Cal);
        assert_eq!(audit(&p, &d, &spec).unwrap().total_violation, 0.5);
        assert_eq!(audit_sup_form(&p, &d, &spec).unwrap().total_violation, 0.5);
    }

    #[test]
    fn bayes_predictor_has_zero_violation() {
        let d = all_ones_dataset();
        let p = Predictor::constant(1.0, DEFAULT_GRID_STEP).unwrap();
        let h = HypothesisClass::from_unnamed([Hypothesis::stump(0, 1.5)]).unwrap();
        for kind in [AuditKind::GrpMa, AuditKind::GrpMc, AuditKind::Cal] {
            assert_eq!(audit(&p, &d, &AuditSpec::new(kind, h.clone())).unwrap().total_violation, 0.0);
        }
    }

    #[test]
    fn level_set_audit_rejects_off_grid_hypothesis() {
        let d = all_ones_dataset();
        let p = Predictor::constant(0.5, DEFAULT_GRID_STEP).unwrap();
        let h = HypothesisClass::from_unnamed([Hypothesis::Constant { value: 0.3 }]).unwrap();
        let spec = AuditSpec::level_set(AuditKind::GrpLma, h, vec![0.0, 1.0]);
        assert!(matches!(audit(&p, &d, &spec), Err(Error::Spec(_))));
    }

    #[test]
    fn single_weighted_sample_agrees() {
        let d = Dataset::from_samples(vec![
            Sample::new("a", vec![0.0], 1, 1).with_weight(1.0),
            Sample::new("b", vec![0.0], 1, 0).with_weight(0.0),
        ])
        .unwrap();
        let p = Predictor::constant(0.25, DEFAULT_GRID_STEP).unwrap();
        let spec = AuditSpec::calibration(AuditKind::GrpCal);
        let a = audit(&p, &d, &spec).unwrap().total_violation;
        let b = audit_sup_form(&p, &d, &spec).unwrap().total_violation;
        assert_eq!(a, 0.75);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn kind_names_parse() {
        for k in AuditKind::ALL {
            assert_eq!(k.name().parse::<AuditKind>().unwrap(), k);
        }
        assert!("nope".parse::<AuditKind>().is_err());
    }
}

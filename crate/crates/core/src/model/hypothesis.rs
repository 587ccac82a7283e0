use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A function `c: X -> [0, 1]` evaluated on a sample's features or identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hypothesis {
    Constant {
        value: f64,
    },
    /// `above` when `features[feature] >= threshold`, else `below`.
    Stump {
        feature: usize,
        threshold: f64,
        #[serde(default = "one")]
        above: f64,
        #[serde(default)]
        below: f64,
    },
    /// `clamp(bias + weights . features, 0, 1)`.
    LinearClamped {
        weights: Vec<f64>,
        bias: f64,
    },
    /// Explicit table keyed by `xid`.
    Lookup {
        table: BTreeMap<String, f64>,
        #[serde(default)]
        default: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl Hypothesis {
    pub fn stump(feature: usize, threshold: f64) -> Self {
        Hypothesis::Stump {
            feature,
            threshold,
            above: 1.0,
            below: 0.0,
        }
    }

    pub fn lookup<K: Into<String>>(entries: impl IntoIterator<Item = (K, f64)>) -> Self {
        Hypothesis::Lookup {
            table: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            default: None,
        }
    }

    pub fn eval(&self, s: &Sample) -> Result<f64> {
        match self {
            Hypothesis::Constant { value } => Ok(*value),
            Hypothesis::Stump {
                feature,
                threshold,
                above,
                below,
            } => {
                let x = s.features.get(*feature).ok_or_else(|| {
                    Error::input(format!(
                        "stump reads feature {feature} but sample `{}` has {}",
                        s.xid,
                        s.features.len()
                    ))
                })?;
                Ok(if *x >= *threshold { *above } else { *below })
            }
            Hypothesis::LinearClamped { weights, bias } => {
                if weights.len() != s.features.len() {
                    return Err(Error::input(format!(
                        "linear hypothesis has {} weights but sample `{}` has {} features",
                        weights.len(),
                        s.xid,
                        s.features.len()
                    )));
                }
                let z: f64 = bias + weights.iter().zip(&s.features).map(|(w, x)| w * x).sum::<f64>();
                Ok(z.clamp(0.0, 1.0))
            }
            Hypothesis::Lookup { table, default } => table
                .get(&s.xid)
                .copied()
                .or(*default)
                .ok_or_else(|| Error::input(format!("lookup hypothesis has no entry for `{}`", s.xid))),
        }
    }

    /// True when every output is 0 or 1 (the trainer can then take exact grid steps).
    pub fn is_binary(&self) -> bool {
        let b = |v: f64| v == 0.0 || v == 1.0;
        match self {
            Hypothesis::Constant { value } => b(*value),
            Hypothesis::Stump { above, below, .. } => b(*above) && b(*below),
            Hypothesis::LinearClamped { .. } => false,
            Hypothesis::Lookup { table, default } => table.values().all(|v| b(*v)) && default.map_or(true, b),
        }
    }

    fn check_range(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        let valid = match self {
            Hypothesis::Constant { value } => ok(*value),
            Hypothesis::Stump { above, below, .. } => ok(*above) && ok(*below),
            Hypothesis::LinearClamped { .. } => true,
            Hypothesis::Lookup { table, default } => table.values().all(|v| ok(*v)) && default.map_or(true, ok),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::Spec(format!("hypothesis output outside [0, 1]: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHypothesis {
    pub name: String,
    #[serde(flatten)]
    pub hypothesis: Hypothesis,
}

/// Finite class `C` (or `H`) of hypotheses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClass {
    pub hypotheses: Vec<NamedHypothesis>,
}

impl HypothesisClass {
    pub fn new(hypotheses: Vec<NamedHypothesis>) -> Result<Self> {
        for h in &hypotheses {
            h.hypothesis.check_range()?;
        }
        Ok(HypothesisClass { hypotheses })
    }

    pub fn from_unnamed(hs: impl IntoIterator<Item = Hypothesis>) -> Result<Self> {
        Self::new(
            hs.into_iter()
                .enumerate()
                .map(|(k, hypothesis)| NamedHypothesis {
                    name: format!("h{k}"),
                    hypothesis,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedHypothesis> {
        self.hypotheses.iter()
    }

    pub fn push(&mut self, name: impl Into<String>, hypothesis: Hypothesis) -> Result<()> {
        hypothesis.check_range()?;
        self.hypotheses.push(NamedHypothesis {
            name: name.into(),
            hypothesis,
        });
        Ok(())
    }

    /// Single-feature threshold stumps at `per_feature` empirical quantiles of
    /// every feature, with duplicate thresholds removed.
    pub fn quantile_stumps(d: &Dataset, per_feature: usize) -> Self {
        let mut hypotheses = Vec::new();
        for f in 0..d.arity() {
            let mut xs: Vec<f64> = d.samples().iter().map(|s| s.features[f]).collect();
            xs.sort_by(f64::total_cmp);
            let mut last = None;
            for q in 1..=per_feature {
                let idx = (q * xs.len()) / (per_feature + 1);
                let thr = xs[idx.min(xs.len() - 1)];
                if last == Some(thr) {
                    continue;
                }
                last = Some(thr);
                hypotheses.push(NamedHypothesis {
                    name: format!("stump_f{f}_q{q}"),
                    hypothesis: Hypothesis::stump(f, thr),
                });
            }
        }
        HypothesisClass { hypotheses }
    }

    /// Outputs of every hypothesis on every sample, `[h][sample]`.
    pub fn evaluate_all(&self, d: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.hypotheses
            .iter()
            .map(|h| d.samples().iter().map(|s| h.hypothesis.eval(s)).collect())
            .collect()
    }

    pub fn read_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let class: HypothesisClass = serde_json::from_str(&text)?;
        HypothesisClass::new(class.hypotheses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stump_and_arity_errors() {
        let s = Sample::new("x", vec![0.3, -1.0], 1, 0);
        assert_eq!(Hypothesis::stump(0, 0.3).eval(&s).unwrap(), 1.0);
        assert_eq!(Hypothesis::stump(1, 0.0).eval(&s).unwrap(), 0.0);
        assert!(Hypothesis::stump(2, 0.0).eval(&s).is_err());
        let lin = Hypothesis::LinearClamped {
            weights: vec![1.0],
            bias: 0.0,
        };
        assert!(lin.eval(&s).is_err());
    }

    #[test]
    fn lookup_and_range_checks() {
        let h = Hypothesis::lookup([("a", 0.75)]);
        assert_eq!(h.eval(&Sample::new("a", vec![], 1, 0)).unwrap(), 0.75);
        assert!(h.eval(&Sample::new("b", vec![], 1, 0)).is_err());
        assert!(HypothesisClass::from_unnamed([Hypothesis::Constant { value: 1.5 }]).is_err());
    }

    #[test]
    fn json_shape_is_flat() {
        let class = HypothesisClass::new(vec![NamedHypothesis {
            name: "s".into(),
            hypothesis: Hypothesis::stump(0, 0.5),
        }])
        .unwrap();
        let text = serde_json::to_string(&class).unwrap();
        assert!(text.contains("\"kind\":\"stump\""), "{text}");
        let back: HypothesisClass = serde_json::from_str(&text).unwrap();
        assert_eq!(back, class);
    }
}

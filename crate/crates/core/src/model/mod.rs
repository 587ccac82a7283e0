//! Domain types: samples, datasets, hypotheses, predictors and transformations.

mod dataset;
mod hypothesis;
mod predictor;
mod transformation;

pub use dataset::{Dataset, Sample};
pub use hypothesis::{Hypothesis, HypothesisClass, NamedHypothesis};
pub use predictor::{Grid, LevelMap, LevelSet, Predictor, PredictorRepr, Update, DEFAULT_GRID_STEP};
pub use transformation::{Entries, Transformation, SIMPLEX_TOL};

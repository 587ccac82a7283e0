#![allow(dead_code)]

use omnipred::model::{Dataset, Predictor, Sample, DEFAULT_GRID_STEP};
use omnipred::simulate::{ProbTable, Provenance};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

/// Prints one result line per criterion and fails the test on a miss.
pub fn report(id: u32, name: &str, start: Instant, budget: Duration, ok: bool, detail: String) {
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let verdict = if ok && in_time { "PASS" } else { "FAIL" };
    println!(
        "criterion {id:>2} {verdict} {name}: {detail} [{:.2}s of {:.0}s]",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
    assert!(in_time, "criterion {id} ({name}) over budget: {elapsed:?} > {budget:?}");
}

/// Random dataset with integer weights and `features` lattice features.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, t: usize, features: usize) -> Dataset {
    let samples: Vec<Sample> = (0..n)
        .map(|k| {
            let x = (0..features).map(|_| rng.gen_range(0..10) as f64 / 10.0).collect();
            Sample::new(format!("s{k}"), x, rng.gen_range(1..=t), rng.gen_range(0..=1))
                .with_weight(rng.gen_range(1..=3) as f64)
        })
        .collect();
    let names = (0..features).map(|f| format!("f{f}")).collect();
    Dataset::new(samples, t, names).unwrap()
}

/// Tabular predictor with values drawn from `levels`.
pub fn random_predictor(rng: &mut ChaCha8Rng, d: &Dataset, levels: &[f64]) -> Predictor {
    Predictor::tabular(
        d.samples().iter().map(|s| (s.xid.clone(), levels[rng.gen_range(0..levels.len())])),
        DEFAULT_GRID_STEP,
    )
    .unwrap()
}

/// Probability table on `grid` with dyadic masses and label probabilities
/// increasing in the prediction value within every group.
pub fn monotone_table(rng: &mut ChaCha8Rng, t: usize, grid: Vec<f64>) -> ProbTable {
    let n = grid.len();
    let mut weights = vec![vec![0u32; n]; t];
    for row in weights.iter_mut() {
        for w in row.iter_mut() {
            *w = rng.gen_range(0..=4);
        }
    }
    if weights.iter().flatten().all(|&w| w == 0) {
        weights[0][0] = 1;
    }
    let total: u32 = weights.iter().flatten().sum();
    let entries = weights
        .iter()
        .map(|row| {
            let mut qs: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=16)).collect();
            qs.sort_unstable();
            qs.dedup();
            while qs.len() < n {
                let next = qs.last().map_or(0, |&q| q + 1);
                qs.push(next);
            }
            row.iter()
                .zip(&qs)
                .map(|(&w, &q)| {
                    let m = w as f64 / total as f64;
                    let q = q as f64 / (qs[n - 1].max(1) as f64 + 1.0);
                    [m * (1.0 - q), m * q]
                })
                .collect()
        })
        .collect();
    let pt = ProbTable {
        t,
        grid,
        entries,
        provenance: Provenance::Exact,
    };
    pt.validate().unwrap();
    pt
}

//! Dense two-phase tableau simplex.
//!
//! Pricing is Dantzig's rule with lowest-index ties; after a run of degenerate
//! pivots it switches to Bland's rule, so every solve terminates and is
//! bit-reproducible.

use crate::error::{Error, Result};
use serde::Serialize;

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

/// `minimize c·x  s.t.  a_ub x <= b_ub,  a_eq x = b_eq,  lower <= x <= upper`.
/// Lower bounds must be finite; upper bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    /// `row` is the constraint (inequalities first, then equalities, then upper
    /// bounds) whose phase-one artificial stayed largest.
    Infeasible { row: usize },
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpProblem {
    /// Nonnegative variables, no rows.
    pub fn new(c: Vec<f64>) -> Self {
        let n = c.len();
        LpProblem {
            c,
            a_ub: Vec::new(),
            b_ub: Vec::new(),
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, b: f64) {
        self.a_ub.push(row);
        self.b_ub.push(b);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, b: f64) {
        self.a_eq.push(row);
        self.b_eq.push(b);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let rows_ok = self.a_ub.iter().chain(&self.a_eq).all(|r| r.len() == n);
        if !rows_ok
            || self.a_ub.len() != self.b_ub.len()
            || self.a_eq.len() != self.b_eq.len()
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err(Error::input("LP dimensions are inconsistent"));
        }
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if !l.is_finite() || l > u || u.is_nan() {
                return Err(Error::input(format!("invalid bounds [{l}, {u}]")));
            }
        }
        let finite = self
            .c
            .iter()
            .chain(self.a_ub.iter().flatten())
            .chain(self.a_eq.iter().flatten())
            .chain(&self.b_ub)
            .chain(&self.b_eq)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::input("LP coefficients must be finite"));
        }
        Ok(())
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows x (cols + 1)`, last column is the right-hand side.
    a: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize, cost: &mut [f64]) {
        let w = self.cols + 1;
        let inv = 1.0 / self.a[pr * w + pc];
        for v in &mut self.a[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        let (before, rest) = self.a.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = cost[pc];
        if f != 0.0 {
            for (x, p) in cost.iter_mut().zip(prow.iter()) {
                *x -= f * p;
            }
            cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.iterations += 1;
    }

    /// Minimizes the reduced-cost row `cost` (last entry holds `-objective`) over
    /// columns for which `allowed` holds. Returns false when unbounded.
    fn optimize(&mut self, cost: &mut [f64], allowed: &dyn Fn(usize) -> bool) -> bool {
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_RUN;
            let mut entering = None;
            let mut best = -PIVOT_TOL;
            for c in 0..self.cols {
                if !allowed(c) || cost[c] >= -PIVOT_TOL {
                    continue;
                }
                if bland {
                    entering = Some(c);
                    break;
                }
                if cost[c] < best {
                    best = cost[c];
                    entering = Some(c);
                }
            }
            let Some(pc) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let v = self.at(r, pc);
                if v <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r) / v;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((br, bratio)) => {
                        if ratio < bratio - 1e-12 || (ratio <= bratio + 1e-12 && self.basis[r] < self.basis[br]) {
                            Some((r, ratio))
                        } else {
                            Some((br, bratio))
                        }
                    }
                };
            }
            let Some((pr, ratio)) = leave else { return false };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(pr, pc, cost);
        }
    }
}

pub fn solve_lp(lp: &LpProblem) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.n();
    // Shift to x' = x - lower >= 0; finite upper bounds become rows.
    let shift = |row: &[f64], b: f64| b - row.iter().zip(&lp.lower).map(|(a, l)| a * l).sum::<f64>();
    let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for (row, &b) in lp.a_ub.iter().zip(&lp.b_ub) {
        rows.push((row.clone(), shift(row, b), false));
    }
    for (row, &b) in lp.a_eq.iter().zip(&lp.b_eq) {
        rows.push((row.clone(), shift(row, b), true));
    }
    for j in 0..n {
        if lp.upper[j].is_finite() {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            rows.push((row, lp.upper[j] - lp.lower[j], false));
        }
    }
    let m = rows.len();
    let slack_count = rows.iter().filter(|r| !r.2).count();
    // Artificial needed for equalities and for inequalities with negative rhs.
    let needs_art: Vec<bool> = rows.iter().map(|(_, b, eq)| *eq || *b < 0.0).collect();
    let art_count = needs_art.iter().filter(|&&x| x).count();
    let cols = n + slack_count + art_count;
    let w = cols + 1;
    let mut t = Tableau {
        rows: m,
        cols,
        a: vec![0.0; m * w],
        basis: vec![0; m],
        iterations: 0,
    };
    let mut slack = n;
    let mut art = n + slack_count;
    let mut art_row = Vec::new();
    for (r, (row, b, eq)) in rows.iter().enumerate() {
        let sign = if *b < 0.0 { -1.0 } else { 1.0 };
        let base = r * w;
        for j in 0..n {
            t.a[base + j] = sign * row[j];
        }
        t.a[base + cols] = sign * b;
        if !eq {
            t.a[base + slack] = sign;
            if sign > 0.0 {
                t.basis[r] = slack;
            }
            slack += 1;
        }
        if needs_art[r] {
            t.a[base + art] = 1.0;
            t.basis[r] = art;
            art_row.push((art, r));
            art += 1;
        }
    }
    let first_art = n + slack_count;
    let is_art = |c: usize| c >= first_art;

    if art_count > 0 {
        let mut cost = vec![0.0; w];
        for &(_, r) in &art_row {
            for c in 0..w {
                if c == cols || !is_art(c) {
                    cost[c] -= t.at(r, c);
                }
            }
        }
        t.optimize(&mut cost, &|_| true);
        let infeas = -cost[cols];
        if infeas > FEAS_TOL * (1.0 + m as f64) {
            let row = (0..m)
                .filter(|&r| is_art(t.basis[r]))
                .max_by(|&a, &b| t.rhs(a).total_cmp(&t.rhs(b)).then(b.cmp(&a)))
                .map(|r| art_row.iter().find(|(c, _)| *c == t.basis[r]).map_or(r, |x| x.1))
                .unwrap_or(0);
            return Ok(LpSolution {
                status: LpStatus::Infeasible { row },
                x: vec![],
                objective: f64::INFINITY,
                iterations: t.iterations,
            });
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < t.rows {
            if is_art(t.basis[r]) {
                let pc = (0..first_art).find(|&c| t.at(r, c).abs() > PIVOT_TOL);
                match pc {
                    Some(pc) => {
                        let mut dummy = vec![0.0; w];
                        t.pivot(r, pc, &mut dummy);
                        r += 1;
                    }
                    None => {
                        t.a.drain(r * w..(r + 1) * w);
                        t.basis.remove(r);
                        t.rows -= 1;
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    let mut cost = vec![0.0; w];
    cost[..n].copy_from_slice(&lp.c);
    for r in 0..t.rows {
        let b = t.basis[r];
        let f = cost[b];
        if f != 0.0 {
            for c in 0..w {
                cost[c] -= f * t.at(r, c);
            }
        }
    }
    if !t.optimize(&mut cost, &|c| !is_art(c)) {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![],
            objective: f64::NEG_INFINITY,
            iterations: t.iterations,
        });
    }
    let mut x = lp.lower.clone();
    for r in 0..t.rows {
        let b = t.basis[r];
        if b < n {
            x[b] += t.rhs(r).max(0.0);
        }
    }
    let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        iterations: t.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_bound_is_the_optimum() {
        let mut lp = LpProblem::new(vec![1.0]);
        lp.add_le(vec![-1.0], -0.3);
        lp.upper = vec![1.0];
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LpProblem::new(vec![0.0]);
        lp.add_le(vec![1.0], 0.0);
        lp.add_le(vec![-1.0], -1.0);
        let s = solve_lp(&lp).unwrap();
        assert!(matches!(s.status, LpStatus::Infeasible { row: 1 }), "{:?}", s);
    }

    #[test]
    fn unbounded_detected() {
        let lp = LpProblem::new(vec![-1.0]);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_simplex_rows() {
        // min x0 + 2 x1 + 3 x2, x0 + x1 + x2 = 1, x0 <= 0.2, x1 >= 0.5.
        let mut lp = LpProblem::new(vec![1.0, 2.0, 3.0]);
        lp.add_eq(vec![1.0, 1.0, 1.0], 1.0);
        lp.add_le(vec![1.0, 0.0, 0.0], 0.2);
        lp.add_le(vec![0.0, -1.0, 0.0], -0.5);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - (0.2 + 1.6)).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let mut lp = LpProblem::new(vec![1.0, 1.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0);
        lp.add_eq(vec![2.0, 2.0], 2.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let mut lp = LpProblem::new(vec![1.0, 1.0]);
        lp.add_le(vec![1.0], 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::Input(_))));
    }
}

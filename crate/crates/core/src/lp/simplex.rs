//! Dense two-phase tableau simplex.
//!
//! Variables are shifted or mirrored onto `x' ≥ 0`; finite two-sided bounds
//! become explicit rows. Pricing is Dantzig's rule, switching to Bland's rule
//! after [`BLAND_AFTER`] pivots so that degenerate cycling terminates.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use super::{LpError, LpProblem, LpResult, RowKind};

/// Pivot, ratio and feasibility tolerance.
pub const LP_TOL: f64 = 1e-9;
const BLAND_AFTER: usize = 1000;

/// Limits checked between pivots; an exhausted budget aborts the solve
/// with [`LpError::Interrupted`].
#[derive(Clone, Copy, Debug, Default)]
pub struct Budget<'a> {
    pub deadline: Option<Instant>,
    pub cancel: Option<&'a AtomicBool>,
}

impl Budget<'_> {
    pub fn exhausted(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(Ordering::Relaxed))
            || self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

#[derive(Clone, Copy, Debug)]
enum ColMap {
    /// `x = lo + c`.
    Shift { col: usize, lo: f64 },
    /// `x = hi - c`.
    Mirror { col: usize, hi: f64 },
    /// `x = p - n`.
    Split { pos: usize, neg: usize },
}

struct Tableau<'a> {
    budget: Budget<'a>,
    rows: usize,
    cols: usize,
    // (rows + 1) × (cols + 1); row `rows` holds reduced costs, column `cols`
    // the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
    banned: Vec<bool>,
    pivots: usize,
    cap: usize,
}

impl Tableau<'_> {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let p = self.at(pr, pc);
        for c in 0..w {
            self.t[pr * w + c] /= p;
        }
        self.t[pr * w + pc] = 1.0;
        // The pivot row is usually sparse; only its nonzero columns change.
        let nz: Vec<usize> = (0..w).filter(|&c| self.t[pr * w + c] != 0.0).collect();
        let (before, rest) = self.t.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[pc];
            if f == 0.0 {
                continue;
            }
            for &c in &nz {
                row[c] -= f * prow[c];
            }
            row[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    fn entering(&self) -> Option<usize> {
        let cost = self.rows;
        let candidates = (0..self.cols).filter(|&j| !self.banned[j] && self.at(cost, j) < -LP_TOL);
        if self.pivots >= BLAND_AFTER {
            return candidates.into_iter().next();
        }
        let mut best: Option<(usize, f64)> = None;
        for j in candidates {
            let d = self.at(cost, j);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((j, d));
            }
        }
        best.map(|(j, _)| j)
    }

    fn leaving(&self, pc: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.rows {
            let a = self.at(r, pc);
            if a <= LP_TOL {
                continue;
            }
            let ratio = self.rhs(r).max(0.0) / a;
            let better = match best {
                None => true,
                Some((br, bv)) => {
                    ratio < bv - LP_TOL || (ratio <= bv + LP_TOL && self.basis[r] < self.basis[br])
                }
            };
            if better {
                best = Some((r, ratio));
            }
        }
        best.map(|(r, _)| r)
    }

    /// Pivots to optimality for the current cost row.
    fn optimize(&mut self) -> Result<(), LpError> {
        while let Some(pc) = self.entering() {
            if self.pivots >= self.cap {
                return Err(LpError::Stalled(self.pivots));
            }
            if self.budget.exhausted() {
                return Err(LpError::Interrupted);
            }
            let pr = self.leaving(pc).ok_or(LpError::Unbounded)?;
            self.pivot(pr, pc);
        }
        Ok(())
    }

    fn set_costs(&mut self, costs: &[f64]) {
        let w = self.cols + 1;
        let cost = self.rows;
        let row = &mut self.t[cost * w..(cost + 1) * w];
        row[..self.cols].copy_from_slice(&costs[..self.cols]);
        row[self.cols] = 0.0;
        for r in 0..self.rows {
            let cb = costs[self.basis[r]];
            if cb == 0.0 {
                continue;
            }
            for c in 0..w {
                let v = self.t[r * w + c];
                self.t[cost * w + c] -= cb * v;
            }
        }
    }
}

pub fn solve(lp: &LpProblem) -> Result<LpResult, LpError> {
    solve_within(lp, Budget::default())
}

pub fn solve_within(lp: &LpProblem, budget: Budget<'_>) -> Result<LpResult, LpError> {
    // Structural columns.
    let mut maps = Vec::with_capacity(lp.vars.len());
    let mut n_struct = 0;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for v in &lp.vars {
        let m = if v.lo.is_finite() {
            if v.hi.is_finite() {
                bound_rows.push((n_struct, v.hi - v.lo));
            }
            ColMap::Shift {
                col: n_struct,
                lo: v.lo,
            }
        } else if v.hi.is_finite() {
            ColMap::Mirror {
                col: n_struct,
                hi: v.hi,
            }
        } else {
            n_struct += 1;
            ColMap::Split {
                pos: n_struct - 1,
                neg: n_struct,
            }
        };
        n_struct += 1;
        maps.push(m);
    }

    // Dense rows over structural columns.
    let mut dense: Vec<(Vec<f64>, RowKind, f64)> =
        Vec::with_capacity(lp.rows.len() + bound_rows.len());
    for row in &lp.rows {
        let mut a = vec![0.0; n_struct];
        let mut rhs = row.rhs;
        for &(j, c) in &row.coeffs {
            match maps[j] {
                ColMap::Shift { col, lo } => {
                    a[col] += c;
                    rhs -= c * lo;
                }
                ColMap::Mirror { col, hi } => {
                    a[col] -= c;
                    rhs -= c * hi;
                }
                ColMap::Split { pos, neg } => {
                    a[pos] += c;
                    a[neg] -= c;
                }
            }
        }
        dense.push((a, row.kind, rhs));
    }
    for (col, ub) in bound_rows {
        let mut a = vec![0.0; n_struct];
        a[col] = 1.0;
        dense.push((a, RowKind::Le, ub));
    }
    for (a, kind, rhs) in dense.iter_mut() {
        if *rhs < 0.0 {
            a.iter_mut().for_each(|x| *x = -*x);
            *rhs = -*rhs;
            *kind = match kind {
                RowKind::Le => RowKind::Ge,
                RowKind::Ge => RowKind::Le,
                RowKind::Eq => RowKind::Eq,
            };
        }
    }

    let m = dense.len();
    let n_slack = dense.iter().filter(|(_, k, _)| *k != RowKind::Eq).count();
    let n_art = dense.iter().filter(|(_, k, _)| *k != RowKind::Le).count();
    let cols = n_struct + n_slack + n_art;
    let w = cols + 1;
    let mut tab = Tableau {
        budget,
        rows: m,
        cols,
        t: vec![0.0; (m + 1) * w],
        basis: vec![0; m],
        banned: vec![false; cols],
        pivots: 0,
        cap: 50 * (cols + m).max(1),
    };
    let art_start = n_struct + n_slack;
    let (mut s, mut a_idx) = (n_struct, art_start);
    let mut scale: f64 = 1.0;
    for (r, (a, kind, rhs)) in dense.iter().enumerate() {
        tab.t[r * w..r * w + n_struct].copy_from_slice(a);
        tab.t[r * w + cols] = *rhs;
        scale = scale.max(rhs.abs());
        match kind {
            RowKind::Le => {
                tab.t[r * w + s] = 1.0;
                tab.basis[r] = s;
                s += 1;
            }
            RowKind::Ge => {
                tab.t[r * w + s] = -1.0;
                s += 1;
                tab.t[r * w + a_idx] = 1.0;
                tab.basis[r] = a_idx;
                a_idx += 1;
            }
            RowKind::Eq => {
                tab.t[r * w + a_idx] = 1.0;
                tab.basis[r] = a_idx;
                a_idx += 1;
            }
        }
    }

    // Phase 1.
    if n_art > 0 {
        let mut costs = vec![0.0; cols];
        costs[art_start..].iter_mut().for_each(|c| *c = 1.0);
        tab.set_costs(&costs);
        match tab.optimize() {
            Ok(()) => {}
            Err(LpError::Unbounded) => unreachable!("phase one is bounded below by zero"),
            Err(e) => return Err(e),
        }
        let infeasibility = -tab.rhs(m);
        if infeasibility > LP_TOL * scale {
            return Ok(LpResult::Infeasible);
        }
        for r in 0..m {
            if tab.basis[r] < art_start {
                continue;
            }
            let pc = (0..art_start)
                .filter(|&j| tab.at(r, j).abs() > LP_TOL)
                .max_by(|&i, &j| tab.at(r, i).abs().total_cmp(&tab.at(r, j).abs()));
            if let Some(pc) = pc {
                tab.pivot(r, pc);
            }
        }
        tab.banned[art_start..].iter_mut().for_each(|b| *b = true);
    }

    let Some(objective) = &lp.objective else {
        return Ok(LpResult::FeasiblePoint(extract(&tab, &maps)));
    };

    // Phase 2.
    let mut costs = vec![0.0; cols];
    for &(j, c) in objective {
        match maps[j] {
            ColMap::Shift { col, .. } => costs[col] += c,
            ColMap::Mirror { col, .. } => costs[col] -= c,
            ColMap::Split { pos, neg } => {
                costs[pos] += c;
                costs[neg] -= c;
            }
        }
    }
    tab.set_costs(&costs);
    tab.optimize()?;
    let point = extract(&tab, &maps);
    Ok(LpResult::Optimal {
        value: lp.objective_value(&point),
        point,
    })
}

fn extract(tab: &Tableau, maps: &[ColMap]) -> Vec<f64> {
    let mut colval = vec![0.0; tab.cols];
    for (r, &b) in tab.basis.iter().enumerate() {
        colval[b] = tab.rhs(r).max(0.0);
    }
    maps.iter()
        .map(|m| match *m {
            ColMap::Shift { col, lo } => lo + colval[col],
            ColMap::Mirror { col, hi } => hi - colval[col],
            ColMap::Split { pos, neg } => colval[pos] - colval[neg],
        })
        .collect()
}

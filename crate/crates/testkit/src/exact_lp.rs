//! Textbook two-phase tableau simplex in exact rational arithmetic with
//! Bland's rule on every pivot.

use num::{BigRational, One, Signed, Zero};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rel {
    Le,
    Ge,
    Eq,
}

/// `min c·x` s.t. rows, `lo ≤ x ≤ hi` with every `lo` finite.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLp {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rows: Vec<(Vec<f64>, Rel, f64)>,
    pub objective: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RefResult {
    Infeasible,
    Feasible,
    Optimal(f64),
    Unbounded,
}

fn q(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

fn to_f64(v: &BigRational) -> f64 {
    let n: f64 = v.numer().to_string().parse().unwrap();
    let d: f64 = v.denom().to_string().parse().unwrap();
    n / d
}

struct Tab {
    m: usize,
    n: usize,
    a: Vec<Vec<BigRational>>, // m rows × (n + 1), last column rhs
    basis: Vec<usize>,
}

impl Tab {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c].clone();
        for v in self.a[r].iter_mut() {
            *v = &*v / &p;
        }
        let prow = self.a[r].clone();
        for i in 0..self.m {
            if i == r || self.a[i][c].is_zero() {
                continue;
            }
            let f = self.a[i][c].clone();
            for (v, pv) in self.a[i].iter_mut().zip(&prow) {
                *v -= &f * pv;
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost·x` over the columns not in `banned`; `false` if unbounded.
    fn minimize(&mut self, cost: &[BigRational], banned: &[bool]) -> bool {
        loop {
            let reduced = |j: usize, t: &Tab| {
                let mut d = cost[j].clone();
                for i in 0..t.m {
                    d -= &cost[t.basis[i]] * &t.a[i][j];
                }
                d
            };
            let Some(c) = (0..self.n).find(|&j| !banned[j] && reduced(j, self).is_negative())
            else {
                return true;
            };
            let mut best: Option<(usize, BigRational)> = None;
            for i in 0..self.m {
                if self.a[i][c].is_positive() {
                    let ratio = &self.a[i][self.n] / &self.a[i][c];
                    let better = match &best {
                        None => true,
                        Some((bi, br)) => {
                            ratio < *br || (ratio == *br && self.basis[i] < self.basis[*bi])
                        }
                    };
                    if better {
                        best = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = best else { return false };
            self.pivot(r, c);
        }
    }

    fn value(&self, cost: &[BigRational]) -> BigRational {
        (0..self.m)
            .map(|i| &cost[self.basis[i]] * &self.a[i][self.n])
            .sum()
    }
}

pub fn solve(lp: &RawLp) -> RefResult {
    let nv = lp.lo.len();
    // x = lo + x', x' ≥ 0.
    let mut rows: Vec<(Vec<BigRational>, Rel, BigRational)> = Vec::new();
    for (a, rel, b) in &lp.rows {
        let shift: BigRational = a.iter().zip(&lp.lo).map(|(ai, l)| q(*ai) * q(*l)).sum();
        rows.push((a.iter().map(|&v| q(v)).collect(), *rel, q(*b) - shift));
    }
    for j in 0..nv {
        if lp.hi[j].is_finite() {
            let mut a = vec![BigRational::zero(); nv];
            a[j] = BigRational::one();
            rows.push((a, Rel::Le, q(lp.hi[j]) - q(lp.lo[j])));
        }
    }
    for (a, rel, b) in rows.iter_mut() {
        if b.is_negative() {
            a.iter_mut().for_each(|v| *v = -v.clone());
            *b = -b.clone();
            *rel = match rel {
                Rel::Le => Rel::Ge,
                Rel::Ge => Rel::Le,
                Rel::Eq => Rel::Eq,
            };
        }
    }
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Rel::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Rel::Le).count();
    let n = nv + n_slack + n_art;
    let mut t = Tab {
        m,
        n,
        a: vec![vec![BigRational::zero(); n + 1]; m],
        basis: vec![0; m],
    };
    let (mut s, mut art) = (nv, nv + n_slack);
    for (i, (a, rel, b)) in rows.into_iter().enumerate() {
        for (j, v) in a.into_iter().enumerate() {
            t.a[i][j] = v;
        }
        t.a[i][n] = b;
        match rel {
            Rel::Le => {
                t.a[i][s] = BigRational::one();
                t.basis[i] = s;
                s += 1;
            }
            Rel::Ge => {
                t.a[i][s] = -BigRational::one();
                s += 1;
                t.a[i][art] = BigRational::one();
                t.basis[i] = art;
                art += 1;
            }
            Rel::Eq => {
                t.a[i][art] = BigRational::one();
                t.basis[i] = art;
                art += 1;
            }
        }
    }
    let art_start = nv + n_slack;
    let mut banned = vec![false; n];
    let phase1: Vec<BigRational> = (0..n)
        .map(|j| {
            if j >= art_start {
                BigRational::one()
            } else {
                BigRational::zero()
            }
        })
        .collect();
    t.minimize(&phase1, &banned);
    if t.value(&phase1).is_positive() {
        return RefResult::Infeasible;
    }
    for i in 0..m {
        if t.basis[i] >= art_start {
            if let Some(c) = (0..art_start).find(|&j| !t.a[i][j].is_zero()) {
                t.pivot(i, c);
            }
        }
    }
    banned[art_start..].iter_mut().for_each(|b| *b = true);
    let Some(obj) = &lp.objective else {
        return RefResult::Feasible;
    };
    let mut cost = vec![BigRational::zero(); n];
    for (j, c) in obj.iter().enumerate() {
        cost[j] = q(*c);
    }
    if !t.minimize(&cost, &banned) {
        return RefResult::Unbounded;
    }
    let constant: BigRational = obj.iter().zip(&lp.lo).map(|(c, l)| q(*c) * q(*l)).sum();
    RefResult::Optimal(to_f64(&(t.value(&cost) + constant)))
}

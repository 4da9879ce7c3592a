//! Conflict cores by elastic filtering.
//!
//! Each path constraint group `g ≤ 0` is relaxed to `g ≤ s` with one shared
//! slack `s ≥ 0` per group. Pinning a slack to zero restores the group.

use crate::cdcl::Literal;

use super::simplex::{solve_within, Budget, LP_TOL};
use super::{LpError, LpProblem, LpRow, RowKind};

/// The rows a path literal contributes.
#[derive(Clone, Debug, PartialEq)]
pub struct PathConstraint {
    pub literal: Literal,
    pub rows: Vec<LpRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CoreOrigin {
    ElasticFilter,
    BinaryElastic,
    /// Analysis failed; the core is the whole path.
    FullPath,
}

/// Indices into the submitted path, ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConflictCore {
    pub indices: Vec<usize>,
    pub origin: CoreOrigin,
}

impl ConflictCore {
    pub fn full(len: usize) -> Self {
        Self {
            indices: (0..len).collect(),
            origin: CoreOrigin::FullPath,
        }
    }

    pub fn literals(&self, path: &[PathConstraint]) -> Vec<Literal> {
        self.indices.iter().map(|&i| path[i].literal).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BinaryOutcome {
    Core(ConflictCore),
    /// Base and full path are jointly feasible.
    NotInfeasible,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ElasticError {
    #[error("base program is infeasible on its own")]
    BaseInfeasible,
    #[error("base program and full path are jointly feasible")]
    PathFeasible,
    #[error("empty path")]
    EmptyPath,
    #[error(transparent)]
    Lp(#[from] LpError),
}

struct Elastic<'a> {
    budget: Budget<'a>,
    base: &'a LpProblem,
    path: &'a [PathConstraint],
}

impl Elastic<'_> {
    /// Base plus relaxed path; slacks in `pinned` are fixed to zero and the
    /// objective is the sum of the others.
    fn program(&self, pinned: &[bool]) -> (LpProblem, Vec<usize>) {
        let mut lp = self.base.clone();
        let slacks: Vec<usize> = (0..self.path.len())
            .map(|i| {
                lp.add_var(
                    format!("s{i}"),
                    0.0,
                    if pinned[i] { 0.0 } else { f64::INFINITY },
                )
            })
            .collect();
        for (pc, &s) in self.path.iter().zip(&slacks) {
            for row in &pc.rows {
                let mut relaxed = |kind: RowKind, sign: f64| {
                    let mut coeffs = row.coeffs.clone();
                    coeffs.push((s, sign));
                    lp.add_row(LpRow::new(
                        format!("{}_elastic", row.name),
                        coeffs,
                        kind,
                        row.rhs,
                    ));
                };
                // a·x ≤ b + s and a·x ≥ b - s.
                match row.kind {
                    RowKind::Le => relaxed(RowKind::Le, -1.0),
                    RowKind::Ge => relaxed(RowKind::Ge, 1.0),
                    RowKind::Eq => {
                        relaxed(RowKind::Le, -1.0);
                        relaxed(RowKind::Ge, 1.0);
                    }
                }
            }
        }
        let free: Vec<(usize, f64)> = slacks
            .iter()
            .enumerate()
            .filter(|(i, _)| !pinned[*i])
            .map(|(_, &s)| (s, 1.0))
            .collect();
        if !free.is_empty() {
            lp.set_objective(free);
        }
        (lp, slacks)
    }

    fn check_base(&self) -> Result<(), ElasticError> {
        if self.path.is_empty() {
            return Err(ElasticError::EmptyPath);
        }
        if solve_within(self.base, self.budget)?.is_infeasible() {
            return Err(ElasticError::BaseInfeasible);
        }
        Ok(())
    }

    /// Slack values of the min-Σs program, or `None` if infeasible.
    fn relaxed_slacks(&self, pinned: &[bool]) -> Result<Option<Vec<f64>>, LpError> {
        let (lp, slacks) = self.program(pinned);
        Ok(solve_within(&lp, self.budget)?
            .point()
            .map(|p| slacks.iter().map(|&s| p[s]).collect()))
    }
}

fn stalled_or(err: ElasticError, len: usize) -> Result<ConflictCore, ElasticError> {
    match err {
        ElasticError::Lp(LpError::Stalled(_)) => Ok(ConflictCore::full(len)),
        e => Err(e),
    }
}

/// Repeatedly minimizes total slack and pins the group of largest slacks
/// (ties within [`LP_TOL`]) until the program becomes infeasible. The core
/// is the pinned set. A stalled LP yields the whole path.
pub fn elastic_filter(
    base: &LpProblem,
    path: &[PathConstraint],
) -> Result<ConflictCore, ElasticError> {
    elastic_filter_within(base, path, Budget::default())
}

pub fn elastic_filter_within(
    base: &LpProblem,
    path: &[PathConstraint],
    budget: Budget<'_>,
) -> Result<ConflictCore, ElasticError> {
    let e = Elastic { budget, base, path };
    e.check_base()?;
    let mut pinned = vec![false; path.len()];
    loop {
        let slacks = match e.relaxed_slacks(&pinned) {
            Ok(s) => s,
            Err(err) => return stalled_or(err.into(), path.len()),
        };
        let Some(slacks) = slacks else {
            let indices = (0..path.len()).filter(|&i| pinned[i]).collect();
            return Ok(ConflictCore {
                indices,
                origin: CoreOrigin::ElasticFilter,
            });
        };
        let max = slacks
            .iter()
            .enumerate()
            .filter(|(i, _)| !pinned[*i])
            .map(|(_, &s)| s)
            .fold(0.0, f64::max);
        if max <= LP_TOL {
            return Err(ElasticError::PathFeasible);
        }
        for (i, &s) in slacks.iter().enumerate() {
            if !pinned[i] && s >= max - LP_TOL {
                pinned[i] = true;
            }
        }
    }
}

/// Pins every slack first; if still feasible the path is not refutable by
/// this base. Otherwise ranks the path by relaxed slack, descending, and
/// binary-searches the shortest infeasible prefix.
pub fn elastic_filter_binary(
    base: &LpProblem,
    path: &[PathConstraint],
) -> Result<BinaryOutcome, ElasticError> {
    elastic_filter_binary_within(base, path, Budget::default())
}

pub fn elastic_filter_binary_within(
    base: &LpProblem,
    path: &[PathConstraint],
    budget: Budget<'_>,
) -> Result<BinaryOutcome, ElasticError> {
    let e = Elastic { budget, base, path };
    e.check_base()?;
    let n = path.len();
    let run = || -> Result<BinaryOutcome, ElasticError> {
        if e.relaxed_slacks(&vec![true; n])?.is_some() {
            return Ok(BinaryOutcome::NotInfeasible);
        }
        let slacks = e
            .relaxed_slacks(&vec![false; n])?
            .ok_or(ElasticError::BaseInfeasible)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| slacks[b].total_cmp(&slacks[a]).then(a.cmp(&b)));
        let pin_prefix = |k: usize| {
            let mut pinned = vec![false; n];
            order[..k].iter().for_each(|&i| pinned[i] = true);
            pinned
        };
        let (mut lo, mut hi) = (1, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if e.relaxed_slacks(&pin_prefix(mid))?.is_none() {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let mut indices = order[..hi].to_vec();
        indices.sort_unstable();
        Ok(BinaryOutcome::Core(ConflictCore {
            indices,
            origin: CoreOrigin::BinaryElastic,
        }))
    };
    match run() {
        Err(err) => stalled_or(err, n).map(BinaryOutcome::Core),
        ok => ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_x_le(b: f64) -> LpProblem {
        let mut lp = LpProblem::new();
        let x = lp.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row(LpRow::new("base", vec![(x, 1.0)], RowKind::Le, b));
        lp
    }

    fn ge(lit: Literal, b: f64) -> PathConstraint {
        PathConstraint {
            literal: lit,
            rows: vec![LpRow::new("p", vec![(0, 1.0)], RowKind::Ge, b)],
        }
    }

    #[test]
    fn larger_violation_is_pinned_first() {
        let base = base_x_le(0.0);
        let path = [
            ge(Literal::active(0, 0), 2.0),
            ge(Literal::active(0, 1), 1.0),
        ];
        let core = elastic_filter(&base, &path).unwrap();
        assert_eq!(
            core,
            ConflictCore {
                indices: vec![0],
                origin: CoreOrigin::ElasticFilter
            }
        );
        let bin = elastic_filter_binary(&base, &path).unwrap();
        assert_eq!(
            bin,
            BinaryOutcome::Core(ConflictCore {
                indices: vec![0],
                origin: CoreOrigin::BinaryElastic
            })
        );
    }

    #[test]
    fn single_constraint_core() {
        let core = elastic_filter(&base_x_le(0.0), &[ge(Literal::active(0, 0), 1.0)]).unwrap();
        assert_eq!(core.indices, vec![0]);
    }

    #[test]
    fn consistent_path_is_not_infeasible() {
        let path = [ge(Literal::active(0, 0), -1.0)];
        assert_eq!(
            elastic_filter_binary(&base_x_le(0.0), &path).unwrap(),
            BinaryOutcome::NotInfeasible
        );
        assert_eq!(
            elastic_filter(&base_x_le(0.0), &path),
            Err(ElasticError::PathFeasible)
        );
    }

    #[test]
    fn infeasible_base_is_rejected() {
        let mut base = base_x_le(0.0);
        base.add_row(LpRow::new("b2", vec![(0, 1.0)], RowKind::Ge, 1.0));
        let path = [ge(Literal::active(0, 0), 1.0)];
        assert_eq!(
            elastic_filter(&base, &path),
            Err(ElasticError::BaseInfeasible)
        );
    }
}

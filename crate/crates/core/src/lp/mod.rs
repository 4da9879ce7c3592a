//! Linear programs over the network polytope.

mod elastic;
mod model;
mod simplex;

pub use elastic::{
    elastic_filter, elastic_filter_binary, elastic_filter_binary_within, elastic_filter_within,
    BinaryOutcome, ConflictCore, CoreOrigin, ElasticError, PathConstraint,
};
pub use model::{build_base_lp, build_lp, path_constraint, ElasticBase, LpLayout, LpModel};
pub use simplex::{solve, solve_within, Budget, LP_TOL};

use std::fmt::{self, Write as _};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowKind::Le => "<=",
            RowKind::Ge => ">=",
            RowKind::Eq => "=",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpVar {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// `Σ coeffs · x  (kind)  rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpRow {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

impl LpRow {
    pub fn new(
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        kind: RowKind,
        rhs: f64,
    ) -> Self {
        Self {
            name: name.into(),
            coeffs,
            kind,
            rhs,
        }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Amount by which `x` violates the row; 0 when satisfied.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.kind {
            RowKind::Le => (a - self.rhs).max(0.0),
            RowKind::Ge => (self.rhs - a).max(0.0),
            RowKind::Eq => (a - self.rhs).abs(),
        }
    }
}

/// Variables with (possibly infinite) bounds, rows, and an optional
/// objective that is minimized.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LpProblem {
    pub vars: Vec<LpVar>,
    pub rows: Vec<LpRow>,
    pub objective: Option<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpResult {
    Infeasible,
    Optimal { value: f64, point: Vec<f64> },
    FeasiblePoint(Vec<f64>),
}

impl LpResult {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, LpResult::Infeasible)
    }

    pub fn point(&self) -> Option<&[f64]> {
        match self {
            LpResult::Infeasible => None,
            LpResult::Optimal { point, .. } | LpResult::FeasiblePoint(point) => Some(point),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LpError {
    #[error("simplex stalled after {0} pivots")]
    Stalled(usize),
    #[error("objective unbounded below")]
    Unbounded,
    #[error("interrupted by deadline or cancellation")]
    Interrupted,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> usize {
        self.vars.push(LpVar {
            name: name.into(),
            lo,
            hi,
        });
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, row: LpRow) -> usize {
        self.rows.push(row);
        self.rows.len() - 1
    }

    pub fn set_objective(&mut self, coeffs: Vec<(usize, f64)>) {
        self.objective = Some(coeffs);
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective
            .as_ref()
            .map(|o| o.iter().map(|&(j, c)| c * x[j]).sum())
            .unwrap_or(0.0)
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let vb = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &xi)| (v.lo - xi).max(xi - v.hi).max(0.0))
            .fold(0.0, f64::max);
        self.rows.iter().map(|r| r.violation(x)).fold(vb, f64::max)
    }

    /// CPLEX-LP text.
    pub fn to_lp_string(&self) -> String {
        let name = |j: usize| sanitize(&self.vars[j].name, j);
        let terms = |coeffs: &[(usize, f64)]| {
            if coeffs.is_empty() {
                return "0 x_dummy".to_string();
            }
            let mut s = String::new();
            for (k, &(j, c)) in coeffs.iter().enumerate() {
                let sign = if c < 0.0 {
                    "-"
                } else if k == 0 {
                    ""
                } else {
                    "+"
                };
                let _ = write!(
                    s,
                    "{}{sign} {} {}",
                    if k == 0 { "" } else { " " },
                    c.abs(),
                    name(j)
                );
            }
            s.trim_start().to_string()
        };
        let mut out = String::new();
        out.push_str("Minimize\n obj: ");
        out.push_str(&terms(self.objective.as_deref().unwrap_or(&[])));
        out.push_str("\nSubject To\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                " {}: {} {} {}",
                sanitize(&r.name, i),
                terms(&r.coeffs),
                r.kind,
                r.rhs
            );
        }
        out.push_str("Bounds\n");
        for (j, v) in self.vars.iter().enumerate() {
            let n = name(j);
            match (v.lo.is_finite(), v.hi.is_finite()) {
                (true, true) => writeln!(out, " {} <= {n} <= {}", v.lo, v.hi),
                (true, false) => writeln!(out, " {n} >= {}", v.lo),
                (false, true) => writeln!(out, " -inf <= {n} <= {}", v.hi),
                (false, false) => writeln!(out, " {n} free"),
            }
            .unwrap();
        }
        out.push_str("End\n");
        out
    }
}

fn sanitize(name: &str, idx: usize) -> String {
    let s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        format!("v{idx}_{s}")
    } else {
        s
    }
}

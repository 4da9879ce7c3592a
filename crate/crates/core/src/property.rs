//! Verification problems: input box, unsafe output region, counterexamples.
//!
//! A property file describes the *unsafe* region. The verifier answers
//! "holds" exactly when no input of the box reaches it.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{ActivationPattern, Network, NetworkError};

/// Slack tolerance when validating a counterexample against the unsafe region.
pub const COUNTEREXAMPLE_SLACK_TOL: f64 = -1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PropertyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown variable '{name}'")]
    UnknownVariable { line: usize, name: String },
    #[error("inconsistent bounds on x{dim}: {lower} > {upper}")]
    InconsistentBounds { dim: usize, lower: f64, upper: f64 },
    #[error("no bound given for x{0} and the network has no default input range")]
    MissingBound(usize),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("label {label} out of range for {outputs} outputs")]
    LabelOutOfRange { label: usize, outputs: usize },
    #[error("robustness radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, PropertyError> {
        if lower.len() != upper.len() {
            return Err(PropertyError::InvalidBox(format!(
                "{} lower vs {} upper entries",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(PropertyError::InvalidBox(format!("x{i} is not finite")));
            }
            if l > u {
                return Err(PropertyError::InconsistentBounds {
                    dim: i,
                    lower: *l,
                    upper: *u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Splits along dimension `dim` at its midpoint.
    pub fn bisect(&self, dim: usize) -> (InputBox, InputBox) {
        let mid = 0.5 * (self.lower[dim] + self.upper[dim]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[dim] = mid;
        right.lower[dim] = mid;
        (left, right)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
        })
    }
}

/// `coeffs · y (<=|>=) bound` over the network outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, bound: f64) -> Result<Self, PropertyError> {
        if coeffs.iter().all(|c| *c == 0.0) {
            return Err(PropertyError::InvalidConstraint(
                "all coefficients are zero".into(),
            ));
        }
        if !coeffs.iter().all(|c| c.is_finite()) || !bound.is_finite() {
            return Err(PropertyError::InvalidConstraint("non-finite value".into()));
        }
        Ok(Self {
            coeffs,
            relation,
            bound,
        })
    }

    /// Non-negative exactly when `y` satisfies the constraint.
    pub fn slack(&self, y: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().zip(y).map(|(c, v)| c * v).sum();
        match self.relation {
            Relation::Le => self.bound - lhs,
            Relation::Ge => lhs - self.bound,
        }
    }

    /// Coefficients of the slack as a function of `y` (slack = dir·y + const).
    pub fn slack_direction(&self) -> Vec<f64> {
        match self.relation {
            Relation::Le => self.coeffs.iter().map(|c| -c).collect(),
            Relation::Ge => self.coeffs.clone(),
        }
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0) {
            if first {
                write!(f, "{c}*y{i}")?;
                first = false;
            } else if *c < 0.0 {
                write!(f, " - {}*y{i}", -c)?;
            } else {
                write!(f, " + {c}*y{i}")?;
            }
        }
        write!(f, " {} {}", self.relation, self.bound)
    }
}

#[derive(Clone, Debug)]
pub struct VerificationProblem {
    pub network: Arc<Network>,
    pub input_box: InputBox,
    /// Conjunction describing the unsafe region.
    pub unsafe_region: Vec<LinearConstraint>,
}

impl VerificationProblem {
    pub fn new(
        network: Arc<Network>,
        input_box: InputBox,
        unsafe_region: Vec<LinearConstraint>,
    ) -> Result<Self, PropertyError> {
        if input_box.dim() != network.input_dim() {
            return Err(PropertyError::InvalidBox(format!(
                "box has {} dimensions, network expects {}",
                input_box.dim(),
                network.input_dim()
            )));
        }
        if unsafe_region
            .iter()
            .any(|c| c.coeffs.len() != network.output_dim())
        {
            return Err(PropertyError::InvalidConstraint(
                "constraint arity differs from the output dimension".into(),
            ));
        }
        Ok(Self {
            network,
            input_box,
            unsafe_region,
        })
    }

    pub fn with_box(&self, input_box: InputBox) -> Self {
        Self {
            input_box,
            ..self.clone()
        }
    }

    /// Smallest unsafe-constraint slack at output `y` (+inf for an empty conjunction).
    pub fn min_slack(&self, y: &[f64]) -> f64 {
        self.unsafe_region
            .iter()
            .map(|c| c.slack(y))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pattern: ActivationPattern,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rejection {
    /// Coordinate outside the input box.
    Box { dim: usize },
    /// Output misses an unsafe constraint.
    Unsafe { constraint: usize, slack: f64 },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Box { .. } => f.write_str("box"),
            Rejection::Unsafe { constraint, slack } => {
                write!(f, "unsafe constraint {constraint} missed by {}", -slack)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CounterexampleCheck {
    Valid(Counterexample),
    Rejected(Rejection),
}

impl CounterexampleCheck {
    pub fn is_valid(&self) -> bool {
        matches!(self, CounterexampleCheck::Valid(_))
    }
}

pub fn check_counterexample(
    problem: &VerificationProblem,
    x: &[f64],
) -> Result<CounterexampleCheck, NetworkError> {
    let (y, pattern) = problem.network.evaluate_with_pattern(x)?;
    let b = &problem.input_box;
    if let Some(dim) = (0..b.dim()).find(|&i| !(b.lower[i] <= x[i] && x[i] <= b.upper[i])) {
        return Ok(CounterexampleCheck::Rejected(Rejection::Box { dim }));
    }
    for (i, c) in problem.unsafe_region.iter().enumerate() {
        let slack = c.slack(&y);
        if slack < COUNTEREXAMPLE_SLACK_TOL {
            return Ok(CounterexampleCheck::Rejected(Rejection::Unsafe {
                constraint: i,
                slack,
            }));
        }
    }
    Ok(CounterexampleCheck::Valid(Counterexample {
        x: x.to_vec(),
        y,
        pattern,
    }))
}

/// Result of parsing a property file: box tightenings plus the unsafe region.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertySpec {
    pub input_lower: Vec<Option<f64>>,
    pub input_upper: Vec<Option<f64>>,
    pub unsafe_region: Vec<LinearConstraint>,
}

impl PropertySpec {
    /// Fills unspecified input bounds from the network's NNet ranges. With
    /// `normalize`, the box and the output constraints are mapped into the
    /// network's normalized coordinates.
    pub fn into_problem(
        self,
        network: Arc<Network>,
        normalize: bool,
    ) -> Result<VerificationProblem, PropertyError> {
        let n = network.input_dim();
        let norm = network.normalization();
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for i in 0..n {
            let l = self.input_lower[i]
                .or_else(|| norm.map(|m| m.mins[i]))
                .ok_or(PropertyError::MissingBound(i))?;
            let u = self.input_upper[i]
                .or_else(|| norm.map(|m| m.maxes[i]))
                .ok_or(PropertyError::MissingBound(i))?;
            if l > u {
                return Err(PropertyError::InconsistentBounds {
                    dim: i,
                    lower: l,
                    upper: u,
                });
            }
            lower.push(l);
            upper.push(u);
        }
        let mut unsafe_region = self.unsafe_region;
        if let (true, Some(m)) = (normalize, norm) {
            lower = m.normalize_input(&lower);
            upper = m.normalize_input(&upper);
            let (mean, range) = (m.output_mean(), m.output_range());
            for c in &mut unsafe_region {
                let total: f64 = c.coeffs.iter().sum();
                c.bound -= mean * total;
                for v in &mut c.coeffs {
                    *v *= range;
                }
            }
        }
        VerificationProblem::new(network, InputBox::new(lower, upper)?, unsafe_region)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Variable {
    Input(usize),
    Output(usize),
}

struct Scanner<'a> {
    s: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Scanner<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PropertyError> {
        Err(PropertyError::Parse {
            line: self.line,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Result<f64, PropertyError> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.peek(), Some(b'+' | b'-')) {
            self.pos += 1;
        }
        while matches!(self.peek(), Some(b'0'..=b'9' | b'.')) {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
        }
        let tok = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => self.err(format!("expected a number, found '{tok}'")),
        }
    }

    fn variable(&mut self, n_in: usize, n_out: usize) -> Result<Variable, PropertyError> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        if name.is_empty() {
            return self.err("expected a variable");
        }
        let unknown = || PropertyError::UnknownVariable {
            line: self.line,
            name: name.to_string(),
        };
        let idx: usize = name[1..].parse().map_err(|_| unknown())?;
        match name.as_bytes()[0] {
            b'x' if idx < n_in => Ok(Variable::Input(idx)),
            b'y' if idx < n_out => Ok(Variable::Output(idx)),
            _ => Err(unknown()),
        }
    }

    /// `[coef *] var`
    fn term(&mut self, n_in: usize, n_out: usize) -> Result<(f64, Variable), PropertyError> {
        self.skip_ws();
        match self.peek() {
            Some(b'x' | b'y') => Ok((1.0, self.variable(n_in, n_out)?)),
            Some(_) => {
                let coef = self.number()?;
                if !self.eat(b'*') {
                    return self.err("expected '*' after coefficient");
                }
                Ok((coef, self.variable(n_in, n_out)?))
            }
            None => self.err("expected a term"),
        }
    }
}

/// Parses the line-oriented property grammar against a network with
/// `n_in` inputs and `n_out` outputs.
pub fn parse_property(
    text: &str,
    n_in: usize,
    n_out: usize,
) -> Result<PropertySpec, PropertyError> {
    let mut spec = PropertySpec {
        input_lower: vec![None; n_in],
        input_upper: vec![None; n_in],
        unsafe_region: Vec::new(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (lhs, rel, rhs) = if let Some(p) = content.find("<=") {
            (&content[..p], Relation::Le, &content[p + 2..])
        } else if let Some(p) = content.find(">=") {
            (&content[..p], Relation::Ge, &content[p + 2..])
        } else {
            return Err(PropertyError::Parse {
                line,
                msg: "missing '<=' or '>='".into(),
            });
        };

        let mut sc = Scanner {
            s: lhs.as_bytes(),
            pos: 0,
            line,
        };
        let mut terms = Vec::new();
        let mut sign = if sc.eat(b'-') {
            -1.0
        } else {
            sc.eat(b'+');
            1.0
        };
        loop {
            let (c, v) = sc.term(n_in, n_out)?;
            terms.push((sign * c, v));
            sc.skip_ws();
            match sc.peek() {
                None => break,
                Some(b'+') => sign = 1.0,
                Some(b'-') => sign = -1.0,
                Some(c) => return sc.err(format!("unexpected '{}'", c as char)),
            }
            sc.pos += 1;
        }
        let mut rs = Scanner {
            s: rhs.as_bytes(),
            pos: 0,
            line,
        };
        let bound = rs.number()?;
        rs.skip_ws();
        if rs.peek().is_some() {
            return rs.err("trailing characters after constant");
        }

        let inputs = terms
            .iter()
            .filter(|(_, v)| matches!(v, Variable::Input(_)))
            .count();
        if inputs > 0 && inputs < terms.len() {
            return Err(PropertyError::Parse {
                line,
                msg: "mixes input and output variables".into(),
            });
        }
        if inputs > 0 {
            let dims: Vec<usize> = terms
                .iter()
                .map(|(_, v)| match v {
                    Variable::Input(i) => *i,
                    Variable::Output(_) => unreachable!(),
                })
                .collect();
            if dims.iter().any(|d| *d != dims[0]) {
                return Err(PropertyError::Parse {
                    line,
                    msg: "input constraints must mention a single variable".into(),
                });
            }
            let coef: f64 = terms.iter().map(|(c, _)| c).sum();
            if coef == 0.0 {
                return Err(PropertyError::Parse {
                    line,
                    msg: "zero coefficient".into(),
                });
            }
            let value = bound / coef;
            let as_upper = (rel == Relation::Le) == (coef > 0.0);
            let d = dims[0];
            if as_upper {
                let u = spec.input_upper[d].map_or(value, |u: f64| u.min(value));
                spec.input_upper[d] = Some(u);
            } else {
                let l = spec.input_lower[d].map_or(value, |l: f64| l.max(value));
                spec.input_lower[d] = Some(l);
            }
            if let (Some(l), Some(u)) = (spec.input_lower[d], spec.input_upper[d]) {
                if l > u {
                    return Err(PropertyError::InconsistentBounds {
                        dim: d,
                        lower: l,
                        upper: u,
                    });
                }
            }
        } else {
            let mut coeffs = vec![0.0; n_out];
            for (c, v) in terms {
                if let Variable::Output(j) = v {
                    coeffs[j] += c;
                }
            }
            let c =
                LinearConstraint::new(coeffs, rel, bound).map_err(|e| PropertyError::Parse {
                    line,
                    msg: e.to_string(),
                })?;
            spec.unsafe_region.push(c);
        }
    }
    Ok(spec)
}

/// Property text that [`parse_property`] reads back to `problem`'s box and
/// unsafe region exactly.
pub fn write_property(problem: &VerificationProblem) -> String {
    let mut out = String::new();
    let b = &problem.input_box;
    for i in 0..b.dim() {
        out.push_str(&format!("x{i} >= {}\nx{i} <= {}\n", b.lower[i], b.upper[i]));
    }
    for c in &problem.unsafe_region {
        let terms: Vec<String> = c
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| format!("{v}*y{j}"))
            .collect();
        out.push_str(&format!(
            "{} {} {}\n",
            terms.join(" + "),
            c.relation,
            c.bound
        ));
    }
    out
}

/// Targeted robustness instances around `x0`: one problem per wrong label,
/// each asking whether that label can reach the true label's score.
pub fn make_robustness_problems(
    network: Arc<Network>,
    x0: &[f64],
    eps: f64,
    true_label: usize,
) -> Result<Vec<VerificationProblem>, PropertyError> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(PropertyError::NonPositiveRadius(eps));
    }
    let m = network.output_dim();
    if true_label >= m {
        return Err(PropertyError::LabelOutOfRange {
            label: true_label,
            outputs: m,
        });
    }
    if x0.len() != network.input_dim() {
        return Err(NetworkError::Dimension {
            expected: network.input_dim(),
            got: x0.len(),
        }
        .into());
    }
    let lower = x0.iter().map(|v| (v - eps).clamp(0.0, 1.0)).collect();
    let upper = x0.iter().map(|v| (v + eps).clamp(0.0, 1.0)).collect();
    let input_box = InputBox::new(lower, upper)?;
    (0..m)
        .filter(|&t| t != true_label)
        .map(|t| {
            let mut coeffs = vec![0.0; m];
            coeffs[t] = 1.0;
            coeffs[true_label] = -1.0;
            let c = LinearConstraint::new(coeffs, Relation::Ge, 0.0)?;
            VerificationProblem::new(network.clone(), input_box.clone(), vec![c])
        })
        .collect()
}

//! Propositional machinery over activation literals.
//!
//! Conflicts come from the theory (bounds, LP, elastic filtering), never from
//! resolution: a learned clause is the negation of an infeasible core and the
//! backjump target is the second-highest level among its literals.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{NeuronId, ReluPhase};

#[derive(Debug, Error, PartialEq)]
pub enum CdclError {
    #[error("variable of {0} is already assigned")]
    AlreadyAssigned(Literal),
    #[error("core literal {0} is not true on the trail")]
    CoreNotOnTrail(Literal),
    #[error("clause is not falsified by the trail")]
    NotFalsified,
    #[error("cannot backtrack to level {target} from level {current}")]
    BadBacktrack { target: u32, current: u32 },
    #[error("empty clause")]
    EmptyClause,
    #[error("clause contains both {0} and its negation")]
    Tautology(Literal),
    #[error("literal {0} is outside the variable space")]
    UnknownVariable(Literal),
}

/// Propositional variable: a hidden neuron's phase, or membership in an
/// input-split region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    Neuron(NeuronId),
    Region(u32),
}

/// For neurons, `positive` means Active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub var: Var,
    pub positive: bool,
}

impl Literal {
    pub fn neuron(id: NeuronId, phase: ReluPhase) -> Self {
        Self {
            var: Var::Neuron(id),
            positive: phase == ReluPhase::Active,
        }
    }

    pub fn active(layer: usize, index: usize) -> Self {
        Self::neuron(NeuronId::new(layer, index), ReluPhase::Active)
    }

    pub fn inactive(layer: usize, index: usize) -> Self {
        Self::neuron(NeuronId::new(layer, index), ReluPhase::Inactive)
    }

    pub fn region(id: u32) -> Self {
        Self {
            var: Var::Region(id),
            positive: true,
        }
    }

    pub fn negate(self) -> Self {
        Self {
            positive: !self.positive,
            ..self
        }
    }

    pub fn neuron_id(&self) -> Option<NeuronId> {
        match self.var {
            Var::Neuron(n) => Some(n),
            Var::Region(_) => None,
        }
    }

    pub fn phase(&self) -> ReluPhase {
        if self.positive {
            ReluPhase::Active
        } else {
            ReluPhase::Inactive
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.positive { '+' } else { '-' };
        match self.var {
            Var::Neuron(n) => write!(f, "{n}{sign}"),
            Var::Region(r) => write!(f, "R{r}{sign}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClauseOrigin {
    PathNegation,
    BoundImplied,
    ElasticCore,
    InputSplit,
}

impl ClauseOrigin {
    pub const ALL: [ClauseOrigin; 4] = [
        ClauseOrigin::PathNegation,
        ClauseOrigin::BoundImplied,
        ClauseOrigin::ElasticCore,
        ClauseOrigin::InputSplit,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ClauseOrigin::PathNegation => "path",
            ClauseOrigin::BoundImplied => "bound",
            ClauseOrigin::ElasticCore => "elastic",
            ClauseOrigin::InputSplit => "split",
        }
    }
}

/// A disjunction of literals. Literals are kept sorted and unique.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clause {
    literals: Vec<Literal>,
    /// Pool sequence number; 0 until published.
    pub id: u64,
    pub origin: ClauseOrigin,
}

impl Clause {
    pub fn new(literals: Vec<Literal>, origin: ClauseOrigin) -> Result<Self, CdclError> {
        let mut literals = literals;
        literals.sort();
        literals.dedup();
        if literals.is_empty() {
            return Err(CdclError::EmptyClause);
        }
        for w in literals.windows(2) {
            if w[0].var == w[1].var {
                return Err(CdclError::Tautology(w[0]));
            }
        }
        Ok(Self {
            literals,
            id: 0,
            origin,
        })
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.literals.iter().map(Literal::to_string).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Dense numbering of all propositional variables of one problem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarSpace {
    offsets: Vec<usize>,
    widths: Vec<usize>,
    neurons: usize,
    regions: usize,
}

impl VarSpace {
    pub fn new(hidden_widths: &[usize], regions: usize) -> Self {
        let mut offsets = Vec::with_capacity(hidden_widths.len());
        let mut acc = 0;
        for w in hidden_widths {
            offsets.push(acc);
            acc += w;
        }
        Self {
            offsets,
            widths: hidden_widths.to_vec(),
            neurons: acc,
            regions,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.neurons + self.regions
    }

    pub fn index(&self, var: Var) -> Option<usize> {
        match var {
            Var::Neuron(n) if n.layer < self.widths.len() && n.index < self.widths[n.layer] => {
                Some(self.offsets[n.layer] + n.index)
            }
            Var::Region(r) if (r as usize) < self.regions => Some(self.neurons + r as usize),
            _ => None,
        }
    }

    pub fn var(&self, index: usize) -> Var {
        if index >= self.neurons {
            return Var::Region((index - self.neurons) as u32);
        }
        let layer = self.offsets.partition_point(|&o| o <= index) - 1;
        Var::Neuron(NeuronId::new(layer, index - self.offsets[layer]))
    }

    fn code(&self, lit: Literal) -> Option<usize> {
        self.index(lit.var)
            .map(|v| 2 * v + usize::from(!lit.positive))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reason {
    Decision,
    /// Index into the local [`ClauseDb`].
    Propagated(usize),
    TheoryImplied,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrailEntry {
    pub literal: Literal,
    pub level: u32,
    pub reason: Reason,
}

#[derive(Clone, Copy, Debug)]
struct Assignment {
    positive: bool,
    level: u32,
}

/// Leveled assignment stack.
#[derive(Clone, Debug)]
pub struct Trail {
    space: VarSpace,
    entries: Vec<TrailEntry>,
    assigned: Vec<Option<Assignment>>,
    /// Trail position where each level > 0 starts.
    level_starts: Vec<usize>,
}

impl Trail {
    pub fn new(space: VarSpace) -> Self {
        let n = space.num_vars();
        Self {
            space,
            entries: Vec::new(),
            assigned: vec![None; n],
            level_starts: Vec::new(),
        }
    }

    pub fn space(&self) -> &VarSpace {
        &self.space
    }

    pub fn level(&self) -> u32 {
        self.level_starts.len() as u32
    }

    pub fn entries(&self) -> &[TrailEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `Some(true)` if `lit` holds, `Some(false)` if its negation holds.
    pub fn value(&self, lit: Literal) -> Option<bool> {
        let idx = self.space.index(lit.var)?;
        self.assigned[idx].map(|a| a.positive == lit.positive)
    }

    pub fn level_of(&self, var: Var) -> Option<u32> {
        let idx = self.space.index(var)?;
        self.assigned[idx].map(|a| a.level)
    }

    pub fn is_assigned(&self, var: Var) -> bool {
        self.level_of(var).is_some()
    }

    pub fn decisions(&self) -> impl Iterator<Item = Literal> + '_ {
        self.entries
            .iter()
            .filter(|e| e.reason == Reason::Decision)
            .map(|e| e.literal)
    }

    /// Neuron literals currently on the trail, in trail order.
    pub fn neuron_literals(&self) -> impl Iterator<Item = Literal> + '_ {
        self.entries
            .iter()
            .map(|e| e.literal)
            .filter(|l| l.neuron_id().is_some())
    }

    /// Opens a new decision level with `lit`.
    pub fn decide(&mut self, lit: Literal) -> Result<(), CdclError> {
        self.check_free(lit)?;
        self.level_starts.push(self.entries.len());
        self.push(lit, Reason::Decision);
        Ok(())
    }

    /// Assigns `lit` at the current level.
    pub fn assign(&mut self, lit: Literal, reason: Reason) -> Result<(), CdclError> {
        self.check_free(lit)?;
        self.push(lit, reason);
        Ok(())
    }

    fn check_free(&self, lit: Literal) -> Result<(), CdclError> {
        let idx = self
            .space
            .index(lit.var)
            .ok_or(CdclError::UnknownVariable(lit))?;
        if self.assigned[idx].is_some() {
            return Err(CdclError::AlreadyAssigned(lit));
        }
        Ok(())
    }

    fn push(&mut self, lit: Literal, reason: Reason) {
        let idx = self.space.index(lit.var).expect("checked");
        let level = self.level();
        self.assigned[idx] = Some(Assignment {
            positive: lit.positive,
            level,
        });
        self.entries.push(TrailEntry {
            literal: lit,
            level,
            reason,
        });
    }

    fn truncate_to_level(&mut self, k: u32) {
        let keep = self.level_starts[k as usize];
        for e in self.entries.drain(keep..) {
            let idx = self.space.index(e.literal.var).expect("on trail");
            self.assigned[idx] = None;
        }
        self.level_starts.truncate(k as usize);
    }

    /// Checks the structural invariants; used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        let mut prev = 0;
        for (pos, e) in self.entries.iter().enumerate() {
            if !seen.insert(e.literal.var) {
                return Err(format!("variable of {} assigned twice", e.literal));
            }
            if e.level < prev {
                return Err(format!("level decreases at position {pos}"));
            }
            prev = e.level;
            let is_start = e.level > 0 && self.level_starts[e.level as usize - 1] == pos;
            if (e.reason == Reason::Decision) != is_start {
                return Err(format!("decision/level-start mismatch at position {pos}"));
            }
            if self.value(e.literal) != Some(true) {
                return Err(format!("assignment table disagrees at {}", e.literal));
            }
        }
        if seen.len() != self.assigned.iter().filter(|a| a.is_some()).count() {
            return Err("stale assignment".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Propagation {
    Fixpoint,
    /// Index of a clause all of whose literals are false.
    Conflict(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackjumpTarget {
    Level(u32),
    Refuted,
}

#[derive(Clone, Debug)]
struct Stored {
    clause: Clause,
    codes: Vec<usize>,
}

/// Clause database with two watched literals per non-unit clause.
///
/// Clauses can arrive at any trail state, so a watched literal may be false
/// at a level below the literal that satisfies or was propagated from the
/// clause. Such clauses are tracked in `stale` and re-examined after every
/// backtrack until both watches are non-false again.
#[derive(Clone, Debug)]
pub struct ClauseDb {
    space: VarSpace,
    clauses: Vec<Stored>,
    /// Clause indices watching each literal code (woken when the code becomes false).
    watches: Vec<Vec<usize>>,
    units: Vec<usize>,
    pending: Vec<usize>,
    stale: Vec<usize>,
    in_stale: Vec<bool>,
    qhead: usize,
}

fn code_value(trail: &Trail, code: usize) -> Option<bool> {
    trail.assigned[code / 2].map(|a| a.positive == code.is_multiple_of(2))
}

impl ClauseDb {
    pub fn new(space: VarSpace) -> Self {
        let n = space.num_vars();
        Self {
            space,
            clauses: Vec::new(),
            watches: vec![Vec::new(); 2 * n],
            units: Vec::new(),
            pending: Vec::new(),
            stale: Vec::new(),
            in_stale: Vec::new(),
            qhead: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn clause(&self, idx: usize) -> &Clause {
        &self.clauses[idx].clause
    }

    pub fn clauses(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.iter().map(|s| &s.clause)
    }

    /// Adds a clause at any point of the search; the next
    /// [`unit_propagate`] examines it against the trail.
    pub fn add(&mut self, clause: Clause, trail: &Trail) -> Result<usize, CdclError> {
        let mut codes = Vec::with_capacity(clause.len());
        for l in clause.literals() {
            codes.push(self.space.code(*l).ok_or(CdclError::UnknownVariable(*l))?);
        }
        Self::order(&mut codes, trail);
        let idx = self.clauses.len();
        if codes.len() == 1 {
            self.units.push(idx);
        } else {
            self.watches[codes[0]].push(idx);
            self.watches[codes[1]].push(idx);
        }
        self.clauses.push(Stored { clause, codes });
        self.in_stale.push(false);
        self.pending.push(idx);
        Ok(idx)
    }

    /// True literals first, then unassigned, then false by decreasing level.
    fn order(codes: &mut [usize], trail: &Trail) {
        codes.sort_by_key(|&c| match trail.assigned[c / 2] {
            Some(a) if a.positive == (c % 2 == 0) => (0, 0),
            None => (1, 0),
            Some(a) => (2, u32::MAX - a.level),
        });
    }

    fn lit_of(&self, code: usize) -> Literal {
        Literal {
            var: self.space.var(code / 2),
            positive: code.is_multiple_of(2),
        }
    }

    fn mark_stale(&mut self, idx: usize) {
        if !self.in_stale[idx] {
            self.in_stale[idx] = true;
            self.stale.push(idx);
        }
    }

    /// Re-orders a clause against the trail, re-establishes its watches and
    /// assigns its last free literal or reports it falsified.
    fn examine(&mut self, trail: &mut Trail, idx: usize) -> Option<Propagation> {
        let mut codes = std::mem::take(&mut self.clauses[idx].codes);
        let old = (codes[0], codes.get(1).copied());
        Self::order(&mut codes, trail);
        if codes.len() > 1 && (codes[0], Some(codes[1])) != old {
            let (o0, o1) = (old.0, old.1.expect("non-unit"));
            for w in [o0, o1] {
                if let Some(p) = self.watches[w].iter().position(|&c| c == idx) {
                    self.watches[w].swap_remove(p);
                }
            }
            self.watches[codes[0]].push(idx);
            self.watches[codes[1]].push(idx);
        }
        let first = code_value(trail, codes[0]);
        let second_false = codes.get(1).map(|&c| code_value(trail, c) == Some(false));
        let result = match (first, second_false) {
            (Some(true), _) => None,
            (None, Some(false)) => None,
            (None, None | Some(true)) => {
                let lit = self.lit_of(codes[0]);
                trail
                    .assign(lit, Reason::Propagated(idx))
                    .expect("free literal");
                None
            }
            (Some(false), _) => Some(Propagation::Conflict(idx)),
        };
        let falsified_watch = second_false == Some(true) || first == Some(false);
        self.clauses[idx].codes = codes;
        if falsified_watch && self.clauses[idx].codes.len() > 1 {
            self.mark_stale(idx);
        }
        result
    }
}

/// Propagates to fixpoint or to the first falsified clause.
pub fn unit_propagate(db: &mut ClauseDb, trail: &mut Trail) -> Propagation {
    for i in 0..db.units.len() {
        let idx = db.units[i];
        if let Some(c) = db.examine(trail, idx) {
            return c;
        }
    }
    let pending = std::mem::take(&mut db.pending);
    for (n, &idx) in pending.iter().enumerate() {
        if let Some(c) = db.examine(trail, idx) {
            db.pending = pending[n + 1..].to_vec();
            return c;
        }
    }

    while db.qhead < trail.entries.len() {
        let lit = trail.entries[db.qhead].literal;
        db.qhead += 1;
        let false_code = db.space.code(lit.negate()).expect("trail literal");
        let mut watchers = std::mem::take(&mut db.watches[false_code]);
        let mut i = 0;
        let mut conflict = None;
        while i < watchers.len() {
            let cidx = watchers[i];
            let codes = &mut db.clauses[cidx].codes;
            if codes[0] == false_code {
                codes.swap(0, 1);
            }
            let other = codes[0];
            if code_value(trail, other) == Some(true) {
                i += 1;
                continue;
            }
            let replacement =
                (2..codes.len()).find(|&k| code_value(trail, codes[k]) != Some(false));
            if let Some(k) = replacement {
                codes.swap(1, k);
                let new_watch = codes[1];
                db.watches[new_watch].push(cidx);
                watchers.swap_remove(i);
                continue;
            }
            i += 1;
            if code_value(trail, other).is_none() {
                let l = Literal {
                    var: db.space.var(other / 2),
                    positive: other.is_multiple_of(2),
                };
                trail
                    .assign(l, Reason::Propagated(cidx))
                    .expect("unassigned");
            } else {
                conflict = Some(cidx);
                break;
            }
        }
        db.watches[false_code].extend(watchers);
        if let Some(c) = conflict {
            db.mark_stale(c);
            return Propagation::Conflict(c);
        }
    }
    Propagation::Fixpoint
}

/// Turns an infeasible core (a conjunction of trail literals) into the
/// learned clause forbidding it.
pub fn learn_from_core(
    core: &[Literal],
    trail: &Trail,
    origin: ClauseOrigin,
) -> Result<Clause, CdclError> {
    for l in core {
        if trail.value(*l) != Some(true) {
            return Err(CdclError::CoreNotOnTrail(*l));
        }
    }
    Clause::new(core.iter().map(|l| l.negate()).collect(), origin)
}

/// Backjump target for a clause falsified by the trail: the second-highest
/// level among its literals, or one below the top level when several
/// literals share it.
pub fn backjump_level(clause: &Clause, trail: &Trail) -> Result<BackjumpTarget, CdclError> {
    let mut levels = Vec::with_capacity(clause.len());
    for l in clause.literals() {
        if trail.value(*l) != Some(false) {
            return Err(CdclError::NotFalsified);
        }
        levels.push(trail.level_of(l.var).expect("assigned"));
    }
    levels.sort_unstable_by(|a, b| b.cmp(a));
    let top = levels[0];
    if top == 0 {
        return Ok(BackjumpTarget::Refuted);
    }
    Ok(match levels.get(1) {
        None => BackjumpTarget::Level(0),
        Some(&second) if second < top => BackjumpTarget::Level(second),
        Some(_) => BackjumpTarget::Level(top - 1),
    })
}

/// Removes every assignment above level `k`.
pub fn backtrack(trail: &mut Trail, db: &mut ClauseDb, k: u32) -> Result<(), CdclError> {
    if k >= trail.level() {
        return Err(CdclError::BadBacktrack {
            target: k,
            current: trail.level(),
        });
    }
    trail.truncate_to_level(k);
    db.qhead = db.qhead.min(trail.len());
    let stale = std::mem::take(&mut db.stale);
    for idx in stale {
        let codes = &db.clauses[idx].codes;
        if codes[..2]
            .iter()
            .any(|&c| code_value(trail, c) == Some(false))
        {
            db.stale.push(idx);
            db.pending.push(idx);
        } else {
            db.in_stale[idx] = false;
        }
    }
    Ok(())
}

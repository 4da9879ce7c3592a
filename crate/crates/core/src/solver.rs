//! The verification loop and its worker orchestration.
//!
//! Each input region is searched by one solver worker over phase literals:
//! fetch shared clauses, propagate, check bounds, derive phase clauses,
//! check the LP, try a local counterexample search, then branch. Refuted
//! paths go to the path pool where analyzer workers shrink them to cores.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{
    check_unsafe_by_bounds, derive_phase_clauses, propagate_bounds, BoundCheck, BoundsMap,
    BoundsOutcome, PhaseMap,
};
use crate::cdcl::{
    backtrack, unit_propagate, Clause, ClauseDb, ClauseOrigin, Literal, Propagation, Reason, Trail,
    VarSpace,
};
use crate::lp::{
    build_lp, solve_within, Budget, ElasticBase, LpError, LpModel, LpResult, LpRow, RowKind,
};
use crate::pool::{
    analyzer_loop, Analyzer, AnalyzerStats, ClausePool, PathPool, RegionContext,
    DEFAULT_PATH_CAPACITY,
};
use crate::property::{
    check_counterexample, Counterexample, CounterexampleCheck, Relation, VerificationProblem,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PgdConfig {
    pub steps: usize,
    /// Step length as a fraction of each box dimension's width.
    pub step_size: f64,
    pub restarts: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 0.05,
            restarts: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchHeuristic {
    /// Maximize `min(-lo, hi)` of the pre-activation interval.
    #[default]
    Widest,
    /// Lowest layer, then lowest index.
    Earliest,
}

impl FromStr for BranchHeuristic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "widest" => Ok(Self::Widest),
            "earliest" => Ok(Self::Earliest),
            other => Err(format!("unknown branch heuristic '{other}'")),
        }
    }
}

impl fmt::Display for BranchHeuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Widest => "widest",
            Self::Earliest => "earliest",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub n_solvers: usize,
    pub m_analyzers: usize,
    /// Number of rounds of input bisection; `2^t` regions.
    pub split_threshold: u32,
    pub timeout: Option<Duration>,
    pub seed: u64,
    /// One solver, analyzers run inline after each path submission.
    pub deterministic: bool,
    pub pgd: PgdConfig,
    pub branch: BranchHeuristic,
    /// Shared clauses and bound-implied clauses; path negation is always on.
    pub learning: bool,
    pub elastic_base: ElasticBase,
    pub path_capacity: usize,
    pub dump_lp: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_solvers: 4,
            m_analyzers: 2,
            split_threshold: 2,
            timeout: None,
            seed: 0,
            deterministic: false,
            pgd: PgdConfig::default(),
            branch: BranchHeuristic::default(),
            learning: true,
            elastic_base: ElasticBase::default(),
            path_capacity: DEFAULT_PATH_CAPACITY,
            dump_lp: None,
        }
    }
}

impl SolverConfig {
    pub fn deterministic() -> Self {
        Self {
            deterministic: true,
            n_solvers: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_solvers == 0 {
            return Err("at least one solver is required".into());
        }
        if self.path_capacity == 0 {
            return Err("path pool capacity must be positive".into());
        }
        if self.split_threshold > 16 {
            return Err("split threshold above 16 is not supported".into());
        }
        if self.pgd.step_size.is_nan() || self.pgd.step_size < 0.0 {
            return Err("pgd step size must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnknownReason {
    Timeout,
    Stalled,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Holds,
    Violated(Counterexample),
    Unknown(UnknownReason),
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Holds => "HOLDS",
            Verdict::Violated(_) => "VIOLATED",
            Verdict::Unknown(UnknownReason::Timeout) => "TIMEOUT",
            Verdict::Unknown(UnknownReason::Stalled) => "STALLED",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClauseCounts {
    pub path: u64,
    pub bound: u64,
    pub elastic: u64,
    pub split: u64,
}

impl ClauseCounts {
    pub fn total(&self) -> u64 {
        self.path + self.bound + self.elastic + self.split
    }

    fn bump(&mut self, origin: ClauseOrigin) {
        match origin {
            ClauseOrigin::PathNegation => self.path += 1,
            ClauseOrigin::BoundImplied => self.bound += 1,
            ClauseOrigin::ElasticCore => self.elastic += 1,
            ClauseOrigin::InputSplit => self.split += 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolverStats {
    pub states_explored: u64,
    pub unsat_paths: u64,
    pub clauses_learned: ClauseCounts,
    pub clauses_fetched: u64,
    pub lp_calls: u64,
    pub lp_stalls: u64,
    pub wall_time_s: f64,
}

impl SolverStats {
    fn absorb(&mut self, o: &SolverStats) {
        self.states_explored += o.states_explored;
        self.unsat_paths += o.unsat_paths;
        self.clauses_learned.path += o.clauses_learned.path;
        self.clauses_learned.bound += o.clauses_learned.bound;
        self.clauses_learned.elastic += o.clauses_learned.elastic;
        self.clauses_learned.split += o.clauses_learned.split;
        self.clauses_fetched += o.clauses_fetched;
        self.lp_calls += o.lp_calls;
        self.lp_stalls += o.lp_stalls;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NodeStatus {
    Branched,
    UnsatBounds,
    UnsatLp,
    Sat,
    PrunedByClause,
    /// Left unresolved by a timeout, cancellation or an inconclusive leaf.
    Open,
}

impl NodeStatus {
    fn color(self) -> &'static str {
        match self {
            NodeStatus::Branched => "white",
            NodeStatus::UnsatBounds => "lightblue",
            NodeStatus::UnsatLp => "orange",
            NodeStatus::Sat => "green",
            NodeStatus::PrunedByClause => "red",
            NodeStatus::Open => "gray",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchTreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub region: u32,
    /// Decision literal, `implied` after a backjump, or the region label.
    pub label: String,
    pub status: NodeStatus,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SearchForest {
    pub nodes: Vec<SearchTreeNode>,
}

impl SearchForest {
    pub fn roots(&self) -> impl Iterator<Item = &SearchTreeNode> {
        self.nodes.iter().filter(|n| n.parent.is_none())
    }

    pub fn count(&self, status: NodeStatus) -> usize {
        self.nodes.iter().filter(|n| n.status == status).count()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph search {\n  node [shape=box, style=filled];\n");
        for n in &self.nodes {
            out.push_str(&format!(
                "  n{} [label=\"{}\", fillcolor={}];\n",
                n.id,
                n.label.replace('"', "'"),
                n.status.color()
            ));
        }
        for n in &self.nodes {
            if let Some(p) = n.parent {
                out.push_str(&format!("  n{p} -> n{};\n", n.id));
            }
        }
        out.push_str("}\n");
        out
    }
}

/// One input region and the literal that is true exactly inside it.
#[derive(Clone, Debug)]
pub struct Subproblem {
    pub id: u32,
    pub problem: VerificationProblem,
    pub guard: Option<Literal>,
}

#[derive(Clone, Debug)]
pub struct VerifyOutcome {
    pub verdict: Verdict,
    pub stats: SolverStats,
    pub forest: SearchForest,
    pub regions: Vec<Subproblem>,
    /// Every clause published to the shared pool, in sequence order.
    pub pool: Vec<Clause>,
    pub analyzer: AnalyzerStats,
}

pub fn stats_json(verdict: &Verdict, stats: &SolverStats) -> serde_json::Value {
    let mut v = serde_json::to_value(stats).expect("stats serialize");
    v["verdict"] = verdict.label().into();
    v["clauses_learned_total"] = stats.clauses_learned.total().into();
    if let Verdict::Violated(c) = verdict {
        v["counterexample"] = serde_json::json!({ "x": c.x, "y": c.y });
    }
    v
}

/// Bisects the widest dimension of every region `threshold` times.
pub fn split_input(problem: &VerificationProblem, threshold: u32) -> Vec<Subproblem> {
    let mut boxes = vec![problem.input_box.clone()];
    for _ in 0..threshold {
        boxes = boxes
            .into_iter()
            .flat_map(|b| {
                let d = (0..b.dim()).fold(
                    0,
                    |best, i| if b.width(i) > b.width(best) { i } else { best },
                );
                let (l, r) = b.bisect(d);
                [l, r]
            })
            .collect();
    }
    boxes
        .into_iter()
        .enumerate()
        .map(|(i, b)| Subproblem {
            id: i as u32,
            problem: problem.with_box(b),
            guard: (threshold > 0).then(|| Literal::region(i as u32)),
        })
        .collect()
}

/// Unassigned neuron to branch on, always in its Active phase.
pub fn branch_select(
    bounds: &BoundsMap,
    trail: &Trail,
    heuristic: BranchHeuristic,
) -> Option<Literal> {
    let mut best: Option<(f64, Literal)> = None;
    for (id, nb) in bounds.crossing() {
        let lit = Literal::neuron(id, crate::ReluPhase::Active);
        if trail.is_assigned(lit.var) {
            continue;
        }
        if heuristic == BranchHeuristic::Earliest {
            return Some(lit);
        }
        let score = (-nb.pre.lo).min(nb.pre.hi);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, lit));
        }
    }
    best.map(|(_, l)| l)
}

/// Sign-gradient ascent on the smallest unsafe slack from `start`, clamped
/// to the box. Only validated counterexamples are returned.
pub fn local_counterexample_search(
    problem: &VerificationProblem,
    start: &[f64],
    pgd: &PgdConfig,
) -> Option<Counterexample> {
    let b = &problem.input_box;
    let mut x = start.to_vec();
    b.clamp(&mut x);
    for step in 0..=pgd.steps {
        if let Ok(CounterexampleCheck::Valid(c)) = check_counterexample(problem, &x) {
            return Some(c);
        }
        if step == pgd.steps || problem.unsafe_region.is_empty() {
            break;
        }
        let y = problem.network.evaluate(&x).ok()?;
        let worst = problem
            .unsafe_region
            .iter()
            .min_by(|a, c| a.slack(&y).total_cmp(&c.slack(&y)))
            .expect("non-empty");
        let g = problem
            .network
            .input_gradient(&x, &worst.slack_direction())
            .ok()?;
        for (i, gi) in g.iter().enumerate() {
            if *gi != 0.0 {
                x[i] += pgd.step_size * b.width(i) * gi.signum();
            }
        }
        b.clamp(&mut x);
    }
    None
}

/// Multi-restart sign-gradient attack from seeded random box points.
pub fn pgd_prefilter(
    problem: &VerificationProblem,
    pgd: &PgdConfig,
    seed: u64,
) -> Option<Counterexample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &problem.input_box;
    for _ in 0..pgd.restarts {
        let x: Vec<f64> = (0..b.dim())
            .map(|i| {
                if b.width(i) > 0.0 {
                    rng.gen_range(b.lower()[i]..=b.upper()[i])
                } else {
                    b.lower()[i]
                }
            })
            .collect();
        if let Some(c) = local_counterexample_search(problem, &x, pgd) {
            return Some(c);
        }
    }
    None
}

/// Appends `t ≤ slack_k(y)` for every unsafe constraint and maximizes `t`.
fn max_min_slack(model: &LpModel, problem: &VerificationProblem) -> LpModel {
    let mut m = model.clone();
    let t = m.lp.add_var("margin", f64::NEG_INFINITY, f64::INFINITY);
    for (k, c) in problem.unsafe_region.iter().enumerate() {
        let mut coeffs: Vec<(usize, f64)> = m
            .layout
            .output
            .iter()
            .zip(c.slack_direction())
            .map(|(&j, d)| (j, d))
            .collect();
        coeffs.push((t, -1.0));
        let constant = match c.relation {
            Relation::Le => c.bound,
            Relation::Ge => -c.bound,
        };
        m.lp.add_row(LpRow::new(
            format!("margin{k}"),
            coeffs,
            RowKind::Ge,
            -constant,
        ));
    }
    m.lp.set_objective(vec![(t, -1.0)]);
    m
}

enum RegionResult {
    Unsat,
    Violated(Counterexample),
    Unknown(UnknownReason),
    Cancelled,
}

struct Shared<'a> {
    config: &'a SolverConfig,
    clauses: &'a ClausePool,
    paths: &'a PathPool,
    analyzer: &'a Analyzer,
    cancel: &'a AtomicBool,
    deadline: Option<Instant>,
    n_regions: usize,
    lp_counter: AtomicUsize,
    inline_stats: Mutex<AnalyzerStats>,
}

enum Step {
    Continue,
    Refuted,
}

struct RegionRun<'a, 'b> {
    shared: &'b Shared<'a>,
    sub: &'b Subproblem,
    trail: Trail,
    db: ClauseDb,
    cursor: u64,
    seen: HashSet<Vec<Literal>>,
    stats: SolverStats,
    nodes: Vec<SearchTreeNode>,
    /// Latest node at each decision level.
    level_nodes: Vec<usize>,
    incomplete: bool,
}

impl<'a, 'b> RegionRun<'a, 'b> {
    fn new(shared: &'b Shared<'a>, sub: &'b Subproblem) -> Self {
        let space = VarSpace::new(&sub.problem.network.hidden_widths(), shared.n_regions);
        let mut trail = Trail::new(space.clone());
        if sub.guard.is_some() {
            for r in 0..shared.n_regions as u32 {
                let lit = Literal::region(r);
                let lit = if r == sub.id { lit } else { lit.negate() };
                trail
                    .assign(lit, Reason::TheoryImplied)
                    .expect("fresh trail");
            }
        }
        Self {
            shared,
            sub,
            trail,
            db: ClauseDb::new(space),
            cursor: 0,
            seen: HashSet::new(),
            stats: SolverStats::default(),
            nodes: Vec::new(),
            level_nodes: Vec::new(),
            incomplete: false,
        }
    }

    fn open_node(&mut self, label: String, after_decision: bool) -> usize {
        let level = self.trail.level() as usize;
        let parent = if after_decision {
            level
                .checked_sub(1)
                .and_then(|l| self.level_nodes.get(l).copied())
        } else {
            self.level_nodes.get(level).copied()
        };
        let id = self.nodes.len();
        self.nodes.push(SearchTreeNode {
            id,
            parent,
            region: self.sub.id,
            label,
            status: NodeStatus::Open,
        });
        self.level_nodes.truncate(level);
        self.level_nodes.push(id);
        self.stats.states_explored += 1;
        id
    }

    fn install(&mut self, clause: Clause) -> bool {
        if !self.seen.insert(clause.literals().to_vec()) {
            return false;
        }
        self.db
            .add(clause, &self.trail)
            .expect("clause over known variables");
        true
    }

    /// Learns the negation of the decisions up to `max_level` and backjumps
    /// so that the last of them flips.
    fn negate_decisions(&mut self, max_level: u32) -> Step {
        let decisions: Vec<(Literal, u32)> = self
            .trail
            .entries()
            .iter()
            .filter(|e| e.reason == Reason::Decision && e.level <= max_level)
            .map(|e| (e.literal, e.level))
            .collect();
        let Some(&(_, top)) = decisions.last() else {
            return Step::Refuted;
        };
        let target = decisions.len().checked_sub(2).map_or(0, |i| decisions[i].1);
        debug_assert!(target < top);
        backtrack(&mut self.trail, &mut self.db, target).expect("target below current level");
        let clause = Clause::new(
            decisions.iter().map(|(l, _)| l.negate()).collect(),
            ClauseOrigin::PathNegation,
        )
        .expect("distinct decisions");
        self.stats.clauses_learned.bump(ClauseOrigin::PathNegation);
        self.seen.insert(clause.literals().to_vec());
        self.db
            .add(clause, &self.trail)
            .expect("clause over known variables");
        Step::Continue
    }

    fn resolve_conflict(&mut self, idx: usize) -> Step {
        let mut levels: Vec<u32> = self
            .db
            .clause(idx)
            .literals()
            .iter()
            .map(|l| {
                self.trail
                    .level_of(l.var)
                    .expect("falsified clause is assigned")
            })
            .collect();
        levels.sort_unstable_by(|a, b| b.cmp(a));
        let top = levels[0];
        if top == 0 {
            return Step::Refuted;
        }
        match levels.get(1) {
            None => {
                backtrack(&mut self.trail, &mut self.db, 0).expect("level above zero");
                Step::Continue
            }
            Some(&second) if second < top => {
                backtrack(&mut self.trail, &mut self.db, second).expect("below top");
                Step::Continue
            }
            Some(_) => self.negate_decisions(top),
        }
    }

    fn refute_theory(&mut self, node: usize, status: NodeStatus) -> Step {
        self.nodes[node].status = status;
        self.stats.unsat_paths += 1;
        let path: Vec<Literal> = self.trail.neuron_literals().collect();
        let cfg = self.shared.config;
        if cfg.learning && !path.is_empty() && !self.shared.cancel.load(Ordering::SeqCst) {
            let _ = self.shared.paths.submit(path, self.sub.id);
            if cfg.deterministic {
                let mut st = self
                    .shared
                    .inline_stats
                    .lock()
                    .unwrap_or_else(|e| e.into_inner());
                while let Some(p) = self.shared.paths.take_latest() {
                    self.shared
                        .analyzer
                        .process(&p, self.shared.clauses, &mut st);
                }
            }
        }
        self.negate_decisions(self.trail.level())
    }

    fn fetch(&mut self) {
        if !self.shared.config.learning {
            return;
        }
        for c in self.shared.clauses.fetch_since(self.cursor) {
            self.cursor = c.id;
            if self.install(c) {
                self.stats.clauses_fetched += 1;
            }
        }
    }

    fn solve_lp(&mut self, model: &LpModel) -> Option<LpResult> {
        self.stats.lp_calls += 1;
        if let Some(dir) = &self.shared.config.dump_lp {
            let n = self.shared.lp_counter.fetch_add(1, Ordering::SeqCst);
            let _ = std::fs::write(
                dir.join(format!("r{}_{n}.lp", self.sub.id)),
                model.lp.to_lp_string(),
            );
        }
        let budget = Budget {
            deadline: self.shared.deadline,
            cancel: Some(self.shared.cancel),
        };
        match solve_within(&model.lp, budget) {
            Ok(r) => Some(r),
            // The loop head reports the timeout or cancellation.
            Err(LpError::Interrupted) => None,
            Err(_) => {
                self.stats.lp_stalls += 1;
                None
            }
        }
    }

    fn run(&mut self) -> RegionResult {
        let problem = &self.sub.problem;
        let net = problem.network.clone();
        let cfg = self.shared.config;
        let mut label = match self.sub.guard {
            Some(g) => format!("region {}", g),
            None => "root".to_string(),
        };
        let mut after_decision = false;
        loop {
            if self.shared.cancel.load(Ordering::SeqCst) {
                return RegionResult::Cancelled;
            }
            if self.shared.deadline.is_some_and(|d| Instant::now() >= d) {
                return RegionResult::Unknown(UnknownReason::Timeout);
            }
            self.fetch();
            let node = self.open_node(
                std::mem::replace(&mut label, "implied".into()),
                after_decision,
            );
            after_decision = false;
            if let Propagation::Conflict(idx) = unit_propagate(&mut self.db, &mut self.trail) {
                self.nodes[node].status = NodeStatus::PrunedByClause;
                match self.resolve_conflict(idx) {
                    Step::Refuted => return self.finish_unsat(),
                    Step::Continue => continue,
                }
            }

            let phases = PhaseMap::from_literals(
                &net,
                self.trail.neuron_literals().collect::<Vec<_>>().iter(),
            );
            let bounds = match propagate_bounds(&net, &problem.input_box, &phases) {
                BoundsOutcome::InfeasiblePhases(_) => {
                    match self.refute_theory(node, NodeStatus::UnsatBounds) {
                        Step::Refuted => return self.finish_unsat(),
                        Step::Continue => continue,
                    }
                }
                BoundsOutcome::Bounds(b) => b,
            };
            if let BoundCheck::CannotReach(_) =
                check_unsafe_by_bounds(&bounds, &problem.unsafe_region)
            {
                match self.refute_theory(node, NodeStatus::UnsatBounds) {
                    Step::Refuted => return self.finish_unsat(),
                    Step::Continue => continue,
                }
            }

            if cfg.learning {
                let mut path: Vec<Literal> = self.trail.neuron_literals().collect();
                path.extend(self.sub.guard);
                for c in derive_phase_clauses(&bounds, &path) {
                    self.shared.clauses.publish(c.clone());
                    if self.install(c) {
                        self.stats.clauses_learned.bump(ClauseOrigin::BoundImplied);
                    }
                }
                if let Propagation::Conflict(idx) = unit_propagate(&mut self.db, &mut self.trail) {
                    self.nodes[node].status = NodeStatus::PrunedByClause;
                    match self.resolve_conflict(idx) {
                        Step::Refuted => return self.finish_unsat(),
                        Step::Continue => continue,
                    }
                }
            }

            let phases = PhaseMap::from_literals(
                &net,
                self.trail.neuron_literals().collect::<Vec<_>>().iter(),
            );
            let model = build_lp(problem, &phases, &bounds);
            let lp = self.solve_lp(&model);
            if lp.as_ref().is_some_and(LpResult::is_infeasible) {
                match self.refute_theory(node, NodeStatus::UnsatLp) {
                    Step::Refuted => return self.finish_unsat(),
                    Step::Continue => continue,
                }
            }
            let point = lp
                .as_ref()
                .and_then(|r| r.point())
                .map(|p| model.layout.inputs_of(p));

            let mut starts: Vec<Vec<f64>> = point.iter().cloned().collect();
            if self.nodes.len() == 1 {
                starts.push(problem.input_box.center());
            }
            for s in &starts {
                if let Some(c) = local_counterexample_search(problem, s, &cfg.pgd) {
                    self.nodes[node].status = NodeStatus::Sat;
                    return RegionResult::Violated(c);
                }
            }

            if let Some(lit) = branch_select(&bounds, &self.trail, cfg.branch) {
                self.nodes[node].status = NodeStatus::Branched;
                self.trail.decide(lit).expect("unassigned branch literal");
                label = lit.to_string();
                after_decision = true;
                continue;
            }

            // Every neuron is decided: the LP is exact.
            if point.is_some() {
                let mm = max_min_slack(&model, problem);
                if let Some(p) = self.solve_lp(&mm).as_ref().and_then(|r| r.point()) {
                    if let Ok(CounterexampleCheck::Valid(c)) =
                        check_counterexample(problem, &model.layout.inputs_of(p))
                    {
                        self.nodes[node].status = NodeStatus::Sat;
                        return RegionResult::Violated(c);
                    }
                }
            }
            self.incomplete = true;
            if let Step::Refuted = self.negate_decisions(self.trail.level()) {
                return self.finish_unsat();
            }
        }
    }

    fn finish_unsat(&self) -> RegionResult {
        if self.incomplete {
            RegionResult::Unknown(UnknownReason::Stalled)
        } else {
            RegionResult::Unsat
        }
    }
}

struct RegionReport {
    id: u32,
    result: RegionResult,
    stats: SolverStats,
    nodes: Vec<SearchTreeNode>,
}

fn run_region(shared: &Shared<'_>, sub: &Subproblem) -> RegionReport {
    let mut run = RegionRun::new(shared, sub);
    let result = run.run();
    RegionReport {
        id: sub.id,
        result,
        stats: run.stats,
        nodes: run.nodes,
    }
}

/// Decides whether any input of the box reaches the unsafe region.
pub fn verify(
    problem: &VerificationProblem,
    config: &SolverConfig,
) -> Result<VerifyOutcome, String> {
    config.validate()?;
    let started = Instant::now();
    let regions = split_input(problem, config.split_threshold);
    let contexts: Vec<Option<RegionContext>> = regions
        .iter()
        .map(|s| RegionContext::new(s.problem.clone(), s.guard, config.elastic_base))
        .collect();
    let deadline = config.timeout.map(|t| started + t);
    let analyzer = Analyzer::new(contexts).with_deadline(deadline);
    let clauses = ClausePool::new();
    let paths = PathPool::new(config.path_capacity);
    let cancel = AtomicBool::new(false);
    let n_regions = if config.split_threshold > 0 {
        regions.len()
    } else {
        0
    };
    let shared = Shared {
        config,
        clauses: &clauses,
        paths: &paths,
        analyzer: &analyzer,
        cancel: &cancel,
        deadline,
        n_regions,
        lp_counter: AtomicUsize::new(0),
        inline_stats: Mutex::new(AnalyzerStats::default()),
    };

    let stop = || {
        cancel.store(true, Ordering::SeqCst);
        clauses.close();
        paths.close();
    };
    let mut reports: Vec<RegionReport> = Vec::new();
    let mut analyzer_stats = AnalyzerStats::default();
    if config.deterministic {
        for sub in &regions {
            let r = run_region(&shared, sub);
            let violated = matches!(r.result, RegionResult::Violated(_));
            reports.push(r);
            if violated {
                stop();
                break;
            }
        }
        analyzer_stats = *shared
            .inline_stats
            .lock()
            .unwrap_or_else(|e| e.into_inner());
    } else {
        let queue: Mutex<VecDeque<&Subproblem>> = Mutex::new(regions.iter().collect());
        let out: Mutex<Vec<RegionReport>> = Mutex::new(Vec::new());
        let shutdown = AtomicBool::new(false);
        let analyzer_totals: Mutex<Vec<AnalyzerStats>> = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            let analyzers: Vec<_> = (0..if config.learning {
                config.m_analyzers
            } else {
                0
            })
                .map(|_| {
                    s.spawn(|| {
                        let st = analyzer_loop(&analyzer, &paths, &clauses, &shutdown);
                        analyzer_totals
                            .lock()
                            .unwrap_or_else(|e| e.into_inner())
                            .push(st);
                    })
                })
                .collect();
            let solvers: Vec<_> = (0..config.n_solvers.min(regions.len()))
                .map(|_| {
                    s.spawn(|| loop {
                        let next = queue.lock().unwrap_or_else(|e| e.into_inner()).pop_front();
                        let Some(sub) = next else { break };
                        let r = run_region(&shared, sub);
                        if matches!(r.result, RegionResult::Violated(_)) {
                            stop();
                        }
                        out.lock().unwrap_or_else(|e| e.into_inner()).push(r);
                    })
                })
                .collect();
            for h in solvers {
                h.join().expect("solver worker panicked");
            }
            shutdown.store(true, Ordering::SeqCst);
            paths.close();
            for h in analyzers {
                h.join().expect("analyzer worker panicked");
            }
        });
        reports = out.into_inner().unwrap_or_else(|e| e.into_inner());
        for st in analyzer_totals
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
        {
            analyzer_stats.paths_taken += st.paths_taken;
            analyzer_stats.cores += st.cores;
            analyzer_stats.full_path_fallbacks += st.full_path_fallbacks;
            analyzer_stats.not_infeasible += st.not_infeasible;
            analyzer_stats.published += st.published;
            analyzer_stats.duplicates += st.duplicates;
        }
    }
    reports.sort_by_key(|r| r.id);

    let mut stats = SolverStats::default();
    let mut forest = SearchForest::default();
    let mut verdict = None;
    let mut unknown = None;
    let mut all_refuted = true;
    for r in reports.iter_mut() {
        stats.absorb(&r.stats);
        let offset = forest.nodes.len();
        for mut n in r.nodes.drain(..) {
            n.id += offset;
            n.parent = n.parent.map(|p| p + offset);
            forest.nodes.push(n);
        }
        match &r.result {
            RegionResult::Violated(c) if verdict.is_none() => {
                verdict = Some(Verdict::Violated(c.clone()))
            }
            RegionResult::Violated(_) | RegionResult::Unsat => {}
            RegionResult::Unknown(reason) => {
                all_refuted = false;
                if unknown != Some(UnknownReason::Timeout) {
                    unknown = Some(*reason);
                }
            }
            RegionResult::Cancelled => all_refuted = false,
        }
    }
    if reports.len() < regions.len() {
        all_refuted = false;
    }
    let pool = clauses.snapshot();
    for c in &pool {
        if c.origin != ClauseOrigin::BoundImplied {
            stats.clauses_learned.bump(c.origin);
        }
    }
    let verdict = verdict.unwrap_or(match (all_refuted, unknown) {
        (true, _) => Verdict::Holds,
        (false, Some(reason)) => Verdict::Unknown(reason),
        (false, None) => Verdict::Unknown(UnknownReason::Timeout),
    });
    stats.wall_time_s = started.elapsed().as_secs_f64();
    Ok(VerifyOutcome {
        verdict,
        stats,
        forest,
        regions,
        pool,
        analyzer: analyzer_stats,
    })
}

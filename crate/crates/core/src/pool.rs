//! Shared state between solver and analyzer workers: a sequence-numbered
//! clause pool and a bounded, timestamped pool of refuted paths.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::bounds::{propagate_bounds, PhaseMap};
use crate::cdcl::{Clause, ClauseOrigin, Literal};
use crate::lp::{
    build_base_lp, elastic_filter_binary_within, elastic_filter_within, path_constraint,
    BinaryOutcome, Budget, ConflictCore, CoreOrigin, ElasticBase, ElasticError, LpError, LpModel,
    PathConstraint,
};
use crate::property::VerificationProblem;

pub const DEFAULT_PATH_CAPACITY: usize = 64;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // A panicking worker leaves data that is still structurally valid.
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Publish {
    Added(u64),
    /// An identical literal set is already stored under this sequence id.
    Duplicate(u64),
    /// The pool no longer accepts clauses.
    Closed,
}

#[derive(Default)]
struct ClauseInner {
    clauses: Vec<Clause>,
    index: HashMap<Vec<Literal>, u64>,
}

/// Append-only clause store; sequence ids start at 1 and are dense.
#[derive(Default)]
pub struct ClausePool {
    inner: Mutex<ClauseInner>,
    closed: AtomicBool,
}

impl ClausePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, mut clause: Clause) -> Publish {
        let mut g = lock(&self.inner);
        // Checked under the lock so nothing lands after close returns.
        if self.closed.load(Ordering::SeqCst) {
            return Publish::Closed;
        }
        if let Some(&seq) = g.index.get(clause.literals()) {
            return Publish::Duplicate(seq);
        }
        let seq = g.clauses.len() as u64 + 1;
        clause.id = seq;
        g.index.insert(clause.literals().to_vec(), seq);
        g.clauses.push(clause);
        Publish::Added(seq)
    }

    /// Clauses with id greater than `seq`, in id order.
    pub fn fetch_since(&self, seq: u64) -> Vec<Clause> {
        let g = lock(&self.inner);
        g.clauses
            .get(seq as usize..)
            .map(<[Clause]>::to_vec)
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        lock(&self.inner).clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<Clause> {
        self.fetch_since(0)
    }

    pub fn close(&self) {
        let _g = lock(&self.inner);
        self.closed.store(true, Ordering::SeqCst);
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// One line per clause: `seq origin literals...`.
    pub fn audit_dump(&self) -> String {
        self.snapshot()
            .iter()
            .map(|c| format!("{} {} {}\n", c.id, c.origin.tag(), c))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnsatPath {
    pub literals: Vec<Literal>,
    pub timestamp: u64,
    pub region: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PoolError {
    #[error("empty path")]
    EmptyPath,
}

struct PathInner {
    paths: VecDeque<UnsatPath>,
    next_ts: u64,
    closed: bool,
}

/// Bounded LIFO of refuted paths; overflow evicts the oldest.
pub struct PathPool {
    inner: Mutex<PathInner>,
    ready: Condvar,
    capacity: usize,
}

impl Default for PathPool {
    fn default() -> Self {
        Self::new(DEFAULT_PATH_CAPACITY)
    }
}

impl PathPool {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "path pool capacity must be positive");
        Self {
            inner: Mutex::new(PathInner {
                paths: VecDeque::new(),
                next_ts: 1,
                closed: false,
            }),
            ready: Condvar::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn submit(&self, literals: Vec<Literal>, region: u32) -> Result<u64, PoolError> {
        if literals.is_empty() {
            return Err(PoolError::EmptyPath);
        }
        let mut g = lock(&self.inner);
        let timestamp = g.next_ts;
        g.next_ts += 1;
        if g.paths.len() == self.capacity {
            g.paths.pop_front();
        }
        g.paths.push_back(UnsatPath {
            literals,
            timestamp,
            region,
        });
        drop(g);
        self.ready.notify_one();
        Ok(timestamp)
    }

    pub fn take_latest(&self) -> Option<UnsatPath> {
        lock(&self.inner).paths.pop_back()
    }

    /// Blocks up to `timeout` for a path; `None` on timeout or close.
    pub fn wait_take(&self, timeout: Duration) -> Option<UnsatPath> {
        let g = lock(&self.inner);
        let (mut g, _) = self
            .ready
            .wait_timeout_while(g, timeout, |p| p.paths.is_empty() && !p.closed)
            .unwrap_or_else(|e| e.into_inner());
        g.paths.pop_back()
    }

    pub fn len(&self) -> usize {
        lock(&self.inner).paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn close(&self) {
        lock(&self.inner).closed = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        lock(&self.inner).closed
    }
}

/// What the analyzer needs about one input region.
#[derive(Clone, Debug)]
pub struct RegionContext {
    pub problem: VerificationProblem,
    pub base: LpModel,
    /// Literal true exactly inside this region, if the box was split.
    pub guard: Option<Literal>,
}

impl RegionContext {
    /// `None` when the root bounds already contradict the region.
    pub fn new(
        problem: VerificationProblem,
        guard: Option<Literal>,
        base: ElasticBase,
    ) -> Option<Self> {
        let root = propagate_bounds(
            &problem.network,
            &problem.input_box,
            &PhaseMap::unknown(&problem.network),
        )
        .bounds()?;
        let base = build_base_lp(&problem, &root, base);
        Some(Self {
            problem,
            base,
            guard,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Analysis {
    /// The learned clause, not yet published.
    Clause(Clause),
    NotInfeasible,
    /// The region's base program is itself infeasible or the region is unknown.
    Skipped,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AnalyzerStats {
    pub paths_taken: u64,
    pub cores: u64,
    pub full_path_fallbacks: u64,
    pub not_infeasible: u64,
    pub published: u64,
    pub duplicates: u64,
}

/// Shrinks refuted paths to conflict cores.
pub struct Analyzer {
    regions: Vec<Option<RegionContext>>,
    deadline: Option<Instant>,
}

impl Analyzer {
    pub fn new(regions: Vec<Option<RegionContext>>) -> Self {
        Self {
            regions,
            deadline: None,
        }
    }

    /// LPs still running at `deadline` are abandoned without a clause.
    pub fn with_deadline(mut self, deadline: Option<Instant>) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn analyze(&self, path: &UnsatPath) -> Analysis {
        self.analyze_within(path, None)
    }

    fn analyze_within(&self, path: &UnsatPath, cancel: Option<&AtomicBool>) -> Analysis {
        let budget = Budget {
            deadline: self.deadline,
            cancel,
        };
        let interrupted = |e: &ElasticError| matches!(e, ElasticError::Lp(LpError::Interrupted));
        let Some(Some(ctx)) = self.regions.get(path.region as usize) else {
            return Analysis::Skipped;
        };
        let constraints: Vec<PathConstraint> = path
            .literals
            .iter()
            .filter_map(|&l| path_constraint(&ctx.base.layout, l))
            .collect();
        if constraints.is_empty() {
            return Analysis::Skipped;
        }
        let core = match elastic_filter_binary_within(&ctx.base.lp, &constraints, budget) {
            Ok(BinaryOutcome::NotInfeasible) => return Analysis::NotInfeasible,
            Ok(BinaryOutcome::Core(c)) if c.origin != CoreOrigin::FullPath => c,
            Ok(BinaryOutcome::Core(_)) => {
                match elastic_filter_within(&ctx.base.lp, &constraints, budget) {
                    Ok(c) => c,
                    Err(e) if interrupted(&e) => return Analysis::Skipped,
                    Err(_) => ConflictCore::full(constraints.len()),
                }
            }
            Err(_) => return Analysis::Skipped,
        };
        let origin = match core.origin {
            CoreOrigin::FullPath => ClauseOrigin::PathNegation,
            _ => ClauseOrigin::ElasticCore,
        };
        let mut lits: Vec<Literal> = core
            .literals(&constraints)
            .iter()
            .map(|l| l.negate())
            .collect();
        lits.extend(ctx.guard.map(Literal::negate));
        match Clause::new(lits, origin) {
            Ok(c) => Analysis::Clause(c),
            Err(_) => Analysis::Skipped,
        }
    }

    /// Analyzes `path` and publishes the result; returns the clause outcome.
    pub fn process(
        &self,
        path: &UnsatPath,
        clauses: &ClausePool,
        stats: &mut AnalyzerStats,
    ) -> Option<Publish> {
        self.process_within(path, clauses, stats, None)
    }

    fn process_within(
        &self,
        path: &UnsatPath,
        clauses: &ClausePool,
        stats: &mut AnalyzerStats,
        cancel: Option<&AtomicBool>,
    ) -> Option<Publish> {
        stats.paths_taken += 1;
        match self.analyze_within(path, cancel) {
            Analysis::Clause(c) => {
                if c.origin == ClauseOrigin::PathNegation {
                    stats.full_path_fallbacks += 1;
                } else {
                    stats.cores += 1;
                }
                let r = clauses.publish(c);
                match r {
                    Publish::Added(_) => stats.published += 1,
                    Publish::Duplicate(_) => stats.duplicates += 1,
                    Publish::Closed => {}
                }
                Some(r)
            }
            Analysis::NotInfeasible => {
                stats.not_infeasible += 1;
                None
            }
            Analysis::Skipped => None,
        }
    }
}

/// Takes the newest path until `shutdown` is set or the path pool closes.
/// Setting `shutdown` also interrupts the analysis in progress.
pub fn analyzer_loop(
    analyzer: &Analyzer,
    paths: &PathPool,
    clauses: &ClausePool,
    shutdown: &AtomicBool,
) -> AnalyzerStats {
    let mut stats = AnalyzerStats::default();
    while !shutdown.load(Ordering::SeqCst) {
        let Some(path) = paths.wait_take(Duration::from_millis(20)) else {
            if paths.is_closed() {
                break;
            }
            continue;
        };
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        analyzer.process_within(&path, clauses, &mut stats, Some(shutdown));
    }
    stats
}

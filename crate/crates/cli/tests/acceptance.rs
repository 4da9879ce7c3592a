//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nncdcl::bounds::{
    propagate_bounds, propagate_bounds_refined, BoundsMap, BoundsOutcome, Phase, PhaseMap,
};
use nncdcl::cdcl::{
    backjump_level, backtrack, learn_from_core, unit_propagate, BackjumpTarget, ClauseDb,
    Propagation, Trail, VarSpace,
};
use nncdcl::fixtures::{acas_like_network, oracle_suite, pruning_family, random_network};
use nncdcl::lp::{
    elastic_filter, elastic_filter_binary, solve, BinaryOutcome, LpError, LpProblem, LpResult,
    LpRow, PathConstraint, RowKind,
};
use nncdcl::nnet::{load_nnet, write_nnet};
use nncdcl::pool::{ClausePool, PathPool, Publish};
use nncdcl::solver::{verify, BranchHeuristic, SolverConfig, Verdict};
use nncdcl::{
    Clause, ClauseOrigin, InputBox, Literal, Network, NeuronId, Relation, Var, VerificationProblem,
};
use nncdcl_cli::describe;
use nncdcl_testkit::exact_lp::{self, RawLp, RefResult, Rel};
use nncdcl_testkit::naive_propagation::closure;
use nncdcl_testkit::polygon::{
    enumerate, evaluate, unsafe_patterns, PolyVerdict, RawConstraint, RawNet,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed of the oracle suite shared by criteria 1, 2, 3 and 10.
const SUITE_SEED: u64 = 0;
const SUITE_SIZE: usize = 40;
const SUITE_TIME_LIMIT: Duration = Duration::from_secs(300);
/// Counterexample outputs may miss the unsafe region by at most this much.
const COUNTEREXAMPLE_TOL: f64 = 1e-9;
const PRUNING_SEED: u64 = 11;
const PRUNING_SIZE: usize = 10;
const MIN_MEDIAN_REDUCTION: f64 = 0.20;
const ELASTIC_SYSTEMS: usize = 200;
const BOUND_SAMPLES: usize = 100_000;
const SAMPLES_PER_SETUP: usize = 200;
const BOUND_TOL: f64 = 1e-9;
const PROPAGATION_SETS: usize = 1000;
const RANDOM_LPS: usize = 50;
const LP_VALUE_GAP: f64 = 1e-6;
/// Primal feasibility of returned LP points.
const LP_POINT_TOL: f64 = 1e-9;
const POOL_THREADS: usize = 8;
const POOL_OPS: usize = 100_000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
/// Sparse row: `(var, coeff)` terms, relation, right-hand side.
type SparseRow = (Vec<(usize, f64)>, Rel, f64);

fn main() {
    let criteria: [Criterion; 11] = [
        ("oracle agreement on the seeded suite", oracle_agreement),
        ("published clauses are LP-implied", clause_audit),
        (
            "clause learning never explores more nodes",
            pruning_dominance,
        ),
        ("elastic filters return infeasible cores", elastic_cores),
        (
            "propagated bounds contain sampled activations",
            bound_soundness,
        ),
        (
            "unit propagation matches the naive oracle",
            propagation_oracle,
        ),
        ("simplex matches the exact reference", lp_engine),
        ("learned chain refutes at level 0", chain_replay),
        ("pool histories under contention", pool_stress),
        ("deterministic batch CSV is reproducible", batch_determinism),
        ("ACAS-shaped NNet ingestion", nnet_ingestion),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({detail}; {secs:.1}s)", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", k + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    std::process::exit(if failed == 0 { 0 } else { 1 });
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn raw_net(net: &Network) -> RawNet {
    RawNet {
        layers: net
            .layers()
            .iter()
            .map(|l| {
                (
                    (0..l.weights.rows())
                        .map(|r| l.weights.row(r).to_vec())
                        .collect(),
                    l.bias.clone(),
                )
            })
            .collect(),
    }
}

fn raw_unsafe(problem: &VerificationProblem) -> Vec<RawConstraint> {
    problem
        .unsafe_region
        .iter()
        .map(|c| RawConstraint {
            coeffs: c.coeffs.clone(),
            le: c.relation == Relation::Le,
            bound: c.bound,
        })
        .collect()
}

fn corners(b: &InputBox) -> ([f64; 2], [f64; 2]) {
    ([b.lower()[0], b.lower()[1]], [b.upper()[0], b.upper()[1]])
}

fn oracle_agreement() -> Outcome {
    let started = Instant::now();
    let config = SolverConfig::deterministic();
    let (mut holds, mut violated) = (0, 0);
    for inst in oracle_suite(SUITE_SEED, SUITE_SIZE) {
        let p = &inst.problem;
        let out = verify(p, &config).map_err(|e| format!("{}: {e}", inst.name))?;
        let (lo, hi) = corners(&p.input_box);
        let truth = enumerate(&raw_net(&p.network), lo, hi, &raw_unsafe(p)).verdict;
        match (&out.verdict, truth) {
            (Verdict::Holds, PolyVerdict::Unsat) => holds += 1,
            (Verdict::Violated(c), PolyVerdict::Sat(_)) => {
                let y = evaluate(&raw_net(&p.network), &c.x);
                ensure(
                    p.input_box.contains(&c.x) && p.min_slack(&y) >= -COUNTEREXAMPLE_TOL,
                    || format!("{}: invalid counterexample {:?}", inst.name, c.x),
                )?;
                violated += 1;
            }
            (v, t) => {
                return Err(format!(
                    "{}: verifier {}, enumeration {t:?}",
                    inst.name,
                    v.label()
                ))
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < SUITE_TIME_LIMIT, || {
        format!("suite took {elapsed:?}")
    })?;
    Ok(format!(
        "{holds} holds, {violated} violated, 0 disagreements in {:.1}s",
        elapsed.as_secs_f64()
    ))
}

/// Exact LP over inputs, pre- and post-activations: the box, `phases` as
/// exact ReLU branches, triangles from `bounds` elsewhere, and the unsafe
/// region on the output expression.
fn relaxation_lp(
    problem: &VerificationProblem,
    b: &InputBox,
    phases: &PhaseMap,
    bounds: &BoundsMap,
) -> RawLp {
    let net = &problem.network;
    let mut lo: Vec<f64> = b.lower().to_vec();
    let mut hi: Vec<f64> = b.upper().to_vec();
    let mut rows: Vec<SparseRow> = Vec::new();
    let mut prev: Vec<usize> = (0..b.dim()).collect();
    let layers = net.layers();
    for (l, layer) in layers[..layers.len() - 1].iter().enumerate() {
        let mut post_vars = Vec::new();
        for i in 0..layer.width() {
            let pre = bounds.neuron(NeuronId::new(l, i)).pre;
            let (z, a) = (lo.len(), lo.len() + 1);
            lo.extend([pre.lo, 0.0]);
            hi.extend([pre.hi, pre.hi.max(0.0)]);
            let mut def: Vec<(usize, f64)> = prev
                .iter()
                .zip(layer.weights.row(i))
                .map(|(&v, &w)| (v, -w))
                .collect();
            def.push((z, 1.0));
            rows.push((def, Rel::Eq, layer.bias[i]));
            let phase = phases.get(NeuronId::new(l, i));
            let active = phase == Phase::Active || (phase == Phase::Unknown && pre.lo >= 0.0);
            let inactive = phase == Phase::Inactive || (phase == Phase::Unknown && pre.hi <= 0.0);
            if phase == Phase::Active {
                rows.push((vec![(z, 1.0)], Rel::Ge, 0.0));
            }
            if phase == Phase::Inactive {
                rows.push((vec![(z, 1.0)], Rel::Le, 0.0));
            }
            if active {
                rows.push((vec![(a, 1.0), (z, -1.0)], Rel::Eq, 0.0));
            } else if inactive {
                rows.push((vec![(a, 1.0)], Rel::Eq, 0.0));
            } else {
                rows.push((vec![(a, 1.0), (z, -1.0)], Rel::Ge, 0.0));
                rows.push((
                    vec![(a, pre.hi - pre.lo), (z, -pre.hi)],
                    Rel::Le,
                    -pre.hi * pre.lo,
                ));
            }
            post_vars.push(a);
        }
        prev = post_vars;
    }
    let out = layers.last().expect("output layer");
    for c in &problem.unsafe_region {
        let mut coeffs = vec![0.0; prev.len()];
        let mut rhs = c.bound;
        for (k, ck) in c.coeffs.iter().enumerate() {
            rhs -= ck * out.bias[k];
            for (j, w) in out.weights.row(k).iter().enumerate() {
                coeffs[j] += ck * w;
            }
        }
        let rel = if c.relation == Relation::Le {
            Rel::Le
        } else {
            Rel::Ge
        };
        rows.push((prev.iter().copied().zip(coeffs).collect(), rel, rhs));
    }
    let n = lo.len();
    let dense = |sparse: Vec<(usize, f64)>| {
        let mut r = vec![0.0; n];
        for (j, v) in sparse {
            r[j] += v;
        }
        r
    };
    RawLp {
        lo,
        hi,
        rows: rows
            .into_iter()
            .map(|(s, rel, rhs)| (dense(s), rel, rhs))
            .collect(),
        objective: None,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Certificate {
    Bounds,
    ExactLp,
}

/// How `base ∧ ¬clause` was shown infeasible under sound bounds of the
/// clause's region, if it was.
fn lp_implied(region: &VerificationProblem, negated: &PhaseMap) -> Option<Certificate> {
    let (net, b) = (&region.network, &region.input_box);
    let Some(root) = propagate_bounds(net, b, &PhaseMap::unknown(net)).bounds() else {
        return Some(Certificate::Bounds);
    };
    // Cheapest sources first: phases that are already bound-infeasible need no LP.
    let mut sources = Vec::new();
    for outcome in [
        propagate_bounds_refined(net, b, negated, &root),
        propagate_bounds(net, b, negated),
    ] {
        match outcome {
            BoundsOutcome::InfeasiblePhases(_) => return Some(Certificate::Bounds),
            BoundsOutcome::Bounds(tight) => sources.push(tight),
        }
    }
    sources.push(root);
    sources
        .iter()
        .any(|bounds| {
            exact_lp::solve(&relaxation_lp(region, b, negated, bounds)) == RefResult::Infeasible
        })
        .then_some(Certificate::ExactLp)
}

fn clause_audit() -> Outcome {
    let config = SolverConfig {
        n_solvers: 4,
        m_analyzers: 2,
        ..SolverConfig::default()
    };
    let (mut checked, mut by_bounds, mut by_lp) = (0, 0, 0);
    for inst in oracle_suite(SUITE_SEED, SUITE_SIZE) {
        let out = verify(&inst.problem, &config).map_err(|e| format!("{}: {e}", inst.name))?;
        for clause in &out.pool {
            let region_lits: Vec<&Literal> = clause
                .literals()
                .iter()
                .filter(|l| matches!(l.var, Var::Region(_)))
                .collect();
            let neuron_lits: Vec<&Literal> = clause
                .literals()
                .iter()
                .filter(|l| l.neuron_id().is_some())
                .collect();
            if neuron_lits.is_empty() {
                // Region bookkeeping: only the covering clause over all regions is valid.
                let covering = region_lits.len() == out.regions.len()
                    && region_lits.iter().all(|l| l.positive);
                ensure(covering, || {
                    format!("{}: region-only clause {clause:?}", inst.name)
                })?;
                checked += 1;
                continue;
            }
            let region = match region_lits.as_slice() {
                [] => &inst.problem,
                [l] if !l.positive => {
                    let Var::Region(r) = l.var else {
                        unreachable!()
                    };
                    &out.regions
                        .iter()
                        .find(|s| s.id == r)
                        .ok_or("unknown region")?
                        .problem
                }
                _ => {
                    return Err(format!(
                        "{}: unexpected region literals in {clause:?}",
                        inst.name
                    ))
                }
            };
            let negated = PhaseMap::from_literals(
                &inst.problem.network,
                neuron_lits
                    .iter()
                    .map(|l| l.negate())
                    .collect::<Vec<_>>()
                    .iter(),
            );
            match lp_implied(region, &negated) {
                Some(Certificate::Bounds) => by_bounds += 1,
                Some(Certificate::ExactLp) => by_lp += 1,
                None => {
                    return Err(format!(
                        "{}: clause {clause:?} is not LP-implied",
                        inst.name
                    ))
                }
            }
            // Semantic cross-check: no unsafe activation region satisfies ¬clause.
            let (lo, hi) = corners(&region.input_box);
            for pattern in unsafe_patterns(&raw_net(&region.network), lo, hi, &raw_unsafe(region)) {
                let excluded = neuron_lits.iter().any(|l| {
                    let id = l.neuron_id().expect("neuron literal");
                    pattern[id.layer][id.index] == l.positive
                });
                ensure(excluded, || {
                    format!(
                        "{}: clause {clause:?} cuts off a reachable unsafe region",
                        inst.name
                    )
                })?;
            }
            checked += 1;
        }
    }
    ensure(checked > 0, || "no clauses were published".into())?;
    Ok(format!(
        "{checked} clauses, 0 violations; {by_bounds} bound-infeasible, {by_lp} by exact LP"
    ))
}

fn pruning_dominance() -> Outcome {
    let on = SolverConfig {
        branch: BranchHeuristic::Earliest,
        split_threshold: 0,
        ..SolverConfig::deterministic()
    };
    let off = SolverConfig {
        learning: false,
        ..on.clone()
    };
    let states =
        |p: &VerificationProblem, c: &SolverConfig| verify(p, c).map_err(|e| e.to_string());
    let mut unsat = 0;
    for inst in oracle_suite(SUITE_SEED, SUITE_SIZE)
        .into_iter()
        .chain(pruning_family(PRUNING_SEED, PRUNING_SIZE))
    {
        let a = states(&inst.problem, &on)?;
        if a.verdict != Verdict::Holds {
            continue;
        }
        unsat += 1;
        let b = states(&inst.problem, &off)?;
        ensure(b.verdict == Verdict::Holds, || {
            format!("{}: verdict changed without learning", inst.name)
        })?;
        ensure(a.stats.states_explored <= b.stats.states_explored, || {
            format!(
                "{}: {} states with learning, {} without",
                inst.name, a.stats.states_explored, b.stats.states_explored
            )
        })?;
    }
    let mut reductions = Vec::new();
    for inst in pruning_family(PRUNING_SEED, PRUNING_SIZE) {
        let a = states(&inst.problem, &on)?.stats.states_explored as f64;
        let b = states(&inst.problem, &off)?.stats.states_explored as f64;
        reductions.push(1.0 - a / b);
    }
    reductions.sort_by(f64::total_cmp);
    let n = reductions.len();
    let median = if n % 2 == 1 {
        reductions[n / 2]
    } else {
        (reductions[n / 2 - 1] + reductions[n / 2]) / 2.0
    };
    ensure(median >= MIN_MEDIAN_REDUCTION, || {
        format!("median reduction {:.1}%", 100.0 * median)
    })?;
    Ok(format!(
        "{unsat} UNSAT instances dominated, median reduction {:.1}%",
        100.0 * median
    ))
}

fn lp_rel(kind: RowKind) -> Rel {
    match kind {
        RowKind::Le => Rel::Le,
        RowKind::Ge => Rel::Ge,
        RowKind::Eq => Rel::Eq,
    }
}

fn raw_lp(lp: &LpProblem, extra: &[&LpRow]) -> RawLp {
    let n = lp.vars.len();
    let dense = |coeffs: &[(usize, f64)]| {
        let mut a = vec![0.0; n];
        for &(j, c) in coeffs {
            a[j] += c;
        }
        a
    };
    RawLp {
        lo: lp.vars.iter().map(|v| v.lo).collect(),
        hi: lp.vars.iter().map(|v| v.hi).collect(),
        rows: lp
            .rows
            .iter()
            .chain(extra.iter().copied())
            .map(|r| (dense(&r.coeffs), lp_rel(r.kind), r.rhs))
            .collect(),
        objective: lp.objective.as_deref().map(dense),
    }
}

fn quarter(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-8..=8) as f64 / 4.0
}

fn sparse_row(rng: &mut ChaCha8Rng, n: usize, kind: RowKind, name: String) -> LpRow {
    let mut coeffs = Vec::new();
    for j in 0..n {
        if rng.gen_bool(0.6) {
            coeffs.push((j, quarter(rng)));
        }
    }
    LpRow::new(name, coeffs, kind, quarter(rng))
}

fn elastic_cores() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut infeasible, mut feasible) = (0, 0);
    let solve_with = |base: &LpProblem, path: &[PathConstraint], subset: &[usize]| {
        let rows: Vec<&LpRow> = subset.iter().flat_map(|&i| path[i].rows.iter()).collect();
        exact_lp::solve(&raw_lp(base, &rows))
    };
    while infeasible < ELASTIC_SYSTEMS {
        let n = rng.gen_range(1..=8);
        let mut base = LpProblem::new();
        for j in 0..n {
            base.add_var(format!("x{j}"), -1.0, 1.0);
        }
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect();
        for i in 0..rng.gen_range(0..=3) {
            let mut r = sparse_row(&mut rng, n, RowKind::Le, format!("b{i}"));
            r.rhs = r.activity(&x0) + rng.gen_range(0.0..0.5);
            base.add_row(r);
        }
        let path: Vec<PathConstraint> = (0..rng.gen_range(1..=6))
            .map(|i| {
                let kind = if rng.gen_bool(0.5) {
                    RowKind::Le
                } else {
                    RowKind::Ge
                };
                let mut r = sparse_row(&mut rng, n, kind, format!("p{i}"));
                r.rhs /= 2.0;
                PathConstraint {
                    literal: Literal::active(0, i),
                    rows: vec![r],
                }
            })
            .collect();
        let all: Vec<usize> = (0..path.len()).collect();
        let binary = elastic_filter_binary(&base, &path).map_err(|e| e.to_string())?;
        if solve_with(&base, &path, &all) != RefResult::Infeasible {
            feasible += 1;
            ensure(binary == BinaryOutcome::NotInfeasible, || {
                format!("binary filter found a core in a feasible system: {binary:?}")
            })?;
            continue;
        }
        infeasible += 1;
        let BinaryOutcome::Core(bin) = binary else {
            return Err("binary filter reported an infeasible system as not infeasible".into());
        };
        let plain = elastic_filter(&base, &path).map_err(|e| e.to_string())?;
        for core in [plain, bin] {
            ensure(core.indices.iter().all(|&i| i < path.len()), || {
                format!("core {core:?} leaves the path")
            })?;
            ensure(
                solve_with(&base, &path, &core.indices) == RefResult::Infeasible,
                || format!("core {core:?} is feasible with the base"),
            )?;
        }
        // Subset brute force: some infeasible subset exists and none is smaller than one.
        let smallest = (1u32..1 << path.len())
            .filter(|m| {
                let s: Vec<usize> = all.iter().copied().filter(|i| m >> i & 1 == 1).collect();
                solve_with(&base, &path, &s) == RefResult::Infeasible
            })
            .map(u32::count_ones)
            .min();
        ensure(smallest.is_some(), || {
            "brute force found no infeasible subset".into()
        })?;
    }
    Ok(format!(
        "{infeasible} infeasible and {feasible} feasible systems"
    ))
}

/// Pre-activations per hidden layer and the outputs.
fn trace(net: &Network, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut pres = Vec::new();
    let mut act = x.to_vec();
    for layer in net.layers() {
        let z: Vec<f64> = (0..layer.width())
            .map(|r| {
                layer.bias[r]
                    + layer
                        .weights
                        .row(r)
                        .iter()
                        .zip(&act)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect();
        if layer.relu {
            act = z.iter().map(|v| v.max(0.0)).collect();
            pres.push(z);
        } else {
            act = z;
        }
    }
    (pres, act)
}

fn bounds_contain(bounds: &BoundsMap, net: &Network, x: &[f64]) -> Result<(), String> {
    let (pres, out) = trace(net, x);
    for (l, layer) in pres.iter().enumerate() {
        for (i, &z) in layer.iter().enumerate() {
            let nb = bounds.neuron(NeuronId::new(l, i));
            let a = z.max(0.0);
            let ok = nb.pre.contains(z, BOUND_TOL)
                && nb.post.contains(a, BOUND_TOL)
                && nb.pre_lower.eval(x) <= z + BOUND_TOL
                && z <= nb.pre_upper.eval(x) + BOUND_TOL
                && nb.post_lower.eval(x) <= a + BOUND_TOL
                && a <= nb.post_upper.eval(x) + BOUND_TOL;
            ensure(ok, || {
                format!("neuron {l}_{i} at x = {x:?}: {z} outside its bounds")
            })?;
        }
    }
    for (k, &y) in out.iter().enumerate() {
        let ob = &bounds.outputs()[k];
        let ok = ob.interval.contains(y, BOUND_TOL)
            && ob.lower.eval(x) <= y + BOUND_TOL
            && y <= ob.upper.eval(x) + BOUND_TOL;
        ensure(ok, || {
            format!("output {k} at x = {x:?}: {y} outside its bounds")
        })?;
    }
    Ok(())
}

fn bound_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut samples, mut phased) = (0, 0);
    while samples < BOUND_SAMPLES {
        let n_in = rng.gen_range(1..=4);
        let hidden: Vec<usize> = (0..rng.gen_range(1..=3))
            .map(|_| rng.gen_range(1..=8))
            .collect();
        let n_out = rng.gen_range(1..=3);
        let net = Arc::new(random_network(&mut rng, n_in, &hidden, n_out));
        let center: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let radius: Vec<f64> = (0..n_in).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b = InputBox::new(
            center.iter().zip(&radius).map(|(c, r)| c - r).collect(),
            center.iter().zip(&radius).map(|(c, r)| c + r).collect(),
        )
        .map_err(|e| e.to_string())?;
        let root = propagate_bounds(&net, &b, &PhaseMap::unknown(&net))
            .bounds()
            .ok_or("root bounds infeasible")?;
        for _ in 0..SAMPLES_PER_SETUP {
            let x: Vec<f64> = (0..n_in)
                .map(|i| rng.gen_range(b.lower()[i]..=b.upper()[i]))
                .collect();
            bounds_contain(&root, &net, &x)?;
            samples += 1;
            // Phases agreeing with x keep x feasible under fixed-phase bounds.
            if rng.gen_bool(0.1) {
                let (pres, _) = trace(&net, &x);
                let mut phases = PhaseMap::unknown(&net);
                for id in net.hidden_neurons().collect::<Vec<_>>() {
                    if rng.gen_bool(0.5) {
                        let z = pres[id.layer][id.index];
                        phases.set(
                            id,
                            if z > 0.0 {
                                Phase::Active
                            } else {
                                Phase::Inactive
                            },
                        );
                    }
                }
                for outcome in [
                    propagate_bounds(&net, &b, &phases),
                    propagate_bounds_refined(&net, &b, &phases, &root),
                ] {
                    let BoundsOutcome::Bounds(fixed) = outcome else {
                        return Err(format!("phases of x = {x:?} reported infeasible"));
                    };
                    bounds_contain(&fixed, &net, &x)?;
                }
                phased += 1;
            }
        }
    }
    Ok(format!(
        "{samples} samples plus {phased} fixed-phase samples, 0 violations"
    ))
}

fn dimacs(d: i32) -> Literal {
    let i = (d.unsigned_abs() - 1) as usize;
    if d > 0 {
        Literal::active(0, i)
    } else {
        Literal::inactive(0, i)
    }
}

fn propagation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut conflicts = 0;
    for case in 0..PROPAGATION_SETS {
        let n = rng.gen_range(1..=12usize);
        let clauses: Vec<Vec<i32>> = (0..rng.gen_range(0..=30))
            .map(|_| {
                let mut vars: Vec<i32> = (1..=n as i32).collect();
                vars.shuffle(&mut rng);
                vars.truncate(rng.gen_range(1..=n.min(4)));
                vars.into_iter()
                    .map(|v| if rng.gen_bool(0.5) { v } else { -v })
                    .collect()
            })
            .collect();
        let mut order: Vec<i32> = (1..=n as i32)
            .map(|v| if rng.gen_bool(0.5) { v } else { -v })
            .collect();
        order.shuffle(&mut rng);
        order.truncate(rng.gen_range(0..=n));
        let space = VarSpace::new(&[n], 0);
        let (mut trail, mut db) = (Trail::new(space.clone()), ClauseDb::new(space));
        for c in &clauses {
            let clause = Clause::new(
                c.iter().map(|&d| dimacs(d)).collect(),
                ClauseOrigin::PathNegation,
            )
            .map_err(|e| e.to_string())?;
            db.add(clause, &trail).map_err(|e| e.to_string())?;
        }
        for &d in &order {
            trail.decide(dimacs(d)).map_err(|e| e.to_string())?;
        }
        let got = unit_propagate(&mut db, &mut trail);
        let expected = closure(n, &clauses, &order);
        let conflict = matches!(got, Propagation::Conflict(_));
        ensure(conflict == expected.conflict, || {
            format!(
                "case {case}: conflict {conflict}, oracle {}",
                expected.conflict
            )
        })?;
        if conflict {
            conflicts += 1;
        } else {
            let assignment: Vec<Option<bool>> =
                (0..n).map(|i| trail.value(Literal::active(0, i))).collect();
            ensure(assignment == expected.assignment, || {
                format!("case {case}: fixpoint differs")
            })?;
        }
    }
    Ok(format!(
        "{PROPAGATION_SETS} clause sets, {conflicts} conflicts"
    ))
}

fn dense_lp(rng: &mut ChaCha8Rng) -> LpProblem {
    let mut lp = LpProblem::new();
    let n = rng.gen_range(1..=30);
    for j in 0..n {
        let lo = quarter(rng) - 1.0;
        let hi = if rng.gen_bool(0.1) {
            f64::INFINITY
        } else {
            lo + rng.gen_range(1..=12) as f64 / 4.0
        };
        lp.add_var(format!("x{j}"), lo, hi);
    }
    for i in 0..rng.gen_range(1..=n.min(20)) {
        let kind = match rng.gen_range(0..6) {
            0 => RowKind::Eq,
            1 | 2 => RowKind::Ge,
            _ => RowKind::Le,
        };
        let coeffs = (0..n).map(|j| (j, quarter(rng))).collect();
        lp.add_row(LpRow::new(
            format!("r{i}"),
            coeffs,
            kind,
            quarter(rng) * n as f64 / 4.0,
        ));
    }
    if rng.gen_bool(0.8) {
        lp.set_objective((0..n).map(|j| (j, quarter(rng))).collect());
    }
    lp
}

fn one_var_lp(rows: &[(RowKind, f64)]) -> (LpProblem, usize) {
    let mut lp = LpProblem::new();
    let x = lp.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
    for (i, &(kind, rhs)) in rows.iter().enumerate() {
        lp.add_row(LpRow::new(format!("r{i}"), vec![(x, 1.0)], kind, rhs));
    }
    (lp, x)
}

fn lp_engine() -> Outcome {
    let (lp, _) = one_var_lp(&[(RowKind::Ge, 1.0), (RowKind::Le, 0.0)]);
    ensure(solve(&lp) == Ok(LpResult::Infeasible), || {
        "{x >= 1, x <= 0} is not infeasible".into()
    })?;
    let (mut lp, x) = one_var_lp(&[(RowKind::Ge, 2.0), (RowKind::Le, 5.0)]);
    lp.set_objective(vec![(x, 1.0)]);
    ensure(
        solve(&lp)
            == Ok(LpResult::Optimal {
                value: 2.0,
                point: vec![2.0],
            }),
        || "min x on [2, 5] is not 2".into(),
    )?;
    let (base, _) = one_var_lp(&[(RowKind::Le, 0.0)]);
    let path = |rhs| {
        vec![PathConstraint {
            literal: Literal::active(0, 0),
            rows: vec![LpRow::new("a", vec![(0, 1.0)], RowKind::Ge, rhs)],
        }]
    };
    let core = elastic_filter(&base, &path(1.0)).map_err(|e| e.to_string())?;
    ensure(core.indices == [0], || {
        format!("single-constraint core {core:?}")
    })?;
    ensure(
        elastic_filter_binary(&base, &path(-1.0)) == Ok(BinaryOutcome::NotInfeasible),
        || "consistent path was not reported as not infeasible".into(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut mix = [0usize; 4];
    for case in 0..RANDOM_LPS {
        let lp = dense_lp(&mut rng);
        let expected = exact_lp::solve(&raw_lp(&lp, &[]));
        match (&expected, solve(&lp)) {
            (RefResult::Infeasible, Ok(LpResult::Infeasible)) => mix[0] += 1,
            (RefResult::Feasible, Ok(LpResult::FeasiblePoint(p))) => {
                ensure(lp.max_violation(&p) <= LP_POINT_TOL, || {
                    format!("case {case}: infeasible point")
                })?;
                mix[1] += 1;
            }
            (RefResult::Optimal(v), Ok(LpResult::Optimal { value, point })) => {
                ensure((v - value).abs() <= LP_VALUE_GAP, || {
                    format!("case {case}: optimum {value}, reference {v}")
                })?;
                ensure(lp.max_violation(&point) <= LP_POINT_TOL, || {
                    format!("case {case}: infeasible optimum")
                })?;
                mix[2] += 1;
            }
            (RefResult::Unbounded, Err(LpError::Unbounded)) => mix[3] += 1,
            (e, g) => return Err(format!("case {case}: reference {e:?}, simplex {g:?}")),
        }
    }
    Ok(format!(
        "trivial examples exact; {} infeasible, {} feasible, {} optimal, {} unbounded",
        mix[0], mix[1], mix[2], mix[3]
    ))
}

/// Learns `core` as a clause, backjumps and propagates. Returns whether the
/// clause was falsified at level 0.
fn learn(
    trail: &mut Trail,
    db: &mut ClauseDb,
    core: &[Literal],
    origin: ClauseOrigin,
) -> Result<bool, String> {
    let clause = learn_from_core(core, trail, origin).map_err(|e| e.to_string())?;
    match backjump_level(&clause, trail).map_err(|e| e.to_string())? {
        BackjumpTarget::Refuted => return Ok(true),
        BackjumpTarget::Level(k) => backtrack(trail, db, k).map_err(|e| e.to_string())?,
    }
    db.add(clause, trail).map_err(|e| e.to_string())?;
    match unit_propagate(db, trail) {
        Propagation::Conflict(_) => Err("unexpected conflict after backjump".into()),
        Propagation::Fixpoint => Ok(false),
    }
}

fn chain_replay() -> Outcome {
    let (a, b, c) = (
        Literal::active(0, 0),
        Literal::active(0, 1),
        Literal::active(0, 2),
    );
    let space = VarSpace::new(&[3], 0);
    let (mut trail, mut db) = (Trail::new(space.clone()), ClauseDb::new(space));
    let level0 = |trail: &Trail, l: Literal| {
        trail.value(l) == Some(true) && trail.level_of(l.var) == Some(0)
    };

    trail.decide(a).map_err(|e| e.to_string())?;
    ensure(
        !learn(&mut trail, &mut db, &[a], ClauseOrigin::ElasticCore)?,
        || "refuted too early".into(),
    )?;
    ensure(level0(&trail, a.negate()), || {
        "¬a does not hold at level 0".into()
    })?;

    trail.decide(b).map_err(|e| e.to_string())?;
    ensure(
        !learn(
            &mut trail,
            &mut db,
            &[a.negate(), b],
            ClauseOrigin::ElasticCore,
        )?,
        || "refuted too early".into(),
    )?;
    ensure(level0(&trail, b.negate()), || {
        "¬b was not deduced at level 0".into()
    })?;

    trail.decide(c.negate()).map_err(|e| e.to_string())?;
    ensure(
        !learn(
            &mut trail,
            &mut db,
            &[a.negate(), c.negate()],
            ClauseOrigin::ElasticCore,
        )?,
        || "refuted too early".into(),
    )?;
    ensure(level0(&trail, c), || "c was not deduced at level 0".into())?;
    ensure(trail.level() == 0 && trail.decisions().count() == 0, || {
        "decisions remain".into()
    })?;

    // The only remaining leaf ¬a ∧ ¬b ∧ c is refuted; its clause is falsified at level 0.
    let refuted = learn(
        &mut trail,
        &mut db,
        &[a.negate(), b.negate(), c],
        ClauseOrigin::PathNegation,
    )?;
    ensure(refuted, || "final clause did not refute at level 0".into())?;
    Ok("¬a, then ¬b, then c at level 0, then conflict".into())
}

fn pool_stress() -> Outcome {
    let per_producer = POOL_OPS / POOL_THREADS;
    let clause = |p: usize, k: usize| {
        Clause::new(vec![Literal::active(p, k)], ClauseOrigin::ElasticCore).expect("unit")
    };

    let pool = ClausePool::new();
    let done = AtomicUsize::new(0);
    let (logs, seen) = std::thread::scope(|s| {
        let producers: Vec<_> = (0..POOL_THREADS)
            .map(|p| {
                let (pool, done) = (&pool, &done);
                s.spawn(move || {
                    let log: Vec<(usize, Publish)> = (0..per_producer)
                        .map(|k| {
                            let key = if k % 10 == 9 { k / 2 } else { k };
                            (key, pool.publish(clause(p, key)))
                        })
                        .collect();
                    done.fetch_add(1, Ordering::SeqCst);
                    log
                })
            })
            .collect();
        let consumers: Vec<_> = (0..POOL_THREADS)
            .map(|_| {
                let (pool, done) = (&pool, &done);
                s.spawn(move || {
                    let mut seen: Vec<Clause> = Vec::new();
                    let mut ordered = true;
                    loop {
                        let finished = done.load(Ordering::SeqCst) == POOL_THREADS;
                        for c in pool.fetch_since(seen.len() as u64) {
                            ordered &= c.id == seen.len() as u64 + 1;
                            seen.push(c);
                        }
                        if finished && seen.len() == pool.len() {
                            return (seen, ordered);
                        }
                    }
                })
            })
            .collect();
        (
            producers
                .into_iter()
                .map(|h| h.join().expect("producer"))
                .collect::<Vec<_>>(),
            consumers
                .into_iter()
                .map(|h| h.join().expect("consumer"))
                .collect::<Vec<_>>(),
        )
    });
    let snapshot = pool.snapshot();
    let mut added = 0;
    for (p, log) in logs.iter().enumerate() {
        let mut last = 0;
        for &(key, outcome) in log {
            match outcome {
                Publish::Added(seq) => {
                    ensure(seq > last, || {
                        format!("producer {p}: sequence ids out of order")
                    })?;
                    last = seq;
                    added += 1;
                    ensure(
                        snapshot[seq as usize - 1].literals() == clause(p, key).literals(),
                        || format!("sequence id {seq} holds the wrong clause"),
                    )?;
                }
                Publish::Duplicate(seq) => ensure(
                    snapshot[seq as usize - 1].literals() == clause(p, key).literals(),
                    || format!("duplicate points at the wrong clause {seq}"),
                )?,
                Publish::Closed => return Err("pool closed during the run".into()),
            }
        }
    }
    ensure(added == snapshot.len(), || {
        format!("{added} additions but {} stored clauses", snapshot.len())
    })?;
    for (seen, ordered) in &seen {
        ensure(*ordered && *seen == snapshot, || {
            "a consumer saw a gap, duplicate or reorder".into()
        })?;
    }

    let paths = PathPool::new(POOL_OPS);
    let done = AtomicUsize::new(0);
    let (stamps, taken) = std::thread::scope(|s| {
        let producers: Vec<_> = (0..POOL_THREADS)
            .map(|p| {
                let (paths, done) = (&paths, &done);
                s.spawn(move || {
                    let v: Vec<(u64, usize, usize)> = (0..per_producer)
                        .map(|k| {
                            (
                                paths
                                    .submit(vec![Literal::active(p, k)], p as u32)
                                    .expect("open"),
                                p,
                                k,
                            )
                        })
                        .collect();
                    done.fetch_add(1, Ordering::SeqCst);
                    v
                })
            })
            .collect();
        let consumers: Vec<_> = (0..POOL_THREADS)
            .map(|_| {
                let (paths, done) = (&paths, &done);
                s.spawn(move || {
                    let mut got = Vec::new();
                    while done.load(Ordering::SeqCst) < POOL_THREADS {
                        got.extend(paths.wait_take(Duration::from_millis(1)));
                    }
                    got
                })
            })
            .collect();
        (
            producers
                .into_iter()
                .flat_map(|h| h.join().expect("producer"))
                .collect::<Vec<_>>(),
            consumers
                .into_iter()
                .flat_map(|h| h.join().expect("consumer"))
                .collect::<Vec<_>>(),
        )
    });
    let mut remaining = Vec::new();
    while let Some(p) = paths.take_latest() {
        remaining.push(p);
    }
    ensure(
        remaining
            .windows(2)
            .all(|w| w[0].timestamp > w[1].timestamp),
        || "drain is not newest first".into(),
    )?;
    let by_stamp: std::collections::HashMap<u64, (usize, usize)> =
        stamps.iter().map(|&(t, p, k)| (t, (p, k))).collect();
    ensure(by_stamp.len() == POOL_OPS, || {
        "timestamps are not unique".into()
    })?;
    let mut delivered = std::collections::HashSet::new();
    for path in taken.iter().chain(&remaining) {
        ensure(delivered.insert(path.timestamp), || {
            format!("path {} delivered twice", path.timestamp)
        })?;
        let &(p, k) = by_stamp.get(&path.timestamp).ok_or("unknown timestamp")?;
        ensure(
            path.literals == [Literal::active(p, k)] && path.region == p as u32,
            || "path contents changed".into(),
        )?;
    }
    ensure(delivered.len() == POOL_OPS, || {
        format!("{} of {POOL_OPS} paths delivered", delivered.len())
    })?;
    Ok(format!(
        "{} clause publishes and {POOL_OPS} path submissions",
        POOL_THREADS * per_producer
    ))
}

fn nncdcl(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_nncdcl"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn path_str(p: &Path) -> Result<&str, String> {
    p.to_str().ok_or_else(|| "non-UTF-8 path".to_string())
}

fn batch_determinism() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let root = dir.path();
    nncdcl(&[
        "gen-suite",
        "--out",
        path_str(root)?,
        "--seed",
        &SUITE_SEED.to_string(),
        "--count",
        &SUITE_SIZE.to_string(),
    ])?;
    let manifest = root.join("manifest.csv");
    let mut outputs = Vec::new();
    for name in ["first.csv", "second.csv"] {
        let results = root.join(name);
        nncdcl(&[
            "batch",
            "--manifest",
            path_str(&manifest)?,
            "--results",
            path_str(&results)?,
            "--deterministic",
        ])?;
        outputs.push(fs::read(&results).map_err(|e| e.to_string())?);
    }
    let rows = outputs[0].iter().filter(|&&b| b == b'\n').count();
    ensure(rows == SUITE_SIZE + 1, || format!("{rows} CSV lines"))?;
    ensure(outputs[0] == outputs[1], || {
        "results differ between runs".into()
    })?;
    Ok(format!(
        "{SUITE_SIZE} rows, {} identical bytes",
        outputs[0].len()
    ))
}

fn nnet_ingestion() -> Outcome {
    let (text, source) = match std::env::var("ACAS_NNET") {
        Ok(path) => (
            fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?,
            path,
        ),
        Err(_) => (
            write_nnet(&acas_like_network(0)),
            "ACAS-shaped fixture".to_string(),
        ),
    };
    let net = load_nnet(&text).map_err(|e| e.to_string())?;
    let report = describe(&net);
    ensure(net.hidden_widths() == [50; 6], || {
        format!("hidden widths {:?}", net.hidden_widths())
    })?;
    ensure((net.input_dim(), net.output_dim()) == (5, 5), || {
        "ACAS nets have 5 inputs and 5 outputs".into()
    })?;
    ensure(report.contains("shape: 6 layers with 50 neurons"), || {
        report.clone()
    })?;
    ensure(net.normalization().is_some(), || {
        "normalization block missing".into()
    })?;
    Ok(format!("{source}: 6 layers with 50 neurons"))
}

use nncdcl::fixtures::{depth_one_fixture, oracle_suite, pruning_family};
use nncdcl::solver::{verify, BranchHeuristic, SolverConfig, Verdict};
use nncdcl::{Relation, VerificationProblem};
use nncdcl_testkit::polygon::{enumerate, evaluate, PolyVerdict, RawConstraint, RawNet};

fn raw(problem: &VerificationProblem) -> (RawNet, Vec<RawConstraint>) {
    let layers = problem
        .network
        .layers()
        .iter()
        .map(|l| {
            let rows = (0..l.weights.rows())
                .map(|r| l.weights.row(r).to_vec())
                .collect();
            (rows, l.bias.clone())
        })
        .collect();
    let mut cons = Vec::new();
    for c in &problem.unsafe_region {
        let le = matches!(c.relation, Relation::Le);
        cons.push(RawConstraint {
            coeffs: c.coeffs.clone(),
            le,
            bound: c.bound,
        });
    }
    (RawNet { layers }, cons)
}

fn oracle(problem: &VerificationProblem) -> PolyVerdict {
    let (net, cons) = raw(problem);
    let b = &problem.input_box;
    enumerate(
        &net,
        [b.lower()[0], b.lower()[1]],
        [b.upper()[0], b.upper()[1]],
        &cons,
    )
    .verdict
}

#[test]
fn deterministic_verdicts_match_enumeration() {
    let config = SolverConfig::deterministic();
    for inst in (1..=3).flat_map(|s| oracle_suite(s, 40)) {
        let out = verify(&inst.problem, &config).unwrap();
        let truth = oracle(&inst.problem);
        match (&out.verdict, &truth) {
            (Verdict::Holds, PolyVerdict::Unsat) => {}
            (Verdict::Violated(cex), PolyVerdict::Sat(_)) => {
                let (net, _) = raw(&inst.problem);
                let y = evaluate(&net, &cex.x);
                assert!(inst.problem.input_box.contains(&cex.x));
                assert!(inst.problem.min_slack(&y) >= -1e-9, "{}", inst.name);
            }
            (v, t) => panic!("{}: verifier {v:?}, oracle {t:?}", inst.name),
        }
    }
}

#[test]
fn learning_never_explores_more_nodes() {
    for split_threshold in [0, 2] {
        let base = SolverConfig {
            branch: BranchHeuristic::Earliest,
            split_threshold,
            ..SolverConfig::deterministic()
        };
        let off = SolverConfig {
            learning: false,
            ..base.clone()
        };
        for inst in (1..=3)
            .flat_map(|s| oracle_suite(s, 40))
            .chain(pruning_family(11, 10))
        {
            let a = verify(&inst.problem, &base).unwrap();
            if !matches!(a.verdict, Verdict::Holds) {
                continue;
            }
            let b = verify(&inst.problem, &off).unwrap();
            eprintln!(
                "{} on={} off={}",
                inst.name, a.stats.states_explored, b.stats.states_explored
            );
            assert!(
                a.stats.states_explored <= b.stats.states_explored,
                "{}",
                inst.name
            );
        }
    }
}

#[test]
fn pruning_family_is_unsafe_only_under_relaxation() {
    for inst in pruning_family(11, 10) {
        assert_eq!(oracle(&inst.problem), PolyVerdict::Unsat, "{}", inst.name);
    }
}

#[test]
fn depth_one_fixture_explores_three_states() {
    let config = SolverConfig {
        split_threshold: 0,
        ..SolverConfig::deterministic()
    };
    let out = verify(&depth_one_fixture(), &config).unwrap();
    assert!(matches!(out.verdict, Verdict::Holds));
    assert_eq!(out.stats.states_explored, 3);
    assert_eq!(out.stats.unsat_paths, 2);
}

#[test]
fn stats_match_forest() {
    let config = SolverConfig::deterministic();
    for inst in oracle_suite(7, 10) {
        let out = verify(&inst.problem, &config).unwrap();
        let f = &out.forest;
        assert_eq!(out.stats.states_explored as usize, f.nodes.len());
        let unsat = f.count(nncdcl::solver::NodeStatus::UnsatBounds)
            + f.count(nncdcl::solver::NodeStatus::UnsatLp);
        assert_eq!(out.stats.unsat_paths as usize, unsat);
    }
}

#[test]
fn parallel_verdicts_match_enumeration() {
    let config = SolverConfig {
        deterministic: false,
        n_solvers: 4,
        m_analyzers: 2,
        ..SolverConfig::default()
    };
    for inst in oracle_suite(7, 40) {
        let out = verify(&inst.problem, &config).unwrap();
        match (&out.verdict, oracle(&inst.problem)) {
            (Verdict::Holds, PolyVerdict::Unsat) | (Verdict::Violated(_), PolyVerdict::Sat(_)) => {}
            (v, t) => panic!("{}: verifier {v:?}, oracle {t:?}", inst.name),
        }
    }
}

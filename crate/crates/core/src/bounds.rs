//! Sound per-neuron bounds under a partial phase assignment.
//!
//! Every neuron gets a linear lower and upper relaxation of its ReLU in terms
//! of its pre-activation. Concrete bounds come from back-substituting each
//! pre-activation through all earlier relaxations down to the input box,
//! keeping the tightest concretization seen at any intermediate layer.

use std::sync::Arc;

use crate::cdcl::{Clause, ClauseOrigin, Literal};
use crate::network::{Network, NeuronId, ReluPhase};
use crate::property::{InputBox, LinearConstraint, Relation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Active,
    Inactive,
    Unknown,
}

impl From<ReluPhase> for Phase {
    fn from(p: ReluPhase) -> Self {
        match p {
            ReluPhase::Active => Phase::Active,
            ReluPhase::Inactive => Phase::Inactive,
        }
    }
}

/// Phase of every hidden neuron; `Unknown` for unassigned ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseMap {
    phases: Vec<Vec<Phase>>,
}

impl PhaseMap {
    pub fn unknown(net: &Network) -> Self {
        Self {
            phases: net
                .hidden_widths()
                .iter()
                .map(|&w| vec![Phase::Unknown; w])
                .collect(),
        }
    }

    /// Phases fixed by the neuron literals in `lits`; other literals are ignored.
    pub fn from_literals<'a>(net: &Network, lits: impl IntoIterator<Item = &'a Literal>) -> Self {
        let mut map = Self::unknown(net);
        for l in lits {
            if let Some(id) = l.neuron_id() {
                map.set(id, l.phase().into());
            }
        }
        map
    }

    pub fn get(&self, id: NeuronId) -> Phase {
        self.phases[id.layer][id.index]
    }

    pub fn set(&mut self, id: NeuronId, phase: Phase) {
        self.phases[id.layer][id.index] = phase;
    }

    pub fn fixed_count(&self) -> usize {
        self.phases
            .iter()
            .flatten()
            .filter(|p| **p != Phase::Unknown)
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        self.lo - tol <= v && v <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Affine function of the network inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicBound {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl SymbolicBound {
    pub fn constant(n: usize, c: f64) -> Self {
        Self {
            coeffs: vec![0.0; n],
            constant: c,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(x)
            .fold(self.constant, |acc, (c, v)| acc + c * v)
    }

    pub fn max_over(&self, b: &InputBox) -> f64 {
        concretize(&self.coeffs, self.constant, b.lower(), b.upper(), true)
    }

    pub fn min_over(&self, b: &InputBox) -> f64 {
        concretize(&self.coeffs, self.constant, b.lower(), b.upper(), false)
    }

    fn scaled(&self, slope: f64, intercept: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * slope).collect(),
            constant: self.constant * slope + intercept,
        }
    }
}

/// `slope * pre + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

impl Line {
    const ZERO: Line = Line {
        slope: 0.0,
        intercept: 0.0,
    };
    const IDENTITY: Line = Line {
        slope: 1.0,
        intercept: 0.0,
    };

    pub fn at(&self, z: f64) -> f64 {
        self.slope * z + self.intercept
    }
}

/// How the bounds treat a neuron after propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Active,
    Inactive,
    Crossing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronBounds {
    pub pre: Interval,
    pub post: Interval,
    pub pre_lower: SymbolicBound,
    pub pre_upper: SymbolicBound,
    pub post_lower: SymbolicBound,
    pub post_upper: SymbolicBound,
    pub lower_line: Line,
    pub upper_line: Line,
    pub stability: Stability,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputBounds {
    pub interval: Interval,
    pub lower: SymbolicBound,
    pub upper: SymbolicBound,
}

#[derive(Clone, Debug)]
pub struct BoundsMap {
    network: Arc<Network>,
    input_box: InputBox,
    phases: PhaseMap,
    hidden: Vec<Vec<NeuronBounds>>,
    outputs: Vec<OutputBounds>,
}

#[derive(Clone, Debug)]
pub enum BoundsOutcome {
    Bounds(BoundsMap),
    /// A fixed phase contradicts the concrete bounds of this neuron.
    InfeasiblePhases(NeuronId),
}

impl BoundsOutcome {
    pub fn bounds(self) -> Option<BoundsMap> {
        match self {
            BoundsOutcome::Bounds(b) => Some(b),
            BoundsOutcome::InfeasiblePhases(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundCheck {
    /// The constraint at this index is unreachable.
    CannotReach(usize),
    Unknown,
}

fn concretize(coeffs: &[f64], constant: f64, lo: &[f64], hi: &[f64], upper: bool) -> f64 {
    let mut acc = constant;
    for ((c, l), h) in coeffs.iter().zip(lo).zip(hi) {
        acc += if (*c >= 0.0) == upper { c * h } else { c * l };
    }
    acc
}

fn tighter(best: f64, candidate: f64, upper: bool) -> f64 {
    if upper {
        best.min(candidate)
    } else {
        best.max(candidate)
    }
}

struct Propagator<'a> {
    net: &'a Network,
    input_box: &'a InputBox,
    hidden: Vec<Vec<NeuronBounds>>,
    // Cached interval endpoints of computed hidden layers.
    pre_lo: Vec<Vec<f64>>,
    pre_hi: Vec<Vec<f64>>,
    post_lo: Vec<Vec<f64>>,
    post_hi: Vec<Vec<f64>>,
}

impl<'a> Propagator<'a> {
    /// Bound of `coeffs · z + constant`, where `z` is the pre-activation
    /// vector of network layer `layer`. Returns the best concrete bound and
    /// the input-level symbolic bound.
    fn backsubstitute(
        &self,
        layer: usize,
        coeffs: &[f64],
        constant: f64,
        upper: bool,
    ) -> (f64, SymbolicBound) {
        let mut best = if upper {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        let mut coeffs = coeffs.to_vec();
        let mut constant = constant;
        let mut k = layer;
        loop {
            let l = &self.net.layers()[k];
            let w = &l.weights;
            let mut prev = vec![0.0; w.cols()];
            for (r, c) in coeffs.iter().enumerate() {
                if *c == 0.0 {
                    continue;
                }
                constant += c * l.bias[r];
                for (p, wv) in prev.iter_mut().zip(w.row(r)) {
                    *p += c * wv;
                }
            }
            if k == 0 {
                let b = self.input_box;
                best = tighter(
                    best,
                    concretize(&prev, constant, b.lower(), b.upper(), upper),
                    upper,
                );
                return (
                    best,
                    SymbolicBound {
                        coeffs: prev,
                        constant,
                    },
                );
            }
            let h = k - 1;
            best = tighter(
                best,
                concretize(&prev, constant, &self.post_lo[h], &self.post_hi[h], upper),
                upper,
            );
            for (j, c) in prev.iter_mut().enumerate() {
                let nb = &self.hidden[h][j];
                let line = if (*c >= 0.0) == upper {
                    nb.upper_line
                } else {
                    nb.lower_line
                };
                constant += *c * line.intercept;
                *c *= line.slope;
            }
            best = tighter(
                best,
                concretize(&prev, constant, &self.pre_lo[h], &self.pre_hi[h], upper),
                upper,
            );
            coeffs = prev;
            k = h;
        }
    }

    fn bound_unit(&self, layer: usize, i: usize) -> (Interval, SymbolicBound, SymbolicBound) {
        let width = self.net.layers()[layer].width();
        let mut e = vec![0.0; width];
        e[i] = 1.0;
        let (lo, sym_lo) = self.backsubstitute(layer, &e, 0.0, false);
        let (hi, sym_hi) = self.backsubstitute(layer, &e, 0.0, true);
        (Interval::new(lo, hi), sym_lo, sym_hi)
    }
}

/// Area-minimizing slope of the triangle's lower line.
/// Slack on emptiness and phase checks, scaled by `max(1, |bound|)`, so
/// that rounding in two sound bounds of the same value never reports a
/// contradiction.
pub const BOUND_TOL: f64 = 1e-9;

fn slack(v: f64) -> f64 {
    BOUND_TOL * v.abs().max(1.0)
}

fn lower_slope(lo: f64, hi: f64) -> f64 {
    if hi >= -lo {
        1.0
    } else {
        0.0
    }
}

pub fn propagate_bounds(
    net: &Arc<Network>,
    input_box: &InputBox,
    phases: &PhaseMap,
) -> BoundsOutcome {
    propagate(net, input_box, phases, None)
}

/// As [`propagate_bounds`], additionally intersecting every interval with
/// `prior`, which must hold for the same box under a subset of `phases`.
/// Refining this way never widens a concrete bound.
pub fn propagate_bounds_refined(
    net: &Arc<Network>,
    input_box: &InputBox,
    phases: &PhaseMap,
    prior: &BoundsMap,
) -> BoundsOutcome {
    propagate(net, input_box, phases, Some(prior))
}

fn propagate(
    net: &Arc<Network>,
    input_box: &InputBox,
    phases: &PhaseMap,
    prior: Option<&BoundsMap>,
) -> BoundsOutcome {
    let n_in = net.input_dim();
    let mut p = Propagator {
        net,
        input_box,
        hidden: Vec::new(),
        pre_lo: Vec::new(),
        pre_hi: Vec::new(),
        post_lo: Vec::new(),
        post_hi: Vec::new(),
    };
    for layer in 0..net.num_hidden_layers() {
        let width = net.layers()[layer].width();
        let mut out = Vec::with_capacity(width);
        for i in 0..width {
            let id = NeuronId::new(layer, i);
            let (mut pre, pre_lower, pre_upper) = p.bound_unit(layer, i);
            if let Some(prior) = prior {
                let pi = prior.neuron(id).pre;
                pre = Interval::new(pre.lo.max(pi.lo), pre.hi.min(pi.hi));
            }
            if pre.lo > pre.hi {
                if pre.lo - pre.hi > slack(pre.lo) {
                    return BoundsOutcome::InfeasiblePhases(id);
                }
                pre = Interval::new(pre.hi, pre.lo);
            }
            let (lower_line, upper_line, stability, pre_clipped) = match phases.get(id) {
                Phase::Active => {
                    if pre.hi < -slack(pre.hi) {
                        return BoundsOutcome::InfeasiblePhases(id);
                    }
                    pre.hi = pre.hi.max(0.0);
                    let lower = Line {
                        slope: lower_slope(pre.lo, pre.hi),
                        intercept: 0.0,
                    };
                    (
                        lower,
                        Line::IDENTITY,
                        Stability::Active,
                        Interval::new(pre.lo.max(0.0), pre.hi),
                    )
                }
                Phase::Inactive => {
                    if pre.lo > slack(pre.lo) {
                        return BoundsOutcome::InfeasiblePhases(id);
                    }
                    pre.lo = pre.lo.min(0.0);
                    (
                        Line::ZERO,
                        Line::ZERO,
                        Stability::Inactive,
                        Interval::new(pre.lo, pre.hi.min(0.0)),
                    )
                }
                Phase::Unknown if pre.hi <= 0.0 => {
                    (Line::ZERO, Line::ZERO, Stability::Inactive, pre)
                }
                Phase::Unknown if pre.lo >= 0.0 => {
                    (Line::IDENTITY, Line::IDENTITY, Stability::Active, pre)
                }
                Phase::Unknown => {
                    let slope = pre.hi / (pre.hi - pre.lo);
                    let upper = Line {
                        slope,
                        intercept: -slope * pre.lo,
                    };
                    let lower = Line {
                        slope: lower_slope(pre.lo, pre.hi),
                        intercept: 0.0,
                    };
                    (lower, upper, Stability::Crossing, pre)
                }
            };
            let post = match stability {
                Stability::Inactive => Interval::new(0.0, 0.0),
                Stability::Active => pre_clipped,
                Stability::Crossing => Interval::new(0.0, pre.hi),
            };
            let post_lower = if lower_line == Line::ZERO {
                SymbolicBound::constant(n_in, 0.0)
            } else {
                pre_lower.scaled(lower_line.slope, lower_line.intercept)
            };
            let post_upper = if upper_line == Line::ZERO {
                SymbolicBound::constant(n_in, 0.0)
            } else {
                pre_upper.scaled(upper_line.slope, upper_line.intercept)
            };
            out.push(NeuronBounds {
                pre: pre_clipped,
                post,
                pre_lower,
                pre_upper,
                post_lower,
                post_upper,
                lower_line,
                upper_line,
                stability,
            });
        }
        p.pre_lo.push(out.iter().map(|b| b.pre.lo).collect());
        p.pre_hi.push(out.iter().map(|b| b.pre.hi).collect());
        p.post_lo.push(out.iter().map(|b| b.post.lo).collect());
        p.post_hi.push(out.iter().map(|b| b.post.hi).collect());
        p.hidden.push(out);
    }

    let last = net.layers().len() - 1;
    let mut outputs = Vec::with_capacity(net.output_dim());
    for i in 0..net.output_dim() {
        let (mut interval, lower, upper) = p.bound_unit(last, i);
        if let Some(prior) = prior {
            let pi = prior.outputs[i].interval;
            interval = Interval::new(interval.lo.max(pi.lo), interval.hi.min(pi.hi));
        }
        outputs.push(OutputBounds {
            interval,
            lower,
            upper,
        });
    }
    let hidden = p.hidden;
    BoundsOutcome::Bounds(BoundsMap {
        network: net.clone(),
        input_box: input_box.clone(),
        phases: phases.clone(),
        hidden,
        outputs,
    })
}

impl BoundsMap {
    pub fn neuron(&self, id: NeuronId) -> &NeuronBounds {
        &self.hidden[id.layer][id.index]
    }

    pub fn layer(&self, layer: usize) -> &[NeuronBounds] {
        &self.hidden[layer]
    }

    pub fn outputs(&self) -> &[OutputBounds] {
        &self.outputs
    }

    pub fn phases(&self) -> &PhaseMap {
        &self.phases
    }

    pub fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    pub fn network(&self) -> &Arc<Network> {
        &self.network
    }

    /// Hidden neurons whose phase is neither fixed nor implied by the bounds.
    pub fn crossing(&self) -> impl Iterator<Item = (NeuronId, &NeuronBounds)> + '_ {
        self.hidden.iter().enumerate().flat_map(|(l, layer)| {
            layer
                .iter()
                .enumerate()
                .filter(|(_, b)| b.stability == Stability::Crossing)
                .map(move |(i, b)| (NeuronId::new(l, i), b))
        })
    }

    /// Lower (or upper) bound of `coeffs · y` over the outputs: the better of
    /// back-substitution and interval arithmetic.
    pub fn output_functional_bound(&self, coeffs: &[f64], upper: bool) -> f64 {
        let p = Propagator {
            net: &self.network,
            input_box: &self.input_box,
            hidden: self.hidden.clone(),
            pre_lo: self
                .hidden
                .iter()
                .map(|l| l.iter().map(|b| b.pre.lo).collect())
                .collect(),
            pre_hi: self
                .hidden
                .iter()
                .map(|l| l.iter().map(|b| b.pre.hi).collect())
                .collect(),
            post_lo: self
                .hidden
                .iter()
                .map(|l| l.iter().map(|b| b.post.lo).collect())
                .collect(),
            post_hi: self
                .hidden
                .iter()
                .map(|l| l.iter().map(|b| b.post.hi).collect())
                .collect(),
        };
        let last = self.network.layers().len() - 1;
        let (sym, _) = p.backsubstitute(last, coeffs, 0.0, upper);
        let lo: Vec<f64> = self.outputs.iter().map(|o| o.interval.lo).collect();
        let hi: Vec<f64> = self.outputs.iter().map(|o| o.interval.hi).collect();
        tighter(sym, concretize(coeffs, 0.0, &lo, &hi, upper), upper)
    }
}

/// `CannotReach` when some unsafe constraint is violated by every point the
/// bounds admit.
pub fn check_unsafe_by_bounds(
    bounds: &BoundsMap,
    unsafe_region: &[LinearConstraint],
) -> BoundCheck {
    for (i, c) in unsafe_region.iter().enumerate() {
        let unreachable = match c.relation {
            Relation::Le => bounds.output_functional_bound(&c.coeffs, false) > c.bound,
            Relation::Ge => bounds.output_functional_bound(&c.coeffs, true) < c.bound,
        };
        if unreachable {
            return BoundCheck::CannotReach(i);
        }
    }
    BoundCheck::Unknown
}

/// Clauses `¬path ∨ (v, phase)` for every unfixed neuron whose phase the
/// bounds decide strictly (`lo > 0` or `hi ≤ 0`).
pub fn derive_phase_clauses(bounds: &BoundsMap, path: &[Literal]) -> Vec<Clause> {
    let negated: Vec<Literal> = path.iter().map(|l| l.negate()).collect();
    let mut out = Vec::new();
    for (l, layer) in bounds.hidden.iter().enumerate() {
        for (i, b) in layer.iter().enumerate() {
            let id = NeuronId::new(l, i);
            if bounds.phases.get(id) != Phase::Unknown {
                continue;
            }
            let phase = if b.pre.lo > 0.0 {
                ReluPhase::Active
            } else if b.pre.hi <= 0.0 {
                ReluPhase::Inactive
            } else {
                continue;
            };
            let mut lits = negated.clone();
            lits.push(Literal::neuron(id, phase));
            if let Ok(c) = Clause::new(lits, ClauseOrigin::BoundImplied) {
                out.push(c);
            }
        }
    }
    out
}

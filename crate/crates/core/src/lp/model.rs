//! Encoding a verification problem under a phase assignment as an LP.
//!
//! Variable order: inputs, then pre- and post-activation of each hidden
//! layer, then outputs.

use crate::bounds::{BoundsMap, Phase, PhaseMap, Stability};
use crate::cdcl::Literal;
use crate::network::{NeuronId, ReluPhase};
use crate::property::{Relation, VerificationProblem};

use super::elastic::PathConstraint;
use super::{LpProblem, LpRow, RowKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LpLayout {
    pub input: Vec<usize>,
    pub pre: Vec<Vec<usize>>,
    pub post: Vec<Vec<usize>>,
    pub output: Vec<usize>,
}

impl LpLayout {
    pub fn pre_of(&self, id: NeuronId) -> usize {
        self.pre[id.layer][id.index]
    }

    pub fn post_of(&self, id: NeuronId) -> usize {
        self.post[id.layer][id.index]
    }

    pub fn inputs_of(&self, point: &[f64]) -> Vec<f64> {
        self.input.iter().map(|&j| point[j]).collect()
    }

    pub fn outputs_of(&self, point: &[f64]) -> Vec<f64> {
        self.output.iter().map(|&j| point[j]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpModel {
    pub lp: LpProblem,
    pub layout: LpLayout,
}

/// Which ReLU constraints the elastic base program keeps for neurons outside
/// the path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ElasticBase {
    /// Interval bounds and triangle relaxation from the region's root bounds.
    #[default]
    Relaxed,
    /// Only the box, the affine maps, `post ≥ max(0, pre)` and the unsafe region.
    BoxOnly,
}

struct Builder<'a> {
    problem: &'a VerificationProblem,
    lp: LpProblem,
    layout: LpLayout,
}

impl<'a> Builder<'a> {
    /// Variables and affine equalities; `interval` supplies hidden and output
    /// variable bounds.
    fn skeleton(
        problem: &'a VerificationProblem,
        interval: impl Fn(Option<NeuronId>, usize, bool) -> (f64, f64),
    ) -> Self {
        let net = &problem.network;
        let b = &problem.input_box;
        let mut lp = LpProblem::new();
        let input: Vec<usize> = (0..net.input_dim())
            .map(|i| lp.add_var(format!("x{i}"), b.lower()[i], b.upper()[i]))
            .collect();
        let mut pre = Vec::new();
        let mut post = Vec::new();
        let mut prev = input.clone();
        for (l, layer) in net
            .layers()
            .iter()
            .enumerate()
            .take(net.num_hidden_layers())
        {
            let mut pl = Vec::new();
            let mut ql = Vec::new();
            for i in 0..layer.width() {
                let id = NeuronId::new(l, i);
                let (lo, hi) = interval(Some(id), i, true);
                pl.push(lp.add_var(format!("{id}_pre"), lo, hi));
                let (lo, hi) = interval(Some(id), i, false);
                ql.push(lp.add_var(format!("{id}_post"), lo, hi));
            }
            for (i, &z) in pl.iter().enumerate() {
                let mut coeffs = vec![(z, 1.0)];
                coeffs.extend(
                    prev.iter()
                        .zip(layer.weights.row(i))
                        .filter(|(_, w)| **w != 0.0)
                        .map(|(&j, &w)| (j, -w)),
                );
                lp.add_row(LpRow::new(
                    format!("L{l}_{i}_affine"),
                    coeffs,
                    RowKind::Eq,
                    layer.bias[i],
                ));
            }
            prev = ql.clone();
            pre.push(pl);
            post.push(ql);
        }
        let last = &net.layers()[net.layers().len() - 1];
        let output: Vec<usize> = (0..last.width())
            .map(|i| {
                let (lo, hi) = interval(None, i, false);
                lp.add_var(format!("y{i}"), lo, hi)
            })
            .collect();
        for (i, &y) in output.iter().enumerate() {
            let mut coeffs = vec![(y, 1.0)];
            coeffs.extend(
                prev.iter()
                    .zip(last.weights.row(i))
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(&j, &w)| (j, -w)),
            );
            lp.add_row(LpRow::new(
                format!("y{i}_affine"),
                coeffs,
                RowKind::Eq,
                last.bias[i],
            ));
        }
        Self {
            problem,
            lp,
            layout: LpLayout {
                input,
                pre,
                post,
                output,
            },
        }
    }

    fn unsafe_rows(&mut self) {
        for (k, c) in self.problem.unsafe_region.iter().enumerate() {
            let coeffs = self
                .layout
                .output
                .iter()
                .zip(&c.coeffs)
                .filter(|(_, a)| **a != 0.0)
                .map(|(&j, &a)| (j, a))
                .collect();
            let kind = match c.relation {
                Relation::Le => RowKind::Le,
                Relation::Ge => RowKind::Ge,
            };
            self.lp
                .add_row(LpRow::new(format!("unsafe{k}"), coeffs, kind, c.bound));
        }
    }

    fn phase_rows(&mut self, id: NeuronId, phase: ReluPhase) {
        for row in phase_constraint_rows(&self.layout, id, phase) {
            self.lp.add_row(row);
        }
    }

    fn finish(mut self) -> LpModel {
        self.unsafe_rows();
        LpModel {
            lp: self.lp,
            layout: self.layout,
        }
    }
}

fn phase_constraint_rows(layout: &LpLayout, id: NeuronId, phase: ReluPhase) -> Vec<LpRow> {
    let (pre, post) = (layout.pre_of(id), layout.post_of(id));
    match phase {
        ReluPhase::Active => vec![
            LpRow::new(
                format!("{id}_act_eq"),
                vec![(post, 1.0), (pre, -1.0)],
                RowKind::Eq,
                0.0,
            ),
            LpRow::new(format!("{id}_act_sign"), vec![(pre, 1.0)], RowKind::Ge, 0.0),
        ],
        ReluPhase::Inactive => vec![
            LpRow::new(
                format!("{id}_inact_zero"),
                vec![(post, 1.0)],
                RowKind::Le,
                0.0,
            ),
            LpRow::new(
                format!("{id}_inact_sign"),
                vec![(pre, 1.0)],
                RowKind::Le,
                0.0,
            ),
        ],
    }
}

/// LP for `problem` under `phases`. Neurons that `phases` leaves unfixed are
/// encoded exactly when the bounds decide them and by the triangle otherwise.
/// `phases` may fix more neurons than `bounds` was computed under.
pub fn build_lp(problem: &VerificationProblem, phases: &PhaseMap, bounds: &BoundsMap) -> LpModel {
    let mut b = Builder::skeleton(problem, |id, i, pre| match id {
        Some(id) => {
            let nb = bounds.neuron(id);
            let iv = if pre { nb.pre } else { nb.post };
            (iv.lo, iv.hi)
        }
        None => {
            let iv = bounds.outputs()[i].interval;
            (iv.lo, iv.hi)
        }
    });
    for id in problem.network.hidden_neurons().collect::<Vec<_>>() {
        let nb = bounds.neuron(id);
        match (phases.get(id), nb.stability) {
            (Phase::Active, _) | (Phase::Unknown, Stability::Active) => {
                b.phase_rows(id, ReluPhase::Active)
            }
            (Phase::Inactive, _) | (Phase::Unknown, Stability::Inactive) => {
                b.phase_rows(id, ReluPhase::Inactive)
            }
            (Phase::Unknown, Stability::Crossing) => {
                let (pre, post) = (b.layout.pre_of(id), b.layout.post_of(id));
                let line = nb.upper_line;
                b.lp.add_row(LpRow::new(
                    format!("{id}_tri_zero"),
                    vec![(post, 1.0)],
                    RowKind::Ge,
                    0.0,
                ));
                b.lp.add_row(LpRow::new(
                    format!("{id}_tri_id"),
                    vec![(post, 1.0), (pre, -1.0)],
                    RowKind::Ge,
                    0.0,
                ));
                b.lp.add_row(LpRow::new(
                    format!("{id}_tri_upper"),
                    vec![(post, 1.0), (pre, -line.slope)],
                    RowKind::Le,
                    line.intercept,
                ));
            }
        }
    }
    b.finish()
}

/// Base program for elastic filtering from the bounds of a region root.
pub fn build_base_lp(
    problem: &VerificationProblem,
    root: &BoundsMap,
    base: ElasticBase,
) -> LpModel {
    match base {
        ElasticBase::Relaxed => build_lp(problem, &PhaseMap::unknown(&problem.network), root),
        ElasticBase::BoxOnly => {
            let inf = f64::INFINITY;
            let mut b = Builder::skeleton(problem, |id, _, pre| match (id, pre) {
                (Some(_), false) => (0.0, inf),
                _ => (-inf, inf),
            });
            for id in problem.network.hidden_neurons().collect::<Vec<_>>() {
                let (pre, post) = (b.layout.pre_of(id), b.layout.post_of(id));
                b.lp.add_row(LpRow::new(
                    format!("{id}_relu_id"),
                    vec![(post, 1.0), (pre, -1.0)],
                    RowKind::Ge,
                    0.0,
                ));
            }
            b.finish()
        }
    }
}

/// Rows asserting the phase of a neuron literal.
pub fn path_constraint(layout: &LpLayout, literal: Literal) -> Option<PathConstraint> {
    let id = literal.neuron_id()?;
    Some(PathConstraint {
        literal,
        rows: phase_constraint_rows(layout, id, literal.phase()),
    })
}

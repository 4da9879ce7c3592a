//! Seeded instance generators shared by tests, the CLI and benchmarks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{Layer, Matrix, Network, Normalization};
use crate::property::{InputBox, LinearConstraint, Relation, VerificationProblem};

/// Input normalization block of the ACAS Xu NNet files. The angle limits are
/// the published values, not rounded constants.
#[allow(clippy::approx_constant)]
pub const ACAS_MINS: [f64; 5] = [0.0, -3.141593, -3.141593, 100.0, 0.0];
#[allow(clippy::approx_constant)]
pub const ACAS_MAXES: [f64; 5] = [60760.0, 3.141593, 3.141593, 1200.0, 1200.0];
pub const ACAS_MEANS: [f64; 6] = [19791.091, 0.0, 0.0, 650.0, 600.0, 7.5188840201005975];
#[allow(clippy::approx_constant)]
pub const ACAS_RANGES: [f64; 6] = [
    60261.0,
    6.28318530718,
    6.28318530718,
    1100.0,
    1200.0,
    373.94992,
];

#[derive(Clone, Debug)]
pub struct Instance {
    pub name: String,
    pub problem: VerificationProblem,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// Dense ReLU network with weights in [-1, 1) and biases in [-0.5, 0.5).
pub fn random_network(
    rng: &mut ChaCha8Rng,
    input: usize,
    hidden: &[usize],
    output: usize,
) -> Network {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    let parts = sizes
        .windows(2)
        .map(|w| {
            let rows = (0..w[1])
                .map(|_| (0..w[0]).map(|_| uniform(rng, -1.0, 1.0)).collect())
                .collect();
            let bias = (0..w[1]).map(|_| uniform(rng, -0.5, 0.5)).collect();
            (rows, bias)
        })
        .collect();
    Network::from_parts(parts).expect("consistent shapes")
}

fn random_box(rng: &mut ChaCha8Rng, dim: usize) -> InputBox {
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for _ in 0..dim {
        let c = uniform(rng, -1.0, 1.0);
        let r = uniform(rng, 0.25, 1.0);
        lo.push(c - r);
        hi.push(c + r);
    }
    InputBox::new(lo, hi).expect("ordered bounds")
}

/// `coeffs · y ≥ bound` with the bound placed around the sampled maximum
/// so that roughly half of the instances are reachable.
fn random_unsafe(
    rng: &mut ChaCha8Rng,
    net: &Network,
    b: &InputBox,
    spread: (f64, f64),
) -> LinearConstraint {
    let coeffs: Vec<f64> = (0..net.output_dim())
        .map(|_| uniform(rng, -1.0, 1.0))
        .collect();
    let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..200 {
        let x: Vec<f64> = (0..b.dim())
            .map(|i| uniform(rng, b.lower()[i], b.upper()[i]))
            .collect();
        let y = net.evaluate(&x).expect("dimension");
        let s: f64 = coeffs.iter().zip(&y).map(|(c, v)| c * v).sum();
        smin = smin.min(s);
        smax = smax.max(s);
    }
    let u = uniform(rng, spread.0, spread.1);
    let bound = smin + (smax - smin).max(1e-3) * u;
    LinearConstraint::new(coeffs, Relation::Ge, bound).expect("finite")
}

/// Random 2-{8,8}-2 instances: random box, one or two unsafe constraints.
pub fn oracle_suite(seed: u64, count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let net = random_network(&mut rng, 2, &[8, 8], 2);
            let b = random_box(&mut rng, 2);
            let mut unsafe_region = vec![random_unsafe(&mut rng, &net, &b, (0.7, 1.3))];
            if rng.gen_bool(0.25) {
                unsafe_region.push(random_unsafe(&mut rng, &net, &b, (-0.5, 0.5)));
            }
            let problem =
                VerificationProblem::new(Arc::new(net), b, unsafe_region).expect("valid instance");
            Instance {
                name: format!("oracle_{k:02}"),
                problem,
            }
        })
        .collect()
}

/// Unsafe-by-relaxation instances whose refutation repeats under every
/// assignment of `k` irrelevant neurons.
///
/// Layer 0 holds the irrelevant neurons (zero outgoing weight, crossing
/// zero on the box), then `a = relu(x0)`, `b = relu(-x0)` and the stable
/// pass-through `p = relu(x0 + 1)`. Outputs are `y0 = a + b = |x0|` and
/// `y1 = a - b = x0`. The unsafe region `y0 ≥ t, |y1| ≤ w` with
/// `(1 + w) / 2 < t ≤ 1` is empty, yet the triangle relaxation reaches it,
/// and either phase of `a` is refutable by LP alone.
pub fn pruning_family(seed: u64, count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|n| {
            let k = rng.gen_range(3..=6);
            let mut rows: Vec<Vec<f64>> = Vec::new();
            let mut bias = Vec::new();
            for _ in 0..k {
                rows.push(vec![
                    uniform(&mut rng, -0.3, 0.3),
                    uniform(&mut rng, 0.5, 1.0),
                ]);
                bias.push(uniform(&mut rng, -0.2, 0.2));
            }
            rows.extend([vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0]]);
            bias.extend([0.0, 0.0, 1.0]);
            let width = k + 3;
            let mut out = vec![vec![0.0; width]; 2];
            out[0][k] = 1.0;
            out[0][k + 1] = 1.0;
            out[1][k] = 1.0;
            out[1][k + 1] = -1.0;
            let net =
                Network::from_parts(vec![(rows, bias), (out, vec![0.0, 0.0])]).expect("shapes");
            let w = uniform(&mut rng, 0.3, 0.5);
            let t = uniform(&mut rng, (1.0 + w) / 2.0 + 0.05, 0.98);
            let unsafe_region = vec![
                LinearConstraint::new(vec![1.0, 0.0], Relation::Ge, t).expect("finite"),
                LinearConstraint::new(vec![0.0, 1.0], Relation::Le, w).expect("finite"),
                LinearConstraint::new(vec![0.0, 1.0], Relation::Ge, -w).expect("finite"),
            ];
            let b = InputBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).expect("box");
            let problem = VerificationProblem::new(Arc::new(net), b, unsafe_region).expect("valid");
            Instance {
                name: format!("pruning_{n:02}_k{k}"),
                problem,
            }
        })
        .collect()
}

/// One crossing neuron `v = relu(x)` on [-1, 1] and a stable pass-through
/// `p = relu(x + 1)`. Outputs `y0 = v`, `y1 = v - p + 1 = v - x`; unsafe
/// `y0 ≥ 0.4, y1 ≥ 0.4`. The root relaxation reaches the unsafe region but
/// bounds refute either phase of `v`.
pub fn depth_one_fixture() -> VerificationProblem {
    let net = Network::from_parts(vec![
        (vec![vec![1.0], vec![1.0]], vec![0.0, 1.0]),
        (vec![vec![1.0, 0.0], vec![1.0, -1.0]], vec![0.0, 1.0]),
    ])
    .expect("shapes");
    VerificationProblem::new(
        Arc::new(net),
        InputBox::new(vec![-1.0], vec![1.0]).expect("box"),
        vec![
            LinearConstraint::new(vec![1.0, 0.0], Relation::Ge, 0.4).expect("finite"),
            LinearConstraint::new(vec![0.0, 1.0], Relation::Ge, 0.4).expect("finite"),
        ],
    )
    .expect("valid")
}

/// Network with the ACAS Xu shape (5 inputs, six hidden layers of 50, 5
/// outputs) and its normalization block, with seeded random weights.
pub fn acas_like_network(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![5];
    sizes.extend([50; 6]);
    sizes.push(5);
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let scale = (1.0 / w[0] as f64).sqrt();
            let mut m = Matrix::zeros(w[1], w[0]);
            for r in 0..w[1] {
                for c in 0..w[0] {
                    m.set(r, c, uniform(&mut rng, -scale, scale));
                }
            }
            let bias = (0..w[1]).map(|_| uniform(&mut rng, -0.1, 0.1)).collect();
            Layer {
                weights: m,
                bias,
                relu: k + 2 < sizes.len(),
            }
        })
        .collect();
    Network::new(layers)
        .expect("shapes")
        .with_normalization(Normalization {
            mins: ACAS_MINS.to_vec(),
            maxes: ACAS_MAXES.to_vec(),
            means: ACAS_MEANS.to_vec(),
            ranges: ACAS_RANGES.to_vec(),
        })
}

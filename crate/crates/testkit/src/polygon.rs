//! Exhaustive activation-pattern enumeration for networks with two inputs.
//!
//! Each pattern is a convex polygon of the input box, obtained by clipping
//! with the half-planes `pre ≥ 0` or `pre ≤ 0` of every neuron in turn. On a
//! polygon the network is affine, so the unsafe region is one more set of
//! half-planes.

/// Weight rows and biases per layer; ReLU after every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct RawNet {
    pub layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
}

/// `coeffs · y ≤ bound` when `le`, otherwise `≥`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawConstraint {
    pub coeffs: Vec<f64>,
    pub le: bool,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolyVerdict {
    /// Centroid of a positive-area polygon inside the unsafe region.
    Sat([f64; 2]),
    Unsat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Enumeration {
    pub verdict: PolyVerdict,
    /// Activation regions of positive area.
    pub regions: usize,
}

/// Polygons below this area are treated as empty.
pub const MIN_AREA: f64 = 1e-12;

/// `a·x + c` over the two inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Aff {
    a: [f64; 2],
    c: f64,
}

impl Aff {
    fn at(&self, p: [f64; 2]) -> f64 {
        self.a[0] * p[0] + self.a[1] * p[1] + self.c
    }

    fn scale(&self, s: f64) -> Aff {
        Aff {
            a: [self.a[0] * s, self.a[1] * s],
            c: self.c * s,
        }
    }
}

fn combine(w: &[f64], b: f64, xs: &[Aff]) -> Aff {
    let mut r = Aff {
        a: [0.0, 0.0],
        c: b,
    };
    for (wi, x) in w.iter().zip(xs) {
        r.a[0] += wi * x.a[0];
        r.a[1] += wi * x.a[1];
        r.c += wi * x.c;
    }
    r
}

/// Part of the convex polygon where `f ≥ 0`.
fn clip(poly: &[[f64; 2]], f: &Aff) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let p = poly[k];
        let q = poly[(k + 1) % poly.len()];
        let (fp, fq) = (f.at(p), f.at(q));
        if fp >= 0.0 {
            out.push(p);
        }
        if (fp >= 0.0) != (fq >= 0.0) {
            let t = fp / (fp - fq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

fn area(poly: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for k in 0..poly.len() {
        let p = poly[k];
        let q = poly[(k + 1) % poly.len()];
        s += p[0] * q[1] - q[0] * p[1];
    }
    s.abs() / 2.0
}

fn centroid(poly: &[[f64; 2]]) -> [f64; 2] {
    let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
    for k in 0..poly.len() {
        let p = poly[k];
        let q = poly[(k + 1) % poly.len()];
        let cross = p[0] * q[1] - q[0] * p[1];
        a2 += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    [cx / (3.0 * a2), cy / (3.0 * a2)]
}

struct Search<'a> {
    net: &'a RawNet,
    unsafe_region: &'a [RawConstraint],
    regions: usize,
    witness: Option<[f64; 2]>,
    /// Keep going after the first witness and record every unsafe pattern.
    exhaustive: bool,
    phases: Vec<Vec<bool>>,
    unsafe_patterns: Vec<Vec<Vec<bool>>>,
}

impl<'a> Search<'a> {
    fn new(net: &'a RawNet, unsafe_region: &'a [RawConstraint], exhaustive: bool) -> Self {
        Search {
            net,
            unsafe_region,
            regions: 0,
            witness: None,
            exhaustive,
            phases: Vec::new(),
            unsafe_patterns: Vec::new(),
        }
    }

    fn layer(&mut self, poly: Vec<[f64; 2]>, l: usize, acts: Vec<Aff>) {
        let (w, b) = &self.net.layers[l];
        let pre: Vec<Aff> = w
            .iter()
            .zip(b)
            .map(|(row, bi)| combine(row, *bi, &acts))
            .collect();
        if l + 1 == self.net.layers.len() {
            self.leaf(poly, &pre);
            return;
        }
        self.phases.push(Vec::with_capacity(pre.len()));
        self.neuron(poly, l, &pre, 0, Vec::with_capacity(pre.len()));
        self.phases.pop();
    }

    fn neuron(&mut self, poly: Vec<[f64; 2]>, l: usize, pre: &[Aff], i: usize, post: Vec<Aff>) {
        if self.witness.is_some() && !self.exhaustive {
            return;
        }
        if i == pre.len() {
            self.layer(poly, l + 1, post);
            return;
        }
        for active in [true, false] {
            let half = if active { pre[i] } else { pre[i].scale(-1.0) };
            let p = clip(&poly, &half);
            if p.len() < 3 || area(&p) <= MIN_AREA {
                continue;
            }
            let mut next = post.clone();
            next.push(if active {
                pre[i]
            } else {
                Aff {
                    a: [0.0, 0.0],
                    c: 0.0,
                }
            });
            self.phases.last_mut().expect("layer open").push(active);
            self.neuron(p, l, pre, i + 1, next);
            self.phases.last_mut().expect("layer open").pop();
        }
    }

    fn leaf(&mut self, mut poly: Vec<[f64; 2]>, outputs: &[Aff]) {
        self.regions += 1;
        for c in self.unsafe_region {
            let lhs = combine(&c.coeffs, 0.0, outputs);
            // Half-plane as `f ≥ 0`.
            let f = if c.le {
                Aff {
                    a: [-lhs.a[0], -lhs.a[1]],
                    c: c.bound - lhs.c,
                }
            } else {
                Aff {
                    a: lhs.a,
                    c: lhs.c - c.bound,
                }
            };
            poly = clip(&poly, &f);
            if poly.len() < 3 || area(&poly) <= MIN_AREA {
                return;
            }
        }
        self.witness.get_or_insert(centroid(&poly));
        if self.exhaustive {
            self.unsafe_patterns.push(self.phases.clone());
        }
    }
}

/// Stops at the first unsafe polygon; `regions` then counts regions seen so far.
pub fn enumerate(
    net: &RawNet,
    lo: [f64; 2],
    hi: [f64; 2],
    unsafe_region: &[RawConstraint],
) -> Enumeration {
    let (boxp, inputs) = (box_polygon(lo, hi), unit_inputs());
    let mut s = Search::new(net, unsafe_region, false);
    s.layer(boxp, 0, inputs);
    Enumeration {
        verdict: s.witness.map_or(PolyVerdict::Unsat, PolyVerdict::Sat),
        regions: s.regions,
    }
}

/// Activation pattern (`true` = active, per hidden layer) of every region
/// whose intersection with the unsafe set has positive area.
pub fn unsafe_patterns(
    net: &RawNet,
    lo: [f64; 2],
    hi: [f64; 2],
    unsafe_region: &[RawConstraint],
) -> Vec<Vec<Vec<bool>>> {
    let mut s = Search::new(net, unsafe_region, true);
    s.layer(box_polygon(lo, hi), 0, unit_inputs());
    s.unsafe_patterns
}

fn box_polygon(lo: [f64; 2], hi: [f64; 2]) -> Vec<[f64; 2]> {
    vec![
        [lo[0], lo[1]],
        [hi[0], lo[1]],
        [hi[0], hi[1]],
        [lo[0], hi[1]],
    ]
}

fn unit_inputs() -> Vec<Aff> {
    vec![
        Aff {
            a: [1.0, 0.0],
            c: 0.0,
        },
        Aff {
            a: [0.0, 1.0],
            c: 0.0,
        },
    ]
}

/// Forward pass on plain arrays.
pub fn evaluate(net: &RawNet, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    for (l, (w, b)) in net.layers.iter().enumerate() {
        v = w
            .iter()
            .zip(b)
            .map(|(row, bi)| row.iter().zip(&v).map(|(a, c)| a * c).sum::<f64>() + bi)
            .collect();
        if l + 1 < net.layers.len() {
            v.iter_mut().for_each(|z| *z = z.max(0.0));
        }
    }
    v
}

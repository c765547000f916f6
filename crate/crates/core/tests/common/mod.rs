//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeSet;

use hlgt::graph::{EdgeType, GraphEdge, GraphNode, HeteroGraph, LineEdge, NodeType};
use hlgt::numeric::{finite_difference_gradient, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// Inputs of one primitive case and the computation applied to them.
pub struct Case {
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "add_row",
    "mul_col",
    "affine",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "softplus",
    "softmax",
    "log_softmax",
    "group_softmax",
    "layer_norm",
    "gather_rows",
    "scatter_add_rows",
    "concat_cols",
    "concat_rows",
    "slice_cols",
    "sum",
    "row_sum",
    "pick",
    "gru_cell",
];

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
}

/// Like [`uniform`] but at least `gap` away from zero.
fn off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64) -> Tensor {
    uniform(rng, rows, cols).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

/// Rows with a spread of at least `min_std`, away from the region where
/// normalization is ill-conditioned.
fn spread_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, min_std: f64) -> Tensor {
    loop {
        let t = uniform(rng, rows, cols);
        let ok = (0..rows).all(|r| {
            let row = t.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            var.sqrt() >= min_std
        });
        if ok {
            return t;
        }
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..=4), rng.gen_range(1..=5))
}

pub fn make_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let (r, c) = dims(rng);
    let one = |rng: &mut ChaCha8Rng| vec![uniform(rng, r, c)];
    let two = |rng: &mut ChaCha8Rng| vec![uniform(rng, r, c), uniform(rng, r, c)];
    let (inputs, build): (Vec<Tensor>, Build) = match name {
        "matmul" => {
            let k = rng.gen_range(1..=4);
            (vec![uniform(rng, r, k), uniform(rng, k, c)], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()))
        }
        "transpose" => (one(rng), Box::new(|t, v| t.transpose(v[0]))),
        "add" => (two(rng), Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        "sub" => (two(rng), Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
        "mul" => (two(rng), Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
        "add_row" => (vec![uniform(rng, r, c), uniform(rng, 1, c)], Box::new(|t, v| t.add_row(v[0], v[1]).unwrap())),
        "mul_col" => (vec![uniform(rng, r, c), uniform(rng, r, 1)], Box::new(|t, v| t.mul_col(v[0], v[1]).unwrap())),
        "affine" => {
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            (one(rng), Box::new(move |t, v| t.affine(v[0], a, b)))
        }
        "sigmoid" => (one(rng), Box::new(|t, v| t.sigmoid(v[0]))),
        "tanh" => (one(rng), Box::new(|t, v| t.tanh(v[0]))),
        "leaky_relu" => (vec![off_kink(rng, r, c, 0.05)], Box::new(|t, v| t.leaky_relu(v[0]))),
        "softplus" => (one(rng), Box::new(|t, v| t.softplus(v[0]))),
        "softmax" => (one(rng), Box::new(|t, v| t.softmax(v[0]))),
        "log_softmax" => (one(rng), Box::new(|t, v| t.log_softmax(v[0]))),
        "group_softmax" => {
            let rows = rng.gen_range(1..=6);
            let groups: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..3)).collect();
            (
                vec![uniform(rng, rows, c)],
                Box::new(move |t, v| t.group_softmax(v[0], &groups).unwrap()),
            )
        }
        "layer_norm" => {
            let c = rng.gen_range(3..=6);
            (
                vec![spread_rows(rng, r, c, 0.3), uniform(rng, 1, c), uniform(rng, 1, c)],
                Box::new(|t, v| t.layer_norm(v[0], v[1], v[2]).unwrap()),
            )
        }
        "gather_rows" => {
            let idx: Vec<usize> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0..r)).collect();
            (one(rng), Box::new(move |t, v| t.gather_rows(v[0], &idx).unwrap()))
        }
        "scatter_add_rows" => {
            let out_rows = rng.gen_range(1..=4);
            let idx: Vec<usize> = (0..r).map(|_| rng.gen_range(0..out_rows)).collect();
            (one(rng), Box::new(move |t, v| t.scatter_add_rows(v[0], &idx, out_rows).unwrap()))
        }
        "concat_cols" => {
            let c2 = rng.gen_range(1..=3);
            (
                vec![uniform(rng, r, c), uniform(rng, r, c2)],
                Box::new(|t, v| t.concat_cols(&[v[0], v[1]]).unwrap()),
            )
        }
        "concat_rows" => {
            let r2 = rng.gen_range(1..=3);
            (
                vec![uniform(rng, r, c), uniform(rng, r2, c)],
                Box::new(|t, v| t.concat_rows(&[v[0], v[1]]).unwrap()),
            )
        }
        "slice_cols" => {
            let start = rng.gen_range(0..c);
            let end = rng.gen_range(start + 1..=c);
            (one(rng), Box::new(move |t, v| t.slice_cols(v[0], start, end).unwrap()))
        }
        "sum" => (one(rng), Box::new(|t, v| t.sum(v[0]))),
        "row_sum" => (one(rng), Box::new(|t, v| t.row_sum(v[0]))),
        "pick" => {
            let (i, j) = (rng.gen_range(0..r), rng.gen_range(0..c));
            (one(rng), Box::new(move |t, v| t.pick(v[0], i, j).unwrap()))
        }
        "gru_cell" => {
            let h = rng.gen_range(1..=4);
            (
                vec![uniform(rng, 1, 3 * h), uniform(rng, 1, h), uniform(rng, h, 3 * h), uniform(rng, 1, 3 * h)],
                Box::new(|t, v| t.gru_cell(v[0], v[1], v[2], v[3]).unwrap()),
            )
        }
        other => panic!("unknown primitive {other}"),
    };
    Case { inputs, build }
}

/// `sum(op(inputs) ⊙ weights)`, so every output element matters.
fn weighted_output(tape: &mut Tape, case: &Case, vars: &[Var], weights: &Tensor) -> Var {
    let out = (case.build)(tape, vars);
    let w = tape.constant(weights.clone()).unwrap();
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)` of two gradients.
pub fn tensor_rel_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |t: &Tensor| t.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst relative error between autodiff and central differences over one
/// case, across all of its inputs.
pub fn check_case(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|x| tape.input(x.clone()).unwrap()).collect();
    let probe = (case.build)(&mut tape, &vars);
    let (r, c) = tape.shape(probe);
    let weights = uniform(rng, r, c);
    let loss = weighted_output(&mut tape, case, &vars, &weights);
    let adj = tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, x) in case.inputs.iter().enumerate() {
        let analytic = adj.grad(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let numeric = finite_difference_gradient(
            |probe| {
                let mut t = Tape::inference();
                let vs: Vec<Var> = case
                    .inputs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| t.constant(if j == k { probe.clone() } else { v.clone() }).unwrap())
                    .collect();
                let l = weighted_output(&mut t, case, &vs, &weights);
                t.scalar(l)
            },
            x,
            1e-6,
        );
        worst = worst.max(tensor_rel_error(&analytic, &numeric));
    }
    worst
}

/// Worst error over `cases` random cases of one primitive.
pub fn check_primitive(name: &str, cases: usize, rng: &mut ChaCha8Rng) -> f64 {
    (0..cases).map(|_| check_case(&make_case(name, rng), rng)).fold(0.0, f64::max)
}

/// Random typed digraph without self-loops. With `symmetric`, every edge
/// comes with its reverse.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64, symmetric: bool) -> HeteroGraph {
    let nodes = (0..n)
        .map(|i| GraphNode {
            token_index: i,
            kind: *NodeType::ALL.choose(rng).unwrap(),
        })
        .collect();
    let mut edges = BTreeSet::new();
    for u in 0..n {
        for v in 0..n {
            if u == v || (symmetric && v < u) || !rng.gen_bool(density) {
                continue;
            }
            let kind = *EdgeType::ALL.choose(rng).unwrap();
            edges.insert(GraphEdge { src: u, dst: v, kind });
            if symmetric {
                edges.insert(GraphEdge { src: v, dst: u, kind });
            }
        }
    }
    HeteroGraph {
        nodes,
        edges: edges.into_iter().collect(),
    }
}

/// Line-graph edges read off the non-backtracking matrix entry by entry:
/// `B[(u→v), (x→y)] = 1` iff `v = x` and `u ≠ y`.
pub fn brute_force_line_edges(g: &HeteroGraph) -> BTreeSet<LineEdge> {
    let mut out = BTreeSet::new();
    for (a, e) in g.edges.iter().enumerate() {
        for (b, f) in g.edges.iter().enumerate() {
            if e.dst == f.src && e.src != f.dst {
                out.insert(LineEdge {
                    from: a,
                    to: b,
                    shared: e.dst,
                });
            }
        }
    }
    out
}

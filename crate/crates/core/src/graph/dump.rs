use std::fmt::Write;

use serde::Serialize;

use super::hetero::{graph_stats, GraphStats, HeteroGraph};
use super::line::LineGraph;
use crate::data::Problem;

#[derive(Debug, Serialize)]
struct NodeOut<'a> {
    id: usize,
    token_index: usize,
    token: &'a str,
    #[serde(rename = "type")]
    kind: &'static str,
}

#[derive(Debug, Serialize)]
struct EdgeOut {
    src: usize,
    dst: usize,
    #[serde(rename = "type")]
    kind: &'static str,
}

#[derive(Debug, Serialize)]
struct LineNodeOut {
    id: usize,
    src: usize,
    dst: usize,
    #[serde(rename = "type")]
    kind: &'static str,
}

#[derive(Debug, Serialize)]
struct LineOut<'a> {
    nodes: Vec<LineNodeOut>,
    edges: &'a [super::line::LineEdge],
}

#[derive(Debug, Serialize)]
struct GraphOut<'a> {
    id: &'a str,
    nodes: Vec<NodeOut<'a>>,
    edges: Vec<EdgeOut>,
    line_graph: LineOut<'a>,
    stats: GraphStats,
}

pub fn to_json(problem: &Problem, g: &HeteroGraph, l: &LineGraph) -> serde_json::Value {
    let out = GraphOut {
        id: &problem.id,
        nodes: g
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| NodeOut {
                id,
                token_index: n.token_index,
                token: &problem.tokens[n.token_index],
                kind: n.kind.name(),
            })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeOut {
                src: e.src,
                dst: e.dst,
                kind: e.kind.name(),
            })
            .collect(),
        line_graph: LineOut {
            nodes: l
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| LineNodeOut {
                    id,
                    src: n.src,
                    dst: n.dst,
                    kind: n.kind.name(),
                })
                .collect(),
            edges: &l.edges,
        },
        stats: graph_stats(g),
    };
    serde_json::to_value(out).expect("graph dump serializes")
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn to_dot(problem: &Problem, g: &HeteroGraph) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}\" {{", escape(&problem.id));
    for (i, n) in g.nodes.iter().enumerate() {
        let _ = writeln!(
            s,
            "  n{i} [label=\"{}\\n{}\"];",
            escape(&problem.tokens[n.token_index]),
            n.kind.name()
        );
    }
    for e in &g.edges {
        let _ = writeln!(s, "  n{} -> n{} [label=\"{}\"];", e.src, e.dst, e.kind.name());
    }
    s.push_str("}\n");
    s
}

/// DOT of the line graph; each node is labelled with its origin edge.
pub fn line_to_dot(problem: &Problem, g: &HeteroGraph, l: &LineGraph) -> String {
    let token = |node: usize| escape(&problem.tokens[g.nodes[node].token_index]);
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{} line\" {{", escape(&problem.id));
    for (i, n) in l.nodes.iter().enumerate() {
        let _ = writeln!(s, "  e{i} [label=\"{} -> {}\\n{}\"];", token(n.src), token(n.dst), n.kind.name());
    }
    for e in &l.edges {
        let _ = writeln!(s, "  e{} -> e{} [label=\"{}\"];", e.from, e.to, token(e.shared));
    }
    s.push_str("}\n");
    s
}

use serde::{Deserialize, Serialize};

use super::hetero::{EdgeType, HeteroGraph};

/// A line-graph node: one directed edge of the origin graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineNode {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeType,
}

/// `from = (i -> j)`, `to = (j -> k)` with `k != i`; `shared = j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineEdge {
    pub from: usize,
    pub to: usize,
    pub shared: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineGraph {
    pub nodes: Vec<LineNode>,
    pub edges: Vec<LineEdge>,
}

/// Entry of the non-backtracking matrix for two directed edges.
pub fn non_backtracking_entry(a: (usize, usize), b: (usize, usize)) -> u8 {
    u8::from(a.1 == b.0 && b.1 != a.0)
}

/// Line graph with one node per origin edge (same order) and an edge
/// wherever the non-backtracking matrix is 1.
pub fn to_line_graph(g: &HeteroGraph) -> LineGraph {
    let nodes: Vec<LineNode> = g
        .edges
        .iter()
        .map(|e| LineNode {
            src: e.src,
            dst: e.dst,
            kind: e.kind,
        })
        .collect();
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); g.nodes.len()];
    for (k, e) in g.edges.iter().enumerate() {
        out_edges[e.src].push(k);
    }
    let mut edges = Vec::new();
    for (a, e) in g.edges.iter().enumerate() {
        for &b in &out_edges[e.dst] {
            if g.edges[b].dst != e.src {
                edges.push(LineEdge {
                    from: a,
                    to: b,
                    shared: e.dst,
                });
            }
        }
    }
    LineGraph { nodes, edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::hetero::{GraphEdge, GraphNode, NodeType};

    fn graph(n: usize, edges: &[(usize, usize)]) -> HeteroGraph {
        HeteroGraph {
            nodes: (0..n)
                .map(|i| GraphNode {
                    token_index: i,
                    kind: NodeType::Entity,
                })
                .collect(),
            edges: edges
                .iter()
                .map(|&(src, dst)| GraphEdge {
                    src,
                    dst,
                    kind: EdgeType::Mod,
                })
                .collect(),
        }
    }

    #[test]
    fn path_excludes_backtracking() {
        // 0 <-> 1 <-> 2
        let g = graph(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]);
        let l = to_line_graph(&g);
        assert_eq!(l.nodes.len(), 4);
        let pairs: Vec<_> = l.edges.iter().map(|e| (e.from, e.to)).collect();
        // (0->1)->(1->2) and (2->1)->(1->0) only.
        assert_eq!(pairs, [(0, 2), (3, 1)]);
        assert!(l.edges.iter().all(|e| e.shared == 1));
    }

    #[test]
    fn entry() {
        assert_eq!(non_backtracking_entry((0, 1), (1, 2)), 1);
        assert_eq!(non_backtracking_entry((0, 1), (1, 0)), 0);
        assert_eq!(non_backtracking_entry((0, 1), (2, 3)), 0);
    }

    #[test]
    fn empty() {
        let l = to_line_graph(&graph(2, &[]));
        assert!(l.nodes.is_empty() && l.edges.is_empty());
    }
}

mod common;

use std::collections::BTreeSet;

use hlgt::graph::{to_line_graph, EdgeType, GraphEdge, GraphNode, HeteroGraph, NodeType};
use proptest::prelude::*;

fn arb_graph(symmetric: bool) -> impl Strategy<Value = HeteroGraph> {
    (1usize..=8)
        .prop_flat_map(move |n| (Just(n), proptest::collection::vec((0..n, 0..n, 0..EdgeType::COUNT), 0..=3 * n)))
        .prop_map(move |(n, raw)| {
            let mut edges = BTreeSet::new();
            for (u, v, k) in raw {
                if u == v {
                    continue;
                }
                let kind = EdgeType::ALL[k];
                edges.insert(GraphEdge { src: u, dst: v, kind });
                if symmetric {
                    edges.insert(GraphEdge { src: v, dst: u, kind });
                }
            }
            HeteroGraph {
                nodes: (0..n)
                    .map(|i| GraphNode {
                        token_index: i,
                        kind: NodeType::ALL[i % NodeType::COUNT],
                    })
                    .collect(),
                edges: edges.into_iter().collect(),
            }
        })
}

/// Directed edges `(u, v)` counted once each, ignoring types.
fn pairs(g: &HeteroGraph) -> BTreeSet<(usize, usize)> {
    g.edges.iter().map(|e| (e.src, e.dst)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_non_backtracking_oracle(g in arb_graph(false)) {
        let l = to_line_graph(&g);
        prop_assert_eq!(l.nodes.len(), g.edges.len());
        for (n, e) in l.nodes.iter().zip(&g.edges) {
            prop_assert_eq!((n.src, n.dst, n.kind), (e.src, e.dst, e.kind));
        }
        let got: BTreeSet<_> = l.edges.iter().copied().collect();
        prop_assert_eq!(got.len(), l.edges.len(), "duplicate line edges");
        prop_assert_eq!(got, common::brute_force_line_edges(&g));
    }

    #[test]
    fn symmetric_graphs_have_two_line_nodes_per_edge(g in arb_graph(true)) {
        // Typed undirected edges; each appears once per direction.
        let undirected = g.edges.iter().filter(|e| e.src < e.dst).count();
        prop_assert_eq!(to_line_graph(&g).nodes.len(), 2 * undirected);
        prop_assert!(pairs(&g).iter().all(|&(u, v)| pairs(&g).contains(&(v, u))));
    }

    /// For each middle node: every in-edge pairs with every out-edge except
    /// its own reversal.
    #[test]
    fn line_edge_count_formula(g in arb_graph(false)) {
        let mut expected = 0;
        for v in 0..g.nodes.len() {
            let ins: Vec<_> = g.edges.iter().filter(|e| e.dst == v).collect();
            let outs: Vec<_> = g.edges.iter().filter(|e| e.src == v).collect();
            for a in &ins {
                expected += outs.iter().filter(|b| b.dst != a.src).count();
            }
        }
        prop_assert_eq!(to_line_graph(&g).edges.len(), expected);
    }

    #[test]
    fn shared_node_is_the_junction(g in arb_graph(false)) {
        let l = to_line_graph(&g);
        for e in &l.edges {
            prop_assert_eq!(l.nodes[e.from].dst, e.shared);
            prop_assert_eq!(l.nodes[e.to].src, e.shared);
            prop_assert!(l.nodes[e.to].dst != l.nodes[e.from].src);
        }
    }
}

#[test]
fn triangle_both_ways() {
    let edges = [(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)];
    let g = HeteroGraph {
        nodes: (0..3)
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
    };
    let l = to_line_graph(&g);
    assert_eq!(l.nodes.len(), 6);
    // Each directed edge continues to exactly one non-reversing successor.
    assert_eq!(l.edges.len(), 6);
}

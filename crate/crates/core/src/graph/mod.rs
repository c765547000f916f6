mod dump;
mod hetero;
mod line;

pub use dump::{line_to_dot, to_dot, to_json};
pub use hetero::{
    build_hetero_graph, classify_nodes, graph_stats, EdgeType, GraphEdge, GraphNode, GraphStats, HeteroGraph,
    NodeType, RATE_WORDS, UNIT_WORDS,
};
pub use line::{non_backtracking_entry, to_line_graph, LineEdge, LineGraph, LineNode};

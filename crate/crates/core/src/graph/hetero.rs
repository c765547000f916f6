use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{NumberKind, Problem, SrlLabel};

/// Words that mark a rate when they directly follow a number.
pub const RATE_WORDS: &[&str] = &["percent", "percentage", "times", "ratio", "rate", "fold"];

/// Measure words recognized as units when they directly follow a number and
/// the problem carries no explicit unit links.
pub const UNIT_WORDS: &[&str] = &[
    "km", "m", "cm", "mm", "kg", "g", "ton", "tons", "meter", "meters", "kilometers", "grams", "yuan",
    "dollar", "dollars", "hour", "hours", "minute", "minutes", "second", "seconds", "day", "days", "liter",
    "liters", "pages", "degrees",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Entity,
    Root,
    Unit,
    Rate,
    Fraction,
    Percentage,
    OtherNumber,
}

impl NodeType {
    pub const ALL: [NodeType; 7] = [
        NodeType::Entity,
        NodeType::Root,
        NodeType::Unit,
        NodeType::Rate,
        NodeType::Fraction,
        NodeType::Percentage,
        NodeType::OtherNumber,
    ];
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Entity => "entity",
            NodeType::Root => "root",
            NodeType::Unit => "unit",
            NodeType::Rate => "rate",
            NodeType::Fraction => "fraction",
            NodeType::Percentage => "percentage",
            NodeType::OtherNumber => "other_number",
        }
    }

    pub fn is_number(self) -> bool {
        matches!(self, NodeType::Fraction | NodeType::Percentage | NodeType::OtherNumber)
    }

    pub fn is_unit_or_rate(self) -> bool {
        matches!(self, NodeType::Unit | NodeType::Rate)
    }

    pub fn for_number(kind: NumberKind) -> Self {
        match kind {
            NumberKind::Fraction => NodeType::Fraction,
            NumberKind::Percentage => NodeType::Percentage,
            NumberKind::Other => NodeType::OtherNumber,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    #[serde(rename = "ARG0")]
    Arg0,
    #[serde(rename = "ARG1")]
    Arg1,
    #[serde(rename = "ARGM")]
    ArgM,
    #[serde(rename = "MOD")]
    Mod,
    #[serde(rename = "BAE")]
    Bae,
    #[serde(rename = "LES")]
    Les,
    #[serde(rename = "DT")]
    Dt,
}

impl EdgeType {
    pub const ALL: [EdgeType; 7] = [
        EdgeType::Arg0,
        EdgeType::Arg1,
        EdgeType::ArgM,
        EdgeType::Mod,
        EdgeType::Bae,
        EdgeType::Les,
        EdgeType::Dt,
    ];
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Arg0 => "ARG0",
            EdgeType::Arg1 => "ARG1",
            EdgeType::ArgM => "ARGM",
            EdgeType::Mod => "MOD",
            EdgeType::Bae => "BAE",
            EdgeType::Les => "LES",
            EdgeType::Dt => "DT",
        }
    }

    pub fn from_label(label: SrlLabel) -> Self {
        match label {
            SrlLabel::Arg0 => EdgeType::Arg0,
            SrlLabel::Arg1 => EdgeType::Arg1,
            SrlLabel::ArgM => EdgeType::ArgM,
        }
    }

    pub fn is_role(self) -> bool {
        matches!(self, EdgeType::Arg0 | EdgeType::Arg1 | EdgeType::ArgM)
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, EdgeType::Bae | EdgeType::Les | EdgeType::Dt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphNode {
    pub token_index: usize,
    pub kind: NodeType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeType,
}

/// Typed directed graph over token positions. Nodes are ordered by token
/// index, edges by `(src, dst, type)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl HeteroGraph {
    pub fn node_of_token(&self, token: usize) -> Option<usize> {
        self.nodes.binary_search_by_key(&token, |n| n.token_index).ok()
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.token_index) {
                return Err(format!("token {} has two nodes", n.token_index));
            }
        }
        for e in &self.edges {
            let (Some(s), Some(d)) = (self.nodes.get(e.src), self.nodes.get(e.dst)) else {
                return Err(format!("edge {e:?} has an invalid endpoint"));
            };
            let (s, d) = (s.kind, d.kind);
            let root_entity =
                (s == NodeType::Root && d == NodeType::Entity) || (s == NodeType::Entity && d == NodeType::Root);
            if root_entity && !e.kind.is_role() {
                return Err(format!("root/entity edge {e:?} is not a role edge"));
            }
            if s.is_number() && d.is_number() && !e.kind.is_comparison() {
                return Err(format!("number/number edge {e:?} is not a comparison edge"));
            }
            if s.is_unit_or_rate() && d.is_number() && e.kind != EdgeType::Mod {
                return Err(format!("unit/number edge {e:?} is not MOD"));
            }
            if s == NodeType::Entity && d == NodeType::Entity && e.kind != EdgeType::Mod {
                return Err(format!("entity/entity edge {e:?} is not MOD"));
            }
        }
        Ok(())
    }
}

fn is_noun(tag: &str) -> bool {
    tag.starts_with("NN")
}

fn unit_kind(word: &str) -> NodeType {
    if RATE_WORDS.contains(&word.to_lowercase().as_str()) {
        NodeType::Rate
    } else {
        NodeType::Unit
    }
}

/// `(number index, unit token)` pairs: the explicit annotation when
/// present, otherwise a known unit or rate word right after the number.
fn unit_links(problem: &Problem) -> Vec<(usize, usize)> {
    match &problem.units {
        Some(links) => links.iter().map(|u| (u.num_index, u.token_index)).collect(),
        None => problem
            .numbers
            .iter()
            .enumerate()
            .filter_map(|(k, n)| {
                let next = n.token_index + 1;
                let word = problem.tokens.get(next)?.to_lowercase();
                (UNIT_WORDS.contains(&word.as_str()) || RATE_WORDS.contains(&word.as_str())).then_some((k, next))
            })
            .collect(),
    }
}

/// Assigns node types to tokens. Priority: numbers, then SRL roots, then
/// unit/rate words, then nouns inside argument spans.
pub fn classify_nodes(problem: &Problem) -> Vec<GraphNode> {
    let mut kinds: BTreeMap<usize, NodeType> = BTreeMap::new();
    for n in &problem.numbers {
        kinds.insert(n.token_index, NodeType::for_number(n.kind));
    }
    for f in &problem.srl_frames {
        kinds.entry(f.root).or_insert(NodeType::Root);
    }
    for (_, tok) in unit_links(problem) {
        kinds.entry(tok).or_insert_with(|| unit_kind(&problem.tokens[tok]));
    }
    for f in &problem.srl_frames {
        for a in &f.args {
            for t in a.span[0]..a.span[1] {
                if is_noun(&problem.pos_tags[t]) {
                    kinds.entry(t).or_insert(NodeType::Entity);
                }
            }
        }
    }
    kinds
        .into_iter()
        .map(|(token_index, kind)| GraphNode { token_index, kind })
        .collect()
}

/// Builds the heterogeneous graph:
///
/// * root <-> entity edges typed by the argument label, in both directions;
/// * inside each argument phrase, a contact node (its first number, else
///   its last entity) is linked to the root, and the other entities point
///   to the contact with `MOD`;
/// * unit/rate -> number `MOD`;
/// * number pairs: `BAE`/`LES` for equal subtypes by value, `DT` otherwise.
pub fn build_hetero_graph(problem: &Problem) -> HeteroGraph {
    let nodes = classify_nodes(problem);
    let node_at: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, n)| (n.token_index, i)).collect();
    let mut edges: BTreeSet<GraphEdge> = BTreeSet::new();
    let mut add = |src: usize, dst: usize, kind: EdgeType| {
        if src != dst {
            edges.insert(GraphEdge { src, dst, kind });
        }
    };

    for f in &problem.srl_frames {
        let Some(&root) = node_at.get(&f.root) else { continue };
        if nodes[root].kind != NodeType::Root {
            continue;
        }
        for a in &f.args {
            let label = EdgeType::from_label(a.label);
            let members: Vec<usize> = (a.span[0]..a.span[1])
                .filter_map(|t| node_at.get(&t).copied())
                .filter(|&n| matches!(nodes[n].kind, NodeType::Entity) || nodes[n].kind.is_number())
                .collect();
            let entities: Vec<usize> = members.iter().copied().filter(|&n| nodes[n].kind == NodeType::Entity).collect();
            for &e in &entities {
                add(root, e, label);
                add(e, root, label);
            }
            let contact = members
                .iter()
                .copied()
                .find(|&n| nodes[n].kind.is_number())
                .or_else(|| entities.last().copied());
            if let Some(c) = contact {
                if nodes[c].kind.is_number() {
                    add(root, c, label);
                    add(c, root, label);
                }
                if members.len() > 1 {
                    for &e in &entities {
                        if e != c {
                            add(e, c, EdgeType::Mod);
                        }
                    }
                }
            }
        }
    }

    for (k, tok) in unit_links(problem) {
        let (Some(&u), Some(&q)) = (node_at.get(&tok), node_at.get(&problem.numbers[k].token_index)) else {
            continue;
        };
        if nodes[u].kind.is_unit_or_rate() {
            add(u, q, EdgeType::Mod);
        }
    }

    for (i, a) in problem.numbers.iter().enumerate() {
        for (j, b) in problem.numbers.iter().enumerate() {
            if i == j {
                continue;
            }
            let (src, dst) = (node_at[&a.token_index], node_at[&b.token_index]);
            let kind = if a.kind != b.kind {
                EdgeType::Dt
            } else if a.value >= b.value {
                EdgeType::Bae
            } else {
                EdgeType::Les
            };
            add(src, dst, kind);
        }
    }

    HeteroGraph {
        nodes,
        edges: edges.into_iter().collect(),
    }
}

/// Node and edge counts per type.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: BTreeMap<String, usize>,
    pub edges: BTreeMap<String, usize>,
}

impl GraphStats {
    pub fn node_count(&self, t: NodeType) -> usize {
        self.nodes.get(t.name()).copied().unwrap_or(0)
    }

    pub fn edge_count(&self, t: EdgeType) -> usize {
        self.edges.get(t.name()).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &GraphStats) {
        for (k, v) in &other.nodes {
            *self.nodes.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.edges {
            *self.edges.entry(k.clone()).or_default() += v;
        }
    }
}

pub fn graph_stats(g: &HeteroGraph) -> GraphStats {
    let mut s = GraphStats {
        nodes: NodeType::ALL.iter().map(|t| (t.name().to_string(), 0)).collect(),
        edges: EdgeType::ALL.iter().map(|t| (t.name().to_string(), 0)).collect(),
    };
    for n in &g.nodes {
        *s.nodes.get_mut(n.kind.name()).expect("all types present") += 1;
    }
    for e in &g.edges {
        *s.edges.get_mut(e.kind.name()).expect("all types present") += 1;
    }
    s
}

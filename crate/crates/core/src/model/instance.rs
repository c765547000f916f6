use crate::data::{NumberKind, Operator, Problem, Symbol};
use crate::error::{Error, Result};
use crate::graph::{build_hetero_graph, to_line_graph, HeteroGraph, LineGraph};

use super::vocab::Vocab;

/// Everything the model needs about one problem, prepared once and reused
/// across epochs.
#[derive(Clone, Debug)]
pub struct Instance {
    pub problem: Problem,
    pub token_ids: Vec<usize>,
    pub graph: HeteroGraph,
    pub line: LineGraph,
    /// Token position of each number slot.
    pub num_positions: Vec<usize>,
    /// Ordered same-subtype number pairs `(i, j)` with label `value_i >= value_j`.
    pub pairs: Vec<(usize, usize, bool)>,
    /// Decoder output space: operators, constants, then number slots.
    pub candidates: Vec<Symbol>,
}

impl Instance {
    pub fn new(problem: &Problem, vocab: &Vocab, constant_count: usize, allow_pow: bool) -> Result<Self> {
        if problem.tokens.is_empty() {
            return Err(Error::InvalidProblem {
                id: problem.id.clone(),
                msg: "no tokens".into(),
            });
        }
        let graph = build_hetero_graph(problem);
        let line = to_line_graph(&graph);
        let mut pairs = Vec::new();
        for (i, a) in problem.numbers.iter().enumerate() {
            for (j, b) in problem.numbers.iter().enumerate() {
                if i != j && a.kind == b.kind {
                    pairs.push((i, j, a.value >= b.value));
                }
            }
        }
        let mut candidates: Vec<Symbol> = Operator::ALL
            .iter()
            .filter(|&&o| allow_pow || o != Operator::Pow)
            .map(|&o| Symbol::Op(o))
            .collect();
        candidates.extend((0..constant_count).map(Symbol::Const));
        candidates.extend((0..problem.numbers.len()).map(Symbol::Num));
        Ok(Instance {
            problem: problem.clone(),
            token_ids: vocab.encode(problem),
            graph,
            line,
            num_positions: problem.numbers.iter().map(|n| n.token_index).collect(),
            pairs,
            candidates,
        })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn number_kinds(&self) -> Vec<NumberKind> {
        self.problem.numbers.iter().map(|n| n.kind).collect()
    }

    pub fn candidate_index(&self, s: Symbol) -> Option<usize> {
        self.candidates.iter().position(|&c| c == s)
    }
}

//! Problem records, numerals, equations and corpora.

pub mod dataset;
pub mod expr;
pub mod numbers;
pub mod problem;
pub mod synthetic;

pub use dataset::{load_dataset, load_str, parse_line, write_dataset, LoadReport, Strictness};
pub use expr::{parse_equation, ConstantTable, ExpressionTree, Operator, Symbol};
pub use numbers::{extract_numbers, format_rational, parse_rational, NumberKind, NumberToken, NUM_TOKEN};
pub use problem::{Problem, ProblemRecord, SrlArg, SrlFrame, SrlLabel, UnitLink};
pub use synthetic::generate_synthetic;

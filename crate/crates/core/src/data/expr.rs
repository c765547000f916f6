//! Binary expression trees over operators, constants and number slots.

use std::fmt;

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::numbers::{format_rational, parse_decimal};
use crate::error::{Error, Result};

/// Largest exponent magnitude accepted by `^`.
pub const MAX_EXPONENT: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl Operator {
    pub const ALL: [Operator; 5] = [
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::Div,
        Operator::Pow,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Add => "+",
            Operator::Sub => "-",
            Operator::Mul => "*",
            Operator::Div => "/",
            Operator::Pow => "^",
        }
    }

    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '+' => Operator::Add,
            '-' | '−' => Operator::Sub,
            '*' | '×' => Operator::Mul,
            '/' | '÷' => Operator::Div,
            '^' => Operator::Pow,
            _ => return None,
        })
    }

    fn precedence(self) -> u8 {
        match self {
            Operator::Add | Operator::Sub => 1,
            Operator::Mul | Operator::Div => 2,
            Operator::Pow => 3,
        }
    }

    fn right_assoc(self) -> bool {
        self == Operator::Pow
    }
}

/// One prefix-order element: an operator, a constant-table index, or a
/// problem number slot (`N<k>`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    Op(Operator),
    Const(usize),
    Num(usize),
}

impl Symbol {
    pub fn is_leaf(self) -> bool {
        !matches!(self, Symbol::Op(_))
    }
}

/// Ordered table of frequently used constants.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantTable {
    literals: Vec<String>,
    #[serde(skip)]
    values: Vec<BigRational>,
}

impl Default for ConstantTable {
    fn default() -> Self {
        ConstantTable::new(["1", "100", "3.14"]).expect("default constants are valid")
    }
}

impl ConstantTable {
    pub fn new<S: AsRef<str>>(literals: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut table = ConstantTable {
            literals: Vec::new(),
            values: Vec::new(),
        };
        for lit in literals {
            let lit = lit.as_ref();
            let v = parse_decimal(lit).ok_or_else(|| Error::Config(format!("bad constant `{lit}`")))?;
            if table.values.contains(&v) {
                return Err(Error::Config(format!("duplicate constant `{lit}`")));
            }
            table.literals.push(lit.to_string());
            table.values.push(v);
        }
        Ok(table)
    }

    /// Re-derives values after deserialization.
    pub fn rebuild(self) -> Result<Self> {
        ConstantTable::new(self.literals)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, i: usize) -> Option<&BigRational> {
        self.values.get(i)
    }

    pub fn literal(&self, i: usize) -> Option<&str> {
        self.literals.get(i).map(String::as_str)
    }

    pub fn literals(&self) -> &[String] {
        &self.literals
    }

    pub fn find(&self, v: &BigRational) -> Option<usize> {
        self.values.iter().position(|c| c == v)
    }
}

/// A complete binary expression tree stored in prefix order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpressionTree {
    prefix: Vec<Symbol>,
}

/// Number of additional leaves a prefix needs to become complete, or
/// `None` once it is already complete (or over-complete).
pub fn open_slots(prefix: &[Symbol]) -> Option<usize> {
    let mut need = 1usize;
    for s in prefix {
        if need == 0 {
            return None;
        }
        match s {
            Symbol::Op(_) => need += 1,
            _ => need -= 1,
        }
    }
    Some(need)
}

impl ExpressionTree {
    /// Validates that `prefix` forms exactly one complete binary tree.
    pub fn from_prefix(prefix: Vec<Symbol>) -> Result<Self> {
        match open_slots(&prefix) {
            Some(0) if !prefix.is_empty() => Ok(ExpressionTree { prefix }),
            Some(n) => Err(Error::Equation(format!("incomplete prefix: {n} operand(s) missing"))),
            None => Err(Error::Equation("prefix has trailing symbols".into())),
        }
    }

    pub fn leaf(s: Symbol) -> Self {
        ExpressionTree { prefix: vec![s] }
    }

    pub fn prefix(&self) -> &[Symbol] {
        &self.prefix
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.prefix.iter().filter(|s| s.is_leaf()).count()
    }

    pub fn max_slot(&self) -> Option<usize> {
        self.prefix
            .iter()
            .filter_map(|s| match s {
                Symbol::Num(k) => Some(*k),
                _ => None,
            })
            .max()
    }

    /// Prefix tokens as strings (`+`, `N0`, `C1`, ...).
    pub fn prefix_strings(&self) -> Vec<String> {
        self.prefix
            .iter()
            .map(|s| match s {
                Symbol::Op(o) => o.symbol().to_string(),
                Symbol::Const(c) => format!("C{c}"),
                Symbol::Num(k) => format!("N{k}"),
            })
            .collect()
    }

    fn build(&self) -> Node {
        fn rec(p: &[Symbol], pos: &mut usize) -> Node {
            let s = p[*pos];
            *pos += 1;
            match s {
                Symbol::Op(op) => {
                    let l = rec(p, pos);
                    let r = rec(p, pos);
                    Node::Op(op, Box::new(l), Box::new(r))
                }
                leaf => Node::Leaf(leaf),
            }
        }
        rec(&self.prefix, &mut 0)
    }

    /// Infix rendering with the minimal parentheses needed to re-parse to the
    /// same tree. Constants print as their literal, slots as `N<k>`.
    pub fn to_infix(&self, constants: &ConstantTable) -> String {
        self.render(&|s| match s {
            Symbol::Const(c) => constants.literal(c).map_or_else(|| format!("C{c}"), str::to_string),
            Symbol::Num(k) => format!("N{k}"),
            Symbol::Op(_) => unreachable!(),
        })
    }

    /// Infix rendering with number slots replaced by the problem's literals.
    pub fn to_infix_with(&self, constants: &ConstantTable, number_literals: &[String]) -> String {
        self.render(&|s| match s {
            Symbol::Const(c) => constants.literal(c).map_or_else(|| format!("C{c}"), str::to_string),
            Symbol::Num(k) => number_literals.get(k).cloned().unwrap_or_else(|| format!("N{k}")),
            Symbol::Op(_) => unreachable!(),
        })
    }

    fn render(&self, leaf: &dyn Fn(Symbol) -> String) -> String {
        fn wrap(node: &Node, parent: Operator, right: bool, leaf: &dyn Fn(Symbol) -> String) -> String {
            let s = go(node, leaf);
            match node {
                Node::Op(op, _, _) => {
                    let (p, q) = (op.precedence(), parent.precedence());
                    let needs = p < q
                        || (p == q && (right != parent.right_assoc()));
                    if needs {
                        format!("({s})")
                    } else {
                        s
                    }
                }
                Node::Leaf(_) => s,
            }
        }
        fn go(node: &Node, leaf: &dyn Fn(Symbol) -> String) -> String {
            match node {
                Node::Leaf(s) => leaf(*s),
                Node::Op(op, l, r) => format!(
                    "{}{}{}",
                    wrap(l, *op, false, leaf),
                    op.symbol(),
                    wrap(r, *op, true, leaf)
                ),
            }
        }
        go(&self.build(), leaf)
    }

    /// Exact value given the problem's number values.
    pub fn evaluate(&self, numbers: &[BigRational], constants: &ConstantTable) -> Result<BigRational> {
        fn eval(node: &Node, numbers: &[BigRational], constants: &ConstantTable) -> Result<BigRational> {
            match node {
                Node::Leaf(Symbol::Num(k)) => numbers
                    .get(*k)
                    .cloned()
                    .ok_or_else(|| Error::Eval(format!("slot N{k} is unbound ({} numbers)", numbers.len()))),
                Node::Leaf(Symbol::Const(c)) => constants
                    .value(*c)
                    .cloned()
                    .ok_or_else(|| Error::Eval(format!("constant index {c} out of range"))),
                Node::Leaf(Symbol::Op(_)) => unreachable!(),
                Node::Op(op, l, r) => {
                    let a = eval(l, numbers, constants)?;
                    let b = eval(r, numbers, constants)?;
                    apply(*op, a, b)
                }
            }
        }
        eval(&self.build(), numbers, constants)
    }
}

fn apply(op: Operator, a: BigRational, b: BigRational) -> Result<BigRational> {
    Ok(match op {
        Operator::Add => a + b,
        Operator::Sub => a - b,
        Operator::Mul => a * b,
        Operator::Div => {
            if b.is_zero() {
                return Err(Error::Eval("division by zero".into()));
            }
            a / b
        }
        Operator::Pow => {
            if !b.is_integer() {
                return Err(Error::Eval(format!("exponent {} is not an integer", format_rational(&b))));
            }
            let e = b
                .to_integer()
                .abs()
                .to_u32()
                .filter(|e| *e <= MAX_EXPONENT)
                .ok_or_else(|| Error::Eval(format!("exponent {} too large", b)))?;
            let p = num::pow(a, e as usize);
            if b.is_negative() {
                if p.is_zero() {
                    return Err(Error::Eval("division by zero".into()));
                }
                BigRational::one() / p
            } else {
                p
            }
        }
    })
}

enum Node {
    Leaf(Symbol),
    Op(Operator, Box<Node>, Box<Node>),
}

impl fmt::Display for ExpressionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.prefix_strings().join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Sym(Symbol),
    Op(Operator),
    Open,
    Close,
}

fn lex(input: &str, constants: &ConstantTable, num_count: usize) -> Result<Vec<Lexeme>> {
    let chars: Vec<char> = input.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' || c == '[' {
            out.push(Lexeme::Open);
            i += 1;
        } else if c == ')' || c == ']' {
            out.push(Lexeme::Close);
            i += 1;
        } else if let Some(op) = Operator::from_char(c) {
            out.push(Lexeme::Op(op));
            i += 1;
        } else if c == 'N' || c == 'n' {
            let start = i + 1;
            let mut j = start;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j == start {
                return Err(Error::Equation(format!("unknown token `{c}`")));
            }
            let k: usize = chars[start..j].iter().collect::<String>().parse().map_err(|_| Error::Equation("bad slot index".into()))?;
            if k >= num_count {
                return Err(Error::Equation(format!("slot N{k} out of range ({num_count} numbers)")));
            }
            out.push(Lexeme::Sym(Symbol::Num(k)));
            i = j;
        } else if c.is_ascii_digit() || c == '.' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            let lit: String = chars[i..j].iter().collect();
            let v = parse_decimal(&lit).ok_or_else(|| Error::Equation(format!("bad literal `{lit}`")))?;
            let idx = constants
                .find(&v)
                .ok_or_else(|| Error::Equation(format!("literal `{lit}` is neither a slot nor a known constant")))?;
            out.push(Lexeme::Sym(Symbol::Const(idx)));
            i = j;
        } else {
            return Err(Error::Equation(format!("unknown token `{c}`")));
        }
    }
    Ok(out)
}

/// Parses an infix equation over `N0..N{num_count-1}`, constant literals,
/// `+ - * / ^` and parentheses into a prefix-ordered tree. `*`/`/`
/// bind tighter than `+`/`-`; `^` binds tightest and associates right.
pub fn parse_equation(infix: &str, constants: &ConstantTable, num_count: usize) -> Result<ExpressionTree> {
    let lexemes = lex(infix, constants, num_count)?;
    if lexemes.is_empty() {
        return Err(Error::Equation("empty equation".into()));
    }
    // Shunting-yard into postfix, then fold postfix into prefix subtrees.
    let mut output: Vec<Lexeme> = Vec::new();
    let mut stack: Vec<Lexeme> = Vec::new();
    let mut expect_operand = true;
    for lx in lexemes {
        match lx {
            Lexeme::Sym(_) => {
                if !expect_operand {
                    return Err(Error::Equation("missing operator between operands".into()));
                }
                output.push(lx);
                expect_operand = false;
            }
            Lexeme::Op(op) => {
                if expect_operand {
                    return Err(Error::Equation(format!("operator `{}` is missing its left operand", op.symbol())));
                }
                while let Some(Lexeme::Op(top)) = stack.last() {
                    let top = *top;
                    let pops = top.precedence() > op.precedence()
                        || (top.precedence() == op.precedence() && !op.right_assoc());
                    if !pops {
                        break;
                    }
                    output.push(Lexeme::Op(top));
                    stack.pop();
                }
                stack.push(lx);
                expect_operand = true;
            }
            Lexeme::Open => {
                if !expect_operand {
                    return Err(Error::Equation("missing operator before `(`".into()));
                }
                stack.push(lx);
            }
            Lexeme::Close => {
                if expect_operand {
                    return Err(Error::Equation("empty or incomplete parenthesized group".into()));
                }
                loop {
                    match stack.pop() {
                        Some(Lexeme::Open) => break,
                        Some(op) => output.push(op),
                        None => return Err(Error::Equation("unbalanced `)`".into())),
                    }
                }
            }
        }
    }
    if expect_operand {
        return Err(Error::Equation("equation ends with an operator".into()));
    }
    while let Some(lx) = stack.pop() {
        if lx == Lexeme::Open {
            return Err(Error::Equation("unbalanced `(`".into()));
        }
        output.push(lx);
    }
    let mut subtrees: Vec<Vec<Symbol>> = Vec::new();
    for lx in output {
        match lx {
            Lexeme::Sym(s) => subtrees.push(vec![s]),
            Lexeme::Op(op) => {
                let r = subtrees.pop();
                let l = subtrees.pop();
                let (Some(l), Some(r)) = (l, r) else {
                    return Err(Error::Equation("operator is missing operands".into()));
                };
                let mut t = vec![Symbol::Op(op)];
                t.extend(l);
                t.extend(r);
                subtrees.push(t);
            }
            _ => unreachable!(),
        }
    }
    match (subtrees.pop(), subtrees.is_empty()) {
        (Some(prefix), true) => ExpressionTree::from_prefix(prefix),
        _ => Err(Error::Equation("dangling operands".into())),
    }
}

/// Value of an integer as an exact rational.
pub fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

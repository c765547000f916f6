use num::BigRational;
use serde::{Deserialize, Serialize};

use super::expr::{parse_equation, ConstantTable, ExpressionTree};
use super::numbers::{extract_numbers, format_rational, parse_rational, NumberToken, NUM_TOKEN};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SrlLabel {
    #[serde(rename = "ARG-0")]
    Arg0,
    #[serde(rename = "ARG-1")]
    Arg1,
    #[serde(rename = "ARG-M")]
    ArgM,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlArg {
    pub label: SrlLabel,
    /// Half-open token range `[start, end)`.
    pub span: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlFrame {
    pub root: usize,
    pub args: Vec<SrlArg>,
}

/// Explicit link from a number (by position in the number list) to its
/// unit or rate word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitLink {
    pub num_index: usize,
    pub token_index: usize,
}

/// One line of the dataset file, exactly as serialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    #[serde(default)]
    pub srl: Vec<SrlFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<UnitLink>>,
    pub equation: String,
    pub answer: String,
}

/// A validated problem with numbers located and the target tree parsed.
/// All token indices refer to `tokens` after ratio splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub id: String,
    pub tokens: Vec<String>,
    pub pos_tags: Vec<String>,
    pub srl_frames: Vec<SrlFrame>,
    pub numbers: Vec<NumberToken>,
    /// `None` means "use the unit-word heuristic".
    pub units: Option<Vec<UnitLink>>,
    pub equation: String,
    pub target: ExpressionTree,
    pub answer: BigRational,
}

impl Problem {
    pub fn from_record(rec: ProblemRecord, constants: &ConstantTable) -> Result<Self> {
        let invalid = |msg: String| Error::InvalidProblem {
            id: rec.id.clone(),
            msg,
        };
        let n_in = rec.tokens.len();
        if n_in == 0 {
            return Err(invalid("no tokens".into()));
        }
        if rec.pos.len() != n_in {
            return Err(invalid(format!("{} PoS tags for {n_in} tokens", rec.pos.len())));
        }
        for f in &rec.srl {
            if f.root >= n_in {
                return Err(invalid(format!("SRL root {} out of range", f.root)));
            }
            for a in &f.args {
                let [s, e] = a.span;
                if s >= e || e > n_in {
                    return Err(invalid(format!("SRL span [{s}, {e}) out of range")));
                }
            }
        }

        let ex = extract_numbers(&rec.tokens);
        // First output position of each input token, plus the end sentinel.
        let mut first = vec![0usize; n_in + 1];
        for (new, &old) in ex.source.iter().enumerate().rev() {
            first[old] = new;
        }
        first[n_in] = ex.tokens.len();

        let pos_tags: Vec<String> = ex.source.iter().map(|&old| rec.pos[old].clone()).collect();
        let srl_frames = rec
            .srl
            .iter()
            .map(|f| SrlFrame {
                root: first[f.root],
                args: f
                    .args
                    .iter()
                    .map(|a| SrlArg {
                        label: a.label,
                        span: [first[a.span[0]], first[a.span[1]]],
                    })
                    .collect(),
            })
            .collect();

        let units = match rec.units {
            None => None,
            Some(links) => {
                let mut out = Vec::with_capacity(links.len());
                for u in links {
                    if u.num_index >= ex.numbers.len() {
                        return Err(invalid(format!(
                            "unit link references number {} of {}",
                            u.num_index,
                            ex.numbers.len()
                        )));
                    }
                    if u.token_index >= n_in {
                        return Err(invalid(format!("unit token {} out of range", u.token_index)));
                    }
                    out.push(UnitLink {
                        num_index: u.num_index,
                        token_index: first[u.token_index],
                    });
                }
                Some(out)
            }
        };

        let target = parse_equation(&rec.equation, constants, ex.numbers.len())
            .map_err(|e| invalid(e.to_string()))?;
        let answer = parse_rational(&rec.answer).ok_or_else(|| invalid(format!("bad answer `{}`", rec.answer)))?;

        Ok(Problem {
            id: rec.id,
            tokens: ex.tokens,
            pos_tags,
            srl_frames,
            numbers: ex.numbers,
            units,
            equation: rec.equation,
            target,
            answer,
        })
    }

    /// Converts back to a record. Ratios come back already split.
    pub fn to_record(&self) -> ProblemRecord {
        ProblemRecord {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            pos: self.pos_tags.clone(),
            srl: self.srl_frames.clone(),
            units: self.units.clone(),
            equation: self.equation.clone(),
            answer: format_rational(&self.answer),
        }
    }

    /// Encoder input: tokens with every number replaced by `NUM`.
    pub fn masked_tokens(&self) -> Vec<String> {
        let mut out = self.tokens.clone();
        for n in &self.numbers {
            out[n.token_index] = NUM_TOKEN.to_string();
        }
        out
    }

    pub fn number_values(&self) -> Vec<BigRational> {
        self.numbers.iter().map(|n| n.value.clone()).collect()
    }

    pub fn number_literals(&self) -> Vec<String> {
        self.numbers.iter().map(|n| n.literal.clone()).collect()
    }

    /// Evaluates the stored target tree.
    pub fn target_value(&self, constants: &ConstantTable) -> Result<BigRational> {
        self.target.evaluate(&self.number_values(), constants)
    }
}

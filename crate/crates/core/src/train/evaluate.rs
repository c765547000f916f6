use num::{BigRational, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_rational, ExpressionTree, Symbol};
use crate::error::Result;
use crate::model::{Instance, Model};
use crate::numeric::ParamStore;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub problems: usize,
    pub expression_accuracy: f64,
    pub answer_accuracy: f64,
    /// `None` when the data has no comparable number pair.
    pub comparison_accuracy: Option<f64>,
    pub comparison_pairs: usize,
}

/// Decoded output for one problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    /// `None` when no complete tree was produced.
    pub infix: Option<String>,
    pub prefix: Vec<String>,
    pub log_prob: Option<f64>,
    pub answer: Option<String>,
    pub expression_correct: bool,
    pub answer_correct: bool,
    pub comparison_probs: Vec<f64>,
}

/// Exact match of two trees once number slots are replaced by their values,
/// so repeated numbers are interchangeable.
pub fn same_expression(a: &ExpressionTree, b: &ExpressionTree, numbers: &[BigRational]) -> bool {
    a.len() == b.len()
        && a.prefix().iter().zip(b.prefix()).all(|(x, y)| match (x, y) {
            (Symbol::Num(i), Symbol::Num(j)) => numbers.get(*i) == numbers.get(*j),
            _ => x == y,
        })
}

/// Exact rational equality, or relative difference within `tolerance`.
pub fn answers_match(pred: &BigRational, gold: &BigRational, tolerance: Option<f64>) -> bool {
    if pred == gold {
        return true;
    }
    let Some(tol) = tolerance else { return false };
    let diff = (pred - gold).abs();
    let scale = if gold.is_zero() { BigRational::from_integer(1.into()) } else { gold.abs() };
    (diff / scale).to_f64().is_some_and(|r| r <= tol)
}

pub fn predict(model: &Model, store: &ParamStore, inst: &Instance, beam: usize, tolerance: Option<f64>) -> Result<Prediction> {
    let sol = model.solve(store, inst, beam)?;
    let p = &inst.problem;
    let values = p.number_values();
    let best = sol.hypotheses.first();
    let (infix, prefix, log_prob, answer, expression_correct, answer_correct) = match best {
        None => (None, Vec::new(), None, None, false, false),
        Some(h) => {
            let value = h.tree.evaluate(&values, &model.constants).ok();
            let ok_expr = same_expression(&h.tree, &p.target, &values);
            let ok_ans = value.as_ref().is_some_and(|v| answers_match(v, &p.answer, tolerance));
            (
                Some(h.tree.to_infix_with(&model.constants, &p.number_literals())),
                h.tree.prefix_strings(),
                Some(h.log_prob),
                value.as_ref().map(format_rational),
                ok_expr,
                ok_ans,
            )
        }
    };
    Ok(Prediction {
        id: p.id.clone(),
        infix,
        prefix,
        log_prob,
        answer,
        expression_correct,
        answer_correct,
        comparison_probs: sol.comparison_probs,
    })
}

/// Decodes every instance (in parallel, order preserved) and scores it.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    instances: &[Instance],
    beam: usize,
    tolerance: Option<f64>,
) -> Result<(Metrics, Vec<Prediction>)> {
    let preds: Vec<Prediction> = instances
        .par_iter()
        .map(|inst| predict(model, store, inst, beam, tolerance))
        .collect::<Result<_>>()?;
    let n = preds.len();
    let frac = |k: usize, total: usize| if total == 0 { 0.0 } else { k as f64 / total as f64 };
    let mut pairs = 0;
    let mut right = 0;
    for (inst, pred) in instances.iter().zip(&preds) {
        for (p, &(_, _, y)) in pred.comparison_probs.iter().zip(&inst.pairs) {
            pairs += 1;
            right += usize::from((*p >= 0.5) == y);
        }
    }
    let metrics = Metrics {
        problems: n,
        expression_accuracy: frac(preds.iter().filter(|p| p.expression_correct).count(), n),
        answer_accuracy: frac(preds.iter().filter(|p| p.answer_correct).count(), n),
        comparison_accuracy: (pairs > 0).then(|| frac(right, pairs)),
        comparison_pairs: pairs,
    };
    Ok((metrics, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_equation, parse_rational, ConstantTable};

    #[test]
    fn slot_binding_treats_equal_numbers_alike() {
        let c = ConstantTable::default();
        let a = parse_equation("N0+N1", &c, 2).unwrap();
        let b = parse_equation("N1+N0", &c, 2).unwrap();
        let five = parse_rational("5").unwrap();
        assert!(same_expression(&a, &b, &[five.clone(), five.clone()]));
        assert!(!same_expression(&a, &b, &[five, parse_rational("6").unwrap()]));
    }

    #[test]
    fn tolerance() {
        let a = parse_rational("1/3").unwrap();
        let b = parse_rational("0.33333").unwrap();
        assert!(!answers_match(&a, &b, None));
        assert!(answers_match(&a, &b, Some(1e-4)));
        assert!(!answers_match(&a, &parse_rational("0.3").unwrap(), Some(1e-4)));
    }
}

//! Numeral detection and masking.

use num::{BigInt, BigRational, One, Zero};
use serde::{Deserialize, Serialize};

/// Placeholder that replaces every numeral in the encoder input.
pub const NUM_TOKEN: &str = "NUM";

/// Numeric subtype of a quantity token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumberKind {
    Fraction,
    Percentage,
    Other,
}

/// A quantity found in the problem text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NumberToken {
    pub token_index: usize,
    pub literal: String,
    pub value: BigRational,
    pub kind: NumberKind,
}

/// Output of [`extract_numbers`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Extraction {
    /// Tokens with numerals replaced by [`NUM_TOKEN`].
    pub masked: Vec<String>,
    /// Un-masked tokens after ratio splitting.
    pub tokens: Vec<String>,
    pub numbers: Vec<NumberToken>,
    /// For every output token, the index of the input token it came from.
    pub source: Vec<usize>,
}

/// Parses an unsigned integer or decimal literal exactly.
pub fn parse_decimal(s: &str) -> Option<BigRational> {
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return None;
    }
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if frac.contains('.') || (int.is_empty() && frac.is_empty()) {
        return None;
    }
    let digits = format!("{int}{frac}");
    let numer: BigInt = digits.parse().ok()?;
    let denom = num::pow(BigInt::from(10u32), frac.len());
    Some(BigRational::new(numer, denom))
}

/// Parses `p/q`, a decimal, or an integer (optionally signed) as an exact
/// rational. Used for answers and constants.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let value = if let Some(pct) = body.strip_suffix('%') {
        parse_decimal(pct)? / BigRational::from_integer(BigInt::from(100))
    } else if let Some((p, q)) = body.split_once('/') {
        let (p, q) = (parse_decimal(p)?, parse_decimal(q)?);
        if q.is_zero() {
            return None;
        }
        p / q
    } else {
        parse_decimal(body)?
    };
    Some(if neg { -value } else { value })
}

/// Prints a rational as `p/q`, or `p` when integral.
pub fn format_rational(v: &BigRational) -> String {
    if v.denom().is_one() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

fn classify(token: &str) -> Option<Vec<(String, BigRational, NumberKind)>> {
    if let Some(pct) = token.strip_suffix('%') {
        let v = parse_decimal(pct)?;
        return Some(vec![(
            token.to_string(),
            v / BigRational::from_integer(BigInt::from(100)),
            NumberKind::Percentage,
        )]);
    }
    if let Some((p, q)) = token.split_once('/') {
        let (pv, qv) = (parse_decimal(p)?, parse_decimal(q)?);
        if qv.is_zero() {
            return None;
        }
        return Some(vec![(token.to_string(), pv / qv, NumberKind::Fraction)]);
    }
    if let Some((a, b)) = token.split_once(':') {
        let (av, bv) = (parse_decimal(a)?, parse_decimal(b)?);
        return Some(vec![
            (a.to_string(), av, NumberKind::Other),
            (b.to_string(), bv, NumberKind::Other),
        ]);
    }
    let v = parse_decimal(token)?;
    Some(vec![(token.to_string(), v, NumberKind::Other)])
}

/// Locates integers, decimals, fractions `a/b`, percentages `a%` and ratios
/// `a:b`. A ratio becomes two adjacent number tokens; every other token
/// keeps its position.
pub fn extract_numbers<S: AsRef<str>>(tokens: &[S]) -> Extraction {
    let mut out = Extraction {
        masked: Vec::with_capacity(tokens.len()),
        tokens: Vec::with_capacity(tokens.len()),
        numbers: Vec::new(),
        source: Vec::with_capacity(tokens.len()),
    };
    for (i, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        match classify(tok) {
            Some(parts) => {
                for (literal, value, kind) in parts {
                    out.numbers.push(NumberToken {
                        token_index: out.tokens.len(),
                        literal: literal.clone(),
                        value,
                        kind,
                    });
                    out.tokens.push(literal);
                    out.masked.push(NUM_TOKEN.to_string());
                    out.source.push(i);
                }
            }
            None => {
                out.tokens.push(tok.to_string());
                out.masked.push(tok.to_string());
                out.source.push(i);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(p: i64, q: i64) -> BigRational {
        BigRational::new(p.into(), q.into())
    }

    #[test]
    fn integer_with_unit() {
        let e = extract_numbers(&["30", "tons", "of", "goods"]);
        assert_eq!(e.masked, ["NUM", "tons", "of", "goods"]);
        assert_eq!(e.numbers.len(), 1);
        assert_eq!(e.numbers[0].token_index, 0);
        assert_eq!(e.numbers[0].value, r(30, 1));
        assert_eq!(e.numbers[0].kind, NumberKind::Other);
    }

    #[test]
    fn fraction_and_percentage() {
        let e = extract_numbers(&["2/5", "25%", "0.5"]);
        let kinds: Vec<_> = e.numbers.iter().map(|n| n.kind).collect();
        assert_eq!(kinds, [NumberKind::Fraction, NumberKind::Percentage, NumberKind::Other]);
        assert_eq!(e.numbers[0].value, r(2, 5));
        assert_eq!(e.numbers[1].value, r(1, 4));
        assert_eq!(e.numbers[2].value, r(1, 2));
    }

    #[test]
    fn ratio_splits_into_two_numbers() {
        let e = extract_numbers(&["is", "3:7", "."]);
        assert_eq!(e.masked, ["is", "NUM", "NUM", "."]);
        assert_eq!(e.tokens, ["is", "3", "7", "."]);
        assert_eq!(e.source, [0, 1, 1, 2]);
        let vals: Vec<_> = e.numbers.iter().map(|n| (n.token_index, n.value.clone(), n.kind)).collect();
        assert_eq!(vals, [(1, r(3, 1), NumberKind::Other), (2, r(7, 1), NumberKind::Other)]);
    }

    #[test]
    fn non_numbers_pass_through() {
        for t in ["", "a/b", "3/0", "1.2.3", "%", ":", "x:1", "-"] {
            let e = extract_numbers(&[t]);
            assert!(e.numbers.is_empty(), "{t}");
            assert_eq!(e.masked, [t]);
        }
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("3/10"), Some(r(3, 10)));
        assert_eq!(parse_rational("3.14"), Some(r(157, 50)));
        assert_eq!(parse_rational("-4"), Some(r(-4, 1)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(format_rational(&r(6, 4)), "3/2");
        assert_eq!(format_rational(&r(8, 4)), "2");
    }

    proptest! {
        #[test]
        fn token_count_grows_only_by_ratios(words in proptest::collection::vec(
            prop_oneof![
                "[a-z]{1,5}",
                "[0-9]{1,3}",
                "[0-9]{1,2}/[1-9]",
                "[0-9]{1,2}%",
                "[0-9]{1,2}:[0-9]{1,2}",
            ], 1..12)) {
            let e = extract_numbers(&words);
            let ratios = words.iter().filter(|w| w.contains(':')).count();
            prop_assert_eq!(e.masked.len(), words.len() + ratios);
            let mut last = None;
            for n in &e.numbers {
                prop_assert!(last.map_or(true, |l| n.token_index > l));
                prop_assert_eq!(&e.masked[n.token_index], NUM_TOKEN);
                last = Some(n.token_index);
            }
        }
    }
}

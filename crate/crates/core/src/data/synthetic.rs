//! Templated, fully annotated word problems for desk-scale experiments.
//!
//! Every template writes tokens together with PoS tags, SRL frames and unit
//! links, and computes its answer directly from the sampled integers so the
//! stored equation can be checked against it independently.

use num::BigRational;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::expr::ConstantTable;
use super::numbers::format_rational;
use super::problem::{Problem, ProblemRecord, SrlArg, SrlFrame, SrlLabel, UnitLink};

const NAMES: &[&str] = &["Tom", "Mary", "Lily", "Jack", "Anna", "Ben", "Lucy", "Sam", "Emma", "Leo"];
const ITEMS: &[&str] = &["apples", "books", "pencils", "candies", "stickers", "cards", "marbles", "oranges"];
const ANIMALS: &[(&str, &str)] = &[("hens", "ducks"), ("cows", "sheep"), ("cats", "dogs"), ("geese", "rabbits")];
const DAYS: &[&str] = &["Monday", "Tuesday", "Wednesday", "Thursday", "Friday"];
const GROUPS: &[(&str, &str)] = &[("boys", "girls"), ("teachers", "students"), ("red", "blue")];

const TEMPLATES: usize = 10;

struct Builder {
    tokens: Vec<String>,
    pos: Vec<String>,
    frames: Vec<SrlFrame>,
    units: Vec<UnitLink>,
    numbers: usize,
}

impl Builder {
    fn new() -> Self {
        Builder {
            tokens: Vec::new(),
            pos: Vec::new(),
            frames: Vec::new(),
            units: Vec::new(),
            numbers: 0,
        }
    }

    fn at(&self) -> usize {
        self.tokens.len()
    }

    fn w(&mut self, word: &str, tag: &str) -> usize {
        self.tokens.push(word.to_string());
        self.pos.push(tag.to_string());
        self.tokens.len() - 1
    }

    /// Writes a space-separated phrase whose tags are given in parallel.
    fn ws(&mut self, words: &str, tags: &str) -> [usize; 2] {
        let start = self.at();
        for (w, t) in words.split(' ').zip(tags.split(' ')) {
            self.w(w, t);
        }
        [start, self.at()]
    }

    fn num(&mut self, literal: &str) -> usize {
        self.numbers += literal.contains(':') as usize + 1;
        self.w(literal, "CD")
    }

    /// A unit or rate word attached to the most recent number.
    fn unit(&mut self, word: &str, tag: &str) -> usize {
        let t = self.w(word, tag);
        self.units.push(UnitLink {
            num_index: self.numbers - 1,
            token_index: t,
        });
        t
    }

    fn frame(&mut self, root: usize, args: &[(SrlLabel, [usize; 2])]) {
        self.frames.push(SrlFrame {
            root,
            args: args.iter().map(|&(label, span)| SrlArg { label, span }).collect(),
        });
    }

    fn finish(self, id: String, equation: &str, answer: BigRational) -> ProblemRecord {
        ProblemRecord {
            id,
            tokens: self.tokens,
            pos: self.pos,
            srl: self.frames,
            units: Some(self.units),
            equation: equation.to_string(),
            answer: format_rational(&answer),
        }
    }
}

fn int(v: i64) -> BigRational {
    BigRational::from_integer(v.into())
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).expect("non-empty word list")
}

fn two_names(rng: &mut ChaCha8Rng) -> (&'static str, &'static str) {
    let a = *pick(rng, NAMES);
    loop {
        let b = *pick(rng, NAMES);
        if b != a {
            return (a, b);
        }
    }
}

use SrlLabel::{Arg0, Arg1, ArgM};

/// "A has x items. A gives y items to B. How many items does A have now?"
fn transfer(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let (a, other) = two_names(rng);
    let item = *pick(rng, ITEMS);
    let x = rng.gen_range(20..=99);
    let y = rng.gen_range(2..x);
    let s0 = b.ws(a, "NNP");
    let r0 = b.w("has", "VBZ");
    let s1 = b.at();
    b.num(&x.to_string());
    b.w(item, "NNS");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r0, &[(Arg0, s0), (Arg1, s1)]);
    let s0 = b.ws(a, "NNP");
    let r1 = b.w("gives", "VBZ");
    let s1 = b.at();
    b.num(&y.to_string());
    b.w(item, "NNS");
    let s1 = [s1, b.at()];
    let sm = b.ws(&format!("to {other}"), "TO NNP");
    b.w(".", ".");
    b.frame(r1, &[(Arg0, s0), (Arg1, s1), (ArgM, sm)]);
    let sq = b.ws(&format!("How many {item}"), "WRB JJ NNS");
    b.w("does", "VBZ");
    let s0 = b.ws(a, "NNP");
    let r2 = b.w("have", "VB");
    let sm = b.ws("now", "RB");
    b.w("?", ".");
    b.frame(r2, &[(Arg0, s0), (Arg1, sq), (ArgM, sm)]);
    ("N0-N1".into(), int(x - y))
}

/// Distance walked on two days, summed.
fn walk_total(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let a = *pick(rng, NAMES);
    let d: Vec<_> = DAYS.choose_multiple(rng, 2).copied().collect();
    let x = rng.gen_range(2..=60);
    let y = rng.gen_range(2..=60);
    let s0 = b.ws(a, "NNP");
    let r = b.w("walks", "VBZ");
    let s1 = b.at();
    b.num(&x.to_string());
    b.unit("km", "NN");
    let s1 = [s1, b.at()];
    let m1 = b.ws(&format!("on {}", d[0]), "IN NNP");
    b.w("and", "CC");
    let s2 = b.at();
    b.num(&y.to_string());
    b.unit("km", "NN");
    let s2 = [s2, b.at()];
    let m2 = b.ws(&format!("on {}", d[1]), "IN NNP");
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, s1), (ArgM, m1), (Arg1, s2), (ArgM, m2)]);
    let sq = b.ws("How many km", "WRB JJ NN");
    b.w("does", "VBZ");
    let s0 = b.ws(a, "NNP");
    let r = b.w("walk", "VB");
    let sm = b.ws("in total", "IN NN");
    b.w("?", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, sq), (ArgM, sm)]);
    ("N0+N1".into(), int(x + y))
}

/// Difference between two weights; the operand order depends on which
/// number is larger.
fn heavier(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let x = rng.gen_range(5..=90);
    let mut y = rng.gen_range(5..=90);
    while y == x {
        y = rng.gen_range(5..=90);
    }
    let s0 = b.ws("the red box", "DT JJ NN");
    let r = b.w("weighs", "VBZ");
    let s1 = b.at();
    b.num(&x.to_string());
    b.unit("kg", "NN");
    let s1 = [s1, b.at()];
    b.frame(r, &[(Arg0, s0), (Arg1, s1)]);
    b.w("and", "CC");
    let s0 = b.ws("the blue box", "DT JJ NN");
    let r = b.w("weighs", "VBZ");
    let s1 = b.at();
    b.num(&y.to_string());
    b.unit("kg", "NN");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, s1)]);
    let sq = b.ws("How many kg heavier", "WRB JJ NN JJR");
    let r = b.w("is", "VBZ");
    let s0 = b.ws("the heavier box", "DT JJR NN");
    b.w("?", ".");
    b.frame(r, &[(Arg1, sq), (Arg0, s0)]);
    if x > y {
        ("N0-N1".into(), int(x - y))
    } else {
        ("N1-N0".into(), int(y - x))
    }
}

/// "There are x A. The B are k times the A."
fn times(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let (base, other) = *pick(rng, ANIMALS);
    let x = rng.gen_range(3..=40);
    let k = rng.gen_range(2..=9);
    b.w("There", "EX");
    let r = b.w("are", "VBP");
    let s1 = b.at();
    b.num(&x.to_string());
    b.w(base, "NNS");
    let s1 = [s1, b.at()];
    let sm = b.ws("on the farm", "IN DT NN");
    b.w(".", ".");
    b.frame(r, &[(Arg1, s1), (ArgM, sm)]);
    let s0 = b.ws(&format!("The {other}"), "DT NNS");
    let r = b.w("are", "VBP");
    let s1 = b.at();
    b.num(&k.to_string());
    b.unit("times", "NNS");
    b.ws(&format!("the {base}"), "DT NNS");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, s1)]);
    let sq = b.ws(&format!("How many {other}"), "WRB JJ NNS");
    let r = b.w("are", "VBP");
    b.ws("there ?", "RB .");
    b.frame(r, &[(Arg1, sq)]);
    ("N0*N1".into(), int(x * k))
}

/// Share of a stock sold, given either as `p%` or as `p percent`.
fn percent_sold(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let p = *pick(rng, &[10i64, 20, 25, 40, 50, 60, 75, 80]);
    let x = 20 * rng.gen_range(1..=15);
    let as_word = rng.gen_bool(0.5);
    let s0 = b.ws("The shop", "DT NN");
    let r = b.w("had", "VBD");
    let s1 = b.at();
    b.num(&x.to_string());
    b.ws("bottles of milk", "NNS IN NN");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, s1)]);
    let s0 = b.ws("It", "PRP");
    let r = b.w("sold", "VBD");
    let s1 = b.at();
    if as_word {
        b.num(&p.to_string());
        b.unit("percent", "NN");
    } else {
        b.num(&format!("{p}%"));
    }
    b.ws("of the milk", "IN DT NN");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, s1)]);
    let sq = b.ws("How many bottles", "WRB JJ NNS");
    b.w("did", "VBD");
    let s0 = b.ws("it", "PRP");
    let r = b.w("sell", "VB");
    b.w("?", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, sq)]);
    let eq = if as_word { "N0*N1/100" } else { "N0*N1" };
    (eq.into(), int(x * p / 100))
}

/// Fraction of a flock with a property; asks for the complement.
fn fraction_rest(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let (n, d) = *pick(rng, &[(1i64, 2i64), (1, 3), (2, 3), (1, 4), (3, 4), (1, 5), (2, 5), (3, 5), (4, 5)]);
    let x = d * rng.gen_range(2..=20);
    let s0 = b.ws("A farm", "DT NN");
    let r = b.w("has", "VBZ");
    let s1 = b.at();
    b.num(&x.to_string());
    b.w("sheep", "NNS");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, s1)]);
    let s1 = b.at();
    b.num(&format!("{n}/{d}"));
    b.ws("of the sheep", "IN DT NNS");
    let s1 = [s1, b.at()];
    let r = b.w("are", "VBP");
    let s2 = b.ws("black", "JJ");
    b.w(".", ".");
    b.frame(r, &[(Arg1, s1), (ArgM, s2)]);
    let sq = b.ws("How many sheep", "WRB JJ NNS");
    let r = b.w("are", "VBP");
    b.ws("not black ?", "RB JJ .");
    b.frame(r, &[(Arg1, sq)]);
    ("N0*(1-N1)".into(), int(x - x * n / d))
}

/// Group sizes from a ratio and the size of the second group.
fn ratio_groups(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let (g1, g2) = *pick(rng, GROUPS);
    let a = rng.gen_range(1..=9);
    let c = rng.gen_range(2..=9);
    let y = c * rng.gen_range(1..=12);
    let s0 = b.ws(&format!("The ratio of {g1} to {g2}"), "DT NN IN NNS TO NNS");
    let r = b.w("is", "VBZ");
    let s1 = b.at();
    b.num(&format!("{a}:{c}"));
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, s1)]);
    b.w("There", "EX");
    let r = b.w("are", "VBP");
    let s1 = b.at();
    b.num(&y.to_string());
    b.w(g2, "NNS");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg1, s1)]);
    let sq = b.ws(&format!("How many {g1}"), "WRB JJ NNS");
    let r = b.w("are", "VBP");
    b.ws("there ?", "RB .");
    b.frame(r, &[(Arg1, sq)]);
    ("N2*N0/N1".into(), int(y * a / c))
}

/// Unit price times quantity.
fn price(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let a = *pick(rng, NAMES);
    let x = rng.gen_range(2..=20);
    let y = rng.gen_range(2..=12);
    let s0 = b.ws("A pen", "DT NN");
    let r = b.w("costs", "VBZ");
    let s1 = b.at();
    b.num(&x.to_string());
    b.unit("yuan", "NN");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, s1)]);
    let s0 = b.ws(a, "NNP");
    let r = b.w("buys", "VBZ");
    let s1 = b.at();
    b.num(&y.to_string());
    b.w("pens", "NNS");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, s1)]);
    let sq = b.ws("How many yuan", "WRB JJ NN");
    b.w("does", "VBZ");
    let s0 = b.ws(a, "NNP");
    let r = b.w("pay", "VB");
    b.w("?", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, sq)]);
    ("N0*N1".into(), int(x * y))
}

/// Equal sharing.
fn share(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let item = *pick(rng, ITEMS);
    let y = rng.gen_range(2..=9);
    let per = rng.gen_range(2..=12);
    let x = y * per;
    let s1 = b.at();
    b.num(&x.to_string());
    b.w(item, "NNS");
    let s1 = [s1, b.at()];
    b.w("are", "VBP");
    let r = b.w("shared", "VBN");
    let sm = b.ws("equally", "RB");
    let s2 = b.at();
    b.w("among", "IN");
    b.num(&y.to_string());
    b.w("children", "NNS");
    let s2 = [s2, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg1, s1), (ArgM, sm), (Arg0, s2)]);
    let sq = b.ws(&format!("How many {item}"), "WRB JJ NNS");
    b.w("does", "VBZ");
    let s0 = b.ws("each child", "DT NN");
    let r = b.w("get", "VB");
    b.w("?", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, sq)]);
    ("N0/N1".into(), int(per))
}

/// Speed times duration.
fn travel(rng: &mut ChaCha8Rng, b: &mut Builder) -> (String, BigRational) {
    let s = 5 * rng.gen_range(2..=20);
    let h = rng.gen_range(2..=8);
    let s0 = b.ws("A car", "DT NN");
    let r = b.w("travels", "VBZ");
    let s1 = b.at();
    b.num(&s.to_string());
    b.unit("km", "NN");
    b.ws("per hour", "IN NN");
    let s1 = [s1, b.at()];
    b.w(".", ".");
    b.frame(r, &[(Arg0, s0), (ArgM, s1)]);
    let sq = b.ws("How many km", "WRB JJ NN");
    b.w("does", "VBZ");
    let s0 = b.ws("it", "PRP");
    let r = b.w("travel", "VB");
    let sm = b.at();
    b.w("in", "IN");
    b.num(&h.to_string());
    b.unit("hours", "NNS");
    let sm = [sm, b.at()];
    b.w("?", ".");
    b.frame(r, &[(Arg0, s0), (Arg1, sq), (ArgM, sm)]);
    ("N0*N1".into(), int(s * h))
}

/// Deterministic synthetic corpus. Templates are used round-robin so any
/// `count >= 10` covers all of them.
pub fn generate_synthetic(seed: u64, count: usize) -> Vec<Problem> {
    let constants = ConstantTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut b = Builder::new();
            let (eq, answer) = match i % TEMPLATES {
                0 => transfer(&mut rng, &mut b),
                1 => walk_total(&mut rng, &mut b),
                2 => heavier(&mut rng, &mut b),
                3 => times(&mut rng, &mut b),
                4 => percent_sold(&mut rng, &mut b),
                5 => fraction_rest(&mut rng, &mut b),
                6 => ratio_groups(&mut rng, &mut b),
                7 => price(&mut rng, &mut b),
                8 => share(&mut rng, &mut b),
                _ => travel(&mut rng, &mut b),
            };
            let rec = b.finish(format!("syn-{seed}-{i}"), &eq, answer);
            Problem::from_record(rec, &constants).expect("synthetic templates produce valid problems")
        })
        .collect()
}

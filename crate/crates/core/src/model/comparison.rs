use rand::Rng;

use crate::error::Result;
use crate::numeric::{ParamId, ParamStore, Tape, Var};

use super::encoder::Encoded;
use super::instance::Instance;

/// Biaffine scorer for "number i is at least number j".
#[derive(Clone, Debug)]
pub struct ComparisonHead {
    /// `[2d, 2d]` bilinear form over fused vectors.
    pub u: ParamId,
    /// `[2d, 1]` over `[h_b(i) ‖ h_b(j)]`.
    pub w: ParamId,
    pub b: ParamId,
}

impl ComparisonHead {
    pub fn register(store: &mut ParamStore, hidden: usize, rng: &mut impl Rng) -> Self {
        ComparisonHead {
            u: store.init_matrix("cmp.u", 2 * hidden, 2 * hidden, rng),
            w: store.init_matrix("cmp.w", 2 * hidden, 1, rng),
            b: store.init_const("cmp.b", 1, 1, 0.0),
        }
    }

    /// Pre-sigmoid scores `[pairs, 1]` for `inst.pairs`, `None` without pairs.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, enc: &Encoded, inst: &Instance) -> Result<Option<Var>> {
        if inst.pairs.is_empty() {
            return Ok(None);
        }
        let is: Vec<usize> = inst.pairs.iter().map(|p| inst.num_positions[p.0]).collect();
        let js: Vec<usize> = inst.pairs.iter().map(|p| inst.num_positions[p.1]).collect();
        let fi = tape.gather_rows(enc.h_f, &is)?;
        let fj = tape.gather_rows(enc.h_f, &js)?;
        let u = tape.param(store, self.u);
        let fu = tape.matmul(fi, u)?;
        let prod = tape.mul(fu, fj)?;
        let bil = tape.row_sum(prod);
        let bi = tape.gather_rows(enc.h_b, &is)?;
        let bj = tape.gather_rows(enc.h_b, &js)?;
        let cat = tape.concat_cols(&[bi, bj])?;
        let w = tape.param(store, self.w);
        let lin = tape.matmul(cat, w)?;
        let x = tape.add(bil, lin)?;
        let b = tape.param(store, self.b);
        Ok(Some(tape.add_row(x, b)?))
    }

    pub fn probs(&self, tape: &mut Tape, store: &ParamStore, enc: &Encoded, inst: &Instance) -> Result<Vec<f64>> {
        Ok(match self.logits(tape, store, enc, inst)? {
            Some(x) => {
                let p = tape.sigmoid(x);
                tape.value(p).data().to_vec()
            }
            None => Vec::new(),
        })
    }
}

/// Mean binary cross-entropy `softplus(x) - y·x` of logits against labels.
pub fn comparison_loss(tape: &mut Tape, logits: Var, labels: &[bool]) -> Result<Var> {
    let y = crate::numeric::Tensor::matrix(labels.len(), 1, labels.iter().map(|&l| f64::from(u8::from(l))).collect());
    let y = tape.constant(y)?;
    let sp = tape.softplus(logits);
    let yx = tape.mul(y, logits)?;
    let per = tape.sub(sp, yx)?;
    let total = tape.sum(per);
    Ok(tape.scale(total, 1.0 / labels.len() as f64))
}

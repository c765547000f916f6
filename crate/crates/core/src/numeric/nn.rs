//! Small layers composed from tape primitives.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn register(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = store.init_matrix(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| store.init_const(format!("{name}.b"), 1, fan_out, 0.0));
        Linear { w, b }
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        let w = store.id(&format!("{name}.w"))?;
        let b = store.id(&format!("{name}.b")).ok();
        Ok(Linear { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Two-layer position-wise feed-forward block with a LeakyReLU hidden layer.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn register(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            inner: Linear::register(store, &format!("{name}.inner"), dim, hidden, true, rng),
            outer: Linear::register(store, &format!("{name}.outer"), hidden, dim, true, rng),
        }
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::lookup(store, &format!("{name}.inner"))?,
            outer: Linear::lookup(store, &format!("{name}.outer"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, store, x)?;
        let h = tape.leaky_relu(h);
        self.outer.forward(tape, store, h)
    }
}

/// Weights of one GRU direction. Gate blocks are ordered reset, update,
/// candidate (see [`Tape::gru_cell`]).
#[derive(Clone, Copy, Debug)]
pub struct Gru {
    pub w_ih: ParamId,
    pub b_ih: ParamId,
    pub w_hh: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl Gru {
    pub fn register(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Gru {
            w_ih: store.init_matrix(format!("{name}.w_ih"), input, 3 * hidden, rng),
            b_ih: store.init_const(format!("{name}.b_ih"), 1, 3 * hidden, 0.0),
            w_hh: store.init_matrix(format!("{name}.w_hh"), hidden, 3 * hidden, rng),
            b_hh: store.init_const(format!("{name}.b_hh"), 1, 3 * hidden, 0.0),
            hidden,
        }
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        let w_hh = store.id(&format!("{name}.w_hh"))?;
        Ok(Gru {
            w_ih: store.id(&format!("{name}.w_ih"))?,
            b_ih: store.id(&format!("{name}.b_ih"))?,
            w_hh,
            b_hh: store.id(&format!("{name}.b_hh"))?,
            hidden: store.get(w_hh).rows(),
        })
    }

    /// One step on a `[1, input]` row.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let w_ih = tape.param(store, self.w_ih);
        let b_ih = tape.param(store, self.b_ih);
        let xp = tape.matmul(x, w_ih)?;
        let xp = tape.add_row(xp, b_ih)?;
        let w_hh = tape.param(store, self.w_hh);
        let b_hh = tape.param(store, self.b_hh);
        tape.gru_cell(xp, h, w_hh, b_hh)
    }

    /// Runs over the rows of `xs[n, input]` from a zero state, forwards or
    /// backwards. Returns per-position states stacked as `[n, hidden]`
    /// (in input order) and the state after the last processed step.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, xs: Var, reverse: bool) -> Result<(Var, Var)> {
        let n = tape.shape(xs).0;
        let w_ih = tape.param(store, self.w_ih);
        let b_ih = tape.param(store, self.b_ih);
        let w_hh = tape.param(store, self.w_hh);
        let b_hh = tape.param(store, self.b_hh);
        // Input projections for all positions in one product.
        let proj = tape.matmul(xs, w_ih)?;
        let proj = tape.add_row(proj, b_ih)?;
        let mut h = tape.constant(crate::numeric::Tensor::zeros(&[1, self.hidden]))?;
        let mut states = vec![h; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for i in order {
            let xp = tape.row(proj, i)?;
            h = tape.gru_cell(xp, h, w_hh, b_hh)?;
            states[i] = h;
        }
        let stacked = tape.concat_rows(&states)?;
        Ok((stacked, h))
    }
}

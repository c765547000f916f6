//! Goal-driven tree decoder with a copy mechanism for problem numbers.
//!
//! Decoding walks the tree in prefix order. The current goal vector scores
//! every candidate token; an operator spawns a left-child goal, a leaf
//! closes subtrees bottom-up through the merge cell until an operator still
//! waits for its right child, whose goal is then generated from the parent
//! context and the finished left subtree.

use std::cmp::Ordering;

use rand::Rng;

use crate::config::ModelConfig;
use crate::data::{ExpressionTree, Operator, Symbol};
use crate::error::{Error, Result};
use crate::numeric::nn::Linear;
use crate::numeric::{ParamId, ParamStore, Tape, Var};

use super::encoder::Encoded;
use super::instance::Instance;

#[derive(Clone, Debug)]
pub struct Decoder {
    max_len: usize,
    op_embed: ParamId,
    const_embed: ParamId,
    root: Linear,
    attn_h: ParamId,
    attn_g: Linear,
    attn_v: ParamId,
    score_g: Linear,
    score_c: ParamId,
    score_e: ParamId,
    score_v: ParamId,
    left: Linear,
    left_gate: Linear,
    right: Linear,
    right_gate: Linear,
    merge: Linear,
    merge_gate: Linear,
}

/// Per-problem values shared by every decoding step.
#[derive(Clone, Debug)]
pub struct DecodeContext {
    h_f: Var,
    hf_proj: Var,
    /// `[candidates, D]` embeddings: operator and constant table rows, then
    /// copies of `h_f` at each number's token.
    cand_emb: Var,
    cand_proj: Var,
    root: Var,
    candidates: Vec<Symbol>,
}

impl DecodeContext {
    pub fn candidates(&self) -> &[Symbol] {
        &self.candidates
    }
}

#[derive(Clone, Copy, Debug)]
struct OpFrame {
    op: Var,
    /// `[goal ‖ context ‖ op]` at the time the operator was emitted.
    ctx: Var,
    left: Option<Var>,
}

#[derive(Clone, Debug)]
struct Partial {
    goal: Option<Var>,
    frames: Vec<OpFrame>,
    prefix: Vec<Symbol>,
    log_prob: f64,
    open: usize,
    merges: usize,
}

impl Partial {
    fn start(root: Var) -> Self {
        Partial {
            goal: Some(root),
            frames: Vec::new(),
            prefix: Vec::new(),
            log_prob: 0.0,
            open: 1,
            merges: 0,
        }
    }

    fn done(&self) -> bool {
        self.goal.is_none()
    }
}

/// A finished decoding result.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tree: ExpressionTree,
    pub log_prob: f64,
    /// Decoding step at which the tree was completed.
    pub completed_at: usize,
}

/// Teacher-forced pass over a gold tree.
#[derive(Clone, Debug)]
pub struct TeacherForced {
    /// `-Σ log Pr(y_t | y_<t)` as a `[1, 1]` value.
    pub nll: Var,
    pub step_log_probs: Vec<f64>,
    pub merges: usize,
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then(a.completed_at.cmp(&b.completed_at))
        .then_with(|| a.tree.prefix_strings().cmp(&b.tree.prefix_strings()))
}

impl Decoder {
    pub fn register(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        constant_count: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.hidden;
        let dm = 2 * d;
        Decoder {
            max_len: cfg.max_len,
            op_embed: store.init_table("dec.op_embed", Operator::ALL.len(), dm, rng),
            const_embed: store.init_table("dec.const_embed", constant_count.max(1), dm, rng),
            root: Linear::register(store, "dec.root", 2 * d, dm, true, rng),
            attn_h: store.init_matrix("dec.attn.h", dm, dm, rng),
            attn_g: Linear::register(store, "dec.attn.g", dm, dm, true, rng),
            attn_v: store.init_matrix("dec.attn.v", dm, 1, rng),
            score_g: Linear::register(store, "dec.score.g", dm, dm, true, rng),
            score_c: store.init_matrix("dec.score.c", dm, dm, rng),
            score_e: store.init_matrix("dec.score.e", dm, dm, rng),
            score_v: store.init_matrix("dec.score.v", dm, 1, rng),
            left: Linear::register(store, "dec.left", 3 * dm, dm, true, rng),
            left_gate: Linear::register(store, "dec.left_gate", 3 * dm, dm, true, rng),
            right: Linear::register(store, "dec.right", 4 * dm, dm, true, rng),
            right_gate: Linear::register(store, "dec.right_gate", 4 * dm, dm, true, rng),
            merge: Linear::register(store, "dec.merge", 3 * dm, dm, true, rng),
            merge_gate: Linear::register(store, "dec.merge_gate", 3 * dm, dm, true, rng),
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn set_max_len(&mut self, max_len: usize) {
        self.max_len = max_len;
    }

    pub fn prepare(&self, tape: &mut Tape, store: &ParamStore, enc: &Encoded, inst: &Instance) -> Result<DecodeContext> {
        let ops: Vec<usize> = inst
            .candidates
            .iter()
            .filter_map(|s| match s {
                Symbol::Op(o) => Some(*o as usize),
                _ => None,
            })
            .collect();
        let consts: Vec<usize> = inst
            .candidates
            .iter()
            .filter_map(|s| match s {
                Symbol::Const(c) => Some(*c),
                _ => None,
            })
            .collect();
        let op_table = tape.param(store, self.op_embed);
        let mut parts = vec![tape.gather_rows(op_table, &ops)?];
        if !consts.is_empty() {
            let const_table = tape.param(store, self.const_embed);
            if let Some(&c) = consts.iter().find(|&&c| c >= tape.shape(const_table).0) {
                return Err(Error::Decode(format!("constant index {c} beyond table")));
            }
            parts.push(tape.gather_rows(const_table, &consts)?);
        }
        if !inst.num_positions.is_empty() {
            parts.push(tape.gather_rows(enc.h_f, &inst.num_positions)?);
        }
        let cand_emb = tape.concat_rows(&parts)?;
        let se = tape.param(store, self.score_e);
        let cand_proj = tape.matmul(cand_emb, se)?;
        let ah = tape.param(store, self.attn_h);
        let hf_proj = tape.matmul(enc.h_f, ah)?;
        let fin = tape.concat_cols(&[enc.seq_final.0, enc.seq_final.1])?;
        let root = self.root.forward(tape, store, fin)?;
        let root = tape.tanh(root);
        Ok(DecodeContext {
            h_f: enc.h_f,
            hf_proj,
            cand_emb,
            cand_proj,
            root,
            candidates: inst.candidates.clone(),
        })
    }

    /// Embedding of a candidate token: table row for operators and
    /// constants, the copied encoder state for number slots.
    pub fn embed_token(&self, tape: &mut Tape, ctx: &DecodeContext, y: Symbol) -> Result<Var> {
        let idx = ctx
            .candidates
            .iter()
            .position(|&c| c == y)
            .ok_or_else(|| Error::Decode(format!("token {y:?} is not available in this problem")))?;
        tape.row(ctx.cand_emb, idx)
    }

    /// Log-probabilities over candidates `[1, C]` and the attention context.
    fn step(&self, tape: &mut Tape, store: &ParamStore, ctx: &DecodeContext, goal: Var) -> Result<(Var, Var)> {
        let u = self.attn_g.forward(tape, store, goal)?;
        let e = tape.add_row(ctx.hf_proj, u)?;
        let e = tape.tanh(e);
        let av = tape.param(store, self.attn_v);
        let e = tape.matmul(e, av)?;
        let e = tape.transpose(e);
        let alpha = tape.softmax(e);
        let c = tape.matmul(alpha, ctx.h_f)?;

        let q = self.score_g.forward(tape, store, goal)?;
        let sc = tape.param(store, self.score_c);
        let qc = tape.matmul(c, sc)?;
        let q = tape.add(q, qc)?;
        let s = tape.add_row(ctx.cand_proj, q)?;
        let s = tape.tanh(s);
        let sv = tape.param(store, self.score_v);
        let s = tape.matmul(s, sv)?;
        let s = tape.transpose(s);
        Ok((tape.log_softmax(s), c))
    }

    fn gated(&self, tape: &mut Tape, store: &ParamStore, lin: &Linear, gate: &Linear, x: Var) -> Result<Var> {
        let a = lin.forward(tape, store, x)?;
        let a = tape.tanh(a);
        let g = gate.forward(tape, store, x)?;
        let g = tape.sigmoid(g);
        tape.mul(a, g)
    }

    /// Embedding of a completed subtree `op(left, right)`.
    pub fn subtree_merge(&self, tape: &mut Tape, store: &ParamStore, op: Var, left: Var, right: Var) -> Result<Var> {
        let x = tape.concat_cols(&[op, left, right])?;
        self.gated(tape, store, &self.merge, &self.merge_gate, x)
    }

    fn advance(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &DecodeContext,
        st: &mut Partial,
        y: Symbol,
        context: Var,
    ) -> Result<()> {
        let goal = st.goal.take().expect("advance on a finished state");
        let e = self.embed_token(tape, ctx, y)?;
        st.prefix.push(y);
        if let Symbol::Op(_) = y {
            st.open += 1;
            let x = tape.concat_cols(&[goal, context, e])?;
            let left = self.gated(tape, store, &self.left, &self.left_gate, x)?;
            st.frames.push(OpFrame {
                op: e,
                ctx: x,
                left: None,
            });
            st.goal = Some(left);
            return Ok(());
        }
        st.open -= 1;
        let mut t = e;
        while let Some(top) = st.frames.last_mut() {
            match top.left {
                None => {
                    top.left = Some(t);
                    let x = tape.concat_cols(&[top.ctx, t])?;
                    st.goal = Some(self.gated(tape, store, &self.right, &self.right_gate, x)?);
                    return Ok(());
                }
                Some(l) => {
                    let f = st.frames.pop().expect("non-empty");
                    t = self.subtree_merge(tape, store, f.op, l, t)?;
                    st.merges += 1;
                }
            }
        }
        Ok(())
    }

    pub fn teacher_forced_nll(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &DecodeContext,
        gold: &ExpressionTree,
    ) -> Result<TeacherForced> {
        let mut st = Partial::start(ctx.root);
        let mut picks = Vec::with_capacity(gold.len());
        let mut step_log_probs = Vec::with_capacity(gold.len());
        for &y in gold.prefix() {
            let idx = ctx
                .candidates
                .iter()
                .position(|&c| c == y)
                .ok_or_else(|| Error::Decode(format!("gold token {y:?} is not available in this problem")))?;
            let goal = st.goal.expect("gold prefix is a complete tree");
            let (lp, c) = self.step(tape, store, ctx, goal)?;
            let p = tape.pick(lp, 0, idx)?;
            step_log_probs.push(tape.scalar(p));
            picks.push(p);
            self.advance(tape, store, ctx, &mut st, y, c)?;
        }
        let all = tape.concat_cols(&picks)?;
        let total = tape.sum(all);
        Ok(TeacherForced {
            nll: tape.scale(total, -1.0),
            step_log_probs,
            merges: st.merges,
        })
    }

    /// Whether `y` can be emitted while still completing within `max_len`.
    fn allowed(&self, st: &Partial, y: Symbol) -> bool {
        let remaining = self.max_len.saturating_sub(st.prefix.len() + 1);
        match y {
            Symbol::Op(_) => st.open + 1 <= remaining,
            _ => st.open <= remaining + 1,
        }
    }

    fn finish(st: Partial, completed_at: usize) -> Result<Hypothesis> {
        Ok(Hypothesis {
            tree: ExpressionTree::from_prefix(st.prefix)?,
            log_prob: st.log_prob,
            completed_at,
        })
    }

    /// Argmax decoding; ties go to the earlier candidate.
    pub fn greedy(&self, tape: &mut Tape, store: &ParamStore, ctx: &DecodeContext) -> Result<Option<Hypothesis>> {
        let mut st = Partial::start(ctx.root);
        for step in 0..self.max_len {
            let goal = st.goal.expect("live state has a goal");
            let (lp, c) = self.step(tape, store, ctx, goal)?;
            let lps = tape.value(lp).data().to_vec();
            let best = ctx
                .candidates
                .iter()
                .enumerate()
                .filter(|(_, &y)| self.allowed(&st, y))
                .fold(None::<(usize, f64)>, |acc, (i, _)| match acc {
                    Some((_, v)) if v >= lps[i] => acc,
                    _ => Some((i, lps[i])),
                });
            let Some((i, v)) = best else { break };
            st.log_prob += v;
            self.advance(tape, store, ctx, &mut st, ctx.candidates[i], c)?;
            if st.done() {
                return Self::finish(st, step).map(Some);
            }
        }
        log::warn!("no complete tree within {} tokens", self.max_len);
        Ok(None)
    }

    /// Beam search returning up to `beam` complete trees, best first.
    /// `beam == 1` is greedy decoding; wider beams also include the greedy
    /// tree so the best result never scores below it.
    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &DecodeContext,
        beam: usize,
    ) -> Result<Vec<Hypothesis>> {
        if beam == 0 {
            return Err(Error::Decode("beam must be at least 1".into()));
        }
        let greedy = self.greedy(tape, store, ctx)?;
        if beam == 1 {
            return Ok(greedy.into_iter().collect());
        }
        let mut finished = self.beam_search(tape, store, ctx, beam)?;
        finished.extend(greedy);
        finished.sort_by(rank);
        finished.dedup_by(|a, b| a.tree == b.tree);
        finished.truncate(beam);
        Ok(finished)
    }

    /// Plain beam search of the given width, without the greedy seed.
    pub fn beam_search(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &DecodeContext,
        beam: usize,
    ) -> Result<Vec<Hypothesis>> {
        if beam == 0 {
            return Err(Error::Decode("beam must be at least 1".into()));
        }
        let mut finished: Vec<Hypothesis> = Vec::new();
        let mut live = vec![Partial::start(ctx.root)];
        for step in 0..self.max_len {
            if live.is_empty() {
                break;
            }
            let mut expansions: Vec<(f64, usize, usize, Var)> = Vec::new();
            for (h, st) in live.iter().enumerate() {
                let goal = st.goal.expect("live state has a goal");
                let (lp, c) = self.step(tape, store, ctx, goal)?;
                let lps = tape.value(lp).data();
                for (i, &y) in ctx.candidates.iter().enumerate() {
                    if self.allowed(st, y) {
                        expansions.push((st.log_prob + lps[i], h, i, c));
                    }
                }
            }
            expansions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(beam);
            for &(score, h, i, c) in expansions.iter().take(beam) {
                let mut st = live[h].clone();
                st.log_prob = score;
                self.advance(tape, store, ctx, &mut st, ctx.candidates[i], c)?;
                if st.done() {
                    finished.push(Self::finish(st, step)?);
                } else {
                    next.push(st);
                }
            }
            live = next;
            // Scores only decrease, so stop once no live state can enter the top `beam`.
            if finished.len() >= beam {
                finished.sort_by(rank);
                let cutoff = finished[beam - 1].log_prob;
                if live.iter().all(|s| s.log_prob < cutoff) {
                    break;
                }
            }
        }
        finished.sort_by(rank);
        finished.dedup_by(|a, b| a.tree == b.tree);
        finished.truncate(beam);
        if finished.is_empty() {
            log::warn!("no complete tree within {} tokens", self.max_len);
        }
        Ok(finished)
    }
}

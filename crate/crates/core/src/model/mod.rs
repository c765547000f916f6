//! Encoder, tree decoder and comparison head assembled into one model.

pub mod comparison;
pub mod decoder;
pub mod encoder;
pub mod instance;
pub mod vocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use comparison::{comparison_loss, ComparisonHead};
pub use decoder::{DecodeContext, Decoder, Hypothesis, TeacherForced};
pub use encoder::{Encoded, Encoder};
pub use instance::Instance;
pub use vocab::Vocab;

use crate::config::ModelConfig;
use crate::data::{ConstantTable, Problem};
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Var};

/// `L_q + β·L_com`, rejecting non-finite inputs.
pub fn total_loss(l_q: f64, l_com: f64, beta: f64) -> Result<f64> {
    if !l_q.is_finite() || !l_com.is_finite() || !beta.is_finite() {
        return Err(Error::NonFiniteLoss(format!("L_q={l_q}, L_com={l_com}, beta={beta}")));
    }
    Ok(l_q + beta * l_com)
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub constants: ConstantTable,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub head: ComparisonHead,
}

/// Loss of one problem recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub nll: f64,
    /// `None` when the problem has no comparable pair or β is zero.
    pub com: Option<f64>,
}

/// Decoder and comparison-head outputs for one problem.
#[derive(Clone, Debug)]
pub struct Solution {
    pub hypotheses: Vec<Hypothesis>,
    pub comparison_probs: Vec<f64>,
}

impl Model {
    /// Registers all parameters deterministically from `seed`.
    pub fn new(config: &ModelConfig, vocab: Vocab, constants: ConstantTable, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::register(&mut store, config, vocab.len(), &mut rng)?;
        let decoder = Decoder::register(&mut store, config, constants.len(), &mut rng);
        let head = ComparisonHead::register(&mut store, config.hidden, &mut rng);
        let model = Model {
            config: config.clone(),
            vocab,
            constants,
            encoder,
            decoder,
            head,
        };
        Ok((model, store))
    }

    pub fn instance(&self, problem: &Problem) -> Result<Instance> {
        Instance::new(problem, &self.vocab, self.constants.len(), self.config.allow_pow)
    }

    /// Teacher-forced loss of one problem plus `beta` times its comparison loss.
    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, inst: &Instance, beta: f64) -> Result<LossParts> {
        let enc = self.encoder.encode(tape, store, inst)?;
        let ctx = self.decoder.prepare(tape, store, &enc, inst)?;
        let tf = self.decoder.teacher_forced_nll(tape, store, &ctx, &inst.problem.target)?;
        let nll = tape.scalar(tf.nll);
        let mut total = tf.nll;
        let mut com = None;
        if beta != 0.0 {
            if let Some(x) = self.head.logits(tape, store, &enc, inst)? {
                let labels: Vec<bool> = inst.pairs.iter().map(|p| p.2).collect();
                let lc = comparison_loss(tape, x, &labels)?;
                com = Some(tape.scalar(lc));
                let weighted = tape.scale(lc, beta);
                total = tape.add(total, weighted)?;
            }
        }
        total_loss(nll, com.unwrap_or(0.0), beta).map_err(|e| Error::NonFiniteLoss(format!("{}: {e}", inst.problem.id)))?;
        Ok(LossParts { total, nll, com })
    }

    /// Decodes with the given beam and scores comparable pairs.
    pub fn solve(&self, store: &ParamStore, inst: &Instance, beam: usize) -> Result<Solution> {
        let mut tape = Tape::inference();
        let enc = self.encoder.encode(&mut tape, store, inst)?;
        let ctx = self.decoder.prepare(&mut tape, store, &enc, inst)?;
        let hypotheses = self.decoder.decode(&mut tape, store, &ctx, beam)?;
        let comparison_probs = self.head.probs(&mut tape, store, &enc, inst)?;
        Ok(Solution {
            hypotheses,
            comparison_probs,
        })
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Precision, TrainConfig};
use crate::data::Problem;
use crate::error::{Error, Result};
use crate::model::{Instance, Model, Vocab};
use crate::numeric::{adam_step, Gradients, OptimState, ParamStore, Tape};

use super::checkpoint::Checkpoint;
use super::evaluate::{evaluate, Metrics};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "HLGT_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of `L_q + β·L_com` over training problems.
    pub loss: f64,
    pub nll: f64,
    /// Mean comparison loss over problems that have comparable pairs.
    pub com: Option<f64>,
    pub grad_norm: f64,
    pub valid: Option<Metrics>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub metrics: Vec<EpochMetrics>,
    /// State after the final epoch.
    pub last: Checkpoint,
    /// Best validation checkpoint, or the last one without a validation set.
    pub best: Checkpoint,
}

/// Thread pool sized by `HLGT_THREADS` (rayon's default otherwise).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Gradient of the mean batch loss. Per-problem results are summed in
/// batch order, so the result does not depend on the thread count.
pub fn batch_gradients(
    model: &Model,
    store: &ParamStore,
    batch: &[&Instance],
    beta: f64,
) -> Result<(Gradients, f64, f64, Vec<f64>)> {
    let parts: Vec<(Gradients, f64, f64, Option<f64>)> = batch
        .par_iter()
        .map(|inst| {
            let mut tape = Tape::new();
            let l = model.loss(&mut tape, store, inst, beta)?;
            let total = tape.scalar(l.total);
            let grads = tape.backward(l.total)?.param_grads(&tape);
            Ok((grads, total, l.nll, l.com))
        })
        .collect::<Result<_>>()?;
    let mut grads = Gradients::with_len(store.len());
    let (mut loss, mut nll, mut com) = (0.0, 0.0, Vec::new());
    for (g, t, n, c) in &parts {
        grads.merge(g);
        loss += t;
        nll += n;
        com.extend(*c);
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((grads, loss * scale, nll * scale, com))
}

pub fn prepare(model: &Model, problems: &[Problem]) -> Result<Vec<Instance>> {
    problems.iter().map(|p| model.instance(p)).collect()
}

/// Ranking key of validation metrics.
fn valid_score(m: &Metrics) -> f64 {
    m.answer_accuracy + 1e-3 * m.expression_accuracy
}

pub fn train(cfg: &TrainConfig, train_set: &[Problem], valid_set: &[Problem]) -> Result<TrainOutcome> {
    train_with(cfg, train_set, valid_set, |_, _, _| true)
}

/// Trains with a per-epoch callback; returning `false` stops early.
pub fn train_with(
    cfg: &TrainConfig,
    train_set: &[Problem],
    valid_set: &[Problem],
    mut on_epoch: impl FnMut(&EpochMetrics, &Model, &ParamStore) -> bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let pool = thread_pool()?;
    let vocab = Vocab::build(train_set);
    let (model, mut store) = Model::new(&cfg.model(), vocab, cfg.constant_table()?, cfg.seed)?;
    if cfg.precision == Precision::F32 {
        store.round_to_f32();
    }
    let train_insts = prepare(&model, train_set)?;
    let valid_insts = prepare(&model, valid_set)?;
    let mut optim = OptimState::new(&store, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_6e64);
    let beta = cfg.effective_beta();
    let mut order: Vec<usize> = (0..train_insts.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut last = None;

    for epoch in 0..cfg.epochs {
        optim.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss, mut nll, mut norm, mut com) = (0.0, 0.0, 0.0, Vec::new());
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_insts[i]).collect();
            let (mut grads, l, n, c) = pool
                .install(|| batch_gradients(&model, &store, &batch, beta))
                .map_err(|e| Error::Diverged {
                    epoch,
                    msg: e.to_string(),
                })?;
            norm += grads.clip_global_norm(cfg.clip_norm);
            adam_step(&mut store, &grads, &mut optim).map_err(|e| Error::Diverged {
                epoch,
                msg: e.to_string(),
            })?;
            if cfg.precision == Precision::F32 {
                store.round_to_f32();
            }
            loss += l * batch.len() as f64;
            nll += n * batch.len() as f64;
            com.extend(c);
            batches += 1;
        }
        let count = train_insts.len() as f64;
        let valid = if valid_insts.is_empty() {
            None
        } else {
            let tol = cfg.answer_tolerance;
            Some(pool.install(|| evaluate(&model, &store, &valid_insts, 1, tol))?.0)
        };
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr: optim.lr,
            loss: loss / count,
            nll: nll / count,
            com: (!com.is_empty()).then(|| com.iter().sum::<f64>() / com.len() as f64),
            grad_norm: norm / batches as f64,
            valid,
        };
        log::info!(
            "epoch {} lr {:.2e} loss {:.4} nll {:.4}{}",
            m.epoch,
            m.lr,
            m.loss,
            m.nll,
            m.valid
                .as_ref()
                .map(|v| format!(" valid ans {:.3} expr {:.3}", v.answer_accuracy, v.expression_accuracy))
                .unwrap_or_default()
        );
        let score = m.valid.as_ref().map(valid_score);
        let cp = Checkpoint::capture(cfg, &model, &store, &optim, &rng, epoch + 1, score);
        if let Some(s) = score {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, cp.clone()));
            }
        }
        last = Some(cp);
        let keep_going = on_epoch(&m, &model, &store);
        metrics.push(m);
        if !keep_going {
            break;
        }
    }
    let last = last.expect("at least one epoch ran");
    let best = best.map(|(_, cp)| cp).unwrap_or_else(|| last.clone());
    Ok(TrainOutcome {
        model,
        store,
        metrics,
        last,
        best,
    })
}

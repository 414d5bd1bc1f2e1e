//! Adam with global-norm clipping and early stopping on validation METEOR-lite.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generation::greedy_decode;
use crate::kb::{QAPair, Vocabulary};
use crate::metrics::MeteorScorer;
use crate::model::{sequence_nll, AtomIds, QGenParams, Specials};
use crate::numerics::{seeded_rng, Gradients, ParamSet, Tape};
use crate::placeholder::restore;

/// Examples whose gradients are summed sequentially by one worker before the
/// per-chunk sums are added in order. Fixed so results do not depend on the
/// number of threads.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.00025,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    first: Gradients,
    second: Gradients,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            first: params.zero_grads(),
            second: params.zero_grads(),
        }
    }
}

/// Scales every gradient by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`. Returns `g`.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::contract("max_norm must be > 0"));
    }
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            reason: format!("gradient norm is {norm}"),
        });
    }
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::contract("gradient/parameter count mismatch"));
    }
    state.t += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = state.config;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let g = grads.get(id);
        let p = params.get_mut(id);
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let m = state.first.get_mut(id).data_mut();
        let v = state.second.get_mut(id).data_mut();
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    pub best: Option<f64>,
    pub since_improvement: usize,
    pub patience: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        EarlyStopState {
            best: None,
            since_improvement: 0,
            patience,
        }
    }

    /// Only a strict improvement resets the counter.
    pub fn observe(&mut self, score: f64) -> Verdict {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.since_improvement = 0;
            Verdict::Improved
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                Verdict::Stop
            } else {
                Verdict::NoImprovement
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Updates between evaluations; `None` evaluates once per epoch.
    pub eval_every: Option<usize>,
    pub patience: usize,
    pub max_epochs: usize,
    pub max_steps: Option<usize>,
    /// Decoding limit for validation questions.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            clip_norm: 0.1,
            batch_size: 32,
            eval_every: None,
            patience: 5,
            max_epochs: 100,
            max_steps: None,
            max_len: crate::generation::DEFAULT_MAX_LEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip must be > 0".into()));
        }
        if !(self.adam.learning_rate >= 0.0) || !self.adam.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.eval_every == Some(0) {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// A training question as input-row and output-token indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub atoms: AtomIds,
    pub tokens: Vec<usize>,
}

/// A held-out fact with the subject string used for restoration and the
/// original (unplaceholderized) question tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationExample {
    pub atoms: AtomIds,
    pub subject: String,
    pub reference: Vec<String>,
}

/// Encodes placeholderized pairs; pairs with an atom missing from the input
/// vocabulary are dropped and counted.
pub fn encode_examples(pairs: &[QAPair], input_vocab: &Vocabulary, output_vocab: &Vocabulary) -> (Vec<TrainingExample>, usize) {
    let mut out = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for p in pairs {
        match AtomIds::resolve(&p.fact, input_vocab) {
            Ok(atoms) => out.push(TrainingExample {
                atoms,
                tokens: output_vocab.encode(&p.question_tokens),
            }),
            Err(_) => dropped += 1,
        }
    }
    (out, dropped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    /// Mean per-token NLL over the updates since the previous entry.
    pub train_nll: f64,
    pub valid_meteor: Option<f64>,
    pub wall_seconds: f64,
}

impl LogEntry {
    pub fn line(&self) -> String {
        let meteor = self.valid_meteor.map_or_else(|| "n/a".to_string(), |m| format!("{m:.4}"));
        format!("{}\t{:.6}\t{}\t{:.3}", self.step, self.train_nll, meteor, self.wall_seconds)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best-validation parameters, or the final ones without a validation set.
    pub model: QGenParams,
    pub log: Vec<LogEntry>,
    pub steps: usize,
    pub best_meteor: Option<f64>,
    pub stopped_early: bool,
    /// Set when a non-finite loss or gradient ended training; `model` is then
    /// the last good checkpoint.
    pub divergence: Option<Error>,
}

/// Summed NLL and token count of one chunk, with gradients accumulated into `grads`.
fn chunk_gradients(model: &QGenParams, chunk: &[&TrainingExample], specials: Specials) -> Result<(Gradients, f64, usize)> {
    let mut grads = model.params.zero_grads();
    let mut nll = 0.0;
    let mut tokens = 0;
    for ex in chunk {
        let mut tape = Tape::new(&model.params);
        let loss = sequence_nll(&mut tape, model, ex.atoms, &ex.tokens, specials)?;
        nll += tape.value(loss).data()[0];
        tokens += ex.tokens.len();
        tape.backprop_into(loss, &mut grads)?;
    }
    Ok((grads, nll, tokens))
}

/// Mean per-token NLL gradient of a minibatch. Returns (grads, summed NLL, tokens).
pub fn batch_gradients(model: &QGenParams, batch: &[&TrainingExample], specials: Specials) -> Result<(Gradients, f64, usize)> {
    let parts: Vec<(Gradients, f64, usize)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|c| chunk_gradients(model, c, specials))
        .collect::<Result<_>>()?;
    let mut parts = parts.into_iter();
    let (mut grads, mut nll, mut tokens) = parts.next().ok_or_else(|| Error::contract("empty batch"))?;
    for (g, n, t) in parts {
        grads.accumulate(&g)?;
        nll += n;
        tokens += t;
    }
    grads.scale(1.0 / tokens as f64);
    Ok((grads, nll, tokens))
}

/// Mean per-token NLL of a corpus under the plain forward pass.
pub fn corpus_nll_per_token(model: &QGenParams, examples: &[TrainingExample], specials: Specials) -> Result<f64> {
    let parts: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|ex| {
            let ll = model.sequence_log_likelihood(ex.atoms, &ex.tokens, specials)?;
            Ok((-ll, ex.tokens.len()))
        })
        .collect::<Result<_>>()?;
    let (nll, tokens) = parts.iter().fold((0.0, 0), |(a, b), (n, t)| (a + n, b + t));
    if tokens == 0 {
        return Err(Error::contract("no tokens"));
    }
    Ok(nll / tokens as f64)
}

/// Mean METEOR-lite of greedy questions (placeholders restored) against the references.
pub fn validation_meteor(
    model: &QGenParams,
    valid: &[ValidationExample],
    output_vocab: &Vocabulary,
    specials: Specials,
    max_len: usize,
) -> Result<f64> {
    let scorer = MeteorScorer::default();
    let scores: Vec<f64> = valid
        .par_iter()
        .map(|ex| {
            let ids = greedy_decode(model, ex.atoms, specials, max_len)?;
            let question = restore(&output_vocab.decode(&ids), &ex.subject).tokens;
            scorer.score(&question, &ex.reference)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

fn relabel(e: Error, step: usize) -> Error {
    match e {
        Error::Divergence { reason, .. } => Error::Divergence { step, reason },
        other => other,
    }
}

/// Minibatch Adam on the per-token NLL. Every `eval_every` updates (or once
/// per epoch) the validation set is greedy-decoded and scored; training stops
/// once `patience` evaluations pass without a strict improvement and the best
/// parameters are returned. One tab-separated line per evaluation goes to
/// `log_sink`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut model: QGenParams,
    examples: &[TrainingExample],
    valid: &[ValidationExample],
    output_vocab: &Vocabulary,
    specials: Specials,
    config: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::contract("no training examples"));
    }
    let start = Instant::now();
    let mut rng = seeded_rng(config.seed);
    let mut adam = AdamState::new(&model.params, config.adam);
    let mut early = EarlyStopState::new(config.patience);
    let mut best_params: Option<ParamSet> = None;
    let mut log = Vec::new();
    let mut step = 0;
    let (mut window_nll, mut window_tokens) = (0.0, 0usize);
    let mut stopped_early = false;
    let mut divergence = None;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let eval_every = config.eval_every.unwrap_or(steps_per_epoch);

    'epochs: for _epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for batch_idx in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<&TrainingExample> = batch_idx.iter().map(|&i| &examples[i]).collect();
            let (mut grads, nll, tokens) = batch_gradients(&model, &batch, specials)?;
            if !nll.is_finite() {
                divergence = Some(Error::Divergence {
                    step,
                    reason: format!("training loss is {nll}"),
                });
                break 'epochs;
            }
            if let Err(e) = clip_gradients(&mut grads, config.clip_norm) {
                divergence = Some(relabel(e, step));
                break 'epochs;
            }
            adam_step(&mut model.params, &grads, &mut adam)?;
            step += 1;
            window_nll += nll;
            window_tokens += tokens;

            if step % eval_every == 0 {
                let valid_meteor = if valid.is_empty() {
                    None
                } else {
                    Some(validation_meteor(&model, valid, output_vocab, specials, config.max_len)?)
                };
                let entry = LogEntry {
                    step,
                    train_nll: window_nll / window_tokens.max(1) as f64,
                    valid_meteor,
                    wall_seconds: start.elapsed().as_secs_f64(),
                };
                log::info!("{}", entry.line());
                if let Some(sink) = log_sink.as_mut() {
                    writeln!(sink, "{}", entry.line()).map_err(|e| Error::io("training log", e))?;
                }
                log.push(entry);
                (window_nll, window_tokens) = (0.0, 0);
                if let Some(m) = valid_meteor {
                    match early.observe(m) {
                        Verdict::Improved => best_params = Some(model.params.clone()),
                        Verdict::NoImprovement => {}
                        Verdict::Stop => {
                            stopped_early = true;
                            break 'epochs;
                        }
                    }
                }
            }
        }
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(TrainOutcome {
        model,
        log,
        steps: step,
        best_meteor: early.best,
        stopped_early,
        divergence,
    })
}

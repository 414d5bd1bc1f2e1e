//! Greedy and beam decoding, placeholder restoration, and streaming corpus
//! generation.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::iter::once;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kb::{tsv_lines, EntityNames, Fact, Vocabulary};
use crate::model::{AtomIds, QGenParams, Specials};
use crate::numerics::Tensor;
use crate::placeholder::restore;

pub const DEFAULT_BEAM_WIDTH: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 30;
/// Facts decoded together between ordered writes.
const GENERATION_CHUNK: usize = 256;

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be >= 1"));
    }
    Ok(())
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Highest-probability token at each step, ties to the lowest index. After
/// `max_len − 1` tokens without `?`, `?` is appended.
pub fn greedy_decode(model: &QGenParams, atoms: AtomIds, specials: Specials, max_len: usize) -> Result<Vec<usize>> {
    check_max_len(max_len)?;
    let enc = model.encode_fact(atoms)?;
    let mut h = model.init_state(&enc);
    let mut prev = specials.bos;
    let mut out = Vec::new();
    while out.len() + 1 < max_len {
        let (h_next, logp) = model.advance(&enc, prev, &h)?;
        let w = argmax(&logp);
        out.push(w);
        if w == specials.eos {
            return Ok(out);
        }
        h = h_next;
        prev = w;
    }
    out.push(specials.eos);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Sum of the chosen per-step log-probabilities.
    pub log_prob: f64,
    pub finished: bool,
}

struct Live {
    tokens: Vec<usize>,
    log_prob: f64,
    state: Tensor,
}

fn rank(a_score: f64, a_tokens: impl Iterator<Item = usize>, b_score: f64, b_tokens: impl Iterator<Item = usize>) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// Beam search without length normalization. Hypotheses that emit `?`
/// leave the beam, which shrinks accordingly; at the last position only `?`
/// may be chosen. Returns up to `width` finished hypotheses, best first,
/// ties by token order.
pub fn beam_search(
    model: &QGenParams,
    atoms: AtomIds,
    specials: Specials,
    width: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if width == 0 {
        return Err(Error::contract("beam width must be >= 1"));
    }
    check_max_len(max_len)?;
    let enc = model.encode_fact(atoms)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.init_state(&enc),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for pos in 0..max_len {
        let slots = width - finished.len();
        if live.is_empty() || slots == 0 {
            break;
        }
        let last = pos + 1 == max_len;
        // (parent, token, score)
        let mut expansions: Vec<(usize, usize, f64)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (p, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(specials.bos);
            let (h, logp) = model.advance(&enc, prev, &hyp.state)?;
            if last {
                expansions.push((p, specials.eos, hyp.log_prob + logp[specials.eos]));
            } else {
                expansions.extend(logp.iter().enumerate().map(|(w, lp)| (p, w, hyp.log_prob + lp)));
            }
            states.push(h);
        }
        let cmp = |a: &(usize, usize, f64), b: &(usize, usize, f64)| {
            rank(
                a.2,
                live[a.0].tokens.iter().copied().chain(once(a.1)),
                b.2,
                live[b.0].tokens.iter().copied().chain(once(b.1)),
            )
        };
        if expansions.len() > slots {
            expansions.select_nth_unstable_by(slots - 1, cmp);
            expansions.truncate(slots);
        }
        expansions.sort_by(cmp);

        let mut next = Vec::with_capacity(expansions.len());
        for (p, w, score) in expansions {
            let mut tokens = live[p].tokens.clone();
            tokens.push(w);
            if w == specials.eos {
                finished.push(Hypothesis {
                    tokens,
                    log_prob: score,
                    finished: true,
                });
            } else {
                next.push(Live {
                    tokens,
                    log_prob: score,
                    state: states[p].clone(),
                });
            }
        }
        live = next;
    }
    finished.sort_by(|a, b| rank(a.log_prob, a.tokens.iter().copied(), b.log_prob, b.tokens.iter().copied()));
    Ok(finished)
}

/// Decodes facts into surface questions with placeholders restored.
pub struct Generator<'a> {
    pub model: &'a QGenParams,
    pub input_vocab: &'a Vocabulary,
    pub output_vocab: &'a Vocabulary,
    pub names: &'a EntityNames,
    pub specials: Specials,
    pub beam_width: usize,
    pub max_len: usize,
}

impl<'a> Generator<'a> {
    pub fn new(
        model: &'a QGenParams,
        input_vocab: &'a Vocabulary,
        output_vocab: &'a Vocabulary,
        names: &'a EntityNames,
    ) -> Result<Self> {
        if model.dims.vocab != output_vocab.len() || model.input_embeddings.rows() != input_vocab.len() {
            return Err(Error::contract("model and vocabulary sizes disagree"));
        }
        Ok(Generator {
            model,
            input_vocab,
            output_vocab,
            names,
            specials: Specials::from_vocab(output_vocab)?,
            beam_width: DEFAULT_BEAM_WIDTH,
            max_len: DEFAULT_MAX_LEN,
        })
    }

    /// Output-vocabulary indices of the best question (placeholders intact).
    pub fn decode_indices(&self, fact: &Fact) -> Result<Vec<usize>> {
        let atoms = AtomIds::resolve(fact, self.input_vocab)?;
        if self.beam_width == 1 {
            greedy_decode(self.model, atoms, self.specials, self.max_len)
        } else {
            let beam = beam_search(self.model, atoms, self.specials, self.beam_width, self.max_len)?;
            Ok(beam.into_iter().next().expect("beam always finishes").tokens)
        }
    }

    pub fn question(&self, fact: &Fact) -> Result<Vec<String>> {
        let raw = self.output_vocab.decode(&self.decode_indices(fact)?);
        Ok(restore(&raw, &self.names.subject_string(&fact.subject)).tokens)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub written: usize,
    /// Facts with an atom unknown to the encoder.
    pub skipped: usize,
}

/// Streams `subject<TAB>relationship<TAB>object` lines (extra fields are
/// ignored) and writes one `subject<TAB>relationship<TAB>object<TAB>question`
/// line per decodable fact, in input order.
pub fn generate_corpus(
    facts_path: impl AsRef<Path>,
    generator: &Generator,
    output_path: impl AsRef<Path>,
) -> Result<CorpusStats> {
    let facts_path = facts_path.as_ref();
    let output_path = output_path.as_ref();
    let out_io = |e| Error::io(output_path, e);
    let mut w = BufWriter::new(File::create(output_path).map_err(out_io)?);
    let mut stats = CorpusStats::default();
    let mut rows = tsv_lines(facts_path)?;
    loop {
        let mut chunk: Vec<(Vec<String>, Fact)> = Vec::with_capacity(GENERATION_CHUNK);
        for row in rows.by_ref().take(GENERATION_CHUNK) {
            let (line, fields) = row?;
            if fields.len() < 3 {
                return Err(Error::parse(facts_path, line, "expected at least 3 tab-separated fields"));
            }
            let fact = Fact::new(&fields[0], &fields[1], &fields[2])
                .map_err(|e| Error::parse(facts_path, line, e.to_string()))?;
            chunk.push((fields, fact));
        }
        if chunk.is_empty() {
            break;
        }
        let questions: Vec<Result<Vec<String>>> = chunk.par_iter().map(|(_, f)| generator.question(f)).collect();
        for ((fields, _), q) in chunk.iter().zip(questions) {
            match q {
                Ok(q) => {
                    writeln!(w, "{}\t{}\t{}\t{}", fields[0], fields[1], fields[2], q.join(" ")).map_err(out_io)?;
                    stats.written += 1;
                }
                Err(Error::Lookup { .. }) => stats.skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    w.flush().map_err(out_io)?;
    if stats.skipped > 0 {
        log::warn!("skipped {} facts with unknown atoms", stats.skipped);
    }
    Ok(stats)
}

//! Rare-word handling on the question side: the subject mention is located
//! in each training question and swapped for a placeholder token, which is
//! substituted back with the subject string after generation.
//!
//! Single-placeholder (SP) mode uses one generic token; multi-placeholder
//! (MP) mode picks one of at most [`MAX_CATEGORIES`] tokens from the subject
//! type implied by the relationship.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kb::{EntityNames, Fact, QAPair, EOS, SP_PLACEHOLDER};

pub const MAX_CATEGORIES: usize = 60;
pub const OTHER_CATEGORY: &str = "other";
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Candidate spans are at most this many tokens longer than the subject.
const SPAN_SLACK: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Single,
    Multi,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sp" | "single" => Ok(Mode::Single),
            "mp" | "multi" => Ok(Mode::Multi),
            other => Err(Error::Config(format!("unknown placeholder mode `{other}`"))),
        }
    }
}

pub fn category_token(category: &str) -> String {
    format!("<{category} placeholder>")
}

pub fn is_placeholder_token(token: &str) -> bool {
    token == SP_PLACEHOLDER || (token.starts_with('<') && token.ends_with(" placeholder>"))
}

/// Splits a phrase with the question tokenizer rules, without a forced `?`.
pub fn phrase_tokens(text: &str) -> Vec<String> {
    let mut t = crate::kb::tokenize(text);
    let had_terminal = text.trim_end().ends_with('?');
    if !had_terminal {
        t.pop();
    }
    t
}

/// Longest common contiguous block in `a[alo..ahi]` × `b[blo..bhi]`.
/// Among maximal blocks the earliest in `a`, then earliest in `b`, wins.
fn longest_match(
    a: &[char],
    b: &[char],
    (alo, ahi): (usize, usize),
    (blo, bhi): (usize, usize),
) -> (usize, usize, usize) {
    let (mut best_i, mut best_j, mut best_k) = (alo, blo, 0);
    let mut prev = vec![0usize; bhi - blo + 1];
    let mut cur = vec![0usize; bhi - blo + 1];
    for i in alo..ahi {
        for j in blo..bhi {
            let jj = j - blo + 1;
            if a[i] == b[j] {
                let k = prev[jj - 1] + 1;
                cur[jj] = k;
                if k > best_k {
                    best_i = i + 1 - k;
                    best_j = j + 1 - k;
                    best_k = k;
                }
            } else {
                cur[jj] = 0;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (best_i, best_j, best_k)
}

fn matched_chars(a: &[char], b: &[char], ar: (usize, usize), br: (usize, usize)) -> usize {
    if ar.0 >= ar.1 || br.0 >= br.1 {
        return 0;
    }
    let (i, j, k) = longest_match(a, b, ar, br);
    if k == 0 {
        return 0;
    }
    k + matched_chars(a, b, (ar.0, i), (br.0, j)) + matched_chars(a, b, (i + k, ar.1), (j + k, br.1))
}

/// `2·M / (|a| + |b|)` where `M` counts characters in the recursively found
/// longest matching blocks.
pub fn match_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let m = matched_chars(&a, &b, (0, a.len()), (0, b.len()));
    2.0 * m as f64 / total as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanMatch {
    /// Half-open token range `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Best-scoring contiguous span of the question body (the trailing `?` is
/// never part of a span). Ties go to the earliest start, then the shortest span.
pub fn best_subject_span(question_tokens: &[String], subject: &str) -> Result<SpanMatch> {
    let body_len = match question_tokens.last() {
        Some(t) if t == EOS => question_tokens.len() - 1,
        _ => question_tokens.len(),
    };
    let subject_tokens = phrase_tokens(subject);
    if body_len == 0 || subject_tokens.is_empty() {
        return Err(Error::contract("empty question body or subject string"));
    }
    let target = subject_tokens.join(" ");
    let max_len = (subject_tokens.len() + SPAN_SLACK).min(body_len);
    let mut best: Option<SpanMatch> = None;
    for start in 0..body_len {
        for len in 1..=max_len.min(body_len - start) {
            let candidate = question_tokens[start..start + len].join(" ");
            let score = match_ratio(&candidate, &target);
            if best.is_none_or(|b| score > b.score) {
                best = Some(SpanMatch {
                    start,
                    end: start + len,
                    score,
                });
            }
        }
    }
    Ok(best.expect("non-empty body yields a candidate"))
}

/// [`best_subject_span`] with the acceptance threshold applied.
pub fn find_subject_span(question_tokens: &[String], subject: &str, threshold: f64) -> Result<SpanMatch> {
    let m = best_subject_span(question_tokens, subject)?;
    if m.score < threshold {
        return Err(Error::NoMatch { best: m.score });
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaceholderizedQuestion {
    pub tokens: Vec<String>,
    /// Token range of the subject mention in the original question.
    pub span: (usize, usize),
    pub score: f64,
    pub mode: Mode,
    /// Category index, set in MP mode only.
    pub category: Option<usize>,
}

impl PlaceholderizedQuestion {
    pub fn to_pair(&self, fact: &Fact) -> QAPair {
        QAPair {
            fact: fact.clone(),
            question_tokens: self.tokens.clone(),
        }
    }
}

pub fn placeholderize(
    pair: &QAPair,
    subject: &str,
    mode: Mode,
    categories: Option<&CategoryMap>,
    threshold: f64,
) -> Result<PlaceholderizedQuestion> {
    let m = find_subject_span(&pair.question_tokens, subject, threshold)?;
    let (token, category) = match mode {
        Mode::Single => (SP_PLACEHOLDER.to_string(), None),
        Mode::Multi => {
            let map = categories
                .ok_or_else(|| Error::contract("multi-placeholder mode needs a category map"))?;
            let id = map.category_of(&pair.fact.relationship);
            (category_token(map.name(id)), Some(id))
        }
    };
    let q = &pair.question_tokens;
    let mut tokens = Vec::with_capacity(q.len() - (m.end - m.start) + 1);
    tokens.extend_from_slice(&q[..m.start]);
    tokens.push(token);
    tokens.extend_from_slice(&q[m.end..]);
    Ok(PlaceholderizedQuestion {
        tokens,
        span: (m.start, m.end),
        score: m.score,
        mode,
        category,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Restored {
    pub tokens: Vec<String>,
    /// False when the input carried no placeholder and was returned unchanged.
    pub had_placeholder: bool,
}

/// Replaces every placeholder token (SP or MP) with the tokenized subject.
pub fn restore(tokens: &[String], subject: &str) -> Restored {
    let subject_tokens = phrase_tokens(subject);
    let mut out = Vec::with_capacity(tokens.len() + subject_tokens.len());
    let mut had_placeholder = false;
    for t in tokens {
        if is_placeholder_token(t) {
            had_placeholder = true;
            out.extend(subject_tokens.iter().cloned());
        } else {
            out.push(t.clone());
        }
    }
    Restored {
        tokens: out,
        had_placeholder,
    }
}

/// Relationship → placeholder category.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryMap {
    categories: Vec<String>,
    by_relationship: BTreeMap<String, usize>,
    other: usize,
}

/// The type segment owning the property: second-to-last path segment.
/// `location/location/contained_by` → `location`.
pub fn relationship_type(relationship: &str) -> Option<&str> {
    let segments: Vec<&str> = relationship
        .split(['/', '.'])
        .filter(|s| !s.is_empty())
        .collect();
    if segments.len() < 2 {
        return None;
    }
    Some(segments[segments.len() - 2])
}

impl CategoryMap {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.categories[id]
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Unseen relationships fall back to the `other` bucket.
    pub fn category_of(&self, relationship: &str) -> usize {
        self.by_relationship
            .get(relationship)
            .copied()
            .unwrap_or(self.other)
    }

    /// `relationship<TAB>category` lines.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (rel, &id) in &self.by_relationship {
            writeln!(w, "{rel}\t{}", self.categories[id]).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Most frequent 59 subject types (by training-pair count) get their own
/// category; everything else, including unparsable paths, shares `other`.
pub fn build_category_map(training_pairs: &[QAPair]) -> CategoryMap {
    let mut type_freq: HashMap<&str, usize> = HashMap::new();
    for p in training_pairs {
        if let Some(t) = relationship_type(&p.fact.relationship) {
            if t != OTHER_CATEGORY {
                *type_freq.entry(t).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = type_freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(MAX_CATEGORIES - 1);

    let mut categories: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
    categories.push(OTHER_CATEGORY.to_string());
    let other = categories.len() - 1;
    let index: HashMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let by_relationship = training_pairs
        .iter()
        .map(|p| {
            let id = relationship_type(&p.fact.relationship)
                .and_then(|t| index.get(t).copied())
                .unwrap_or(other);
            (p.fact.relationship.clone(), id)
        })
        .collect();
    CategoryMap {
        categories,
        by_relationship,
        other,
    }
}

/// Placeholderized training corpus plus the pairs that failed span detection.
#[derive(Clone, Debug, Default)]
pub struct PlaceholderCorpus {
    pub pairs: Vec<QAPair>,
    pub details: Vec<PlaceholderizedQuestion>,
    pub failures: usize,
}

pub fn placeholderize_corpus(
    pairs: &[QAPair],
    names: &EntityNames,
    mode: Mode,
    categories: Option<&CategoryMap>,
    threshold: f64,
) -> Result<PlaceholderCorpus> {
    let mut out = PlaceholderCorpus::default();
    for p in pairs {
        let subject = names.subject_string(&p.fact.subject);
        match placeholderize(p, &subject, mode, categories, threshold) {
            Ok(q) => {
                out.pairs.push(q.to_pair(&p.fact));
                out.details.push(q);
            }
            Err(Error::NoMatch { .. }) => out.failures += 1,
            Err(e) => return Err(e),
        }
    }
    if out.failures > 0 {
        log::warn!("{} pairs had no subject span above threshold", out.failures);
    }
    Ok(out)
}

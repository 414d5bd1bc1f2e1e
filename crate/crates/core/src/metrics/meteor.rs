//! METEOR with the exact and stem matchers only (no synonym stage).
//!
//! `F_mean = 10PR / (R + 9P)`, `penalty = 0.5 · (chunks / matches)³`,
//! `score = 100 · F_mean · (1 − penalty)`.

use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};

use crate::error::{Error, Result};

/// Node budget for the chunk-minimizing search of one stage. Past it the
/// best alignment found so far is used.
const SEARCH_BUDGET: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeteorDetail {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Candidate position → reference position.
type Alignment = Vec<Option<usize>>;

fn count_chunks(align: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, j) in align.iter().enumerate() {
        if let Some(j) = *j {
            match prev {
                Some((pi, pj)) if pi + 1 == i && pj + 1 == j => {}
                _ => chunks += 1,
            }
            prev = Some((i, j));
        }
    }
    chunks
}

struct Search<'a> {
    cand: &'a [String],
    refs: &'a [String],
    ref_used: Vec<bool>,
    align: Alignment,
    target: usize,
    best: Option<(usize, Alignment)>,
    nodes: usize,
}

impl Search<'_> {
    /// Chunks formed so far by the matched prefix `0..i`.
    fn partial_chunks(&self, i: usize) -> usize {
        count_chunks(&self.align[..i])
    }

    fn run(&mut self, i: usize, matched: usize, remaining: &[usize]) {
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET && self.best.is_some() {
            return;
        }
        let chunks = self.partial_chunks(i);
        if self.best.as_ref().is_some_and(|(b, _)| chunks >= *b) {
            return;
        }
        if matched == self.target {
            self.best = Some((chunks, self.align.clone()));
            return;
        }
        if i == self.cand.len() || matched + remaining[i] < self.target {
            return;
        }
        if self.align[i].is_some() {
            self.run(i + 1, matched, remaining);
            return;
        }
        // Prefer the reference slot that continues the current chunk.
        let mut options: Vec<usize> = (0..self.refs.len())
            .filter(|&j| !self.ref_used[j] && self.refs[j] == self.cand[i])
            .collect();
        let continuing = i
            .checked_sub(1)
            .and_then(|p| self.align[p])
            .map(|pj| pj + 1);
        options.sort_by_key(|&j| (Some(j) != continuing, j));
        for j in options {
            self.ref_used[j] = true;
            self.align[i] = Some(j);
            self.run(i + 1, matched + 1, remaining);
            self.align[i] = None;
            self.ref_used[j] = false;
        }
        self.run(i + 1, matched, remaining);
    }
}

/// Extends `fixed` with matches between equal keys of still-unaligned
/// words, maximizing the number of new matches and then minimizing chunks.
fn align_stage(cand_keys: &[String], ref_keys: &[String], fixed: &Alignment) -> Alignment {
    let mut ref_used = vec![false; ref_keys.len()];
    for j in fixed.iter().flatten() {
        ref_used[*j] = true;
    }
    let mut free_cand: HashMap<&str, usize> = HashMap::new();
    for (i, k) in cand_keys.iter().enumerate() {
        if fixed[i].is_none() {
            *free_cand.entry(k).or_insert(0) += 1;
        }
    }
    let mut free_ref: HashMap<&str, usize> = HashMap::new();
    for (j, k) in ref_keys.iter().enumerate() {
        if !ref_used[j] {
            *free_ref.entry(k).or_insert(0) += 1;
        }
    }
    let new_matches: usize = free_cand
        .iter()
        .map(|(k, &c)| c.min(free_ref.get(k).copied().unwrap_or(0)))
        .sum();
    if new_matches == 0 {
        return fixed.clone();
    }
    // remaining[i]: upper bound on matches obtainable from positions i..
    let mut remaining = vec![0; cand_keys.len() + 1];
    for i in (0..cand_keys.len()).rev() {
        let can = fixed[i].is_none() && free_ref.contains_key(cand_keys[i].as_str());
        remaining[i] = remaining[i + 1] + usize::from(can);
    }
    let already = fixed.iter().flatten().count();
    let mut search = Search {
        cand: cand_keys,
        refs: ref_keys,
        ref_used,
        align: fixed.clone(),
        target: already + new_matches,
        best: None,
        nodes: 0,
    };
    search.run(0, already, &remaining);
    search.best.map(|(_, a)| a).unwrap_or_else(|| fixed.clone())
}

/// Shared English stemmer.
pub struct MeteorScorer {
    stemmer: Stemmer,
}

impl Default for MeteorScorer {
    fn default() -> Self {
        MeteorScorer {
            stemmer: Stemmer::create(Algorithm::English),
        }
    }
}

impl MeteorScorer {
    pub fn detail(&self, candidate: &[String], reference: &[String]) -> Result<MeteorDetail> {
        if candidate.is_empty() || reference.is_empty() {
            return Err(Error::contract("METEOR-lite needs non-empty token lists"));
        }
        let none: Alignment = vec![None; candidate.len()];
        let exact = align_stage(candidate, reference, &none);
        let stem = |ts: &[String]| -> Vec<String> {
            ts.iter().map(|t| self.stemmer.stem(t).into_owned()).collect()
        };
        let align = align_stage(&stem(candidate), &stem(reference), &exact);

        let matches = align.iter().flatten().count();
        if matches == 0 {
            return Ok(MeteorDetail {
                matches: 0,
                chunks: 0,
                precision: 0.0,
                recall: 0.0,
                f_mean: 0.0,
                penalty: 0.0,
                score: 0.0,
            });
        }
        let chunks = count_chunks(&align);
        let precision = matches as f64 / candidate.len() as f64;
        let recall = matches as f64 / reference.len() as f64;
        let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
        let penalty = 0.5 * (chunks.pow(3) as f64) / (matches.pow(3) as f64);
        Ok(MeteorDetail {
            matches,
            chunks,
            precision,
            recall,
            f_mean,
            penalty,
            score: 100.0 * f_mean * (1.0 - penalty),
        })
    }

    pub fn score(&self, candidate: &[String], reference: &[String]) -> Result<f64> {
        Ok(self.detail(candidate, reference)?.score)
    }
}

/// Sentence-level METEOR-lite in [0, 100].
pub fn meteor_lite(candidate: &[String], reference: &[String]) -> Result<f64> {
    MeteorScorer::default().score(candidate, reference)
}

//! Corpus BLEU, METEOR-lite and Embedding Greedy.

mod bleu;
mod embedding;
mod meteor;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kb::tokenize;

pub use bleu::{bleu, modified_counts, BleuStats, NgramCounts, ZERO_COUNT_EPSILON};
pub use embedding::{embedding_greedy, embedding_greedy_detail, EmbeddingGreedy, WordVectorStore};
pub use meteor::{meteor_lite, MeteorDetail, MeteorScorer};

pub const BLEU_MAX_N: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleScores {
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
    /// Sentence-level modified precisions for n = 1..4 (`None` when the
    /// candidate has no n-grams of that order).
    pub precisions: Vec<Option<f64>>,
    pub meteor_lite: f64,
    pub emb_greedy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub bleu: f64,
    pub meteor_lite: f64,
    /// `None` when no word vectors were supplied.
    pub emb_greedy: Option<f64>,
    pub oov_tokens: usize,
    pub examples: Vec<ExampleScores>,
}

pub fn evaluate_corpus(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    store: Option<&WordVectorStore>,
) -> Result<MetricReport> {
    if candidates.len() != references.len() {
        return Err(Error::contract(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::contract("nothing to evaluate"));
    }
    let bleu = bleu(candidates, references, BLEU_MAX_N)?;
    let scorer = MeteorScorer::default();
    let rows: Vec<(ExampleScores, usize)> = candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| {
            let meteor = scorer.score(c, r)?;
            let eg = store.map(|s| embedding_greedy_detail(c, r, s)).transpose()?;
            let stats = BleuStats::of_pair(c, r, BLEU_MAX_N);
            Ok((
                ExampleScores {
                    candidate: c.clone(),
                    reference: r.clone(),
                    precisions: stats.counts.iter().map(NgramCounts::precision).collect(),
                    meteor_lite: meteor,
                    emb_greedy: eg.map(|e| e.score),
                },
                eg.map_or(0, |e| e.oov),
            ))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let meteor_lite = rows.iter().map(|(e, _)| e.meteor_lite).sum::<f64>() / n;
    let emb_greedy = store.map(|_| rows.iter().map(|(e, _)| e.emb_greedy.unwrap()).sum::<f64>() / n);
    let oov_tokens = rows.iter().map(|(_, o)| o).sum();
    Ok(MetricReport {
        bleu,
        meteor_lite,
        emb_greedy,
        oov_tokens,
        examples: rows.into_iter().map(|(e, _)| e).collect(),
    })
}

impl MetricReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str("# BLEU: corpus-level, n=1..4, zero clipped counts replaced by 1e-9\n");
        s.push_str("# METEOR-lite: exact + stem matching, no synonyms; not comparable to full METEOR\n");
        s.push_str("metric\tvalue\n");
        s.push_str(&format!("BLEU\t{:.4}\n", self.bleu));
        s.push_str(&format!("METEOR-lite\t{:.4}\n", self.meteor_lite));
        match self.emb_greedy {
            Some(v) => s.push_str(&format!("Emb.Greedy\t{v:.4}\n")),
            None => s.push_str("Emb.Greedy\tn/a\n"),
        }
        s.push_str(&format!("examples\t{}\n", self.examples.len()));
        s.push_str(&format!("oov_tokens\t{}\n", self.oov_tokens));
        s
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.summary()).map_err(|e| Error::io(path, e))
    }

    pub fn write_examples(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "candidate\treference\tp1\tp2\tp3\tp4\tmeteor_lite\temb_greedy").map_err(io)?;
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        for e in &self.examples {
            write!(w, "{}\t{}", e.candidate.join(" "), e.reference.join(" ")).map_err(io)?;
            for p in &e.precisions {
                write!(w, "\t{}", opt(*p)).map_err(io)?;
            }
            writeln!(w, "\t{:.6}\t{}", e.meteor_lite, opt(e.emb_greedy)).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// One question per line. Tab-separated lines (generated corpora) use their
/// last field. Blank lines are skipped.
pub fn read_questions(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| tokenize(l.rsplit('\t').next().unwrap_or(l)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn self_evaluation() {
        let qs = vec![t("what is the capital of france ?"), t("who wrote hamlet ?")];
        let mut store = WordVectorStore::new(2);
        for (i, w) in ["what", "is", "the", "capital", "of", "france", "?", "who", "wrote", "hamlet"]
            .iter()
            .enumerate()
        {
            store.insert(w, vec![1.0, i as f64]).unwrap();
        }
        let r = evaluate_corpus(&qs, &qs, Some(&store)).unwrap();
        assert_eq!(r.bleu, 100.0);
        assert_eq!(r.emb_greedy, Some(100.0));
        let expected = (100.0 * (1.0 - 0.5 / 343.0) + 100.0 * (1.0 - 0.5 / 64.0)) / 2.0;
        assert!((r.meteor_lite - expected).abs() < 1e-12);
        assert_eq!(r.oov_tokens, 0);
    }

    #[test]
    fn composition_of_metric_oracles() {
        let c = vec![t("what city is it in ?"), t("who is he ?"), t("a b"), t("x y z ?"), t("where ?")];
        let r = vec![t("what city is that in ?"), t("who was he ?"), t("b a"), t("p q ?"), t("where ?")];
        let rep = evaluate_corpus(&c, &r, None).unwrap();
        assert_eq!(rep.bleu, bleu(&c, &r, 4).unwrap());
        let mean = c.iter().zip(&r).map(|(a, b)| meteor_lite(a, b).unwrap()).sum::<f64>() / 5.0;
        assert!((rep.meteor_lite - mean).abs() < 1e-12);
        assert_eq!(rep.emb_greedy, None);
        assert_eq!(rep.examples[2].precisions[0], Some(1.0));
        assert_eq!(rep.examples[4].precisions[2], None);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(evaluate_corpus(&[], &[], None).is_err());
    }

    #[test]
    fn report_files() {
        let qs = vec![t("who ?")];
        let r = evaluate_corpus(&qs, &qs, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write_summary(dir.path().join("s.tsv")).unwrap();
        r.write_examples(dir.path().join("e.tsv")).unwrap();
        let s = std::fs::read_to_string(dir.path().join("s.tsv")).unwrap();
        assert!(s.contains("BLEU\t100.0000"));
        assert!(s.contains("METEOR-lite"));
        let e = std::fs::read_to_string(dir.path().join("e.tsv")).unwrap();
        assert_eq!(e.lines().nth(1).unwrap(), "who ?\twho ?\t1.000000\t1.000000\tn/a\tn/a\t93.750000\tn/a");
    }

    #[test]
    fn question_file_uses_last_tab_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.txt");
        std::fs::write(&p, "m.a\tr\tm.b\tWho is it?\n\nwhat is it ?\n").unwrap();
        let qs = read_questions(&p).unwrap();
        assert_eq!(qs, vec![t("who is it ?"), t("what is it ?")]);
    }
}

//! Facts, question-answer pairs, vocabularies and the TSV loaders.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::placeholder::is_placeholder_token;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "?";
pub const SP_PLACEHOLDER: &str = "<placeholder>";

const FREEBASE_PREFIX: &str = "www.freebase.com/";

/// `www.freebase.com/m/abc` → `m.abc`; `/people/person/nationality` → `people.person.nationality`.
pub fn normalize_id(raw: &str) -> String {
    let s = raw.trim();
    let s = s.strip_prefix(FREEBASE_PREFIX).unwrap_or(s);
    let s = s.trim_start_matches('/');
    s.replace('/', ".")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fact {
    pub subject: String,
    pub relationship: String,
    pub object: String,
}

impl Fact {
    /// Normalizes all three ids; each must be non-empty afterwards.
    pub fn new(subject: &str, relationship: &str, object: &str) -> Result<Self> {
        let fact = Fact {
            subject: normalize_id(subject),
            relationship: normalize_id(relationship),
            object: normalize_id(object),
        };
        if fact.subject.is_empty() || fact.relationship.is_empty() || fact.object.is_empty() {
            return Err(Error::contract(format!("empty id in fact {fact:?}")));
        }
        Ok(fact)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QAPair {
    pub fact: Fact,
    pub question_tokens: Vec<String>,
}

impl QAPair {
    pub fn new(fact: Fact, question_tokens: Vec<String>) -> Result<Self> {
        if question_tokens.last().map(String::as_str) != Some(EOS) {
            return Err(Error::contract(format!(
                "question must end with `?`: {question_tokens:?}"
            )));
        }
        Ok(QAPair {
            fact,
            question_tokens,
        })
    }

    pub fn question_text(&self) -> String {
        self.question_tokens.join(" ")
    }
}

/// Lowercases, splits on whitespace, detaches `?`, `,` and `.`, starts a new
/// token at each apostrophe, and forces a terminal `?`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            match ch {
                '?' | ',' | '.' => {
                    if !current.is_empty() {
                        tokens.push(std::mem::take(&mut current));
                    }
                    tokens.push(ch.to_string());
                }
                '\'' => {
                    if !current.is_empty() {
                        tokens.push(std::mem::take(&mut current));
                    }
                    current.push(ch);
                }
                _ => current.push(ch),
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    if tokens.last().map(String::as_str) != Some(EOS) {
        tokens.push(EOS.to_string());
    }
    tokens
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Iterates `(line_number, fields)` over non-blank lines of a TSV file.
pub(crate) fn tsv_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, Vec<String>)>>> {
    let reader = open(path)?;
    let owned = path.to_path_buf();
    Ok(reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(Error::io(&owned, e))),
            Ok(line) => {
                let line = line.strip_suffix('\r').unwrap_or(&line);
                if line.trim().is_empty() {
                    None
                } else {
                    Some(Ok((i + 1, line.split('\t').map(str::to_string).collect())))
                }
            }
        }))
}

#[derive(Clone, Debug, Default)]
pub struct SimpleQuestionsFile {
    pub pairs: Vec<QAPair>,
    /// Lines whose question field was empty.
    pub skipped_empty: usize,
}

/// Reads `subject<TAB>relationship<TAB>object<TAB>question` lines.
pub fn load_simplequestions(path: impl AsRef<Path>) -> Result<SimpleQuestionsFile> {
    let path = path.as_ref();
    let mut out = SimpleQuestionsFile::default();
    for row in tsv_lines(path)? {
        let (line, fields) = row?;
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields[3].trim().is_empty() {
            out.skipped_empty += 1;
            continue;
        }
        let fact = Fact::new(&fields[0], &fields[1], &fields[2])
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.pairs.push(QAPair::new(fact, tokenize(&fields[3]))?);
    }
    if out.skipped_empty > 0 {
        log::warn!(
            "{}: skipped {} lines with empty questions",
            path.display(),
            out.skipped_empty
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct TripleFile {
    pub facts: Vec<Fact>,
    pub duplicates: usize,
}

/// Reads `subject<TAB>relationship<TAB>object` lines, dropping repeats
/// (first occurrence wins, order preserved).
pub fn load_triples(path: impl AsRef<Path>) -> Result<TripleFile> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = TripleFile::default();
    for row in tsv_lines(path)? {
        let (line, fields) = row?;
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let fact = Fact::new(&fields[0], &fields[1], &fields[2])
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        if seen.insert(fact.clone()) {
            out.facts.push(fact);
        } else {
            out.duplicates += 1;
        }
    }
    Ok(out)
}

/// Optional `id<TAB>name` file giving the surface string of entities.
#[derive(Clone, Debug, Default)]
pub struct EntityNames {
    names: HashMap<String, String>,
}

impl EntityNames {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut names = HashMap::new();
        for row in tsv_lines(path)? {
            let (line, fields) = row?;
            if fields.len() != 2 {
                return Err(Error::parse(path, line, "expected `id<TAB>name`"));
            }
            names.insert(normalize_id(&fields[0]), fields[1].trim().to_string());
        }
        Ok(EntityNames { names })
    }

    pub fn insert(&mut self, id: &str, name: &str) {
        self.names.insert(normalize_id(id), name.to_string());
    }

    /// Surface string for an entity; without a registered name the id itself
    /// with underscores read as spaces (`bayuvi_dupki` → `bayuvi dupki`).
    pub fn subject_string(&self, id: &str) -> String {
        match self.names.get(id) {
            Some(name) => name.to_lowercase(),
            None => id.replace('_', " ").to_lowercase(),
        }
    }
}

/// Bijective token ↔ index map with contiguous indices from 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn with_reserved(reserved: &[&str]) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        for r in reserved {
            v.insert(r, 0);
        }
        v
    }

    /// Reserved layout for question-side vocabularies.
    pub fn output_reserved() -> Self {
        Self::with_reserved(&[UNK, BOS, EOS, SP_PLACEHOLDER])
    }

    pub fn input_reserved() -> Self {
        Self::with_reserved(&[UNK])
    }

    /// Adds `token` if absent; returns its index either way.
    pub fn insert(&mut self, token: &str, count: u64) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        self.counts.push(count);
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, falling back to `<unk>`.
    pub fn index_or_unk(&self, token: &str) -> usize {
        self.get(token)
            .or_else(|| self.get(UNK))
            .expect("vocabulary without <unk>")
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts.get(index).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_or_unk(t)).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }

    /// FNV-1a over the ordered token list; stable across platforms and builds.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.as_bytes().iter().chain(std::iter::once(&0u8)) {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// `index<TAB>token<TAB>count` lines.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{i}\t{t}\t{c}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut v = Vocabulary::with_reserved(&[]);
        for row in tsv_lines(path)? {
            let (line, fields) = row?;
            if fields.len() != 3 {
                return Err(Error::parse(path, line, "expected `index<TAB>token<TAB>count`"));
            }
            let index: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(path, line, "bad index"))?;
            let count: u64 = fields[2]
                .parse()
                .map_err(|_| Error::parse(path, line, "bad count"))?;
            if index != v.len() {
                return Err(Error::parse(path, line, "indices must be contiguous from 0"));
            }
            if v.get(&fields[1]).is_some() {
                return Err(Error::parse(path, line, format!("duplicate token `{}`", fields[1])));
            }
            v.insert(&fields[1], count);
        }
        Ok(v)
    }
}

/// Builds the input vocabulary (entities ∪ relationships) and the output
/// vocabulary (question tokens). Output tokens seen fewer than `min_count`
/// times are left out and therefore map to `<unk>`; placeholder tokens are
/// always kept.
pub fn build_vocabularies(pairs: &[QAPair], min_count: u64) -> Result<(Vocabulary, Vocabulary)> {
    if pairs.is_empty() {
        return Err(Error::contract("cannot build vocabularies from an empty corpus"));
    }
    let mut atoms: BTreeMap<&str, u64> = BTreeMap::new();
    let mut words: HashMap<&str, u64> = HashMap::new();
    for p in pairs {
        for a in [&p.fact.subject, &p.fact.relationship, &p.fact.object] {
            *atoms.entry(a.as_str()).or_default() += 1;
        }
        for t in &p.question_tokens {
            *words.entry(t.as_str()).or_default() += 1;
        }
    }

    let mut input = Vocabulary::input_reserved();
    for (a, c) in atoms {
        input.insert(a, c);
    }

    let mut output = Vocabulary::output_reserved();
    let mut ranked: Vec<(&str, u64)> = words.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    for (w, c) in ranked {
        if c >= min_count || is_placeholder_token(w) {
            let i = output.insert(w, c);
            output.counts[i] = c;
        }
    }
    Ok((input, output))
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<QAPair>,
    pub valid: Vec<QAPair>,
    pub test: Vec<QAPair>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetStats {
    pub questions: usize,
    pub entities: usize,
    pub relationships: usize,
    pub words: usize,
}

impl Dataset {
    pub fn load(train: impl AsRef<Path>, valid: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<Self> {
        Ok(Dataset {
            train: load_simplequestions(train)?.pairs,
            valid: load_simplequestions(valid)?.pairs,
            test: load_simplequestions(test)?.pairs,
        })
    }

    /// Loads `annotated_fb_data_{train,valid,test}.txt` from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let d = dir.as_ref();
        Self::load(
            d.join("annotated_fb_data_train.txt"),
            d.join("annotated_fb_data_valid.txt"),
            d.join("annotated_fb_data_test.txt"),
        )
    }

    /// Ok when no (fact, question) pair occurs in more than one split.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut owner: HashMap<&QAPair, &str> = HashMap::new();
        for (name, split) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            for p in split.iter() {
                if let Some(prev) = owner.insert(p, name) {
                    if prev != name {
                        return Err(Error::contract(format!(
                            "pair {:?} / `{}` appears in both {prev} and {name}",
                            p.fact,
                            p.question_text()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> DatasetStats {
        let mut entities = HashSet::new();
        let mut relationships = HashSet::new();
        let mut words = HashSet::new();
        let all = self.train.iter().chain(&self.valid).chain(&self.test);
        let mut questions = 0;
        for p in all {
            questions += 1;
            entities.insert(p.fact.subject.as_str());
            entities.insert(p.fact.object.as_str());
            relationships.insert(p.fact.relationship.as_str());
            for t in &p.question_tokens {
                words.insert(t.as_str());
            }
        }
        DatasetStats {
            questions,
            entities: entities.len(),
            relationships: relationships.len(),
            words: words.len(),
        }
    }
}

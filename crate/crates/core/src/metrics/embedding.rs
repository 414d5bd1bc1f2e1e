use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::dot;

/// Pretrained word vectors, stored unit-normalized.
#[derive(Clone, Debug, Default)]
pub struct WordVectorStore {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
}

impl WordVectorStore {
    pub fn new(dim: usize) -> Self {
        WordVectorStore {
            dim,
            ..Default::default()
        }
    }

    /// Adds or replaces a vector. Zero vectors have no direction and are rejected.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape {
                op: "word vector",
                left: vec![vector.len()],
                right: vec![self.dim],
            });
        }
        let norm = dot(&vector, &vector).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::contract(format!("word vector for `{token}` has no direction")));
        }
        let unit: Vec<f64> = vector.iter().map(|v| v / norm).collect();
        match self.index.get(token) {
            Some(&i) => self.vectors[i] = unit,
            None => {
                self.index.insert(token.to_string(), self.vectors.len());
                self.vectors.push(unit);
            }
        }
        Ok(())
    }

    /// Text format: `<count> <dim>` header, then `<token> <v1> … <vdim>`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let mut head = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(count)), Some(Ok(dim)), None) = (head.next(), head.next(), head.next()) else {
            return Err(Error::parse(path, 1, "header must be `<count> <dim>`"));
        };
        let mut store = WordVectorStore::new(dim);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let v = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(path, i + 2, "bad vector component"))?;
            store
                .insert(token, v)
                .map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        }
        if store.len() != count {
            log::warn!("{}: header says {count} vectors, read {}", path.display(), store.len());
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Unit vector for `token`, `None` when out of vocabulary.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingGreedy {
    /// In [0, 100].
    pub score: f64,
    /// Tokens of either sentence missing from the store.
    pub oov: usize,
}

/// Mean over `from` of the best (non-negative) cosine against any token of `to`.
fn directional(from: &[String], to: &[String], store: &WordVectorStore) -> (f64, usize) {
    let mut oov = 0;
    let mut total = 0.0;
    for a in from {
        let Some(va) = store.get(a) else {
            oov += 1;
            continue;
        };
        let best = to
            .iter()
            .filter_map(|b| {
                if a == b {
                    Some(1.0)
                } else {
                    store.get(b).map(|vb| dot(va, vb))
                }
            })
            .fold(0.0f64, f64::max);
        total += best.min(1.0);
    }
    (total / from.len() as f64, oov)
}

pub fn embedding_greedy_detail(
    candidate: &[String],
    reference: &[String],
    store: &WordVectorStore,
) -> Result<EmbeddingGreedy> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::contract("Emb. Greedy needs non-empty token lists"));
    }
    let (forward, oov_c) = directional(candidate, reference, store);
    let (backward, oov_r) = directional(reference, candidate, store);
    Ok(EmbeddingGreedy {
        score: 100.0 * (forward + backward) / 2.0,
        oov: oov_c + oov_r,
    })
}

/// Greedy word-alignment similarity averaged over both directions, in [0, 100].
pub fn embedding_greedy(candidate: &[String], reference: &[String], store: &WordVectorStore) -> Result<f64> {
    Ok(embedding_greedy_detail(candidate, reference, store)?.score)
}

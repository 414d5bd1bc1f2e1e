//! Translation-based knowledge-graph embeddings.
//!
//! A triple `(s, r, o)` scores `‖e_s + e_r − e_o‖₂`; true triples are pushed
//! below corrupted ones by a margin. Trained embeddings are frozen and
//! become the input embedding table of the question decoder.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngExt;

use crate::error::{Error, Result};
use crate::kb::Fact;
use crate::numerics::{seeded_rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeSampling {
    /// Replace head or tail (fair coin) with a uniformly drawn different entity.
    UniformHeadOrTail,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransEConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negative_sampling: NegativeSampling,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            dim: 200,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 100,
            negative_sampling: NegativeSampling::UniformHeadOrTail,
            seed: 0,
        }
    }
}

impl TransEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("transe dim must be >= 1".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("transe margin must be > 0".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("transe learning rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Ordered id list with a reverse index.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct IdTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdTable {
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(Error::contract(format!("invalid embedding id `{id}`")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate embedding id `{id}`")));
            }
        }
        Ok(IdTable { ids, index })
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransEModel {
    pub entities: IdTable,
    pub relationships: IdTable,
    /// `|entities| × dim`
    pub entity_embeddings: Tensor,
    /// `|relationships| × dim`
    pub relationship_embeddings: Tensor,
}

fn project_to_unit_ball(row: &mut [f64]) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

fn normalize(row: &mut [f64]) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

impl TransEModel {
    pub fn dim(&self) -> usize {
        self.entity_embeddings.cols()
    }

    pub fn entity(&self, id: &str) -> Result<&[f64]> {
        let i = self.entities.get(id).ok_or_else(|| Error::Lookup {
            role: "entity",
            id: id.to_string(),
        })?;
        Ok(self.entity_embeddings.row(i))
    }

    pub fn relationship(&self, id: &str) -> Result<&[f64]> {
        let i = self.relationships.get(id).ok_or_else(|| Error::Lookup {
            role: "relationship",
            id: id.to_string(),
        })?;
        Ok(self.relationship_embeddings.row(i))
    }

    /// `‖e_s + e_r − e_o‖₂`.
    pub fn energy(&self, fact: &Fact) -> Result<f64> {
        let s = self.entity(&fact.subject)?;
        let r = self.relationship(&fact.relationship)?;
        let o = self.entity(&fact.object)?;
        Ok(energy_of(s, r, o))
    }

    pub fn max_entity_norm(&self) -> f64 {
        (0..self.entities.len())
            .map(|i| {
                self.entity_embeddings
                    .row(i)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// The `k` entities closest to `entity` in Euclidean distance, self
    /// excluded, ties broken by table order.
    pub fn nearest_neighbors(&self, entity: &str, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::contract("k must be >= 1"));
        }
        let query = self.entities.get(entity).ok_or_else(|| Error::Lookup {
            role: "entity",
            id: entity.to_string(),
        })?;
        let q = self.entity_embeddings.row(query);
        let mut scored: Vec<(usize, f64)> = (0..self.entities.len())
            .filter(|&i| i != query)
            .map(|i| {
                let d = self
                    .entity_embeddings
                    .row(i)
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (i, d)
            })
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, d)| (self.entities.id(i).to_string(), d))
            .collect())
    }

    pub fn save(&self, entities_path: impl AsRef<Path>, relationships_path: impl AsRef<Path>) -> Result<()> {
        write_embeddings(entities_path, &self.entities, &self.entity_embeddings)?;
        write_embeddings(relationships_path, &self.relationships, &self.relationship_embeddings)
    }

    pub fn load(entities_path: impl AsRef<Path>, relationships_path: impl AsRef<Path>) -> Result<Self> {
        let (entities, entity_embeddings) = read_embeddings(entities_path)?;
        let (relationships, relationship_embeddings) = read_embeddings(relationships_path)?;
        if entity_embeddings.cols() != relationship_embeddings.cols() {
            return Err(Error::Shape {
                op: "transe load",
                left: entity_embeddings.shape().to_vec(),
                right: relationship_embeddings.shape().to_vec(),
            });
        }
        Ok(TransEModel {
            entities,
            relationships,
            entity_embeddings,
            relationship_embeddings,
        })
    }
}

pub fn energy_of(s: &[f64], r: &[f64], o: &[f64]) -> f64 {
    s.iter()
        .zip(r)
        .zip(o)
        .map(|((a, b), c)| {
            let d = a + b - c;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `max(0, margin + f(positive) − f(corrupted))`.
pub fn margin_ranking_loss(model: &TransEModel, positive: &Fact, corrupted: &Fact, margin: f64) -> Result<f64> {
    Ok((margin + model.energy(positive)? - model.energy(corrupted)?).max(0.0))
}

/// Unit gradient of `‖s + r − o‖` with respect to `s` (and `r`; `o` gets the negation).
fn energy_direction(s: &[f64], r: &[f64], o: &[f64], out: &mut [f64]) {
    let mut norm = 0.0;
    for (((g, a), b), c) in out.iter_mut().zip(s).zip(r).zip(o) {
        *g = a + b - c;
        norm += *g * *g;
    }
    let norm = norm.sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|g| *g /= norm);
    } else {
        out.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// SGD on the margin-ranking loss with one corrupted triple per positive.
/// Deterministic for a fixed seed.
pub fn train_transe(triples: &[Fact], config: &TransEConfig) -> Result<TransEModel> {
    config.validate()?;
    if triples.is_empty() {
        return Err(Error::contract("TransE needs at least one triple"));
    }
    let entity_set: BTreeSet<&str> = triples
        .iter()
        .flat_map(|f| [f.subject.as_str(), f.object.as_str()])
        .collect();
    let relationship_set: BTreeSet<&str> = triples.iter().map(|f| f.relationship.as_str()).collect();
    let entities = IdTable::from_ids(entity_set.into_iter().map(String::from).collect())?;
    let relationships = IdTable::from_ids(relationship_set.into_iter().map(String::from).collect())?;

    let dim = config.dim;
    let bound = 6.0 / (dim as f64).sqrt();
    let mut rng = seeded_rng(config.seed);
    let mut ent = Tensor::uniform(&[entities.len(), dim], bound, &mut rng);
    let mut rel = Tensor::uniform(&[relationships.len(), dim], bound, &mut rng);
    for i in 0..relationships.len() {
        normalize(rel.row_mut(i));
    }
    for i in 0..entities.len() {
        project_to_unit_ball(ent.row_mut(i));
    }

    let encoded: Vec<(usize, usize, usize)> = triples
        .iter()
        .map(|f| {
            (
                entities.get(&f.subject).unwrap(),
                relationships.get(&f.relationship).unwrap(),
                entities.get(&f.object).unwrap(),
            )
        })
        .collect();

    let n_ent = entities.len();
    let lr = config.learning_rate;
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut g_pos = vec![0.0; dim];
    let mut g_neg = vec![0.0; dim];
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &t in &order {
            let (s, r, o) = encoded[t];
            let corrupt_head = rng.random_bool(0.5);
            let mut replacement = rng.random_range(0..n_ent);
            let original = if corrupt_head { s } else { o };
            if n_ent > 1 {
                while replacement == original {
                    replacement = rng.random_range(0..n_ent);
                }
            }
            let (ns, no) = if corrupt_head { (replacement, o) } else { (s, replacement) };

            let pos = energy_of(ent.row(s), rel.row(r), ent.row(o));
            let neg = energy_of(ent.row(ns), rel.row(r), ent.row(no));
            let loss = config.margin + pos - neg;
            if loss <= 0.0 {
                continue;
            }
            epoch_loss += loss;
            energy_direction(ent.row(s), rel.row(r), ent.row(o), &mut g_pos);
            energy_direction(ent.row(ns), rel.row(r), ent.row(no), &mut g_neg);

            // d loss = d f(pos) − d f(neg)
            let updates: [(usize, f64, &[f64]); 4] = [
                (s, 1.0, &g_pos),
                (o, -1.0, &g_pos),
                (ns, -1.0, &g_neg),
                (no, 1.0, &g_neg),
            ];
            for (row, sign, g) in updates {
                ent.row_mut(row)
                    .iter_mut()
                    .zip(g)
                    .for_each(|(v, gi)| *v -= lr * sign * gi);
            }
            rel.row_mut(r)
                .iter_mut()
                .zip(g_pos.iter().zip(&g_neg))
                .for_each(|(v, (gp, gn))| *v -= lr * (gp - gn));
        }
        for i in 0..n_ent {
            project_to_unit_ball(ent.row_mut(i));
        }
        if !ent.is_finite() || !rel.is_finite() {
            return Err(Error::Divergence {
                step: epoch,
                reason: "non-finite TransE embedding".into(),
            });
        }
        log::debug!("transe epoch {epoch}: loss {epoch_loss:.6}");
    }

    Ok(TransEModel {
        entities,
        relationships,
        entity_embeddings: ent,
        relationship_embeddings: rel,
    })
}

/// First line `<count> <dim>`, then `<id> <v1> … <vdim>`.
pub fn write_embeddings(path: impl AsRef<Path>, ids: &IdTable, table: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", ids.len(), table.cols()).map_err(io)?;
    for i in 0..ids.len() {
        write!(w, "{}", ids.id(i)).map_err(io)?;
        for v in table.row(i) {
            write!(w, " {v:?}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(IdTable, Tensor)> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing `<count> <dim>` header")),
    };
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, 1, "bad header"))?;
    let [count, dim] = head[..] else {
        return Err(Error::parse(path, 1, "header must be `<count> <dim>`"));
    };
    let mut ids = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().unwrap().to_string();
        let before = data.len();
        for p in parts {
            data.push(
                p.parse::<f64>()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad value `{p}`")))?,
            );
        }
        if data.len() - before != dim {
            return Err(Error::parse(path, i + 1, format!("expected {dim} values")));
        }
        ids.push(id);
    }
    if ids.len() != count {
        return Err(Error::parse(path, 1, format!("header says {count} rows, found {}", ids.len())));
    }
    if count == 0 {
        return Err(Error::parse(path, 1, "empty embedding table"));
    }
    let table = Tensor::matrix(count, dim, data).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    Ok((IdTable::from_ids(ids)?, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_2d(ents: &[(&str, [f64; 2])], rels: &[(&str, [f64; 2])]) -> TransEModel {
        let table = |rows: &[(&str, [f64; 2])]| {
            (
                IdTable::from_ids(rows.iter().map(|r| r.0.to_string()).collect()).unwrap(),
                Tensor::matrix(rows.len(), 2, rows.iter().flat_map(|r| r.1).collect()).unwrap(),
            )
        };
        let (entities, entity_embeddings) = table(ents);
        let (relationships, relationship_embeddings) = table(rels);
        TransEModel {
            entities,
            relationships,
            entity_embeddings,
            relationship_embeddings,
        }
    }

    #[test]
    fn energy_examples() {
        let m = model_2d(&[("s", [1.0, 0.0]), ("o", [1.0, 1.0]), ("p", [1.0, 0.0])], &[("r", [0.0, 1.0])]);
        assert_eq!(m.energy(&Fact::new("s", "r", "o").unwrap()).unwrap(), 0.0);
        assert_eq!(m.energy(&Fact::new("s", "r", "p").unwrap()).unwrap(), 1.0);
        let z = model_2d(&[("a", [0.0, 0.0])], &[("r", [0.0, 0.0])]);
        assert_eq!(z.energy(&Fact::new("a", "r", "a").unwrap()).unwrap(), 0.0);
        let err = m.energy(&Fact::new("nope", "r", "o").unwrap()).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let triples = vec![Fact::new("a", "r", "b").unwrap()];
        let cfg = TransEConfig {
            dim: 8,
            learning_rate: 0.0,
            epochs: 1,
            ..Default::default()
        };
        let trained = train_transe(&triples, &cfg).unwrap();
        let init = train_transe(&triples, &TransEConfig { epochs: 0, ..cfg }).unwrap();
        assert_eq!(trained, init);
    }

    #[test]
    fn deterministic_for_seed() {
        let triples: Vec<Fact> = (0..6)
            .map(|i| Fact::new(&format!("e{i}"), "r", &format!("e{}", (i + 1) % 6)).unwrap())
            .collect();
        let cfg = TransEConfig {
            dim: 5,
            epochs: 10,
            seed: 3,
            ..Default::default()
        };
        assert_eq!(train_transe(&triples, &cfg).unwrap(), train_transe(&triples, &cfg).unwrap());
        assert!(train_transe(&[], &cfg).is_err());
    }

    #[test]
    fn nearest_neighbor_examples() {
        let m = model_2d(&[("a", [0.0, 0.0]), ("b", [1.0, 0.0])], &[("r", [0.0, 0.0])]);
        assert_eq!(m.nearest_neighbors("a", 1).unwrap(), vec![("b".into(), 1.0)]);
        let m = model_2d(
            &[("far", [2.0, 0.0]), ("origin", [0.0, 0.0]), ("near", [0.0, 1.0]), ("tie", [0.0, -1.0])],
            &[("r", [0.0, 0.0])],
        );
        let nn = m.nearest_neighbors("origin", 3).unwrap();
        let ids: Vec<&str> = nn.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, ["near", "tie", "far"]);
        assert!(m.nearest_neighbors("ghost", 1).is_err());
        assert!(m.nearest_neighbors("origin", 0).is_err());
    }

    #[test]
    fn embedding_file_round_trip() {
        let triples: Vec<Fact> = (0..4)
            .map(|i| Fact::new(&format!("m.e{i}"), "people.person.nationality", "m.x").unwrap())
            .collect();
        let m = train_transe(&triples, &TransEConfig { dim: 7, epochs: 3, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (e, r) = (dir.path().join("e.txt"), dir.path().join("r.txt"));
        m.save(&e, &r).unwrap();
        assert_eq!(TransEModel::load(&e, &r).unwrap(), m);
        let header = std::fs::read_to_string(&e).unwrap();
        assert!(header.starts_with("5 7\n"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn energy_translation_symmetric(
                s in prop::array::uniform3(-2.0f64..2.0),
                r in prop::array::uniform3(-2.0f64..2.0),
                o in prop::array::uniform3(-2.0f64..2.0),
                c in prop::array::uniform3(-5.0f64..5.0),
            ) {
                let shifted_s: Vec<f64> = s.iter().zip(&c).map(|(a, b)| a + b).collect();
                let shifted_o: Vec<f64> = o.iter().zip(&c).map(|(a, b)| a + b).collect();
                let e0 = energy_of(&s, &r, &o);
                let e1 = energy_of(&shifted_s, &r, &shifted_o);
                prop_assert!(e0 >= 0.0);
                prop_assert!((e0 - e1).abs() <= 1e-12);
            }

            #[test]
            fn entity_norms_bounded_after_training(seed in 0u64..50, epochs in 1usize..6) {
                let triples: Vec<Fact> = (0..5)
                    .map(|i| Fact::new(&format!("e{i}"), &format!("r{}", i % 2), &format!("e{}", (i + 2) % 5)).unwrap())
                    .collect();
                let cfg = TransEConfig { dim: 4, epochs, seed, learning_rate: 0.5, ..Default::default() };
                let m = train_transe(&triples, &cfg).unwrap();
                prop_assert!(m.max_entity_norm() <= 1.0 + 1e-9);
                let loss = margin_ranking_loss(&m, &triples[0], &triples[1], 1.0).unwrap();
                prop_assert!(loss >= 0.0);
            }
        }
    }
}

//! Template baseline: reuse a random training question that shares the
//! fact's relationship, with the new subject substituted for the placeholder.

use std::collections::BTreeMap;

use rand::RngExt;

use crate::error::{Error, Result};
use crate::kb::{Fact, QAPair};
use crate::numerics::seeded_rng;
use crate::placeholder::{is_placeholder_token, restore};

/// Relationship → placeholderized questions from the training split, in
/// training order, duplicates kept.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemplateIndex {
    templates: BTreeMap<String, Vec<Vec<String>>>,
    /// Questions dropped for not carrying exactly one placeholder.
    pub rejected: usize,
}

impl TemplateIndex {
    pub fn templates(&self, relationship: &str) -> Option<&[Vec<String>]> {
        self.templates.get(relationship).map(Vec::as_slice)
    }

    pub fn relationships(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn template_count(&self) -> usize {
        self.templates.values().map(Vec::len).sum()
    }
}

/// Expects SP-placeholderized pairs.
pub fn build_template_index(training_pairs: &[QAPair]) -> TemplateIndex {
    let mut index = TemplateIndex::default();
    for p in training_pairs {
        let placeholders = p.question_tokens.iter().filter(|t| is_placeholder_token(t)).count();
        if placeholders != 1 {
            index.rejected += 1;
            continue;
        }
        index
            .templates
            .entry(p.fact.relationship.clone())
            .or_default()
            .push(p.question_tokens.clone());
    }
    index
}

/// Index of the template `seed` selects among `n`.
pub fn template_choice(n: usize, seed: u64) -> usize {
    seeded_rng(seed).random_range(0..n)
}

/// A uniformly drawn template for `fact.relationship` with `subject`
/// (tokenized) in place of the placeholder.
pub fn sample_question(fact: &Fact, index: &TemplateIndex, seed: u64, subject: &str) -> Result<Vec<String>> {
    let templates = index
        .templates(&fact.relationship)
        .ok_or_else(|| Error::UnseenRelationship(fact.relationship.clone()))?;
    let template = &templates[template_choice(templates.len(), seed)];
    Ok(restore(template, subject).tokens)
}

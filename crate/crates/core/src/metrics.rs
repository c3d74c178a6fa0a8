//! Strict micro-averaged precision, recall and F1 for entities and relations.
//!
//! An entity counts when its span and type match a gold mention; a relation
//! counts when its type and both endpoints (span and type) match. Each gold
//! mention can be matched at most once.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Document, SpanRef};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub correct: usize,
    pub pred: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(correct: usize, pred: usize, gold: usize) -> Self {
        let p = if pred == 0 { 0.0 } else { correct as f64 / pred as f64 };
        let r = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf { p, r, f1, correct, pred, gold }
    }
}

/// Size of the multiset intersection.
pub fn multiset_matches<T: Eq + Hash>(pred: impl IntoIterator<Item = T>, gold: impl IntoIterator<Item = T>) -> usize {
    let mut left: HashMap<T, usize> = HashMap::new();
    for g in gold {
        *left.entry(g).or_default() += 1;
    }
    let mut hits = 0;
    for p in pred {
        if let Some(n) = left.get_mut(&p) {
            if *n > 0 {
                *n -= 1;
                hits += 1;
            }
        }
    }
    hits
}

pub type EntityKey = (SpanRef, String);
pub type RelationKey = (SpanRef, String, SpanRef, String, String);

pub fn entity_keys(doc: &Document) -> Vec<EntityKey> {
    doc.entities.iter().map(|e| (e.span, e.label.clone())).collect()
}

pub fn relation_keys(doc: &Document) -> Vec<RelationKey> {
    doc.relations
        .iter()
        .map(|r| {
            let (s, o) = (&doc.entities[r.subject], &doc.entities[r.object]);
            (s.span, s.label.clone(), o.span, o.label.clone(), r.label.clone())
        })
        .collect()
}

fn check_aligned(pred: &[Document], gold: &[Document]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Validation {
            doc_id: String::new(),
            message: format!("{} predicted documents for {} gold documents", pred.len(), gold.len()),
        });
    }
    for (p, g) in pred.iter().zip(gold) {
        if p.doc_id != g.doc_id {
            return Err(Error::Validation {
                doc_id: p.doc_id.clone(),
                message: format!("expected document {:?} at this position", g.doc_id),
            });
        }
    }
    Ok(())
}

fn score_with<T: Eq + Hash>(pred: &[Document], gold: &[Document], keys: impl Fn(&Document) -> Vec<T>) -> Result<Prf> {
    check_aligned(pred, gold)?;
    let (mut c, mut np, mut ng) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let (kp, kg) = (keys(p), keys(g));
        np += kp.len();
        ng += kg.len();
        c += multiset_matches(kp, kg);
    }
    Ok(Prf::from_counts(c, np, ng))
}

pub fn score_ner(pred: &[Document], gold: &[Document]) -> Result<Prf> {
    score_with(pred, gold, entity_keys)
}

pub fn score_re(pred: &[Document], gold: &[Document]) -> Result<Prf> {
    score_with(pred, gold, relation_keys)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ner: Prf,
    pub re: Prf,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl MetricsReport {
    pub fn evaluate(pred: &[Document], gold: &[Document]) -> Result<Self> {
        Ok(MetricsReport { ner: score_ner(pred, gold)?, re: score_re(pred, gold)?, meta: BTreeMap::new() })
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.meta.insert(key.to_owned(), value.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Aligned table with precision, recall and F1 per task, in percent.
    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<6} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}", "task", "precision", "recall", "f1", "correct", "pred", "gold").unwrap();
        for (name, m) in [("NER", &self.ner), ("RE", &self.re)] {
            writeln!(
                out,
                "{:<6} {:>9.2} {:>9.2} {:>9.2} {:>8} {:>8} {:>8}",
                name,
                100.0 * m.p,
                100.0 * m.r,
                100.0 * m.f1,
                m.correct,
                m.pred,
                m.gold
            )
            .unwrap();
        }
        out
    }
}

//! Domain types shared by every stage: label schema, spans, mentions and
//! documents, plus the JSON-lines corpus format.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_SPAN_WIDTH: usize = 16;

fn default_max_span_width() -> usize {
    DEFAULT_MAX_SPAN_WIDTH
}

/// Ordered entity and relation type names. Classifier heads reserve index 0
/// for the null label, so type `i` maps to class `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub entity_types: Vec<String>,
    pub relation_types: Vec<String>,
    #[serde(default = "default_max_span_width")]
    pub max_span_width: usize,
}

impl LabelSchema {
    pub fn new(entity_types: Vec<String>, relation_types: Vec<String>, max_span_width: usize) -> Result<Self> {
        let schema = LabelSchema { entity_types, relation_types, max_span_width };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, list) in [("entity_types", &self.entity_types), ("relation_types", &self.relation_types)] {
            if list.is_empty() {
                return Err(Error::Schema(format!("{what} is empty")));
            }
            let mut seen = HashSet::new();
            for name in list {
                if name.is_empty() {
                    return Err(Error::Schema(format!("{what} contains an empty name")));
                }
                if !seen.insert(name) {
                    return Err(Error::Schema(format!("{what} lists {name:?} twice")));
                }
            }
        }
        if self.max_span_width == 0 {
            return Err(Error::Schema("max_span_width must be positive".into()));
        }
        Ok(())
    }

    /// Classifier class of an entity type (null = 0).
    pub fn entity_class(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name).map(|i| i + 1)
    }

    pub fn relation_class(&self, name: &str) -> Option<usize> {
        self.relation_types.iter().position(|t| t == name).map(|i| i + 1)
    }

    /// Number of entity classes including null.
    pub fn entity_classes(&self) -> usize {
        self.entity_types.len() + 1
    }

    pub fn relation_classes(&self) -> usize {
        self.relation_types.len() + 1
    }

    pub fn entity_name(&self, class: usize) -> Option<&str> {
        class.checked_sub(1).and_then(|i| self.entity_types.get(i)).map(String::as_str)
    }

    pub fn relation_name(&self, class: usize) -> Option<&str> {
        class.checked_sub(1).and_then(|i| self.relation_types.get(i)).map(String::as_str)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::file(path))?;
        let schema: LabelSchema =
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_owned(), line: e.line(), message: e.to_string() })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(Error::file(path))
    }
}

/// Inclusive token range `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpanRef {
    pub start: usize,
    pub end: usize,
}

impl SpanRef {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        SpanRef { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    #[serde(flatten)]
    pub span: SpanRef,
    #[serde(rename = "type")]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationMention {
    pub subject: usize,
    pub object: usize,
    #[serde(rename = "type")]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<EntityMention>,
    #[serde(default)]
    pub relations: Vec<RelationMention>,
}

impl Document {
    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        let fail = |message: String| Err(Error::Validation { doc_id: self.doc_id.clone(), message });
        let n = self.tokens.len();
        for (i, e) in self.entities.iter().enumerate() {
            let SpanRef { start, end } = e.span;
            if start > end || end >= n {
                return fail(format!("entity {i} span ({start},{end}) is outside the {n}-token sequence"));
            }
            if e.span.width() > schema.max_span_width {
                return fail(format!("entity {i} span ({start},{end}) is wider than the maximum of {}", schema.max_span_width));
            }
            if schema.entity_class(&e.label).is_none() {
                return fail(format!("entity {i} has unknown type {:?}", e.label));
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            let m = self.entities.len();
            if r.subject >= m || r.object >= m {
                return fail(format!("relation {i} references entity ({},{}) but only {m} exist", r.subject, r.object));
            }
            if r.subject == r.object {
                return fail(format!("relation {i} links entity {} to itself", r.subject));
            }
            if schema.relation_class(&r.label).is_none() {
                return fail(format!("relation {i} has unknown type {:?}", r.label));
            }
        }
        Ok(())
    }

    pub fn entity_text(&self, e: &EntityMention) -> String {
        self.tokens[e.span.start..=e.span.end].concat()
    }
}

/// Reads a JSON-lines corpus and validates every record. Blank lines are
/// ignored.
pub fn load_corpus(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(Error::file(path))?;
    read_corpus(BufReader::new(file), path, schema)
}

pub fn read_corpus(reader: impl BufRead, path: &Path, schema: &LabelSchema) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| Error::Parse { path: path.to_owned(), line: i + 1, message: e.to_string() })?;
        doc.validate(schema)?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(mut out: impl Write, docs: &[Document]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_corpus(&mut buf, docs)?;
    fs::write(path, buf).map_err(Error::file(path))
}

/// Seeded partition into `(train, held_out)` with `floor((1 - ratio) · n)`
/// held-out documents. Both parts keep the input order.
pub fn split_corpus(docs: Vec<Document>, ratio: f64, seed: u64) -> Result<(Vec<Document>, Vec<Document>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = docs.len();
    let held = ((1.0 - ratio) * n as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_held = vec![false; n];
    for &i in &order[..held] {
        is_held[i] = true;
    }
    let (mut train, mut held_out) = (Vec::with_capacity(n - held), Vec::with_capacity(held));
    for (doc, h) in docs.into_iter().zip(is_held) {
        if h {
            held_out.push(doc);
        } else {
            train.push(doc);
        }
    }
    Ok((train, held_out))
}

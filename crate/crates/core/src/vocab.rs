//! Token ↔ id mapping with the reserved marker tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::Document;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
/// Levitated span-start marker.
pub const LEV_OPEN: &str = "[O]";
/// Levitated span-end marker.
pub const LEV_CLOSE: &str = "[/O]";
/// Solid subject-start marker.
pub const SOLID_OPEN: &str = "[S]";
/// Solid subject-end marker.
pub const SOLID_CLOSE: &str = "[/S]";

const SPECIALS: [&str; 6] = [PAD, UNK, LEV_OPEN, LEV_CLOSE, SOLID_OPEN, SOLID_CLOSE];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK_ID: usize = 1;
    pub const LEV_OPEN_ID: usize = 2;
    pub const LEV_CLOSE_ID: usize = 3;
    pub const SOLID_OPEN_ID: usize = 4;
    pub const SOLID_CLOSE_ID: usize = 5;

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(Error::Checkpoint("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("vocabulary lists {t:?} twice")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Reserved tokens followed by every distinct token of `docs` and
    /// `extra`, in first-seen order.
    pub fn build<'a>(docs: &'a [Document], extra: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        let all = docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)).chain(extra);
        for t in all {
            if !index.contains_key(t) {
                index.insert(t.to_owned(), tokens.len());
                tokens.push(t.to_owned());
            }
        }
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(Error::file(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::file(path))?;
        Vocab::from_tokens(text.lines().map(str::to_owned).collect())
    }
}

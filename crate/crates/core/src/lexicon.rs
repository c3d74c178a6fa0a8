//! Drug-name dictionary and the span-match mask it induces over a sentence.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A set of tokenised terms.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    terms: HashSet<Vec<String>>,
    max_term_len: usize,
}

/// Splits one lexicon line into tokens: whitespace-separated when the line
/// contains whitespace, otherwise one token per character.
pub fn tokenize_term(line: &str) -> Vec<String> {
    let line = line.trim();
    if line.chars().any(char::is_whitespace) {
        line.split_whitespace().map(str::to_owned).collect()
    } else {
        line.chars().map(String::from).collect()
    }
}

impl Lexicon {
    pub fn from_terms<I, T>(terms: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<Vec<String>>,
    {
        let mut lex = Lexicon::default();
        for t in terms {
            lex.insert(t.into());
        }
        lex
    }

    pub fn parse(text: &str) -> Self {
        Lexicon::from_terms(text.lines().map(tokenize_term))
    }

    pub fn insert(&mut self, term: Vec<String>) -> bool {
        if term.is_empty() {
            return false;
        }
        self.max_term_len = self.max_term_len.max(term.len());
        self.terms.insert(term)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_term_len(&self) -> usize {
        self.max_term_len
    }

    pub fn contains(&self, tokens: &[String]) -> bool {
        self.terms.contains(tokens)
    }

    /// Terms in sorted order.
    pub fn sorted_terms(&self) -> Vec<&Vec<String>> {
        let mut v: Vec<_> = self.terms.iter().collect();
        v.sort();
        v
    }

    /// One term per line; multi-character tokens are space-separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in self.sorted_terms() {
            if t.iter().all(|tok| tok.chars().count() == 1) {
                out.push_str(&t.concat());
            } else {
                out.push_str(&t.join(" "));
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::file(path))?;
    Ok(Lexicon::parse(&text))
}

/// `n × n` indicator: entry `(a, b)` is set iff `tokens[a..=b]` is a lexicon
/// term.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn zeros(n: usize) -> Self {
        MaskMatrix { n, bits: vec![false; n * n] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        self.bits[a * self.n + b]
    }

    pub fn set(&mut self, a: usize, b: usize) {
        self.bits[a * self.n + b] = true;
    }

    /// All set `(a, b)` pairs in row-major order.
    pub fn matches(&self) -> Vec<(usize, usize)> {
        (0..self.n).flat_map(|a| (0..self.n).map(move |b| (a, b))).filter(|&(a, b)| self.get(a, b)).collect()
    }

    pub fn row_sum(&self, a: usize) -> usize {
        self.bits[a * self.n..(a + 1) * self.n].iter().filter(|&&b| b).count()
    }

    pub fn row_is_empty(&self, a: usize) -> bool {
        self.row_sum(a) == 0
    }
}

/// Exact matching of every term at every start position.
pub fn build_mask(tokens: &[String], lex: &Lexicon) -> MaskMatrix {
    let n = tokens.len();
    let mut mask = MaskMatrix::zeros(n);
    for a in 0..n {
        for len in 1..=lex.max_term_len().min(n - a) {
            if lex.contains(&tokens[a..a + len]) {
                mask.set(a, a + len - 1);
            }
        }
    }
    mask
}

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embeddings::{EmbeddingTable, NOCOMP_INDEX};
use crate::error::{EmberError, Result};

/// One reader-facing part of a news item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    Headline,
    Images,
    Comments,
    Body,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 4] = [
        ComponentKind::Headline,
        ComponentKind::Images,
        ComponentKind::Comments,
        ComponentKind::Body,
    ];

    pub fn letter(&self) -> char {
        match self {
            ComponentKind::Headline => 'H',
            ComponentKind::Images => 'I',
            ComponentKind::Comments => 'C',
            ComponentKind::Body => 'B',
        }
    }

    pub fn from_letter(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'H' => Ok(ComponentKind::Headline),
            'I' => Ok(ComponentKind::Images),
            'C' => Ok(ComponentKind::Comments),
            'B' => Ok(ComponentKind::Body),
            other => Err(EmberError::Config(format!(
                "unknown component letter '{other}'; expected one of H, I, C, B"
            ))),
        }
    }

    /// Parse a compact component-set string such as "HICB".
    pub fn parse_set(s: &str) -> Result<Vec<ComponentKind>> {
        let kinds: Result<Vec<ComponentKind>> = s.chars().map(ComponentKind::from_letter).collect();
        let kinds = kinds?;
        let unique: HashSet<ComponentKind> = kinds.iter().copied().collect();
        if unique.len() != kinds.len() {
            return Err(EmberError::Config(format!("duplicate component in '{s}'")));
        }
        Ok(kinds)
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// One article: pre-tokenized components plus a binary label
/// (0 fake, 1 real). Missing components are empty lists; they are replaced
/// with a placeholder sequence at encoding time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub label: u8,
    /// Exactly one sentence.
    pub headline: Vec<String>,
    /// Sentences of the body text.
    #[serde(default)]
    pub body: Vec<Vec<String>>,
    /// Reader comments, each a token list.
    #[serde(default)]
    pub comments: Vec<Vec<String>>,
    /// Identifiers into the image-feature table.
    #[serde(default)]
    pub image_refs: Vec<String>,
}

impl NewsItem {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(EmberError::InvalidLabel {
                value: self.label as f64,
            });
        }
        Ok(())
    }

    /// Build an item from raw text using the crate's tokenization rules.
    pub fn from_raw_text(
        id: impl Into<String>,
        label: u8,
        headline: &str,
        body: &str,
        comments: &[&str],
        image_refs: Vec<String>,
    ) -> Self {
        let mut headline_sentences = tokenize_sentences(headline);
        let headline = if headline_sentences.is_empty() {
            Vec::new()
        } else {
            // Headlines are one sentence; extra sentences fold into the first.
            headline_sentences.drain(..).flatten().collect()
        };
        NewsItem {
            id: id.into(),
            label,
            headline,
            body: tokenize_sentences(body),
            comments: comments.iter().map(|c| tokenize(c)).collect(),
            image_refs,
        }
    }
}

/// Lowercased alphanumeric tokenization; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Split on '.', '!', '?' followed by whitespace (or end of text), then
/// tokenize each sentence. Empty sentences are dropped.
pub fn tokenize_sentences(text: &str) -> Vec<Vec<String>> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let is_terminal = matches!(chars[i], '.' | '!' | '?');
        let at_boundary =
            i + 1 == chars.len() || chars.get(i + 1).is_none_or(|c| c.is_whitespace());
        if is_terminal && at_boundary {
            let sentence: String = chars[start..=i].iter().collect();
            let tokens = tokenize(&sentence);
            if !tokens.is_empty() {
                sentences.push(tokens);
            }
            start = i + 1;
        }
    }
    if start < chars.len() {
        let sentence: String = chars[start..].iter().collect();
        let tokens = tokenize(&sentence);
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    sentences
}

/// Upper bounds applied when an item is encoded. Longer inputs are truncated.
#[derive(Clone, Copy, Debug)]
pub struct TruncationCaps {
    pub tokens_per_sentence: usize,
    pub body_sentences: usize,
    pub comments: usize,
    pub images: usize,
}

impl Default for TruncationCaps {
    fn default() -> Self {
        TruncationCaps {
            tokens_per_sentence: 32,
            body_sentences: 16,
            comments: 16,
            images: 4,
        }
    }
}

/// An item resolved against a vocabulary: token indices instead of strings,
/// truncation caps applied, and absent components replaced by a single
/// placeholder token so every pair combination stays well-defined.
#[derive(Clone, Debug)]
pub struct EncodedItem {
    pub id: String,
    pub label: u8,
    pub headline: Vec<usize>,
    pub body: Vec<Vec<usize>>,
    pub comments: Vec<Vec<usize>>,
    pub image_refs: Vec<String>,
}

impl EncodedItem {
    pub fn encode(item: &NewsItem, table: &EmbeddingTable, caps: &TruncationCaps) -> Result<Self> {
        item.validate()?;
        let encode_sentence = |tokens: &[String]| -> Vec<usize> {
            tokens
                .iter()
                .take(caps.tokens_per_sentence)
                .map(|t| table.index_of(t))
                .collect()
        };

        let headline = if item.headline.is_empty() {
            vec![NOCOMP_INDEX]
        } else {
            encode_sentence(&item.headline)
        };

        let body: Vec<Vec<usize>> = item
            .body
            .iter()
            .filter(|s| !s.is_empty())
            .take(caps.body_sentences)
            .map(|s| encode_sentence(s))
            .collect();
        let body = if body.is_empty() {
            vec![vec![NOCOMP_INDEX]]
        } else {
            body
        };

        let comments: Vec<Vec<usize>> = item
            .comments
            .iter()
            .filter(|c| !c.is_empty())
            .take(caps.comments)
            .map(|c| encode_sentence(c))
            .collect();
        let comments = if comments.is_empty() {
            vec![vec![NOCOMP_INDEX]]
        } else {
            comments
        };

        let image_refs: Vec<String> = item.image_refs.iter().take(caps.images).cloned().collect();

        Ok(EncodedItem {
            id: item.id.clone(),
            label: item.label,
            headline,
            body,
            comments,
            image_refs,
        })
    }
}

/// Read a line-delimited corpus: one JSON record per line, UTF-8.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<NewsItem>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|_| EmberError::MissingFile {
        path: path.display().to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: NewsItem = serde_json::from_str(&line).map_err(|e| EmberError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        item.validate().map_err(|e| EmberError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(item.id.clone()) {
            return Err(EmberError::DuplicateId { id: item.id });
        }
        items.push(item);
    }
    Ok(items)
}

/// Write a corpus in the canonical on-disk form (`load` then `write` is an
/// identity for well-formed files).
pub fn write_corpus(items: &[NewsItem], path: impl AsRef<Path>) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| EmberError::Parse {
            path: "corpus".to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

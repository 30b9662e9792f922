use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercase, replace punctuation with whitespace, split on whitespace.
pub fn normalize(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Build from an explicit token list; specials are prepended and
    /// duplicates dropped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self {
            index: HashMap::new(),
            tokens: Vec::new(),
        };
        for t in [PAD_TOKEN, UNK_TOKEN] {
            vocab.push(t);
        }
        for t in tokens {
            vocab.push(t.as_ref());
        }
        vocab
    }

    /// Vocabulary of every normalized token in `captions`, sorted.
    pub fn from_captions<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = captions.into_iter().flat_map(normalize).collect();
        Self::from_tokens(set)
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// One token per line, index order.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Config("vocabulary file must start with <pad> and <unk>".into()));
        }
        let vocab = Self::from_tokens(&tokens[2..]);
        if vocab.len() != tokens.len() {
            return Err(Error::Config("vocabulary file has duplicate tokens".into()));
        }
        Ok(vocab)
    }
}

/// A caption as vocabulary indices plus the normalized token strings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub indices: Vec<usize>,
    pub raw_tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn reversed(&self) -> Self {
        Self {
            indices: self.indices.iter().rev().copied().collect(),
            raw_tokens: self.raw_tokens.iter().rev().cloned().collect(),
        }
    }
}

pub fn tokenize(caption: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    let raw_tokens = normalize(caption);
    if raw_tokens.is_empty() {
        return Err(Error::EmptyCaption);
    }
    let indices = raw_tokens.iter().map(|t| vocab.index_of(t)).collect();
    Ok(TokenSequence {
        indices,
        raw_tokens,
    })
}

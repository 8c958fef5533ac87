use std::collections::BTreeMap;

use super::ModelError;
use crate::embedding::text_tokens;

pub const UNK: usize = 0;
pub const EOS: usize = 1;
const UNK_TOKEN: &str = "<unk>";
const EOS_TOKEN: &str = "<eos>";

/// Whitespace token vocabulary. Ids 0 and 1 are always `<unk>` and `<eos>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab { tokens: Vec::new(), index: BTreeMap::new() };
        v.add(UNK_TOKEN);
        v.add(EOS_TOKEN);
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `token`, adding it if new.
    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn add_text(&mut self, text: &str) {
        for t in text_tokens(text) {
            self.add(&t);
        }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids of `text`; unknown tokens map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text_tokens(text).iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK_TOKEN)).collect::<Vec<_>>().join(" ")
    }

    pub fn check_capacity(&self, capacity: usize) -> Result<(), ModelError> {
        if self.len() > capacity {
            return Err(ModelError::VocabOverflow { needed: self.len(), capacity });
        }
        Ok(())
    }

    /// One token per line in id order.
    pub fn write(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 || lines[0] != UNK_TOKEN || lines[1] != EOS_TOKEN {
            return Err(ModelError::InvalidVocab("must start with <unk> and <eos>".into()));
        }
        let mut v = Vocab::new();
        for (i, line) in lines.iter().enumerate().skip(2) {
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(ModelError::InvalidVocab(format!("line {}: bad token {line:?}", i + 1)));
            }
            if v.id(line).is_some() {
                return Err(ModelError::InvalidVocab(format!("line {}: duplicate token {line:?}", i + 1)));
            }
            v.add(line);
        }
        Ok(v)
    }
}

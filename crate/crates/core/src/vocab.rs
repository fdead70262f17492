//! Whitespace tokenizer and corpus-built vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::docmodel::Document;

pub const UNK: usize = 0;
pub const MASK: usize = 1;
pub const EMPTY: usize = 2;
pub const N_SPECIAL: usize = 3;

/// Text used for a masked unit before tokenization.
pub const MASK_TEXT: &str = "[MASK]";

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Most frequent corpus tokens (ties broken alphabetically), capped so the
    /// table including the special rows has at most `max_size` entries.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            for w in doc.words() {
                for t in tokenize(&w.text) {
                    *counts.entry(t).or_default() += 1;
                }
            }
            for r in &doc.regions {
                if let Some(text) = &r.text {
                    for t in tokenize(text) {
                        *counts.entry(t).or_default() += 1;
                    }
                }
            }
        }
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let keep = max_size.saturating_sub(N_SPECIAL);
        Self::from_tokens(ranked.into_iter().take(keep).map(|(t, _)| t).collect())
    }

    /// Vocabulary over `tokens` (special rows are prepended).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut all = vec!["[UNK]".to_string(), MASK_TEXT.to_string(), "[EMPTY]".to_string()];
        all.extend(tokens);
        let mut v = Self {
            tokens: all,
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= N_SPECIAL
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK)
    }

    /// Token ids of `text`; the mask sentinel maps to the single MASK row and
    /// an empty text to the EMPTY row.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        if text == MASK_TEXT {
            return vec![MASK];
        }
        let ids: Vec<usize> = tokenize(text).iter().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            vec![EMPTY]
        } else {
            ids
        }
    }
}

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub const PAD: &str = "[PAD]";
pub const OOV: &str = "[OOV]";
pub const MARK: &str = "[MARK]";

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
pub const MARK_ID: usize = 2;

/// Lowercases and splits into word tokens (runs of alphanumerics, `'` and
/// `_`) and single-character punctuation tokens. Whitespace separates.
pub fn split_words(text: &str) -> Vec<String> {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let mut out = Vec::new();
    let mut word = String::new();
    for c in lowered.chars() {
        if c.is_alphanumeric() || c == '\'' || c == '_' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Word-level vocabulary with three reserved ids: padding, out-of-vocabulary
/// and the first-position marker whose final state is the pooled output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds a vocabulary from every word occurring in `texts`. Word ids
    /// follow sorted order, so the result does not depend on input order.
    pub fn build<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words: BTreeSet<String> = texts.into_iter().flat_map(|t| split_words(t.as_ref())).collect();
        let tokens: Vec<String> = [PAD, OOV, MARK]
            .into_iter()
            .map(String::from)
            .chain(words.into_iter().filter(|w| w != PAD && w != OOV && w != MARK))
            .collect();
        Vocabulary::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Marker id followed by one id per word.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        std::iter::once(MARK_ID)
            .chain(split_words(text).iter().map(|w| self.id(w)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(split_words("Joy!"), ["joy", "!"]);
        assert_eq!(split_words("Pun-Intended,  ok"), ["pun", "-", "intended", ",", "ok"]);
        assert!(split_words("   ").is_empty());
    }

    #[test]
    fn tokenize_rules() {
        let v = Vocabulary::build(["joy !", "fear"]);
        let joy = v.id("joy");
        let bang = v.id("!");
        assert_eq!(v.tokenize("Joy!"), vec![MARK_ID, joy, bang]);
        assert_eq!(v.tokenize(""), vec![MARK_ID]);
        assert_eq!(v.tokenize("zebra"), vec![MARK_ID, OOV_ID]);
    }

    #[test]
    fn build_is_order_independent() {
        assert_eq!(Vocabulary::build(["b a", "c"]), Vocabulary::build(["c", "a b"]));
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::build(["hello world"]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }
}

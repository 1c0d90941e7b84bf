//! Seeded synthetic corpus with a known emotion structure.
//!
//! Every emotion owns a set of keyword tokens (what texts contain) and a set
//! of descriptor phrases `"<modifier> <head>"` that all share the emotion's
//! head word. The first half of the phrases are "seen" (they appear in the
//! training annotations); the rest are "unseen" and only occur in the unseen
//! label space. Modifiers are shared across emotions with a per-emotion
//! rotation, so no modifier identifies an emotion. A keyword's annotation
//! lists every seen phrase of its emotion, starting at a keyword-dependent
//! offset.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, DescriptorAnnotation, LabelSpace, LabelSpaceKind, Split, TextSample};

const EMOTION_HEADS: [&str; 16] = [
    "joy", "fear", "anger", "sadness", "surprise", "disgust", "trust", "anticipation", "pride", "shame",
    "guilt", "relief", "envy", "awe", "boredom", "gratitude",
];

const MODIFIERS: [&str; 12] = [
    "mild", "deep", "sudden", "quiet", "faint", "intense", "lingering", "sharp", "growing", "fleeting", "raw",
    "gentle",
];

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

fn default_max_emotions() -> usize {
    3
}
fn default_filler_min() -> usize {
    4
}
fn default_filler_max() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_emotions: usize,
    pub synonyms_per_emotion: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub filler_vocab_size: usize,
    pub keywords_per_emotion: usize,
    pub seed: u64,
    #[serde(default = "default_max_emotions")]
    pub max_emotions_per_text: usize,
    #[serde(default = "default_filler_min")]
    pub min_filler_tokens: usize,
    #[serde(default = "default_filler_max")]
    pub max_filler_tokens: usize,
}

impl Default for SyntheticSpec {
    /// Desk-scale defaults: 8 emotions with 4 synonyms each.
    fn default() -> Self {
        SyntheticSpec {
            n_emotions: 8,
            synonyms_per_emotion: 4,
            n_train: 2000,
            n_val: 200,
            n_test: 400,
            filler_vocab_size: 200,
            keywords_per_emotion: 4,
            seed: 42,
            max_emotions_per_text: default_max_emotions(),
            min_filler_tokens: default_filler_min(),
            max_filler_tokens: default_filler_max(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Value(format!("synthetic spec: {m}")));
        if self.n_emotions == 0 {
            return bad("n_emotions must be positive");
        }
        if self.synonyms_per_emotion < 2 {
            return bad("synonyms_per_emotion must be at least 2");
        }
        if self.keywords_per_emotion == 0 {
            return bad("keywords_per_emotion must be positive");
        }
        if self.filler_vocab_size == 0 {
            return bad("filler_vocab_size must be positive");
        }
        if self.n_train + self.n_val + self.n_test == 0 {
            return bad("no samples requested");
        }
        if self.max_emotions_per_text == 0 {
            return bad("max_emotions_per_text must be positive");
        }
        if self.min_filler_tokens > self.max_filler_tokens {
            return bad("min_filler_tokens exceeds max_filler_tokens");
        }
        Ok(())
    }

    fn n_seen(&self) -> usize {
        self.synonyms_per_emotion - self.synonyms_per_emotion / 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticEmotion {
    pub head: String,
    pub keywords: Vec<String>,
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

/// Generator output. Both datasets hold the same texts, ids and splits; they
/// differ only in which label space the gold sets are written in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub emotions: Vec<SyntheticEmotion>,
    pub seen_dataset: Vec<TextSample>,
    pub unseen_dataset: Vec<TextSample>,
    pub annotations: Vec<DescriptorAnnotation>,
    pub seen_space: LabelSpace,
    pub unseen_space: LabelSpace,
    /// Emotion indices present in each sample, aligned with the datasets.
    pub present: Vec<Vec<usize>>,
}

impl SyntheticCorpus {
    /// Keyword -> descriptor table that makes the mock client reproduce
    /// [`SyntheticCorpus::annotations`] exactly.
    pub fn mock_table(&self) -> BTreeMap<String, String> {
        let n_seen = self.spec.n_seen();
        let mut table = BTreeMap::new();
        for e in &self.emotions {
            for (j, kw) in e.keywords.iter().enumerate() {
                table.insert(kw.clone(), keyword_reply(e, j, n_seen).join(", "));
            }
        }
        table
    }
}

/// Seen phrases of the keyword's emotion, rotated so that keyword `j` lists
/// phrase `j mod n_seen` first.
fn keyword_reply(e: &SyntheticEmotion, j: usize, n_seen: usize) -> Vec<&str> {
    (0..n_seen).map(|k| e.seen[(j + k) % n_seen].as_str()).collect()
}

struct WordFactory {
    used: HashSet<String>,
}

impl WordFactory {
    fn pseudo_word(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).unwrap());
                w.push_str(NUCLEI.choose(rng).unwrap());
            }
            if rng.random_bool(0.5) {
                w.push_str(ONSETS.choose(rng).unwrap());
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn fixed_or_pseudo(&mut self, list: &[&str], i: usize, rng: &mut ChaCha8Rng) -> String {
        match list.get(i) {
            Some(w) if self.used.insert(w.to_string()) => w.to_string(),
            _ => self.pseudo_word(rng),
        }
    }
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words = WordFactory { used: HashSet::new() };

    let heads: Vec<String> = (0..spec.n_emotions)
        .map(|i| words.fixed_or_pseudo(&EMOTION_HEADS, i, &mut rng))
        .collect();
    let modifiers: Vec<String> = (0..spec.synonyms_per_emotion)
        .map(|i| words.fixed_or_pseudo(&MODIFIERS, i, &mut rng))
        .collect();
    let n_syn = spec.synonyms_per_emotion;
    let n_seen = spec.n_seen();

    let mut emotions = Vec::with_capacity(spec.n_emotions);
    for (i, head) in heads.iter().enumerate() {
        let keywords = (0..spec.keywords_per_emotion).map(|_| words.pseudo_word(&mut rng)).collect();
        let phrases: Vec<String> = (0..n_syn)
            .map(|k| format!("{} {}", modifiers[(i + k) % n_syn], head))
            .collect();
        emotions.push(SyntheticEmotion {
            head: head.clone(),
            keywords,
            seen: phrases[..n_seen].to_vec(),
            unseen: phrases[n_seen..].to_vec(),
        });
    }
    let filler: Vec<String> = (0..spec.filler_vocab_size).map(|_| words.pseudo_word(&mut rng)).collect();

    let keyword_owner: BTreeMap<&str, (usize, usize)> = emotions
        .iter()
        .enumerate()
        .flat_map(|(e, em)| em.keywords.iter().enumerate().map(move |(j, k)| (k.as_str(), (e, j))))
        .collect();

    let total = spec.n_train + spec.n_val + spec.n_test;
    let max_k = spec.max_emotions_per_text.min(spec.n_emotions);
    let mut seen_dataset = Vec::with_capacity(total);
    let mut unseen_dataset = Vec::with_capacity(total);
    let mut annotations = Vec::with_capacity(total);
    let mut present_all = Vec::with_capacity(total);

    for idx in 0..total {
        let split = if idx < spec.n_train {
            Split::Train
        } else if idx < spec.n_train + spec.n_val {
            Split::Val
        } else {
            Split::Test
        };
        let k = rng.random_range(1..=max_k);
        let mut present: Vec<usize> = index::sample(&mut rng, spec.n_emotions, k).into_vec();
        present.sort_unstable();

        let n_fill = rng.random_range(spec.min_filler_tokens..=spec.max_filler_tokens);
        let mut tokens: Vec<&str> = (0..n_fill).map(|_| filler.choose(&mut rng).unwrap().as_str()).collect();
        for &e in &present {
            let kw = emotions[e].keywords.choose(&mut rng).unwrap().as_str();
            let pos = rng.random_range(0..=tokens.len());
            tokens.insert(pos, kw);
        }
        let text = tokens.join(" ");

        let descriptors: Vec<&str> = tokens
            .iter()
            .filter_map(|t| keyword_owner.get(t))
            .flat_map(|&(e, j)| keyword_reply(&emotions[e], j, n_seen))
            .collect();
        let id = format!("syn-{idx:06}");
        annotations.push(DescriptorAnnotation::new(id.clone(), descriptors)?);

        let seen_gold: BTreeSet<String> = present.iter().flat_map(|&e| emotions[e].seen.iter().cloned()).collect();
        let unseen_gold: BTreeSet<String> =
            present.iter().flat_map(|&e| emotions[e].unseen.iter().cloned()).collect();
        let mut sample = TextSample::new(id, text).with_split(split);
        sample.gold_categorical = Some(seen_gold);
        seen_dataset.push(sample.clone());
        sample.gold_categorical = Some(unseen_gold);
        unseen_dataset.push(sample);
        present_all.push(present);
    }

    let seen_space = LabelSpace::new(
        "synthetic-seen",
        LabelSpaceKind::Multi,
        emotions.iter().flat_map(|e| e.seen.iter()),
    )?;
    let unseen_space = LabelSpace::new(
        "synthetic-unseen",
        LabelSpaceKind::Multi,
        emotions.iter().flat_map(|e| e.unseen.iter()),
    )?;

    Ok(SyntheticCorpus {
        spec: spec.clone(),
        emotions,
        seen_dataset,
        unseen_dataset,
        annotations,
        seen_space,
        unseen_space,
        present: present_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_emotions: 2,
            synonyms_per_emotion: 2,
            n_train: 4,
            n_val: 0,
            n_test: 0,
            filler_vocab_size: 10,
            keywords_per_emotion: 2,
            seed: 1,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn byte_identical_for_same_seed() {
        let a = serde_json::to_vec(&generate_synthetic_corpus(&small()).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_synthetic_corpus(&small()).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 2;
        let c = serde_json::to_vec(&generate_synthetic_corpus(&other).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gold_matches_keywords_in_both_spaces() {
        let c = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
        for (i, s) in c.seen_dataset.iter().enumerate() {
            let toks: HashSet<&str> = s.text.split(' ').collect();
            let from_keywords: Vec<usize> = c
                .emotions
                .iter()
                .enumerate()
                .filter(|(_, e)| e.keywords.iter().any(|k| toks.contains(k.as_str())))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(from_keywords, c.present[i]);
            let seen = s.gold_set();
            let unseen = c.unseen_dataset[i].gold_set();
            for &e in &from_keywords {
                assert!(c.emotions[e].seen.iter().all(|l| seen.contains(l)));
                assert!(c.emotions[e].unseen.iter().all(|l| unseen.contains(l)));
            }
            assert_eq!(seen.len(), from_keywords.len() * 2);
        }
    }

    #[test]
    fn unseen_space_disjoint_from_annotations() {
        let c = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
        let used: HashSet<&str> = c
            .annotations
            .iter()
            .flat_map(|a| a.descriptors().iter().map(String::as_str))
            .collect();
        assert!(c.unseen_space.labels().iter().all(|l| !used.contains(l.as_str())));
        assert_eq!(c.seen_space.len(), 16);
        assert_eq!(c.unseen_space.len(), 16);
    }

    #[test]
    fn every_seen_synonym_per_present_emotion() {
        let c = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
        for ((a, p), s) in c.annotations.iter().zip(&c.present).zip(&c.seen_dataset) {
            assert_eq!(a.descriptors().len(), p.len() * 2);
            let ann: BTreeSet<String> = a.descriptors().iter().cloned().collect();
            assert_eq!(ann, s.gold_set());
        }
    }

    #[test]
    fn synonyms_share_head_token() {
        let c = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
        for e in &c.emotions {
            for p in e.seen.iter().chain(&e.unseen) {
                assert_eq!(p.split(' ').next_back().unwrap(), e.head);
            }
        }
    }

    #[test]
    fn rejects_single_synonym() {
        let mut s = small();
        s.synonyms_per_emotion = 1;
        assert!(generate_synthetic_corpus(&s).is_err());
    }
}

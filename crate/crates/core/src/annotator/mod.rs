//! Descriptor elicitation: prompt construction, pluggable LLM clients,
//! response parsing and the on-disk annotation cache.

mod live;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{DescriptorAnnotation, TextSample};
use crate::embedding::split_words;
use crate::fsio;

pub use live::{LiveClient, LiveConfig};

/// The descriptor-elicitation system prompt, verbatim.
pub const SYSTEM_PROMPT: &str = "You are an emotionally-intelligent and empathetic agent. You will be given a piece of text, and your task is to identify the emotions expressed by the writer of the text. Reply with only the emotion descriptors (words or phrases), separated by commas. If no emotion is clearly expressed, reply with \"neutral\".";

pub const DEFAULT_TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum AnnotatorError {
    #[error("invalid value: {0}")]
    Value(String),
    #[error("unparseable response: {0:?}")]
    Parse(String),
    #[error("client failed for {} sample(s) after retries: {}; last error: {last_error}", .failed_ids.len(), .failed_ids.join(", "))]
    Client { failed_ids: Vec<String>, last_error: String },
    #[error("corrupt cache {path} at line {line}: {message}")]
    CacheCorruption { path: String, line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("client configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: String,
    pub system: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            version: DEFAULT_TEMPLATE_VERSION.to_string(),
            system: SYSTEM_PROMPT.to_string(),
        }
    }
}

impl PromptTemplate {
    /// Cache key: SHA-256 over the length-prefixed template version and the
    /// full text.
    pub fn cache_key(&self, text: &str) -> String {
        let mut h = Sha256::new();
        h.update((self.version.len() as u64).to_le_bytes());
        h.update(self.version.as_bytes());
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn build(&self, text: &str) -> Result<PromptMessages, AnnotatorError> {
        if text.is_empty() {
            return Err(AnnotatorError::Value("cannot annotate empty text".into()));
        }
        Ok(PromptMessages {
            system: self.system.clone(),
            user: text.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessages {
    pub system: String,
    pub user: String,
}

pub fn build_annotation_prompt(text: &str) -> Result<PromptMessages, AnnotatorError> {
    PromptTemplate::default().build(text)
}

/// Comma-separated reply to ordered, normalized, deduplicated descriptors.
pub fn parse_descriptors(raw: &str) -> Result<Vec<String>, AnnotatorError> {
    DescriptorAnnotation::new("", raw.split(','))
        .map(|a| a.descriptors().to_vec())
        .map_err(|_| AnnotatorError::Parse(raw.to_string()))
}

pub fn parse_descriptor_response(raw: &str) -> Result<DescriptorAnnotation, AnnotatorError> {
    parse_descriptor_response_for("", raw)
}

pub fn parse_descriptor_response_for(sample_id: &str, raw: &str) -> Result<DescriptorAnnotation, AnnotatorError> {
    DescriptorAnnotation::new(sample_id, raw.split(',')).map_err(|_| AnnotatorError::Parse(raw.to_string()))
}

/// A chat-completion backend. Errors are plain strings; they must never
/// contain credentials.
pub trait LlmClient: Send + Sync {
    fn complete(&self, messages: &PromptMessages) -> Result<String, String>;
}

/// Offline client: each text token found in the keyword table contributes
/// its mapped reply fragment, in text order. No match gives `"neutral"`.
#[derive(Debug, Default)]
pub struct MockClient {
    table: BTreeMap<String, String>,
    calls: AtomicUsize,
}

impl MockClient {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        let table = table.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
        MockClient {
            table,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reply(&self, text: &str) -> String {
        let parts: Vec<&str> = split_words(text)
            .iter()
            .filter_map(|t| self.table.get(t).map(String::as_str))
            .collect();
        if parts.is_empty() {
            "neutral".to_string()
        } else {
            parts.join(", ")
        }
    }
}

impl LlmClient for MockClient {
    fn complete(&self, messages: &PromptMessages) -> Result<String, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.reply(&messages.user))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationCacheEntry {
    pub key: String,
    pub raw_response: String,
    pub parsed: Vec<String>,
    pub timestamp: u64,
}

/// JSONL cache keyed by [`PromptTemplate::cache_key`]. Later entries win.
#[derive(Debug, Default)]
pub struct AnnotationCache {
    entries: Vec<AnnotationCacheEntry>,
    index: HashMap<String, usize>,
}

impl AnnotationCache {
    pub fn load(path: &Path) -> Result<Self, AnnotatorError> {
        let mut cache = AnnotationCache::default();
        if !path.exists() {
            return Ok(cache);
        }
        let rows = fsio::read_jsonl::<AnnotationCacheEntry>(path).map_err(|source| AnnotatorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for row in rows {
            let entry = row.map_err(|(line, message)| AnnotatorError::CacheCorruption {
                path: path.display().to_string(),
                line,
                message,
            })?;
            cache.insert(entry);
        }
        Ok(cache)
    }

    pub fn insert(&mut self, entry: AnnotationCacheEntry) {
        match self.index.get(&entry.key) {
            Some(&i) => self.entries[i] = entry,
            None => {
                self.index.insert(entry.key.clone(), self.entries.len());
                self.entries.push(entry);
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&AnnotationCacheEntry> {
        self.index.get(key).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), AnnotatorError> {
        fsio::write_jsonl(path, &self.entries).map_err(|source| AnnotatorError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AnnotateOptions {
    pub template: PromptTemplate,
    pub max_in_flight: usize,
    pub max_attempts: usize,
    /// Delay before the second attempt; doubles for each further attempt.
    pub base_backoff: Duration,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions {
            template: PromptTemplate::default(),
            max_in_flight: 4,
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
        }
    }
}

fn call_with_retries(
    client: &dyn LlmClient,
    messages: &PromptMessages,
    options: &AnnotateOptions,
) -> Result<(String, Vec<String>), String> {
    let mut last = String::from("no attempts made");
    for attempt in 0..options.max_attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(options.base_backoff * (1u32 << (attempt - 1).min(16)));
        }
        match client.complete(messages) {
            Ok(raw) => match parse_descriptors(&raw) {
                Ok(parsed) => return Ok((raw, parsed)),
                Err(e) => last = e.to_string(),
            },
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// One annotation per sample, in dataset order. Cached texts never reach
/// the client; fresh responses are persisted before any failure is
/// reported.
pub fn annotate(
    dataset: &[TextSample],
    client: &dyn LlmClient,
    cache_path: &Path,
    options: &AnnotateOptions,
) -> Result<Vec<DescriptorAnnotation>, AnnotatorError> {
    let mut cache = AnnotationCache::load(cache_path)?;
    let mut keys = Vec::with_capacity(dataset.len());
    let mut pending: Vec<(String, &str)> = Vec::new();
    let mut queued = std::collections::HashSet::new();
    for s in dataset {
        let messages = options.template.build(&s.text)?;
        let key = options.template.cache_key(&messages.user);
        if cache.get(&key).is_none() && queued.insert(key.clone()) {
            pending.push((key.clone(), s.text.as_str()));
        }
        keys.push(key);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.max_in_flight.max(1))
        .build()
        .map_err(|e| AnnotatorError::Config(e.to_string()))?;
    let results: Vec<(String, Result<(String, Vec<String>), String>)> = pool.install(|| {
        pending
            .par_iter()
            .map(|(key, text)| {
                let messages = options.template.build(text).expect("checked above");
                (key.clone(), call_with_retries(client, &messages, options))
            })
            .collect()
    });

    let mut failed_keys = HashMap::new();
    let mut last_error = String::new();
    let mut added = false;
    for (key, r) in results {
        match r {
            Ok((raw_response, parsed)) => {
                cache.insert(AnnotationCacheEntry {
                    key,
                    raw_response,
                    parsed,
                    timestamp: now_secs(),
                });
                added = true;
            }
            Err(e) => {
                last_error = e;
                failed_keys.insert(key, ());
            }
        }
    }
    if added {
        cache.save(cache_path)?;
    }
    if !failed_keys.is_empty() {
        let failed_ids = dataset
            .iter()
            .zip(&keys)
            .filter(|(_, k)| failed_keys.contains_key(*k))
            .map(|(s, _)| s.id.clone())
            .collect();
        return Err(AnnotatorError::Client { failed_ids, last_error });
    }

    dataset
        .iter()
        .zip(&keys)
        .map(|(s, key)| {
            let entry = cache.get(key).expect("present after annotation");
            DescriptorAnnotation::new(s.id.clone(), &entry.parsed).map_err(|e| AnnotatorError::CacheCorruption {
                path: cache_path.display().to_string(),
                line: 0,
                message: format!("entry {key}: {e}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct FailingClient(AtomicUsize);

    impl LlmClient for FailingClient {
        fn complete(&self, _: &PromptMessages) -> Result<String, String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err("service unavailable".into())
        }
    }

    fn fast() -> AnnotateOptions {
        AnnotateOptions {
            base_backoff: Duration::ZERO,
            ..AnnotateOptions::default()
        }
    }

    fn police_client() -> MockClient {
        MockClient::new(BTreeMap::from([("police".to_string(), "fear, urgency".to_string())]))
    }

    #[test]
    fn prompt_is_verbatim() {
        let p = build_annotation_prompt("I AM CALLING THE POLICE").unwrap();
        assert!(p.system.contains("If no emotion is clearly expressed, reply with \"neutral\""));
        assert!(p.system.starts_with("You are an emotionally-intelligent and empathetic agent"));
        assert_eq!(p.user, "I AM CALLING THE POLICE");
        assert_eq!(build_annotation_prompt(" tabs\tand  spaces ").unwrap().user, " tabs\tand  spaces ");
        assert!(matches!(build_annotation_prompt(""), Err(AnnotatorError::Value(_))));
    }

    #[test]
    fn parse_examples() {
        let d = |raw| parse_descriptor_response(raw).unwrap().descriptors().to_vec();
        assert_eq!(d("Contentment, Satisfaction"), ["contentment", "satisfaction"]);
        assert_eq!(d("Bemused, A Little Bummed"), ["bemused", "a little bummed"]);
        assert_eq!(d("  Joy ,, joy , "), ["joy"]);
        assert_eq!(d("neutral"), ["neutral"]);
        assert_eq!(d("Neutral, relief"), ["neutral", "relief"]);
        assert!(matches!(parse_descriptor_response(" , ,"), Err(AnnotatorError::Parse(_))));
    }

    #[test]
    fn cache_key_depends_on_version_and_full_text() {
        let t = PromptTemplate::default();
        let mut t2 = t.clone();
        t2.version = "v2".into();
        assert_ne!(t.cache_key("abc"), t2.cache_key("abc"));
        assert_ne!(t.cache_key("abc"), t.cache_key("abd"));
        let long_a = "x".repeat(10_000) + "a";
        let long_b = "x".repeat(10_000) + "b";
        assert_ne!(t.cache_key(&long_a), t.cache_key(&long_b));
    }

    #[test]
    fn mock_keyword_table() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        let data = vec![
            TextSample::new("a", "I am calling the POLICE!"),
            TextSample::new("b", "a quiet afternoon"),
        ];
        let out = annotate(&data, &police_client(), &cache, &fast()).unwrap();
        assert_eq!(out[0].descriptors(), ["fear", "urgency"]);
        assert_eq!(out[0].sample_id, "a");
        assert_eq!(out[1].descriptors(), ["neutral"]);
    }

    #[test]
    fn warm_cache_makes_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        let data: Vec<TextSample> = (0..20).map(|i| TextSample::new(format!("s{i}"), format!("police {i}"))).collect();
        let first_client = police_client();
        let first = annotate(&data, &first_client, &cache, &fast()).unwrap();
        assert_eq!(first_client.calls(), 20);
        let second_client = police_client();
        let second = annotate(&data, &second_client, &cache, &fast()).unwrap();
        assert_eq!(second_client.calls(), 0);
        assert_eq!(first, second);
    }

    #[test]
    fn duplicate_texts_share_one_call() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        let data = vec![TextSample::new("a", "police"), TextSample::new("b", "police")];
        let client = police_client();
        let out = annotate(&data, &client, &cache, &fast()).unwrap();
        assert_eq!(client.calls(), 1);
        assert_eq!(out[1].sample_id, "b");
    }

    #[test]
    fn failing_client_lists_every_id_after_retries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        let data = vec![TextSample::new("x1", "one"), TextSample::new("x2", "two")];
        let client = FailingClient(AtomicUsize::new(0));
        match annotate(&data, &client, &cache, &fast()) {
            Err(AnnotatorError::Client { failed_ids, .. }) => assert_eq!(failed_ids, ["x1", "x2"]),
            other => panic!("expected client error, got {other:?}"),
        }
        assert_eq!(client.0.load(Ordering::SeqCst), 6);
        assert!(!cache.exists());
    }

    #[test]
    fn corrupt_cache_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        std::fs::write(&cache, "{not json}\n").unwrap();
        let data = vec![TextSample::new("a", "police")];
        assert!(matches!(
            annotate(&data, &police_client(), &cache, &fast()),
            Err(AnnotatorError::CacheCorruption { line: 1, .. })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut c = AnnotationCache::default();
        let e = AnnotationCacheEntry {
            key: "k".into(),
            raw_response: "Joy, awe".into(),
            parsed: vec!["joy".into(), "awe".into()],
            timestamp: 7,
        };
        c.insert(e.clone());
        c.save(&path).unwrap();
        let back = AnnotationCache::load(&path).unwrap();
        assert_eq!(back.get("k"), Some(&e));
    }

    proptest! {
        #[test]
        fn parse_is_idempotent(raw in "[a-zA-Z ,]{0,40}") {
            if let Ok(first) = parse_descriptor_response(&raw) {
                let again = parse_descriptor_response(&first.descriptors().join(", ")).unwrap();
                prop_assert_eq!(again.descriptors(), first.descriptors());
            }
        }

        #[test]
        fn mock_is_pure(text in "[a-z ]{1,30}") {
            let c = police_client();
            prop_assert_eq!(c.reply(&text), c.reply(&text));
        }
    }
}

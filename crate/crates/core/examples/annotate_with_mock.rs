//! Annotate texts through the mock client with an on-disk cache. The second
//! pass is served entirely from the cache.
//!
//! cargo run --example annotate_with_mock

use std::collections::BTreeMap;

use emodistill::annotator::{annotate, build_annotation_prompt, AnnotateOptions, MockClient};
use emodistill::corpus::TextSample;

fn main() -> anyhow::Result<()> {
    let table = BTreeMap::from([
        ("police".to_string(), "fear, anxiety".to_string()),
        ("birthday".to_string(), "joy, excitement".to_string()),
        ("rain".to_string(), "melancholy".to_string()),
    ]);
    let texts = [
        "The police knocked at midnight.",
        "A surprise birthday party, finally!",
        "Rain again, all week.",
        "The bus was on time.",
        "Police at the birthday party.",
    ];
    let dataset: Vec<TextSample> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| TextSample::new(format!("s{i}"), *t))
        .collect();

    let prompt = build_annotation_prompt(texts[0])?;
    println!("system: {}\nuser:   {}\n", prompt.system, prompt.user);

    let dir = tempfile::tempdir()?;
    let cache = dir.path().join("cache.jsonl");
    let options = AnnotateOptions::default();

    let client = MockClient::new(table.clone());
    let annotations = annotate(&dataset, &client, &cache, &options)?;
    for (s, a) in dataset.iter().zip(&annotations) {
        println!("{:<40} -> {:?}", s.text, a.descriptors());
    }
    println!("first pass: {} client calls", client.calls());

    let warm = MockClient::new(table);
    let again = annotate(&dataset, &warm, &cache, &options)?;
    assert_eq!(again, annotations);
    println!("second pass: {} client calls", warm.calls());
    Ok(())
}

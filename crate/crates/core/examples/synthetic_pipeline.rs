//! Generate the synthetic corpus, write it in the CLI's file formats and
//! print its descriptor statistics.
//!
//! cargo run --release --example synthetic_pipeline -- [out_dir]

use std::path::PathBuf;

use emodistill::corpus::{
    descriptor_vocabulary_stats, filter_split, generate_synthetic_corpus, save_annotations, save_dataset, Split,
    SyntheticSpec,
};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("synthetic"));
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default())?;

    std::fs::create_dir_all(&out)?;
    save_dataset(&out.join("seen.jsonl"), &corpus.seen_dataset)?;
    save_dataset(&out.join("unseen.jsonl"), &corpus.unseen_dataset)?;
    save_annotations(&out.join("reference_annotations.jsonl"), &corpus.annotations)?;

    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split:>5}: {} samples", filter_split(&corpus.seen_dataset, split).len());
    }
    for e in &corpus.emotions {
        println!("{:<12} keywords {:?}\n             seen {:?} unseen {:?}", e.head, e.keywords, e.seen, e.unseen);
    }
    let s = &corpus.seen_dataset[0];
    println!("\nexample: {} {:?}\n  gold {:?}", s.id, s.text, s.gold_set());
    println!("  annotation {:?}", corpus.annotations[0].descriptors());

    let stats = descriptor_vocabulary_stats(&corpus.annotations)?;
    println!(
        "\n{} unique descriptors, {:.2} ± {:.2} per sample",
        stats.unique_terms, stats.mean_terms_per_sample, stats.sd_terms_per_sample
    );
    println!("wrote {}", out.display());
    Ok(())
}

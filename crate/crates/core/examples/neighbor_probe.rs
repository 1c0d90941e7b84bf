//! Train on the synthetic corpus, then list the nearest annotated
//! descriptors of each unseen phrase in the label embedding space.
//!
//! cargo run --release --example neighbor_probe

use emodistill::corpus::{filter_split, generate_synthetic_corpus, Split, SyntheticSpec};
use emodistill::evaluation::{build_probe_pool, nearest_neighbors};
use emodistill::training::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default())?;
    let train_set = filter_split(&corpus.seen_dataset, Split::Train);
    let dir = tempfile::tempdir()?;
    let config = TrainConfig {
        epochs: 5,
        checkpoint_dir: dir.path().to_path_buf(),
        extra_vocab: corpus.unseen_space.labels().to_vec(),
        ..TrainConfig::default()
    };
    let trained = train(&train_set, &corpus.annotations, &config)?;

    let test_ids: Vec<String> = filter_split(&corpus.seen_dataset, Split::Test)
        .into_iter()
        .map(|s| s.id)
        .collect();
    let pool = build_probe_pool(&corpus.annotations, &test_ids);
    let targets: Vec<String> = corpus.emotions.iter().map(|e| e.unseen[0].clone()).collect();
    let table = nearest_neighbors(&targets, &pool, 3, &trained.model)?;
    print!("{}", table.render_table());
    Ok(())
}

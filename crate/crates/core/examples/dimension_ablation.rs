//! Train one model per emotion-space dimension on identical data and compare
//! seen and unseen macro-F1.
//!
//! cargo run --release --example dimension_ablation -- [dims, default 8,16,32,64]

use emodistill::corpus::{filter_split, generate_synthetic_corpus, Split, SyntheticSpec};
use emodistill::training::{ablate_dimensions, AblationTarget, TrainConfig};

fn main() -> anyhow::Result<()> {
    let dims: Vec<usize> = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "8,16,32,64".into())
        .split(',')
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default())?;
    let train_set = filter_split(&corpus.seen_dataset, Split::Train);
    let dir = tempfile::tempdir()?;
    let config = TrainConfig {
        checkpoint_dir: dir.path().to_path_buf(),
        extra_vocab: corpus.unseen_space.labels().to_vec(),
        ..TrainConfig::default()
    };
    let targets: Vec<AblationTarget> = [
        ("seen", &corpus.seen_dataset, &corpus.seen_space),
        ("unseen", &corpus.unseen_dataset, &corpus.unseen_space),
    ]
    .into_iter()
    .map(|(name, data, space)| AblationTarget {
        name: name.into(),
        space: space.clone(),
        calibration: filter_split(data, Split::Val),
        test: filter_split(data, Split::Test),
    })
    .collect();
    let table = ablate_dimensions(&train_set, &corpus.annotations, &dims, &config, &targets)?;
    print!("{}", table.render_table());
    Ok(())
}

//! Train on seen-synonym descriptors of the synthetic corpus, then predict
//! over the seen label space and over a disjoint label space whose phrases
//! never appeared in training.
//!
//! cargo run --release --example zero_shot_transfer

use std::time::Instant;

use emodistill::corpus::{filter_split, generate_synthetic_corpus, Split, SyntheticSpec};
use emodistill::evaluation::evaluate;
use emodistill::inference::calibrate_for_space;
use emodistill::training::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default())?;
    let train_set = filter_split(&corpus.seen_dataset, Split::Train);
    let dir = tempfile::tempdir()?;
    let config = TrainConfig {
        d: 32,
        checkpoint_dir: dir.path().to_path_buf(),
        extra_vocab: corpus.unseen_space.labels().to_vec(),
        ..TrainConfig::default()
    };

    let start = Instant::now();
    let trained = train(&train_set, &corpus.annotations, &config)?;
    println!(
        "trained in {:.1?}: loss {:.4} -> {:.4}, selected epoch {}",
        start.elapsed(),
        trained.report.initial_train_loss,
        trained.report.epoch_train_loss.last().unwrap(),
        trained.report.selected_epoch
    );

    for (name, data, space) in [
        ("seen", &corpus.seen_dataset, &corpus.seen_space),
        ("unseen", &corpus.unseen_dataset, &corpus.unseen_space),
    ] {
        let val = filter_split(data, Split::Val);
        let test = filter_split(data, Split::Test);
        let thresholds = calibrate_for_space(&trained.model, space, &val)?;
        let report = evaluate(
            name,
            &test,
            &trained.model,
            space,
            Some(&thresholds),
            None,
            trained.report.provenance.clone(),
        )?;
        println!(
            "{name:>6}: macro-F1 {:.4}  micro-F1 {:.4}",
            report.macro_f1.unwrap(),
            report.micro_f1.unwrap()
        );
    }
    Ok(())
}

//! Classification and correlation metrics.
//!
//! cargo run --example metrics

use std::collections::BTreeSet;

use emodistill::corpus::{LabelSpace, LabelSpaceKind};
use emodistill::evaluation::{macro_f1, micro_f1, pearson, per_class_metrics, spearman};

fn sets(xs: &[&[&str]]) -> Vec<BTreeSet<String>> {
    xs.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect()
}

fn main() -> anyhow::Result<()> {
    let space = LabelSpace::new("toy", LabelSpaceKind::Multi, ["joy", "fear", "anger"])?;
    let gold = sets(&[&["joy"], &["fear", "anger"], &["anger"], &[]]);
    let pred = sets(&[&["joy"], &["fear"], &["anger", "joy"], &[]]);

    for c in per_class_metrics(&pred, &gold, space.labels())? {
        println!(
            "{:<6} P {:.3} R {:.3} F1 {:.3} support {}",
            c.label, c.precision, c.recall, c.f1, c.support
        );
    }
    println!("macro-F1 {:.4}", macro_f1(&pred, &gold, &space)?);
    println!("micro-F1 {:.4}", micro_f1(&pred, &gold, &space)?);

    let predicted = [0.1, 0.4, 0.35, 0.8, 0.7];
    let actual = [0.0, 0.5, 0.5, 1.0, 0.6];
    println!("\nPearson  {:.4}", pearson(&predicted, &actual)?);
    println!("Spearman {:.4}", spearman(&predicted, &actual)?);
    match pearson(&[1.0, 1.0, 1.0], &actual[..3]) {
        Err(e) => println!("constant input: {e}"),
        Ok(v) => println!("unexpected {v}"),
    }
    Ok(())
}

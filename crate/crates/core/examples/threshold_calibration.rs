//! Per-label threshold calibration on validation scores, then multi-label
//! prediction with the calibrated table.
//!
//! cargo run --example threshold_calibration

use std::collections::BTreeSet;

use emodistill::inference::{calibrate_label, calibrate_thresholds, predict_multi, predict_single, ScoreVector};

fn main() -> anyhow::Result<()> {
    let (t, f1) = calibrate_label(&[0.9, 0.4, 0.3], &[true, true, false]);
    println!("scores [0.9, 0.4, 0.3], gold [1, 1, 0]: threshold {t}, F1 {f1:.3}");

    let labels: Vec<String> = ["joy", "fear", "anger"].iter().map(|s| s.to_string()).collect();
    let val: Vec<(Vec<f64>, &[&str])> = vec![
        (vec![3.0, -2.0, -4.0], &["joy"]),
        (vec![-1.0, 0.5, -3.0], &["fear"]),
        (vec![-2.0, 1.5, 0.2], &["fear", "anger"]),
        (vec![0.4, -1.0, -2.5], &["joy"]),
        (vec![-3.0, -0.2, 1.0], &["anger"]),
        (vec![-0.5, -1.5, -1.0], &[]),
    ];
    let scores: Vec<ScoreVector> = val
        .iter()
        .map(|(m, _)| ScoreVector::from_alignment("toy", labels.clone(), m.clone()))
        .collect();
    let gold: Vec<BTreeSet<String>> = val
        .iter()
        .map(|(_, g)| g.iter().map(|s| s.to_string()).collect())
        .collect();
    let table = calibrate_thresholds(&scores, &gold)?;
    println!("\ncalibrated: {}", serde_json::to_string(&table)?);

    let test = ScoreVector::from_alignment("toy", labels, vec![0.8, 0.3, -2.0]);
    println!("\ntest scores {:?}", test.as_map());
    println!("multi-label prediction {:?}", predict_multi(&test, &table)?);
    println!("single-label prediction {:?}", predict_single(&test));
    Ok(())
}

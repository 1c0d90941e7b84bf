//! Valence and activation from alignment with the four dimensional
//! descriptors. Texts are annotated with those descriptors by quadrant, so
//! the trained model can place unseen texts on both axes.
//!
//! cargo run --release --example valence_regression

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emodistill::corpus::{filter_split, DescriptorAnnotation, LabelSpace, Split, TextSample};
use emodistill::evaluation::evaluate;
use emodistill::inference::predict_valence_activation;
use emodistill::training::{train, TrainConfig};

// (keywords, valence, activation)
const QUADRANTS: [(&[&str], f64, f64); 4] = [
    (&["thrilled", "ecstatic", "elated"], 0.9, 0.9),
    (&["serene", "content", "relaxed"], 0.8, 0.2),
    (&["furious", "panicked", "enraged"], 0.1, 0.9),
    (&["gloomy", "weary", "bored"], 0.2, 0.1),
];
const FILLER: [&str; 12] = [
    "the", "day", "was", "after", "we", "went", "home", "and", "it", "felt", "so", "really",
];

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut samples = Vec::new();
    let mut annotations = Vec::new();
    for i in 0..800 {
        let q = rng.random_range(0..4);
        let (keywords, v, a) = QUADRANTS[q];
        let mut words: Vec<&str> = (0..6).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
        words.insert(rng.random_range(0..=words.len()), keywords.choose(&mut rng).unwrap());
        let split = match i {
            0..600 => Split::Train,
            600..700 => Split::Val,
            _ => Split::Test,
        };
        let id = format!("t{i}");
        let jitter = rng.random_range(-0.05..0.05);
        samples.push(
            TextSample::new(&id, words.join(" "))
                .with_scores([("valence", v + jitter), ("activation", a - jitter)])
                .with_split(split),
        );
        let polarity = if v > 0.5 { "positivity" } else { "negativity" };
        let energy = if a > 0.5 { "high activation" } else { "low activation" };
        annotations.push(DescriptorAnnotation::new(id, [polarity, energy])?);
    }

    let dir = tempfile::tempdir()?;
    let config = TrainConfig {
        epochs: 5,
        d: 16,
        checkpoint_dir: dir.path().to_path_buf(),
        ..TrainConfig::default()
    };
    let trained = train(&filter_split(&samples, Split::Train), &annotations, &config)?;

    for text in ["we felt thrilled", "so weary after the day", "relaxed at home"] {
        let (v, a) = predict_valence_activation(text, &trained.model)?;
        println!("{text:<26} valence {v:+.3} activation {a:+.3}");
    }
    let report = evaluate(
        "quadrants",
        &filter_split(&samples, Split::Test),
        &trained.model,
        &LabelSpace::dimensional("va"),
        None,
        None,
        trained.report.provenance.clone(),
    )?;
    print!("\n{}", report.render_table());
    Ok(())
}

//! Draws a generated sequence with its ground truth and an untrained model's prediction.
//!
//! `cargo run --release --example render_scene -- [out_dir]`

use std::path::PathBuf;

use motionscene::eval::predict_sequence;
use motionscene::model::{Model, ModelConfig};
use motionscene::plot::render_prediction;
use motionscene::synthgen::{generate_dataset, GeneratorConfig};

fn main() -> motionscene::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("motionscene_plots"));
    let data = generate_dataset(&GeneratorConfig::household(1, 1, 3))?;
    let model = Model::new(ModelConfig::desk(data.class_count()), 3)?;
    let seq = &data.sequences[0];
    let pred = predict_sequence(&model, seq, 2, 3)?;
    for path in render_prediction(&out, seq, &data.meta.skeleton, &pred, &data.meta.class_names)? {
        println!("{}", path.display());
    }
    Ok(())
}

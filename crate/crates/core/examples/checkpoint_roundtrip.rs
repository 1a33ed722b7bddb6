//! Saves a model to a checkpoint in both precisions and restores it.
//!
//! `cargo run --example checkpoint_roundtrip -- [dir]`

use std::path::PathBuf;

use motionscene::checkpoint::{Checkpoint, Dtype};
use motionscene::model::{Model, ModelConfig};
use motionscene::train::TrainConfig;

fn main() -> motionscene::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir)?;
    let model = Model::new(ModelConfig::desk(3), 11)?;
    let ckpt = Checkpoint::from_model(&model, TrainConfig::default());

    for (dtype, name) in [(Dtype::F64, "demo_f64.ckpt"), (Dtype::F32, "demo_f32.ckpt")] {
        let path = dir.join(name);
        ckpt.save_as(&path, dtype)?;
        let restored = Checkpoint::load(&path)?.model()?;
        let mut worst: f64 = 0.0;
        for id in model.store.ids() {
            let d = (model.store.value(id) - restored.store.value(id)).mapv(f64::abs);
            worst = d.iter().fold(worst, |m, &v| m.max(v));
        }
        let bytes = std::fs::metadata(&path)?.len();
        println!("{dtype:?}: {bytes} bytes, max weight change {worst:.2e}");
    }
    Ok(())
}

//! Overfits the desk network on a small generated toy set and reports train-set accuracy.
//!
//! `cargo run --release --example train_toy -- [steps] [batch] [seed]`

use std::time::Instant;

use motionscene::eval::{evaluate, predict};
use motionscene::metrics::center_errors;
use motionscene::model::{Model, ModelConfig};
use motionscene::synthgen::{generate_dataset, GeneratorConfig};
use motionscene::train::{TrainConfig, Trainer};

fn main() -> motionscene::Result<()> {
    env_logger::init();
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let steps = args.first().copied().unwrap_or(300) as usize;
    let batch = args.get(1).copied().unwrap_or(8) as usize;
    let seed = args.get(2).copied().unwrap_or(0);

    let data = generate_dataset(&GeneratorConfig::toy(5, 4, seed))?;
    let ids: Vec<String> = data.sequences.iter().map(|s| s.id.clone()).collect();
    let model = Model::new(ModelConfig::desk(data.class_count()), seed)?;
    let cfg = TrainConfig {
        batch_size: batch,
        epochs: usize::MAX,
        max_steps: Some(steps),
        decay_start: usize::MAX,
        val_fraction: 0.0,
        augment: false,
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut trainer = Trainer::new(model, cfg, &data, &ids)?;
    while trainer.step < steps {
        let rec = trainer.run_epoch(None)?;
        if trainer.epoch % 20 == 0 {
            println!(
                "step {:5} loss {:.4} ({:.0}s)",
                trainer.step,
                rec.mean_loss,
                start.elapsed().as_secs_f64()
            );
        }
    }
    let (report, _) = evaluate(&trainer.model, &data, &ids, 10, seed)?;
    let preds = predict(&trainer.model, &data, &ids, 1, seed)?;
    let ml: Vec<_> = preds.iter().map(|p| p.ml.clone()).collect();
    let gts: Vec<_> = data.sequences.iter().map(|s| s.objects.clone()).collect();
    let errs = center_errors(&ml, &gts);
    let close = errs.iter().filter(|e| e.is_some_and(|d| d <= 0.2)).count();
    println!("{}", report.table());
    println!("centres within 0.2 m: {close}/{}", errs.len());
    println!("elapsed {:.0}s", start.elapsed().as_secs_f64());
    Ok(())
}

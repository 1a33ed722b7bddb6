//! Draws from the decoder's per-cluster mixture and compares the draws with the
//! maximum-likelihood box. An untrained model is used, so objectness filtering is skipped.
//!
//! `cargo run --release --example mixture_hypotheses -- [draws] [seed]`

use motionscene::metrics::box_diversity;
use motionscene::model::{Model, ModelConfig};
use motionscene::synthgen::{generate_dataset, GeneratorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> motionscene::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let draws = args.first().copied().unwrap_or(200) as usize;
    let seed = args.get(1).copied().unwrap_or(0);

    let data = generate_dataset(&GeneratorConfig::toy(1, 1, seed))?;
    let model = Model::new(ModelConfig::desk(data.class_count()), seed)?;
    let params = model.infer_trajectory(&data.sequences[0].trajectory)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    println!("{} clusters, {} modes", params.clusters(), params.means[0].nrows());
    for v in 0..params.clusters().min(4) {
        let ml = params.decode(v, &params.regress_ml(v), 0).bbox;
        let boxes: Vec<_> = (0..draws)
            .map(|_| params.decode(v, &params.regress_sample(v, &mut rng), 0).bbox)
            .collect();
        let mean: Vec<f64> = (0..3)
            .map(|k| boxes.iter().map(|b| b.center[k]).sum::<f64>() / draws as f64)
            .collect();
        println!(
            "cluster {v}: ML centre [{:.2}, {:.2}, {:.2}], mean of draws [{:.2}, {:.2}, {:.2}], diversity {:.3}",
            ml.center[0],
            ml.center[1],
            ml.center[2],
            mean[0],
            mean[1],
            mean[2],
            box_diversity(&boxes[..draws.min(50)])
        );
    }
    Ok(())
}

//! Generates a small household dataset, writes it to disk, reads it back and splits it.
//!
//! `cargo run --example generate_dataset -- [out_dir] [seed]`

use std::path::PathBuf;

use motionscene::synthgen::{generate_dataset, make_split, read_dataset, write_dataset, GeneratorConfig, SplitKind};

fn main() -> motionscene::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("motionscene_demo_data"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));

    let data = generate_dataset(&GeneratorConfig::household(4, 3, seed))?;
    write_dataset(&data, &out)?;
    let back = read_dataset(&out)?;
    assert_eq!(back.sequences.len(), data.sequences.len());

    println!(
        "{} sequences, {} joints, classes {:?}",
        data.sequences.len(),
        data.meta.skeleton.joint_count(),
        data.meta.class_names
    );
    for s in data.sequences.iter().take(4) {
        let names: Vec<&str> = s
            .objects
            .iter()
            .map(|o| data.meta.class_names[o.class_id].as_str())
            .collect();
        println!(
            "  {} room {} frames {} objects {:?}",
            s.id,
            s.room_id,
            s.trajectory.len(),
            names
        );
    }
    for kind in [SplitKind::S1, SplitKind::S2] {
        let split = make_split(&data, kind, seed)?;
        println!("{kind:?}: {} train / {} test", split.train.len(), split.test.len());
    }
    println!("written to {}", out.display());
    Ok(())
}

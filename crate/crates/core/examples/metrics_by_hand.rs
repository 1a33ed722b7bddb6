//! mAP, MMD and TMD on a hand-built two-sequence example.
//!
//! `cargo run --example metrics_by_hand`

use motionscene::decoder::SceneHypothesis;
use motionscene::geom::{OrientedBox3D, ScoredBox};
use motionscene::metrics::{average_precision, mmd, tmd, EvalReport, MAP_IOU};
use motionscene::synthgen::SceneObject;

fn scored(center: [f64; 3], class_id: usize, objectness: f64) -> ScoredBox {
    ScoredBox {
        bbox: OrientedBox3D::new(center, [1.0, 0.8, 0.7], 0.0).unwrap(),
        class_id,
        objectness,
        class_probs: vec![0.5, 0.5],
    }
}

fn main() -> motionscene::Result<()> {
    let gt = |c: [f64; 3], class_id| SceneObject {
        class_id,
        bbox: OrientedBox3D::new(c, [1.0, 0.8, 0.7], 0.0).unwrap(),
    };
    let gts = vec![
        vec![gt([0.0, 0.0, 0.35], 0), gt([3.0, 1.0, 0.35], 1)],
        vec![gt([-2.0, 2.0, 0.35], 1)],
    ];
    let ml = vec![
        vec![scored([0.05, 0.0, 0.35], 0, 0.9), scored([3.4, 1.0, 0.35], 1, 0.8)],
        vec![scored([-2.0, 2.1, 0.35], 0, 0.7)],
    ];
    // three hypotheses per sequence: jittered copies with one label flip each
    let hyps: Vec<Vec<SceneHypothesis>> = ml
        .iter()
        .map(|boxes| {
            (0..3)
                .map(|h| SceneHypothesis {
                    hypothesis_id: h,
                    boxes: boxes
                        .iter()
                        .enumerate()
                        .map(|(i, b)| {
                            let mut b = b.clone();
                            b.bbox.center[0] += 0.1 * h as f64;
                            if i == h {
                                b.class_id = 1 - b.class_id;
                            }
                            b
                        })
                        .collect(),
                })
                .collect()
        })
        .collect();

    let names = vec!["chair".to_string(), "table".to_string()];
    let ap = average_precision(&ml, &gts, 2, MAP_IOU)?;
    let m = mmd(&hyps, &gts, 2)?;
    let t = tmd(&hyps, &ml, &gts)?;
    print!("{}", EvalReport::build(&names, &ap, &m, &t, 3, 2).table());
    println!("per-hypothesis mAP: {:?}", m.per_index);
    Ok(())
}

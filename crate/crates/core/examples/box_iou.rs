//! Oriented 3D IoU against a Monte-Carlo estimate, then greedy suppression.
//!
//! `cargo run --example box_iou`

use motionscene::geom::{iou_oracle, nms3d, oriented_iou, OrientedBox3D, ScoredBox};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> motionscene::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = OrientedBox3D::new([0.0, 0.0, 0.4], [2.0, 1.0, 0.8], 0.0)?;
    for (dx, yaw) in [(0.0, 0.0), (0.5, 0.3), (0.8, std::f64::consts::FRAC_PI_4), (1.5, 1.2)] {
        let b = OrientedBox3D::new([dx, 0.2, 0.5], [1.6, 1.0, 0.9], yaw)?;
        let exact = oriented_iou(&a, &b);
        let mc = iou_oracle(&a, &b, 200_000, &mut rng);
        println!("shift {dx:.1} yaw {yaw:.2}: exact {exact:.4} monte-carlo {mc:.4}");
    }

    let scored = |x: f64, obj: f64| ScoredBox {
        bbox: OrientedBox3D::new([x, 0.0, 0.4], [1.0, 1.0, 0.8], 0.0).unwrap(),
        class_id: 0,
        objectness: obj,
        class_probs: vec![1.0],
    };
    let proposals = vec![scored(0.0, 0.9), scored(0.1, 0.8), scored(2.0, 0.7), scored(2.05, 0.95)];
    let kept = nms3d(&proposals, 0.1);
    println!("suppression keeps {} of {}:", kept.len(), proposals.len());
    for b in kept {
        println!("  x {:.2} objectness {:.2}", b.bbox.center[0], b.objectness);
    }
    Ok(())
}

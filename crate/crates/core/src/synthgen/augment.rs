use std::f64::consts::PI;

use rand::Rng;

use crate::geom::rotate2;

use super::motion::PoseTrajectory;
use super::scene::{SceneAnnotation, SceneObject};
use super::skeleton::SkeletonSpec;

/// One global rigid transform: optional mirror through `y = 0`, then a yaw rotation about the
/// origin, then a horizontal translation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentTransform {
    pub mirror: bool,
    pub yaw: f64,
    pub translation: [f64; 2],
}

impl AugmentTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Mirror with probability 0.5, yaw uniform in `[-π, π)`, translation within ±1 m.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            mirror: rng.random_bool(0.5),
            yaw: rng.random_range(-PI..PI),
            translation: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        }
    }

    fn point(&self, p: [f64; 3]) -> [f64; 3] {
        let y = if self.mirror { -p[1] } else { p[1] };
        let [x, y] = rotate2(p[0], y, self.yaw);
        [x + self.translation[0], y + self.translation[1], p[2]]
    }

    pub fn apply_trajectory(&self, traj: &PoseTrajectory, skeleton: &SkeletonSpec) -> PoseTrajectory {
        let (n, j, _) = traj.frames.dim();
        let mut frames = traj.frames.clone();
        for t in 0..n {
            for jj in 0..j {
                // mirrored bodies swap left/right labels
                let src = if self.mirror { skeleton.mirror_map[jj] } else { jj };
                let p = self.point([
                    traj.frames[[t, src, 0]],
                    traj.frames[[t, src, 1]],
                    traj.frames[[t, src, 2]],
                ]);
                for k in 0..3 {
                    frames[[t, jj, k]] = p[k];
                }
            }
        }
        PoseTrajectory {
            frames,
            frame_rate: traj.frame_rate,
        }
    }

    pub fn apply_objects(&self, objects: &[SceneObject]) -> Vec<SceneObject> {
        objects
            .iter()
            .map(|o| {
                let mut b = if self.mirror { o.bbox.mirrored_y() } else { o.bbox };
                b = b.rotated(self.yaw);
                b = b.translated([self.translation[0], self.translation[1], 0.0]);
                SceneObject {
                    class_id: o.class_id,
                    bbox: b,
                }
            })
            .collect()
    }
}

/// Applies one random global transform to the trajectory and all boxes together.
pub fn augment<R: Rng + ?Sized>(
    traj: &PoseTrajectory,
    scene: &SceneAnnotation,
    skeleton: &SkeletonSpec,
    rng: &mut R,
) -> (PoseTrajectory, SceneAnnotation) {
    let t = AugmentTransform::sample(rng);
    let objects = t.apply_objects(&scene.objects);
    (
        t.apply_trajectory(traj, skeleton),
        SceneAnnotation {
            objects,
            ..scene.clone()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{normalize_angle, OrientedBox3D};
    use crate::synthgen::motion::root_track;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_pair() -> (PoseTrajectory, Vec<SceneObject>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = Array3::from_shape_fn((6, 17, 3), |_| rng.random_range(-2.0..2.0));
        let objects = vec![SceneObject {
            class_id: 2,
            bbox: OrientedBox3D::new([1.0, 2.0, 0.4], [0.8, 1.2, 0.8], 0.3).unwrap(),
        }];
        (
            PoseTrajectory {
                frames,
                frame_rate: 5.0,
            },
            objects,
        )
    }

    fn pairwise(traj: &PoseTrajectory, t: usize) -> Vec<f64> {
        let j = traj.joint_count();
        let mut d = Vec::new();
        for a in 0..j {
            for b in 0..j {
                let v: f64 = (0..3)
                    .map(|k| (traj.frames[[t, a, k]] - traj.frames[[t, b, k]]).powi(2))
                    .sum();
                d.push(v.sqrt());
            }
        }
        d
    }

    #[test]
    fn identity_draw_changes_nothing() {
        let (traj, objs) = sample_pair();
        let sk = SkeletonSpec::body17();
        let id = AugmentTransform::identity();
        assert_eq!(id.apply_trajectory(&traj, &sk), traj);
        assert_eq!(id.apply_objects(&objs), objs);
    }

    #[test]
    fn pure_translation_shifts_everything() {
        let (traj, objs) = sample_pair();
        let sk = SkeletonSpec::body17();
        let t = AugmentTransform {
            translation: [0.7, -0.3],
            ..Default::default()
        };
        let moved = t.apply_trajectory(&traj, &sk);
        assert_eq!(moved, traj.translated([0.7, -0.3, 0.0]));
        let b = t.apply_objects(&objs)[0].bbox;
        assert!((b.center[0] - 1.7).abs() < 1e-12 && (b.center[1] - 1.7).abs() < 1e-12);
        assert_eq!(b.yaw, objs[0].bbox.yaw);
    }

    #[test]
    fn quarter_turn_rotates_boxes_and_root() {
        let (traj, objs) = sample_pair();
        let sk = SkeletonSpec::body17();
        let t = AugmentTransform {
            yaw: PI / 2.0,
            ..Default::default()
        };
        let b = t.apply_objects(&objs)[0].bbox;
        assert!((b.yaw - normalize_angle(0.3 + PI / 2.0)).abs() < 1e-12);
        assert!((b.center[0] + 2.0).abs() < 1e-12 && (b.center[1] - 1.0).abs() < 1e-12);
        let r0 = root_track(&traj, &sk);
        let r1 = root_track(&t.apply_trajectory(&traj, &sk), &sk);
        for i in 0..r0.nrows() {
            // (x, y) -> (-y, x)
            assert!((r1[[i, 0]] + r0[[i, 1]]).abs() < 1e-12);
            assert!((r1[[i, 1]] - r0[[i, 0]]).abs() < 1e-12);
            assert!((r1[[i, 2]] - r0[[i, 2]]).abs() < 1e-12);
        }
    }

    #[test]
    fn random_transforms_are_rigid() {
        let (traj, objs) = sample_pair();
        let sk = SkeletonSpec::body17();
        let scene = SceneAnnotation {
            objects: objs,
            room_id: "r".into(),
            sequence_id: "s".into(),
            placement_incomplete: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (t2, s2) = augment(&traj, &scene, &sk, &mut rng);
            for f in 0..traj.len() {
                let (a, b) = (pairwise(&traj, f), pairwise(&t2, f));
                // mirroring relabels joints, so compare as multisets
                let mut a = a;
                let mut b = b;
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
            assert_eq!(s2.objects[0].bbox.size, scene.objects[0].bbox.size);
        }
    }

    #[test]
    fn mirroring_keeps_front_semantics() {
        // A box whose front faces a point keeps facing the mirrored point.
        let b = OrientedBox3D::new([1.0, 1.0, 0.5], [1.0, 2.0, 1.0], 0.6).unwrap();
        let f = b.front();
        let target = [b.center[0] + f[0], b.center[1] + f[1]];
        let m = b.mirrored_y();
        let mf = m.front();
        assert!((m.center[0] + mf[0] - target[0]).abs() < 1e-12);
        assert!((m.center[1] + mf[1] + target[1]).abs() < 1e-12);
    }
}

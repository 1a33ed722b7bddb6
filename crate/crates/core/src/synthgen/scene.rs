use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{clip_convex, rotate2, OrientedBox3D, Vec3};

use super::motion::InteractionKind;

/// Gap kept around every footprint when placing objects.
pub const PLACEMENT_MARGIN: f64 = 0.25;
/// Depth of the free zone required in front of every object.
pub const APPROACH_DEPTH: f64 = 0.8;
const WALL_MARGIN: f64 = 0.1;
const MAX_REJECTIONS: usize = 1000;

/// Size prior and allowed interactions for one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub name: String,
    /// Mean extents along the box-local x (front), y and z axes.
    pub size_mean: Vec3,
    pub size_std: Vec3,
    pub interactions: Vec<InteractionKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSet {
    pub classes: Vec<ClassPrior>,
}

fn prior(name: &str, mean: Vec3, rel_std: f64, interactions: &[InteractionKind]) -> ClassPrior {
    ClassPrior {
        name: name.to_string(),
        size_mean: mean,
        size_std: mean.map(|m| m * rel_std),
        interactions: interactions.to_vec(),
    }
}

impl ClassSet {
    /// Eight household classes used by the desk-scale configuration.
    pub fn household8() -> Self {
        use InteractionKind::*;
        Self {
            classes: vec![
                prior("bed", [1.6, 2.0, 0.5], 0.06, &[Lie, Sit]),
                prior("chair", [0.5, 0.5, 0.9], 0.06, &[Sit]),
                prior("sofa", [0.9, 2.0, 0.85], 0.06, &[Sit, Lie]),
                prior("table", [0.8, 1.2, 0.75], 0.06, &[Reach]),
                prior("desk", [0.7, 1.4, 0.75], 0.06, &[Reach]),
                prior("cabinet", [0.5, 1.0, 1.0], 0.06, &[Reach]),
                prior("fridge", [0.7, 0.8, 1.8], 0.05, &[Reach]),
                prior("toilet", [0.7, 0.45, 0.8], 0.05, &[Sit]),
            ],
        }
    }

    /// Three large classes with tight size priors, for quick training runs.
    pub fn toy3() -> Self {
        use InteractionKind::*;
        Self {
            classes: vec![
                prior("bed", [1.6, 2.0, 0.5], 0.03, &[Lie]),
                prior("sofa", [0.9, 2.0, 0.85], 0.03, &[Sit]),
                prior("table", [0.8, 1.2, 0.75], 0.03, &[Reach]),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

/// Rectangular floor `[0, width] × [0, depth]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub room_id: String,
    pub width: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: usize,
    pub bbox: OrientedBox3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub objects: Vec<SceneObject>,
    pub room_id: String,
    pub sequence_id: String,
    /// Set when rejection sampling gave up before reaching the requested object count.
    pub placement_incomplete: bool,
}

/// Corners of a yaw-rotated rectangle given in box-local coordinates `[x0, x1] × [y0, y1]`.
pub(crate) fn local_rect(b: &OrientedBox3D, x0: f64, x1: f64, y0: f64, y1: f64) -> [[f64; 2]; 4] {
    [[x0, y0], [x1, y0], [x1, y1], [x0, y1]].map(|[x, y]| {
        let [rx, ry] = rotate2(x, y, b.yaw);
        [b.center[0] + rx, b.center[1] + ry]
    })
}

/// Footprint grown by `margin` on every side.
pub(crate) fn inflated_footprint(b: &OrientedBox3D, margin: f64) -> [[f64; 2]; 4] {
    let hx = 0.5 * b.size[0] + margin;
    let hy = 0.5 * b.size[1] + margin;
    local_rect(b, -hx, hx, -hy, hy)
}

/// Free rectangle in front of the box where the agent stands to interact.
pub(crate) fn approach_zone(b: &OrientedBox3D) -> [[f64; 2]; 4] {
    let hx = 0.5 * b.size[0];
    let hy = (0.5 * b.size[1]).min(0.4);
    local_rect(b, hx, hx + APPROACH_DEPTH, -hy, hy)
}

pub(crate) fn polygons_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let clipped = clip_convex(a, b);
    if clipped.len() < 3 {
        return false;
    }
    let mut area = 0.0;
    for i in 0..clipped.len() {
        let [x0, y0] = clipped[i];
        let [x1, y1] = clipped[(i + 1) % clipped.len()];
        area += x0 * y1 - x1 * y0;
    }
    0.5 * area > 1e-9
}

fn inside_room(poly: &[[f64; 2]], room: &RoomSpec) -> bool {
    poly.iter().all(|&[x, y]| {
        x >= WALL_MARGIN && x <= room.width - WALL_MARGIN && y >= WALL_MARGIN && y <= room.depth - WALL_MARGIN
    })
}

/// Draws a size from the class prior, clamped to two standard deviations.
pub fn sample_size<R: Rng + ?Sized>(prior: &ClassPrior, rng: &mut R) -> Vec3 {
    let mut s = [0.0; 3];
    for k in 0..3 {
        let z: f64 = StandardNormal.sample(rng);
        let sd = prior.size_std[k];
        s[k] = (prior.size_mean[k] + sd * z)
            .clamp(prior.size_mean[k] - 2.0 * sd, prior.size_mean[k] + 2.0 * sd)
            .max(1e-3);
    }
    s
}

/// Rejection-samples up to `max_objects` non-overlapping objects resting on the floor.
///
/// The object count is drawn uniformly from `1..=max_objects`. Each object gets up to 1000
/// placement attempts; when one runs out, the scene is returned early with
/// `placement_incomplete` set (at least one object is always placed or an error is returned).
pub fn generate_scene<R: Rng + ?Sized>(
    room: &RoomSpec,
    class_set: &ClassSet,
    max_objects: usize,
    rng: &mut R,
) -> Result<SceneAnnotation> {
    if class_set.is_empty() {
        return Err(Error::Config("class set is empty".into()));
    }
    if max_objects == 0 {
        return Err(Error::Config("max_objects must be at least 1".into()));
    }
    let target = rng.random_range(1..=max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(target);
    let mut incomplete = false;

    'objects: while objects.len() < target {
        for _ in 0..MAX_REJECTIONS {
            let class_id = rng.random_range(0..class_set.len());
            let size = sample_size(&class_set.classes[class_id], rng);
            let yaw = rng.random_range(-PI..PI);
            let cx = rng.random_range(0.0..room.width);
            let cy = rng.random_range(0.0..room.depth);
            let bbox = OrientedBox3D::new([cx, cy, 0.5 * size[2]], size, yaw)?;

            let body = inflated_footprint(&bbox, PLACEMENT_MARGIN);
            let zone = approach_zone(&bbox);
            if !inside_room(&bbox.footprint(), room) || !inside_room(&zone, room) {
                continue;
            }
            let clash = objects.iter().any(|o| {
                let other_body = inflated_footprint(&o.bbox, PLACEMENT_MARGIN);
                polygons_overlap(&body, &other_body)
                    || polygons_overlap(&zone, &other_body)
                    || polygons_overlap(&approach_zone(&o.bbox), &body)
            });
            if clash {
                continue;
            }
            objects.push(SceneObject { class_id, bbox });
            continue 'objects;
        }
        incomplete = true;
        break;
    }

    if objects.is_empty() {
        return Err(Error::Data(format!(
            "room {} ({} × {} m) cannot fit any object",
            room.room_id, room.width, room.depth
        )));
    }
    if incomplete {
        log::warn!(
            "room {}: placed {} of {} objects before giving up",
            room.room_id,
            objects.len(),
            target
        );
    }
    Ok(SceneAnnotation {
        objects,
        room_id: room.room_id.clone(),
        sequence_id: String::new(),
        placement_incomplete: incomplete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::bev_iou;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn room() -> RoomSpec {
        RoomSpec {
            room_id: "r0".into(),
            width: 7.0,
            depth: 6.0,
        }
    }

    #[test]
    fn single_class_single_object() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = ClassSet {
            classes: vec![ClassSet::toy3().classes[2].clone()],
        };
        let s = generate_scene(&room(), &set, 1, &mut rng).unwrap();
        assert_eq!(s.objects.len(), 1);
        for [x, y] in s.objects[0].bbox.footprint() {
            assert!((0.0..=7.0).contains(&x) && (0.0..=6.0).contains(&y));
        }
    }

    #[test]
    fn default_scenes_are_sparse_and_bounded() {
        let set = ClassSet::household8();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = generate_scene(&room(), &set, 10, &mut rng).unwrap();
            assert!((1..=10).contains(&s.objects.len()));
            for i in 0..s.objects.len() {
                for j in (i + 1)..s.objects.len() {
                    assert_eq!(bev_iou(&s.objects[i].bbox, &s.objects[j].bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let set = ClassSet::household8();
        let a = generate_scene(&room(), &set, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_scene(&room(), &set, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn sizes_stay_within_two_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = &ClassSet::household8().classes[0];
        for _ in 0..500 {
            let s = sample_size(p, &mut rng);
            for k in 0..3 {
                assert!((s[k] - p.size_mean[k]).abs() <= 2.0 * p.size_std[k] + 1e-12);
            }
        }
    }
}

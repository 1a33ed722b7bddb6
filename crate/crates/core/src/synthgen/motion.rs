//! Scripted agent motion: walk to each object and play an interaction clip anchored to it.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, OrientedBox3D, Vec3};

use super::pose::{pose_body, Posture, STAND_ROOT_HEIGHT};
use super::scene::{inflated_footprint, SceneAnnotation};
use super::skeleton::{joint, SkeletonSpec};

/// Recording rate of generated trajectories, in Hz.
pub const FRAME_RATE: f64 = 5.0;
/// Root travel per frame while walking (1 m/s at 5 Hz).
const WALK_STEP: f64 = 0.2;
/// Clearance between the walking root and every footprint edge.
pub const WALK_CLEARANCE: f64 = 0.2;
const DETOUR_EXTRA: f64 = 0.15;
const ROOM_MARGIN: f64 = 0.2;

/// Joint positions over time, `N × J × 3`, in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrajectory {
    pub frames: Array3<f64>,
    pub frame_rate: f64,
}

impl PoseTrajectory {
    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joint_count(&self) -> usize {
        self.frames.dim().1
    }

    /// Checks `N ≥ 2`, finiteness and the 0.5 m per-frame root displacement bound.
    pub fn validate(&self, skeleton: &SkeletonSpec) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Data("trajectory needs at least two frames".into()));
        }
        if self.joint_count() != skeleton.joint_count() || self.frames.dim().2 != 3 {
            return Err(Error::Data(format!(
                "trajectory has shape {:?}, skeleton has {} joints",
                self.frames.dim(),
                skeleton.joint_count()
            )));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("trajectory contains non-finite values".into()));
        }
        let root = root_track(self, skeleton);
        for t in 1..root.nrows() {
            let d = (&root.row(t) - &root.row(t - 1)).mapv(|v| v * v).sum().sqrt();
            if d > 0.5 + 1e-9 {
                return Err(Error::Data(format!("root jumps {d:.3} m at frame {t}")));
            }
        }
        Ok(())
    }

    /// Adds the same translation to every joint.
    pub fn translated(&self, t: Vec3) -> Self {
        let mut frames = self.frames.clone();
        for mut p in frames.lanes_mut(ndarray::Axis(2)) {
            for k in 0..3 {
                p[k] += t[k];
            }
        }
        Self {
            frames,
            frame_rate: self.frame_rate,
        }
    }
}

/// Per-frame centroid of the hip joints, `N × 3`.
pub fn root_track(traj: &PoseTrajectory, skeleton: &SkeletonSpec) -> Array2<f64> {
    let n = traj.len();
    let hips = &skeleton.hip_joint_ids;
    let w = 1.0 / hips.len() as f64;
    let mut r = Array2::zeros((n, 3));
    for t in 0..n {
        for &h in hips {
            for k in 0..3 {
                r[[t, k]] += w * traj.frames[[t, h, k]];
            }
        }
    }
    r
}

/// `m` indices spread uniformly over `[0, n − 1]`, rounded to the nearest frame.
pub fn uniform_indices(n: usize, m: usize) -> Vec<usize> {
    assert!(n >= 1, "cannot sample from an empty sequence");
    if m == 1 {
        return vec![0];
    }
    let span = (n - 1) as f64;
    (0..m)
        .map(|k| ((k as f64) * span / ((m - 1) as f64)).round() as usize)
        .collect()
}

/// Resamples to `n_target` frames at uniformly spaced source indices (duplicates allowed).
pub fn resample_frames(traj: &PoseTrajectory, n_target: usize) -> Result<PoseTrajectory> {
    if traj.len() < 2 || n_target < 2 {
        return Err(Error::Config(format!(
            "resampling needs at least two source and target frames (got {} → {n_target})",
            traj.len()
        )));
    }
    let idx = uniform_indices(traj.len(), n_target);
    Ok(PoseTrajectory {
        frames: traj.frames.select(ndarray::Axis(0), &idx),
        frame_rate: traj.frame_rate,
    })
}

/// Interaction clip families, each anchored to the object's front face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    /// Turn around in front of the object and sit down on it.
    Sit,
    /// Sit on the front edge, then lie down along the object's local y axis.
    Lie,
    /// Stand facing the object and reach towards its top surface.
    Reach,
}

/// Interaction clips available for each class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTemplates {
    pub by_class: Vec<Vec<InteractionKind>>,
}

impl MotionTemplates {
    pub fn from_class_set(set: &super::scene::ClassSet) -> Self {
        Self {
            by_class: set.classes.iter().map(|c| c.interactions.clone()).collect(),
        }
    }

    /// Distance from the box center to where the agent stands before the clip.
    fn approach_offset(kind: InteractionKind, b: &OrientedBox3D) -> f64 {
        match kind {
            InteractionKind::Sit | InteractionKind::Lie => 0.5 * b.size[0] + 0.45,
            InteractionKind::Reach => 0.5 * b.size[0] + 0.35,
        }
    }
}

/// Trajectory plus the indices (into the scene's objects) the agent actually reached.
#[derive(Debug, Clone)]
pub struct TrajectoryOutcome {
    pub trajectory: PoseTrajectory,
    pub visited: Vec<usize>,
}

struct Agent {
    pos: [f64; 2],
    z: f64,
    heading: f64,
    phase: f64,
    frames: Vec<[Vec3; joint::COUNT]>,
}

impl Agent {
    fn emit(&mut self, posture: Posture) {
        self.frames
            .push(pose_body([self.pos[0], self.pos[1], self.z], self.heading, &posture));
    }

    fn stand(&mut self) {
        self.emit(Posture::default());
    }

    fn walk_leg(&mut self, to: [f64; 2]) {
        let dx = to[0] - self.pos[0];
        let dy = to[1] - self.pos[1];
        let dist = dx.hypot(dy);
        if dist < 1e-9 {
            return;
        }
        let dir = dy.atan2(dx);
        let steps = (dist / WALK_STEP).ceil() as usize;
        let start = self.pos;
        let start_heading = self.heading;
        for s in 1..=steps {
            let t = s as f64 / steps as f64;
            self.pos = [start[0] + dx * t, start[1] + dy * t];
            let turn = (s as f64 / 2.0).min(1.0);
            self.heading = normalize_angle(start_heading + turn * normalize_angle(dir - start_heading));
            self.phase += PI / 2.0;
            self.z = STAND_ROOT_HEIGHT + 0.02 * self.phase.sin().abs();
            self.emit(Posture {
                gait_phase: self.phase,
                stride: 1.0,
                ..Default::default()
            });
        }
        self.z = STAND_ROOT_HEIGHT;
    }

    fn turn_to(&mut self, heading: f64, frames: usize) {
        let start = self.heading;
        let delta = normalize_angle(heading - start);
        for s in 1..=frames {
            self.heading = normalize_angle(start + delta * s as f64 / frames as f64);
            self.stand();
        }
    }

    /// Blends root position, height, heading and posture from the current state to the target.
    fn blend(&mut self, pos: [f64; 2], z: f64, heading: f64, from: Posture, to: Posture, frames: usize) {
        let (p0, z0, h0) = (self.pos, self.z, self.heading);
        let dh = normalize_angle(heading - h0);
        for s in 1..=frames {
            let t = s as f64 / frames as f64;
            self.pos = [p0[0] + (pos[0] - p0[0]) * t, p0[1] + (pos[1] - p0[1]) * t];
            self.z = z0 + (z - z0) * t;
            self.heading = normalize_angle(h0 + dh * t);
            let lerp = |a: f64, b: f64| a + (b - a) * t;
            self.emit(Posture {
                sit: lerp(from.sit, to.sit),
                lie: lerp(from.lie, to.lie),
                reach: lerp(from.reach, to.reach),
                reach_height: to.reach_height.max(from.reach_height),
                ..Default::default()
            });
        }
    }

    fn hold(&mut self, posture: Posture, frames: usize) {
        for _ in 0..frames {
            self.emit(posture);
        }
    }
}

fn point_in_convex(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

fn segments_cross(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let orient = |u: [f64; 2], v: [f64; 2], w: [f64; 2]| (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0]);
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let d3 = orient(p, q, a);
    let d4 = orient(p, q, b);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0)
}

pub(crate) fn segment_hits_polygon(p: [f64; 2], q: [f64; 2], poly: &[[f64; 2]]) -> bool {
    if point_in_convex(p, poly) || point_in_convex(q, poly) {
        return true;
    }
    let n = poly.len();
    (0..n).any(|i| segments_cross(p, q, poly[i], poly[(i + 1) % n]))
}

struct Planner {
    obstacles: Vec<[[f64; 2]; 4]>,
    detour_corners: Vec<[f64; 2]>,
    bounds: ([f64; 2], [f64; 2]),
}

impl Planner {
    fn new(scene: &SceneAnnotation, bounds: ([f64; 2], [f64; 2])) -> Self {
        let obstacles = scene
            .objects
            .iter()
            .map(|o| inflated_footprint(&o.bbox, WALK_CLEARANCE))
            .collect();
        let detour_corners = scene
            .objects
            .iter()
            .flat_map(|o| inflated_footprint(&o.bbox, WALK_CLEARANCE + DETOUR_EXTRA))
            .collect();
        Self {
            obstacles,
            detour_corners,
            bounds,
        }
    }

    fn in_bounds(&self, p: [f64; 2]) -> bool {
        let (lo, hi) = self.bounds;
        p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1]
    }

    fn free(&self, p: [f64; 2]) -> bool {
        self.in_bounds(p) && !self.obstacles.iter().any(|o| point_in_convex(p, o))
    }

    fn clear(&self, p: [f64; 2], q: [f64; 2]) -> bool {
        !self.obstacles.iter().any(|o| segment_hits_polygon(p, q, o))
    }

    /// Straight line, or the shortest single-waypoint detour around footprint corners.
    fn plan(&self, from: [f64; 2], to: [f64; 2]) -> Option<Vec<[f64; 2]>> {
        if self.clear(from, to) {
            return Some(vec![to]);
        }
        let len = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
        self.detour_corners
            .iter()
            .filter(|&&w| self.free(w) && self.clear(from, w) && self.clear(w, to))
            .min_by(|a, b| {
                (len(from, **a) + len(**a, to))
                    .partial_cmp(&(len(from, **b) + len(**b, to)))
                    .unwrap()
            })
            .map(|&w| vec![w, to])
    }
}

/// Options for [`generate_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionOptions {
    /// Standard deviation of Gaussian noise added to every joint coordinate.
    pub joint_noise_std: f64,
}

impl Default for MotionOptions {
    fn default() -> Self {
        Self { joint_noise_std: 0.0 }
    }
}

/// Scripts the agent through every object of `scene` in random order.
///
/// `room_extent` bounds the walkable floor. Objects the planner cannot reach are skipped and
/// left out of [`TrajectoryOutcome::visited`].
pub fn generate_trajectory<R: Rng + ?Sized>(
    scene: &SceneAnnotation,
    room_extent: [f64; 2],
    skeleton: &SkeletonSpec,
    templates: &MotionTemplates,
    options: MotionOptions,
    rng: &mut R,
) -> Result<TrajectoryOutcome> {
    let all: Vec<usize> = (0..scene.objects.len()).collect();
    generate_visits(scene, &all, room_extent, skeleton, templates, options, rng)
}

/// Like [`generate_trajectory`] but only interacts with `targets`; every object still blocks
/// the walk.
pub fn generate_visits<R: Rng + ?Sized>(
    scene: &SceneAnnotation,
    targets: &[usize],
    room_extent: [f64; 2],
    skeleton: &SkeletonSpec,
    templates: &MotionTemplates,
    options: MotionOptions,
    rng: &mut R,
) -> Result<TrajectoryOutcome> {
    if templates.by_class.is_empty() {
        return Err(Error::Config("motion templates are empty".into()));
    }
    for &i in targets {
        let o = scene
            .objects
            .get(i)
            .ok_or_else(|| Error::Config(format!("target {i} is not in the scene")))?;
        match templates.by_class.get(o.class_id) {
            Some(list) if !list.is_empty() => {}
            _ => return Err(Error::Config(format!("no interaction clip for class {}", o.class_id))),
        }
    }
    if skeleton.joint_count() < joint::COUNT {
        return Err(Error::Config(format!(
            "the generator poses {} body joints; skeleton has {}",
            joint::COUNT,
            skeleton.joint_count()
        )));
    }

    let bounds = (
        [ROOM_MARGIN, ROOM_MARGIN],
        [room_extent[0] - ROOM_MARGIN, room_extent[1] - ROOM_MARGIN],
    );
    let planner = Planner::new(scene, bounds);

    let mut start = None;
    for _ in 0..1000 {
        let p = [
            rng.random_range(bounds.0[0]..bounds.1[0]),
            rng.random_range(bounds.0[1]..bounds.1[1]),
        ];
        if planner.free(p) {
            start = Some(p);
            break;
        }
    }
    let start = start.ok_or_else(|| Error::Data("no free start location".into()))?;
    let mut agent = Agent {
        pos: start,
        z: STAND_ROOT_HEIGHT,
        heading: rng.random_range(-PI..PI),
        phase: 0.0,
        frames: Vec::new(),
    };
    agent.stand();

    let mut order: Vec<usize> = targets.to_vec();
    order.shuffle(rng);
    let mut visited = Vec::new();

    for idx in order {
        let obj = &scene.objects[idx];
        let b = &obj.bbox;
        let choices = &templates.by_class[obj.class_id];
        let kind = choices[rng.random_range(0..choices.len())];
        let front = b.front();
        let off = MotionTemplates::approach_offset(kind, b);
        let approach = [b.center[0] + front[0] * off, b.center[1] + front[1] * off];
        if !planner.free(approach) {
            continue;
        }
        let Some(path) = planner.plan(agent.pos, approach) else {
            log::debug!("object {idx} unreachable, skipped");
            continue;
        };
        for w in path {
            agent.walk_leg(w);
        }
        play_clip(&mut agent, kind, b, rng);
        visited.push(idx);
    }
    agent.stand();

    let n = agent.frames.len();
    let j = skeleton.joint_count();
    let mut frames = Array3::zeros((n, j, 3));
    for (t, body) in agent.frames.iter().enumerate() {
        for jj in 0..j {
            let src = if jj < joint::COUNT { jj } else { joint::PELVIS };
            for k in 0..3 {
                frames[[t, jj, k]] = body[src][k];
            }
        }
    }
    if options.joint_noise_std > 0.0 {
        let noise =
            Normal::new(0.0, options.joint_noise_std).map_err(|e| Error::Config(format!("joint noise: {e}")))?;
        frames.mapv_inplace(|v| v + noise.sample(rng));
    }
    Ok(TrajectoryOutcome {
        trajectory: PoseTrajectory {
            frames,
            frame_rate: FRAME_RATE,
        },
        visited,
    })
}

fn play_clip<R: Rng + ?Sized>(agent: &mut Agent, kind: InteractionKind, b: &OrientedBox3D, rng: &mut R) {
    let front = b.front();
    let at = |d: f64| [b.center[0] + front[0] * d, b.center[1] + front[1] * d];
    let stand = Posture::default();
    let approach = agent.pos;
    match kind {
        InteractionKind::Sit => {
            agent.turn_to(b.yaw, 3);
            let seat_z = (0.5 * b.size[2]).clamp(0.35, 0.55) + 0.1;
            let seated = Posture {
                sit: 1.0,
                ..Default::default()
            };
            agent.blend(at(0.1 * b.size[0]), seat_z, b.yaw, stand, seated, 4);
            agent.hold(seated, rng.random_range(4..=8));
            agent.blend(approach, STAND_ROOT_HEIGHT, b.yaw, seated, stand, 4);
        }
        InteractionKind::Lie => {
            agent.turn_to(b.yaw, 3);
            let surface = b.size[2].min(0.6) + 0.1;
            let seated = Posture {
                sit: 1.0,
                ..Default::default()
            };
            let lying = Posture {
                lie: 1.0,
                ..Default::default()
            };
            let edge = at((0.5 * b.size[0] - 0.25).max(0.0));
            agent.blend(edge, surface, b.yaw, stand, seated, 4);
            agent.blend(at(0.0), surface + 0.1, b.yaw + PI / 2.0, seated, lying, 4);
            agent.hold(lying, rng.random_range(4..=8));
            agent.blend(edge, surface, b.yaw, lying, seated, 4);
            agent.blend(approach, STAND_ROOT_HEIGHT, b.yaw, seated, stand, 4);
        }
        InteractionKind::Reach => {
            agent.turn_to(b.yaw + PI, 3);
            let reaching = Posture {
                reach: 1.0,
                reach_height: b.size[2].clamp(0.6, 1.7),
                ..Default::default()
            };
            agent.blend(approach, STAND_ROOT_HEIGHT, b.yaw + PI, stand, reaching, 3);
            agent.hold(reaching, rng.random_range(3..=6));
            agent.blend(approach, STAND_ROOT_HEIGHT, b.yaw + PI, reaching, stand, 3);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::scene::{generate_scene, ClassSet, RoomSpec, SceneObject};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chair_scene() -> SceneAnnotation {
        SceneAnnotation {
            objects: vec![SceneObject {
                class_id: 1,
                bbox: OrientedBox3D::new([3.0, 3.0, 0.45], [0.5, 0.5, 0.9], 0.4).unwrap(),
            }],
            room_id: "r".into(),
            sequence_id: "s".into(),
            placement_incomplete: false,
        }
    }

    fn dist2(a: &[f64], b: &[f64]) -> f64 {
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    #[test]
    fn sitting_on_a_chair_ends_near_the_chair() {
        let scene = chair_scene();
        let sk = SkeletonSpec::body17();
        let templates = MotionTemplates::from_class_set(&ClassSet::household8());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = generate_trajectory(&scene, [6.0, 6.0], &sk, &templates, MotionOptions::default(), &mut rng).unwrap();
        assert_eq!(out.visited, vec![0]);
        let root = root_track(&out.trajectory, &sk);
        let last = root.row(root.nrows() - 1);
        assert!(dist2(last.as_slice().unwrap(), &scene.objects[0].bbox.center) < 1.0);
        out.trajectory.validate(&sk).unwrap();
    }

    #[test]
    fn missing_templates_are_rejected() {
        let sk = SkeletonSpec::body17();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let empty = MotionTemplates { by_class: vec![] };
        assert!(generate_trajectory(
            &chair_scene(),
            [6.0, 6.0],
            &sk,
            &empty,
            MotionOptions::default(),
            &mut rng
        )
        .is_err());
        let no_clip = MotionTemplates {
            by_class: vec![vec![InteractionKind::Sit], vec![]],
        };
        assert!(generate_trajectory(
            &chair_scene(),
            [6.0, 6.0],
            &sk,
            &no_clip,
            MotionOptions::default(),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn trajectories_are_deterministic() {
        let sk = SkeletonSpec::body17();
        let templates = MotionTemplates::from_class_set(&ClassSet::household8());
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            generate_trajectory(
                &chair_scene(),
                [6.0, 6.0],
                &sk,
                &templates,
                MotionOptions::default(),
                &mut rng,
            )
            .unwrap()
            .trajectory
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn walking_keeps_clear_and_every_visit_comes_close() {
        let set = ClassSet::household8();
        let sk = SkeletonSpec::body17();
        let templates = MotionTemplates::from_class_set(&set);
        let room = RoomSpec {
            room_id: "r".into(),
            width: 7.0,
            depth: 6.0,
        };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = generate_scene(&room, &set, 8, &mut rng).unwrap();
            let out =
                generate_trajectory(&scene, [7.0, 6.0], &sk, &templates, MotionOptions::default(), &mut rng).unwrap();
            out.trajectory.validate(&sk).unwrap();
            let root = root_track(&out.trajectory, &sk);
            for &v in &out.visited {
                let c = scene.objects[v].bbox.center;
                let closest = root
                    .rows()
                    .into_iter()
                    .map(|r| dist2(r.as_slice().unwrap(), &c))
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    closest < 1.0,
                    "seed {seed}: object {v} never approached ({closest:.2} m)"
                );
            }
        }
    }

    #[test]
    fn uniform_index_rules() {
        assert_eq!(uniform_indices(4, 2), vec![0, 3]);
        assert_eq!(uniform_indices(3, 2), vec![0, 2]);
        assert_eq!(uniform_indices(5, 5), vec![0, 1, 2, 3, 4]);
        let idx = uniform_indices(100, 768);
        assert_eq!(idx.len(), 768);
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((idx[0], idx[767]), (0, 99));
    }

    #[test]
    fn resampling_examples() {
        let frames = Array3::from_shape_fn((4, 1, 3), |(t, _, k)| (t * 10 + k) as f64);
        let traj = PoseTrajectory {
            frames,
            frame_rate: FRAME_RATE,
        };
        let two = resample_frames(&traj, 2).unwrap();
        assert_eq!(
            two.frames.index_axis(ndarray::Axis(0), 0),
            traj.frames.index_axis(ndarray::Axis(0), 0)
        );
        assert_eq!(
            two.frames.index_axis(ndarray::Axis(0), 1),
            traj.frames.index_axis(ndarray::Axis(0), 3)
        );
        assert_eq!(resample_frames(&traj, 4).unwrap(), traj);
        assert!(resample_frames(&traj, 1).is_err());
    }
}

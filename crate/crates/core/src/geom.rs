//! Oriented 3D boxes: corners, exact IoU, a Monte-Carlo IoU estimate, and 3D NMS.
//!
//! Boxes rotate about the vertical `z` axis only. The box-local `+x` axis is the
//! object's front-facing direction; `size` holds the extents along local `x`, `y`
//! and `z`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Footprints with an area below this are treated as empty.
const AREA_EPS: f64 = 1e-12;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Rotates `(x, y)` counter-clockwise by `yaw`.
#[inline]
pub fn rotate2(x: f64, y: f64, yaw: f64) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [c * x - s * y, s * x + c * y]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub center: Vec3,
    pub size: Vec3,
    pub yaw: f64,
}

impl OrientedBox3D {
    /// Builds a validated box with its yaw wrapped into `(-π, π]`.
    pub fn new(center: Vec3, size: Vec3, yaw: f64) -> Result<Self> {
        let b = Self {
            center,
            size,
            yaw: normalize_angle(yaw),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "size components must be positive and finite, got {:?}",
                self.size
            )));
        }
        if self.center.iter().any(|c| !c.is_finite()) || !self.yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite center or yaw".into()));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn z_range(&self) -> (f64, f64) {
        let h = 0.5 * self.size[2];
        (self.center[2] - h, self.center[2] + h)
    }

    /// Footprint polygon, counter-clockwise seen from above, starting at local (−,−).
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let hx = 0.5 * self.size[0];
        let hy = 0.5 * self.size[1];
        let local = [[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]];
        local.map(|[x, y]| {
            let [rx, ry] = rotate2(x, y, self.yaw);
            [self.center[0] + rx, self.center[1] + ry]
        })
    }

    /// Eight corners: the bottom face in footprint order, then the top face in the same order.
    pub fn corners(&self) -> [Vec3; 8] {
        let fp = self.footprint();
        let (z0, z1) = self.z_range();
        let mut out = [[0.0; 3]; 8];
        for (i, [x, y]) in fp.iter().enumerate() {
            out[i] = [*x, *y, z0];
            out[i + 4] = [*x, *y, z1];
        }
        out
    }

    /// Point containment via the inverse rotation into the box frame.
    pub fn contains(&self, p: Vec3) -> bool {
        let [lx, ly] = rotate2(p[0] - self.center[0], p[1] - self.center[1], -self.yaw);
        lx.abs() <= 0.5 * self.size[0]
            && ly.abs() <= 0.5 * self.size[1]
            && (p[2] - self.center[2]).abs() <= 0.5 * self.size[2]
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in self.corners() {
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        (lo, hi)
    }

    /// Unit vector of the front-facing direction in the floor plane.
    pub fn front(&self) -> [f64; 2] {
        rotate2(1.0, 0.0, self.yaw)
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self {
            center: [self.center[0] + t[0], self.center[1] + t[1], self.center[2] + t[2]],
            ..*self
        }
    }

    /// Rotates the box about the vertical axis through the origin.
    pub fn rotated(&self, yaw: f64) -> Self {
        let [x, y] = rotate2(self.center[0], self.center[1], yaw);
        Self {
            center: [x, y, self.center[2]],
            size: self.size,
            yaw: normalize_angle(self.yaw + yaw),
        }
    }

    /// Mirrors the box through the vertical plane `y = 0`.
    pub fn mirrored_y(&self) -> Self {
        Self {
            center: [self.center[0], -self.center[1], self.center[2]],
            size: self.size,
            yaw: normalize_angle(-self.yaw),
        }
    }
}

/// Corners of a validated box; see [`OrientedBox3D::corners`] for the ordering.
pub fn box_corners(b: &OrientedBox3D) -> Result<[Vec3; 8]> {
    b.validate()?;
    Ok(b.corners())
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

/// Sutherland–Hodgman clipping of `subject` by the convex counter-clockwise polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    const EDGE_EPS: f64 = 1e-12;
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let sc = side(cur);
            let sp = side(prev);
            let cur_in = sc >= -EDGE_EPS;
            let prev_in = sp >= -EDGE_EPS;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

#[inline]
fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the intersection of the two footprints.
pub fn footprint_intersection_area(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let pa = a.footprint();
    let pb = b.footprint();
    if polygon_area(&pa) < AREA_EPS || polygon_area(&pb) < AREA_EPS {
        return 0.0;
    }
    polygon_area(&clip_convex(&pa, &pb)).max(0.0)
}

/// Bird's-eye-view IoU of the footprints.
pub fn bev_iou(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let inter = footprint_intersection_area(a, b);
    let union = a.size[0] * a.size[1] + b.size[0] * b.size[1] - inter;
    if union <= AREA_EPS {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Exact IoU of two yaw-rotated boxes sharing the vertical axis.
pub fn oriented_iou(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = a1.min(b1) - a0.max(b0);
    if dz <= 0.0 {
        return 0.0;
    }
    let area = footprint_intersection_area(a, b);
    if area <= 0.0 {
        return 0.0;
    }
    let inter = area * dz;
    let union = a.volume() + b.volume() - inter;
    if !(union > AREA_EPS) {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Monte-Carlo IoU estimate over the joint axis-aligned bounds of both boxes.
///
/// The standard error shrinks as `1/sqrt(samples)`.
pub fn iou_oracle<R: Rng + ?Sized>(a: &OrientedBox3D, b: &OrientedBox3D, samples: usize, rng: &mut R) -> f64 {
    let (alo, ahi) = a.aabb();
    let (blo, bhi) = b.aabb();
    let lo = [0, 1, 2].map(|k| alo[k].min(blo[k]));
    let hi = [0, 1, 2].map(|k| ahi[k].max(bhi[k]));
    let mut inter = 0usize;
    let mut union = 0usize;
    for _ in 0..samples {
        let p = [0, 1, 2].map(|k| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>());
        let ia = a.contains(p);
        let ib = b.contains(p);
        if ia && ib {
            inter += 1;
        }
        if ia || ib {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// A decoded detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: OrientedBox3D,
    pub class_id: usize,
    pub objectness: f64,
    pub class_probs: Vec<f64>,
}

impl ScoredBox {
    pub fn to_record(&self) -> BoxRecord {
        BoxRecord {
            center: self.bbox.center,
            size: self.bbox.size,
            yaw: self.bbox.yaw,
            class_id: self.class_id,
            objectness: self.objectness,
        }
    }
}

/// Class-agnostic greedy suppression in descending objectness order.
///
/// Ties keep input order. Surviving pairs all have IoU `<= iou_threshold`.
pub fn nms3d(proposals: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&i, &j| {
        proposals[j]
            .objectness
            .partial_cmp(&proposals[i].objectness)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let b = &proposals[i].bbox;
        if kept
            .iter()
            .all(|&k| oriented_iou(&proposals[k].bbox, b) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| proposals[i].clone()).collect()
}

/// On-disk box record shared by dataset and prediction files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub center: Vec3,
    pub size: Vec3,
    pub yaw: f64,
    pub class_id: usize,
    pub objectness: f64,
}

impl BoxRecord {
    pub fn to_box(&self) -> Result<OrientedBox3D> {
        OrientedBox3D::new(self.center, self.size, self.yaw)
    }

    pub fn from_box(b: &OrientedBox3D, class_id: usize, objectness: f64) -> Self {
        Self {
            center: b.center,
            size: b.size,
            yaw: b.yaw,
            class_id,
            objectness,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cube(center: Vec3, yaw: f64) -> OrientedBox3D {
        OrientedBox3D::new(center, [1.0, 1.0, 1.0], yaw).unwrap()
    }

    fn scored(b: OrientedBox3D, score: f64) -> ScoredBox {
        ScoredBox {
            bbox: b,
            class_id: 0,
            objectness: score,
            class_probs: vec![1.0],
        }
    }

    fn sorted(mut c: Vec<Vec3>) -> Vec<Vec3> {
        for p in c.iter_mut() {
            for v in p.iter_mut() {
                *v = (*v * 1e9).round() / 1e9;
            }
        }
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        c
    }

    #[test]
    fn unit_cube_corners() {
        let c = box_corners(&cube([0.0; 3], 0.0)).unwrap();
        let expected = [
            [-0.5, -0.5, -0.5],
            [0.5, -0.5, -0.5],
            [0.5, 0.5, -0.5],
            [-0.5, 0.5, -0.5],
            [-0.5, -0.5, 0.5],
            [0.5, -0.5, 0.5],
            [0.5, 0.5, 0.5],
            [-0.5, 0.5, 0.5],
        ];
        assert_eq!(c, expected);
    }

    #[test]
    fn quarter_turn_cube_has_same_corner_set() {
        let a = cube([0.0; 3], 0.0).corners().to_vec();
        let b = cube([0.0; 3], PI / 2.0).corners().to_vec();
        assert_eq!(sorted(a), sorted(b));
    }

    #[test]
    fn rotated_box_corners_match_rotation_matrix() {
        let b = OrientedBox3D::new([1.0, 0.0, 0.0], [2.0, 1.0, 1.0], PI / 4.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // rotation matrix [[r, -r], [r, r]] applied to the local corners
        let local = [[-1.0, -0.5], [1.0, -0.5], [1.0, 0.5], [-1.0, 0.5]];
        let c = b.corners();
        for (i, [x, y]) in local.iter().enumerate() {
            let wx = 1.0 + r * x - r * y;
            let wy = r * x + r * y;
            assert_abs_diff_eq!(c[i][0], wx, epsilon = 1e-12);
            assert_abs_diff_eq!(c[i][1], wy, epsilon = 1e-12);
            assert_abs_diff_eq!(c[i][2], -0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(c[i + 4][2], 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_positive_size_is_rejected() {
        assert!(OrientedBox3D::new([0.0; 3], [1.0, 0.0, 1.0], 0.0).is_err());
        let raw = OrientedBox3D {
            center: [0.0; 3],
            size: [1.0, -1.0, 1.0],
            yaw: 0.0,
        };
        assert!(matches!(box_corners(&raw), Err(Error::InvalidBox(_))));
    }

    #[test]
    fn yaw_is_wrapped() {
        let b = cube([0.0; 3], 3.0 * PI);
        assert_abs_diff_eq!(b.yaw, PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-3.0 * PI / 2.0), PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_basic_cases() {
        let a = cube([0.0; 3], 0.3);
        assert_abs_diff_eq!(oriented_iou(&a, &a), 1.0, epsilon = 1e-12);
        let up = cube([0.0, 0.0, 2.0], 0.3);
        assert_eq!(oriented_iou(&a, &up), 0.0);
        let b = cube([0.5, 0.0, 0.0], 0.0);
        let c = cube([0.0; 3], 0.0);
        assert_abs_diff_eq!(oriented_iou(&c, &b), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_footprint_gives_zero() {
        let flat = OrientedBox3D {
            center: [0.0; 3],
            size: [1e-9, 1e-9, 1.0],
            yaw: 0.0,
        };
        let v = oriented_iou(&flat, &cube([0.0; 3], 0.0));
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_agrees_on_closed_form_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cube([0.0; 3], 0.0);
        assert_abs_diff_eq!(iou_oracle(&a, &a, 1_000_000, &mut rng), 1.0, epsilon = 0.005);
        let b = cube([0.5, 0.0, 0.0], 0.0);
        assert_abs_diff_eq!(iou_oracle(&a, &b, 1_000_000, &mut rng), 1.0 / 3.0, epsilon = 0.01);
        let far = cube([5.0, 0.0, 0.0], 0.0);
        assert_eq!(iou_oracle(&a, &far, 100_000, &mut rng), 0.0);
    }

    #[test]
    fn nms_examples() {
        let a = cube([0.0; 3], 0.0);
        assert!(nms3d(&[], 0.1).is_empty());

        let kept = nms3d(&[scored(a, 0.8), scored(a, 0.9)], 0.1);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].objectness, 0.9);

        let far = cube([5.0, 0.0, 0.0], 0.0);
        assert_eq!(nms3d(&[scored(a, 0.9), scored(far, 0.8)], 0.1).len(), 2);

        let b = cube([0.5, 0.0, 0.0], 0.0);
        let c = cube([-4.0, 0.0, 0.0], 0.0);
        let kept = nms3d(&[scored(b, 0.8), scored(c, 0.7), scored(a, 0.9)], 0.1);
        let scores: Vec<f64> = kept.iter().map(|k| k.objectness).collect();
        assert_eq!(scores, vec![0.9, 0.7]);
    }

    #[test]
    fn nms_ties_prefer_lower_index() {
        let a = cube([0.0; 3], 0.0);
        let mut first = scored(a, 0.5);
        first.class_id = 7;
        let kept = nms3d(&[first, scored(a, 0.5)], 0.1);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].class_id, 7);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = OrientedBox3D> {
            (
                prop::array::uniform3(-1.0f64..1.0),
                prop::array::uniform3(0.2f64..2.0),
                -PI..PI,
            )
                .prop_map(|(c, s, y)| OrientedBox3D::new(c, s, y).unwrap())
        }

        proptest! {
            #[test]
            fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
                let ab = oriented_iou(&a, &b);
                let ba = oriented_iou(&b, &a);
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert!((ab - ba).abs() < 1e-9);
            }

            #[test]
            fn iou_rigid_invariant(a in arb_box(), b in arb_box(),
                                   t in prop::array::uniform3(-5.0f64..5.0), yaw in -PI..PI) {
                let before = oriented_iou(&a, &b);
                let ta = a.rotated(yaw).translated(t);
                let tb = b.rotated(yaw).translated(t);
                prop_assert!((oriented_iou(&ta, &tb) - before).abs() < 1e-9);
            }

            #[test]
            fn nms_output_is_pairwise_separated(boxes in prop::collection::vec((arb_box(), 0.0f64..1.0), 0..12)) {
                let input: Vec<ScoredBox> = boxes.into_iter().map(|(b, s)| scored(b, s)).collect();
                let kept = nms3d(&input, 0.1);
                for k in &kept {
                    prop_assert!(input.contains(k));
                }
                for i in 0..kept.len() {
                    for j in (i + 1)..kept.len() {
                        prop_assert!(oriented_iou(&kept[i].bbox, &kept[j].bbox) <= 0.1);
                    }
                }
            }
        }
    }
}

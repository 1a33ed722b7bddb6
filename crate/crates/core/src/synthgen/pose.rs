//! Procedural body posing: a kinematic stick figure driven by a handful of posture knobs.

use crate::geom::{rotate2, Vec3};

use super::skeleton::joint as J;

/// Standing height of the root (hip centroid) above the floor.
pub const STAND_ROOT_HEIGHT: f64 = 0.95;

/// Posture knobs, all blended linearly between their neutral and extreme poses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Posture {
    /// Gait phase in radians; only matters while `stride > 0`.
    pub gait_phase: f64,
    /// Leg and arm swing amplitude, 0 (still) to 1 (full walking stride).
    pub stride: f64,
    /// 0 standing, 1 seated with horizontal thighs.
    pub sit: f64,
    /// 0 upright, 1 lying on the back.
    pub lie: f64,
    /// 0 arms hanging, 1 arms stretched forward to `reach_height`.
    pub reach: f64,
    /// World height targeted by the hands while reaching.
    pub reach_height: f64,
}

fn lerp3(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Joint positions in the body frame (x forward, y left, z up), root at the origin.
fn local_joints(p: &Posture, root_height: f64) -> [Vec3; J::COUNT] {
    let mut j = [[0.0; 3]; J::COUNT];
    let swing = p.stride * p.gait_phase.sin();

    j[J::PELVIS] = [0.0, 0.0, 0.0];
    j[J::HIP_R] = [0.0, -0.1, 0.0];
    j[J::HIP_L] = [0.0, 0.1, 0.0];

    for (hip, knee, ankle, side, sgn) in [
        (J::HIP_R, J::KNEE_R, J::ANKLE_R, -0.1, 1.0),
        (J::HIP_L, J::KNEE_L, J::ANKLE_L, 0.1, -1.0),
    ] {
        let _ = hip;
        let stand_knee = [0.15 * swing * sgn, side, -0.45];
        let stand_ankle = [0.3 * swing * sgn, side, -0.9];
        let sit_knee = [0.45, side, 0.0];
        let sit_ankle = [0.5, side, -0.45];
        j[knee] = lerp3(stand_knee, sit_knee, p.sit);
        j[ankle] = lerp3(stand_ankle, sit_ankle, p.sit);
    }

    let lean = 0.05 * p.sit;
    j[J::SPINE] = [lean * 0.5, 0.0, 0.25];
    j[J::THORAX] = [lean, 0.0, 0.5];
    j[J::NECK] = [lean, 0.0, 0.6];
    j[J::HEAD] = [lean + 0.03, 0.0, 0.75];

    // Arms: hanging (with counter-swing) blended towards a forward reach.
    let shoulder_z = 0.5;
    let target_dz = (p.reach_height - root_height - shoulder_z).clamp(-0.6, 0.6);
    let dir = {
        let n = (0.6f64 * 0.6 + target_dz * target_dz).sqrt();
        [0.6 / n, 0.0, target_dz / n]
    };
    for (shoulder, elbow, wrist, side, sgn) in [
        (J::SHOULDER_L, J::ELBOW_L, J::WRIST_L, 0.2, 1.0),
        (J::SHOULDER_R, J::ELBOW_R, J::WRIST_R, -0.2, -1.0),
    ] {
        let s = [lean, side, shoulder_z];
        let hang_elbow = [lean + 0.12 * swing * sgn, side * 1.1, shoulder_z - 0.28];
        let hang_wrist = [lean + 0.22 * swing * sgn, side * 1.1, shoulder_z - 0.52];
        let reach_elbow = [s[0] + 0.28 * dir[0], side, s[2] + 0.28 * dir[2]];
        let reach_wrist = [s[0] + 0.55 * dir[0], side * 0.9, s[2] + 0.55 * dir[2]];
        j[shoulder] = s;
        j[elbow] = lerp3(hang_elbow, reach_elbow, p.reach);
        j[wrist] = lerp3(hang_wrist, reach_wrist, p.reach);
    }

    if p.lie > 0.0 {
        // pitch backwards about the left axis: up tilts towards -forward
        let angle = p.lie * std::f64::consts::FRAC_PI_2;
        let (s, c) = angle.sin_cos();
        for q in j.iter_mut() {
            let (x, z) = (q[0], q[2]);
            q[0] = c * x - s * z;
            q[2] = s * x + c * z;
        }
    }
    j
}

/// Places the 17 body joints for a root position, heading (facing direction) and posture.
pub fn pose_body(root: Vec3, heading: f64, posture: &Posture) -> [Vec3; J::COUNT] {
    local_joints(posture, root[2]).map(|q| {
        let [x, y] = rotate2(q[0], q[1], heading);
        [root[0] + x, root[1] + y, root[2] + q[2]]
    })
}

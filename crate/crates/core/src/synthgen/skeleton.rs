use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint layout of the procedural body model.
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const HIP_R: usize = 1;
    pub const KNEE_R: usize = 2;
    pub const ANKLE_R: usize = 3;
    pub const HIP_L: usize = 4;
    pub const KNEE_L: usize = 5;
    pub const ANKLE_L: usize = 6;
    pub const SPINE: usize = 7;
    pub const THORAX: usize = 8;
    pub const NECK: usize = 9;
    pub const HEAD: usize = 10;
    pub const SHOULDER_L: usize = 11;
    pub const ELBOW_L: usize = 12;
    pub const WRIST_L: usize = 13;
    pub const SHOULDER_R: usize = 14;
    pub const ELBOW_R: usize = 15;
    pub const WRIST_R: usize = 16;
    pub const COUNT: usize = 17;
}

const BODY_NAMES: [&str; joint::COUNT] = [
    "pelvis",
    "hip_r",
    "knee_r",
    "ankle_r",
    "hip_l",
    "knee_l",
    "ankle_l",
    "spine",
    "thorax",
    "neck",
    "head",
    "shoulder_l",
    "elbow_l",
    "wrist_l",
    "shoulder_r",
    "elbow_r",
    "wrist_r",
];

const BODY_BONES: [(usize, usize); 16] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
];

const BODY_MIRROR: [usize; joint::COUNT] = [0, 4, 5, 6, 1, 2, 3, 7, 8, 9, 10, 14, 15, 16, 11, 12, 13];

/// Skeleton topology: joint names, bone tree, hip joints and the left/right mirror map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub joint_names: Vec<String>,
    pub bone_edges: Vec<(usize, usize)>,
    /// Joints whose centroid is the root joint.
    pub hip_joint_ids: Vec<usize>,
    /// `mirror_map[j]` is the joint that `j` becomes under a left/right reflection.
    pub mirror_map: Vec<usize>,
}

impl SkeletonSpec {
    /// 17-joint body used by the generator and the desk-scale configuration.
    pub fn body17() -> Self {
        Self {
            joint_names: BODY_NAMES.iter().map(|s| s.to_string()).collect(),
            bone_edges: BODY_BONES.to_vec(),
            hip_joint_ids: vec![joint::HIP_R, joint::HIP_L],
            mirror_map: BODY_MIRROR.to_vec(),
        }
    }

    /// 53-joint layout matching the reference configuration. The first 17 joints are the
    /// body joints; the remaining 36 are placeholder joints attached to the pelvis.
    pub fn reference53() -> Self {
        let mut s = Self::body17();
        for j in joint::COUNT..53 {
            s.joint_names.push(format!("aux_{j}"));
            s.bone_edges.push((joint::PELVIS, j));
            s.mirror_map.push(j);
        }
        s
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    /// Checks that bones form a spanning tree, hips are valid and the mirror map is an involution.
    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count();
        if j == 0 {
            return Err(Error::Config("skeleton has no joints".into()));
        }
        if self.hip_joint_ids.is_empty() || self.hip_joint_ids.iter().any(|&h| h >= j) {
            return Err(Error::Config("hip joint ids must be non-empty and in range".into()));
        }
        if self.bone_edges.len() + 1 != j {
            return Err(Error::Config(format!(
                "a tree over {j} joints needs {} bones, got {}",
                j - 1,
                self.bone_edges.len()
            )));
        }
        // union-find connectivity
        let mut parent: Vec<usize> = (0..j).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &self.bone_edges {
            if a >= j || b >= j {
                return Err(Error::Config(format!("bone ({a},{b}) out of range")));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(Error::Config(format!("bone ({a},{b}) closes a cycle")));
            }
            parent[ra] = rb;
        }
        if self.mirror_map.len() != j
            || (0..j).any(|i| self.mirror_map[i] >= j || self.mirror_map[self.mirror_map[i]] != i)
        {
            return Err(Error::Config("mirror map must be an involution over all joints".into()));
        }
        Ok(())
    }

    /// Symmetric-normalised adjacency with self loops, `D^-1/2 (A + I) D^-1/2`, as sparse rows.
    pub fn normalized_adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let j = self.joint_count();
        let mut nbrs: Vec<Vec<usize>> = (0..j).map(|i| vec![i]).collect();
        for &(a, b) in &self.bone_edges {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        let deg: Vec<f64> = nbrs.iter().map(|n| n.len() as f64).collect();
        nbrs.iter()
            .enumerate()
            .map(|(i, n)| n.iter().map(|&k| (k, 1.0 / (deg[i] * deg[k]).sqrt())).collect())
            .collect()
    }
}

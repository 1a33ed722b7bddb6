//! Target assignment and the weighted six-term training loss.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Tape, Var};
use crate::synthgen::SceneObject;

pub use crate::nn::tape::huber_scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub objectness: f64,
    pub class: f64,
    pub vote: f64,
    pub center: f64,
    pub size: f64,
    pub orientation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            objectness: 5.0,
            class: 1.0,
            vote: 10.0,
            center: 10.0,
            size: 10.0,
            orientation: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.objectness,
            self.class,
            self.vote,
            self.center,
            self.size,
            self.orientation,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Distance thresholds used when assigning targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignConfig {
    /// Seeds farther than this (horizontally) from every object do not vote.
    pub vote_radius: f64,
    /// Clusters this close to a GT centre are positive.
    pub positive: f64,
    /// Clusters at least this far from every GT centre are negative.
    pub negative: f64,
    pub huber_delta: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            vote_radius: 1.0,
            positive: 0.3,
            negative: 0.6,
            huber_delta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectnessLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTarget {
    pub label: ObjectnessLabel,
    /// Index of the nearest GT object (3D centre distance).
    pub nearest: usize,
    pub distance: f64,
    pub class_id: usize,
    /// Nearest GT centre minus cluster centre.
    pub center_offset: [f64; 3],
    pub center: [f64; 3],
    pub log_size: [f64; 3],
    /// `(sin θ, cos θ)`.
    pub orientation: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    /// Per seed: centre of the horizontally nearest object if within the vote radius.
    pub vote_targets: Vec<Option<[f64; 3]>>,
    pub clusters: Vec<ClusterTarget>,
}

impl TargetAssignment {
    pub fn count(&self, label: ObjectnessLabel) -> usize {
        self.clusters.iter().filter(|c| c.label == label).count()
    }
}

fn horizontal(a: &[f64], b: &[f64]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn spatial(a: &[f64], b: &[f64]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Nearest object by `dist`; the lower index wins ties.
fn nearest(objects: &[SceneObject], p: &[f64], dist: fn(&[f64], &[f64]) -> f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, o) in objects.iter().enumerate() {
        let d = dist(p, &o.bbox.center);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Assigns vote targets to seeds and objectness/regression targets to cluster centres.
pub fn assign_targets(
    seeds: &Array2<f64>,
    cluster_centers: &Array2<f64>,
    objects: &[SceneObject],
    cfg: &AssignConfig,
) -> Result<TargetAssignment> {
    if objects.is_empty() {
        return Err(Error::Data("cannot assign targets without ground-truth objects".into()));
    }
    let vote_targets = seeds
        .rows()
        .into_iter()
        .map(|s| {
            let (i, d) = nearest(objects, s.as_slice().unwrap(), horizontal);
            (d <= cfg.vote_radius).then_some(objects[i].bbox.center)
        })
        .collect();
    let clusters = cluster_centers
        .rows()
        .into_iter()
        .map(|c| {
            let c = c.to_vec();
            let (i, d) = nearest(objects, &c, spatial);
            let label = if d <= cfg.positive {
                ObjectnessLabel::Positive
            } else if d >= cfg.negative {
                ObjectnessLabel::Negative
            } else {
                ObjectnessLabel::Ignore
            };
            let b = &objects[i].bbox;
            ClusterTarget {
                label,
                nearest: i,
                distance: d,
                class_id: objects[i].class_id,
                center_offset: [0, 1, 2].map(|k| b.center[k] - c[k]),
                center: b.center,
                log_size: b.size.map(f64::ln),
                orientation: [b.yaw.sin(), b.yaw.cos()],
            }
        })
        .collect();
    Ok(TargetAssignment { vote_targets, clusters })
}

/// Component-wise Huber penalty, summed.
pub fn huber(residual: &[f64], delta: f64) -> f64 {
    residual.iter().map(|&r| huber_scalar(r, delta)).sum()
}

/// Per-term losses (before weighting) and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub objectness: f64,
    pub class: f64,
    pub vote: f64,
    pub center: f64,
    pub size: f64,
    pub orientation: f64,
    pub total: f64,
}

/// What the loss reads from a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs {
    pub votes: Var,
    pub objectness_logits: Var,
    pub class_logits: Var,
    pub centers: Var,
    pub log_size: Var,
    pub orientation: Var,
}

impl LossInputs {
    pub fn from_forward(f: &crate::model::Forward) -> Self {
        Self {
            votes: f.votes.votes,
            objectness_logits: f.output.objectness_logits,
            class_logits: f.output.class_logits,
            centers: f.output.centers,
            log_size: f.output.regressions[1],
            orientation: f.output.regressions[2],
        }
    }
}

/// Mean Huber over the rows flagged in `mask`; zero when no row is.
fn masked_huber(tape: &mut Tape, pred: Var, target: Array2<f64>, mask: &[bool], delta: f64) -> Option<Var> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return None;
    }
    let cols = target.ncols();
    let t = tape.input(target);
    let r = tape.sub(pred, t);
    let h = tape.huber(r, delta);
    let m = Array2::from_shape_fn((mask.len(), cols), |(i, _)| if mask[i] { 1.0 } else { 0.0 });
    let h = tape.mul_const(h, Arc::new(m));
    let s = tape.sum(h);
    Some(tape.scale(s, 1.0 / count as f64))
}

/// Mean cross-entropy over rows with a label.
fn masked_ce(tape: &mut Tape, logits: Var, labels: &[Option<usize>]) -> Option<Var> {
    let count = labels.iter().filter(|l| l.is_some()).count();
    if count == 0 {
        return None;
    }
    let cols = tape.value(logits).ncols();
    let ls = tape.log_softmax(logits);
    let pick = Array2::from_shape_fn(
        (labels.len(), cols),
        |(i, c)| {
            if labels[i] == Some(c) {
                1.0
            } else {
                0.0
            }
        },
    );
    let picked = tape.mul_const(ls, Arc::new(pick));
    let s = tape.sum(picked);
    Some(tape.scale(s, -1.0 / count as f64))
}

/// `Σ λ_τ L_τ` with every term averaged over the rows it supervises.
pub fn total_loss(
    tape: &mut Tape,
    inputs: &LossInputs,
    assignment: &TargetAssignment,
    weights: &LossWeights,
    delta: f64,
) -> (Var, LossBreakdown) {
    let m = assignment.vote_targets.len();
    let vote_mask: Vec<bool> = assignment.vote_targets.iter().map(Option::is_some).collect();
    let vote_target = Array2::from_shape_fn((m, 3), |(i, c)| assignment.vote_targets[i].map_or(0.0, |t| t[c]));

    let cl = &assignment.clusters;
    let v = cl.len();
    let pos: Vec<bool> = cl.iter().map(|c| c.label == ObjectnessLabel::Positive).collect();
    let obj_labels: Vec<Option<usize>> = cl
        .iter()
        .map(|c| match c.label {
            ObjectnessLabel::Positive => Some(1),
            ObjectnessLabel::Negative => Some(0),
            ObjectnessLabel::Ignore => None,
        })
        .collect();
    let cls_labels: Vec<Option<usize>> = cl
        .iter()
        .map(|c| (c.label == ObjectnessLabel::Positive).then_some(c.class_id))
        .collect();
    let center_t = Array2::from_shape_fn((v, 3), |(i, k)| cl[i].center[k]);
    let size_t = Array2::from_shape_fn((v, 3), |(i, k)| cl[i].log_size[k]);
    let orient_t = Array2::from_shape_fn((v, 2), |(i, k)| cl[i].orientation[k]);

    let terms = [
        (
            masked_ce(tape, inputs.objectness_logits, &obj_labels),
            weights.objectness,
        ),
        (masked_ce(tape, inputs.class_logits, &cls_labels), weights.class),
        (
            masked_huber(tape, inputs.votes, vote_target, &vote_mask, delta),
            weights.vote,
        ),
        (
            masked_huber(tape, inputs.centers, center_t, &pos, delta),
            weights.center,
        ),
        (masked_huber(tape, inputs.log_size, size_t, &pos, delta), weights.size),
        (
            masked_huber(tape, inputs.orientation, orient_t, &pos, delta),
            weights.orientation,
        ),
    ];
    let mut values = [0.0; 6];
    let mut weighted = Vec::new();
    for (i, (term, w)) in terms.iter().enumerate() {
        if let Some(t) = term {
            values[i] = tape.scalar(*t);
            weighted.push(tape.scale(*t, *w));
        }
    }
    let total = match weighted.split_first() {
        None => tape.input(Array2::zeros((1, 1))),
        Some((first, rest)) => rest.iter().fold(*first, |acc, &t| tape.add(acc, t)),
    };
    let breakdown = LossBreakdown {
        objectness: values[0],
        class: values[1],
        vote: values[2],
        center: values[3],
        size: values[4],
        orientation: values[5],
        total: tape.scalar(total),
    };
    (total, breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::OrientedBox3D;
    use crate::nn::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obj(c: [f64; 3], class_id: usize) -> SceneObject {
        SceneObject {
            class_id,
            bbox: OrientedBox3D::new(c, [1.0, 2.0, 0.5], 0.7).unwrap(),
        }
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber(&[0.0], 1.0), 0.0);
        assert_eq!(huber(&[1.0], 1.0), 0.5);
        assert_eq!(huber(&[2.0], 1.0), 1.5);
        assert_eq!(huber(&[2.0, -1.0], 1.0), 2.0);
    }

    #[test]
    fn band_examples() {
        let objects = [obj([1.0, 1.0, 0.25], 2)];
        let centers = Array2::from_shape_vec((3, 3), vec![1.0, 1.0, 0.25, 1.45, 1.0, 0.25, 3.0, 1.0, 0.25]).unwrap();
        let seeds = Array2::from_shape_vec((2, 3), vec![1.5, 1.5, 0.9, 4.0, 4.0, 0.9]).unwrap();
        let a = assign_targets(&seeds, &centers, &objects, &AssignConfig::default()).unwrap();
        assert_eq!(a.clusters[0].label, ObjectnessLabel::Positive);
        assert_eq!(a.clusters[0].center_offset, [0.0; 3]);
        assert_eq!(a.clusters[1].label, ObjectnessLabel::Ignore);
        assert_eq!(a.clusters[2].label, ObjectnessLabel::Negative);
        assert_eq!(a.vote_targets[0], Some([1.0, 1.0, 0.25]));
        assert_eq!(a.vote_targets[1], None);
        assert!(assign_targets(&seeds, &centers, &[], &AssignConfig::default()).is_err());
    }

    #[test]
    fn assignment_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = AssignConfig::default();
        for _ in 0..20 {
            let objects: Vec<_> = (0..rng.random_range(1..6))
                .map(|i| obj([rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), 0.4], i % 3))
                .collect();
            let seeds = Array2::from_shape_fn((15, 3), |_| rng.random_range(0.0..5.0));
            let centers = Array2::from_shape_fn((10, 3), |_| rng.random_range(0.0..5.0));
            let a = assign_targets(&seeds, &centers, &objects, &cfg).unwrap();
            for (i, s) in seeds.rows().into_iter().enumerate() {
                let ds: Vec<f64> = objects
                    .iter()
                    .map(|o| ((s[0] - o.bbox.center[0]).powi(2) + (s[1] - o.bbox.center[1]).powi(2)).sqrt())
                    .collect();
                let best = (0..ds.len()).min_by(|&x, &y| ds[x].total_cmp(&ds[y])).unwrap();
                let want = (ds[best] <= 1.0).then_some(objects[best].bbox.center);
                assert_eq!(a.vote_targets[i], want);
            }
            for (i, c) in centers.rows().into_iter().enumerate() {
                let ds: Vec<f64> = objects
                    .iter()
                    .map(|o| (0..3).map(|k| (c[k] - o.bbox.center[k]).powi(2)).sum::<f64>().sqrt())
                    .collect();
                let best = (0..ds.len()).min_by(|&x, &y| ds[x].total_cmp(&ds[y])).unwrap();
                let t = &a.clusters[i];
                assert_eq!(t.nearest, best);
                let want = if ds[best] <= 0.3 {
                    ObjectnessLabel::Positive
                } else if ds[best] >= 0.6 {
                    ObjectnessLabel::Negative
                } else {
                    ObjectnessLabel::Ignore
                };
                assert_eq!(t.label, want);
            }
        }
    }

    struct Case {
        inputs: [Array2<f64>; 6],
        assignment: TargetAssignment,
    }

    fn run(case: &Case, weights: &LossWeights) -> LossBreakdown {
        let store = ParamStore::default();
        let mut tape = Tape::new(&store);
        let v: Vec<Var> = case.inputs.iter().map(|a| tape.input(a.clone())).collect();
        let inputs = LossInputs {
            votes: v[0],
            objectness_logits: v[1],
            class_logits: v[2],
            centers: v[3],
            log_size: v[4],
            orientation: v[5],
        };
        total_loss(&mut tape, &inputs, &case.assignment, weights, 1.0).1
    }

    fn random_case(seed: u64) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects: Vec<_> = (0..3)
            .map(|i| obj([rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), 0.4], i))
            .collect();
        let seeds = Array2::from_shape_fn((8, 3), |_| rng.random_range(0.0..3.0));
        let mut centers = Array2::from_shape_fn((6, 3), |_| rng.random_range(0.0..3.0));
        centers.row_mut(0).assign(&ndarray::arr1(&objects[1].bbox.center));
        let assignment = assign_targets(&seeds, &centers, &objects, &AssignConfig::default()).unwrap();
        let mut r = |rows, cols, s: f64| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-s..s));
        let inputs = [
            r(8, 3, 3.0),
            r(6, 2, 2.0),
            r(6, 4, 2.0),
            r(6, 3, 3.0),
            r(6, 3, 1.0),
            r(6, 2, 1.0),
        ];
        Case { inputs, assignment }
    }

    #[test]
    fn random_instance_matches_loop_oracle() {
        for seed in 0..5 {
            let case = random_case(seed);
            let w = LossWeights::default();
            let got = run(&case, &w);
            let a = &case.assignment;
            let lse = |row: ndarray::ArrayView1<f64>| row.iter().map(|v| v.exp()).sum::<f64>().ln();

            let (mut obj, mut n_obj, mut cls, mut n_pos) = (0.0, 0, 0.0, 0);
            let (mut c, mut s, mut o) = (0.0, 0.0, 0.0);
            for (i, t) in a.clusters.iter().enumerate() {
                let ol = case.inputs[1].row(i);
                match t.label {
                    ObjectnessLabel::Positive => {
                        obj += lse(ol) - ol[1];
                        n_obj += 1;
                        n_pos += 1;
                        let cl = case.inputs[2].row(i);
                        cls += lse(cl) - cl[t.class_id];
                        let cr: Vec<f64> = (0..3).map(|k| case.inputs[3][[i, k]] - t.center[k]).collect();
                        c += huber(&cr, 1.0);
                        let sr: Vec<f64> = (0..3).map(|k| case.inputs[4][[i, k]] - t.log_size[k]).collect();
                        s += huber(&sr, 1.0);
                        let or: Vec<f64> = (0..2).map(|k| case.inputs[5][[i, k]] - t.orientation[k]).collect();
                        o += huber(&or, 1.0);
                    }
                    ObjectnessLabel::Negative => {
                        obj += lse(ol) - ol[0];
                        n_obj += 1;
                    }
                    ObjectnessLabel::Ignore => {}
                }
            }
            let (mut vote, mut n_v) = (0.0, 0);
            for (i, t) in a.vote_targets.iter().enumerate() {
                if let Some(t) = t {
                    let r: Vec<f64> = (0..3).map(|k| case.inputs[0][[i, k]] - t[k]).collect();
                    vote += huber(&r, 1.0);
                    n_v += 1;
                }
            }
            let mean = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
            let want = [
                mean(obj, n_obj),
                mean(cls, n_pos),
                mean(vote, n_v),
                mean(c, n_pos),
                mean(s, n_pos),
                mean(o, n_pos),
            ];
            let total = 5.0 * want[0] + want[1] + 10.0 * (want[2] + want[3] + want[4] + want[5]);
            let have = [
                got.objectness,
                got.class,
                got.vote,
                got.center,
                got.size,
                got.orientation,
            ];
            for (h, w) in have.iter().zip(want) {
                assert!((h - w).abs() < 1e-6, "{h} vs {w}");
            }
            assert!((got.total - total).abs() < 1e-6);
        }
    }

    #[test]
    fn perfect_fit_costs_nothing() {
        let mut case = random_case(11);
        let a = case.assignment.clone();
        for (i, t) in a.vote_targets.iter().enumerate() {
            if let Some(t) = t {
                for k in 0..3 {
                    case.inputs[0][[i, k]] = t[k];
                }
            }
        }
        for (i, t) in a.clusters.iter().enumerate() {
            let label = if t.label == ObjectnessLabel::Positive { 1 } else { 0 };
            case.inputs[1][[i, label]] = 1e3;
            case.inputs[1][[i, 1 - label]] = -1e3;
            for k in 0..4 {
                case.inputs[2][[i, k]] = if k == t.class_id { 1e3 } else { -1e3 };
            }
            for k in 0..3 {
                case.inputs[3][[i, k]] = t.center[k];
                case.inputs[4][[i, k]] = t.log_size[k];
            }
            for k in 0..2 {
                case.inputs[5][[i, k]] = t.orientation[k];
            }
        }
        assert_eq!(run(&case, &LossWeights::default()).total, 0.0);
    }

    #[test]
    fn uniform_class_logits_cost_log_classes() {
        let mut case = random_case(12);
        case.inputs[2].fill(0.3);
        assert!(case.assignment.count(ObjectnessLabel::Positive) > 0);
        let got = run(&case, &LossWeights::default());
        assert!((got.class - 4f64.ln()).abs() < 1e-12);
    }
}

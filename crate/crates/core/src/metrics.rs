//! Detection accuracy (AP, mAP@0.5) and multi-hypothesis quality (MMD) and diversity (TMD).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoder::SceneHypothesis;
use crate::error::{Error, Result};
use crate::geom::{oriented_iou, OrientedBox3D, ScoredBox};
use crate::synthgen::SceneObject;

pub const MAP_IOU: f64 = 0.5;
/// Hypothesis boxes farther than this from a GT centre are not attributed to it.
pub const TMD_MATCH_RADIUS: f64 = 1.0;

/// One point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub gt_count: usize,
    pub ap: f64,
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub per_class: Vec<ClassAp>,
    /// Mean AP over classes with at least one GT instance; 0 when there are none.
    pub map: f64,
}

impl ApReport {
    pub fn ap(&self, class_id: usize) -> Option<f64> {
        self.per_class.iter().find(|c| c.class_id == class_id).map(|c| c.ap)
    }
}

/// Area under the precision-recall curve with precision made monotone non-increasing
/// (all-points interpolation).
pub fn interpolated_ap(curve: &[PrPoint]) -> f64 {
    let mut rec = vec![0.0];
    let mut pre = vec![0.0];
    for p in curve {
        rec.push(p.recall);
        pre.push(p.precision);
    }
    rec.push(1.0);
    pre.push(0.0);
    for i in (0..pre.len() - 1).rev() {
        pre[i] = pre[i].max(pre[i + 1]);
    }
    (1..rec.len()).map(|i| (rec[i] - rec[i - 1]) * pre[i]).sum()
}

/// Per-class AP at `iou_threshold` over a set of sequences.
///
/// Predictions are ranked by objectness across all sequences; each takes the highest-IoU
/// unmatched GT box of its class in its own sequence when that IoU reaches the threshold.
pub fn average_precision(
    predictions: &[Vec<ScoredBox>],
    gts: &[Vec<SceneObject>],
    classes: usize,
    iou_threshold: f64,
) -> Result<ApReport> {
    if predictions.len() != gts.len() {
        return Err(Error::Data(format!(
            "{} prediction sets for {} ground-truth sequences",
            predictions.len(),
            gts.len()
        )));
    }
    let mut per_class = Vec::new();
    for class in 0..classes {
        let gt_count: usize = gts
            .iter()
            .map(|g| g.iter().filter(|o| o.class_id == class).count())
            .sum();
        if gt_count == 0 {
            continue;
        }
        let mut ranked: Vec<(usize, &ScoredBox)> = predictions
            .iter()
            .enumerate()
            .flat_map(|(s, ps)| ps.iter().filter(|p| p.class_id == class).map(move |p| (s, p)))
            .collect();
        ranked.sort_by(|a, b| b.1.objectness.total_cmp(&a.1.objectness));
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut curve = Vec::with_capacity(ranked.len());
        for (s, p) in ranked {
            let mut best: Option<(usize, f64)> = None;
            for (g, o) in gts[s].iter().enumerate() {
                if o.class_id != class || used[s][g] {
                    continue;
                }
                let iou = oriented_iou(&p.bbox, &o.bbox);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    used[s][g] = true;
                    tp += 1;
                }
                None => fp += 1,
            }
            curve.push(PrPoint {
                recall: tp as f64 / gt_count as f64,
                precision: tp as f64 / (tp + fp) as f64,
            });
        }
        per_class.push(ClassAp {
            class_id: class,
            gt_count,
            ap: interpolated_ap(&curve),
            curve,
        });
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    Ok(ApReport { per_class, map })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdReport {
    /// Best mAP over hypothesis indices, each index taken as one prediction set for the whole
    /// evaluation set.
    pub global: f64,
    pub per_index: Vec<f64>,
    /// Mean over sequences of the best single-sequence mAP among that sequence's hypotheses.
    pub per_sequence: f64,
}

fn check_counts(hypotheses: &[Vec<SceneHypothesis>], gts: &[Vec<SceneObject>]) -> Result<usize> {
    if hypotheses.len() != gts.len() {
        return Err(Error::Data("hypothesis and ground-truth sequence counts differ".into()));
    }
    let h = hypotheses.first().map_or(0, Vec::len);
    if h == 0 || hypotheses.iter().any(|s| s.len() != h) {
        return Err(Error::Data(
            "every sequence needs the same non-zero number of hypotheses".into(),
        ));
    }
    Ok(h)
}

pub fn mmd(hypotheses: &[Vec<SceneHypothesis>], gts: &[Vec<SceneObject>], classes: usize) -> Result<MmdReport> {
    let h = check_counts(hypotheses, gts)?;
    let per_index = (0..h)
        .map(|i| {
            let preds: Vec<Vec<ScoredBox>> = hypotheses.iter().map(|s| s[i].boxes.clone()).collect();
            average_precision(&preds, gts, classes, MAP_IOU).map(|r| r.map)
        })
        .collect::<Result<Vec<f64>>>()?;
    let global = per_index.iter().copied().fold(0.0, f64::max);
    let mut per_sequence = 0.0;
    for (s, hyps) in hypotheses.iter().enumerate() {
        let gt = std::slice::from_ref(&gts[s]);
        let mut best: f64 = 0.0;
        for hyp in hyps {
            best = best.max(average_precision(std::slice::from_ref(&hyp.boxes), gt, classes, MAP_IOU)?.map);
        }
        per_sequence += best;
    }
    per_sequence /= hypotheses.len() as f64;
    Ok(MmdReport {
        global,
        per_index,
        per_sequence,
    })
}

/// Natural-log Shannon entropy of a label multiset.
pub fn label_entropy(labels: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let n = labels.len() as f64;
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Mean distance between corresponding corners.
pub fn corner_distance(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    ca.iter()
        .zip(cb.iter())
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .sum::<f64>()
        / 8.0
}

/// `(1/H) Σ_p Σ_q Dist(B_p, B_q)` over all ordered pairs.
pub fn box_diversity(boxes: &[OrientedBox3D]) -> f64 {
    let mut sum = 0.0;
    for p in boxes {
        for q in boxes {
            sum += corner_distance(p, q);
        }
    }
    sum / boxes.len() as f64
}

/// Diversity of one object's hypotheses: `[1 + Entropy(labels)] · [1 + Div(boxes)]`.
pub fn tmd_object(hyps: &[(usize, OrientedBox3D)]) -> f64 {
    let labels: Vec<usize> = hyps.iter().map(|h| h.0).collect();
    let boxes: Vec<OrientedBox3D> = hyps.iter().map(|h| h.1).collect();
    (1.0 + label_entropy(&labels)) * (1.0 + box_diversity(&boxes))
}

fn center_distance(b: &OrientedBox3D, c: &[f64; 3]) -> f64 {
    (0..3).map(|k| (b.center[k] - c[k]).powi(2)).sum::<f64>().sqrt()
}

fn nearest_within<'a>(boxes: &'a [ScoredBox], center: &[f64; 3], radius: f64) -> Option<&'a ScoredBox> {
    boxes
        .iter()
        .map(|b| (b, center_distance(&b.bbox, center)))
        .filter(|(_, d)| *d <= radius)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(b, _)| b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmdReport {
    /// Mean over scored objects; `None` when no object had any nearby prediction.
    pub mean: Option<f64>,
    pub objects: usize,
    /// GT objects with no prediction within the match radius in any hypothesis or the ML set.
    pub unmatched: usize,
    /// Hypothesis slots filled by padding.
    pub padded: usize,
}

/// Groups hypothesis boxes per GT object and averages the per-object diversity.
///
/// In each hypothesis the box with the nearest centre within 1 m is attributed to the object.
/// Hypotheses without such a box repeat the object's maximum-likelihood box, or the closest
/// attributed hypothesis box when the ML prediction has none either.
pub fn tmd(hypotheses: &[Vec<SceneHypothesis>], ml: &[Vec<ScoredBox>], gts: &[Vec<SceneObject>]) -> Result<TmdReport> {
    check_counts(hypotheses, gts)?;
    if ml.len() != gts.len() {
        return Err(Error::Data(
            "maximum-likelihood and ground-truth sequence counts differ".into(),
        ));
    }
    let (mut sum, mut objects, mut unmatched, mut padded) = (0.0, 0, 0, 0);
    for (s, gt) in gts.iter().enumerate() {
        for o in gt {
            let c = &o.bbox.center;
            let found: Vec<Option<&ScoredBox>> = hypotheses[s]
                .iter()
                .map(|h| nearest_within(&h.boxes, c, TMD_MATCH_RADIUS))
                .collect();
            let fill = nearest_within(&ml[s], c, TMD_MATCH_RADIUS).or_else(|| {
                found
                    .iter()
                    .flatten()
                    .copied()
                    .min_by(|a, b| center_distance(&a.bbox, c).total_cmp(&center_distance(&b.bbox, c)))
            });
            let Some(fill) = fill else {
                unmatched += 1;
                continue;
            };
            let group: Vec<(usize, OrientedBox3D)> = found
                .iter()
                .map(|f| {
                    let b = f.unwrap_or_else(|| {
                        padded += 1;
                        fill
                    });
                    (b.class_id, b.bbox)
                })
                .collect();
            sum += tmd_object(&group);
            objects += 1;
        }
    }
    Ok(TmdReport {
        mean: (objects > 0).then(|| sum / objects as f64),
        objects,
        unmatched,
        padded,
    })
}

/// Centre error of the ML box nearest each GT object; `None` when nothing lies within 1 m.
pub fn center_errors(ml: &[Vec<ScoredBox>], gts: &[Vec<SceneObject>]) -> Vec<Option<f64>> {
    gts.iter()
        .zip(ml)
        .flat_map(|(gt, preds)| {
            gt.iter().map(move |o| {
                nearest_within(preds, &o.bbox.center, TMD_MATCH_RADIUS)
                    .map(|b| center_distance(&b.bbox, &o.bbox.center))
            })
        })
        .collect()
}

/// Everything `eval` reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_ap: BTreeMap<String, f64>,
    pub map50: f64,
    pub mmd: f64,
    pub mmd_per_sequence: f64,
    pub tmd: Option<f64>,
    pub counts: BTreeMap<String, usize>,
    pub hypotheses: usize,
    pub sequences: usize,
    pub tmd_objects: usize,
    pub entropy_base: String,
    pub mmd_reduction: String,
}

impl EvalReport {
    pub fn build(
        class_names: &[String],
        ap: &ApReport,
        mmd: &MmdReport,
        tmd: &TmdReport,
        hypotheses: usize,
        sequences: usize,
    ) -> Self {
        let mut per_class_ap = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for c in &ap.per_class {
            let name = class_names
                .get(c.class_id)
                .cloned()
                .unwrap_or_else(|| c.class_id.to_string());
            per_class_ap.insert(name.clone(), c.ap);
            counts.insert(name, c.gt_count);
        }
        Self {
            per_class_ap,
            map50: ap.map,
            mmd: mmd.global,
            mmd_per_sequence: mmd.per_sequence,
            tmd: tmd.mean,
            counts,
            hypotheses,
            sequences,
            tmd_objects: tmd.objects,
            entropy_base: "natural log".into(),
            mmd_reduction: "max over hypothesis index across the whole split".into(),
        }
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>6} {:>8}\n", "class", "gt", "AP@0.5"));
        for (name, ap) in &self.per_class_ap {
            out.push_str(&format!("{:<12} {:>6} {:>8.4}\n", name, self.counts[name], ap));
        }
        out.push_str(&format!("{:<12} {:>6} {:>8.4}\n", "mAP@0.5", "", self.map50));
        out.push_str(&format!("{:<12} {:>6} {:>8.4}\n", "MMD", "", self.mmd));
        out.push_str(&format!("{:<12} {:>6} {:>8.4}\n", "MMD/seq", "", self.mmd_per_sequence));
        match self.tmd {
            Some(t) => out.push_str(&format!("{:<12} {:>6} {:>8.4}\n", "TMD", self.tmd_objects, t)),
            None => out.push_str(&format!("{:<12} {:>6} {:>8}\n", "TMD", 0, "n/a")),
        }
        out
    }
}

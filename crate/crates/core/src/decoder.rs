//! Mixture decoder: Gaussian mode banks per regression target, sigmoid mode scores,
//! objectness and class heads, and the three decoding regimes.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{nms3d, normalize_angle, OrientedBox3D, ScoredBox};
use crate::nn::tape::softmax_rows;
use crate::nn::{Mlp, ParamId, ParamStore, Tape, Var};
use crate::util::stream_rng;
use crate::voting::Clusters;

/// IoU threshold for suppression of decoded proposals.
pub const NMS_IOU: f64 = 0.1;
/// Proposals with objectness at or below this are dropped.
pub const OBJECTNESS_THRESHOLD: f64 = 0.5;
/// Hypotheses average a uniformly drawn number of samples in `1..=MAX_SAMPLES`.
pub const MAX_SAMPLES: usize = 100;

/// The three regression targets and their widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Center,
    Size,
    Orientation,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Center, Target::Size, Target::Orientation];

    pub fn dim(self) -> usize {
        match self {
            Target::Center | Target::Size => 3,
            Target::Orientation => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Center => "center",
            Target::Size => "size",
            Target::Orientation => "orientation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub modes: usize,
    pub hidden: usize,
    pub classes: usize,
    pub logvar_min: f64,
    pub logvar_max: f64,
}

impl DecoderConfig {
    pub fn desk(classes: usize) -> Self {
        Self {
            modes: 20,
            hidden: 64,
            classes,
            logvar_min: -10.0,
            logvar_max: 4.0,
        }
    }

    pub fn reference(classes: usize) -> Self {
        Self {
            modes: 100,
            hidden: 128,
            ..Self::desk(classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(Error::Config(
                "modes, hidden width and class count must be positive".into(),
            ));
        }
        if !(self.logvar_min < self.logvar_max) {
            return Err(Error::Config("log-variance range is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    heads: Mlp,
    scores: [Mlp; 3],
    pub means: [ParamId; 3],
    pub logvars: [ParamId; 3],
}

/// Tape handles produced by [`Decoder::forward`].
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    pub objectness_logits: Var,
    pub class_logits: Var,
    /// Mode scores in `[0, 1]`, `V × P`, per target.
    pub scores: [Var; 3],
    /// Training-time regressions `Σ_k f^k · y^k`, per target.
    pub regressions: [Var; 3],
    /// `v^c + y_c`.
    pub centers: Var,
}

/// Reparameterisation noise for one forward pass, `V × P × d_τ` per target.
#[derive(Debug, Clone)]
pub struct MixtureNoise(pub [Arc<Array3<f64>>; 3]);

impl MixtureNoise {
    pub fn sample<R: Rng + ?Sized>(clusters: usize, modes: usize, rng: &mut R) -> Self {
        Self(Target::ALL.map(|t| {
            Arc::new(Array3::from_shape_simple_fn((clusters, modes, t.dim()), || {
                StandardNormal.sample(rng)
            }))
        }))
    }

    pub fn zeros(clusters: usize, modes: usize) -> Self {
        Self(Target::ALL.map(|t| Arc::new(Array3::zeros((clusters, modes, t.dim())))))
    }
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: DecoderConfig, d2: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (h, p) = (config.hidden, config.modes);
        let heads = Mlp::new(store, "decoder.heads", d2, &[h, h, 2 + config.classes], rng);
        let scores =
            Target::ALL.map(|t| Mlp::new(store, &format!("decoder.score.{}", t.name()), d2, &[h, h, h, p], rng));
        // start every score near 1/P so the initial weighted sum is close to a mode average
        let prior = if p > 1 { -((p - 1) as f64).ln() } else { 0.0 };
        for s in &scores {
            store.value_mut(s.layers.last().unwrap().bias).fill(prior);
        }
        let means = Target::ALL.map(|t| {
            let init = Array2::from_shape_fn((p, t.dim()), |(k, d)| match t {
                Target::Center => rng.random_range(-0.3..0.3),
                Target::Size => rng.random_range(0.4f64.ln()..2.2f64.ln()),
                Target::Orientation => {
                    let a = 2.0 * PI * k as f64 / p as f64;
                    if d == 0 {
                        a.sin()
                    } else {
                        a.cos()
                    }
                }
            });
            store.insert(format!("decoder.mean.{}", t.name()), init)
        });
        let logvars = Target::ALL.map(|t| {
            let init = Array2::from_shape_fn((p, t.dim()), |_| -2.0 + rng.random_range(-0.1..0.1));
            store.insert(format!("decoder.logvar.{}", t.name()), init)
        });
        Ok(Self {
            config,
            heads,
            scores,
            means,
            logvars,
        })
    }

    /// Heads, mode scores and the training-time weighted-sum regressions.
    pub fn forward(&self, tape: &mut Tape, clusters: &Clusters, noise: &MixtureNoise) -> DecoderOutput {
        let logits = self.heads.forward(tape, clusters.features);
        let objectness_logits = tape.slice_cols(logits, 0, 2);
        let class_logits = tape.slice_cols(logits, 2, 2 + self.config.classes);
        let mut scores = Vec::with_capacity(3);
        let mut regressions = Vec::with_capacity(3);
        for (i, _) in Target::ALL.iter().enumerate() {
            let raw = self.scores[i].forward(tape, clusters.features);
            let s = tape.sigmoid(raw);
            let mean = tape.param(self.means[i]);
            let lv = tape.param(self.logvars[i]);
            let lv = tape.clamp(lv, self.config.logvar_min, self.config.logvar_max);
            regressions.push(tape.mixture(s, mean, lv, noise.0[i].clone()));
            scores.push(s);
        }
        let centers = tape.add(clusters.centers, regressions[0]);
        DecoderOutput {
            objectness_logits,
            class_logits,
            scores: [scores[0], scores[1], scores[2]],
            regressions: [regressions[0], regressions[1], regressions[2]],
            centers,
        }
    }

    /// Copies everything inference needs off the tape.
    pub fn proposal_params(&self, tape: &Tape, clusters: &Clusters, out: &DecoderOutput) -> ProposalParams {
        let store = tape.store();
        ProposalParams {
            centers: tape.value(clusters.centers).clone(),
            objectness: softmax_rows(tape.value(out.objectness_logits)),
            class_probs: softmax_rows(tape.value(out.class_logits)),
            scores: out.scores.map(|s| tape.value(s).clone()),
            means: self.means.map(|m| store.value(m).clone()),
            stds: self.logvars.map(|l| {
                store
                    .value(l)
                    .mapv(|v| (0.5 * v.clamp(self.config.logvar_min, self.config.logvar_max)).exp())
            }),
        }
    }
}

/// Per-cluster head outputs plus the shared mode banks; everything decoding needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalParams {
    pub centers: Array2<f64>,
    /// `V × 2`; column 1 is the probability of being an object.
    pub objectness: Array2<f64>,
    pub class_probs: Array2<f64>,
    pub scores: [Array2<f64>; 3],
    pub means: [Array2<f64>; 3],
    pub stds: [Array2<f64>; 3],
}

/// Raw regression vectors for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub y: [Array1<f64>; 3],
}

impl ProposalParams {
    pub fn clusters(&self) -> usize {
        self.centers.nrows()
    }

    /// `Σ_k f^k μ^k` per target; no randomness.
    pub fn regress_ml(&self, v: usize) -> Regression {
        Regression {
            y: [0, 1, 2].map(|i| self.scores[i].row(v).dot(&self.means[i])),
        }
    }

    /// One draw of `Σ_k I^k y^k` with `I^k ~ Bernoulli(f^k)` and `y^k ~ N(μ^k, Σ^k)`.
    pub fn regress_sample<R: Rng + ?Sized>(&self, v: usize, rng: &mut R) -> Regression {
        Regression {
            y: [0, 1, 2].map(|i| {
                let (p, d) = self.means[i].dim();
                let mut y = Array1::zeros(d);
                for k in 0..p {
                    let f = self.scores[i][[v, k]].clamp(0.0, 1.0);
                    if !rng.random_bool(f) {
                        continue;
                    }
                    for c in 0..d {
                        let e: f64 = StandardNormal.sample(rng);
                        y[c] += self.means[i][[k, c]] + self.stds[i][[k, c]] * e;
                    }
                }
                y
            }),
        }
    }

    /// Turns raw regressions into a scored box with the given class label.
    pub fn decode(&self, v: usize, r: &Regression, class_id: usize) -> ScoredBox {
        let c = &self.centers;
        let center = [c[[v, 0]] + r.y[0][0], c[[v, 1]] + r.y[0][1], c[[v, 2]] + r.y[0][2]];
        let size = [0, 1, 2].map(|k| decode_size(r.y[1][k]));
        let yaw = decode_yaw(r.y[2][0], r.y[2][1]);
        ScoredBox {
            bbox: OrientedBox3D { center, size, yaw },
            class_id,
            objectness: self.objectness[[v, 1]],
            class_probs: self.class_probs.row(v).to_vec(),
        }
    }

    /// Maximum-likelihood box for every cluster, before suppression.
    pub fn decode_ml_all(&self) -> Vec<ScoredBox> {
        (0..self.clusters())
            .map(|v| {
                self.decode(
                    v,
                    &self.regress_ml(v),
                    argmax(self.class_probs.row(v).as_slice().unwrap()),
                )
            })
            .collect()
    }

    /// Maximum-likelihood prediction after suppression and the objectness filter.
    pub fn predict_ml(&self) -> Vec<ScoredBox> {
        finalize(self.decode_ml_all())
    }

    /// One hypothesis: each cluster averages `N_s ~ U[1, 100]` sampled regressions and draws a
    /// single class label.
    pub fn sample_hypothesis<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<ScoredBox> {
        let ns = rng.random_range(1..=MAX_SAMPLES);
        let boxes = (0..self.clusters())
            .map(|v| {
                let mut acc = Regression {
                    y: [0, 1, 2].map(|i| Array1::zeros(self.means[i].ncols())),
                };
                for _ in 0..ns {
                    let r = self.regress_sample(v, rng);
                    for i in 0..3 {
                        acc.y[i] += &r.y[i];
                    }
                }
                for i in 0..3 {
                    acc.y[i] /= ns as f64;
                }
                let class_id = sample_class(self.class_probs.row(v).as_slice().unwrap(), rng);
                self.decode(v, &acc, class_id)
            })
            .collect();
        finalize(boxes)
    }

    /// `count` hypotheses; hypothesis `h` draws from its own stream of `seed`.
    pub fn propose_hypotheses(&self, count: usize, seed: u64) -> Vec<SceneHypothesis> {
        (0..count)
            .map(|h| SceneHypothesis {
                hypothesis_id: h,
                boxes: self.sample_hypothesis(&mut stream_rng(seed, h as u64)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneHypothesis {
    pub hypothesis_id: usize,
    pub boxes: Vec<ScoredBox>,
}

/// Suppression at IoU 0.1, then drop objectness ≤ 0.5.
pub fn finalize(boxes: Vec<ScoredBox>) -> Vec<ScoredBox> {
    nms3d(&boxes, NMS_IOU)
        .into_iter()
        .filter(|b| b.objectness > OBJECTNESS_THRESHOLD)
        .collect()
}

/// `exp` of the log-size, kept within `[1e-3, 1e3]` m so extreme outputs still give a valid box.
pub fn decode_size(log_size: f64) -> f64 {
    log_size
        .clamp(-3.0 * std::f64::consts::LN_10, 3.0 * std::f64::consts::LN_10)
        .exp()
}

/// Yaw from `(sin, cos)`; the all-zero vector decodes to 0.
pub fn decode_yaw(s: f64, c: f64) -> f64 {
    if s == 0.0 && c == 0.0 {
        0.0
    } else {
        normalize_angle(s.atan2(c))
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn sample_class<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clusters(tape: &mut Tape, v: usize, d: usize, seed: u64) -> Clusters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = tape.input(Array2::from_shape_fn((v, d), |_| rng.random_range(-1.0..1.0)));
        let centers = tape.input(Array2::from_shape_fn((v, 3), |_| rng.random_range(-2.0..2.0)));
        Clusters {
            center_index: (0..v).collect(),
            centers,
            features: feats,
            members: vec![vec![0]; v],
        }
    }

    fn setup(modes: usize) -> (ParamStore, Decoder) {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = DecoderConfig {
            modes,
            hidden: 8,
            classes: 4,
            logvar_min: -10.0,
            logvar_max: 4.0,
        };
        let d = Decoder::new(&mut store, cfg, 6, &mut rng).unwrap();
        (store, d)
    }

    fn params(store: &ParamStore, dec: &Decoder, v: usize) -> ProposalParams {
        let mut tape = Tape::new(store);
        let c = clusters(&mut tape, v, 6, 2);
        let out = dec.forward(&mut tape, &c, &MixtureNoise::zeros(v, dec.config.modes));
        dec.proposal_params(&tape, &c, &out)
    }

    #[test]
    fn zero_head_weights_give_uniform_probabilities() {
        let (mut store, dec) = setup(3);
        store.zero_where(|n| n.starts_with("decoder.heads"));
        let p = params(&store, &dec, 5);
        assert!(p.objectness.iter().all(|&v| v == 0.5));
        assert!(p.class_probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn head_rows_are_softmax_of_logits() {
        let (store, dec) = setup(3);
        let mut tape = Tape::new(&store);
        let c = clusters(&mut tape, 5, 6, 3);
        let out = dec.forward(&mut tape, &c, &MixtureNoise::zeros(5, 3));
        let p = dec.proposal_params(&tape, &c, &out);
        let logits = tape.value(out.class_logits);
        for v in 0..5 {
            let z: f64 = logits.row(v).iter().map(|x| x.exp()).sum();
            for k in 0..4 {
                assert!((p.class_probs[[v, k]] - logits[[v, k]].exp() / z).abs() < 1e-6);
            }
            assert!((p.objectness.row(v).sum() - 1.0).abs() < 1e-6);
            assert!((p.class_probs.row(v).sum() - 1.0).abs() < 1e-6);
        }
    }

    fn manual(scores: [f64; 2], means: [[f64; 3]; 2], std: f64) -> ProposalParams {
        let m = Array2::from_shape_fn((2, 3), |(k, d)| means[k][d]);
        let s = Array2::from_shape_fn((1, 2), |(_, k)| scores[k]);
        ProposalParams {
            centers: Array2::zeros((1, 3)),
            objectness: Array2::from_shape_vec((1, 2), vec![0.1, 0.9]).unwrap(),
            class_probs: Array2::from_shape_vec((1, 2), vec![0.5, 0.5]).unwrap(),
            scores: [s.clone(), s.clone(), s],
            means: [m.clone(), m.clone(), m.slice(ndarray::s![.., 0..2]).to_owned()],
            stds: [
                Array2::from_elem((2, 3), std),
                Array2::from_elem((2, 3), std),
                Array2::from_elem((2, 2), std),
            ],
        }
    }

    #[test]
    fn degenerate_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = manual([1.0, 0.0], [[0.3, -0.2, 0.1], [9.0, 9.0, 9.0]], 0.0);
        assert_eq!(one.regress_ml(0).y[0].to_vec(), vec![0.3, -0.2, 0.1]);
        assert_eq!(one.regress_sample(0, &mut rng).y[0].to_vec(), vec![0.3, -0.2, 0.1]);
        let none = manual([0.0, 0.0], [[0.3, -0.2, 0.1], [1.0, 1.0, 1.0]], 0.5);
        let r = none.regress_sample(0, &mut rng);
        assert!(r.y.iter().all(|y| y.iter().all(|&v| v == 0.0)));
        let b = none.decode(0, &r, 0);
        assert_eq!(b.bbox.center, [0.0; 3]);
        assert_eq!(b.bbox.yaw, 0.0);
        let both = manual([1.0, 1.0], [[0.3, -0.2, 0.1], [1.0, 1.0, 1.0]], 0.0);
        let r = both.regress_sample(0, &mut rng);
        assert!((r.y[0][0] - 1.3).abs() < 1e-15 && (r.y[0][1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ml_decoding_is_deterministic() {
        let (store, dec) = setup(4);
        let p = params(&store, &dec, 6);
        assert_eq!(p.decode_ml_all(), p.decode_ml_all());
        for b in p.decode_ml_all() {
            assert!(b.bbox.size.iter().all(|&s| s > 0.0));
            assert!(b.bbox.yaw > -PI && b.bbox.yaw <= PI);
        }
    }

    #[test]
    fn training_mixture_with_zero_noise_equals_ml_regression() {
        let (store, dec) = setup(4);
        let mut tape = Tape::new(&store);
        let c = clusters(&mut tape, 3, 6, 4);
        let out = dec.forward(&mut tape, &c, &MixtureNoise::zeros(3, 4));
        let p = dec.proposal_params(&tape, &c, &out);
        for v in 0..3 {
            let ml = p.regress_ml(v);
            for i in 0..3 {
                let got = tape.value(out.regressions[i]).row(v).to_owned();
                assert!((&got - &ml.y[i]).iter().all(|d| d.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn hypotheses_respect_suppression_and_threshold() {
        let (store, dec) = setup(4);
        let p = params(&store, &dec, 10);
        let hyps = p.propose_hypotheses(10, 7);
        assert_eq!(hyps.len(), 10);
        for h in &hyps {
            for (i, a) in h.boxes.iter().enumerate() {
                assert!(a.objectness > OBJECTNESS_THRESHOLD);
                for b in &h.boxes[i + 1..] {
                    assert!(crate::geom::oriented_iou(&a.bbox, &b.bbox) <= NMS_IOU);
                }
            }
        }
        assert_eq!(hyps, p.propose_hypotheses(10, 7));

        let mut low = p.clone();
        low.objectness.column_mut(1).fill(0.4);
        assert!(low.propose_hypotheses(3, 1).iter().all(|h| h.boxes.is_empty()));
    }

    #[test]
    fn zero_variance_single_mode_gives_identical_hypotheses() {
        let mut p = manual([1.0, 0.0], [[0.3, -0.2, 0.1], [9.0, 9.0, 9.0]], 0.0);
        p.class_probs = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        let hyps = p.propose_hypotheses(10, 3);
        assert_eq!(hyps[0].boxes.len(), 1);
        let first = &hyps[0].boxes[0];
        for h in &hyps {
            // averaging N_s equal draws may differ from a single draw in the last ulp
            assert_eq!(h.boxes.len(), 1);
            let b = &h.boxes[0];
            assert_eq!(b.class_id, first.class_id);
            for k in 0..3 {
                assert!((b.bbox.center[k] - first.bbox.center[k]).abs() < 1e-12);
                assert!((b.bbox.size[k] - first.bbox.size[k]).abs() < 1e-12);
            }
            assert!((b.bbox.yaw - first.bbox.yaw).abs() < 1e-12);
        }
    }

    #[test]
    fn yaw_decoding() {
        assert_eq!(decode_yaw(0.0, 0.0), 0.0);
        assert!((decode_yaw(1.0, 0.0) - PI / 2.0).abs() < 1e-15);
        assert_eq!(decode_yaw(0.0, -1.0), PI);
        assert_eq!(decode_yaw(-0.0, -1.0), PI);
    }
}

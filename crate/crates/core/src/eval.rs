//! Running a trained model over dataset sequences and scoring the result.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::SceneHypothesis;
use crate::error::{Error, Result};
use crate::geom::ScoredBox;
use crate::metrics::{average_precision, mmd, tmd, EvalReport, MAP_IOU};
use crate::model::Model;
use crate::synthgen::{Dataset, SceneObject, Sequence};

pub const PREDICTION_VERSION: u32 = 1;

/// Predictions for one sequence: the ML set and `H` sampled hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePrediction {
    pub sequence_id: String,
    pub ml: Vec<ScoredBox>,
    pub hypotheses: Vec<SceneHypothesis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub version: u32,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub predictions: Vec<SequencePrediction>,
}

impl PredictionFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            record: "predictions".into(),
            message: e.to_string(),
        })?;
        if file.version != PREDICTION_VERSION {
            return Err(Error::UnsupportedVersion {
                found: file.version,
                expected: PREDICTION_VERSION,
            });
        }
        Ok(file)
    }
}

/// Per-sequence sampling seed, stable under reordering of the evaluation set (FNV-1a of the id).
pub fn sequence_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

pub fn predict_sequence(model: &Model, seq: &Sequence, hypotheses: usize, seed: u64) -> Result<SequencePrediction> {
    let params = model.infer_trajectory(&seq.trajectory)?;
    Ok(SequencePrediction {
        sequence_id: seq.id.clone(),
        ml: params.predict_ml(),
        hypotheses: params.propose_hypotheses(hypotheses, sequence_seed(seed, &seq.id)),
    })
}

fn lookup<'d>(dataset: &'d Dataset, ids: &[String]) -> Result<Vec<&'d Sequence>> {
    ids.iter()
        .map(|id| {
            dataset
                .get(id)
                .ok_or_else(|| Error::Data(format!("unknown sequence {id}")))
        })
        .collect()
}

pub fn predict(
    model: &Model,
    dataset: &Dataset,
    ids: &[String],
    hypotheses: usize,
    seed: u64,
) -> Result<Vec<SequencePrediction>> {
    lookup(dataset, ids)?
        .par_iter()
        .map(|s| predict_sequence(model, s, hypotheses, seed))
        .collect()
}

/// mAP@0.5 of the maximum-likelihood predictions.
pub fn ml_map(model: &Model, dataset: &Dataset, ids: &[String]) -> Result<f64> {
    let seqs = lookup(dataset, ids)?;
    let preds = seqs
        .par_iter()
        .map(|s| Ok(model.infer_trajectory(&s.trajectory)?.predict_ml()))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<Vec<SceneObject>> = seqs.iter().map(|s| s.objects.clone()).collect();
    Ok(average_precision(&preds, &gts, dataset.class_count(), MAP_IOU)?.map)
}

/// Scores already computed predictions against the dataset annotations.
pub fn score(dataset: &Dataset, predictions: &[SequencePrediction]) -> Result<EvalReport> {
    let seqs = lookup(
        dataset,
        &predictions.iter().map(|p| p.sequence_id.clone()).collect::<Vec<_>>(),
    )?;
    let gts: Vec<Vec<SceneObject>> = seqs.iter().map(|s| s.objects.clone()).collect();
    let ml: Vec<Vec<ScoredBox>> = predictions.iter().map(|p| p.ml.clone()).collect();
    let hyps: Vec<Vec<SceneHypothesis>> = predictions.iter().map(|p| p.hypotheses.clone()).collect();
    let classes = dataset.class_count();
    let ap = average_precision(&ml, &gts, classes, MAP_IOU)?;
    let m = mmd(&hyps, &gts, classes)?;
    let t = tmd(&hyps, &ml, &gts)?;
    let h = hyps.first().map_or(0, Vec::len);
    Ok(EvalReport::build(
        &dataset.meta.class_names,
        &ap,
        &m,
        &t,
        h,
        predictions.len(),
    ))
}

pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    ids: &[String],
    hypotheses: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<SequencePrediction>)> {
    if hypotheses == 0 {
        return Err(Error::Config("at least one hypothesis is required".into()));
    }
    let preds = predict(model, dataset, ids, hypotheses, seed)?;
    Ok((score(dataset, &preds)?, preds))
}

//! On-disk dataset: `meta.json` plus one `seq_<id>.json` per sequence.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::BoxRecord;
use crate::util::stream_rng;

use super::motion::{generate_visits, MotionOptions, MotionTemplates, PoseTrajectory, FRAME_RATE};
use super::scene::{generate_scene, ClassSet, RoomSpec, SceneAnnotation, SceneObject};
use super::skeleton::SkeletonSpec;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub skeleton: SkeletonSpec,
    pub class_names: Vec<String>,
    pub frame_rate: f64,
}

/// One recorded sequence with the objects the agent interacted with.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub room_id: String,
    pub trajectory: PoseTrajectory,
    pub objects: Vec<SceneObject>,
}

impl Sequence {
    pub fn annotation(&self) -> SceneAnnotation {
        SceneAnnotation {
            objects: self.objects.clone(),
            room_id: self.room_id.clone(),
            sequence_id: self.id.clone(),
            placement_incomplete: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn get(&self, id: &str) -> Option<&Sequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    pub fn class_count(&self) -> usize {
        self.meta.class_names.len()
    }
}

#[derive(Serialize, Deserialize)]
struct SequenceRecord {
    room_id: String,
    frames: Vec<Vec<[f64; 3]>>,
    objects: Vec<BoxRecord>,
}

impl SequenceRecord {
    fn from_sequence(s: &Sequence) -> Self {
        let (n, j, _) = s.trajectory.frames.dim();
        let frames = (0..n)
            .map(|t| {
                (0..j)
                    .map(|jj| {
                        let f = &s.trajectory.frames;
                        [f[[t, jj, 0]], f[[t, jj, 1]], f[[t, jj, 2]]]
                    })
                    .collect()
            })
            .collect();
        let objects = s
            .objects
            .iter()
            .map(|o| BoxRecord::from_box(&o.bbox, o.class_id, 1.0))
            .collect();
        Self {
            room_id: s.room_id.clone(),
            frames,
            objects,
        }
    }
}

fn seq_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("seq_{id}.json"))
}

/// Writes `meta.json` and one file per sequence into `dir` (created if missing).
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = serde_json::to_string_pretty(&dataset.meta).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(dir.join("meta.json"), meta)?;
    for s in &dataset.sequences {
        let rec = SequenceRecord::from_sequence(s);
        let text = serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(seq_path(dir, &s.id), text)?;
    }
    Ok(())
}

fn parse_err(path: &Path, record: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        record: record.into(),
        message: message.into(),
    }
}

/// Reads a dataset written by [`write_dataset`]; sequences come back sorted by id.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path)
        .map_err(|e| Error::Data(format!("cannot read dataset at {}: {e}", dir.display())))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        parse_err(
            &meta_path,
            "meta",
            format!("line {} column {}: {e}", e.line(), e.column()),
        )
    })?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| parse_err(&meta_path, "meta", "missing version field"))?;
    if version != DATASET_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: version as u32,
            expected: DATASET_VERSION,
        });
    }
    let meta: DatasetMeta = serde_json::from_value(raw).map_err(|e| parse_err(&meta_path, "meta", e.to_string()))?;
    meta.skeleton.validate()?;
    let j = meta.skeleton.joint_count();

    let mut files: Vec<(String, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let id = name.strip_prefix("seq_")?.strip_suffix(".json")?.to_string();
            Some((id, e.path()))
        })
        .collect();
    files.sort();

    let mut sequences = Vec::with_capacity(files.len());
    for (id, path) in files {
        let text = fs::read_to_string(&path)?;
        let rec: SequenceRecord = serde_json::from_str(&text).map_err(|e| {
            parse_err(
                &path,
                id.clone(),
                format!("line {} column {}: {e}", e.line(), e.column()),
            )
        })?;
        let n = rec.frames.len();
        let mut frames = Array3::zeros((n, j, 3));
        for (t, frame) in rec.frames.iter().enumerate() {
            if frame.len() != j {
                return Err(parse_err(
                    &path,
                    format!("{id}/frame {t}"),
                    format!("expected {j} joints, found {}", frame.len()),
                ));
            }
            for (jj, p) in frame.iter().enumerate() {
                for k in 0..3 {
                    frames[[t, jj, k]] = p[k];
                }
            }
        }
        let mut objects = Vec::with_capacity(rec.objects.len());
        for (k, o) in rec.objects.iter().enumerate() {
            let bbox = o
                .to_box()
                .map_err(|e| parse_err(&path, format!("{id}/object {k}"), e.to_string()))?;
            if o.class_id >= meta.class_names.len() {
                return Err(parse_err(
                    &path,
                    format!("{id}/object {k}"),
                    format!("class id {} out of range", o.class_id),
                ));
            }
            objects.push(SceneObject {
                class_id: o.class_id,
                bbox,
            });
        }
        sequences.push(Sequence {
            id,
            room_id: rec.room_id,
            trajectory: PoseTrajectory {
                frames,
                frame_rate: meta.frame_rate,
            },
            objects,
        });
    }
    Ok(Dataset { meta, sequences })
}

/// Knobs for procedural dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub rooms: usize,
    pub sequences_per_room: usize,
    pub seed: u64,
    /// Furniture count per room is drawn from `1..=max_objects`.
    pub max_objects: usize,
    /// Room sides are drawn uniformly from this range, in metres.
    pub room_size: (f64, f64),
    pub classes: ClassSet,
    pub skeleton: SkeletonSpec,
    #[serde(default)]
    pub motion: MotionOptions,
}

impl GeneratorConfig {
    pub fn household(rooms: usize, sequences_per_room: usize, seed: u64) -> Self {
        Self {
            rooms,
            sequences_per_room,
            seed,
            max_objects: 10,
            room_size: (6.0, 9.0),
            classes: ClassSet::household8(),
            skeleton: SkeletonSpec::body17(),
            motion: MotionOptions::default(),
        }
    }

    /// Small three-class dataset for fast experiments.
    pub fn toy(rooms: usize, sequences_per_room: usize, seed: u64) -> Self {
        Self {
            max_objects: 4,
            room_size: (5.5, 7.0),
            classes: ClassSet::toy3(),
            ..Self::household(rooms, sequences_per_room, seed)
        }
    }
}

const ROOM_STREAM: u64 = 1 << 32;
const START_ATTEMPTS: usize = 8;

fn room_layout(cfg: &GeneratorConfig, room: usize) -> Result<(RoomSpec, SceneAnnotation)> {
    let mut rng: ChaCha8Rng = stream_rng(cfg.seed, ROOM_STREAM + room as u64);
    let spec = RoomSpec {
        room_id: format!("room{room:03}"),
        width: rng.random_range(cfg.room_size.0..=cfg.room_size.1),
        depth: rng.random_range(cfg.room_size.0..=cfg.room_size.1),
    };
    let layout = generate_scene(&spec, &cfg.classes, cfg.max_objects, &mut rng)?;
    Ok((spec, layout))
}

/// Generates one sequence: a random non-empty subset of the room's furniture, visited in order.
fn generate_sequence(
    cfg: &GeneratorConfig,
    templates: &MotionTemplates,
    room: &(RoomSpec, SceneAnnotation),
    room_idx: usize,
    k: usize,
) -> Result<Sequence> {
    let (spec, layout) = room;
    let id = format!("r{room_idx:03}s{k:03}");
    let stream = (room_idx * cfg.sequences_per_room.max(1) + k) as u64;
    let mut rng: ChaCha8Rng = stream_rng(cfg.seed, stream);

    let count = rng.random_range(1..=layout.objects.len());
    let mut chosen = rand::seq::index::sample(&mut rng, layout.objects.len(), count).into_vec();
    chosen.sort_unstable();
    let extent = [spec.width, spec.depth];
    let all: Vec<usize> = (0..layout.objects.len()).collect();
    let mut outcome = generate_visits(layout, &chosen, extent, &cfg.skeleton, templates, cfg.motion, &mut rng)?;
    // an enclosed start can make the drawn subset unreachable: redraw the start, then widen to
    // the whole room
    for attempt in 0..START_ATTEMPTS {
        if !outcome.visited.is_empty() {
            break;
        }
        let targets = if attempt < START_ATTEMPTS / 2 { &chosen } else { &all };
        outcome = generate_visits(layout, targets, extent, &cfg.skeleton, templates, cfg.motion, &mut rng)?;
    }
    let mut visited = outcome.visited.clone();
    visited.sort_unstable();
    let objects: Vec<SceneObject> = visited.iter().map(|&i| layout.objects[i]).collect();
    if objects.is_empty() {
        return Err(Error::Data(format!("sequence {id}: no reachable object")));
    }
    Ok(Sequence {
        id,
        room_id: spec.room_id.clone(),
        trajectory: outcome.trajectory,
        objects,
    })
}

/// Generates `rooms × sequences_per_room` sequences. Each sequence draws from an independent
/// random stream derived from `(seed, sequence index)`, so the output does not depend on
/// thread scheduling.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.skeleton.validate()?;
    let templates = MotionTemplates::from_class_set(&cfg.classes);
    let rooms: Vec<_> = (0..cfg.rooms).map(|r| room_layout(cfg, r)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.rooms)
        .flat_map(|r| (0..cfg.sequences_per_room).map(move |k| (r, k)))
        .collect();
    let sequences: Vec<Sequence> = jobs
        .par_iter()
        .map(|&(r, k)| generate_sequence(cfg, &templates, &rooms[r], r, k))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            version: DATASET_VERSION,
            skeleton: cfg.skeleton.clone(),
            class_names: cfg.classes.names(),
            frame_rate: FRAME_RATE,
        },
        sequences,
    })
}

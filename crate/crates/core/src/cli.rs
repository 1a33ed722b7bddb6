//! Command-line front end: config files, presets and the five subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict_sequence, score, PredictionFile, PREDICTION_VERSION};
use crate::metrics::{average_precision, MAP_IOU};
use crate::model::{Model, ModelConfig};
use crate::plot::{plot_ap_bars, plot_losses, plot_pr_curves, render_prediction};
use crate::synthgen::{
    generate_dataset, make_split, read_dataset, write_dataset, Dataset, GeneratorConfig, SkeletonSpec, SplitKind,
};
use crate::train::{StepRecord, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "motionscene",
    version,
    about = "Multi-hypothesis 3D object layouts from human motion"
)]
pub struct Cli {
    /// TOML run configuration; a preset name is accepted in place of a path.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true, env = "P2R_DATA_DIR", value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub split: Option<SplitKind>,
    #[arg(long, global = true, value_name = "H")]
    pub hypotheses: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train from scratch (or resume from --checkpoint).
    Train,
    /// ML mAP, MMD and TMD on one side of the split.
    Eval(EvalArgs),
    /// Hypotheses for a single sequence.
    Sample(SampleArgs),
    /// SVG renders of a prediction file.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub rooms: Option<usize>,
    #[arg(long)]
    pub sequences_per_room: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub sequence: String,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Prediction file written by `eval` or `sample`.
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    /// `losses.jsonl` from a training run.
    #[arg(long, value_name = "PATH")]
    pub losses: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Single-core network on the eight-class household generator.
    Desk,
    /// Reference-size network and schedule.
    Full,
    /// Desk network overfitting a small three-class set.
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Household,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    pub rooms: usize,
    pub sequences_per_room: usize,
}

/// Scalar overrides on top of the preset network.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub frames: Option<usize>,
    pub skeleton: Option<String>,
    pub d1: Option<usize>,
    pub d2: Option<usize>,
    pub k: Option<usize>,
    pub blocks: Option<usize>,
    pub temporal_kernel: Option<usize>,
    pub seeds: Option<usize>,
    pub clusters: Option<usize>,
    pub radius: Option<f64>,
    pub modes: Option<usize>,
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub hypotheses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub split: SplitKind,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Preset,
    seed: Option<u64>,
    split: Option<SplitKind>,
    data: Option<toml::Table>,
    model: Option<ModelOverrides>,
    train: Option<toml::Table>,
    eval: Option<toml::Table>,
}

fn to_value<T: Serialize>(v: &T) -> toml::Value {
    toml::Value::try_from(v).expect("built-in config serialises")
}

fn merge(base: toml::Value, over: Option<toml::Table>) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), Some(o)) => {
            for (k, v) in o {
                b.insert(k, v);
            }
            toml::Value::Table(b)
        }
        (b, _) => b,
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self {
                preset: p,
                seed: 0,
                split: SplitKind::S1,
                data: DataSection {
                    kind: DataKind::Household,
                    rooms: 12,
                    sequences_per_room: 20,
                },
                model: ModelOverrides::default(),
                train: TrainConfig {
                    batch_size: 16,
                    epochs: 60,
                    decay_start: 31,
                    decay_every: 15,
                    ..TrainConfig::default()
                },
                eval: EvalSection { hypotheses: 10 },
            },
            Preset::Full => Self {
                preset: p,
                train: TrainConfig::default(),
                ..Self::preset(Preset::Desk)
            },
            Preset::Toy => Self {
                preset: p,
                data: DataSection {
                    kind: DataKind::Toy,
                    rooms: 5,
                    sequences_per_room: 4,
                },
                train: toy_train_config(),
                ..Self::preset(Preset::Desk)
            },
        }
    }

    /// Parses a TOML document; any section present overrides the named preset field by field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let base = Self::preset(raw.preset);
        let data: DataSection = merge(to_value(&base.data), raw.data)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[data]: {e}")))?;
        let train: TrainConfig = merge(to_value(&base.train), raw.train)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[train]: {e}")))?;
        let eval: EvalSection = merge(to_value(&base.eval), raw.eval)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[eval]: {e}")))?;
        let cfg = Self {
            preset: raw.preset,
            seed: raw.seed.unwrap_or(base.seed),
            split: raw.split.unwrap_or(base.split),
            data,
            model: raw.model.unwrap_or_default(),
            train,
            eval,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(spec: &str) -> Result<Self> {
        if let (Ok(p), false) = (Preset::from_str(spec, true), Path::new(spec).exists()) {
            return Ok(Self::preset(p));
        }
        let text = fs::read_to_string(spec).map_err(|e| Error::Config(format!("{spec}: {e}")))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.rooms == 0 || self.data.sequences_per_room == 0 {
            return Err(Error::Config(
                "[data]: rooms and sequences_per_room must be positive".into(),
            ));
        }
        if self.eval.hypotheses == 0 {
            return Err(Error::Config("[eval]: hypotheses must be positive".into()));
        }
        self.train.validate()
    }

    /// Generator settings; trajectories use the network's skeleton.
    pub fn generator(&self) -> Result<GeneratorConfig> {
        let d = &self.data;
        let mut g = match d.kind {
            DataKind::Household => GeneratorConfig::household(d.rooms, d.sequences_per_room, self.seed),
            DataKind::Toy => GeneratorConfig::toy(d.rooms, d.sequences_per_room, self.seed),
        };
        g.skeleton = self.model_config(g.classes.len())?.skeleton;
        Ok(g)
    }

    /// Network for a dataset with `classes` classes.
    pub fn model_config(&self, classes: usize) -> Result<ModelConfig> {
        let mut m = match self.preset {
            Preset::Full => ModelConfig::reference(classes),
            Preset::Desk | Preset::Toy => ModelConfig::desk(classes),
        };
        let o = &self.model;
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = o.$field {
                    m.$($target)+ = v;
                }
            };
        }
        set!(frames => frames);
        set!(d1 => encoder.d1);
        set!(d2 => encoder.d2);
        set!(k => encoder.k);
        set!(blocks => encoder.blocks);
        set!(temporal_kernel => encoder.temporal_kernel);
        set!(seeds => voting.seeds);
        set!(clusters => voting.clusters);
        set!(radius => voting.radius);
        set!(modes => decoder.modes);
        set!(hidden => decoder.hidden);
        if let Some(s) = &o.skeleton {
            m.skeleton = match s.as_str() {
                "body17" => SkeletonSpec::body17(),
                "reference53" => SkeletonSpec::reference53(),
                other => return Err(Error::Config(format!("unknown skeleton {other}"))),
            };
        }
        m.validate()?;
        Ok(m)
    }
}

/// An epoch no run reaches; kept within TOML's integer range.
pub const NEVER: usize = 1 << 40;

/// Overfitting schedule for the toy preset: no decay, no augmentation, no held-out slice.
pub fn toy_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs: 800,
        max_steps: Some(2000),
        decay_start: NEVER,
        augment: false,
        val_fraction: 0.0,
        eval_every: 100,
        ..TrainConfig::default()
    }
}

/// Process exit status for an error: 2 configuration, 3 data, 4 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}

fn data_dir(cli: &Cli) -> Result<PathBuf> {
    cli.data
        .clone()
        .ok_or_else(|| Error::Config("no dataset directory: pass --data or set P2R_DATA_DIR".into()))
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(
        path,
        serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?,
    )?;
    Ok(())
}

fn load_checkpoint(cli: &Cli) -> Result<Checkpoint> {
    let path = cli
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    Checkpoint::load(path)
}

fn check_classes(model: &Model, data: &Dataset) -> Result<()> {
    if model.config.decoder.classes != data.class_count() || model.config.skeleton != data.meta.skeleton {
        return Err(Error::Config(
            "network classes or skeleton do not match the dataset".into(),
        ));
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(spec) => RunConfig::load(spec)?,
        None => RunConfig::preset(Preset::Desk),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.split {
        cfg.split = s;
    }
    if let Some(h) = cli.hypotheses {
        cfg.eval.hypotheses = h;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;

    match &cli.command {
        Command::GenData(a) => {
            if let Some(r) = a.rooms {
                cfg.data.rooms = r;
            }
            if let Some(k) = a.sequences_per_room {
                cfg.data.sequences_per_room = k;
            }
            cfg.validate()?;
            let dir = match (&cli.out, &cli.data) {
                (Some(o), _) => o.clone(),
                (None, Some(d)) => d.clone(),
                (None, None) => return Err(Error::Config("gen-data needs --out or P2R_DATA_DIR".into())),
            };
            let ds = generate_dataset(&cfg.generator()?)?;
            write_dataset(&ds, &dir)?;
            println!("wrote {} sequences to {}", ds.sequences.len(), dir.display());
        }
        Command::Train => {
            let data = read_dataset(&data_dir(cli)?)?;
            let out = out_dir(cli)?;
            let split = make_split(&data, cfg.split, cfg.seed)?;
            write_json(&out.join("split.json"), &split)?;
            write_json(&out.join("config.json"), &cfg)?;
            let model = Model::new(cfg.model_config(data.class_count())?, cfg.seed)?;
            check_classes(&model, &data)?;
            let mut trainer = Trainer::new(model, cfg.train.clone(), &data, &split.train)?;
            if cli.checkpoint.is_some() {
                trainer.resume(load_checkpoint(cli)?)?;
            } else {
                let _ = fs::remove_file(out.join("losses.jsonl"));
            }
            trainer.run(Some(&out))?;
            let last = trainer.history.epochs.last();
            println!(
                "trained {} steps over {} epochs; last mean loss {:.5}; checkpoints in {}",
                trainer.step,
                trainer.epoch,
                last.map_or(f64::NAN, |e| e.mean_loss),
                out.display()
            );
        }
        Command::Eval(a) => {
            let data = read_dataset(&data_dir(cli)?)?;
            let model = load_checkpoint(cli)?.model()?;
            check_classes(&model, &data)?;
            let split = make_split(&data, cfg.split, cfg.seed)?;
            let ids = match a.subset {
                Subset::Train => split.train,
                Subset::Test => split.test,
                Subset::All => data.sequences.iter().map(|s| s.id.clone()).collect(),
            };
            let (report, preds) = evaluate(&model, &data, &ids, cfg.eval.hypotheses, cfg.seed)?;
            let out = out_dir(cli)?;
            write_json(&out.join("report.json"), &report)?;
            PredictionFile {
                version: PREDICTION_VERSION,
                class_names: data.meta.class_names.clone(),
                seed: cfg.seed,
                predictions: preds,
            }
            .save(&out.join("predictions.json"))?;
            print!("{}", report.table());
        }
        Command::Sample(a) => {
            let data = read_dataset(&data_dir(cli)?)?;
            let model = load_checkpoint(cli)?.model()?;
            check_classes(&model, &data)?;
            let seq = data
                .get(&a.sequence)
                .ok_or_else(|| Error::Data(format!("unknown sequence {}", a.sequence)))?;
            let pred = predict_sequence(&model, seq, cfg.eval.hypotheses, cfg.seed)?;
            let out = out_dir(cli)?;
            let path = out.join(format!("predictions_{}.json", seq.id));
            let file = PredictionFile {
                version: PREDICTION_VERSION,
                class_names: data.meta.class_names.clone(),
                seed: cfg.seed,
                predictions: vec![pred],
            };
            file.save(&path)?;
            let report = score(&data, &file.predictions)?;
            print!("{}", report.table());
            println!("wrote {}", path.display());
        }
        Command::Plot(a) => {
            let data = read_dataset(&data_dir(cli)?)?;
            let file = PredictionFile::load(&a.predictions)?;
            let out = out_dir(cli)?;
            let mut count = 0;
            for p in &file.predictions {
                let seq = data
                    .get(&p.sequence_id)
                    .ok_or_else(|| Error::Data(format!("unknown sequence {}", p.sequence_id)))?;
                count += render_prediction(&out, seq, &data.meta.skeleton, p, &data.meta.class_names)?.len();
            }
            let ml: Vec<_> = file.predictions.iter().map(|p| p.ml.clone()).collect();
            let gts: Vec<_> = file
                .predictions
                .iter()
                .map(|p| data.get(&p.sequence_id).map(|s| s.objects.clone()).unwrap_or_default())
                .collect();
            let ap = average_precision(&ml, &gts, data.class_count(), MAP_IOU)?;
            plot_pr_curves(&out.join("pr_curves.svg"), &ap, &data.meta.class_names)?;
            plot_ap_bars(&out.join("ap_per_class.svg"), &ap, &data.meta.class_names)?;
            count += 2;
            if let Some(path) = &a.losses {
                let text = fs::read_to_string(path)?;
                let losses = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        serde_json::from_str::<StepRecord>(l)
                            .map(|r| r.loss.total)
                            .map_err(|e| Error::Parse {
                                path: path.clone(),
                                record: "step".into(),
                                message: e.to_string(),
                            })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                plot_losses(&out.join("losses.svg"), &losses)?;
                count += 1;
            }
            println!("wrote {count} images to {}", out.display());
        }
    }
    Ok(())
}

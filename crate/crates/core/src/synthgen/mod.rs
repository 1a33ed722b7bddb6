//! Procedural scenes, scripted human motion and the on-disk dataset format.

pub mod augment;
pub mod dataset;
pub mod motion;
pub mod pose;
pub mod scene;
pub mod skeleton;
pub mod split;

pub use augment::{augment, AugmentTransform};
pub use dataset::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetMeta, GeneratorConfig, Sequence};
pub use motion::{resample_frames, root_track, uniform_indices, InteractionKind, MotionOptions, PoseTrajectory};
pub use scene::{ClassSet, RoomSpec, SceneAnnotation, SceneObject};
pub use skeleton::SkeletonSpec;
pub use split::{make_split, Split, SplitKind};

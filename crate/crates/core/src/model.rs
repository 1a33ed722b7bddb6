//! The full network: encoder, voting and mixture decoder over one parameter store.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, DecoderConfig, DecoderOutput, MixtureNoise, ProposalParams};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape};
use crate::synthgen::{resample_frames, PoseTrajectory, SkeletonSpec};
use crate::util::stream_rng;
use crate::voting::{sample_seeds, Clusters, Votes, Voting, VotingConfig};

const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frames the input trajectory is resampled to.
    pub frames: usize,
    pub skeleton: SkeletonSpec,
    pub encoder: EncoderConfig,
    pub voting: VotingConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    /// Single-core scale: 256 frames, 17 joints, 128 seeds, 32 clusters, 20 modes.
    pub fn desk(classes: usize) -> Self {
        Self {
            frames: 256,
            skeleton: SkeletonSpec::body17(),
            encoder: EncoderConfig::desk(),
            voting: VotingConfig::desk(),
            decoder: DecoderConfig::desk(classes),
        }
    }

    /// Full-size network: 768 frames, 53 joints, 512 seeds, 128 clusters, 100 modes.
    pub fn reference(classes: usize) -> Self {
        Self {
            frames: 768,
            skeleton: SkeletonSpec::reference53(),
            encoder: EncoderConfig::reference(),
            voting: VotingConfig::reference(),
            decoder: DecoderConfig::reference(classes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config("model needs at least two frames".into()));
        }
        self.skeleton.validate()?;
        self.encoder.validate()?;
        self.voting.validate()?;
        self.decoder.validate()
    }

    /// Clusters actually produced per sequence.
    pub fn effective_clusters(&self) -> usize {
        self.voting.clusters.min(self.voting.seeds)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub voting: Voting,
    pub decoder: Decoder,
}

/// Everything one forward pass leaves on the tape.
#[derive(Debug, Clone)]
pub struct Forward {
    pub root: Array2<f64>,
    pub votes: Votes,
    pub clusters: Clusters,
    pub output: DecoderOutput,
}

impl Model {
    /// Builds the network with parameters drawn from a stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, INIT_STREAM);
        let mut store = ParamStore::default();
        let encoder = Encoder::new(&mut store, config.encoder, &config.skeleton, &mut rng)?;
        let voting = Voting::new(&mut store, config.voting, config.encoder.d2, &mut rng)?;
        let decoder = Decoder::new(&mut store, config.decoder, config.encoder.d2, &mut rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            voting,
            decoder,
        })
    }

    /// Resamples a trajectory to the configured frame count.
    pub fn prepare(&self, traj: &PoseTrajectory) -> Result<Array3<f64>> {
        Ok(resample_frames(traj, self.config.frames)?.frames)
    }

    /// Forward pass over already resampled frames, recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape, frames: &Array3<f64>, noise: &MixtureNoise) -> Result<Forward> {
        let (pst, root) = self.encoder.forward(tape, frames, &self.config.skeleton)?;
        let (seeds, seed_features) = sample_seeds(tape, &root, pst, self.config.voting.seeds);
        let votes = self.voting.cast(tape, seeds, seed_features);
        if tape.value(votes.votes).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite votes".into()));
        }
        let clusters = self.voting.cluster(tape, &votes);
        let output = self.decoder.forward(tape, &clusters, noise);
        Ok(Forward {
            root,
            votes,
            clusters,
            output,
        })
    }

    /// Deterministic inference: head outputs and mode banks for every cluster.
    pub fn infer(&self, frames: &Array3<f64>) -> Result<ProposalParams> {
        let mut tape = Tape::new(&self.store);
        let noise = MixtureNoise::zeros(self.config.effective_clusters(), self.config.decoder.modes);
        let f = self.forward(&mut tape, frames, &noise)?;
        let params = self.decoder.proposal_params(&tape, &f.clusters, &f.output);
        if params
            .centers
            .iter()
            .chain(params.objectness.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok(params)
    }

    pub fn infer_trajectory(&self, traj: &PoseTrajectory) -> Result<ProposalParams> {
        self.infer(&self.prepare(traj)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::desk(3);
        c.frames = 24;
        c.encoder.d1 = 4;
        c.encoder.d2 = 8;
        c.encoder.blocks = 2;
        c.voting.seeds = 12;
        c.voting.clusters = 5;
        c.decoder.modes = 3;
        c.decoder.hidden = 8;
        c
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(tiny(), 4).unwrap();
        let b = Model::new(tiny(), 4).unwrap();
        let c = Model::new(tiny(), 5).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn inference_shapes_and_translation() {
        let m = Model::new(tiny(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames = Array3::from_shape_fn((24, 17, 3), |(t, _, c)| {
            (if c == 0 { 0.1 * t as f64 } else { 0.0 }) + rng.random_range(-0.3..0.3)
        });
        let p = m.infer(&frames).unwrap();
        assert_eq!(p.centers.dim(), (5, 3));
        assert_eq!(p.class_probs.dim(), (5, 3));
        let mut moved = frames.clone();
        moved.mapv_inplace(|v| v + 1.25);
        let q = m.infer(&moved).unwrap();
        for (a, b) in p.decode_ml_all().iter().zip(q.decode_ml_all()) {
            for k in 0..3 {
                assert!((a.bbox.center[k] + 1.25 - b.bbox.center[k]).abs() < 1e-9);
                assert!((a.bbox.size[k] - b.bbox.size[k]).abs() < 1e-9);
            }
        }
    }
}

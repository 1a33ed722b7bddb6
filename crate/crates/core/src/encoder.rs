//! Relative position encoding and the residual spatio-temporal pose encoder.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, ParamStore, RowMix, Tape, Var};
use crate::synthgen::{root_track, SkeletonSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d1: usize,
    pub d2: usize,
    /// Temporal neighbours pooled per root joint.
    pub k: usize,
    pub blocks: usize,
    pub temporal_kernel: usize,
}

impl EncoderConfig {
    pub fn desk() -> Self {
        Self {
            d1: 16,
            d2: 64,
            k: 20,
            blocks: 6,
            temporal_kernel: 3,
        }
    }

    pub fn reference() -> Self {
        Self {
            d1: 64,
            d2: 256,
            k: 20,
            blocks: 6,
            temporal_kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 || self.k == 0 || self.temporal_kernel == 0 {
            return Err(Error::Config("encoder widths, k and kernel must be positive".into()));
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return Err(Error::Config("temporal kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Root track of every frame: the mean of the hip joints.
pub fn root_joints(frames: &Array3<f64>, skeleton: &SkeletonSpec) -> Array2<f64> {
    root_track(
        &crate::synthgen::PoseTrajectory {
            frames: frames.clone(),
            frame_rate: 0.0,
        },
        skeleton,
    )
}

/// The `k` frames nearest to frame `i` in time: `[i − ⌊k/2⌋, i + ⌈k/2⌉ − 1]`, clipped to the
/// sequence. With `k ≥ n` every frame is a neighbour.
pub fn temporal_window(n: usize, k: usize, i: usize) -> std::ops::RangeInclusive<usize> {
    if k >= n {
        return 0..=n - 1;
    }
    let lo = i.saturating_sub(k / 2);
    let hi = (i + k.div_ceil(2) - 1).min(n - 1);
    lo..=hi
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub joints: usize,
    f1: Mlp,
    f2: Mlp,
    graph: Vec<Linear>,
    temporal: Vec<Linear>,
    out: Linear,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: EncoderConfig,
        skeleton: &SkeletonSpec,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        skeleton.validate()?;
        let d1 = config.d1;
        let j = skeleton.joint_count();
        let f1 = Mlp::new(store, "encoder.f1", 3, &[d1, d1], rng);
        let f2 = Mlp::new(store, "encoder.f2", 3, &[d1, d1], rng);
        let mut graph = Vec::new();
        let mut temporal = Vec::new();
        for b in 0..config.blocks {
            graph.push(Linear::new(store, &format!("encoder.block{b}.graph"), d1, d1, rng));
            temporal.push(Linear::new(
                store,
                &format!("encoder.block{b}.temporal"),
                config.temporal_kernel * d1,
                d1,
                rng,
            ));
        }
        let out = Linear::new(store, "encoder.out", j * d1, config.d2, rng);
        Ok(Self {
            config,
            joints: j,
            f1,
            f2,
            graph,
            temporal,
            out,
            adjacency: skeleton.normalized_adjacency(),
        })
    }

    fn check(&self, frames: &Array3<f64>) -> Result<(usize, usize)> {
        let (n, j, c) = frames.dim();
        if j != self.joints || c != 3 {
            return Err(Error::Config(format!(
                "encoder expects N × {} × 3 input, got {:?}",
                self.joints,
                frames.dim()
            )));
        }
        if n == 0 {
            return Err(Error::Data("empty trajectory".into()));
        }
        Ok((n, j))
    }

    /// `P^r = f₂(T − r) + Pool[f₁(N(r) − r)]`, returned as `(N·J) × d1` with frame-major rows.
    pub fn relative_features(&self, tape: &mut Tape, frames: &Array3<f64>, root: &Array2<f64>) -> Result<Var> {
        let (n, j) = self.check(frames)?;
        let k = self.config.k;

        let mut offsets = Vec::new();
        let mut pool_rows = Vec::with_capacity(n);
        for i in 0..n {
            let window = temporal_window(n, k, i);
            let w = 1.0 / window.clone().count() as f64;
            let mut row = Vec::new();
            for t in window {
                row.push((offsets.len() / 3, w));
                for c in 0..3 {
                    offsets.push(root[[t, c]] - root[[i, c]]);
                }
            }
            pool_rows.push(row);
        }
        let count = offsets.len() / 3;
        let nb = tape.input(Array2::from_shape_vec((count, 3), offsets).unwrap());
        let q = self.f1.forward(tape, nb);
        let q = tape.row_mix(q, Arc::new(RowMix::new(count, pool_rows)));

        let rel = Array2::from_shape_fn((n * j, 3), |(r, c)| frames[[r / j, r % j, c]] - root[[r / j, c]]);
        let rel = tape.input(rel);
        let p = self.f2.forward(tape, rel);
        let broadcast = RowMix::new(n, (0..n * j).map(|r| vec![(r / j, 1.0)]).collect());
        let q = tape.row_mix(q, Arc::new(broadcast));
        Ok(tape.add(p, q))
    }

    /// Residual graph/temporal blocks, then the per-frame output layer: `N × d2`.
    pub fn spatio_temporal(&self, tape: &mut Tape, pr: Var, n: usize) -> Var {
        let j = self.joints;
        let adjacency: Vec<Vec<(usize, f64)>> = (0..n * j)
            .map(|r| {
                let (t, jj) = (r / j, r % j);
                self.adjacency[jj].iter().map(|&(s, w)| (t * j + s, w)).collect()
            })
            .collect();
        let adjacency = Arc::new(RowMix::new(n * j, adjacency));
        let radius = (self.config.temporal_kernel / 2) as isize;
        let shifts: Vec<Arc<RowMix>> = (-radius..=radius)
            .map(|o| {
                let rows = (0..n * j)
                    .map(|r| {
                        let t = (r / j) as isize + o;
                        if t < 0 || t >= n as isize {
                            Vec::new()
                        } else {
                            vec![(t as usize * j + r % j, 1.0)]
                        }
                    })
                    .collect();
                Arc::new(RowMix::new(n * j, rows))
            })
            .collect();

        let mut x = pr;
        for (g, tc) in self.graph.iter().zip(&self.temporal) {
            let mixed = tape.row_mix(x, adjacency.clone());
            let h = g.forward(tape, mixed);
            let h = tape.relu(h);
            let taps: Vec<Var> = shifts.iter().map(|s| tape.row_mix(h, s.clone())).collect();
            let stacked = tape.concat_cols(&taps);
            let y = tc.forward(tape, stacked);
            x = tape.add(x, y);
        }
        let flat = tape.reshape(x, n, j * self.config.d1);
        self.out.forward(tape, flat)
    }

    /// Full encoder: returns `(P^st, r)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        frames: &Array3<f64>,
        skeleton: &SkeletonSpec,
    ) -> Result<(Var, Array2<f64>)> {
        let (n, _) = self.check(frames)?;
        let root = root_joints(frames, skeleton);
        let pr = self.relative_features(tape, frames, &root)?;
        Ok((self.spatio_temporal(tape, pr, n), root))
    }
}

//! Seeds along the root track, vote regression and radius grouping of votes.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, ParamStore, RowMix, Tape, Var};
use crate::synthgen::uniform_indices;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VotingConfig {
    pub seeds: usize,
    pub clusters: usize,
    pub radius: f64,
}

impl VotingConfig {
    pub fn desk() -> Self {
        Self {
            seeds: 128,
            clusters: 32,
            radius: 0.6,
        }
    }

    pub fn reference() -> Self {
        Self {
            seeds: 512,
            clusters: 128,
            radius: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 || self.clusters == 0 {
            return Err(Error::Config("seed and cluster counts must be positive".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config("grouping radius must be positive".into()));
        }
        Ok(())
    }
}

/// Seed frame indices, spread uniformly over the trajectory.
pub fn seed_indices(n: usize, m: usize) -> Vec<usize> {
    uniform_indices(n, m)
}

/// Seeds `(r_s, P_s^st)` taken at [`seed_indices`].
pub fn sample_seeds(tape: &mut Tape, root: &Array2<f64>, pst: Var, m: usize) -> (Array2<f64>, Var) {
    let idx = seed_indices(root.nrows(), m);
    let seeds = root.select(ndarray::Axis(0), &idx);
    let feats = tape.row_mix(pst, Arc::new(RowMix::gather(root.nrows(), &idx)));
    (seeds, feats)
}

/// Iterative farthest point sampling starting from point 0. Returns at most `count` indices.
pub fn farthest_point_sample(points: &Array2<f64>, count: usize) -> Vec<usize> {
    let n = points.nrows();
    let count = count.min(n);
    if count == 0 {
        return Vec::new();
    }
    let mut chosen = vec![0];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points, i, 0)).collect();
    while chosen.len() < count {
        let mut best = 0;
        for i in 1..n {
            if dist[i] > dist[best] {
                best = i;
            }
        }
        chosen.push(best);
        for i in 0..n {
            dist[i] = dist[i].min(sq_dist(points, i, best));
        }
    }
    chosen
}

fn sq_dist(p: &Array2<f64>, a: usize, b: usize) -> f64 {
    (0..3).map(|c| (p[[a, c]] - p[[b, c]]).powi(2)).sum()
}

#[derive(Debug, Clone)]
pub struct Votes {
    pub seeds: Array2<f64>,
    pub seed_features: Var,
    pub votes: Var,
    pub vote_features: Var,
}

#[derive(Debug, Clone)]
pub struct Clusters {
    /// Vote indices chosen as centres.
    pub center_index: Vec<usize>,
    pub centers: Var,
    pub features: Var,
    pub members: Vec<Vec<usize>>,
}

impl Clusters {
    pub fn member_counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Voting {
    pub config: VotingConfig,
    trunk: Mlp,
    f3: Linear,
    f4: Linear,
    group: Mlp,
}

impl Voting {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: VotingConfig, d2: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            trunk: Mlp::new(store, "voting.trunk", d2, &[d2, d2], rng),
            f3: Linear::new(store, "voting.offset", d2, 3, rng),
            f4: Linear::new(store, "voting.feature", d2, d2, rng),
            group: Mlp::new(store, "voting.group", d2 + 3, &[d2, d2], rng),
        })
    }

    /// `v = r_s + f₃(P_s)` and `P^v = P_s + f₄(P_s)` over a shared trunk.
    pub fn cast(&self, tape: &mut Tape, seeds: Array2<f64>, seed_features: Var) -> Votes {
        let h = self.trunk.forward(tape, seed_features);
        let h = tape.relu(h);
        let off = self.f3.forward(tape, h);
        let res = self.f4.forward(tape, h);
        let s = tape.input(seeds.clone());
        let votes = tape.add(s, off);
        let vote_features = tape.add(seed_features, res);
        Votes {
            seeds,
            seed_features,
            votes,
            vote_features,
        }
    }

    /// Groups votes around FPS centres. Every vote within `radius` of a centre joins it, so votes
    /// may be shared; the centre itself is always a member.
    pub fn cluster(&self, tape: &mut Tape, votes: &Votes) -> Clusters {
        let pos = tape.value(votes.votes).clone();
        let m = pos.nrows();
        let centers_idx = farthest_point_sample(&pos, self.config.clusters);
        let r2 = self.config.radius * self.config.radius;
        let members: Vec<Vec<usize>> = centers_idx
            .iter()
            .map(|&c| (0..m).filter(|&i| sq_dist(&pos, i, c) <= r2).collect())
            .collect();

        let flat: Vec<(usize, usize)> = members
            .iter()
            .zip(&centers_idx)
            .flat_map(|(ms, &c)| ms.iter().map(move |&i| (i, c)))
            .collect();
        let rows = flat.len();
        let gather_vote = Arc::new(RowMix::gather(m, &flat.iter().map(|p| p.0).collect::<Vec<_>>()));
        let gather_center = Arc::new(RowMix::gather(m, &flat.iter().map(|p| p.1).collect::<Vec<_>>()));
        let mv = tape.row_mix(votes.votes, gather_vote.clone());
        let mc = tape.row_mix(votes.votes, gather_center);
        let rel = tape.sub(mv, mc);
        let rel = tape.scale(rel, 1.0 / self.config.radius);
        let feat = tape.row_mix(votes.vote_features, gather_vote);
        let input = tape.concat_cols(&[feat, rel]);
        let h = self.group.forward(tape, input);
        let h = tape.relu(h);
        let mut groups = Vec::with_capacity(members.len());
        let mut start = 0;
        for ms in &members {
            groups.push((start..start + ms.len()).collect::<Vec<_>>());
            start += ms.len();
        }
        debug_assert_eq!(start, rows);
        let features = tape.group_max(h, &groups);
        let centers = tape.row_mix(votes.votes, Arc::new(RowMix::gather(m, &centers_idx)));
        Clusters {
            center_index: centers_idx,
            centers,
            features,
            members,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(clusters: usize) -> (ParamStore, Voting) {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = VotingConfig {
            seeds: 8,
            clusters,
            radius: 0.6,
        };
        let v = Voting::new(&mut store, cfg, 5, &mut rng).unwrap();
        (store, v)
    }

    fn random(rows: usize, cols: usize, seed: u64, scale: f64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
    }

    fn brute_fps(p: &Array2<f64>, count: usize) -> Vec<usize> {
        let mut chosen = vec![0usize];
        while chosen.len() < count.min(p.nrows()) {
            let mut best = (f64::NEG_INFINITY, 0);
            for i in 0..p.nrows() {
                let d = chosen
                    .iter()
                    .map(|&c| ((0..3).map(|k| (p[[i, k]] - p[[c, k]]).powi(2)).sum::<f64>()).sqrt())
                    .fold(f64::INFINITY, f64::min);
                if d > best.0 {
                    best = (d, i);
                }
            }
            chosen.push(best.1);
        }
        chosen
    }

    #[test]
    fn seed_index_rules() {
        assert_eq!(seed_indices(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(seed_indices(3, 2), vec![0, 2]);
        let idx = seed_indices(37, 11);
        assert_eq!(idx.len(), 11);
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn zeroed_heads_leave_seeds_and_features() {
        let (mut store, v) = setup(4);
        store.zero_where(|n| n.starts_with("voting.offset") || n.starts_with("voting.feature"));
        let seeds = random(8, 3, 2, 3.0);
        let feats = random(8, 5, 3, 1.0);
        let mut tape = Tape::new(&store);
        let f = tape.input(feats.clone());
        let votes = v.cast(&mut tape, seeds.clone(), f);
        assert_eq!(tape.value(votes.votes), &seeds);
        assert_eq!(tape.value(votes.vote_features), &feats);
    }

    #[test]
    fn votes_match_loop_oracle_and_translate_with_seeds() {
        let (store, v) = setup(4);
        let seeds = random(8, 3, 2, 3.0);
        let feats = random(8, 5, 3, 1.0);
        let mut tape = Tape::new(&store);
        let f = tape.input(feats.clone());
        let votes = v.cast(&mut tape, seeds.clone(), f);
        let got = tape.value(votes.votes).clone();

        let lin = |name: &str, x: &[f64], relu: bool| -> Vec<f64> {
            let w = store.value(store.id(&format!("{name}.weight")).unwrap());
            let b = store.value(store.id(&format!("{name}.bias")).unwrap());
            (0..w.ncols())
                .map(|c| {
                    let o = b[[0, c]] + (0..x.len()).map(|r| x[r] * w[[r, c]]).sum::<f64>();
                    if relu {
                        o.max(0.0)
                    } else {
                        o
                    }
                })
                .collect()
        };
        for i in 0..8 {
            let x: Vec<f64> = feats.row(i).to_vec();
            let h = lin("voting.trunk.0", &x, true);
            let h = lin("voting.trunk.1", &h, true);
            let off = lin("voting.offset", &h, false);
            for c in 0..3 {
                assert!((got[[i, c]] - (seeds[[i, c]] + off[c])).abs() < 1e-6);
            }
        }

        let shifted = seeds.mapv(|x| x + 2.5);
        let mut tape = Tape::new(&store);
        let f = tape.input(feats);
        let moved = v.cast(&mut tape, shifted, f);
        let moved = tape.value(moved.votes);
        assert!(moved
            .iter()
            .zip(got.iter())
            .all(|(a, b)| a - b == 2.5 || (a - b - 2.5).abs() < 1e-12));
    }

    #[test]
    fn fps_matches_brute_force() {
        for seed in 0..10 {
            let p = random(40, 3, seed, 4.0);
            assert_eq!(farthest_point_sample(&p, 12), brute_fps(&p, 12));
        }
        assert_eq!(farthest_point_sample(&random(3, 3, 0, 1.0), 10).len(), 3);
    }

    fn clusters_for(points: Array2<f64>, clusters: usize) -> (Clusters, Array2<f64>) {
        let (mut store, v) = setup(clusters);
        store.zero_where(|n| n.starts_with("voting.offset"));
        let feats = random(points.nrows(), 5, 9, 1.0);
        let mut tape = Tape::new(&store);
        let f = tape.input(feats);
        let votes = v.cast(&mut tape, points, f);
        let c = v.cluster(&mut tape, &votes);
        let centers = tape.value(c.centers).clone();
        (c, centers)
    }

    #[test]
    fn degenerate_and_separated_votes() {
        let same = Array2::from_elem((6, 3), 1.5);
        let (c, centers) = clusters_for(same, 3);
        assert!(centers.rows().into_iter().all(|r| r.iter().all(|&v| v == 1.5)));
        assert!(c.members.iter().all(|m| m.len() == 6));

        let mut blobs = random(10, 3, 4, 0.1);
        for i in 5..10 {
            blobs[[i, 0]] += 5.0;
        }
        let (c, _) = clusters_for(blobs, 2);
        let side = |i: usize| i >= 5;
        for ms in &c.members {
            assert!(ms.iter().all(|&i| side(i) == side(ms[0])));
        }
        assert_ne!(side(c.center_index[0]), side(c.center_index[1]));
    }

    #[test]
    fn members_lie_within_radius() {
        let pts = random(30, 3, 6, 2.0);
        let (c, centers) = clusters_for(pts.clone(), 8);
        for (k, ms) in c.members.iter().enumerate() {
            assert!(!ms.is_empty());
            for &i in ms {
                let d: f64 = (0..3)
                    .map(|a| (pts[[i, a]] - centers[[k, a]]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d <= 0.6 + 1e-12);
            }
            assert!(pts.row(c.center_index[k]) == centers.row(k));
        }
    }
}

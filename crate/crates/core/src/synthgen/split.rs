//! Train/test partitions over sequence ids.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::stream_rng;

use super::dataset::Dataset;

/// Which partition protocol to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// Random 4:1 split over sequences; rooms are shared between train and test.
    S1,
    /// Whole rooms held out for testing.
    S2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

const SPLIT_STREAM: u64 = 7 << 40;

/// Builds the requested split deterministically from `seed`.
///
/// `S1` puts `⌊4n/5⌋` sequences in train. `S2` holds out `⌈rooms/10⌉` rooms (at least one)
/// and needs at least two rooms.
pub fn make_split(dataset: &Dataset, kind: SplitKind, seed: u64) -> Result<Split> {
    let mut rng = stream_rng(seed, SPLIT_STREAM);
    match kind {
        SplitKind::S1 => {
            if dataset.sequences.len() < 2 {
                return Err(Error::Data("a sequence split needs at least two sequences".into()));
            }
            let mut ids: Vec<String> = dataset.sequences.iter().map(|s| s.id.clone()).collect();
            ids.sort();
            ids.shuffle(&mut rng);
            let n_train = (4 * ids.len() / 5).max(1);
            let test = ids.split_off(n_train);
            Ok(sorted(ids, test))
        }
        SplitKind::S2 => {
            let rooms: BTreeSet<&str> = dataset.sequences.iter().map(|s| s.room_id.as_str()).collect();
            if rooms.len() < 2 {
                return Err(Error::Data("a room split needs at least two rooms".into()));
            }
            let mut rooms: Vec<&str> = rooms.into_iter().collect();
            rooms.shuffle(&mut rng);
            let n_test = rooms.len().div_ceil(10).max(1);
            let held: BTreeSet<&str> = rooms[..n_test].iter().copied().collect();
            let (test, train): (Vec<_>, Vec<_>) = dataset
                .sequences
                .iter()
                .partition(|s| held.contains(s.room_id.as_str()));
            Ok(sorted(
                train.into_iter().map(|s| s.id.clone()).collect(),
                test.into_iter().map(|s| s.id.clone()).collect(),
            ))
        }
    }
}

fn sorted(mut train: Vec<String>, mut test: Vec<String>) -> Split {
    train.sort();
    test.sort();
    Split { train, test }
}

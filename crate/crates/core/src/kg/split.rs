use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{KnowledgeGraph, Triple};
use crate::error::{Error, Result};

/// Known/open entity partition with the triple pools it induces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpenSplit {
    /// Sorted ascending.
    pub known: Vec<usize>,
    /// Sorted ascending.
    pub open: Vec<usize>,
    pub train: Vec<Triple>,
    /// Every triple that mentions an open entity.
    pub test: Vec<Triple>,
}

impl OpenSplit {
    /// Share of the original triples moved out of training.
    pub fn moved_fraction(&self) -> f64 {
        let total = self.train.len() + self.test.len();
        if total == 0 {
            0.0
        } else {
            self.test.len() as f64 / total as f64
        }
    }
}

/// Samples `ceil(open_fraction * |test_entities|)` open entities uniformly
/// and moves every triple mentioning one of them to the test pool.
pub fn split_open_world(
    g: &KnowledgeGraph,
    test_entities: &[usize],
    open_fraction: f64,
    seed: u64,
) -> Result<OpenSplit> {
    if !(open_fraction > 0.0 && open_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "open fraction {open_fraction} not in (0, 1)"
        )));
    }
    let pool: Vec<usize> = test_entities
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if let Some(&bad) = pool.iter().find(|&&e| e >= g.num_entities()) {
        return Err(Error::Index {
            what: "test entity",
            index: bad,
            bound: g.num_entities(),
        });
    }
    let n_open = (open_fraction * pool.len() as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut open: Vec<usize> = index::sample(&mut rng, pool.len(), n_open)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    open.sort_unstable();

    let mut is_open = vec![false; g.num_entities()];
    for &e in &open {
        is_open[e] = true;
    }
    let (test, train): (Vec<Triple>, Vec<Triple>) = g
        .triples()
        .iter()
        .partition(|t| is_open[t.subject] || is_open[t.object]);
    let known = (0..g.num_entities()).filter(|&e| !is_open[e]).collect();
    Ok(OpenSplit {
        known,
        open,
        train,
        test,
    })
}

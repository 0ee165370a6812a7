use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KnowledgeGraph, Triple};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairSplit {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlignedPair {
    /// Entity id in the first graph.
    pub left: usize,
    /// Entity id in the second graph.
    pub right: usize,
    pub split: PairSplit,
}

/// Ground-truth correspondences between two graphs, tagged by split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AlignmentPairs {
    pairs: Vec<AlignedPair>,
}

impl AlignmentPairs {
    /// Checks that no entity occurs twice on either side of any one split.
    pub fn new(pairs: Vec<AlignedPair>) -> Result<Self> {
        for split in [PairSplit::Train, PairSplit::Valid, PairSplit::Test] {
            let (mut l, mut r) = (HashSet::new(), HashSet::new());
            for p in pairs.iter().filter(|p| p.split == split) {
                if !l.insert(p.left) || !r.insert(p.right) {
                    return Err(Error::Parameter(format!(
                        "alignment pair ({}, {}) breaks one-to-one {split:?} split",
                        p.left, p.right
                    )));
                }
            }
        }
        Ok(AlignmentPairs { pairs })
    }

    /// Untagged pairs, all placed in the test split.
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(left, right)| AlignedPair {
                    left,
                    right,
                    split: PairSplit::Test,
                })
                .collect(),
        )
    }

    /// Train and test lists taken as given.
    pub fn from_splits(train: &[(usize, usize)], test: &[(usize, usize)]) -> Result<Self> {
        let tag = |ps: &[(usize, usize)], split| {
            ps.iter()
                .map(move |&(left, right)| AlignedPair { left, right, split })
                .collect::<Vec<_>>()
        };
        let mut pairs = tag(train, PairSplit::Train);
        pairs.extend(tag(test, PairSplit::Test));
        Self::new(pairs)
    }

    /// Shuffles and re-tags: the first `train_fraction` become training seeds,
    /// the next `valid_fraction` validation, the rest test.
    pub fn resplit(&self, train_fraction: f64, valid_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction)
            || !(0.0..=1.0).contains(&valid_fraction)
            || train_fraction + valid_fraction > 1.0
        {
            return Err(Error::Parameter(format!(
                "split fractions {train_fraction} + {valid_fraction} must lie in [0, 1]"
            )));
        }
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = order.len() as f64;
        let n_train = (train_fraction * n).round() as usize;
        let n_valid = ((valid_fraction * n).round() as usize).min(order.len() - n_train);
        let mut pairs = self.pairs.clone();
        for (rank, &i) in order.iter().enumerate() {
            pairs[i].split = if rank < n_train {
                PairSplit::Train
            } else if rank < n_train + n_valid {
                PairSplit::Valid
            } else {
                PairSplit::Test
            };
        }
        Self::new(pairs)
    }

    pub fn all(&self) -> &[AlignedPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn of(&self, split: PairSplit) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .filter(|p| p.split == split)
            .map(|p| (p.left, p.right))
            .collect()
    }

    pub fn train(&self) -> Vec<(usize, usize)> {
        self.of(PairSplit::Train)
    }

    pub fn valid(&self) -> Vec<(usize, usize)> {
        self.of(PairSplit::Valid)
    }

    pub fn test(&self) -> Vec<(usize, usize)> {
        self.of(PairSplit::Test)
    }
}

/// Renamed, id-permuted copy of `g` in which each triple survives
/// independently with probability `1 - edge_dropout`. The original graph is
/// left untouched. Returns the copy and the full entity bijection, tagged as
/// test pairs.
pub fn make_aligned_copy(
    g: &KnowledgeGraph,
    rename_seed: u64,
    edge_dropout: f64,
) -> Result<(KnowledgeGraph, AlignmentPairs)> {
    if !(0.0..1.0).contains(&edge_dropout) {
        return Err(Error::Parameter(format!(
            "edge dropout {edge_dropout} not in [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rename_seed);
    let n = g.num_entities();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let mut copy = KnowledgeGraph::new();
    // perm[old] = new id; names are assigned in new-id order.
    let mut inverse = vec![0; n];
    for (old, &new) in perm.iter().enumerate() {
        inverse[new] = old;
    }
    for new in 0..n {
        copy.add_entity(&format!("c{new}"));
    }
    for r in 0..g.num_relations() {
        copy.add_relation(&format!("q{r}"));
    }
    for t in g.triples() {
        if edge_dropout > 0.0 && rng.gen::<f64>() < edge_dropout {
            continue;
        }
        copy.add_triple(Triple::new(perm[t.subject], t.relation, perm[t.object]))?;
    }
    let pairs: Vec<(usize, usize)> = (0..n).map(|old| (old, perm[old])).collect();
    Ok((copy, AlignmentPairs::from_pairs(&pairs)?))
}

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KnowledgeGraph, Triple};
use crate::error::{Error, Result};

/// Reproducible random multi-relational graph.
///
/// Endpoints are drawn independently with weight `rank^-skew` over a random
/// ranking of the entities; `skew = 0` gives uniform endpoints, larger values
/// a heavier-tailed degree distribution with many low-degree entities.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticKg {
    pub entities: usize,
    pub relations: usize,
    /// Target mean of in + out degree.
    pub avg_degree: f64,
    pub skew: f64,
    pub seed: u64,
}

impl SyntheticKg {
    pub fn new(entities: usize, relations: usize, avg_degree: f64, seed: u64) -> Self {
        SyntheticKg {
            entities,
            relations,
            avg_degree,
            skew: 0.0,
            seed,
        }
    }

    pub fn skewed(mut self, skew: f64) -> Self {
        self.skew = skew;
        self
    }

    pub fn generate(&self) -> Result<KnowledgeGraph> {
        if self.entities == 0 || self.relations == 0 {
            return Err(Error::Parameter(
                "synthetic graph needs at least one entity and relation".into(),
            ));
        }
        if !(self.avg_degree >= 0.0 && self.skew >= 0.0) {
            return Err(Error::Parameter(
                "avg_degree and skew must be non-negative".into(),
            ));
        }
        let n = self.entities;
        let mut g = KnowledgeGraph::from_ids(n, self.relations, &[])?;
        if n < 2 {
            return Ok(g);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut rank: Vec<usize> = (0..n).collect();
        rank.shuffle(&mut rng);
        let weights: Vec<f64> = rank
            .iter()
            .map(|&r| ((r + 1) as f64).powf(-self.skew))
            .collect();
        let endpoint = WeightedIndex::new(&weights).expect("positive weights");

        let capacity = n * (n - 1) * self.relations;
        let target = ((n as f64 * self.avg_degree / 2.0).round() as usize).min(capacity);
        let mut attempts = 0usize;
        while g.num_triples() < target && attempts < 100 * target + 1000 {
            attempts += 1;
            let s = endpoint.sample(&mut rng);
            let o = endpoint.sample(&mut rng);
            if s == o {
                continue;
            }
            let r = rng.gen_range(0..self.relations);
            g.add_triple(Triple::new(s, r, o))?;
        }
        Ok(g)
    }
}

/// Uniform-endpoint synthetic graph.
pub fn generate_synthetic_kg(
    entities: usize,
    relations: usize,
    avg_degree: f64,
    seed: u64,
) -> Result<KnowledgeGraph> {
    SyntheticKg::new(entities, relations, avg_degree, seed).generate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entity_has_no_triples() {
        let g = generate_synthetic_kg(1, 3, 4.0, 1).unwrap();
        assert_eq!(g.num_triples(), 0);
        assert_eq!(g.num_entities(), 1);
    }

    #[test]
    fn deterministic_and_loop_free() {
        let a = SyntheticKg::new(100, 5, 3.0, 11)
            .skewed(1.0)
            .generate()
            .unwrap();
        let b = SyntheticKg::new(100, 5, 3.0, 11)
            .skewed(1.0)
            .generate()
            .unwrap();
        assert_eq!(a, b);
        assert!(a.triples().iter().all(|t| t.subject != t.object));
    }

    #[test]
    fn mean_degree_hits_target() {
        let g = generate_synthetic_kg(200, 10, 4.0, 5).unwrap();
        let deg = g.degrees();
        let mean = deg.iter().sum::<usize>() as f64 / deg.len() as f64;
        assert!((mean - 4.0).abs() <= 0.5, "mean degree {mean}");
    }

    #[test]
    fn skew_produces_heavier_tail() {
        let flat = generate_synthetic_kg(500, 5, 4.0, 2).unwrap().degrees();
        let skewed = SyntheticKg::new(500, 5, 4.0, 2)
            .skewed(1.0)
            .generate()
            .unwrap()
            .degrees();
        let max = |d: &[usize]| *d.iter().max().unwrap();
        assert!(max(&skewed) > 2 * max(&flat));
    }
}

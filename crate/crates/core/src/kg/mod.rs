//! Knowledge-graph data model: vocabularies, triples, joint graphs for
//! alignment, neighbor indices, open-world splits and synthetic graphs.

mod align;
mod io;
mod neighbors;
mod split;
mod synth;

pub use align::{make_aligned_copy, AlignedPair, AlignmentPairs, PairSplit};
pub use io::{load_pairs, load_triples, write_entity_list, write_pairs, write_triples};
pub use neighbors::{AdjacencyMode, EdgeList, Neighbor, NeighborIndex};
pub use split::{split_open_world, OpenSplit};
pub use synth::{generate_synthetic_kg, SyntheticKg};

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Bidirectional name <-> dense id map, ids assigned in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

impl Triple {
    pub fn new(subject: usize, relation: usize, object: usize) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }

    pub fn mentions(&self, entity: usize) -> bool {
        self.subject == entity || self.object == entity
    }
}

/// Entities, relations and a duplicate-free triple list.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.triples == other.triples
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph over `e0..e{n}` / `r0..r{m}` with the given id triples.
    pub fn from_ids(num_entities: usize, num_relations: usize, triples: &[Triple]) -> Result<Self> {
        let mut g = KnowledgeGraph::new();
        for i in 0..num_entities {
            g.entities.get_or_insert(&format!("e{i}"));
        }
        for r in 0..num_relations {
            g.relations.get_or_insert(&format!("r{r}"));
        }
        for t in triples {
            g.add_triple(*t)?;
        }
        Ok(g)
    }

    /// Inserts a named triple; returns `false` for a duplicate.
    pub fn add_named(&mut self, subject: &str, relation: &str, object: &str) -> bool {
        let s = self.entities.get_or_insert(subject);
        let r = self.relations.get_or_insert(relation);
        let o = self.entities.get_or_insert(object);
        self.push_unchecked(Triple::new(s, r, o))
    }

    /// Inserts an id triple; returns `false` for a duplicate.
    pub fn add_triple(&mut self, t: Triple) -> Result<bool> {
        for (what, id, bound) in [
            ("entity", t.subject, self.entities.len()),
            ("relation", t.relation, self.relations.len()),
            ("entity", t.object, self.entities.len()),
        ] {
            if id >= bound {
                return Err(Error::Index {
                    what,
                    index: id,
                    bound,
                });
            }
        }
        Ok(self.push_unchecked(t))
    }

    fn push_unchecked(&mut self, t: Triple) -> bool {
        if self.seen.insert(t) {
            self.triples.push(t);
            true
        } else {
            false
        }
    }

    pub fn add_entity(&mut self, name: &str) -> usize {
        self.entities.get_or_insert(name)
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        self.relations.get_or_insert(name)
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.seen.contains(t)
    }

    /// Same vocabularies, different triple set.
    pub fn with_triples(&self, triples: &[Triple]) -> Result<Self> {
        let mut g = KnowledgeGraph {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            ..Default::default()
        };
        for t in triples {
            g.add_triple(*t)?;
        }
        Ok(g)
    }

    /// In + out degree of every entity (self-loop triples count twice).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_entities()];
        for t in &self.triples {
            deg[t.subject] += 1;
            deg[t.object] += 1;
        }
        deg
    }
}

fn unique_name(vocab: &Vocab, name: &str) -> String {
    let mut candidate = name.to_string();
    while vocab.id(&candidate).is_some() {
        candidate.push_str("#2");
    }
    candidate
}

/// Disjoint union. Entity and relation ids of `g2` are offset by the sizes
/// of `g1`'s vocabularies; colliding `g2` names get a `#2` suffix.
pub fn merge_graphs(g1: &KnowledgeGraph, g2: &KnowledgeGraph) -> KnowledgeGraph {
    let mut merged = g1.clone();
    let (eo, ro) = (g1.num_entities(), g1.num_relations());
    for name in g2.entities.names() {
        let n = unique_name(&merged.entities, name);
        merged.entities.get_or_insert(&n);
    }
    for name in g2.relations.names() {
        let n = unique_name(&merged.relations, name);
        merged.relations.get_or_insert(&n);
    }
    for t in &g2.triples {
        merged.push_unchecked(Triple::new(t.subject + eo, t.relation + ro, t.object + eo));
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, r: usize, ts: &[(usize, usize, usize)]) -> KnowledgeGraph {
        let ts: Vec<Triple> = ts.iter().map(|&(s, r, o)| Triple::new(s, r, o)).collect();
        KnowledgeGraph::from_ids(n, r, &ts).unwrap()
    }

    #[test]
    fn duplicates_are_dropped() {
        let mut g = KnowledgeGraph::new();
        assert!(g.add_named("a", "r", "b"));
        assert!(!g.add_named("a", "r", "b"));
        assert_eq!(g.num_triples(), 1);
        assert!(g.add_triple(Triple::new(0, 0, 5)).is_err());
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let g = graph(3, 2, &[(0, 0, 1), (1, 1, 2)]);
        assert_eq!(merge_graphs(&g, &KnowledgeGraph::new()), g);
    }

    #[test]
    fn merge_is_a_disjoint_union() {
        let g1 = graph(3, 1, &[(0, 0, 1), (1, 0, 2)]);
        let g2 = graph(2, 1, &[(0, 0, 1)]);
        let m = merge_graphs(&g1, &g2);
        assert_eq!(m.num_entities(), 5);
        assert_eq!(m.num_relations(), 2);
        assert_eq!(m.num_triples(), 3);
        // Every merged triple maps back to exactly one source triple.
        for t in m.triples() {
            let from1 = t.subject < 3 && g1.contains(t);
            let from2 = t.subject >= 3
                && g2.contains(&Triple::new(t.subject - 3, t.relation - 1, t.object - 3));
            assert!(from1 ^ from2);
        }
        let mut deg = g1.degrees();
        deg.extend(g2.degrees());
        assert_eq!(m.degrees(), deg);
        assert_eq!(m.entities().name(3), "e0#2");
    }
}

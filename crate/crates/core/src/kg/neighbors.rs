use std::collections::HashSet;

use super::{KnowledgeGraph, Triple};
use crate::tensor::SegmentIndex;

/// Whether an entity may take part in its own aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjacencyMode {
    /// Neighbors only, never the entity itself.
    Decentralized,
    /// Every entity additionally appears once in its own list, tagged with
    /// the reserved self relation.
    Centralized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Neighbor {
    pub entity: usize,
    /// Relation slot: base relation, its inverse, or the self relation.
    pub relation: usize,
    /// Edge was produced by reading a triple object-to-subject.
    pub inverse: bool,
}

/// Flat edge arrays for the encoder: edge `k` carries `sources[k]` into
/// `targets[k]` with relation slot `relations[k]`. Edges are grouped by
/// target in ascending order.
#[derive(Clone, Debug)]
pub struct EdgeList {
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    pub relations: Vec<usize>,
    pub segments: SegmentIndex,
    /// `1 / |N_i|`, or 0 for entities with no neighbors.
    pub inv_degree: Vec<f64>,
}

/// Per-entity neighbor lists.
///
/// Relation slots are laid out as `[base relations | inverses | self]`, so a
/// graph with `m` relations uses `2m + 1` slots regardless of mode.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    lists: Vec<Vec<Neighbor>>,
    base_relations: usize,
    mode: AdjacencyMode,
    add_inverse: bool,
    edges: EdgeList,
}

impl NeighborIndex {
    pub fn build(g: &KnowledgeGraph, mode: AdjacencyMode, add_inverse: bool) -> Self {
        Self::from_triples(
            g.num_entities(),
            g.num_relations(),
            g.triples(),
            mode,
            add_inverse,
        )
    }

    pub fn from_triples(
        num_entities: usize,
        num_relations: usize,
        triples: &[Triple],
        mode: AdjacencyMode,
        add_inverse: bool,
    ) -> Self {
        Self::assemble(
            num_entities,
            num_relations,
            triples,
            &[],
            &HashSet::new(),
            mode,
            add_inverse,
        )
    }

    /// Evaluation-time index for an open-world split: all training edges,
    /// plus those test-triple edges whose aggregating entity is open. Known
    /// entities keep exactly their training neighborhoods.
    pub fn for_open_evaluation(
        num_entities: usize,
        num_relations: usize,
        train: &[Triple],
        test: &[Triple],
        open: &[usize],
        mode: AdjacencyMode,
        add_inverse: bool,
    ) -> Self {
        let open: HashSet<usize> = open.iter().copied().collect();
        Self::assemble(
            num_entities,
            num_relations,
            train,
            test,
            &open,
            mode,
            add_inverse,
        )
    }

    fn assemble(
        num_entities: usize,
        num_relations: usize,
        train: &[Triple],
        extra: &[Triple],
        extra_targets: &HashSet<usize>,
        mode: AdjacencyMode,
        add_inverse: bool,
    ) -> Self {
        let mut lists: Vec<Vec<Neighbor>> = vec![Vec::new(); num_entities];
        let mut push = |target: usize, n: Neighbor, gate: bool| {
            if !gate || extra_targets.contains(&target) {
                lists[target].push(n);
            }
        };
        for (triples, gate) in [(train, false), (extra, true)] {
            for t in triples {
                if t.subject == t.object {
                    continue;
                }
                push(
                    t.subject,
                    Neighbor {
                        entity: t.object,
                        relation: t.relation,
                        inverse: false,
                    },
                    gate,
                );
                if add_inverse {
                    push(
                        t.object,
                        Neighbor {
                            entity: t.subject,
                            relation: num_relations + t.relation,
                            inverse: true,
                        },
                        gate,
                    );
                }
            }
        }
        if mode == AdjacencyMode::Centralized {
            for (i, list) in lists.iter_mut().enumerate() {
                list.push(Neighbor {
                    entity: i,
                    relation: 2 * num_relations,
                    inverse: false,
                });
            }
        }
        let edges = edge_list(&lists);
        NeighborIndex {
            lists,
            base_relations: num_relations,
            mode,
            add_inverse,
            edges,
        }
    }

    pub fn neighbors(&self, entity: usize) -> &[Neighbor] {
        &self.lists[entity]
    }

    pub fn num_entities(&self) -> usize {
        self.lists.len()
    }

    pub fn mode(&self) -> AdjacencyMode {
        self.mode
    }

    pub fn has_inverse_edges(&self) -> bool {
        self.add_inverse
    }

    pub fn base_relations(&self) -> usize {
        self.base_relations
    }

    /// Rows needed in a relation table: base, inverse and self slots.
    pub fn relation_slots(&self) -> usize {
        2 * self.base_relations + 1
    }

    pub fn self_relation(&self) -> usize {
        2 * self.base_relations
    }

    /// Entities with an empty neighbor list.
    pub fn degenerate_entities(&self) -> Vec<usize> {
        self.lists
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_empty())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn edges(&self) -> &EdgeList {
        &self.edges
    }
}

fn edge_list(lists: &[Vec<Neighbor>]) -> EdgeList {
    let mut targets = Vec::new();
    let mut sources = Vec::new();
    let mut relations = Vec::new();
    for (i, list) in lists.iter().enumerate() {
        for n in list {
            targets.push(i);
            sources.push(n.entity);
            relations.push(n.relation);
        }
    }
    let inv_degree = lists
        .iter()
        .map(|l| {
            if l.is_empty() {
                0.0
            } else {
                1.0 / l.len() as f64
            }
        })
        .collect();
    let segments = SegmentIndex::new(targets.clone(), lists.len()).expect("targets are entity ids");
    EdgeList {
        targets,
        sources,
        relations,
        segments,
        inv_degree,
    }
}

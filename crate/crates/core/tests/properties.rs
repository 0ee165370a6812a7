//! Structural invariants as property tests.

use std::collections::HashSet;

use decentrl::checkpoint::{self, Model};
use decentrl::distiller::DensityParams;
use decentrl::encoder::{encode, EncoderMode, EncoderParams, Task};
use decentrl::eval::{rank_alignment, rank_among, rank_prediction, RankingReport, TripleScorer};
use decentrl::kg::{
    generate_synthetic_kg, split_open_world, KnowledgeGraph, NeighborIndex, Triple,
};
use decentrl::seed;
use decentrl::tasks::AlignModel;
use decentrl::tensor::{SegmentIndex, Tape, Tensor};
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| tensor(rows, cols, d))
}

fn segments() -> impl Strategy<Value = (Vec<usize>, usize)> {
    (1usize..6).prop_flat_map(|count| (prop::collection::vec(0..count, 1..30), Just(count)))
}

proptest! {
    #[test]
    fn segment_softmax_is_shift_invariant_and_normalized(
        (ids, count) in segments(),
        shifts in prop::collection::vec(-50.0f64..50.0, 6),
        seed in any::<u64>(),
    ) {
        let mut rng = seed::rng(seed, "scores");
        let scores: Vec<f64> = ids.iter().map(|_| rand::Rng::gen_range(&mut rng, -5.0..5.0)).collect();
        let shifted: Vec<f64> = scores.iter().zip(&ids).map(|(s, &i)| s + shifts[i]).collect();
        let seg = SegmentIndex::new(ids.clone(), count).unwrap();
        let tape = Tape::new();
        let n = ids.len();
        let a = tape.value(tape.segment_softmax(tape.constant(tensor(n, 1, scores)), &seg).unwrap());
        let b = tape.value(tape.segment_softmax(tape.constant(tensor(n, 1, shifted)), &seg).unwrap());
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
        let mut sums = vec![0.0; count];
        for (&i, &v) in ids.iter().zip(a.data()) {
            sums[i] += v;
        }
        for (i, s) in sums.iter().enumerate() {
            if ids.contains(&i) {
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn detach_passes_values_and_blocks_gradient(x in matrix(3, 4)) {
        let tape = Tape::new();
        let v = tape.param(x.clone());
        let d = tape.detach(v);
        prop_assert_eq!(tape.value(d), x);
        let loss = tape.sum(tape.mul(d, d).unwrap());
        let g = tape.backward(loss).unwrap().wrt(v);
        prop_assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn open_split_invariants(
        n in 2usize..60,
        degree in 0.5f64..6.0,
        fraction in 0.05f64..0.95,
        gseed in any::<u64>(),
        sseed in any::<u64>(),
        pick in prop::collection::vec(any::<bool>(), 60),
    ) {
        let g = generate_synthetic_kg(n, 3, degree, gseed).unwrap();
        let test: Vec<usize> = (0..n).filter(|&e| pick[e]).collect();
        prop_assume!(!test.is_empty());
        let split = split_open_world(&g, &test, fraction, sseed).unwrap();
        prop_assert_eq!(split.open.len(), (fraction * test.len() as f64).ceil() as usize);
        let open: HashSet<usize> = split.open.iter().copied().collect();
        prop_assert!(open.iter().all(|e| test.contains(e)));
        let touches = |t: &Triple| open.contains(&t.subject) || open.contains(&t.object);
        prop_assert!(split.train.iter().all(|t| !touches(t)));
        let expected: Vec<Triple> = g.triples().iter().copied().filter(touches).collect();
        prop_assert_eq!(&split.test, &expected);
        prop_assert_eq!(split.train.len() + split.test.len(), g.num_triples());
        prop_assert_eq!(split.known.len() + split.open.len(), n);
        prop_assert_eq!(split_open_world(&g, &test, fraction, sseed).unwrap(), split);
    }

    #[test]
    fn metric_identities(ranks in prop::collection::vec(1usize..50, 1..40)) {
        let r = RankingReport::from_ranks(ranks);
        prop_assert!(r.hits1 <= r.hits3 && r.hits3 <= r.hits10);
        prop_assert!(r.hits1 <= r.mrr && r.mrr <= 1.0);
        prop_assert!(1.0 / r.mr <= r.mrr + 1e-12);
        prop_assert!(r.mr >= 1.0);
    }

    #[test]
    fn rank_among_is_bounded(scores in prop::collection::vec(-2i32..2, 1..20), t in 0usize..20) {
        let cands: Vec<usize> = (0..scores.len()).collect();
        let t = t % scores.len();
        let r = rank_among(t, &cands, |c| scores[c] as f64);
        prop_assert!(r >= 1 && r <= cands.len());
        let better = scores.iter().filter(|&&s| s > scores[t]).count();
        let ties_before = (0..t).filter(|&c| scores[c] == scores[t]).count();
        prop_assert_eq!(r, 1 + better + ties_before);
    }

    #[test]
    fn alignment_ranks_survive_rotation_and_translation(
        a in matrix(8, 3),
        b in matrix(8, 3),
        angle in 0.0f64..std::f64::consts::TAU,
        shift in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let (c, s) = (angle.cos(), angle.sin());
        let moved = |t: &Tensor| {
            let d: Vec<f64> = (0..t.rows())
                .flat_map(|i| {
                    let r = t.row(i);
                    [c * r[0] - s * r[1] + shift[0], s * r[0] + c * r[1] + shift[1], r[2] + shift[2]]
                })
                .collect();
            tensor(t.rows(), 3, d)
        };
        let pairs: Vec<(usize, usize)> = (0..8).map(|i| (i, (i * 3) % 8)).collect();
        let before = rank_alignment(&a, &b, &pairs).unwrap();
        let after = rank_alignment(&moved(&a), &moved(&b), &pairs).unwrap();
        prop_assert_eq!(before.forward.ranks, after.forward.ranks);
        prop_assert_eq!(before.backward.ranks, after.backward.ranks);
    }

    #[test]
    fn filtered_never_exceeds_raw(
        emb in matrix(12, 2),
        rel in matrix(4, 2),
        raw_triples in prop::collection::vec((0usize..12, 0usize..2, 0usize..12), 1..40),
    ) {
        struct Dot(Tensor, Tensor);
        impl TripleScorer for Dot {
            fn num_entities(&self) -> usize { self.0.rows() }
            fn score_objects(&self, s: usize, r: usize) -> Vec<f64> {
                (0..12).map(|c| (0..2).map(|k| self.0.at(s, k) * self.1.at(r, k) * self.0.at(c, k)).sum()).collect()
            }
            fn score_subjects(&self, r: usize, o: usize) -> Vec<f64> {
                self.score_objects(o, r + 2)
            }
        }
        let triples: Vec<Triple> = raw_triples.iter().map(|&(s, r, o)| Triple::new(s, r, o)).collect();
        let known: HashSet<Triple> = triples.iter().copied().collect();
        let scorer = Dot(emb, rel);
        let raw = rank_prediction(&scorer, &triples, &known, false).unwrap();
        let fil = rank_prediction(&scorer, &triples, &known, true).unwrap();
        for q in 0..triples.len() {
            prop_assert!(fil.object.ranks[q] <= raw.object.ranks[q]);
            prop_assert!(fil.subject.ranks[q] <= raw.subject.ranks[q]);
        }
    }

    #[test]
    fn checkpoint_round_trip(pseed in any::<u64>(), layers in 1usize..4, dim in 1usize..6) {
        let model = Model::Align(AlignModel {
            encoder: EncoderParams::init(7, 5, dim, layers, pseed).unwrap(),
            density: DensityParams::init(dim * layers, dim, &mut seed::rng(pseed, "d")),
            mode: EncoderMode::Gat,
            normalize: false,
            add_inverse: true,
            n_left: 4,
        });
        let text = checkpoint::to_text(&model);
        prop_assert_eq!(checkpoint::parse(&text).unwrap(), model);
    }
}

#[test]
fn alignment_output_rows_are_unit_length() {
    let g = generate_synthetic_kg(30, 3, 3.0, 2).unwrap();
    for mode in [EncoderMode::Dan, EncoderMode::Gat, EncoderMode::CentRl] {
        let index = NeighborIndex::build(&g, mode.adjacency(), true);
        let model = AlignModel {
            encoder: EncoderParams::init(30, index.relation_slots(), 5, 3, 1).unwrap(),
            density: DensityParams::init(15, 5, &mut seed::rng(1, "d")),
            mode,
            normalize: true,
            add_inverse: true,
            n_left: 15,
        };
        let (_, out) = model.encode(&index).unwrap();
        assert_eq!(out.cols(), 15);
        for i in 0..30 {
            let norm: f64 = out.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                (norm - 1.0).abs() < 1e-12 || norm == 0.0,
                "{mode} row {i}: {norm}"
            );
        }
    }
}

#[test]
fn isolated_entity_has_zero_alignment_row() {
    let g = KnowledgeGraph::from_ids(4, 1, &[Triple::new(0, 0, 1), Triple::new(1, 0, 2)]).unwrap();
    let index = NeighborIndex::build(&g, EncoderMode::Dan.adjacency(), true);
    let params = EncoderParams::init(4, index.relation_slots(), 3, 2, 0).unwrap();
    let (_, out) = encode(&params, &index, EncoderMode::Dan, Task::Alignment).unwrap();
    assert!(out.row(3).iter().all(|&v| v == 0.0));
}

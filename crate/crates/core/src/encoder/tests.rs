use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::kg::{generate_synthetic_kg, KnowledgeGraph, Triple};

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn vecmat(v: &[f64], m: &Tensor) -> Vec<f64> {
    (0..m.cols())
        .map(|c| v.iter().enumerate().map(|(r, x)| x * m.at(r, c)).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Per-entity reimplementation of one attention layer.
fn attention_oracle(
    query: &Tensor,
    kv: &Tensor,
    index: &NeighborIndex,
    layer: &LayerParams,
    relation: Option<&Tensor>,
) -> Vec<Vec<f64>> {
    let d = layer.w.rows();
    let (aq, ak) = layer.a.data().split_at(d);
    (0..index.num_entities())
        .map(|i| {
            let ns = index.neighbors(i);
            let qi = dot(&vecmat(query.row(i), &layer.w1), aq);
            let scores: Vec<f64> = ns
                .iter()
                .map(|n| leaky(qi + dot(&vecmat(kv.row(n.entity), &layer.w2), ak)))
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let mut out = vec![0.0; d];
            for (n, s) in ns.iter().zip(&scores) {
                let w = (s - max).exp() / z;
                let mut msg = vecmat(kv.row(n.entity), &layer.w);
                if let Some(r) = relation {
                    for (m, x) in msg.iter_mut().zip(vecmat(r.row(n.relation), &layer.wr)) {
                        *m += x;
                    }
                }
                for (o, m) in out.iter_mut().zip(msg) {
                    *o += w * m;
                }
            }
            out
        })
        .collect()
}

fn layer_with_identity(dim: usize, seed: u64) -> LayerParams {
    let mut p = EncoderParams::init(1, 1, dim, 1, seed)
        .unwrap()
        .layers
        .remove(0);
    p.w = Tensor::identity(dim);
    p
}

fn chain(n: usize) -> KnowledgeGraph {
    let ts: Vec<Triple> = (0..n - 1).map(|i| Triple::new(i, 0, i + 1)).collect();
    KnowledgeGraph::from_ids(n, 1, &ts).unwrap()
}

#[test]
fn mean_aggregate_examples() {
    let g = KnowledgeGraph::from_ids(3, 1, &[Triple::new(0, 0, 1), Triple::new(0, 0, 2)]).unwrap();
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    let tape = Tape::new();
    let e = tape
        .constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let w0 = tape.constant(Tensor::identity(2));
    let d0 = tape.value(mean_aggregate(&tape, e, idx.edges(), w0).unwrap());
    assert_eq!(d0.row(0), &[2.0, 3.0]);
    assert_eq!(d0.row(1), &[0.0, 0.0]);
    assert_eq!(d0.row(2), &[0.0, 0.0]);
}

#[test]
fn mean_aggregate_matches_loop_oracle_and_ignores_order() {
    let g = generate_synthetic_kg(50, 4, 3.0, 9).unwrap();
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    let e = random(50, 6, 1);
    let w0 = random(6, 6, 2);
    let tape = Tape::new();
    let (ev, wv) = (tape.constant(e.clone()), tape.constant(w0.clone()));
    let d0 = tape.value(mean_aggregate(&tape, ev, idx.edges(), wv).unwrap());
    for i in 0..50 {
        let ns = idx.neighbors(i);
        let mut want = vec![0.0; 6];
        for n in ns {
            for (o, x) in want.iter_mut().zip(vecmat(e.row(n.entity), &w0)) {
                *o += x / ns.len() as f64;
            }
        }
        for (a, b) in d0.row(i).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    // Same graph with triples in reverse order permutes every neighbor list.
    let rev: Vec<Triple> = g.triples().iter().rev().copied().collect();
    let idx2 = NeighborIndex::from_triples(50, 4, &rev, AdjacencyMode::Decentralized, true);
    let d0b = tape.value(mean_aggregate(&tape, ev, idx2.edges(), wv).unwrap());
    assert!(d0.max_abs_diff(&d0b) < 1e-12);
}

#[test]
fn dan_layer_single_neighbor_passes_message() {
    let g = KnowledgeGraph::from_ids(2, 1, &[Triple::new(0, 0, 1)]).unwrap();
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    let layer = layer_with_identity(3, 4);
    let tape = Tape::new();
    let bound = EncoderParams {
        entity: random(2, 3, 0),
        relation: random(3, 3, 0),
        w0: Tensor::identity(3),
        layers: vec![layer],
    }
    .bind(&tape, false);
    let prev = tape.constant(random(2, 3, 5));
    let prev2 = tape.constant(random(2, 3, 6));
    let out = dan_layer(&tape, prev, prev2, &idx, &bound.layers[0], None).unwrap();
    assert_eq!(tape.value(out.attention).data(), &[1.0, 1.0]);
    let o = tape.value(out.output);
    let p2 = tape.value(prev2);
    assert_eq!(o.row(0), p2.row(1));
    assert_eq!(o.row(1), p2.row(0));
}

#[test]
fn dan_layer_identical_keys_attend_uniformly() {
    let g = KnowledgeGraph::from_ids(3, 1, &[Triple::new(0, 0, 1), Triple::new(0, 0, 2)]).unwrap();
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    let tape = Tape::new();
    let p = EncoderParams::init(3, 3, 4, 1, 2).unwrap();
    let bound = p.bind(&tape, false);
    let row = random(1, 4, 3).row(0).to_vec();
    let kv = tape.constant(Tensor::from_rows(&[vec![0.1; 4], row.clone(), row]).unwrap());
    let q = tape.constant(random(3, 4, 4));
    let out = dan_layer(&tape, q, kv, &idx, &bound.layers[0], None).unwrap();
    let att = tape.value(out.attention);
    // Edges of entity 0 come first.
    assert!((att.data()[0] - 0.5).abs() < 1e-15 && (att.data()[1] - 0.5).abs() < 1e-15);
}

#[test]
fn dan_layer_rejects_degenerate_index() {
    let g = KnowledgeGraph::from_ids(2, 1, &[Triple::new(0, 0, 1)]).unwrap();
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, false);
    let tape = Tape::new();
    let bound = EncoderParams::init(2, 3, 2, 1, 0)
        .unwrap()
        .bind(&tape, false);
    let x = tape.constant(random(2, 2, 1));
    assert!(matches!(
        dan_layer(&tape, x, x, &idx, &bound.layers[0], None),
        Err(Error::DegenerateNeighborhood(1))
    ));
}

#[test]
fn attention_layers_match_scalar_oracle() {
    let g = KnowledgeGraph::from_ids(
        5,
        2,
        &[
            Triple::new(0, 0, 1),
            Triple::new(1, 1, 2),
            Triple::new(2, 0, 3),
            Triple::new(3, 1, 4),
            Triple::new(4, 0, 0),
            Triple::new(0, 1, 2),
        ],
    )
    .unwrap();
    for mode in [AdjacencyMode::Decentralized, AdjacencyMode::Centralized] {
        let idx = NeighborIndex::build(&g, mode, true);
        let p = EncoderParams::init(5, idx.relation_slots(), 4, 1, 7).unwrap();
        let (q, kv) = (random(5, 4, 8), random(5, 4, 9));
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let (qv, kvv) = (tape.constant(q.clone()), tape.constant(kv.clone()));
        let out = match mode {
            AdjacencyMode::Decentralized => {
                dan_layer(&tape, qv, kvv, &idx, &b.layers[0], Some(b.relation)).unwrap()
            }
            AdjacencyMode::Centralized => {
                gat_layer(&tape, kvv, &idx, &b.layers[0], Some(b.relation)).unwrap()
            }
        };
        let query = if mode == AdjacencyMode::Decentralized {
            &q
        } else {
            &kv
        };
        let want = attention_oracle(query, &kv, &idx, &p.layers[0], Some(&p.relation));
        let got = tape.value(out.output);
        for (i, w) in want.iter().enumerate() {
            for (a, b) in got.row(i).iter().zip(w) {
                assert!((a - b).abs() < 1e-10, "{mode:?} entity {i}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn gat_isolated_entity_sees_only_itself() {
    let g = KnowledgeGraph::from_ids(3, 1, &[Triple::new(0, 0, 1)]).unwrap();
    let idx = NeighborIndex::build(&g, AdjacencyMode::Centralized, true);
    let tape = Tape::new();
    let p = EncoderParams::init(3, idx.relation_slots(), 3, 1, 1).unwrap();
    let b = p.bind(&tape, false);
    let e = random(3, 3, 2);
    let out = gat_layer(&tape, tape.constant(e.clone()), &idx, &b.layers[0], None).unwrap();
    let want = vecmat(e.row(2), &p.layers[0].w);
    for (a, w) in tape.value(out.output).row(2).iter().zip(&want) {
        assert!((a - w).abs() < 1e-15);
    }
    let plain = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    assert!(gat_layer(&tape, tape.constant(e), &plain, &b.layers[0], None).is_err());
}

#[test]
fn relation_combine_examples() {
    let tape = Tape::new();
    let m = tape.constant(random(3, 2, 1));
    let zero_r = tape.constant(Tensor::zeros(&[2, 2]));
    let wr = tape.constant(Tensor::identity(2));
    let same = relation_combine(&tape, m, &[0, 1, 1], zero_r, wr).unwrap();
    assert_eq!(tape.value(same), tape.value(m));
    let r = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap());
    let out = tape.value(relation_combine(&tape, m, &[1, 0, 1], r, wr).unwrap());
    let mv = tape.value(m);
    assert_eq!(out.row(0), &[mv.at(0, 0) - 1.0, mv.at(0, 1) + 0.5]);
    assert_eq!(out.row(1), &[mv.at(1, 0) + 1.0, mv.at(1, 1) + 2.0]);
    assert!(relation_combine(&tape, m, &[0, 2, 0], r, wr).is_err());
}

#[test]
fn residual_combine_is_linear() {
    let tape = Tape::new();
    let (x, y, z) = (
        tape.constant(random(2, 3, 1)),
        tape.constant(random(2, 3, 2)),
        tape.constant(random(2, 3, 3)),
    );
    let zero = tape.constant(Tensor::zeros(&[2, 3]));
    assert_eq!(
        tape.value(residual_combine(&tape, x, zero, zero).unwrap()),
        tape.value(x)
    );
    let triple = tape.value(residual_combine(&tape, x, x, x).unwrap());
    let xv = tape.value(x);
    assert!(triple
        .data()
        .iter()
        .zip(xv.data())
        .all(|(t, v)| (t - 3.0 * v).abs() < 1e-15));
    let scaled = residual_combine(
        &tape,
        tape.scale(x, 2.5),
        tape.scale(y, 2.5),
        tape.scale(z, 2.5),
    )
    .unwrap();
    let base = residual_combine(&tape, x, y, z).unwrap();
    let diff = tape
        .value(scaled)
        .max_abs_diff(&tape.value(tape.scale(base, 2.5)));
    assert!(diff < 1e-14);
}

#[test]
fn one_layer_chain_matches_hand_composition() {
    // 0 -> 1 -> 2 with inverse edges: entity 1 has two neighbors.
    let g = chain(3);
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    let p = EncoderParams::init(3, idx.relation_slots(), 3, 1, 11).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let out = forward(&tape, &b, &idx, &ForwardOptions::eval(EncoderMode::Dan)).unwrap();
    let g1 = tape.value(out.layer(1));

    let mut d0 = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        let ns = idx.neighbors(i);
        for n in ns {
            for (c, x) in vecmat(p.entity.row(n.entity), &p.w0)
                .into_iter()
                .enumerate()
            {
                d0.data_mut()[i * 3 + c] += x / ns.len() as f64;
            }
        }
    }
    let raw = attention_oracle(&d0, &p.entity, &idx, &p.layers[0], Some(&p.relation));
    for i in 0..3 {
        let mean = raw[i].iter().sum::<f64>() / 3.0;
        let var = raw[i].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        for c in 0..3 {
            let ln = (raw[i][c] - mean) / (var + crate::tensor::LAYER_NORM_EPS).sqrt();
            let want = 2.0 * d0.at(i, c) + ln;
            assert!((g1.at(i, c) - want).abs() < 1e-10);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let g = generate_synthetic_kg(30, 3, 3.0, 1).unwrap();
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    let p = EncoderParams::init(30, idx.relation_slots(), 8, 2, 5).unwrap();
    let run = |opts: ForwardOptions| {
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let out = forward(&tape, &b, &idx, &opts).unwrap();
        tape.value(final_output(&tape, &out, Task::Alignment).unwrap())
    };
    let train = ForwardOptions {
        mode: EncoderMode::Dan,
        dropout: 0.2,
        training: true,
        seed: 3,
    };
    assert_eq!(run(train), run(train));
    assert_ne!(run(train), run(ForwardOptions { seed: 4, ..train }));
    let eval = ForwardOptions::eval(EncoderMode::Dan);
    assert_eq!(run(eval), run(eval));
}

#[test]
fn final_output_widths() {
    let g = generate_synthetic_kg(12, 2, 3.0, 2).unwrap();
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    for (k, width) in [(1, 8), (3, 24)] {
        let p = EncoderParams::init(12, idx.relation_slots(), 8, k, 1).unwrap();
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let out = forward(&tape, &b, &idx, &ForwardOptions::eval(EncoderMode::Dan)).unwrap();
        let align = tape.value(final_output(&tape, &out, Task::Alignment).unwrap());
        let pred = tape.value(final_output(&tape, &out, Task::Prediction).unwrap());
        assert_eq!(align.shape(), &[12, width]);
        assert_eq!(pred, tape.value(out.layer(k)));
        for j in 1..=k {
            let slice = tape.value(
                tape.slice_cols(tape.constant(align.clone()), (j - 1) * 8, j * 8)
                    .unwrap(),
            );
            assert_eq!(slice, tape.value(out.layer(j)));
        }
        if k == 1 {
            assert_eq!(align, pred);
        }
    }
}

#[test]
fn dan_layer_reads_only_two_previous_layers() {
    let g = generate_synthetic_kg(10, 2, 4.0, 3).unwrap();
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    if !idx.degenerate_entities().is_empty() {
        return;
    }
    let p = EncoderParams::init(10, idx.relation_slots(), 4, 1, 1).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape, true);
    let (d1, d2, d3) = (
        tape.param(random(10, 4, 1)),
        tape.param(random(10, 4, 2)),
        tape.param(random(10, 4, 3)),
    );
    let out = dan_layer(&tape, d3, d2, &idx, &b.layers[0], Some(b.relation)).unwrap();
    assert!(tape.depends_on(out.output, d3));
    assert!(tape.depends_on(out.output, d2));
    assert!(!tape.depends_on(out.output, d1));
    assert!(!tape.depends_on(out.output, b.entity));
}

#[test]
fn forward_checks_index_mode() {
    let g = chain(4);
    let idx = NeighborIndex::build(&g, AdjacencyMode::Decentralized, true);
    let p = EncoderParams::init(4, idx.relation_slots(), 2, 1, 0).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    assert!(forward(&tape, &b, &idx, &ForwardOptions::eval(EncoderMode::Gat)).is_err());
    assert!(forward(&tape, &b, &idx, &ForwardOptions::eval(EncoderMode::Dan)).is_ok());
}

#[test]
fn mode_names_parse() {
    for m in [EncoderMode::Dan, EncoderMode::Gat, EncoderMode::CentRl] {
        assert_eq!(m.as_str().parse::<EncoderMode>().unwrap(), m);
    }
    assert!("gcn".parse::<EncoderMode>().is_err());
}

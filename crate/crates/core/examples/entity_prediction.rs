//! Link prediction on a graph with planted structure: entities fall into
//! clusters and relation r sends cluster c to cluster c + r + 1. Only the
//! cluster of a missing entity is predictable.
//!
//! cargo run --release --example entity_prediction -- --decoder distmult --mask

use std::collections::HashSet;
use std::time::Instant;

use clap::Parser;
use decentrl::distiller::DistillMode;
use decentrl::encoder::EncoderMode;
use decentrl::kg::{KnowledgeGraph, Triple};
use decentrl::tasks::{train_prediction, DecoderKind, PredictConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 300)]
    entities: usize,
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 4)]
    relations: usize,
    #[arg(long, default_value_t = 2000)]
    triples: usize,
    #[arg(long, default_value = "distmult")]
    decoder: DecoderKind,
    #[arg(long, default_value = "dan")]
    mode: EncoderMode,
    #[arg(long, default_value = "auto")]
    distill: DistillMode,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Hide each batch's own edges from the encoder while training.
    #[arg(long)]
    mask: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> decentrl::Result<()> {
    let a = Args::parse();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let per = a.entities / a.clusters;
    let n = per * a.clusters;
    let mut set = HashSet::new();
    while set.len() < a.triples {
        let s = rng.gen_range(0..n);
        let r = rng.gen_range(0..a.relations);
        let o = (s / per + r + 1) % a.clusters * per + rng.gen_range(0..per);
        set.insert(Triple::new(s, r, o));
    }
    let mut all: Vec<Triple> = set.into_iter().collect();
    all.sort();
    all.shuffle(&mut rng);
    let (test, train) = all.split_at(all.len() / 10);

    let g = KnowledgeGraph::from_ids(n, a.relations, train)?;
    let cfg = PredictConfig {
        decoder: a.decoder,
        mode: a.mode,
        distill: a.distill,
        epochs: a.epochs,
        dim: a.dim,
        lr: a.lr,
        mask_batch_edges: a.mask,
        seed: a.seed,
        ..PredictConfig::default()
    };
    let start = Instant::now();
    let (model, _) = train_prediction(&g, &[], &cfg)?;
    let index = model.index(n, g.triples());
    let known: HashSet<Triple> = all.iter().copied().collect();
    for (label, t) in [("train", &train[..test.len()]), ("test", test)] {
        for filtered in [false, true] {
            let r = model.evaluate(&index, t, &known, filtered)?.combined;
            println!(
                "{label:>5} {:>8}: H@1 {:.3}  H@10 {:.3}  MRR {:.3}  MR {:.1}",
                if filtered { "filtered" } else { "raw" },
                r.hits1,
                r.hits10,
                r.mrr,
                r.mr
            );
        }
    }
    println!(
        "random guess MR {:.1}, cluster size {per}, {:.1}s",
        (n + 1) as f64 / 2.0,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

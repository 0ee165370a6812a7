//! Hide 20% of the test entities of both graphs during training, then
//! align them from neighbors revealed only at evaluation.
//!
//! cargo run --release --example open_world_split -- --fraction 0.2

use clap::Parser;
use decentrl::encoder::EncoderMode;
use decentrl::kg::{generate_synthetic_kg, make_aligned_copy, split_open_world, KnowledgeGraph};
use decentrl::seed;
use decentrl::tasks::{train_alignment, AlignConfig, AlignModel};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 0.2)]
    fraction: f64,
    #[arg(long, default_value = "dan")]
    mode: EncoderMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> decentrl::Result<()> {
    let a = Args::parse();
    let s = a.seed;
    let g = generate_synthetic_kg(200, 20, 4.0, seed::derive(s, "graph"))?;
    let (copy, pairs) = make_aligned_copy(&g, seed::derive(s, "copy"), 0.1)?;
    let pairs = pairs.resplit(0.3, 0.1, seed::derive(s, "pairs"))?;
    let test = pairs.test();
    let left: Vec<usize> = test.iter().map(|p| p.0).collect();
    let right: Vec<usize> = test.iter().map(|p| p.1).collect();

    let s1 = split_open_world(&g, &left, a.fraction, seed::derive_indexed(s, "split", 1))?;
    let s2 = split_open_world(
        &copy,
        &right,
        a.fraction,
        seed::derive_indexed(s, "split", 2),
    )?;
    for (name, sp) in [("kg1", &s1), ("kg2", &s2)] {
        println!(
            "{name}: {} open entities, {} of {} triples moved ({:.3})",
            sp.open.len(),
            sp.test.len(),
            sp.train.len() + sp.test.len(),
            sp.moved_fraction()
        );
    }
    let t1 = KnowledgeGraph::from_ids(g.num_entities(), g.num_relations(), &s1.train)?;
    let t2 = KnowledgeGraph::from_ids(copy.num_entities(), copy.num_relations(), &s2.train)?;

    let cfg = AlignConfig {
        mode: a.mode,
        dim: 256,
        lr: 0.01,
        epochs: 300,
        eval_every: 1,
        seed: s,
        ..AlignConfig::default()
    };
    let (model, _) = train_alignment(&t1, &t2, &pairs, &cfg)?;
    let closed = AlignModel::joint_index(&t1, &t2, cfg.mode, cfg.add_inverse);
    let open = AlignModel::joint_open_index(
        &t1,
        &t2,
        &s1.test,
        &s2.test,
        &s1.open,
        &s2.open,
        cfg.mode,
        cfg.add_inverse,
    );
    // Only pairs whose left entity went unseen.
    let unseen: Vec<(usize, usize)> = test
        .iter()
        .copied()
        .filter(|p| s1.open.binary_search(&p.0).is_ok())
        .collect();
    for (label, index) in [
        ("training edges only", &closed),
        ("with revealed edges", &open),
    ] {
        let all = model.evaluate(index, &test)?;
        let hidden = model.evaluate(index, &unseen)?;
        println!(
            "{label}: H@1 all {:.3}  unseen {:.3} ({} pairs)",
            all.combined.hits1,
            hidden.combined.hits1,
            unseen.len()
        );
    }
    Ok(())
}

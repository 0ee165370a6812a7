//! A center entity with only outgoing edges. Redraw the center's own
//! embedding and see whose output notices.
//!
//! cargo run --release --example inductive_star -- --leaves 5

use clap::Parser;
use decentrl::encoder::{encode, EncoderMode, EncoderParams, Task};
use decentrl::kg::{KnowledgeGraph, NeighborIndex, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 5)]
    leaves: usize,
    #[arg(long, default_value_t = 3)]
    relations: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> decentrl::Result<()> {
    let a = Args::parse();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let triples: Vec<Triple> = (1..=a.leaves)
        .map(|l| Triple::new(0, rng.gen_range(0..a.relations), l))
        .collect();
    let g = KnowledgeGraph::from_ids(a.leaves + 1, a.relations, &triples)?;
    for mode in [EncoderMode::Dan, EncoderMode::Gat, EncoderMode::CentRl] {
        // Outgoing edges only, so nothing points back at the center.
        let index = NeighborIndex::build(&g, mode.adjacency(), false);
        let mut params = EncoderParams::init(
            g.num_entities(),
            index.relation_slots(),
            a.dim,
            a.layers,
            a.seed,
        )?;
        let (_, before) = encode(&params, &index, mode, Task::Alignment)?;
        for v in params.entity.data_mut()[..a.dim].iter_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        let (_, after) = encode(&params, &index, mode, Task::Alignment)?;
        let change: f64 = before
            .row(0)
            .iter()
            .zip(after.row(0))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        println!("{mode:>6}: center output moved by {change:.3e}");
    }
    Ok(())
}

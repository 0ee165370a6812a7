//! Train once, then rank test pairs with each layer's representation and
//! with their concatenation.
//!
//! cargo run --release --example per_layer_eval -- --layers 4

use clap::Parser;
use decentrl::encoder::EncoderMode;
use decentrl::kg::{generate_synthetic_kg, make_aligned_copy};
use decentrl::seed;
use decentrl::tasks::{train_alignment, AlignConfig, AlignModel};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 4)]
    layers: usize,
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
    let cfg = AlignConfig {
        mode: a.mode,
        layers: a.layers,
        dim: 256,
        lr: 0.01,
        epochs: 300,
        eval_every: 1,
        seed: s,
        ..AlignConfig::default()
    };
    let (model, _) = train_alignment(&g, &copy, &pairs, &cfg)?;
    let index = AlignModel::joint_index(&g, &copy, cfg.mode, cfg.add_inverse);
    println!("{:>8}  {:>6}  {:>6}", "layer", "H@1", "MRR");
    for (label, r) in model.per_layer(&index, &pairs.test())? {
        println!(
            "{label:>8}  {:>6.3}  {:>6.3}",
            r.combined.hits1, r.combined.mrr
        );
    }
    Ok(())
}

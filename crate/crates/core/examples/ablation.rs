//! Encoder and distiller variants on the synthetic alignment task, averaged
//! over seeds.
//!
//! cargo run --release --example ablation -- --seeds 5

use clap::Parser;
use decentrl::distiller::DistillMode;
use decentrl::encoder::EncoderMode;
use decentrl::kg::{generate_synthetic_kg, make_aligned_copy};
use decentrl::seed;
use decentrl::tasks::{train_alignment, AlignConfig, AlignModel};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 256)]
    dim: usize,
}

const VARIANTS: &[(EncoderMode, DistillMode)] = &[
    (EncoderMode::Dan, DistillMode::Auto),
    (EncoderMode::Dan, DistillMode::InfoNce),
    (EncoderMode::Dan, DistillMode::L2),
    (EncoderMode::Dan, DistillMode::None),
    (EncoderMode::Gat, DistillMode::Auto),
    (EncoderMode::CentRl, DistillMode::None),
];

fn main() -> decentrl::Result<()> {
    let a = Args::parse();
    println!("{:>16}  {:>6}  {:>6}", "variant", "H@1", "se");
    for &(mode, distill) in VARIANTS {
        let mut h1 = Vec::new();
        for s in 0..a.seeds {
            let g = generate_synthetic_kg(200, 20, 4.0, seed::derive(s, "graph"))?;
            let (copy, pairs) = make_aligned_copy(&g, seed::derive(s, "copy"), 0.1)?;
            let pairs = pairs.resplit(0.3, 0.1, seed::derive(s, "pairs"))?;
            let cfg = AlignConfig {
                mode,
                distill,
                dim: a.dim,
                lr: 0.01,
                epochs: 300,
                eval_every: 1,
                seed: s,
                ..AlignConfig::default()
            };
            let (model, _) = train_alignment(&g, &copy, &pairs, &cfg)?;
            let index = AlignModel::joint_index(&g, &copy, mode, cfg.add_inverse);
            h1.push(model.evaluate(&index, &pairs.test())?.combined.hits1);
        }
        let n = h1.len() as f64;
        let mean = h1.iter().sum::<f64>() / n;
        let se = if h1.len() > 1 {
            (h1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        println!(
            "{:>16}  {mean:>6.3}  {se:>6.3}",
            format!("{mode}+{distill}")
        );
    }
    Ok(())
}

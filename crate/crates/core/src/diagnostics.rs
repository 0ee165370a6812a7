//! Finite-difference checks of every differentiable op and of complete
//! training objectives on toy graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distiller::{distill_loss, BoundDensity, DensityParams, DistillMode, NegativeBatch};
use crate::encoder::{
    dan_layer, final_output, forward, gat_layer, mean_aggregate, BoundEncoder, BoundLayer,
    EncoderMode, EncoderParams, ForwardOptions, Task,
};
use crate::error::Result;
use crate::kg::{generate_synthetic_kg, make_aligned_copy, KnowledgeGraph, NeighborIndex, Triple};
use crate::seed;
use crate::tasks::{alignment_loss, decoder_scores, prediction_loss, AlignModel, DecoderKind};
use crate::tensor::gradcheck::{check, GradCheck};
use crate::tensor::{SegmentIndex, Tape, Tensor, Var};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(0.5..2.0)).collect(),
    )
    .unwrap()
}

/// Contracts `v` with a fixed random tensor of the same shape so every
/// output coordinate carries a distinct upstream gradient.
fn probe(tape: &Tape, v: Var, salt: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(salt);
    let w = tape.constant(random(&tape.shape(v), &mut rng));
    Ok(tape.sum(tape.mul(v, w)?))
}

/// One check per tensor op, on small random inputs.
pub fn op_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = seed::rng(seed, "gradcheck.ops");
    let r = &mut rng;
    let seg = SegmentIndex::new(vec![0, 0, 1, 2, 2, 2], 3)?;
    let (a34, b42, c34) = (random(&[3, 4], r), random(&[4, 2], r), random(&[3, 4], r));
    let v6 = random(&[6, 3], r);
    let s6 = random(&[6], r);
    let mut out = Vec::new();
    let p = |t: &Tape, v: Var| probe(t, v, seed ^ 0x5eed);

    out.push(check(
        "matmul",
        |t, x| p(t, t.matmul(x[0], x[1])?),
        &[a34.clone(), b42],
    )?);
    out.push(check(
        "transpose",
        |t, x| p(t, t.transpose(x[0])?),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "add",
        |t, x| p(t, t.add(x[0], x[1])?),
        &[a34.clone(), c34.clone()],
    )?);
    out.push(check(
        "sub",
        |t, x| p(t, t.sub(x[0], x[1])?),
        &[a34.clone(), c34.clone()],
    )?);
    out.push(check(
        "mul",
        |t, x| p(t, t.mul(x[0], x[1])?),
        &[a34.clone(), c34.clone()],
    )?);
    out.push(check(
        "scale",
        |t, x| p(t, t.add_const(t.scale(x[0], -1.7), 0.3)),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "add_scalar",
        |t, x| p(t, t.add_scalar(x[0], x[1])?),
        &[a34.clone(), random(&[1], r)],
    )?);
    out.push(check(
        "mul_rows",
        |t, x| p(t, t.mul_rows(x[0], x[1])?),
        &[v6.clone(), s6.clone()],
    )?);
    out.push(check(
        "gather_rows",
        |t, x| p(t, t.gather_rows(x[0], &[2, 0, 2, 1])?),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "segment_sum",
        |t, x| p(t, t.segment_sum(x[0], &seg)?),
        std::slice::from_ref(&v6),
    )?);
    out.push(check(
        "segment_softmax",
        |t, x| p(t, t.segment_softmax(x[0], &seg)?),
        std::slice::from_ref(&s6),
    )?);
    out.push(check(
        "leaky_relu",
        |t, x| p(t, t.leaky_relu(x[0], 0.2)?),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "relu",
        |t, x| p(t, t.relu(x[0])),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "layer_norm",
        |t, x| p(t, t.layer_norm(x[0], x[1], x[2])?),
        &[a34.clone(), random(&[4], r), random(&[4], r)],
    )?);
    out.push(check(
        "dropout",
        |t, x| p(t, t.dropout(x[0], 0.5, 11, true)?),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "concat",
        |t, x| p(t, t.concat(&[x[0], x[1]])?),
        &[a34.clone(), c34.clone()],
    )?);
    out.push(check(
        "slice_cols",
        |t, x| p(t, t.slice_cols(x[0], 1, 3)?),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "exp",
        |t, x| p(t, t.exp(x[0])),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "log",
        |t, x| p(t, t.log(x[0])),
        &[positive(&[3, 4], r)],
    )?);
    out.push(check(
        "sum",
        |t, x| Ok(t.scale(t.sum(x[0]), 0.7)),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "mean",
        |t, x| Ok(t.mean(t.mul(x[0], x[0])?)),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "sum_last",
        |t, x| p(t, t.sum_last(x[0])),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "row_norms",
        |t, x| p(t, t.row_norms(x[0])),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "row_distances",
        |t, x| p(t, t.row_distances(x[0], x[1])?),
        &[a34.clone(), c34.clone()],
    )?);
    out.push(check(
        "normalize_rows",
        |t, x| p(t, t.normalize_rows(x[0])),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "reshape",
        |t, x| p(t, t.reshape(x[0], &[2, 6])?),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "log_softmax",
        |t, x| p(t, t.log_softmax(x[0])?),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "pick",
        |t, x| p(t, t.pick(x[0], &[3, 0, 2])?),
        std::slice::from_ref(&a34),
    )?);
    out.push(check(
        "detach",
        // Finite differences see through a stop-gradient, so the detached
        // operand is not a perturbed input.
        |t, x| p(t, t.mul(x[0], t.detach(t.param(c34.clone())))?),
        std::slice::from_ref(&a34),
    )?);
    Ok(out)
}

/// A small aligned pair of graphs and its joint index.
struct Toy {
    index: NeighborIndex,
    n_left: usize,
    pairs: Vec<(usize, usize)>,
}

fn toy(seed: u64, mode: EncoderMode) -> Result<Toy> {
    let g = generate_synthetic_kg(10, 3, 3.0, seed::derive(seed, "gradcheck.graph"))?;
    let (copy, pairs) = make_aligned_copy(&g, seed::derive(seed, "gradcheck.copy"), 0.1)?;
    let n_left = g.num_entities();
    let pairs = pairs
        .test()
        .into_iter()
        .take(4)
        .map(|(i, j)| (i, j + n_left))
        .collect();
    Ok(Toy {
        index: AlignModel::joint_index(&g, &copy, mode, true),
        n_left,
        pairs,
    })
}

fn encoder_inputs(toy: &Toy, dim: usize, layers: usize, seed: u64) -> Result<EncoderParams> {
    let mut p = EncoderParams::init(
        toy.index.num_entities(),
        toy.index.relation_slots(),
        dim,
        layers,
        seed::derive(seed, "gradcheck.init"),
    )?;
    // Move layer norm away from its identity initialization.
    let mut rng = seed::rng(seed, "gradcheck.ln");
    for l in &mut p.layers {
        l.ln_gain = positive(&[dim], &mut rng);
        l.ln_bias = random(&[dim], &mut rng);
    }
    Ok(p)
}

/// Full alignment objective: encoder forward, normalized concatenated
/// output, margin loss and a distillation term.
fn alignment_objective(seed: u64, mode: EncoderMode, distill: DistillMode) -> Result<GradCheck> {
    let toy = toy(seed, mode)?;
    let (dim, layers) = (4, 4);
    let enc = encoder_inputs(&toy, dim, layers, seed)?;
    let dens = DensityParams::init(dim * layers, dim, &mut seed::rng(seed, "gradcheck.density"));
    let teacher = enc.entity.clone();
    let mut inputs: Vec<Tensor> = enc.tensors().into_iter().cloned().collect();
    inputs.extend(dens.tensors().into_iter().cloned());
    let n = toy.index.num_entities();
    let mut rng = seed::rng(seed, "gradcheck.batch");
    let neg: Vec<(usize, usize)> = (0..6)
        .map(|_| (rng.gen_range(0..toy.n_left), rng.gen_range(toy.n_left..n)))
        .collect();
    let anchors: Vec<usize> = (0..5).map(|k| (3 * k) % n).collect();
    let batch = NegativeBatch::sample(&anchors, n, 6, &mut rng)?;
    let nenc = 3 + 7 * layers;
    let name = format!("{mode}+{distill} alignment objective");
    check(
        &name,
        |t: &Tape, x: &[Var]| {
            let bound = BoundEncoder::from_vars(&x[..nenc], layers)?;
            let dens = BoundDensity {
                wf: x[nenc],
                bf: x[nenc + 1],
            };
            let outs = forward(t, &bound, &toy.index, &ForwardOptions::eval(mode))?;
            let g = t.normalize_rows(final_output(t, &outs, Task::Alignment)?);
            let mut loss = alignment_loss(t, g, &toy.pairs, &neg, 1.5, 0.1)?;
            // The stop-gradient turns the teacher table into a constant.
            let table = match distill {
                DistillMode::Auto | DistillMode::L2 => t.constant(teacher.clone()),
                _ => bound.entity,
            };
            if let Some(term) = distill_loss(t, distill, g, table, &batch, &dens)? {
                loss = t.add(loss, term.loss)?;
            }
            Ok(loss)
        },
        &inputs,
    )
}

/// Prediction objective: last-layer output, decoder scores over sampled
/// candidates and the softmax loss.
fn prediction_objective(seed: u64, kind: DecoderKind) -> Result<GradCheck> {
    let toy = toy(seed, EncoderMode::Dan)?;
    let (dim, layers) = (4, 2);
    let enc = encoder_inputs(&toy, dim, layers, seed)?;
    let mut rng = seed::rng(seed, "gradcheck.decoder");
    let mut inputs: Vec<Tensor> = enc.tensors().into_iter().cloned().collect();
    let rel = random(&[toy.index.relation_slots(), dim], &mut rng);
    inputs.push(Tensor::new(
        rel.shape().to_vec(),
        rel.data().iter().map(|v| 0.1 * v).collect(),
    )?);
    let n = toy.index.num_entities();
    let heads = vec![0, 3, 7];
    let rels = vec![0, 2, 4];
    let cands: Vec<Vec<usize>> = (0..3)
        .map(|_| (0..5).map(|_| rng.gen_range(0..n)).collect())
        .collect();
    let nenc = 3 + 7 * layers;
    check(
        &format!("dan+{} prediction objective", kind.as_str()),
        |t: &Tape, x: &[Var]| {
            let bound = BoundEncoder::from_vars(&x[..nenc], layers)?;
            let outs = forward(
                t,
                &bound,
                &toy.index,
                &ForwardOptions::eval(EncoderMode::Dan),
            )?;
            let g = final_output(t, &outs, Task::Prediction)?;
            let scores = decoder_scores(t, kind, g, x[nenc], &heads, &rels, &cands)?;
            prediction_loss(t, scores, &[0, 1, 2])
        },
        &inputs,
    )
}

/// Ring with chords over six entities, so every entity has neighbors.
fn ring_index(mode: EncoderMode) -> Result<NeighborIndex> {
    let mut triples: Vec<Triple> = (0..6).map(|i| Triple::new(i, i % 2, (i + 1) % 6)).collect();
    triples.extend([Triple::new(0, 1, 3), Triple::new(4, 0, 1)]);
    let g = KnowledgeGraph::from_ids(6, 2, &triples)?;
    Ok(NeighborIndex::build(&g, mode.adjacency(), true))
}

/// Checks of the encoder pieces and of whole objectives.
pub fn model_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    let d = 4;
    for (name, mode) in [
        ("dan_layer", EncoderMode::Dan),
        ("gat_layer", EncoderMode::Gat),
    ] {
        let index = ring_index(mode)?;
        let enc = EncoderParams::init(6, index.relation_slots(), d, 1, seed::derive(seed, name))?;
        let l = &enc.layers[0];
        let mut inputs = vec![enc.entity.clone(), enc.w0.clone(), enc.relation.clone()];
        inputs.extend([&l.w, &l.w1, &l.w2, &l.a, &l.wr, &l.ln_gain, &l.ln_bias].map(Tensor::clone));
        if mode == EncoderMode::Dan {
            out.push(check(
                "mean_aggregate",
                |t, x| probe(t, mean_aggregate(t, x[0], index.edges(), x[1])?, seed),
                &inputs[..2],
            )?);
        }
        out.push(check(
            name,
            |t, x| {
                let layer = BoundLayer {
                    w: x[3],
                    w1: x[4],
                    w2: x[5],
                    a: x[6],
                    wr: x[7],
                    ln_gain: x[8],
                    ln_bias: x[9],
                };
                let g0 = mean_aggregate(t, x[0], index.edges(), x[1])?;
                let o = match mode {
                    EncoderMode::Gat => gat_layer(t, g0, &index, &layer, Some(x[2]))?,
                    _ => dan_layer(t, g0, x[0], &index, &layer, Some(x[2]))?,
                };
                probe(t, o.output, seed)
            },
            &inputs,
        )?);
    }
    for distill in [DistillMode::Auto, DistillMode::InfoNce, DistillMode::L2] {
        out.push(alignment_objective(seed, EncoderMode::Dan, distill)?);
    }
    out.push(alignment_objective(
        seed,
        EncoderMode::Gat,
        DistillMode::Auto,
    )?);
    out.push(alignment_objective(
        seed,
        EncoderMode::CentRl,
        DistillMode::None,
    )?);
    for kind in [
        DecoderKind::TransE,
        DecoderKind::DistMult,
        DecoderKind::ComplEx,
    ] {
        out.push(prediction_objective(seed, kind)?);
    }
    Ok(out)
}

/// `name,max_rel_error,max_abs_error,tolerance,status` rows.
pub fn table(checks: &[GradCheck]) -> String {
    let mut s = String::from("check,max_rel_error,max_abs_error,tolerance,status\n");
    for c in checks {
        s.push_str(&format!(
            "{},{:.3e},{:.3e},{:e},{}\n",
            c.name,
            c.max_rel_error,
            c.max_abs_error,
            c.tolerance,
            if c.passed() { "pass" } else { "FAIL" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{analytic_gradient, compare, numeric_gradient, DEFAULT_STEP};

    #[test]
    fn every_op_passes() {
        for c in op_checks(1).unwrap() {
            assert!(c.passed(), "{}: {:e}", c.name, c.max_rel_error);
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let f = |t: &Tape, x: &[Var]| Ok(t.sum(t.mul(t.exp(x[0]), x[0])?));
        let input = [Tensor::vector(vec![0.3, -0.4, 1.1])];
        let (_, mut analytic) = analytic_gradient(&f, &input).unwrap();
        analytic[0].data_mut()[1] *= 1.01;
        let numeric = numeric_gradient(&f, &input, DEFAULT_STEP).unwrap();
        assert!(!compare("corrupted", &analytic, &numeric, 1e-4).passed());
    }
}

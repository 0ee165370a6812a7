use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_finite, Accumulator, Adam, EarlyStop, History, StepRecord};
use crate::distiller::{distill_loss, DensityParams, DistillMode, NegativeBatch};
use crate::encoder::{final_output, forward, EncoderMode, EncoderParams, ForwardOptions, Task};
use crate::error::{Error, Result};
use crate::eval::{per_layer_eval, rank_alignment, AlignmentReport};
use crate::kg::{merge_graphs, AlignmentPairs, KnowledgeGraph, NeighborIndex, Triple};
use crate::seed;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AlignConfig {
    /// Hinge margin `λ`.
    pub margin: f64,
    /// Weight `α` of the negative-pair term.
    pub alpha: f64,
    /// Corrupted pairs per positive pair.
    pub negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub distill: DistillMode,
    pub distill_weight: f64,
    /// Candidate set size `|X|` of the distillation term.
    pub distill_samples: usize,
    /// Anchors drawn per step for the distillation term.
    pub distill_anchors: usize,
    pub mode: EncoderMode,
    pub layers: usize,
    pub dim: usize,
    pub dropout: f64,
    pub add_inverse: bool,
    /// Unit-normalize output rows before distances are taken.
    pub normalize: bool,
    /// Validation rounds without improvement before stopping; 0 disables.
    pub patience: usize,
    /// Epochs between validation rounds.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            margin: 1.5,
            alpha: 0.1,
            negatives: 10,
            batch_size: 512,
            epochs: 100,
            lr: 1e-3,
            distill: DistillMode::Auto,
            distill_weight: 1.0,
            distill_samples: 64,
            distill_anchors: 64,
            mode: EncoderMode::Dan,
            layers: 4,
            dim: 256,
            dropout: 0.2,
            add_inverse: true,
            normalize: true,
            patience: 5,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(Error::Config(format!(
                "margin must be > 0, got {}",
                self.margin
            )));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 || self.layers == 0 || self.dim == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, layers, dim and eval_every must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.lr.is_nan()
            || self.lr < 0.0
            || self.distill_weight.is_nan()
            || self.distill_weight < 0.0
        {
            return Err(Error::Config("lr and distill_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Which end of a positive pair was replaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NegativePair {
    pub left: usize,
    pub right: usize,
    pub corrupted: Side,
}

/// For each positive `(i, j)`, `k` pairs with `i` replaced by a uniform
/// entity of the left graph or `j` by one of the right graph, each side
/// with probability 1/2. Pairs that coincide with a positive are redrawn;
/// a slot is dropped when no valid replacement turns up.
pub fn sample_negative_pairs(
    pos: &[(usize, usize)],
    k: usize,
    n_left: usize,
    n_right: usize,
    rng: &mut impl Rng,
) -> Result<Vec<NegativePair>> {
    if k > 0 && !pos.is_empty() && (n_left == 0 || n_right == 0) {
        return Err(Error::Parameter(
            "negative sampling needs nonempty entity pools".into(),
        ));
    }
    let known: HashSet<(usize, usize)> = pos.iter().copied().collect();
    let mut out = Vec::with_capacity(pos.len() * k);
    for &(i, j) in pos {
        for _ in 0..k {
            for _ in 0..100 {
                let (pair, corrupted) = if rng.gen_bool(0.5) {
                    ((rng.gen_range(0..n_left), j), Side::Left)
                } else {
                    ((i, rng.gen_range(0..n_right)), Side::Right)
                };
                if !known.contains(&pair) {
                    out.push(NegativePair {
                        left: pair.0,
                        right: pair.1,
                        corrupted,
                    });
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// `Σ_pos ||g_i - g_j|| + α Σ_neg [λ - ||g_i' - g_j'||]_+` over rows of `g`.
pub fn alignment_loss(
    tape: &Tape,
    g: Var,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    margin: f64,
    alpha: f64,
) -> Result<Var> {
    let dist = |pairs: &[(usize, usize)]| -> Result<Var> {
        let l: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let r: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        tape.row_distances(tape.gather_rows(g, &l)?, tape.gather_rows(g, &r)?)
    };
    let positive = tape.sum(dist(pos)?);
    if neg.is_empty() {
        return Ok(positive);
    }
    let hinge = tape.relu(tape.add_const(tape.scale(dist(neg)?, -1.0), margin));
    tape.add(positive, tape.scale(tape.sum(hinge), alpha))
}

/// A trained alignment encoder over the joint entity space of two graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignModel {
    pub encoder: EncoderParams,
    pub density: DensityParams,
    pub mode: EncoderMode,
    pub normalize: bool,
    pub add_inverse: bool,
    /// Entities of the first graph; they occupy joint ids `0..n_left`.
    pub n_left: usize,
}

impl AlignModel {
    /// Neighbor index over the disjoint union of the two graphs.
    pub fn joint_index(
        g1: &KnowledgeGraph,
        g2: &KnowledgeGraph,
        mode: EncoderMode,
        add_inverse: bool,
    ) -> NeighborIndex {
        NeighborIndex::build(&merge_graphs(g1, g2), mode.adjacency(), add_inverse)
    }

    /// Evaluation index after an open-world split of both graphs: `g1` and
    /// `g2` hold the training triples, `test1`/`test2` the moved ones (per
    /// graph ids). Open entities also aggregate over their test edges.
    #[allow(clippy::too_many_arguments)]
    pub fn joint_open_index(
        g1: &KnowledgeGraph,
        g2: &KnowledgeGraph,
        test1: &[Triple],
        test2: &[Triple],
        open1: &[usize],
        open2: &[usize],
        mode: EncoderMode,
        add_inverse: bool,
    ) -> NeighborIndex {
        let merged = merge_graphs(g1, g2);
        let (eo, ro) = (g1.num_entities(), g1.num_relations());
        let mut test = test1.to_vec();
        test.extend(
            test2
                .iter()
                .map(|t| Triple::new(t.subject + eo, t.relation + ro, t.object + eo)),
        );
        let mut open = open1.to_vec();
        open.extend(open2.iter().map(|e| e + eo));
        NeighborIndex::for_open_evaluation(
            merged.num_entities(),
            merged.num_relations(),
            merged.triples(),
            &test,
            &open,
            mode.adjacency(),
            add_inverse,
        )
    }

    /// Evaluation-mode layer representations and final output, both
    /// normalized when the model trains on normalized outputs.
    pub fn encode(&self, index: &NeighborIndex) -> Result<(Vec<Tensor>, Tensor)> {
        let tape = Tape::new();
        let bound = self.encoder.bind(&tape, false);
        let layers = forward(&tape, &bound, index, &ForwardOptions::eval(self.mode))?;
        let out = final_output(&tape, &layers, Task::Alignment)?;
        let fix = |v: Var| {
            if self.normalize {
                tape.normalize_rows(v)
            } else {
                v
            }
        };
        let reps = layers.all().iter().map(|&v| tape.value(fix(v))).collect();
        Ok((reps, tape.value(fix(out))))
    }

    fn halves(&self, t: &Tensor) -> Result<(Tensor, Tensor)> {
        let left: Vec<usize> = (0..self.n_left).collect();
        let right: Vec<usize> = (self.n_left..t.rows()).collect();
        Ok((t.select_rows(&left)?, t.select_rows(&right)?))
    }

    /// Ranks test pairs given in per-graph ids.
    pub fn evaluate(
        &self,
        index: &NeighborIndex,
        pairs: &[(usize, usize)],
    ) -> Result<AlignmentReport> {
        let (_, out) = self.encode(index)?;
        let (a, b) = self.halves(&out)?;
        rank_alignment(&a, &b, pairs)
    }

    /// One report per layer representation plus the concatenated output.
    pub fn per_layer(
        &self,
        index: &NeighborIndex,
        pairs: &[(usize, usize)],
    ) -> Result<Vec<(String, AlignmentReport)>> {
        let (reps, out) = self.encode(index)?;
        per_layer_eval(&reps, &out, self.n_left, pairs)
    }
}

/// Trains on the union of `g1` and `g2` with the training pairs of
/// `pairs`; validation pairs, if any, drive early stopping and the best
/// validated parameters are returned.
pub fn train_alignment(
    g1: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    pairs: &AlignmentPairs,
    cfg: &AlignConfig,
) -> Result<(AlignModel, History)> {
    cfg.validate()?;
    let (n1, n2) = (g1.num_entities(), g2.num_entities());
    let index = AlignModel::joint_index(g1, g2, cfg.mode, cfg.add_inverse);
    let n = n1 + n2;
    let joint = |(i, j): (usize, usize)| -> Result<(usize, usize)> {
        if i >= n1 || j >= n2 {
            return Err(Error::Index {
                what: "aligned entity",
                index: if i >= n1 { i } else { j },
                bound: if i >= n1 { n1 } else { n2 },
            });
        }
        Ok((i, j + n1))
    };
    let train: Vec<(usize, usize)> = pairs
        .train()
        .into_iter()
        .map(joint)
        .collect::<Result<_>>()?;
    let valid = pairs.valid();

    let mut model = AlignModel {
        encoder: EncoderParams::init(
            n,
            index.relation_slots(),
            cfg.dim,
            cfg.layers,
            seed::derive(cfg.seed, "init.encoder"),
        )?,
        density: DensityParams::init(
            cfg.layers * cfg.dim,
            cfg.dim,
            &mut seed::rng(cfg.seed, "init.density"),
        ),
        mode: cfg.mode,
        normalize: cfg.normalize,
        add_inverse: cfg.add_inverse,
        n_left: n1,
    };
    let mut history = History::default();
    if cfg.epochs == 0 || train.is_empty() {
        return Ok((model, history));
    }

    let mut adam = {
        let mut shapes = model.encoder.tensors();
        shapes.extend(model.density.tensors());
        Adam::new(cfg.lr, &shapes)
    };
    let degenerate: HashSet<usize> = index.degenerate_entities().into_iter().collect();
    let anchor_pool: Vec<usize> = (0..n).filter(|e| !degenerate.contains(e)).collect();
    let mut stopper = EarlyStop::new(cfg.patience);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order = train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive_indexed(
            cfg.seed,
            "shuffle",
            epoch as u64,
        )));
        let mut acc = Accumulator::default();
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed::derive_indexed(cfg.seed, "step", step as u64));
            let local: Vec<(usize, usize)> = batch.iter().map(|&(i, j)| (i, j - n1)).collect();
            let neg: Vec<(usize, usize)> =
                sample_negative_pairs(&local, cfg.negatives, n1, n2, &mut rng)?
                    .into_iter()
                    .map(|p| (p.left, p.right + n1))
                    .collect();

            let tape = Tape::new();
            let enc = model.encoder.bind(&tape, true);
            let dens = model.density.bind(&tape);
            let opts = ForwardOptions {
                mode: cfg.mode,
                dropout: cfg.dropout,
                training: true,
                seed: seed::derive_indexed(cfg.seed, "dropout", step as u64),
            };
            let layers = forward(&tape, &enc, &index, &opts)?;
            let mut out = final_output(&tape, &layers, Task::Alignment)?;
            if cfg.normalize {
                out = tape.normalize_rows(out);
            }
            let task = alignment_loss(&tape, out, batch, &neg, cfg.margin, cfg.alpha)?;
            let task = tape.scale(task, 1.0 / batch.len() as f64);
            let task_value = tape.item(task);
            check_finite(epoch, step, "alignment loss", task_value)?;

            let mut total = task;
            let (mut distill_value, mut mi) = (0.0, None);
            if cfg.distill != DistillMode::None
                && cfg.distill_weight > 0.0
                && !anchor_pool.is_empty()
            {
                let k = cfg.distill_anchors.min(anchor_pool.len());
                let anchors: Vec<usize> = index::sample(&mut rng, anchor_pool.len(), k)
                    .into_iter()
                    .map(|a| anchor_pool[a])
                    .collect();
                let nb = NegativeBatch::sample(&anchors, n, cfg.distill_samples, &mut rng)?;
                if let Some(term) = distill_loss(&tape, cfg.distill, out, enc.entity, &nb, &dens)? {
                    distill_value = tape.item(term.loss);
                    check_finite(epoch, step, "distill loss", distill_value)?;
                    mi = term.mi_bound;
                    total = tape.add(total, tape.scale(term.loss, cfg.distill_weight))?;
                }
            }

            let grads = tape.backward(total)?;
            let mut vars = enc.vars();
            vars.extend(dens.vars());
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            if let Some(bad) = grads.iter().position(|g| !g.all_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("non-finite gradient for parameter #{bad}"),
                });
            }
            let mut params = model.encoder.tensors_mut();
            params.extend(model.density.tensors_mut());
            adam.step(params, &grads)?;

            acc.add(task_value, distill_value, mi);
            history.steps.push(StepRecord {
                step,
                epoch,
                task_loss: task_value,
                distill_loss: distill_value,
                mi_bound: mi,
            });
        }

        let mut val = None;
        let mut stop = false;
        if !valid.is_empty() && epoch % cfg.eval_every == 0 {
            let r = model.evaluate(&index, &valid)?;
            val = Some((r.combined.hits1, r.combined.mrr));
            stop = stopper.observe(
                (r.combined.hits1, r.combined.mrr),
                epoch,
                &(model.encoder.clone(), model.density.clone()),
            );
        }
        history.epochs.push(acc.record(epoch, val));
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((epoch, (enc, dens))) = stopper.into_best() {
        model.encoder = enc;
        model.density = dens;
        history.best_epoch = Some(epoch);
    }
    Ok((model, history))
}

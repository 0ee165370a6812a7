use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decoder::{decoder_scores, prediction_loss, DecoderKind, DecoderParams};
use super::{check_finite, Accumulator, Adam, EarlyStop, History, StepRecord};
use crate::distiller::{distill_loss, DensityParams, DistillMode, NegativeBatch};
use crate::encoder::{
    encode, final_output, forward, EncoderMode, EncoderParams, ForwardOptions, Task,
};
use crate::error::{Error, Result};
use crate::eval::{rank_prediction, PredictionReport, TripleScorer};
use crate::kg::{KnowledgeGraph, NeighborIndex, Triple};
use crate::seed;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictConfig {
    pub decoder: DecoderKind,
    /// Sampled candidates per query besides the true entity.
    pub negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub distill: DistillMode,
    pub distill_weight: f64,
    pub distill_samples: usize,
    pub distill_anchors: usize,
    pub mode: EncoderMode,
    pub layers: usize,
    pub dim: usize,
    pub dropout: f64,
    pub add_inverse: bool,
    pub filtered: bool,
    /// Encode each batch over the training graph minus that batch's own
    /// triples, so a query cannot be answered by spotting its edge.
    pub mask_batch_edges: bool,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            decoder: DecoderKind::DistMult,
            negatives: 64,
            batch_size: 256,
            epochs: 50,
            lr: 1e-3,
            distill: DistillMode::Auto,
            distill_weight: 0.001,
            distill_samples: 256,
            distill_anchors: 64,
            mode: EncoderMode::Dan,
            layers: 2,
            dim: 128,
            dropout: 0.2,
            add_inverse: true,
            filtered: true,
            mask_batch_edges: false,
            patience: 5,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.layers == 0 || self.dim == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, layers, dim and eval_every must be >= 1".into(),
            ));
        }
        if self.decoder == DecoderKind::ComplEx && !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "complex decoder needs an even dim, got {}",
                self.dim
            )));
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

/// Encoder plus decoder for entity prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictModel {
    pub encoder: EncoderParams,
    pub density: DensityParams,
    pub decoder: DecoderParams,
    pub mode: EncoderMode,
    pub add_inverse: bool,
    /// Base relation count; subject queries use slot `r + num_relations`.
    pub num_relations: usize,
}

/// Frozen outputs of a [`PredictModel`] on one neighbor index.
pub struct PredictScorer {
    pub outputs: Tensor,
    pub relation: Tensor,
    pub kind: DecoderKind,
    pub num_relations: usize,
}

impl TripleScorer for PredictScorer {
    fn num_entities(&self) -> usize {
        self.outputs.rows()
    }

    fn score_objects(&self, subject: usize, relation: usize) -> Vec<f64> {
        let (s, r) = (self.outputs.row(subject), self.relation.row(relation));
        (0..self.outputs.rows())
            .map(|c| self.kind.score(s, r, self.outputs.row(c)))
            .collect()
    }

    fn score_subjects(&self, relation: usize, object: usize) -> Vec<f64> {
        let (o, r) = (
            self.outputs.row(object),
            self.relation.row(relation + self.num_relations),
        );
        (0..self.outputs.rows())
            .map(|c| self.kind.score(o, r, self.outputs.row(c)))
            .collect()
    }
}

impl PredictModel {
    pub fn index(&self, num_entities: usize, triples: &[Triple]) -> NeighborIndex {
        NeighborIndex::from_triples(
            num_entities,
            self.num_relations,
            triples,
            self.mode.adjacency(),
            self.add_inverse,
        )
    }

    pub fn scorer(&self, index: &NeighborIndex) -> Result<PredictScorer> {
        let (_, outputs) = encode(&self.encoder, index, self.mode, Task::Prediction)?;
        Ok(PredictScorer {
            outputs,
            relation: self.decoder.relation.clone(),
            kind: self.decoder.kind,
            num_relations: self.num_relations,
        })
    }

    pub fn evaluate(
        &self,
        index: &NeighborIndex,
        test: &[Triple],
        known: &HashSet<Triple>,
        filtered: bool,
    ) -> Result<PredictionReport> {
        rank_prediction(&self.scorer(index)?, test, known, filtered)
    }
}

/// Trains on the triples of `g`; `valid` triples, if any, drive early
/// stopping with filtered ranking against train and validation triples.
pub fn train_prediction(
    g: &KnowledgeGraph,
    valid: &[Triple],
    cfg: &PredictConfig,
) -> Result<(PredictModel, History)> {
    cfg.validate()?;
    let n = g.num_entities();
    let nr = g.num_relations();
    let index = NeighborIndex::build(g, cfg.mode.adjacency(), cfg.add_inverse);
    let mut model = PredictModel {
        encoder: EncoderParams::init(
            n,
            index.relation_slots(),
            cfg.dim,
            cfg.layers,
            seed::derive(cfg.seed, "init.encoder"),
        )?,
        density: DensityParams::init(cfg.dim, cfg.dim, &mut seed::rng(cfg.seed, "init.density")),
        decoder: DecoderParams::init(
            cfg.decoder,
            2 * nr,
            cfg.dim,
            &mut seed::rng(cfg.seed, "init.decoder"),
        )?,
        mode: cfg.mode,
        add_inverse: cfg.add_inverse,
        num_relations: nr,
    };
    let mut history = History::default();
    let train = g.triples().to_vec();
    if cfg.epochs == 0 || train.is_empty() {
        return Ok((model, history));
    }
    let known: HashSet<Triple> = train.iter().chain(valid).copied().collect();

    let mut adam = {
        let mut shapes = model.encoder.tensors();
        shapes.extend(model.density.tensors());
        shapes.push(&model.decoder.relation);
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
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            step += 1;
            let masked;
            let enc_index = if cfg.mask_batch_edges {
                let start = b * cfg.batch_size;
                let rest: Vec<Triple> = order[..start]
                    .iter()
                    .chain(&order[start + batch.len()..])
                    .copied()
                    .collect();
                masked = NeighborIndex::from_triples(
                    n,
                    nr,
                    &rest,
                    cfg.mode.adjacency(),
                    cfg.add_inverse,
                );
                &masked
            } else {
                &index
            };
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed::derive_indexed(cfg.seed, "step", step as u64));
            let mut heads = Vec::with_capacity(2 * batch.len());
            let mut rels = Vec::with_capacity(2 * batch.len());
            let mut truths = Vec::with_capacity(2 * batch.len());
            for t in batch {
                heads.extend([t.subject, t.object]);
                rels.extend([t.relation, t.relation + nr]);
                truths.extend([t.object, t.subject]);
            }
            let cands = NegativeBatch::sample(&truths, n, cfg.negatives + 1, &mut rng)?;

            let tape = Tape::new();
            let enc = model.encoder.bind(&tape, true);
            let dens = model.density.bind(&tape);
            let rel = tape.param(model.decoder.relation.clone());
            let opts = ForwardOptions {
                mode: cfg.mode,
                dropout: cfg.dropout,
                training: true,
                seed: seed::derive_indexed(cfg.seed, "dropout", step as u64),
            };
            let layers = forward(&tape, &enc, enc_index, &opts)?;
            let out = final_output(&tape, &layers, Task::Prediction)?;
            let scores = decoder_scores(
                &tape,
                cfg.decoder,
                out,
                rel,
                &heads,
                &rels,
                &cands.candidates,
            )?;
            let task = prediction_loss(&tape, scores, &cands.anchor_col)?;
            let task_value = tape.item(task);
            check_finite(epoch, step, "prediction loss", task_value)?;

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
            vars.push(rel);
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
            params.push(&mut model.decoder.relation);
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
            let r = model.evaluate(&index, valid, &known, cfg.filtered)?;
            val = Some((r.combined.hits1, r.combined.mrr));
            stop = stopper.observe(
                (r.combined.hits1, r.combined.mrr),
                epoch,
                &(
                    model.encoder.clone(),
                    model.density.clone(),
                    model.decoder.clone(),
                ),
            );
        }
        history.epochs.push(acc.record(epoch, val));
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((epoch, (enc, dens, dec))) = stopper.into_best() {
        model.encoder = enc;
        model.density = dens;
        model.decoder = dec;
        history.best_epoch = Some(epoch);
    }
    Ok((model, history))
}

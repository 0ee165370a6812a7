//! Training pipelines for entity alignment and entity prediction.

mod align;
mod decoder;
mod predict;

pub use align::{
    alignment_loss, sample_negative_pairs, train_alignment, AlignConfig, AlignModel, NegativePair,
    Side,
};
pub use decoder::{
    complex_score, decoder_scores, distmult_score, prediction_loss, transe_score, DecoderKind,
    DecoderParams,
};
pub use predict::{train_prediction, PredictConfig, PredictModel};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adaptive-moment optimizer over a fixed list of tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[&Tensor]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam", self.m.len(), params.len()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[k].len() {
                return Err(Error::shape("adam", p.len(), g.len()));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *w -= update;
            }
        }
        Ok(())
    }
}

/// One row of the per-epoch training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub distill_loss: f64,
    pub mi_bound: Option<f64>,
    pub val_h1: Option<f64>,
    pub val_mrr: Option<f64>,
}

/// One row of the per-step training log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub task_loss: f64,
    pub distill_loss: f64,
    pub mi_bound: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// Epoch whose parameters were kept (best validation H@1), if validated.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl History {
    pub const EPOCH_HEADER: &'static str = "epoch,task_loss,distill_loss,mi_bound,val_h1,val_mrr";
    pub const STEP_HEADER: &'static str = "step,epoch,task_loss,distill_loss,mi_bound";

    pub fn epochs_csv(&self) -> String {
        let mut s = format!("{}\n", Self::EPOCH_HEADER);
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                r.task_loss,
                r.distill_loss,
                opt(r.mi_bound),
                opt(r.val_h1),
                opt(r.val_mrr)
            );
        }
        s
    }

    pub fn steps_csv(&self) -> String {
        let mut s = format!("{}\n", Self::STEP_HEADER);
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.step,
                r.epoch,
                r.task_loss,
                r.distill_loss,
                opt(r.mi_bound)
            );
        }
        s
    }
}

pub(crate) fn check_finite(epoch: usize, step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            step,
            detail: format!("{what} became {v}"),
        })
    }
}

/// Running mean of per-step values within an epoch.
#[derive(Default)]
pub(crate) struct Accumulator {
    task: f64,
    distill: f64,
    mi: f64,
    mi_count: usize,
    n: usize,
}

impl Accumulator {
    pub(crate) fn add(&mut self, task: f64, distill: f64, mi: Option<f64>) {
        self.task += task;
        self.distill += distill;
        if let Some(m) = mi {
            self.mi += m;
            self.mi_count += 1;
        }
        self.n += 1;
    }

    pub(crate) fn record(&self, epoch: usize, val: Option<(f64, f64)>) -> EpochRecord {
        let n = self.n.max(1) as f64;
        EpochRecord {
            epoch,
            task_loss: self.task / n,
            distill_loss: self.distill / n,
            mi_bound: (self.mi_count > 0).then(|| self.mi / self.mi_count as f64),
            val_h1: val.map(|v| v.0),
            val_mrr: val.map(|v| v.1),
        }
    }
}

/// Early-stopping bookkeeping on validation H@1; MRR breaks ties.
pub(crate) struct EarlyStop<T> {
    patience: usize,
    best: Option<((f64, f64), usize, T)>,
    bad_rounds: usize,
}

impl<T: Clone> EarlyStop<T> {
    pub(crate) fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: None,
            bad_rounds: 0,
        }
    }

    /// Returns true when training should stop.
    pub(crate) fn observe(&mut self, score: (f64, f64), epoch: usize, state: &T) -> bool {
        match &self.best {
            Some((b, _, _)) if score.partial_cmp(b) != Some(std::cmp::Ordering::Greater) => {
                self.bad_rounds += 1;
                self.patience > 0 && self.bad_rounds >= self.patience
            }
            _ => {
                self.best = Some((score, epoch, state.clone()));
                self.bad_rounds = 0;
                false
            }
        }
    }

    pub(crate) fn into_best(self) -> Option<(usize, T)> {
        self.best.map(|(_, e, s)| (e, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = Tensor::vector(vec![0.3, -1.25, 7.0]);
        let before = p.clone();
        let mut adam = Adam::new(0.0, &[&p]);
        adam.step(vec![&mut p], &[Tensor::vector(vec![1.0, -2.0, 0.0])])
            .unwrap();
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::vector(vec![1.0, 1.0]);
        let mut adam = Adam::new(0.1, &[&p]);
        adam.step(vec![&mut p], &[Tensor::vector(vec![3.0, -0.5])])
            .unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-8);
        assert!((p.data()[1] - 1.1).abs() < 1e-8);
    }

    #[test]
    fn history_csv_headers() {
        let mut h = History::default();
        h.epochs.push(EpochRecord {
            epoch: 1,
            task_loss: 0.5,
            distill_loss: 0.25,
            mi_bound: None,
            val_h1: Some(1.0),
            val_mrr: Some(1.0),
        });
        assert_eq!(
            h.epochs_csv(),
            "epoch,task_loss,distill_loss,mi_bound,val_h1,val_mrr\n1,0.5,0.25,,1,1\n"
        );
    }

    #[test]
    fn early_stop_keeps_best() {
        let mut es = EarlyStop::new(2);
        assert!(!es.observe((0.5, 0.6), 1, &"a"));
        assert!(!es.observe((0.7, 0.8), 2, &"b"));
        assert!(!es.observe((0.6, 0.9), 3, &"c"));
        assert!(!es.observe((0.7, 0.85), 4, &"d"));
        assert!(!es.observe((0.7, 0.85), 5, &"e"));
        assert!(es.observe((0.7, 0.84), 6, &"f"));
        assert_eq!(es.into_best(), Some((4, "d")));
    }
}

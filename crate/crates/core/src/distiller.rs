//! Mutual-information objectives between encoder outputs and raw embeddings.
//!
//! The density `f(g, e) = exp(g W_f e + b_f)` scores an output row against
//! candidate embedding rows; InfoNCE turns those scores into a softmax over
//! one positive and sampled negatives. The auto-distiller variant feeds a
//! stop-gradient copy of the embedding table as the second argument, so the
//! raw embeddings only learn through their role as neighbors.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::encoder::xavier;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Which self-supervised term accompanies the task loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DistillMode {
    /// InfoNCE against detached embedding copies.
    Auto,
    /// InfoNCE with gradients flowing into both arguments.
    InfoNce,
    /// Squared distance between projected outputs and detached embeddings.
    L2,
    None,
}

impl DistillMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DistillMode::Auto => "auto",
            DistillMode::InfoNce => "infonce",
            DistillMode::L2 => "l2",
            DistillMode::None => "none",
        }
    }
}

impl fmt::Display for DistillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(DistillMode::Auto),
            "infonce" => Ok(DistillMode::InfoNce),
            "l2" => Ok(DistillMode::L2),
            "none" => Ok(DistillMode::None),
            other => Err(Error::Config(format!(
                "unknown distill objective `{other}` (auto|infonce|l2|none)"
            ))),
        }
    }
}

/// Bilinear map `W_f` (`[output width, embedding width]`) and scalar bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityParams {
    pub wf: Tensor,
    /// Shape `[1]`.
    pub bf: Tensor,
}

impl DensityParams {
    pub fn init(output_width: usize, embedding_width: usize, rng: &mut impl Rng) -> Self {
        DensityParams {
            wf: xavier(output_width, embedding_width, rng),
            bf: Tensor::zeros(&[1]),
        }
    }

    pub fn names(&self) -> Vec<String> {
        vec!["density.wf".into(), "density.bf".into()]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.wf, &self.bf]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.wf, &mut self.bf]
    }

    pub fn bind(&self, tape: &Tape) -> BoundDensity {
        BoundDensity {
            wf: tape.param(self.wf.clone()),
            bf: tape.param(self.bf.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDensity {
    pub wf: Var,
    pub bf: Var,
}

impl BoundDensity {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.wf, self.bf]
    }
}

/// Candidate sets `X_i`, one row per anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeBatch {
    pub anchors: Vec<usize>,
    /// `candidates[r]` lists the entity ids of row `r`; all rows have equal length.
    pub candidates: Vec<Vec<usize>>,
    /// Column of the anchor within its row.
    pub anchor_col: Vec<usize>,
}

impl NegativeBatch {
    /// Anchor in column 0 followed by `size - 1` distinct negatives drawn
    /// uniformly from `0..pool`, never the anchor itself. A pool smaller
    /// than `size` shrinks every row to `pool`.
    pub fn sample(anchors: &[usize], pool: usize, size: usize, rng: &mut impl Rng) -> Result<Self> {
        if size == 0 {
            return Err(Error::Parameter("candidate set size must be >= 1".into()));
        }
        if let Some(&a) = anchors.iter().find(|&&a| a >= pool) {
            return Err(Error::Index {
                what: "anchor",
                index: a,
                bound: pool,
            });
        }
        let negatives = (size - 1).min(pool.saturating_sub(1));
        let candidates = anchors
            .iter()
            .map(|&a| {
                let mut row = vec![a];
                // Sample from the pool with the anchor removed, then shift ids past it.
                row.extend(
                    index::sample(rng, pool - 1, negatives)
                        .into_iter()
                        .map(|j| if j >= a { j + 1 } else { j }),
                );
                row
            })
            .collect();
        Ok(NegativeBatch {
            anchors: anchors.to_vec(),
            candidates,
            anchor_col: vec![0; anchors.len()],
        })
    }

    /// Explicit rows; `anchor_col[r]` must point at `anchors[r]`.
    pub fn from_rows(
        anchors: Vec<usize>,
        candidates: Vec<Vec<usize>>,
        anchor_col: Vec<usize>,
    ) -> Result<Self> {
        let width = candidates.first().map_or(0, Vec::len);
        if candidates.len() != anchors.len() || anchor_col.len() != anchors.len() {
            return Err(Error::shape(
                "negative batch",
                anchors.len(),
                candidates.len(),
            ));
        }
        for (r, row) in candidates.iter().enumerate() {
            if row.len() != width || row.get(anchor_col[r]) != Some(&anchors[r]) {
                return Err(Error::Parameter(format!(
                    "candidate row {r} does not hold its anchor"
                )));
            }
        }
        Ok(NegativeBatch {
            anchors,
            candidates,
            anchor_col,
        })
    }

    /// `|X_i|`.
    pub fn size(&self) -> usize {
        self.candidates.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Log-density matrix `g W_f e_hat^T + b_f` over a shared candidate set.
pub fn density(tape: &Tape, g: Var, e_hat: Var, params: &BoundDensity) -> Result<Var> {
    let projected = tape.matmul(g, params.wf)?;
    let scores = tape.matmul(projected, tape.transpose(e_hat)?)?;
    tape.add_scalar(scores, params.bf)
}

/// Log-densities of each anchor row against its own candidates:
/// `[batch, |X|]`, entry `(r, c)` scoring `g_rows[r]` against
/// `table[candidates[r][c]]`.
pub fn batch_log_density(
    tape: &Tape,
    g_rows: Var,
    table: Var,
    batch: &NegativeBatch,
    params: &BoundDensity,
) -> Result<Var> {
    let (b, x) = (batch.len(), batch.size());
    let projected = tape.matmul(g_rows, params.wf)?;
    let repeat: Vec<usize> = (0..b).flat_map(|r| std::iter::repeat_n(r, x)).collect();
    let flat: Vec<usize> = batch.candidates.iter().flatten().copied().collect();
    let left = tape.gather_rows(projected, &repeat)?;
    let right = tape.gather_rows(table, &flat)?;
    let dots = tape.sum_last(tape.mul(left, right)?);
    let scores = tape.reshape(dots, &[b, x])?;
    tape.add_scalar(scores, params.bf)
}

/// Mean over rows of `-log softmax(logdens)[anchor]`.
pub fn info_nce_loss(tape: &Tape, logdens: Var, anchor_col: &[usize]) -> Result<Var> {
    let logp = tape.pick(tape.log_softmax(logdens)?, anchor_col)?;
    Ok(tape.scale(tape.mean(logp), -1.0))
}

/// Mean of squared differences between `g_rows` and detached copies of
/// `table[anchors]`.
pub fn l2_align_loss(tape: &Tape, g_rows: Var, table: Var, anchors: &[usize]) -> Result<Var> {
    let teacher = tape.detach(tape.gather_rows(table, anchors)?);
    let diff = tape.sub(g_rows, teacher)?;
    Ok(tape.mean(tape.mul(diff, diff)?))
}

/// `ln|X| - loss`, an InfoNCE estimate of the mutual information.
pub fn mi_lower_bound_estimate(loss: f64, sample_size: usize) -> f64 {
    (sample_size as f64).ln() - loss
}

/// Distillation term and, for the InfoNCE variants, the bound estimate.
#[derive(Clone, Copy, Debug)]
pub struct DistillTerm {
    pub loss: Var,
    pub mi_bound: Option<f64>,
}

/// Self-supervised term for the anchors of `batch`.
///
/// `g` is the full encoder output and `e` the raw embedding table recorded
/// on the same tape. In L2 mode the output rows are first mapped through
/// `W_f` so widths match the embeddings.
pub fn distill_loss(
    tape: &Tape,
    mode: DistillMode,
    g: Var,
    e: Var,
    batch: &NegativeBatch,
    params: &BoundDensity,
) -> Result<Option<DistillTerm>> {
    let g_rows = tape.gather_rows(g, &batch.anchors)?;
    match mode {
        DistillMode::None => Ok(None),
        DistillMode::Auto | DistillMode::InfoNce => {
            let table = if mode == DistillMode::Auto {
                tape.detach(e)
            } else {
                e
            };
            let logdens = batch_log_density(tape, g_rows, table, batch, params)?;
            let loss = info_nce_loss(tape, logdens, &batch.anchor_col)?;
            let mi = mi_lower_bound_estimate(tape.item(loss), batch.size());
            Ok(Some(DistillTerm {
                loss,
                mi_bound: Some(mi),
            }))
        }
        DistillMode::L2 => {
            let projected = tape.matmul(g_rows, params.wf)?;
            let loss = l2_align_loss(tape, projected, e, &batch.anchors)?;
            Ok(Some(DistillTerm {
                loss,
                mi_bound: None,
            }))
        }
    }
}

/// The auto-distiller objective: InfoNCE with a detached teacher table.
pub fn auto_distill_loss(
    tape: &Tape,
    g: Var,
    e: Var,
    batch: &NegativeBatch,
    params: &BoundDensity,
) -> Result<Var> {
    Ok(distill_loss(tape, DistillMode::Auto, g, e, batch, params)?
        .expect("auto mode yields a term")
        .loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn lse(row: &[f64]) -> f64 {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn density_examples() {
        let tape = Tape::new();
        let g = tape.constant(random(3, 4, 1));
        let e = tape.constant(random(5, 4, 2));
        let zero = BoundDensity {
            wf: tape.constant(Tensor::zeros(&[4, 4])),
            bf: tape.constant(Tensor::zeros(&[1])),
        };
        assert!(tape
            .value(density(&tape, g, e, &zero).unwrap())
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let ident = BoundDensity {
            wf: tape.constant(Tensor::identity(4)),
            bf: tape.constant(Tensor::zeros(&[1])),
        };
        let d = tape.value(density(&tape, e, e, &ident).unwrap());
        let ev = tape.value(e);
        for i in 0..5 {
            let sq: f64 = ev.row(i).iter().map(|v| v * v).sum();
            assert!((d.at(i, i) - sq).abs() < 1e-14);
        }
    }

    #[test]
    fn density_matches_double_loop() {
        let (g, e, wf) = (random(3, 4, 1), random(5, 6, 2), random(4, 6, 3));
        let tape = Tape::new();
        let p = BoundDensity {
            wf: tape.constant(wf.clone()),
            bf: tape.constant(Tensor::vector(vec![0.3])),
        };
        let d = tape.value(
            density(
                &tape,
                tape.constant(g.clone()),
                tape.constant(e.clone()),
                &p,
            )
            .unwrap(),
        );
        for i in 0..3 {
            for j in 0..5 {
                let mut want = 0.3;
                for a in 0..4 {
                    for b in 0..6 {
                        want += g.at(i, a) * wf.at(a, b) * e.at(j, b);
                    }
                }
                assert!((d.at(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn info_nce_examples() {
        let tape = Tape::new();
        let flat = tape.constant(Tensor::filled(&[3, 8], 0.7));
        let l = tape.item(info_nce_loss(&tape, flat, &[0, 3, 7]).unwrap());
        assert!((l - 8f64.ln()).abs() < 1e-12);
        assert!(mi_lower_bound_estimate(l, 8).abs() < 1e-12);

        let mut sharp = Tensor::zeros(&[1, 4]);
        sharp.data_mut()[2] = 60.0;
        let l = tape.item(info_nce_loss(&tape, tape.constant(sharp), &[2]).unwrap());
        assert!((0.0..1e-20).contains(&l));

        let m = random(4, 5, 9);
        let cols = [0, 4, 2, 1];
        let l = tape.item(info_nce_loss(&tape, tape.constant(m.clone()), &cols).unwrap());
        let want = (0..4)
            .map(|r| lse(m.row(r)) - m.at(r, cols[r]))
            .sum::<f64>()
            / 4.0;
        assert!((l - want).abs() < 1e-10);
    }

    #[test]
    fn negative_batch_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = NegativeBatch::sample(&[3, 0, 9], 10, 6, &mut rng).unwrap();
        assert_eq!(b.size(), 6);
        for (r, row) in b.candidates.iter().enumerate() {
            assert_eq!(row[0], b.anchors[r]);
            let mut sorted = row.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 6);
            assert!(row[1..].iter().all(|&c| c != b.anchors[r] && c < 10));
        }
        let small = NegativeBatch::sample(&[1], 3, 64, &mut rng).unwrap();
        assert_eq!(small.size(), 3);
        assert!(NegativeBatch::sample(&[10], 10, 4, &mut rng).is_err());
    }

    #[test]
    fn l2_examples() {
        let tape = Tape::new();
        let e = tape.param(random(4, 3, 1));
        let same = tape.gather_rows(e, &[2, 0]).unwrap();
        assert_eq!(
            tape.item(l2_align_loss(&tape, same, e, &[2, 0]).unwrap()),
            0.0
        );
        let mut shifted = tape.value(e).select_rows(&[1]).unwrap();
        shifted.data_mut()[0] += 1.0;
        let l = tape.item(l2_align_loss(&tape, tape.constant(shifted), e, &[1]).unwrap());
        assert!((l - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shuffled_candidates_give_same_loss() {
        let tape = Tape::new();
        let g = tape.constant(random(6, 4, 1));
        let e = tape.constant(random(6, 4, 2));
        let p = BoundDensity {
            wf: tape.constant(random(4, 4, 3)),
            bf: tape.constant(Tensor::vector(vec![0.1])),
        };
        let a = NegativeBatch::from_rows(
            vec![0, 1],
            vec![vec![0, 2, 3, 4], vec![1, 5, 2, 0]],
            vec![0, 0],
        )
        .unwrap();
        let b = NegativeBatch::from_rows(
            vec![0, 1],
            vec![vec![3, 4, 0, 2], vec![2, 0, 5, 1]],
            vec![2, 3],
        )
        .unwrap();
        let la = tape.item(auto_distill_loss(&tape, g, e, &a, &p).unwrap());
        let lb = tape.item(auto_distill_loss(&tape, g, e, &b, &p).unwrap());
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn auto_mode_blocks_teacher_gradient() {
        // g does not depend on e here, so any gradient on e must come
        // through the density's second argument.
        for (mode, expect_zero) in [(DistillMode::Auto, true), (DistillMode::InfoNce, false)] {
            let tape = Tape::new();
            let g = tape.param(random(5, 3, 1));
            let e = tape.param(random(5, 3, 2));
            let p = DensityParams::init(3, 3, &mut ChaCha8Rng::seed_from_u64(4)).bind(&tape);
            let batch =
                NegativeBatch::sample(&[0, 2, 4], 5, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let term = distill_loss(&tape, mode, g, e, &batch, &p)
                .unwrap()
                .unwrap();
            let grads = tape.backward(term.loss).unwrap();
            let ge = grads.wrt(e);
            assert_eq!(ge.data().iter().all(|&v| v == 0.0), expect_zero, "{mode}");
            assert!(grads.wrt(g).norm() > 0.0);
            assert!(term.mi_bound.unwrap() <= 3f64.ln());
        }
    }

    #[test]
    fn mode_names_parse() {
        for m in [
            DistillMode::Auto,
            DistillMode::InfoNce,
            DistillMode::L2,
            DistillMode::None,
        ] {
            assert_eq!(m.as_str().parse::<DistillMode>().unwrap(), m);
        }
    }
}

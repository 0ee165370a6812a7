use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::distiller::info_nce_loss;
use crate::encoder::xavier;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Triple scoring function; higher scores mean more plausible triples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecoderKind {
    TransE,
    DistMult,
    ComplEx,
}

impl DecoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::TransE => "transe",
            DecoderKind::DistMult => "distmult",
            DecoderKind::ComplEx => "complex",
        }
    }

    pub fn score(self, s: &[f64], r: &[f64], o: &[f64]) -> f64 {
        match self {
            DecoderKind::TransE => transe_score(s, r, o),
            DecoderKind::DistMult => distmult_score(s, r, o),
            DecoderKind::ComplEx => complex_score(s, r, o),
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(DecoderKind::TransE),
            "distmult" => Ok(DecoderKind::DistMult),
            "complex" => Ok(DecoderKind::ComplEx),
            other => Err(Error::Config(format!(
                "unknown decoder `{other}` (transe|distmult|complex)"
            ))),
        }
    }
}

/// `-||s + r - o||`.
pub fn transe_score(s: &[f64], r: &[f64], o: &[f64]) -> f64 {
    -s.iter()
        .zip(r)
        .zip(o)
        .map(|((s, r), o)| (s + r - o) * (s + r - o))
        .sum::<f64>()
        .sqrt()
}

/// `sum_d s[d] r[d] o[d]`.
pub fn distmult_score(s: &[f64], r: &[f64], o: &[f64]) -> f64 {
    s.iter().zip(r).zip(o).map(|((s, r), o)| r * (s * o)).sum()
}

/// `Re <s, r, conj(o)>` with each vector split into real and imaginary halves.
pub fn complex_score(s: &[f64], r: &[f64], o: &[f64]) -> f64 {
    let h = s.len() / 2;
    let (sr, si) = s.split_at(h);
    let (rr, ri) = r.split_at(h);
    let (or, oi) = o.split_at(h);
    (0..h)
        .map(|d| {
            sr[d] * rr[d] * or[d] + si[d] * rr[d] * oi[d] + sr[d] * ri[d] * oi[d]
                - si[d] * ri[d] * or[d]
        })
        .sum()
}

/// Decoder relation table over base and inverse relation slots.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub kind: DecoderKind,
    pub relation: Tensor,
}

impl DecoderParams {
    pub fn init(
        kind: DecoderKind,
        relation_slots: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kind == DecoderKind::ComplEx && !dim.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "complex decoder needs an even width, got {dim}"
            )));
        }
        Ok(DecoderParams {
            kind,
            relation: xavier(relation_slots, dim, rng),
        })
    }
}

/// Scores `[queries, candidates]`: row `q` scores `(heads[q], rels[q], c)`
/// for every `c` in `candidates[q]`.
pub fn decoder_scores(
    tape: &Tape,
    kind: DecoderKind,
    g: Var,
    relation: Var,
    heads: &[usize],
    rels: &[usize],
    candidates: &[Vec<usize>],
) -> Result<Var> {
    let q = heads.len();
    let c = candidates.first().map_or(0, Vec::len);
    if rels.len() != q || candidates.len() != q || candidates.iter().any(|row| row.len() != c) {
        return Err(Error::shape("decoder_scores", q, candidates.len()));
    }
    let s = tape.gather_rows(g, heads)?;
    let r = tape.gather_rows(relation, rels)?;
    let query = match kind {
        DecoderKind::TransE => tape.add(s, r)?,
        DecoderKind::DistMult => tape.mul(s, r)?,
        DecoderKind::ComplEx => {
            let d = tape.shape(s)[1];
            if !d.is_multiple_of(2) {
                return Err(Error::Parameter(format!(
                    "complex decoder needs an even width, got {d}"
                )));
            }
            let h = d / 2;
            let (sr, si) = (tape.slice_cols(s, 0, h)?, tape.slice_cols(s, h, d)?);
            let (rr, ri) = (tape.slice_cols(r, 0, h)?, tape.slice_cols(r, h, d)?);
            let re = tape.sub(tape.mul(sr, rr)?, tape.mul(si, ri)?)?;
            let im = tape.add(tape.mul(sr, ri)?, tape.mul(si, rr)?)?;
            tape.concat(&[re, im])?
        }
    };
    let repeat: Vec<usize> = (0..q).flat_map(|i| std::iter::repeat_n(i, c)).collect();
    let flat: Vec<usize> = candidates.iter().flatten().copied().collect();
    let left = tape.gather_rows(query, &repeat)?;
    let right = tape.gather_rows(g, &flat)?;
    let per_pair = match kind {
        DecoderKind::TransE => tape.scale(tape.row_distances(left, right)?, -1.0),
        DecoderKind::DistMult | DecoderKind::ComplEx => tape.sum_last(tape.mul(left, right)?),
    };
    tape.reshape(per_pair, &[q, c])
}

/// Softmax cross-entropy of the true column against the sampled candidates.
pub fn prediction_loss(tape: &Tape, scores: Var, true_col: &[usize]) -> Result<Var> {
    info_nce_loss(tape, scores, true_col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vecs(seed: u64, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || {
            (0..d)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        (v(), v(), v())
    }

    #[test]
    fn transe_examples() {
        assert_eq!(transe_score(&[0.5, 0.5], &[0.2, -0.1], &[0.7, 0.4]), 0.0);
        let (s, r, _) = vecs(1, 5);
        let o: Vec<f64> = s.iter().zip(&r).map(|(a, b)| a + b).collect();
        assert_eq!(transe_score(&s, &r, &o), 0.0);
        let (s, r, o) = vecs(2, 4);
        let want = -(0..4)
            .map(|d| (s[d] + r[d] - o[d]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((transe_score(&s, &r, &o) - want).abs() < 1e-15);
        assert!((transe_score(&s, &r, &o) - transe_score(&o, &r, &s)).abs() > 1e-6);
    }

    #[test]
    fn distmult_examples() {
        let (s, r, o) = vecs(3, 6);
        assert_eq!(distmult_score(&s, &r, &o), distmult_score(&o, &r, &s));
        let ones = vec![1.0; 6];
        let dot: f64 = s.iter().zip(&o).map(|(a, b)| a * b).sum();
        assert!((distmult_score(&s, &ones, &o) - dot).abs() < 1e-15);
    }

    #[test]
    fn complex_examples() {
        let (mut s, mut r, mut o) = vecs(4, 8);
        assert!((complex_score(&s, &r, &o) - complex_score(&o, &r, &s)).abs() > 1e-6);
        for v in [&mut s, &mut r, &mut o] {
            v[4..].iter_mut().for_each(|x| *x = 0.0);
        }
        assert!(
            (complex_score(&s, &r, &o) - distmult_score(&s[..4], &r[..4], &o[..4])).abs() < 1e-15
        );
    }

    #[test]
    fn tape_scores_match_plain_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = xavier(6, 4, &mut rng);
        let rel = xavier(3, 4, &mut rng);
        for kind in [
            DecoderKind::TransE,
            DecoderKind::DistMult,
            DecoderKind::ComplEx,
        ] {
            let tape = Tape::new();
            let (gv, rv) = (tape.constant(g.clone()), tape.constant(rel.clone()));
            let cands = vec![vec![1, 2, 3], vec![0, 5, 4]];
            let s =
                tape.value(decoder_scores(&tape, kind, gv, rv, &[0, 3], &[2, 1], &cands).unwrap());
            for (q, (h, r)) in [(0usize, 2usize), (3, 1)].into_iter().enumerate() {
                for (k, &c) in cands[q].iter().enumerate() {
                    let want = kind.score(g.row(h), rel.row(r), g.row(c));
                    assert!((s.at(q, k) - want).abs() < 1e-12, "{kind}");
                }
            }
        }
    }

    #[test]
    fn prediction_loss_examples() {
        let tape = Tape::new();
        let flat = tape.constant(Tensor::filled(&[2, 5], -0.3));
        assert!(
            (tape.item(prediction_loss(&tape, flat, &[0, 4]).unwrap()) - 5f64.ln()).abs() < 1e-12
        );
    }
}

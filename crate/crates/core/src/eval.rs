//! Ranking metrics for alignment and entity prediction.
//!
//! Ranks are 1-based. A candidate outranks the target when it scores
//! strictly better, or ties and has a smaller id.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::Triple;
use crate::tensor::Tensor;

/// Per-query ranks and their aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub ranks: Vec<usize>,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub mr: f64,
    pub mrr: f64,
}

impl RankingReport {
    pub fn from_ranks(ranks: Vec<usize>) -> Self {
        let n = ranks.len().max(1) as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        RankingReport {
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
            mr: ranks.iter().sum::<usize>() as f64 / n,
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            ranks,
        }
    }

    pub fn queries(&self) -> usize {
        self.ranks.len()
    }

    pub fn hits(&self, k: usize) -> f64 {
        self.ranks.iter().filter(|&&r| r <= k).count() as f64 / self.ranks.len().max(1) as f64
    }

    /// Concatenates the queries of several reports.
    pub fn merged(parts: &[&RankingReport]) -> Self {
        Self::from_ranks(parts.iter().flat_map(|r| r.ranks.iter().copied()).collect())
    }

    /// `(metric, value)` rows, optionally prefixed.
    pub fn metrics(&self, prefix: &str) -> Vec<(String, f64)> {
        let p = |m: &str| {
            if prefix.is_empty() {
                m.to_string()
            } else {
                format!("{prefix}.{m}")
            }
        };
        vec![
            (p("queries"), self.queries() as f64),
            (p("hits@1"), self.hits1),
            (p("hits@3"), self.hits3),
            (p("hits@10"), self.hits10),
            (p("mr"), self.mr),
            (p("mrr"), self.mrr),
        ]
    }
}

/// Rank of `target` among `candidates` (entity ids) by `score`, higher
/// being better.
pub fn rank_among(target: usize, candidates: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let st = score(target);
    1 + candidates
        .iter()
        .filter(|&&c| c != target)
        .filter(|&&c| {
            let sc = score(c);
            sc > st || (sc == st && c < target)
        })
        .count()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Both directions of an alignment evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentReport {
    /// First graph to second.
    pub forward: RankingReport,
    /// Second graph to first.
    pub backward: RankingReport,
    /// Queries of both directions pooled.
    pub combined: RankingReport,
}

impl AlignmentReport {
    pub fn metrics(&self, prefix: &str) -> Vec<(String, f64)> {
        let join = |d: &str| {
            if prefix.is_empty() {
                d.to_string()
            } else {
                format!("{prefix}.{d}")
            }
        };
        let mut rows = self.combined.metrics(prefix);
        rows.extend(self.forward.metrics(&join("forward")));
        rows.extend(self.backward.metrics(&join("backward")));
        rows
    }
}

fn check_rows(what: &str, t: &Tensor, ids: impl Iterator<Item = usize>) -> Result<()> {
    for id in ids {
        if id >= t.rows() {
            return Err(Error::Eval(format!(
                "{what} entity {id} has no output row ({} rows)",
                t.rows()
            )));
        }
    }
    Ok(())
}

/// Nearest-neighbor alignment ranking by L2 distance. For each test pair
/// `(i, j)`, `j` is ranked among all test right-hand entities by distance to
/// `g1[i]`, and symmetrically for the reverse direction.
pub fn rank_alignment(
    g1: &Tensor,
    g2: &Tensor,
    test_pairs: &[(usize, usize)],
) -> Result<AlignmentReport> {
    check_rows("left", g1, test_pairs.iter().map(|p| p.0))?;
    check_rows("right", g2, test_pairs.iter().map(|p| p.1))?;
    if g1.cols() != g2.cols() {
        return Err(Error::Eval(format!(
            "output widths differ: {} vs {}",
            g1.cols(),
            g2.cols()
        )));
    }
    let lefts: Vec<usize> = test_pairs.iter().map(|p| p.0).collect();
    let rights: Vec<usize> = test_pairs.iter().map(|p| p.1).collect();
    let forward = test_pairs
        .iter()
        .map(|&(i, j)| rank_among(j, &rights, |c| -squared_distance(g1.row(i), g2.row(c))))
        .collect();
    let backward = test_pairs
        .iter()
        .map(|&(i, j)| rank_among(i, &lefts, |c| -squared_distance(g2.row(j), g1.row(c))))
        .collect();
    let (forward, backward) = (
        RankingReport::from_ranks(forward),
        RankingReport::from_ranks(backward),
    );
    let combined = RankingReport::merged(&[&forward, &backward]);
    Ok(AlignmentReport {
        forward,
        backward,
        combined,
    })
}

/// Object and subject queries of an entity-prediction evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionReport {
    pub object: RankingReport,
    pub subject: RankingReport,
    pub combined: RankingReport,
}

impl PredictionReport {
    pub fn metrics(&self, prefix: &str) -> Vec<(String, f64)> {
        let join = |d: &str| {
            if prefix.is_empty() {
                d.to_string()
            } else {
                format!("{prefix}.{d}")
            }
        };
        let mut rows = self.combined.metrics(prefix);
        rows.extend(self.object.metrics(&join("object")));
        rows.extend(self.subject.metrics(&join("subject")));
        rows
    }
}

/// Scores every entity as the missing end of a query.
pub trait TripleScorer {
    fn num_entities(&self) -> usize;
    /// Scores of `(s, r, c)` for every candidate object `c`.
    fn score_objects(&self, subject: usize, relation: usize) -> Vec<f64>;
    /// Scores of `(c, r, o)` for every candidate subject `c`.
    fn score_subjects(&self, relation: usize, object: usize) -> Vec<f64>;
}

/// Ranks the true object and the true subject of each test triple among
/// all entities. With `filtered`, candidates forming a triple in `known`
/// (other than the target) are skipped.
pub fn rank_prediction(
    scorer: &dyn TripleScorer,
    test: &[Triple],
    known: &HashSet<Triple>,
    filtered: bool,
) -> Result<PredictionReport> {
    let n = scorer.num_entities();
    let all: Vec<usize> = (0..n).collect();
    let mut object = Vec::with_capacity(test.len());
    let mut subject = Vec::with_capacity(test.len());
    for t in test {
        if t.subject >= n || t.object >= n {
            return Err(Error::Eval(format!(
                "triple {t:?} references an entity without output"
            )));
        }
        let scores = scorer.score_objects(t.subject, t.relation);
        let cands: Vec<usize> = if filtered {
            all.iter()
                .copied()
                .filter(|&c| {
                    c == t.object || !known.contains(&Triple::new(t.subject, t.relation, c))
                })
                .collect()
        } else {
            all.clone()
        };
        object.push(rank_among(t.object, &cands, |c| scores[c]));

        let scores = scorer.score_subjects(t.relation, t.object);
        let cands: Vec<usize> = if filtered {
            all.iter()
                .copied()
                .filter(|&c| {
                    c == t.subject || !known.contains(&Triple::new(c, t.relation, t.object))
                })
                .collect()
        } else {
            all.clone()
        };
        subject.push(rank_among(t.subject, &cands, |c| scores[c]));
    }
    let (object, subject) = (
        RankingReport::from_ranks(object),
        RankingReport::from_ranks(subject),
    );
    let combined = RankingReport::merged(&[&object, &subject]);
    Ok(PredictionReport {
        object,
        subject,
        combined,
    })
}

/// Alignment report for every layer representation `d^-1 .. g^K` and for
/// their concatenation. `reps[k]` and `concat` cover the joint entity
/// space; the first `n_left` rows belong to the first graph.
pub fn per_layer_eval(
    reps: &[Tensor],
    concat: &Tensor,
    n_left: usize,
    test_pairs: &[(usize, usize)],
) -> Result<Vec<(String, AlignmentReport)>> {
    let split = |t: &Tensor| -> Result<(Tensor, Tensor)> {
        let left: Vec<usize> = (0..n_left.min(t.rows())).collect();
        let right: Vec<usize> = (n_left..t.rows()).collect();
        Ok((t.select_rows(&left)?, t.select_rows(&right)?))
    };
    let mut out = Vec::with_capacity(reps.len() + 1);
    for (k, rep) in reps.iter().enumerate() {
        let (a, b) = split(rep)?;
        out.push((
            format!("layer{}", k as isize - 1),
            rank_alignment(&a, &b, test_pairs)?,
        ));
    }
    let (a, b) = split(concat)?;
    out.push(("concat".to_string(), rank_alignment(&a, &b, test_pairs)?));
    Ok(out)
}

/// `metric,value` CSV.
pub fn report_csv(rows: &[(String, f64)]) -> String {
    let mut s = String::from("metric,value\n");
    for (m, v) in rows {
        let _ = writeln!(s, "{m},{v}");
    }
    s
}

pub fn write_report_csv(path: impl AsRef<Path>, rows: &[(String, f64)]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, report_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Human-readable block.
pub fn summary(title: &str, report: &RankingReport) -> String {
    format!(
        "{title}\n  queries  {}\n  H@1      {:.4}\n  H@3      {:.4}\n  H@10     {:.4}\n  MR       {:.2}\n  MRR      {:.4}\n",
        report.queries(),
        report.hits1,
        report.hits3,
        report.hits10,
        report.mr,
        report.mrr
    )
}

//! Attention encoders over a [`NeighborIndex`].
//!
//! The decentralized stack starts from `d^-1 = E` and a mean-aggregated
//! `d^0`; layer `k` attends with the layer `k-1` representation of each
//! entity as query over the layer `k-2` representations of its neighbors.
//! An entity's own raw embedding never reaches its output unless the index
//! contains self-loops.

mod params;

pub use params::{xavier, BoundEncoder, BoundLayer, EncoderParams, LayerParams};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kg::{AdjacencyMode, EdgeList, NeighborIndex};
use crate::seed;
use crate::tensor::{Tape, Tensor, Var, LEAKY_SLOPE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderMode {
    /// Decentralized attention over neighbors only.
    Dan,
    /// Standard graph attention: the query is the entity itself and the
    /// neighborhood includes a self-loop.
    Gat,
    /// The decentralized stack run over a self-loop-augmented index.
    CentRl,
}

impl EncoderMode {
    pub fn adjacency(self) -> AdjacencyMode {
        match self {
            EncoderMode::Dan => AdjacencyMode::Decentralized,
            EncoderMode::Gat | EncoderMode::CentRl => AdjacencyMode::Centralized,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderMode::Dan => "dan",
            EncoderMode::Gat => "gat",
            EncoderMode::CentRl => "centrl",
        }
    }
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dan" | "decentrl" => Ok(EncoderMode::Dan),
            "gat" => Ok(EncoderMode::Gat),
            "centrl" => Ok(EncoderMode::CentRl),
            other => Err(Error::Config(format!(
                "unknown encoder mode `{other}` (dan|gat|centrl)"
            ))),
        }
    }
}

/// How the layer outputs are combined into the final representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Concatenation of every attention layer.
    Alignment,
    /// Last layer only.
    Prediction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: EncoderMode,
    pub dropout: f64,
    pub training: bool,
    /// Seed of the dropout masks for this pass.
    pub seed: u64,
}

impl ForwardOptions {
    /// Deterministic pass with dropout disabled.
    pub fn eval(mode: EncoderMode) -> Self {
        ForwardOptions {
            mode,
            dropout: 0.0,
            training: false,
            seed: 0,
        }
    }
}

/// Representations recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct LayerOutputs {
    /// `g^-1, g^0, g^1, ..., g^K`.
    reps: Vec<Var>,
    /// Per-edge attention weights of layers `1..=K`.
    attention: Vec<Var>,
}

impl LayerOutputs {
    /// `d^-1`, the raw embedding table.
    pub fn input(&self) -> Var {
        self.reps[0]
    }

    /// `d^0`, the mean-aggregated bootstrap.
    pub fn mean(&self) -> Var {
        self.reps[1]
    }

    /// Output of attention layer `k`, `1 <= k <= K`.
    pub fn layer(&self, k: usize) -> Var {
        assert!(k >= 1 && k + 1 < self.reps.len(), "layer {k} out of range");
        self.reps[k + 1]
    }

    /// Every representation from `d^-1` to `g^K`.
    pub fn all(&self) -> &[Var] {
        &self.reps
    }

    pub fn depth(&self) -> usize {
        self.reps.len() - 2
    }

    pub fn attention(&self) -> &[Var] {
        &self.attention
    }
}

/// Output of a single attention layer before dropout and normalization.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// One weight per edge of the index, in edge order.
    pub attention: Var,
}

/// `d0[i] = mean over N_i of e_j W0`; entities without neighbors get a zero row.
pub fn mean_aggregate(tape: &Tape, e: Var, edges: &EdgeList, w0: Var) -> Result<Var> {
    let projected = tape.matmul(e, w0)?;
    let gathered = tape.gather_rows(projected, &edges.sources)?;
    let summed = tape.segment_sum(gathered, &edges.segments)?;
    let inv = tape.constant(Tensor::vector(edges.inv_degree.clone()));
    tape.mul_rows(summed, inv)
}

/// Adds `R[rel] Wr` to every message row.
pub fn relation_combine(
    tape: &Tape,
    messages: Var,
    rel_ids: &[usize],
    relation: Var,
    wr: Var,
) -> Result<Var> {
    let slots = tape.shape(relation)[0];
    if let Some(&bad) = rel_ids.iter().find(|&&r| r >= slots) {
        return Err(Error::Index {
            what: "relation slot",
            index: bad,
            bound: slots,
        });
    }
    let projected = tape.matmul(relation, wr)?;
    let per_edge = tape.gather_rows(projected, rel_ids)?;
    tape.add(messages, per_edge)
}

/// `g0 + g_{k-1} + g_k`.
pub fn residual_combine(tape: &Tape, g0: Var, g_km1: Var, g_k: Var) -> Result<Var> {
    let s = tape.add(g0, g_km1)?;
    tape.add(s, g_k)
}

/// Attention of `query` rows (one per target entity) over `kv` rows of
/// their neighbors, aggregating `kv W` plus optional relation messages.
fn attend(
    tape: &Tape,
    query: Var,
    kv: Var,
    edges: &EdgeList,
    layer: &BoundLayer,
    relation: Option<Var>,
) -> Result<AttentionOutput> {
    let d = tape.shape(layer.w)[0];
    let a_query = tape.transpose(tape.slice_cols(layer.a, 0, d)?)?;
    let a_key = tape.transpose(tape.slice_cols(layer.a, d, 2 * d)?)?;
    let q_score = tape.matmul(query, tape.matmul(layer.w1, a_query)?)?;
    let k_score = tape.matmul(kv, tape.matmul(layer.w2, a_key)?)?;
    let scores = tape.add(
        tape.gather_rows(q_score, &edges.targets)?,
        tape.gather_rows(k_score, &edges.sources)?,
    )?;
    let scores = tape.leaky_relu(scores, LEAKY_SLOPE)?;
    let attention = tape.segment_softmax(scores, &edges.segments)?;

    let mut messages = tape.gather_rows(tape.matmul(kv, layer.w)?, &edges.sources)?;
    if let Some(r) = relation {
        messages = relation_combine(tape, messages, &edges.relations, r, layer.wr)?;
    }
    let weighted = tape.mul_rows(messages, attention)?;
    let output = tape.segment_sum(weighted, &edges.segments)?;
    Ok(AttentionOutput { output, attention })
}

fn require_nonempty(index: &NeighborIndex) -> Result<()> {
    match index.degenerate_entities().first() {
        Some(&e) => Err(Error::DegenerateNeighborhood(e)),
        None => Ok(()),
    }
}

/// Second-order decentralized attention: queries from `d_prev` (layer k-1),
/// keys and values from `d_prev2` (layer k-2).
pub fn dan_layer(
    tape: &Tape,
    d_prev: Var,
    d_prev2: Var,
    index: &NeighborIndex,
    layer: &BoundLayer,
    relation: Option<Var>,
) -> Result<AttentionOutput> {
    require_nonempty(index)?;
    attend(tape, d_prev, d_prev2, index.edges(), layer, relation)
}

/// Graph attention over `N_i ∪ {i}` with the entity's own row as query.
pub fn gat_layer(
    tape: &Tape,
    d_prev: Var,
    index: &NeighborIndex,
    layer: &BoundLayer,
    relation: Option<Var>,
) -> Result<AttentionOutput> {
    if index.mode() != AdjacencyMode::Centralized {
        return Err(Error::Parameter(
            "graph attention needs a self-loop index".into(),
        ));
    }
    attend(tape, d_prev, d_prev, index.edges(), layer, relation)
}

fn check_index(
    params: &BoundEncoder,
    tape: &Tape,
    index: &NeighborIndex,
    mode: EncoderMode,
) -> Result<()> {
    if index.mode() != mode.adjacency() {
        return Err(Error::Parameter(format!(
            "{mode} encoder needs a {:?} neighbor index, got {:?}",
            mode.adjacency(),
            index.mode()
        )));
    }
    let n = tape.shape(params.entity)[0];
    if index.num_entities() != n {
        return Err(Error::shape(
            "forward",
            format!("{n} entities"),
            index.num_entities(),
        ));
    }
    let slots = tape.shape(params.relation)[0];
    if index.relation_slots() > slots {
        return Err(Error::shape(
            "forward",
            format!("<= {slots} relation slots"),
            index.relation_slots(),
        ));
    }
    Ok(())
}

/// Runs the full stack: `d^-1 = E`, `d^0` by mean aggregation, then for each
/// layer attention, relation messages, dropout, layer norm and the
/// `g^0 + g^{k-1} + g^k` residual.
pub fn forward(
    tape: &Tape,
    params: &BoundEncoder,
    index: &NeighborIndex,
    opts: &ForwardOptions,
) -> Result<LayerOutputs> {
    check_index(params, tape, index, opts.mode)?;
    if params.layers.is_empty() {
        return Err(Error::Parameter("encoder needs at least one layer".into()));
    }
    let edges = index.edges();
    let g0 = mean_aggregate(tape, params.entity, edges, params.w0)?;
    let mut reps = vec![params.entity, g0];
    let mut attention = Vec::with_capacity(params.layers.len());
    for (k, layer) in params.layers.iter().enumerate() {
        let prev = reps[k + 1];
        let source = match opts.mode {
            EncoderMode::Gat => prev,
            EncoderMode::Dan | EncoderMode::CentRl => reps[k],
        };
        let step = k as u64;
        let source = tape.dropout(
            source,
            opts.dropout,
            seed::derive_indexed(opts.seed, "dropout.input", step),
            opts.training,
        )?;
        let out = attend(tape, prev, source, edges, layer, Some(params.relation))?;
        let h = tape.dropout(
            out.output,
            opts.dropout,
            seed::derive_indexed(opts.seed, "dropout.output", step),
            opts.training,
        )?;
        let h = tape.layer_norm(h, layer.ln_gain, layer.ln_bias)?;
        reps.push(residual_combine(tape, g0, prev, h)?);
        attention.push(out.attention);
    }
    Ok(LayerOutputs { reps, attention })
}

/// Alignment concatenates `g^1..g^K`; prediction keeps `g^K`.
pub fn final_output(tape: &Tape, layers: &LayerOutputs, task: Task) -> Result<Var> {
    match task {
        Task::Alignment => tape.concat(&layers.reps[2..]),
        Task::Prediction => Ok(*layers.reps.last().expect("at least one layer")),
    }
}

/// Evaluation-mode forward pass returning plain tensors: every layer
/// representation followed by the final output.
pub fn encode(
    params: &EncoderParams,
    index: &NeighborIndex,
    mode: EncoderMode,
    task: Task,
) -> Result<(Vec<Tensor>, Tensor)> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let layers = forward(&tape, &bound, index, &ForwardOptions::eval(mode))?;
    let out = final_output(&tape, &layers, task)?;
    let reps = layers.all().iter().map(|&v| tape.value(v)).collect();
    Ok((reps, tape.value(out)))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests;

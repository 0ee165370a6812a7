//! The `decentrl` command line.
//!
//! Settings are resolved as defaults, then `--config FILE`, then
//! `--set key=value`, then dedicated flags. Training writes the resolved
//! settings to `config.txt` beside the checkpoint, and `eval` reads it back.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{self, Model};
use crate::config::RunConfig;
use crate::diagnostics;
use crate::distiller::DistillMode;
use crate::encoder::EncoderMode;
use crate::error::{Error, Result};
use crate::eval::{report_csv, summary};
use crate::kg::{
    load_pairs, load_triples, make_aligned_copy, split_open_world, write_entity_list, write_pairs,
    write_triples, AlignedPair, AlignmentPairs, KnowledgeGraph, NeighborIndex, OpenSplit,
    PairSplit, SyntheticKg, Triple,
};
use crate::seed;
use crate::tasks::{train_alignment, train_prediction, AlignModel, History};

#[derive(Parser, Debug)]
#[command(
    name = "decentrl",
    version,
    about = "Knowledge-graph embeddings with decentralized attention"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Move every triple of a sampled set of open test entities out of training.
    Split(Common),
    /// Write a synthetic graph, a renamed noisy copy and the hidden alignment.
    Synth(Common),
    /// Train an alignment encoder on two graphs and seed pairs.
    TrainAlign {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Train an encoder and decoder for entity prediction.
    TrainPredict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Rank the test set with a trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load; defaults to `model.ckpt` in the run's output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report every layer representation and their concatenation.
        #[arg(long)]
        per_layer: bool,
        /// Let open entities aggregate over their test triples.
        #[arg(long)]
        open: bool,
    },
    /// Compare tape gradients with central finite differences.
    Gradcheck(Common),
}

#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// `key = value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override any config key, e.g. `--set epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct ModelFlags {
    #[arg(long)]
    pub mode: Option<EncoderMode>,
    #[arg(long)]
    pub distill: Option<DistillMode>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
}

fn resolve(
    command: &str,
    base: Option<RunConfig>,
    common: &Common,
    model: Option<&ModelFlags>,
) -> Result<RunConfig> {
    let mut cfg = base.unwrap_or_default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    cfg.command = command.to_string();
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(m) = model {
        if let Some(v) = m.mode {
            cfg.set("mode", v.as_str())?;
        }
        if let Some(v) = m.distill {
            cfg.set("distill", v.as_str())?;
        }
        if let Some(v) = m.layers {
            cfg.set("layers", &v.to_string())?;
        }
        if let Some(v) = m.dim {
            cfg.set("dim", &v.to_string())?;
        }
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn need<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
}

/// Parses `path` and re-expresses its triples in `g`'s vocabulary, adding
/// unseen names as isolated entities or unused relations.
fn triples_into(path: &Path, g: &mut KnowledgeGraph) -> Result<Vec<Triple>> {
    let (src, _) = load_triples(path)?;
    Ok(src
        .triples()
        .iter()
        .map(|t| {
            Triple::new(
                g.add_entity(src.entities().name(t.subject)),
                g.add_relation(src.relations().name(t.relation)),
                g.add_entity(src.entities().name(t.object)),
            )
        })
        .collect())
}

/// One entity name per line, mapped into `g`.
fn entities_into(path: &Path, g: &mut KnowledgeGraph) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(|l| g.add_entity(l))
        .collect())
}

/// Graphs, pairs and open-world extras for an alignment run. Loading is
/// deterministic, so training and evaluation agree on every id.
#[derive(Debug)]
pub struct AlignData {
    pub g1: KnowledgeGraph,
    pub g2: KnowledgeGraph,
    pub pairs: AlignmentPairs,
    pub test1: Vec<Triple>,
    pub test2: Vec<Triple>,
    pub open1: Vec<usize>,
    pub open2: Vec<usize>,
}

pub fn load_align_data(cfg: &RunConfig) -> Result<AlignData> {
    let d = &cfg.data;
    let (mut g1, _) = load_triples(need(&d.kg1, "kg1")?)?;
    let (mut g2, _) = load_triples(need(&d.kg2, "kg2")?)?;
    let mut tagged = Vec::new();
    for (file, split) in [
        (&d.train_pairs, PairSplit::Train),
        (&d.valid_pairs, PairSplit::Valid),
        (&d.test_pairs, PairSplit::Test),
    ] {
        if let Some(p) = file {
            for (left, right) in load_pairs(p, &mut g1, &mut g2)? {
                tagged.push(AlignedPair { left, right, split });
            }
        }
    }
    let extra = |file: &Option<PathBuf>, g: &mut KnowledgeGraph| -> Result<Vec<Triple>> {
        file.as_deref()
            .map_or(Ok(Vec::new()), |p| triples_into(p, g))
    };
    let test1 = extra(&d.kg1_test, &mut g1)?;
    let test2 = extra(&d.kg2_test, &mut g2)?;
    let open = |file: &Option<PathBuf>, g: &mut KnowledgeGraph| -> Result<Vec<usize>> {
        file.as_deref()
            .map_or(Ok(Vec::new()), |p| entities_into(p, g))
    };
    let open1 = open(&d.kg1_open, &mut g1)?;
    let open2 = open(&d.kg2_open, &mut g2)?;
    Ok(AlignData {
        g1,
        g2,
        pairs: AlignmentPairs::new(tagged)?,
        test1,
        test2,
        open1,
        open2,
    })
}

/// Training graph plus held-out triples for a prediction run.
#[derive(Debug)]
pub struct PredictData {
    pub g: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub open: Vec<usize>,
}

pub fn load_predict_data(cfg: &RunConfig) -> Result<PredictData> {
    let d = &cfg.data;
    let (mut g, _) = load_triples(need(&d.train, "train")?)?;
    let mut extra = |file: &Option<PathBuf>| -> Result<Vec<Triple>> {
        file.as_deref()
            .map_or(Ok(Vec::new()), |p| triples_into(p, &mut g))
    };
    let valid = extra(&d.valid)?;
    let test = extra(&d.test)?;
    let open = match &d.open {
        Some(p) => entities_into(p, &mut g)?,
        None => Vec::new(),
    };
    Ok(PredictData {
        g,
        valid,
        test,
        open,
    })
}

fn write_history(dir: &Path, h: &History) -> Result<()> {
    write(&dir.join("history.csv"), &h.epochs_csv())?;
    write(&dir.join("steps.csv"), &h.steps_csv())
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.synth;
    let g = SyntheticKg::new(
        s.entities,
        s.relations,
        s.degree,
        seed::derive(cfg.seed, "graph"),
    )
    .skewed(s.skew)
    .generate()?;
    let (copy, pairs) = make_aligned_copy(&g, seed::derive(cfg.seed, "copy"), s.edge_dropout)?;
    let pairs = pairs.resplit(
        s.train_fraction,
        s.valid_fraction,
        seed::derive(cfg.seed, "pairs"),
    )?;
    let out = &cfg.out;
    write_triples(out.join("kg1.tsv"), &g)?;
    write_triples(out.join("kg2.tsv"), &copy)?;
    write_pairs(out.join("train_pairs.tsv"), &pairs.train(), &g, &copy)?;
    write_pairs(out.join("valid_pairs.tsv"), &pairs.valid(), &g, &copy)?;
    write_pairs(out.join("test_pairs.tsv"), &pairs.test(), &g, &copy)?;
    write(&out.join("config.txt"), &cfg.resolved())?;
    println!(
        "kg1: {} entities, {} triples; kg2: {} triples; pairs {}/{}/{} (train/valid/test) -> {}",
        g.num_entities(),
        g.num_triples(),
        copy.num_triples(),
        pairs.train().len(),
        pairs.valid().len(),
        pairs.test().len(),
        out.display()
    );
    Ok(())
}

fn pool_stats(triples: &[Triple]) -> (usize, usize, usize) {
    let mut ents = HashSet::new();
    let mut rels = HashSet::new();
    for t in triples {
        ents.insert(t.subject);
        ents.insert(t.object);
        rels.insert(t.relation);
    }
    (ents.len(), rels.len(), triples.len())
}

fn write_split(out: &Path, tag: &str, g: &KnowledgeGraph, split: &OpenSplit) -> Result<()> {
    write_triples(
        out.join(format!("{tag}_train.tsv")),
        &g.with_triples(&split.train)?,
    )?;
    write_triples(
        out.join(format!("{tag}_test.tsv")),
        &g.with_triples(&split.test)?,
    )?;
    write_entity_list(out.join(format!("{tag}_known.txt")), g, &split.known)?;
    write_entity_list(out.join(format!("{tag}_open.txt")), g, &split.open)
}

fn cmd_split(cfg: &RunConfig) -> Result<()> {
    let d = &cfg.data;
    let (mut g1, _) = load_triples(need(&d.kg1, "kg1")?)?;
    let listed = need(&d.test_entities, "test_entities")?;
    let mut graphs = Vec::new();
    if let Some(p2) = &d.kg2 {
        let (mut g2, _) = load_triples(p2)?;
        let pairs = load_pairs(listed, &mut g1, &mut g2)?;
        let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        graphs.push(("kg1", g1, left));
        graphs.push(("kg2", g2, right));
    } else {
        let ids = entities_into(listed, &mut g1)?;
        graphs.push(("kg1", g1, ids));
    }
    let mut stats =
        String::from("graph,pool,entities,relations,triples,open_entities,moved_fraction\n");
    for (k, (tag, g, test)) in graphs.iter().enumerate() {
        let split = split_open_world(
            g,
            test,
            cfg.open_fraction,
            seed::derive_indexed(cfg.seed, "split", k as u64),
        )?;
        write_split(&cfg.out, tag, g, &split)?;
        for (pool, triples) in [("train", &split.train), ("test", &split.test)] {
            let (e, r, t) = pool_stats(triples);
            stats.push_str(&format!(
                "{tag},{pool},{e},{r},{t},{},{}\n",
                split.open.len(),
                split.moved_fraction()
            ));
        }
        println!(
            "{tag}: {} open of {} test entities, {} of {} triples moved ({:.3})",
            split.open.len(),
            test.len(),
            split.test.len(),
            g.num_triples(),
            split.moved_fraction()
        );
    }
    write(&cfg.out.join("stats.csv"), &stats)?;
    write(&cfg.out.join("config.txt"), &cfg.resolved())
}

fn cmd_train_align(cfg: &RunConfig) -> Result<()> {
    let data = load_align_data(cfg)?;
    let (model, history) = train_alignment(&data.g1, &data.g2, &data.pairs, &cfg.align)?;
    checkpoint::save(cfg.out.join("model.ckpt"), &Model::Align(model.clone()))?;
    write_history(&cfg.out, &history)?;
    write(&cfg.out.join("config.txt"), &cfg.resolved())?;
    println!(
        "trained {} epochs (best {:?}) -> {}",
        history.epochs.len(),
        history.best_epoch,
        cfg.out.display()
    );
    let test = data.pairs.test();
    if !test.is_empty() {
        let index =
            AlignModel::joint_index(&data.g1, &data.g2, cfg.align.mode, cfg.align.add_inverse);
        print!(
            "{}",
            summary("test", &model.evaluate(&index, &test)?.combined)
        );
    }
    Ok(())
}

fn cmd_train_predict(cfg: &RunConfig) -> Result<()> {
    let data = load_predict_data(cfg)?;
    let (model, history) = train_prediction(&data.g, &data.valid, &cfg.predict)?;
    checkpoint::save(cfg.out.join("model.ckpt"), &Model::Predict(model))?;
    write_history(&cfg.out, &history)?;
    write(&cfg.out.join("config.txt"), &cfg.resolved())?;
    println!(
        "trained {} epochs (best {:?}) -> {}",
        history.epochs.len(),
        history.best_epoch,
        cfg.out.display()
    );
    Ok(())
}

/// Report rows of an evaluation run, as written to its CSV.
pub fn evaluate(
    cfg: &RunConfig,
    model: &Model,
    per_layer: bool,
    open: bool,
) -> Result<Vec<(String, f64)>> {
    match model {
        Model::Align(m) => {
            let data = load_align_data(cfg)?;
            let index = if open {
                AlignModel::joint_open_index(
                    &data.g1,
                    &data.g2,
                    &data.test1,
                    &data.test2,
                    &data.open1,
                    &data.open2,
                    m.mode,
                    m.add_inverse,
                )
            } else {
                AlignModel::joint_index(&data.g1, &data.g2, m.mode, m.add_inverse)
            };
            let test = data.pairs.test();
            if test.is_empty() {
                return Err(Error::Eval("no test pairs configured".into()));
            }
            if per_layer {
                Ok(m.per_layer(&index, &test)?
                    .iter()
                    .flat_map(|(label, r)| r.metrics(label))
                    .collect())
            } else {
                Ok(m.evaluate(&index, &test)?.metrics(""))
            }
        }
        Model::Predict(m) => {
            if per_layer {
                return Err(Error::Eval(
                    "--per-layer applies to alignment checkpoints".into(),
                ));
            }
            let data = load_predict_data(cfg)?;
            if data.test.is_empty() {
                return Err(Error::Eval("no test triples configured".into()));
            }
            let n = data.g.num_entities();
            let index = if open {
                NeighborIndex::for_open_evaluation(
                    n,
                    m.num_relations,
                    data.g.triples(),
                    &data.test,
                    &data.open,
                    m.mode.adjacency(),
                    m.add_inverse,
                )
            } else {
                m.index(n, data.g.triples())
            };
            let known: HashSet<Triple> = data
                .g
                .triples()
                .iter()
                .chain(&data.valid)
                .chain(&data.test)
                .copied()
                .collect();
            Ok(
                m.evaluate(&index, &data.test, &known, cfg.predict.filtered)?
                    .metrics(""),
            )
        }
    }
}

fn cmd_eval(
    common: &Common,
    checkpoint: &Option<PathBuf>,
    per_layer: bool,
    open: bool,
) -> Result<()> {
    let run_config = match (&common.config, checkpoint) {
        (Some(c), _) => c.clone(),
        (None, Some(ck)) => ck.with_file_name("config.txt"),
        (None, None) => {
            return Err(Error::Config("eval needs --checkpoint or --config".into()));
        }
    };
    let base = RunConfig::from_file(&run_config)?;
    let ckpt = checkpoint
        .clone()
        .unwrap_or_else(|| base.out.join("model.ckpt"));
    let command = base.command.clone();
    let mut cfg = resolve(
        &command,
        Some(base),
        &Common {
            config: None,
            ..common.clone()
        },
        None,
    )?;
    if common.out.is_none() {
        cfg.out = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    }
    let model = checkpoint::load(&ckpt)?;
    let rows = evaluate(&cfg, &model, per_layer, open)?;
    let name = match (per_layer, open) {
        (true, true) => "per_layer_open.csv",
        (true, false) => "per_layer.csv",
        (false, true) => "report_open.csv",
        (false, false) => "report.csv",
    };
    let csv = report_csv(&rows);
    write(&cfg.out.join(name), &csv)?;
    print!("{csv}");
    Ok(())
}

/// Returns whether every check passed.
fn cmd_gradcheck(cfg: &RunConfig, write_out: bool) -> Result<bool> {
    let mut checks = diagnostics::op_checks(cfg.seed)?;
    checks.extend(diagnostics::model_checks(cfg.seed)?);
    let table = diagnostics::table(&checks);
    print!("{table}");
    if write_out {
        write(&cfg.out.join("gradcheck.csv"), &table)?;
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        eprintln!("{failed} of {} gradient checks failed", checks.len());
    }
    Ok(failed == 0)
}

/// Runs one parsed command line. `Ok(false)` means the command ran but
/// reported a failure (a gradient check above tolerance).
pub fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth(c) => cmd_synth(&resolve("synth", None, c, None)?)?,
        Command::Split(c) => cmd_split(&resolve("split", None, c, None)?)?,
        Command::TrainAlign { common, model } => {
            cmd_train_align(&resolve("train-align", None, common, Some(model))?)?
        }
        Command::TrainPredict { common, model } => {
            cmd_train_predict(&resolve("train-predict", None, common, Some(model))?)?
        }
        Command::Eval {
            common,
            checkpoint,
            per_layer,
            open,
        } => cmd_eval(common, checkpoint, *per_layer, *open)?,
        Command::Gradcheck(c) => {
            return cmd_gradcheck(&resolve("gradcheck", None, c, None)?, c.out.is_some());
        }
    }
    Ok(true)
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main_from_env() -> i32 {
    match run(Cli::parse()) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

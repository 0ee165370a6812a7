//! Flat `key = value` run configuration.
//!
//! Later sources override earlier ones: built-in defaults, then a config
//! file, then command-line flags. Unknown keys are errors. Every training
//! run writes [`RunConfig::resolved`] next to its outputs; that file parses
//! back to the same settings and is what `eval` reads.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tasks::{AlignConfig, PredictConfig};

/// Synthetic benchmark generation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub entities: usize,
    pub relations: usize,
    pub degree: f64,
    /// Power-law exponent of endpoint popularity; 0 is uniform.
    pub skew: f64,
    pub edge_dropout: f64,
    pub train_fraction: f64,
    pub valid_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entities: 200,
            relations: 20,
            degree: 4.0,
            skew: 0.0,
            edge_dropout: 0.1,
            train_fraction: 0.3,
            valid_fraction: 0.1,
        }
    }
}

/// Input files. Alignment runs use `kg1`, `kg2` and the pair files;
/// prediction runs use `train`, `valid` and `test`. The `*_test` and
/// `*open` entries describe an open-world split for `eval --open`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataPaths {
    pub kg1: Option<PathBuf>,
    pub kg2: Option<PathBuf>,
    pub train_pairs: Option<PathBuf>,
    pub valid_pairs: Option<PathBuf>,
    pub test_pairs: Option<PathBuf>,
    pub kg1_test: Option<PathBuf>,
    pub kg2_test: Option<PathBuf>,
    pub kg1_open: Option<PathBuf>,
    pub kg2_open: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub open: Option<PathBuf>,
    /// Entities eligible to become open: a pair file when `kg2` is set,
    /// otherwise one entity name per line.
    pub test_entities: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,
    pub open_fraction: f64,
    pub data: DataPaths,
    pub synth: SynthConfig,
    pub align: AlignConfig,
    pub predict: PredictConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            seed: 0,
            out: PathBuf::from("out"),
            open_fraction: 0.2,
            data: DataPaths::default(),
            synth: SynthConfig::default(),
            align: AlignConfig::default(),
            predict: PredictConfig::default(),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| Error::Config(format!("bad value `{raw}` for `{key}`: {e}")))
}

fn path(raw: &str) -> Option<PathBuf> {
    (!raw.is_empty()).then(|| PathBuf::from(raw))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

const COMMON: &[&str] = &["command", "seed", "out"];
const SYNTH: &[&str] = &[
    "entities",
    "relations",
    "degree",
    "skew",
    "edge_dropout",
    "train_fraction",
    "valid_fraction",
];
const SPLIT: &[&str] = &["kg1", "kg2", "test_entities", "open_fraction"];
const TRAIN: &[&str] = &[
    "mode",
    "distill",
    "layers",
    "dim",
    "epochs",
    "lr",
    "dropout",
    "batch_size",
    "negatives",
    "distill_weight",
    "distill_samples",
    "distill_anchors",
    "add_inverse",
    "patience",
    "eval_every",
];
const ALIGN: &[&str] = &[
    "kg1",
    "kg2",
    "train_pairs",
    "valid_pairs",
    "test_pairs",
    "kg1_test",
    "kg2_test",
    "kg1_open",
    "kg2_open",
    "margin",
    "alpha",
    "normalize",
];
const PREDICT: &[&str] = &[
    "train",
    "valid",
    "test",
    "open",
    "decoder",
    "filtered",
    "mask_batch_edges",
];

impl RunConfig {
    /// Keys that are echoed for `command`.
    pub fn keys_for(command: &str) -> Vec<&'static str> {
        let mut keys = COMMON.to_vec();
        match command {
            "synth" => keys.extend(SYNTH),
            "split" => keys.extend(SPLIT),
            "train-align" => {
                keys.extend(ALIGN);
                keys.extend(TRAIN);
            }
            "train-predict" => {
                keys.extend(PREDICT);
                keys.extend(TRAIN);
            }
            _ => {}
        }
        keys
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        let (a, p, s, d) = (
            &mut self.align,
            &mut self.predict,
            &mut self.synth,
            &mut self.data,
        );
        match key {
            "command" => self.command = raw.to_string(),
            "seed" => {
                self.seed = value(key, raw)?;
                a.seed = self.seed;
                p.seed = self.seed;
            }
            "out" => self.out = PathBuf::from(raw),
            "open_fraction" => self.open_fraction = value(key, raw)?,
            "entities" => s.entities = value(key, raw)?,
            "relations" => s.relations = value(key, raw)?,
            "degree" => s.degree = value(key, raw)?,
            "skew" => s.skew = value(key, raw)?,
            "edge_dropout" => s.edge_dropout = value(key, raw)?,
            "train_fraction" => s.train_fraction = value(key, raw)?,
            "valid_fraction" => s.valid_fraction = value(key, raw)?,
            "kg1" => d.kg1 = path(raw),
            "kg2" => d.kg2 = path(raw),
            "train_pairs" => d.train_pairs = path(raw),
            "valid_pairs" => d.valid_pairs = path(raw),
            "test_pairs" => d.test_pairs = path(raw),
            "kg1_test" => d.kg1_test = path(raw),
            "kg2_test" => d.kg2_test = path(raw),
            "kg1_open" => d.kg1_open = path(raw),
            "kg2_open" => d.kg2_open = path(raw),
            "train" => d.train = path(raw),
            "valid" => d.valid = path(raw),
            "test" => d.test = path(raw),
            "open" => d.open = path(raw),
            "test_entities" => d.test_entities = path(raw),
            "mode" => (a.mode, p.mode) = (value(key, raw)?, value(key, raw)?),
            "distill" => (a.distill, p.distill) = (value(key, raw)?, value(key, raw)?),
            "layers" => (a.layers, p.layers) = (value(key, raw)?, value(key, raw)?),
            "dim" => (a.dim, p.dim) = (value(key, raw)?, value(key, raw)?),
            "epochs" => (a.epochs, p.epochs) = (value(key, raw)?, value(key, raw)?),
            "lr" => (a.lr, p.lr) = (value(key, raw)?, value(key, raw)?),
            "dropout" => (a.dropout, p.dropout) = (value(key, raw)?, value(key, raw)?),
            "batch_size" => (a.batch_size, p.batch_size) = (value(key, raw)?, value(key, raw)?),
            "negatives" => (a.negatives, p.negatives) = (value(key, raw)?, value(key, raw)?),
            "distill_weight" => {
                (a.distill_weight, p.distill_weight) = (value(key, raw)?, value(key, raw)?)
            }
            "distill_samples" => {
                (a.distill_samples, p.distill_samples) = (value(key, raw)?, value(key, raw)?)
            }
            "distill_anchors" => {
                (a.distill_anchors, p.distill_anchors) = (value(key, raw)?, value(key, raw)?)
            }
            "add_inverse" => (a.add_inverse, p.add_inverse) = (value(key, raw)?, value(key, raw)?),
            "patience" => (a.patience, p.patience) = (value(key, raw)?, value(key, raw)?),
            "eval_every" => (a.eval_every, p.eval_every) = (value(key, raw)?, value(key, raw)?),
            "margin" => a.margin = value(key, raw)?,
            "alpha" => a.alpha = value(key, raw)?,
            "normalize" => a.normalize = value(key, raw)?,
            "decoder" => p.decoder = value(key, raw)?,
            "filtered" => p.filtered = value(key, raw)?,
            "mask_batch_edges" => p.mask_batch_edges = value(key, raw)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Current value of `key` as it would be written back.
    pub fn get(&self, key: &str) -> Option<String> {
        let predict = self.command == "train-predict";
        let (a, p, s, d) = (&self.align, &self.predict, &self.synth, &self.data);
        let pick = |av: String, pv: String| if predict { pv } else { av };
        Some(match key {
            "command" => self.command.clone(),
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            "open_fraction" => self.open_fraction.to_string(),
            "entities" => s.entities.to_string(),
            "relations" => s.relations.to_string(),
            "degree" => s.degree.to_string(),
            "skew" => s.skew.to_string(),
            "edge_dropout" => s.edge_dropout.to_string(),
            "train_fraction" => s.train_fraction.to_string(),
            "valid_fraction" => s.valid_fraction.to_string(),
            "kg1" => show(&d.kg1),
            "kg2" => show(&d.kg2),
            "train_pairs" => show(&d.train_pairs),
            "valid_pairs" => show(&d.valid_pairs),
            "test_pairs" => show(&d.test_pairs),
            "kg1_test" => show(&d.kg1_test),
            "kg2_test" => show(&d.kg2_test),
            "kg1_open" => show(&d.kg1_open),
            "kg2_open" => show(&d.kg2_open),
            "train" => show(&d.train),
            "valid" => show(&d.valid),
            "test" => show(&d.test),
            "open" => show(&d.open),
            "test_entities" => show(&d.test_entities),
            "mode" => pick(a.mode.to_string(), p.mode.to_string()),
            "distill" => pick(a.distill.to_string(), p.distill.to_string()),
            "layers" => pick(a.layers.to_string(), p.layers.to_string()),
            "dim" => pick(a.dim.to_string(), p.dim.to_string()),
            "epochs" => pick(a.epochs.to_string(), p.epochs.to_string()),
            "lr" => pick(a.lr.to_string(), p.lr.to_string()),
            "dropout" => pick(a.dropout.to_string(), p.dropout.to_string()),
            "batch_size" => pick(a.batch_size.to_string(), p.batch_size.to_string()),
            "negatives" => pick(a.negatives.to_string(), p.negatives.to_string()),
            "distill_weight" => pick(a.distill_weight.to_string(), p.distill_weight.to_string()),
            "distill_samples" => pick(a.distill_samples.to_string(), p.distill_samples.to_string()),
            "distill_anchors" => pick(a.distill_anchors.to_string(), p.distill_anchors.to_string()),
            "add_inverse" => pick(a.add_inverse.to_string(), p.add_inverse.to_string()),
            "patience" => pick(a.patience.to_string(), p.patience.to_string()),
            "eval_every" => pick(a.eval_every.to_string(), p.eval_every.to_string()),
            "margin" => a.margin.to_string(),
            "alpha" => a.alpha.to_string(),
            "normalize" => a.normalize.to_string(),
            "decoder" => p.decoder.to_string(),
            "filtered" => p.filtered.to_string(),
            "mask_batch_edges" => p.mask_batch_edges.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let wrap = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| wrap(format!("expected `key = value`, got `{line}`")))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => wrap(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_file(path)?;
        Ok(c)
    }

    /// Every setting the command uses, one `key = value` per line.
    pub fn resolved(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for k in Self::keys_for(&self.command) {
            let v = self.get(k).expect("known key");
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distiller::DistillMode;
    use crate::encoder::EncoderMode;

    fn parse(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.apply_text(text, Path::new("test.conf"))?;
        Ok(c)
    }

    #[test]
    fn parses_keys_and_comments() {
        let c = parse(
            "# header\nseed = 7\nmode=gat  # trailing\n\ndistill = l2\ndim = 32\nmargin = 2.5\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.align.seed, 7);
        assert_eq!(c.align.mode, EncoderMode::Gat);
        assert_eq!(c.predict.distill, DistillMode::L2);
        assert_eq!((c.align.dim, c.predict.dim), (32, 32));
        assert_eq!(c.align.margin, 2.5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = parse("seed = 1\nlearning_rate = 0.1\n")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains(":2:") && err.contains("learning_rate"),
            "{err}"
        );
        assert!(parse("dim = many").is_err());
        assert!(parse("just words").is_err());
        assert!(parse("mode = transformer").is_err());
    }

    #[test]
    fn resolved_echo_round_trips() {
        for cmd in ["synth", "split", "train-align", "train-predict"] {
            let mut c = parse(&format!(
                "command = {cmd}\nseed = 3\nlr = 0.01\nkg1 = a/b.tsv\n"
            ))
            .unwrap();
            c.synth.degree = 0.1 + 0.2;
            let text = c.resolved();
            for k in RunConfig::keys_for(cmd) {
                assert!(text.contains(&format!("\n{k} = ")), "{cmd}: {k}");
            }
            let back = parse(&text).unwrap();
            assert_eq!(back.resolved(), text);
        }
    }

    #[test]
    fn echo_reports_task_defaults() {
        let mut c = RunConfig {
            command: "train-predict".into(),
            ..RunConfig::default()
        };
        assert!(c.resolved().contains("\ndim = 128\n"));
        c.command = "train-align".into();
        assert!(c.resolved().contains("\ndim = 256\n"));
    }
}

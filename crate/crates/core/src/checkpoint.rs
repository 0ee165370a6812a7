//! Plain-text model checkpoints.
//!
//! ```text
//! decentrl-checkpoint v1
//! meta task alignment
//! meta mode dan
//! param entity 2 400 256
//! 0.0123 -0.5 ...
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! `f64`, so a save/load round trip is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::distiller::DensityParams;
use crate::encoder::{EncoderMode, EncoderParams};
use crate::error::{Error, Result};
use crate::tasks::{AlignModel, DecoderKind, DecoderParams, PredictModel};
use crate::tensor::Tensor;

pub const HEADER: &str = "decentrl-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Align(AlignModel),
    Predict(PredictModel),
}

impl Model {
    pub fn task(&self) -> &'static str {
        match self {
            Model::Align(_) => "alignment",
            Model::Predict(_) => "prediction",
        }
    }

    pub fn encoder(&self) -> &EncoderParams {
        match self {
            Model::Align(m) => &m.encoder,
            Model::Predict(m) => &m.encoder,
        }
    }
}

fn push_param(out: &mut String, name: &str, t: &Tensor) {
    let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    let _ = writeln!(out, "param {name} {} {}", t.shape().len(), dims.join(" "));
    let vals: Vec<String> = t.data().iter().map(f64::to_string).collect();
    let _ = writeln!(out, "{}", vals.join(" "));
}

pub fn to_text(model: &Model) -> String {
    let mut s = format!("{HEADER}\n");
    let mut meta = |k: &str, v: String| {
        let _ = writeln!(s, "meta {k} {v}");
    };
    meta("task", model.task().into());
    let enc = model.encoder();
    meta("layers", enc.num_layers().to_string());
    match model {
        Model::Align(m) => {
            meta("mode", m.mode.to_string());
            meta("normalize", m.normalize.to_string());
            meta("add_inverse", m.add_inverse.to_string());
            meta("n_left", m.n_left.to_string());
        }
        Model::Predict(m) => {
            meta("mode", m.mode.to_string());
            meta("add_inverse", m.add_inverse.to_string());
            meta("num_relations", m.num_relations.to_string());
            meta("decoder", m.decoder.kind.to_string());
        }
    }
    for (name, t) in enc.names().iter().zip(enc.tensors()) {
        push_param(&mut s, name, t);
    }
    let density = match model {
        Model::Align(m) => &m.density,
        Model::Predict(m) => &m.density,
    };
    for (name, t) in density.names().iter().zip(density.tensors()) {
        push_param(&mut s, name, t);
    }
    if let Model::Predict(m) = model {
        push_param(&mut s, "decoder.relation", &m.decoder.relation);
    }
    s
}

pub fn save(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_text(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

struct Parsed {
    meta: BTreeMap<String, String>,
    params: Vec<(String, Tensor)>,
}

impl Parsed {
    fn meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta `{key}`")))?;
        v.parse()
            .map_err(|_| Error::Checkpoint(format!("bad value `{v}` for meta `{key}`")))
    }

    fn take(&mut self, names: &[String]) -> Result<Vec<Tensor>> {
        if self.params.len() < names.len() {
            return Err(Error::Checkpoint(format!(
                "expected parameter `{}`, found end of file",
                names[self.params.len()]
            )));
        }
        let rest = self.params.split_off(names.len());
        let head = std::mem::replace(&mut self.params, rest);
        head.into_iter()
            .zip(names)
            .map(|((got, t), want)| {
                if &got == want {
                    Ok(t)
                } else {
                    Err(Error::Checkpoint(format!(
                        "expected parameter `{want}`, found `{got}`"
                    )))
                }
            })
            .collect()
    }
}

fn parse_raw(text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim_end() == HEADER => {}
        _ => return Err(bad(1, format!("expected header `{HEADER}`"))),
    }
    let mut meta = BTreeMap::new();
    let mut params = Vec::new();
    while let Some((no, line)) = lines.next() {
        let mut words = line.split_whitespace();
        match words.next() {
            None => continue,
            Some("meta") => {
                let (Some(k), Some(v)) = (words.next(), words.next()) else {
                    return Err(bad(no, "meta needs a key and a value"));
                };
                meta.insert(k.to_string(), v.to_string());
            }
            Some("param") => {
                let name = words.next().ok_or_else(|| bad(no, "param needs a name"))?;
                let nums: Vec<usize> = words
                    .map(|w| {
                        w.parse()
                            .map_err(|_| bad(no, format!("bad dimension `{w}`")))
                    })
                    .collect::<Result<_>>()?;
                let Some((&ndim, dims)) = nums.split_first() else {
                    return Err(bad(no, "param needs a rank"));
                };
                if dims.len() != ndim {
                    return Err(bad(
                        no,
                        format!("rank {ndim} but {} dimensions", dims.len()),
                    ));
                }
                let (vno, vline) = lines
                    .next()
                    .ok_or_else(|| bad(no, format!("missing values for `{name}`")))?;
                let data: Vec<f64> = vline
                    .split_whitespace()
                    .map(|w| w.parse().map_err(|_| bad(vno, format!("bad number `{w}`"))))
                    .collect::<Result<_>>()?;
                let t = Tensor::new(dims.to_vec(), data).map_err(|e| bad(vno, e))?;
                params.push((name.to_string(), t));
            }
            Some(other) => return Err(bad(no, format!("unknown record `{other}`"))),
        }
    }
    Ok(Parsed { meta, params })
}

fn encoder_names(layers: usize) -> Vec<String> {
    let mut names = vec!["entity".into(), "relation".into(), "w0".into()];
    for k in 1..=layers {
        for p in ["w", "w1", "w2", "a", "wr", "ln_gain", "ln_bias"] {
            names.push(format!("layer{k}.{p}"));
        }
    }
    names
}

pub fn parse(text: &str) -> Result<Model> {
    let mut p = parse_raw(text)?;
    let layers: usize = p.meta("layers")?;
    let mode: EncoderMode = p.meta("mode")?;
    let add_inverse: bool = p.meta("add_inverse")?;
    let encoder = EncoderParams::from_tensors(p.take(&encoder_names(layers))?, layers)?;
    let mut density = p.take(&["density.wf".into(), "density.bf".into()])?;
    let bf = density.pop().unwrap();
    let density = DensityParams {
        wf: density.pop().unwrap(),
        bf,
    };
    let task: String = p.meta("task")?;
    let model = match task.as_str() {
        "alignment" => Model::Align(AlignModel {
            encoder,
            density,
            mode,
            normalize: p.meta("normalize")?,
            add_inverse,
            n_left: p.meta("n_left")?,
        }),
        "prediction" => {
            let kind: DecoderKind = p.meta("decoder")?;
            let relation = p.take(&["decoder.relation".into()])?.pop().unwrap();
            Model::Predict(PredictModel {
                encoder,
                density,
                decoder: DecoderParams { kind, relation },
                mode,
                add_inverse,
                num_relations: p.meta("num_relations")?,
            })
        }
        other => return Err(Error::Checkpoint(format!("unknown task `{other}`"))),
    };
    if let Some((name, _)) = p.params.first() {
        return Err(Error::Checkpoint(format!("unexpected parameter `{name}`")));
    }
    Ok(model)
}

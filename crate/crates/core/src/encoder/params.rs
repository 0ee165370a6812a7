use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Uniform Glorot initialization over a `[fan_out_rows, fan_cols]` table.
pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches buffer")
}

/// Weights of one attention layer. Matrices act on row vectors from the right.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// Message transform `W`.
    pub w: Tensor,
    /// Query transform `W1`.
    pub w1: Tensor,
    /// Key transform `W2`.
    pub w2: Tensor,
    /// Attention vector `[a_query | a_key]`, stored as `[1, 2D]`.
    pub a: Tensor,
    /// Relation projection added to every message.
    pub wr: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

impl LayerParams {
    fn init(dim: usize, rng: &mut impl Rng) -> Self {
        LayerParams {
            w: xavier(dim, dim, rng),
            w1: xavier(dim, dim, rng),
            w2: xavier(dim, dim, rng),
            a: xavier(1, 2 * dim, rng),
            wr: xavier(dim, dim, rng),
            ln_gain: Tensor::filled(&[dim], 1.0),
            ln_bias: Tensor::zeros(&[dim]),
        }
    }
}

/// Every trainable tensor of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// Raw entity embeddings `E`, `[entities, dim]`.
    pub entity: Tensor,
    /// Relation embeddings over base, inverse and self slots.
    pub relation: Tensor,
    /// Mean-aggregator transform.
    pub w0: Tensor,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn init(
        entities: usize,
        relation_slots: usize,
        dim: usize,
        layers: usize,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || layers == 0 {
            return Err(Error::Parameter(
                "encoder needs dim >= 1 and at least one layer".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entity = xavier(entities, dim, &mut rng);
        let relation = xavier(relation_slots, dim, &mut rng);
        let w0 = xavier(dim, dim, &mut rng);
        let layers = (0..layers)
            .map(|_| LayerParams::init(dim, &mut rng))
            .collect();
        Ok(EncoderParams {
            entity,
            relation,
            w0,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.entity.cols()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entity.rows()
    }

    /// Parameter names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec![
            "entity".to_string(),
            "relation".to_string(),
            "w0".to_string(),
        ];
        for k in 1..=self.layers.len() {
            for p in ["w", "w1", "w2", "a", "wr", "ln_gain", "ln_bias"] {
                names.push(format!("layer{k}.{p}"));
            }
        }
        names
    }

    /// Tensors in the order of [`EncoderParams::names`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.entity, &self.relation, &self.w0];
        for l in &self.layers {
            out.extend([&l.w, &l.w1, &l.w2, &l.a, &l.wr, &l.ln_gain, &l.ln_bias]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.entity, &mut self.relation, &mut self.w0];
        for l in &mut self.layers {
            out.extend([
                &mut l.w,
                &mut l.w1,
                &mut l.w2,
                &mut l.a,
                &mut l.wr,
                &mut l.ln_gain,
                &mut l.ln_bias,
            ]);
        }
        out
    }

    /// Rebuilds parameters from tensors listed in canonical order.
    pub fn from_tensors(mut tensors: Vec<Tensor>, layers: usize) -> Result<Self> {
        if tensors.len() != 3 + 7 * layers {
            return Err(Error::Parameter(format!(
                "expected {} encoder tensors for {layers} layers, got {}",
                3 + 7 * layers,
                tensors.len()
            )));
        }
        let rest = tensors.split_off(3);
        let mut it = tensors.into_iter();
        let (entity, relation, w0) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        let mut layer_params = Vec::with_capacity(layers);
        let mut it = rest.into_iter();
        for _ in 0..layers {
            let mut next = || it.next().unwrap();
            layer_params.push(LayerParams {
                w: next(),
                w1: next(),
                w2: next(),
                a: next(),
                wr: next(),
                ln_gain: next(),
                ln_bias: next(),
            });
        }
        let p = EncoderParams {
            entity,
            relation,
            w0,
            layers: layer_params,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks that every tensor has the shape implied by `dim`.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let expect = |name: &str, t: &Tensor, shape: &[usize]| -> Result<()> {
            if t.shape() != shape {
                return Err(Error::Parameter(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
            Ok(())
        };
        expect("relation", &self.relation, &[self.relation.rows(), d])?;
        expect("w0", &self.w0, &[d, d])?;
        for (k, l) in self.layers.iter().enumerate() {
            for (n, t) in [("w", &l.w), ("w1", &l.w1), ("w2", &l.w2), ("wr", &l.wr)] {
                expect(&format!("layer{}.{n}", k + 1), t, &[d, d])?;
            }
            expect(&format!("layer{}.a", k + 1), &l.a, &[1, 2 * d])?;
            expect(&format!("layer{}.ln_gain", k + 1), &l.ln_gain, &[d])?;
            expect(&format!("layer{}.ln_bias", k + 1), &l.ln_bias, &[d])?;
        }
        Ok(())
    }

    /// Records every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundEncoder {
        let put = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundEncoder {
            entity: put(&self.entity),
            relation: put(&self.relation),
            w0: put(&self.w0),
            layers: self
                .layers
                .iter()
                .map(|l| BoundLayer {
                    w: put(&l.w),
                    w1: put(&l.w1),
                    w2: put(&l.w2),
                    a: put(&l.a),
                    wr: put(&l.wr),
                    ln_gain: put(&l.ln_gain),
                    ln_bias: put(&l.ln_bias),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub w: Var,
    pub w1: Var,
    pub w2: Var,
    pub a: Var,
    pub wr: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
}

/// Encoder parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundEncoder {
    pub entity: Var,
    pub relation: Var,
    pub w0: Var,
    pub layers: Vec<BoundLayer>,
}

impl BoundEncoder {
    /// Inverse of [`BoundEncoder::vars`].
    pub fn from_vars(vars: &[Var], layers: usize) -> Result<Self> {
        if vars.len() != 3 + 7 * layers {
            return Err(Error::Parameter(format!(
                "expected {} encoder handles for {layers} layers, got {}",
                3 + 7 * layers,
                vars.len()
            )));
        }
        Ok(BoundEncoder {
            entity: vars[0],
            relation: vars[1],
            w0: vars[2],
            layers: vars[3..]
                .chunks(7)
                .map(|c| BoundLayer {
                    w: c[0],
                    w1: c[1],
                    w2: c[2],
                    a: c[3],
                    wr: c[4],
                    ln_gain: c[5],
                    ln_bias: c[6],
                })
                .collect(),
        })
    }

    /// Handles in the order of [`EncoderParams::names`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.entity, self.relation, self.w0];
        for l in &self.layers {
            out.extend([l.w, l.w1, l.w2, l.a, l.wr, l.ln_gain, l.ln_bias]);
        }
        out
    }
}
